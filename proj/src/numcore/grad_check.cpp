#include "hlab/numcore/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace hlab {

GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                           const GradCheckOptions& opts) {
    if (!(opts.h > 0.0)) throw ContractError("grad_check: step h must be positive");
    GradCheckReport report;

    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    Tensor y = f();
    if (y.size() != 1) throw ContractError("grad_check: function must be scalar-valued");
    if (auto bad = first_nonfinite_op(y); !bad.empty()) {
        report.diagnostic = "non-finite value produced by op '" + bad + "'";
        return report;
    }
    backward(y);

    auto eval = [&]() {
        NoGradGuard guard;
        Tensor v = f();
        return v.item();
    };

    for (auto& p : params) {
        std::vector<double> analytic(p.size(), 0.0);
        if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
        const std::size_t n = p.size();
        const std::size_t probes = opts.max_entries_per_param == 0 ? n : std::min(n, opts.max_entries_per_param);
        auto values = p.mutable_data();
        for (std::size_t k = 0; k < probes; ++k) {
            const std::size_t i = probes == n ? k : (k * n) / probes;
            const double orig = values[i];
            values[i] = orig + opts.h;
            const double fp = eval();
            values[i] = orig - opts.h;
            const double fm = eval();
            values[i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                report.diagnostic = "non-finite loss under perturbation of entry " + std::to_string(i);
                return report;
            }
            const double numeric = (fp - fm) / (2.0 * opts.h);
            const double abs_err = std::abs(numeric - analytic[i]);
            const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), opts.rel_floor});
            report.max_abs_err = std::max(report.max_abs_err, abs_err);
            report.max_rel_err = std::max(report.max_rel_err, abs_err / denom);
            ++report.entries_checked;
        }
    }
    report.passed = report.max_rel_err <= opts.tol;
    return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h, double tol) {
    GradCheckOptions opts;
    opts.h = h;
    opts.tol = tol;
    return grad_check([&]() { return f(x); }, {x}, opts);
}

}  // namespace hlab

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hlab/numcore/tensor.hpp"

namespace hlab {

struct GradCheckOptions {
    double h = 1e-5;
    double tol = 1e-4;
    // Entries probed per parameter; 0 probes every entry. Larger tensors are
    // probed at an evenly strided subset.
    std::size_t max_entries_per_param = 0;
    // Denominator floor for the elementwise relative error, so entries whose
    // true gradient is ~0 are judged on absolute error instead.
    double rel_floor = 1e-4;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::size_t entries_checked = 0;
    bool passed = false;
    // Empty on success; names the offending op when the graph went non-finite.
    std::string diagnostic;
};

// Compares backward() against central differences for every listed parameter.
// `f` must rebuild the graph from the parameters' current values on each call.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                           const GradCheckOptions& opts = {});

// Single-input convenience form.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h, double tol);

}  // namespace hlab

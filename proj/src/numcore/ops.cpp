#include "hlab/numcore/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace hlab {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

void require_rank2(const Tensor& a, const char* op) {
    if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

std::size_t last_dim(const Tensor& x, const char* op) {
    if (x.rank() == 0 || x.shape().back() == 0) throw ShapeError(std::string(op) + ": empty last dimension");
    return x.shape().back();
}

template <typename F, typename D>
Tensor unary(const char* name, const Tensor& a, F f, D dfdx) {
    auto in = a.data();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    return make_op(name, a.shape(), std::move(out), {a}, [a, dfdx](std::span<const double> g, const GradSink& s) {
        auto x = a.data();
        auto ga = s[0];
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(x[i]);
    });
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same(a, b, "add");
    auto x = a.data(), y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    return make_op("add", a.shape(), std::move(out), {a, b}, [](std::span<const double> g, const GradSink& s) {
        for (std::size_t k = 0; k < 2; ++k)
            if (s.wants(k))
                for (std::size_t i = 0; i < g.size(); ++i) s[k][i] += g[i];
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same(a, b, "sub");
    auto x = a.data(), y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
    return make_op("sub", a.shape(), std::move(out), {a, b}, [](std::span<const double> g, const GradSink& s) {
        if (s.wants(0))
            for (std::size_t i = 0; i < g.size(); ++i) s[0][i] += g[i];
        if (s.wants(1))
            for (std::size_t i = 0; i < g.size(); ++i) s[1][i] -= g[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same(a, b, "mul");
    auto x = a.data(), y = b.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
    return make_op("mul", a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g, const GradSink& s) {
        auto x = a.data(), y = b.data();
        if (s.wants(0))
            for (std::size_t i = 0; i < g.size(); ++i) s[0][i] += g[i] * y[i];
        if (s.wants(1))
            for (std::size_t i = 0; i < g.size(); ++i) s[1][i] += g[i] * x[i];
    });
}

Tensor scale(const Tensor& a, double c) {
    auto x = a.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = c * x[i];
    return make_op("scale", a.shape(), std::move(out), {a}, [c](std::span<const double> g, const GradSink& s) {
        for (std::size_t i = 0; i < g.size(); ++i) s[0][i] += c * g[i];
    });
}

Tensor exp(const Tensor& a) {
    return unary(
        "exp", a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Tensor log(const Tensor& a) {
    return unary(
        "log", a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Tensor silu(const Tensor& a) {
    return unary(
        "silu", a, [](double x) { return x * sigmoid(x); },
        [](double x) {
            const double s = sigmoid(x);
            return s * (1.0 + x * (1.0 - s));
        });
}

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.data()) total += v;
    return make_op("sum", {1}, {total}, {a}, [](std::span<const double> g, const GradSink& s) {
        for (auto& v : s[0]) v += g[0];
    });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor sum_lastdim(const Tensor& a) {
    const std::size_t d = last_dim(a, "sum_lastdim");
    const std::size_t rows = a.size() / d;
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    if (out_shape.empty()) out_shape = {1};
    auto x = a.data();
    std::vector<double> out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) out[r] += x[r * d + j];
    return make_op("sum_lastdim", out_shape, std::move(out), {a},
                   [d, rows](std::span<const double> g, const GradSink& s) {
                       for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < d; ++j) s[0][r * d + j] += g[r];
                   });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError("matmul: inner dims differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::vector<double> out(m * n);
    MMap(out.data(), m, n).noalias() = CMap(a.data().data(), m, k) * CMap(b.data().data(), k, n);
    return make_op("matmul", {m, n}, std::move(out), {a, b},
                   [a, b, m, k, n](std::span<const double> g, const GradSink& s) {
                       CMap G(g.data(), m, n);
                       if (s.wants(0)) MMap(s[0].data(), m, k).noalias() += G * CMap(b.data().data(), k, n).transpose();
                       if (s.wants(1)) MMap(s[1].data(), k, n).noalias() += CMap(a.data().data(), m, k).transpose() * G;
                   });
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul_bt");
    require_rank2(b, "matmul_bt");
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k)
        throw ShapeError("matmul_bt: inner dims differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                         "^T");
    std::vector<double> out(m * n);
    MMap(out.data(), m, n).noalias() = CMap(a.data().data(), m, k) * CMap(b.data().data(), n, k).transpose();
    return make_op("matmul_bt", {m, n}, std::move(out), {a, b},
                   [a, b, m, k, n](std::span<const double> g, const GradSink& s) {
                       CMap G(g.data(), m, n);
                       if (s.wants(0)) MMap(s[0].data(), m, k).noalias() += G * CMap(b.data().data(), n, k);
                       if (s.wants(1)) MMap(s[1].data(), n, k).noalias() += G.transpose() * CMap(a.data().data(), m, k);
                   });
}

Tensor softmax_lastdim(const Tensor& x) {
    const std::size_t d = last_dim(x, "softmax_lastdim");
    const std::size_t rows = x.size() / d;
    auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in.data() + r * d;
        double* o = out.data() + r * d;
        const double mx = *std::max_element(row, row + d);
        double z = 0.0;
        for (std::size_t j = 0; j < d; ++j) z += (o[j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < d; ++j) o[j] /= z;
    }
    auto probs = out;
    return make_op("softmax_lastdim", x.shape(), std::move(out), {x},
                   [p = std::move(probs), d, rows](std::span<const double> g, const GradSink& s) {
                       for (std::size_t r = 0; r < rows; ++r) {
                           const double* pr = p.data() + r * d;
                           const double* gr = g.data() + r * d;
                           double dot = 0.0;
                           for (std::size_t j = 0; j < d; ++j) dot += pr[j] * gr[j];
                           for (std::size_t j = 0; j < d; ++j) s[0][r * d + j] += pr[j] * (gr[j] - dot);
                       }
                   });
}

Tensor log_softmax_lastdim(const Tensor& x) {
    const std::size_t d = last_dim(x, "log_softmax_lastdim");
    const std::size_t rows = x.size() / d;
    auto in = x.data();
    std::vector<double> out(in.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in.data() + r * d;
        const double mx = *std::max_element(row, row + d);
        double z = 0.0;
        for (std::size_t j = 0; j < d; ++j) z += std::exp(row[j] - mx);
        const double lz = mx + std::log(z);
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = row[j] - lz;
    }
    auto logp = out;
    return make_op("log_softmax_lastdim", x.shape(), std::move(out), {x},
                   [lp = std::move(logp), d, rows](std::span<const double> g, const GradSink& s) {
                       for (std::size_t r = 0; r < rows; ++r) {
                           const double* gr = g.data() + r * d;
                           double gsum = 0.0;
                           for (std::size_t j = 0; j < d; ++j) gsum += gr[j];
                           for (std::size_t j = 0; j < d; ++j)
                               s[0][r * d + j] += gr[j] - std::exp(lp[r * d + j]) * gsum;
                       }
                   });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    std::vector<double> out(a.data().begin(), a.data().end());
    return make_op("reshape", std::move(shape), std::move(out), {a},
                   [](std::span<const double> g, const GradSink& s) {
                       for (std::size_t i = 0; i < g.size(); ++i) s[0][i] += g[i];
                   });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
    if (a.rank() == 0 || begin >= end || end > a.dim(0))
        throw ShapeError("slice_rows: bad range [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                         shape_str(a.shape()));
    const std::size_t inner = a.size() / a.dim(0);
    Shape shape = a.shape();
    shape[0] = end - begin;
    std::vector<double> out(a.data().begin() + begin * inner, a.data().begin() + end * inner);
    return make_op("slice_rows", std::move(shape), std::move(out), {a},
                   [off = begin * inner](std::span<const double> g, const GradSink& s) {
                       for (std::size_t i = 0; i < g.size(); ++i) s[0][off + i] += g[i];
                   });
}

Tensor gather_lastdim(const Tensor& x, std::span<const int> ids) {
    require_rank2(x, "gather_lastdim");
    const auto rows = x.dim(0), v = x.dim(1);
    if (ids.size() != rows) throw ShapeError("gather_lastdim: ids length does not match rows");
    std::vector<double> out(rows);
    std::vector<int> idx(ids.begin(), ids.end());
    for (std::size_t r = 0; r < rows; ++r) {
        if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= v) throw InputError("gather_lastdim: id out of range");
        out[r] = x.data()[r * v + idx[r]];
    }
    return make_op("gather_lastdim", {rows}, std::move(out), {x},
                   [idx = std::move(idx), v](std::span<const double> g, const GradSink& s) {
                       for (std::size_t r = 0; r < idx.size(); ++r) s[0][r * v + idx[r]] += g[r];
                   });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
    require_rank2(table, "embedding");
    const auto vocab = table.dim(0), d = table.dim(1);
    if (ids.empty()) throw ShapeError("embedding: empty id list");
    std::vector<int> idx(ids.begin(), ids.end());
    std::vector<double> out(idx.size() * d);
    for (std::size_t t = 0; t < idx.size(); ++t) {
        if (idx[t] < 0 || static_cast<std::size_t>(idx[t]) >= vocab)
            throw InputError("embedding: token id " + std::to_string(idx[t]) + " outside vocabulary of " +
                             std::to_string(vocab));
        std::copy_n(table.data().begin() + idx[t] * d, d, out.begin() + t * d);
    }
    const std::size_t n = idx.size();
    return make_op("embedding", {n, d}, std::move(out), {table},
                   [idx = std::move(idx), d](std::span<const double> g, const GradSink& s) {
                       for (std::size_t t = 0; t < idx.size(); ++t)
                           for (std::size_t j = 0; j < d; ++j) s[0][idx[t] * d + j] += g[t * d + j];
                   });
}

}  // namespace hlab

#include "hlab/numcore/optim.hpp"

#include <cmath>

namespace hlab {

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (auto& p : params)
        if (p.has_grad())
            for (double g : p.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double c = max_norm / norm;
        for (auto& p : params)
            if (p.has_grad())
                for (double& g : p.mutable_grad()) g *= c;
    }
    return norm;
}

Sgd::Sgd(std::vector<Tensor> params, double lr, double momentum)
    : params_(std::move(params)), lr_(lr), momentum_(momentum) {
    for (auto& p : params_) velocity_.emplace_back(p.size(), 0.0);
}

void Sgd::step() {
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& p = params_[k];
        if (!p.has_grad()) continue;
        auto w = p.mutable_data();
        auto g = p.grad();
        auto& vel = velocity_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            vel[i] = momentum_ * vel[i] + g[i];
            w[i] -= lr_ * vel[i];
        }
    }
}

void Sgd::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& p : params_) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& p = params_[k];
        if (!p.has_grad()) continue;
        auto w = p.mutable_data();
        auto g = p.grad();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g[i];
            v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g[i] * g[i];
            w[i] -= lr_ * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

}  // namespace hlab

#pragma once

#include <vector>

#include "hlab/numcore/tensor.hpp"

namespace hlab {

// Scales all gradients so their joint L2 norm is at most max_norm. Returns the
// norm before clipping.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

// Plain stochastic gradient step with optional heavy-ball momentum.
class Sgd {
   public:
    Sgd(std::vector<Tensor> params, double lr, double momentum = 0.0);
    void step();
    void zero_grad();
    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

   private:
    std::vector<Tensor> params_;
    double lr_;
    double momentum_;
    std::vector<std::vector<double>> velocity_;
};

class Adam {
   public:
    Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step();
    void zero_grad();
    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

   private:
    std::vector<Tensor> params_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace hlab

#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "terse/layers.hpp"
#include "terse/rng.hpp"
#include "terse/tensor.hpp"

namespace terse {

// Weight decay is coupled L2: added to the gradient before the update rule.

template <typename T>
class Sgd {
public:
    Sgd(double lr, double momentum = 0.0, double weight_decay = 0.0)
        : lr_(lr), momentum_(momentum), wd_(weight_decay) {
        if (lr <= 0) throw std::invalid_argument("sgd: learning rate must be positive");
        if (momentum < 0 || momentum >= 1) throw std::invalid_argument("sgd: momentum outside [0,1)");
    }

    void step(std::vector<Param<T>*>& params) {
        for (Param<T>* p : params) {
            if (momentum_ != 0.0 && p->m1.size() != p->value.size()) p->m1 = Tensor<T>(p->value.shape);
            for (std::size_t i = 0; i < p->value.size(); ++i) {
                double g = p->grad[i] + wd_ * p->value[i];
                if (momentum_ != 0.0) {
                    g = momentum_ * p->m1[i] + g;
                    p->m1[i] = T(g);
                }
                p->value[i] -= T(lr_ * g);
            }
            p->zero_grad();
            ++p->steps;
        }
    }

private:
    double lr_, momentum_, wd_;
};

template <typename T>
class Adam {
public:
    Adam(double lr, double weight_decay = 0.0, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8)
        : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
        if (lr <= 0) throw std::invalid_argument("adam: learning rate must be positive");
    }

    void step(std::vector<Param<T>*>& params) {
        for (Param<T>* p : params) {
            if (p->m1.size() != p->value.size()) {
                p->m1 = Tensor<T>(p->value.shape);
                p->m2 = Tensor<T>(p->value.shape);
            }
            const double t = static_cast<double>(++p->steps);
            const double bc1 = 1.0 - std::pow(b1_, t);
            const double bc2 = 1.0 - std::pow(b2_, t);
            for (std::size_t i = 0; i < p->value.size(); ++i) {
                const double g = p->grad[i] + wd_ * p->value[i];
                const double m = b1_ * p->m1[i] + (1.0 - b1_) * g;
                const double v = b2_ * p->m2[i] + (1.0 - b2_) * g * g;
                p->m1[i] = T(m);
                p->m2[i] = T(v);
                p->value[i] -= T(lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_));
            }
            p->zero_grad();
        }
    }

private:
    double lr_, wd_, b1_, b2_, eps_;
};

// Uniform Xavier/Glorot: values in +-gain*sqrt(6/(fan_in+fan_out)).
// Conv weights (OC,IC,K,K): fan_in = IC*K*K, fan_out = OC*K*K.
// Linear weights (O,I): fan_in = I, fan_out = O.
template <typename T>
void xavier_uniform(Tensor<T>& w, double gain, Rng& rng) {
    if (gain <= 0) throw std::invalid_argument("xavier: gain must be positive");
    std::size_t fan_in = 0, fan_out = 0;
    if (w.ndim() == 4) {
        const std::size_t rf = static_cast<std::size_t>(w.dim(2)) * w.dim(3);
        fan_in = static_cast<std::size_t>(w.dim(1)) * rf;
        fan_out = static_cast<std::size_t>(w.dim(0)) * rf;
    } else if (w.ndim() == 2) {
        fan_in = static_cast<std::size_t>(w.dim(1));
        fan_out = static_cast<std::size_t>(w.dim(0));
    } else {
        throw std::invalid_argument("xavier: want 2-d or 4-d weights, got " + w.shape_str());
    }
    const double a = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = T(rng.uniform(-a, a));
}

}  // namespace terse

#pragma once

// Adam optimizer with bias correction, plus a half-cosine learning-rate
// schedule. Parameters are updated in place through pointers gathered from a
// weight tree; moment buffers are kept in double precision regardless of T.

#include <cmath>
#include <vector>

#include "tformer/tensor.hpp"

namespace tformer {

inline double cosine_lr(int64_t step, int64_t total_steps, double lr_start, double lr_end) {
    if (total_steps <= 1) return lr_start;
    const double t = static_cast<double>(step) / static_cast<double>(total_steps - 1);
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(t * 3.14159265358979323846));
}

template <class T>
class Adam {
public:
    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // grads[i] aligns with params[i]; both orders must stay stable across
    // calls. lr is the step size for this call.
    void step(const std::vector<Tensor<T>*>& params,
              const std::vector<std::vector<double>>& grads, double lr) {
        check(params.size() == grads.size(), "Adam::step: params/grads size mismatch");
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(static_cast<size_t>(params[i]->numel()), 0.0);
                v_[i].assign(static_cast<size_t>(params[i]->numel()), 0.0);
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor<T>& p = *params[i];
            check(static_cast<int64_t>(grads[i].size()) == p.numel(),
                  "Adam::step: grad size mismatch");
            std::vector<T> next(static_cast<size_t>(p.numel()));
            for (size_t j = 0; j < next.size(); ++j) {
                const double g = grads[i][j];
                m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
                v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
                const double mh = m_[i][j] / bc1;
                const double vh = v_[i][j] / bc2;
                next[j] = static_cast<T>(static_cast<double>(p.data()[j]) -
                                         lr * mh / (std::sqrt(vh) + eps_));
            }
            p = Tensor<T>(p.shape(), std::move(next));
        }
    }

    int64_t steps_taken() const { return t_; }

private:
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

} // namespace tformer

#pragma once

#include "kdstm/model.hpp"

#include <cmath>

namespace kdstm {

// Adam with bias correction; one instance persists across training stages
// so the moment estimates carry over.
class Adam {
public:
    Adam() = default;

    Adam(const Model& model, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps), m_(zero_like(model)), v_(zero_like(model)) {}

    void step(ModelParams& params, const ModelParams& grads, double lr) {
        ++t_;
        double c1 = 1.0 - std::pow(beta1_, t_);
        double c2 = 1.0 - std::pow(beta2_, t_);
        update(m_.enc.w1, v_.enc.w1, params.enc.w1, grads.enc.w1, lr, c1, c2);
        update(m_.enc.b1, v_.enc.b1, params.enc.b1, grads.enc.b1, lr, c1, c2);
        update(m_.enc.w2, v_.enc.w2, params.enc.w2, grads.enc.w2, lr, c1, c2);
        update(m_.enc.b2, v_.enc.b2, params.enc.b2, grads.enc.b2, lr, c1, c2);
        update(m_.enc.w_mu, v_.enc.w_mu, params.enc.w_mu, grads.enc.w_mu, lr, c1, c2);
        update(m_.enc.b_mu, v_.enc.b_mu, params.enc.b_mu, grads.enc.b_mu, lr, c1, c2);
        update(m_.enc.w_kappa, v_.enc.w_kappa, params.enc.w_kappa, grads.enc.w_kappa, lr, c1, c2);
        update_scalar(m_.enc.b_kappa, v_.enc.b_kappa, params.enc.b_kappa, grads.enc.b_kappa, lr,
                      c1, c2);
        update(m_.topic_emb, v_.topic_emb, params.topic_emb, grads.topic_emb, lr, c1, c2);
    }

    int64_t steps() const { return t_; }

private:
    template <typename T>
    void update(T& m, T& v, T& p, const T& g, double lr, double c1, double c2) {
        m = beta1_ * m + (1.0 - beta1_) * g;
        v = beta2_ * v.array().matrix() + (1.0 - beta2_) * g.cwiseProduct(g);
        p -= lr * (m / c1).cwiseQuotient(((v / c2).cwiseSqrt().array() + eps_).matrix());
    }

    void update_scalar(double& m, double& v, double& p, double g, double lr, double c1,
                       double c2) {
        m = beta1_ * m + (1.0 - beta1_) * g;
        v = beta2_ * v + (1.0 - beta2_) * g * g;
        p -= lr * (m / c1) / (std::sqrt(v / c2) + eps_);
    }

    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    int64_t t_ = 0;
    ModelParams m_, v_;
};

// One-cycle policy over a fixed number of steps: linear warmup from the
// base rate to the peak, then cosine annealing down to final_lr.
struct OneCycleSchedule {
    double base_lr = 0.002;
    double max_lr = 0.01;
    double final_lr = 0.0002;
    int total_steps = 50;
    double warmup_frac = 0.3;

    double lr_at(int step) const {
        if (total_steps <= 1) return max_lr;
        int warm = std::max(1, static_cast<int>(warmup_frac * total_steps));
        if (step <= warm) {
            return base_lr + (max_lr - base_lr) * static_cast<double>(step) / warm;
        }
        double t = static_cast<double>(step - warm) / (total_steps - 1 - warm);
        t = clamp(t, 0.0, 1.0);
        return final_lr + (max_lr - final_lr) * 0.5 * (1.0 + std::cos(M_PI * t));
    }
};

} // namespace kdstm

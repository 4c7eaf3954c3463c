#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lifmixer/model.hpp"
#include "lifmixer/parallel.hpp"

namespace lifmixer {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

// Warmup is linear from zero; afterwards the rate follows a half cosine
// down to zero at total_steps.
struct Schedule {
    double base_lr = 1e-3;
    int64_t warmup_steps = 0;
    int64_t total_steps = 1;
};

inline double cosine_lr(int64_t step, const Schedule& s) {
    if (s.total_steps < 1) {
        throw std::invalid_argument("cosine_lr: total_steps must be >= 1, got " +
                                    std::to_string(s.total_steps));
    }
    if (s.warmup_steps < 0 || s.warmup_steps > s.total_steps) {
        throw std::invalid_argument("cosine_lr: warmup_steps " + std::to_string(s.warmup_steps) +
                                    " outside [0, " + std::to_string(s.total_steps) + "]");
    }
    if (step < 0 || step > s.total_steps) {
        throw std::invalid_argument("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                                    std::to_string(s.total_steps) + "]");
    }
    if (step < s.warmup_steps) {
        return s.base_lr * double(step) / double(s.warmup_steps);
    }
    if (s.total_steps == s.warmup_steps) return s.base_lr;
    const double progress =
        double(step - s.warmup_steps) / double(s.total_steps - s.warmup_steps);
    return s.base_lr * 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846));
}

// One decoupled-weight-decay Adam update. `params` pairs each parameter with
// its gradient; `moments` pairs the first moment with the second, in the
// same bank order. step_index is 1-based. Decay multiplies the parameter
// directly (so it acts even where the gradient is zero) and is skipped for
// entries flagged decay=false (biases, norm affines, LIF scalars).
template <typename T>
void adamw_step(const std::vector<BankEntry<T>>& params, const std::vector<BankEntry<T>>& moments,
                int64_t step_index, const AdamWConfig& hp, double lr) {
    if (params.size() != moments.size()) {
        throw std::invalid_argument("adamw_step: bank size mismatch");
    }
    if (step_index < 1) {
        throw std::invalid_argument("adamw_step: step_index must be >= 1");
    }
    const double bc1 = 1.0 - std::pow(hp.beta1, double(step_index));
    const double bc2 = 1.0 - std::pow(hp.beta2, double(step_index));
    for (size_t i = 0; i < params.size(); ++i) {
        const BankEntry<T>& pe = params[i];
        const BankEntry<T>& me = moments[i];
        if (pe.name != me.name) {
            throw std::invalid_argument("adamw_step: bank order mismatch at " + pe.name + " vs " +
                                        me.name);
        }
        if (!pe.value->same_shape(*pe.grad) || !pe.value->same_shape(*me.value) ||
            !pe.value->same_shape(*me.grad)) {
            throw std::invalid_argument("adamw_step: shape mismatch for " + pe.name);
        }
        Tensor4<T>& p = *pe.value;
        const Tensor4<T>& g = *pe.grad;
        Tensor4<T>& m = *me.value;
        Tensor4<T>& v = *me.grad;
        const double decay = pe.decay ? hp.weight_decay : 0.0;
        parallel_for(0, p.numel(), [&](int64_t lo, int64_t hi) {
            for (int64_t j = lo; j < hi; ++j) {
                const double gj = double(g[j]);
                const double mj = hp.beta1 * double(m[j]) + (1.0 - hp.beta1) * gj;
                const double vj = hp.beta2 * double(v[j]) + (1.0 - hp.beta2) * gj * gj;
                m[j] = T(mj);
                v[j] = T(vj);
                double pj = double(p[j]);
                pj -= lr * decay * pj;
                pj -= lr * (mj / bc1) / (std::sqrt(vj / bc2) + hp.eps);
                p[j] = T(pj);
            }
        });
    }
}

template <typename T>
void zero_grads(const std::vector<BankEntry<T>>& params) {
    for (const BankEntry<T>& e : params) e.grad->fill(T(0));
}

} // namespace lifmixer

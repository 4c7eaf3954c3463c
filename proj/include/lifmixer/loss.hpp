#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lifmixer/tensor.hpp"

namespace lifmixer {

template <typename T>
struct LossResult {
    double loss = 0.0;
    Tensor4<T> d_logits;
};

// Label-smoothed cross entropy, averaged over the batch. The target
// distribution puts 1-s on the true class and s/(K-1) on each other class;
// the gradient is (softmax - target) / batch, exactly.
template <typename T>
LossResult<T> cross_entropy_ls(const Tensor4<T>& logits, const std::vector<int64_t>& labels,
                               double smoothing) {
    const int64_t n = logits.n();
    const int64_t k = logits.c();
    if (logits.h() != 1 || logits.w() != 1) {
        throw std::invalid_argument("cross_entropy_ls: logits must be (n, classes, 1, 1), got " +
                                    logits.shape_str());
    }
    if (int64_t(labels.size()) != n) {
        throw std::invalid_argument("cross_entropy_ls: " + std::to_string(labels.size()) +
                                    " labels for batch of " + std::to_string(n));
    }
    if (k < 2) throw std::invalid_argument("cross_entropy_ls: need at least 2 classes");
    if (smoothing < 0.0 || smoothing >= 1.0) {
        throw std::invalid_argument("cross_entropy_ls: smoothing must lie in [0, 1)");
    }

    LossResult<T> out;
    out.d_logits = zeros_like(logits);
    const double off = smoothing / double(k - 1);
    const double on = 1.0 - smoothing;
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const int64_t y = labels[i];
        if (y < 0 || y >= k) {
            throw std::invalid_argument("cross_entropy_ls: label " + std::to_string(y) +
                                        " out of range [0, " + std::to_string(k) + ") at row " +
                                        std::to_string(i));
        }
        double zmax = double(logits(i, 0, 0, 0));
        for (int64_t j = 1; j < k; ++j) zmax = std::max(zmax, double(logits(i, j, 0, 0)));
        double denom = 0.0;
        for (int64_t j = 0; j < k; ++j) denom += std::exp(double(logits(i, j, 0, 0)) - zmax);
        const double lse = zmax + std::log(denom);
        for (int64_t j = 0; j < k; ++j) {
            const double z = double(logits(i, j, 0, 0));
            const double q = (j == y) ? on : off;
            total -= q * (z - lse);
            const double p = std::exp(z - lse);
            out.d_logits(i, j, 0, 0) = T((p - q) / double(n));
        }
    }
    out.loss = total / double(n);
    return out;
}

template <typename T>
int64_t argmax_class(const Tensor4<T>& logits, int64_t row) {
    int64_t best = 0;
    for (int64_t j = 1; j < logits.c(); ++j) {
        if (logits(row, j, 0, 0) > logits(row, best, 0, 0)) best = j;
    }
    return best;
}

} // namespace lifmixer

#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lifmixer/parallel.hpp"

namespace lifmixer {

enum class Dtype { f32 = 0, f64 = 1 };

template <typename T>
constexpr Dtype dtype_of();
template <>
constexpr Dtype dtype_of<float>() { return Dtype::f32; }
template <>
constexpr Dtype dtype_of<double>() { return Dtype::f64; }

inline const char* dtype_name(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

// Dense rank-4 array in row-major N, C, H, W order. The flat offset of
// (i, j, k, l) is ((i*c + j)*h + k)*w + l. Extents of zero are legal and
// give an empty tensor. Operations treat produced tensors as immutable;
// mutation belongs to construction.
template <typename T>
class Tensor4 {
public:
    Tensor4() = default;
    Tensor4(int64_t n, int64_t c, int64_t h, int64_t w)
        : n_(n), c_(c), h_(h), w_(w) {
        if (n < 0 || c < 0 || h < 0 || w < 0) {
            throw std::invalid_argument("Tensor4: negative extent in " + shape_str_of(n, c, h, w));
        }
        data_.assign(static_cast<size_t>(n * c * h * w), T(0));
    }

    int64_t n() const { return n_; }
    int64_t c() const { return c_; }
    int64_t h() const { return h_; }
    int64_t w() const { return w_; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](int64_t flat) { return data_[static_cast<size_t>(flat)]; }
    const T& operator[](int64_t flat) const { return data_[static_cast<size_t>(flat)]; }

    int64_t offset(int64_t i, int64_t j, int64_t k, int64_t l) const {
        return ((i * c_ + j) * h_ + k) * w_ + l;
    }
    T& operator()(int64_t i, int64_t j, int64_t k, int64_t l) { return data_[offset(i, j, k, l)]; }
    const T& operator()(int64_t i, int64_t j, int64_t k, int64_t l) const {
        return data_[offset(i, j, k, l)];
    }

    bool same_shape(const Tensor4& o) const {
        return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
    }

    std::string shape_str() const { return shape_str_of(n_, c_, h_, w_); }

    static std::string shape_str_of(int64_t n, int64_t c, int64_t h, int64_t w) {
        std::ostringstream os;
        os << "(" << n << "," << c << "," << h << "," << w << ")";
        return os.str();
    }

    void fill(T v) {
        for (auto& x : data_) x = v;
    }

private:
    int64_t n_ = 0, c_ = 0, h_ = 0, w_ = 0;
    std::vector<T> data_;
};

using Tensor4f = Tensor4<float>;
using Tensor4d = Tensor4<double>;

template <typename T>
Tensor4<T> zeros(int64_t n, int64_t c, int64_t h, int64_t w) {
    return Tensor4<T>(n, c, h, w);
}

template <typename T>
Tensor4<T> zeros_like(const Tensor4<T>& x) {
    return Tensor4<T>(x.n(), x.c(), x.h(), x.w());
}

template <typename T, typename F>
Tensor4<T> ew_map(const Tensor4<T>& x, F f) {
    Tensor4<T> out = zeros_like(x);
    const T* src = x.data();
    T* dst = out.data();
    const int64_t total = x.numel();
    for (int64_t i = 0; i < total; ++i) dst[i] = f(src[i]);
    return out;
}

template <typename T, typename F>
Tensor4<T> ew_zip(const Tensor4<T>& a, const Tensor4<T>& b, F f) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("ew_zip: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    Tensor4<T> out = zeros_like(a);
    const T* pa = a.data();
    const T* pb = b.data();
    T* dst = out.data();
    const int64_t total = a.numel();
    for (int64_t i = 0; i < total; ++i) dst[i] = f(pa[i], pb[i]);
    return out;
}

template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
    return ew_zip(a, b, [](T x, T y) { return x + y; });
}

// Mean over the H*W plane; output shape (n, c, 1, 1).
template <typename T>
Tensor4<T> reduce_mean_hw(const Tensor4<T>& x) {
    if (x.h() * x.w() == 0) {
        throw std::invalid_argument("reduce_mean_hw: empty spatial plane in " + x.shape_str());
    }
    Tensor4<T> out(x.n(), x.c(), 1, 1);
    const int64_t plane = x.h() * x.w();
    for (int64_t i = 0; i < x.n(); ++i) {
        for (int64_t j = 0; j < x.c(); ++j) {
            const T* p = x.data() + (i * x.c() + j) * plane;
            T acc = T(0);
            for (int64_t s = 0; s < plane; ++s) acc += p[s];
            out(i, j, 0, 0) = acc / static_cast<T>(plane);
        }
    }
    return out;
}

enum class Axis { H, W };

// Contiguous block of positions along H or W, all other axes in full.
// Group LIF walks its chains through this: `step` indexes inside the
// block along the chained axis, `cross` the other spatial axis.
template <typename T>
class AxisBlockView {
public:
    AxisBlockView(Tensor4<T>& base, Axis axis, int64_t block_start, int64_t block_len)
        : base_(&base), axis_(axis), start_(block_start), len_(block_len) {
        const int64_t extent = axis == Axis::H ? base.h() : base.w();
        if (block_len <= 0 || block_start < 0 || block_start + block_len > extent) {
            std::ostringstream os;
            os << "AxisBlockView: block [" << block_start << "," << block_start + block_len
               << ") outside axis extent " << extent;
            throw std::invalid_argument(os.str());
        }
    }

    Axis axis() const { return axis_; }
    int64_t steps() const { return len_; }
    int64_t block_start() const { return start_; }
    int64_t cross_extent() const { return axis_ == Axis::H ? base_->w() : base_->h(); }

    int64_t index(int64_t n, int64_t c, int64_t step, int64_t cross) const {
        return axis_ == Axis::H ? base_->offset(n, c, start_ + step, cross)
                                : base_->offset(n, c, cross, start_ + step);
    }

    T& at(int64_t n, int64_t c, int64_t step, int64_t cross) {
        return (*base_)[index(n, c, step, cross)];
    }
    const T& at(int64_t n, int64_t c, int64_t step, int64_t cross) const {
        return (*base_)[index(n, c, step, cross)];
    }

private:
    Tensor4<T>* base_;
    Axis axis_;
    int64_t start_;
    int64_t len_;
};

// Returns the flat index of the first non-finite element, or -1.
template <typename T>
int64_t first_nonfinite(const Tensor4<T>& x) {
    const T* p = x.data();
    const int64_t total = x.numel();
    for (int64_t i = 0; i < total; ++i) {
        if (!std::isfinite(static_cast<double>(p[i]))) return i;
    }
    return -1;
}

template <typename T>
T min_element(const Tensor4<T>& x) {
    T m = x.numel() ? x[0] : T(0);
    for (int64_t i = 1; i < x.numel(); ++i) m = x[i] < m ? x[i] : m;
    return m;
}

template <typename T>
T max_abs_diff(const Tensor4<T>& a, const Tensor4<T>& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("max_abs_diff: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    T m = T(0);
    for (int64_t i = 0; i < a.numel(); ++i) {
        T d = std::abs(a[i] - b[i]);
        m = d > m ? d : m;
    }
    return m;
}

} // namespace lifmixer

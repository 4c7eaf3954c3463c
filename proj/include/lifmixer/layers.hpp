#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "lifmixer/parallel.hpp"
#include "lifmixer/rng.hpp"
#include "lifmixer/tensor.hpp"

// Dense layers of the backbone: pointwise channel projection, 3x3 depthwise
// convolution, group normalization, GELU, dropout / drop-path, patch
// embedding and patch merging. Every forward has a handwritten adjoint.
//
// All parameters live in rank-4 tensors so checkpoints and the optimizer
// treat them uniformly:
//   linear weight (c_out, c_in, 1, 1), bias (c_out, 1, 1, 1)
//   dwconv kernel (c, 1, 3, 3),        bias (c, 1, 1, 1)
//   norm gamma / beta (c, 1, 1, 1)

namespace lifmixer {

// ------------------------------------------------------------------------
// Pointwise (1x1) channel projection.
// ------------------------------------------------------------------------

template <typename T>
struct LinearParams {
    Tensor4<T> weight; // (c_out, c_in, 1, 1)
    Tensor4<T> bias;   // (c_out, 1, 1, 1)
    int64_t c_out() const { return weight.n(); }
    int64_t c_in() const { return weight.c(); }
};

template <typename T>
LinearParams<T> make_linear(int64_t c_out, int64_t c_in, Rng rng) {
    LinearParams<T> p{Tensor4<T>(c_out, c_in, 1, 1), Tensor4<T>(c_out, 1, 1, 1)};
    for (int64_t i = 0; i < p.weight.numel(); ++i)
        p.weight[i] = static_cast<T>(rng.trunc_normal(0.02));
    return p; // bias stays zero
}

template <typename T>
struct LinearGrads {
    Tensor4<T> d_x;
    Tensor4<T> d_weight;
    Tensor4<T> d_bias;
};

template <typename T>
Tensor4<T> channel_mlp(const Tensor4<T>& x, const LinearParams<T>& p) {
    if (x.c() != p.c_in()) {
        throw std::invalid_argument("channel_mlp: input has " + std::to_string(x.c()) +
                                    " channels, weight expects " + std::to_string(p.c_in()));
    }
    const int64_t cin = p.c_in(), cout = p.c_out();
    const int64_t spatial = x.h() * x.w();
    Tensor4<T> out(x.n(), cout, x.h(), x.w());
    parallel_for(0, x.n() * cout, [&](int64_t lo, int64_t hi) {
        for (int64_t item = lo; item < hi; ++item) {
            const int64_t j = item % cout;
            const int64_t n = item / cout;
            T* op = out.data() + (n * cout + j) * spatial;
            const T b = p.bias[j];
            for (int64_t q = 0; q < spatial; ++q) op[q] = b;
            for (int64_t i = 0; i < cin; ++i) {
                const T w = p.weight[j * cin + i];
                const T* xp = x.data() + (n * cin + i) * spatial;
                for (int64_t q = 0; q < spatial; ++q) op[q] += w * xp[q];
            }
        }
    });
    return out;
}

template <typename T>
LinearGrads<T> channel_mlp_backward(const Tensor4<T>& d_out, const Tensor4<T>& x,
                                    const LinearParams<T>& p) {
    if (d_out.c() != p.c_out() || x.c() != p.c_in() || d_out.n() != x.n() ||
        d_out.h() != x.h() || d_out.w() != x.w()) {
        throw std::invalid_argument("channel_mlp_backward: gradient shape " + d_out.shape_str() +
                                    " inconsistent with input " + x.shape_str());
    }
    const int64_t cin = p.c_in(), cout = p.c_out();
    const int64_t spatial = x.h() * x.w();
    LinearGrads<T> g{zeros_like(x), zeros_like(p.weight), zeros_like(p.bias)};

    parallel_for(0, x.n() * cin, [&](int64_t lo, int64_t hi) {
        for (int64_t item = lo; item < hi; ++item) {
            const int64_t i = item % cin;
            const int64_t n = item / cin;
            T* dxp = g.d_x.data() + (n * cin + i) * spatial;
            for (int64_t j = 0; j < cout; ++j) {
                const T w = p.weight[j * cin + i];
                const T* dop = d_out.data() + (n * cout + j) * spatial;
                for (int64_t q = 0; q < spatial; ++q) dxp[q] += w * dop[q];
            }
        }
    });
    // One work item per output channel: its weight row and bias entry are
    // private to the item, and the n/q accumulation order is fixed.
    parallel_for(0, cout, [&](int64_t lo, int64_t hi) {
        for (int64_t j = lo; j < hi; ++j) {
            T db = T(0);
            for (int64_t n = 0; n < x.n(); ++n) {
                const T* dop = d_out.data() + (n * cout + j) * spatial;
                for (int64_t q = 0; q < spatial; ++q) db += dop[q];
                for (int64_t i = 0; i < cin; ++i) {
                    const T* xp = x.data() + (n * cin + i) * spatial;
                    T acc = T(0);
                    for (int64_t q = 0; q < spatial; ++q) acc += dop[q] * xp[q];
                    g.d_weight[j * cin + i] += acc;
                }
            }
            g.d_bias[j] = db;
        }
    });
    return g;
}

// ------------------------------------------------------------------------
// 3x3 depthwise convolution, stride 1, zero padding 1.
// ------------------------------------------------------------------------

template <typename T>
struct DwConvParams {
    Tensor4<T> kernel; // (c, 1, 3, 3)
    Tensor4<T> bias;   // (c, 1, 1, 1)
    int64_t channels() const { return kernel.n(); }
};

template <typename T>
DwConvParams<T> make_dwconv(int64_t c, Rng rng) {
    DwConvParams<T> p{Tensor4<T>(c, 1, 3, 3), Tensor4<T>(c, 1, 1, 1)};
    for (int64_t i = 0; i < p.kernel.numel(); ++i)
        p.kernel[i] = static_cast<T>(rng.trunc_normal(0.02));
    return p;
}

template <typename T>
struct DwConvGrads {
    Tensor4<T> d_x;
    Tensor4<T> d_kernel;
    Tensor4<T> d_bias;
};

template <typename T>
Tensor4<T> dwconv3x3(const Tensor4<T>& x, const DwConvParams<T>& p) {
    if (x.c() != p.channels()) {
        throw std::invalid_argument("dwconv3x3: input has " + std::to_string(x.c()) +
                                    " channels, kernel expects " + std::to_string(p.channels()));
    }
    const int64_t H = x.h(), W = x.w();
    Tensor4<T> out = zeros_like(x);
    parallel_for(0, x.n() * x.c(), [&](int64_t lo, int64_t hi) {
        for (int64_t item = lo; item < hi; ++item) {
            const int64_t c = item % x.c();
            const int64_t n = item / x.c();
            const T* kp = p.kernel.data() + c * 9;
            const T b = p.bias[c];
            for (int64_t k = 0; k < H; ++k) {
                for (int64_t l = 0; l < W; ++l) {
                    T acc = b;
                    for (int64_t a = 0; a < 3; ++a) {
                        const int64_t y = k + a - 1;
                        if (y < 0 || y >= H) continue;
                        for (int64_t bcol = 0; bcol < 3; ++bcol) {
                            const int64_t z = l + bcol - 1;
                            if (z < 0 || z >= W) continue;
                            acc += kp[a * 3 + bcol] * x(n, c, y, z);
                        }
                    }
                    out(n, c, k, l) = acc;
                }
            }
        }
    });
    return out;
}

template <typename T>
DwConvGrads<T> dwconv3x3_backward(const Tensor4<T>& d_out, const Tensor4<T>& x,
                                  const DwConvParams<T>& p) {
    if (!d_out.same_shape(x) || x.c() != p.channels()) {
        throw std::invalid_argument("dwconv3x3_backward: gradient shape " + d_out.shape_str() +
                                    " inconsistent with input " + x.shape_str());
    }
    const int64_t H = x.h(), W = x.w();
    DwConvGrads<T> g{zeros_like(x), zeros_like(p.kernel), zeros_like(p.bias)};

    parallel_for(0, x.n() * x.c(), [&](int64_t lo, int64_t hi) {
        for (int64_t item = lo; item < hi; ++item) {
            const int64_t c = item % x.c();
            const int64_t n = item / x.c();
            const T* kp = p.kernel.data() + c * 9;
            // d_x is the correlation of d_out with the 180-degree-rotated
            // kernel, restricted to taps whose forward read was in bounds.
            for (int64_t y = 0; y < H; ++y) {
                for (int64_t z = 0; z < W; ++z) {
                    T acc = T(0);
                    for (int64_t a = 0; a < 3; ++a) {
                        const int64_t k = y - a + 1;
                        if (k < 0 || k >= H) continue;
                        for (int64_t bcol = 0; bcol < 3; ++bcol) {
                            const int64_t l = z - bcol + 1;
                            if (l < 0 || l >= W) continue;
                            acc += kp[a * 3 + bcol] * d_out(n, c, k, l);
                        }
                    }
                    g.d_x(n, c, y, z) = acc;
                }
            }
        }
    });
    // Per-channel kernel/bias gradients; sample loop runs serially inside.
    parallel_for(0, x.c(), [&](int64_t lo, int64_t hi) {
        for (int64_t c = lo; c < hi; ++c) {
            T* dk = g.d_kernel.data() + c * 9;
            T db = T(0);
            for (int64_t n = 0; n < x.n(); ++n) {
                for (int64_t k = 0; k < H; ++k) {
                    for (int64_t l = 0; l < W; ++l) {
                        const T go = d_out(n, c, k, l);
                        db += go;
                        for (int64_t a = 0; a < 3; ++a) {
                            const int64_t y = k + a - 1;
                            if (y < 0 || y >= H) continue;
                            for (int64_t bcol = 0; bcol < 3; ++bcol) {
                                const int64_t z = l + bcol - 1;
                                if (z < 0 || z >= W) continue;
                                dk[a * 3 + bcol] += go * x(n, c, y, z);
                            }
                        }
                    }
                }
            }
            g.d_bias[c] = db;
        }
    });
    return g;
}

// ------------------------------------------------------------------------
// Group normalization over (C/G, H, W) slabs.
// ------------------------------------------------------------------------

template <typename T>
struct GroupNormParams {
    int64_t num_groups = 1;
    Tensor4<T> gamma; // (c, 1, 1, 1)
    Tensor4<T> beta;  // (c, 1, 1, 1)
    T epsilon = T(1e-5);
};

template <typename T>
GroupNormParams<T> make_group_norm(int64_t c, int64_t groups, T epsilon = T(1e-5)) {
    GroupNormParams<T> p{groups, Tensor4<T>(c, 1, 1, 1), Tensor4<T>(c, 1, 1, 1), epsilon};
    p.gamma.fill(T(1));
    return p;
}

template <typename T>
struct GroupNormSaved {
    Tensor4<T> mean;    // (n, groups, 1, 1)
    Tensor4<T> inv_std; // (n, groups, 1, 1)
};

template <typename T>
struct GroupNormGrads {
    Tensor4<T> d_x;
    Tensor4<T> d_gamma;
    Tensor4<T> d_beta;
};

namespace detail {

template <typename T>
void group_norm_validate(const Tensor4<T>& x, const GroupNormParams<T>& p, const char* op) {
    if (p.num_groups < 1 || x.c() % p.num_groups != 0) {
        throw std::invalid_argument(std::string(op) + ": " + std::to_string(x.c()) +
                                    " channels not divisible into " +
                                    std::to_string(p.num_groups) + " groups");
    }
    if (p.gamma.n() != x.c() || p.beta.n() != x.c()) {
        throw std::invalid_argument(std::string(op) + ": affine parameters sized for " +
                                    std::to_string(p.gamma.n()) + " channels, input has " +
                                    std::to_string(x.c()));
    }
    if (!(p.epsilon > T(0))) {
        throw std::invalid_argument(std::string(op) + ": epsilon must be positive");
    }
}

} // namespace detail

template <typename T>
Tensor4<T> group_norm(const Tensor4<T>& x, const GroupNormParams<T>& p,
                      GroupNormSaved<T>* saved = nullptr) {
    detail::group_norm_validate(x, p, "group_norm");
    const int64_t G = p.num_groups;
    const int64_t cg = x.c() / G;
    const int64_t spatial = x.h() * x.w();
    const int64_t slab = cg * spatial;
    if (slab == 0) throw std::invalid_argument("group_norm: empty group slab in " + x.shape_str());

    Tensor4<T> out = zeros_like(x);
    Tensor4<T> mean(x.n(), G, 1, 1);
    Tensor4<T> inv_std(x.n(), G, 1, 1);
    parallel_for(0, x.n() * G, [&](int64_t lo, int64_t hi) {
        for (int64_t item = lo; item < hi; ++item) {
            const int64_t grp = item % G;
            const int64_t n = item / G;
            const T* base = x.data() + (n * x.c() + grp * cg) * spatial;
            T sum = T(0), sumsq = T(0);
            for (int64_t q = 0; q < slab; ++q) {
                sum += base[q];
                sumsq += base[q] * base[q];
            }
            const T m = sum / T(slab);
            T var = sumsq / T(slab) - m * m;
            if (var < T(0)) var = T(0); // guard the cancellation case
            const T is = T(1) / std::sqrt(var + p.epsilon);
            mean[item] = m;
            inv_std[item] = is;
            T* op = out.data() + (n * x.c() + grp * cg) * spatial;
            for (int64_t cc = 0; cc < cg; ++cc) {
                const int64_t ch = grp * cg + cc;
                const T gscale = p.gamma[ch] * is;
                const T gshift = p.beta[ch] - p.gamma[ch] * is * m;
                const T* xp = base + cc * spatial;
                T* o = op + cc * spatial;
                for (int64_t q = 0; q < spatial; ++q) o[q] = gscale * xp[q] + gshift;
            }
        }
    });
    if (saved) {
        saved->mean = std::move(mean);
        saved->inv_std = std::move(inv_std);
    }
    return out;
}

template <typename T>
GroupNormGrads<T> group_norm_backward(const Tensor4<T>& d_out, const Tensor4<T>& x,
                                      const GroupNormParams<T>& p,
                                      const GroupNormSaved<T>& saved) {
    detail::group_norm_validate(x, p, "group_norm_backward");
    if (!d_out.same_shape(x)) {
        throw std::invalid_argument("group_norm_backward: gradient shape " + d_out.shape_str() +
                                    " vs input " + x.shape_str());
    }
    const int64_t G = p.num_groups;
    const int64_t cg = x.c() / G;
    const int64_t spatial = x.h() * x.w();
    const int64_t slab = cg * spatial;

    GroupNormGrads<T> g{zeros_like(x), zeros_like(p.gamma), zeros_like(p.beta)};
    // d_gamma/d_beta per channel come out of a second pass so the per-group
    // pass stays write-disjoint.
    parallel_for(0, x.n() * G, [&](int64_t lo, int64_t hi) {
        for (int64_t item = lo; item < hi; ++item) {
            const int64_t grp = item % G;
            const int64_t n = item / G;
            const T m = saved.mean[item];
            const T is = saved.inv_std[item];
            const T* xb = x.data() + (n * x.c() + grp * cg) * spatial;
            const T* db = d_out.data() + (n * x.c() + grp * cg) * spatial;
            // s1 = sum(d_xhat), s2 = sum(d_xhat * xhat)
            T s1 = T(0), s2 = T(0);
            for (int64_t cc = 0; cc < cg; ++cc) {
                const T gam = p.gamma[grp * cg + cc];
                const T* xp = xb + cc * spatial;
                const T* dp = db + cc * spatial;
                for (int64_t q = 0; q < spatial; ++q) {
                    const T dxh = dp[q] * gam;
                    s1 += dxh;
                    s2 += dxh * (xp[q] - m) * is;
                }
            }
            const T inv_m = T(1) / T(slab);
            T* gb = g.d_x.data() + (n * x.c() + grp * cg) * spatial;
            for (int64_t cc = 0; cc < cg; ++cc) {
                const T gam = p.gamma[grp * cg + cc];
                const T* xp = xb + cc * spatial;
                const T* dp = db + cc * spatial;
                T* gp = gb + cc * spatial;
                for (int64_t q = 0; q < spatial; ++q) {
                    const T xhat = (xp[q] - m) * is;
                    gp[q] = is * (dp[q] * gam - inv_m * s1 - xhat * inv_m * s2);
                }
            }
        }
    });
    parallel_for(0, x.c(), [&](int64_t lo, int64_t hi) {
        for (int64_t ch = lo; ch < hi; ++ch) {
            const int64_t grp = ch / cg;
            T dg = T(0), dbta = T(0);
            for (int64_t n = 0; n < x.n(); ++n) {
                const T m = saved.mean(n, grp, 0, 0);
                const T is = saved.inv_std(n, grp, 0, 0);
                const T* xp = x.data() + (n * x.c() + ch) * spatial;
                const T* dp = d_out.data() + (n * x.c() + ch) * spatial;
                for (int64_t q = 0; q < spatial; ++q) {
                    dg += dp[q] * (xp[q] - m) * is;
                    dbta += dp[q];
                }
            }
            g.d_gamma[ch] = dg;
            g.d_beta[ch] = dbta;
        }
    });
    return g;
}

// ------------------------------------------------------------------------
// GELU (tanh form) and its derivative.
// ------------------------------------------------------------------------

namespace detail {
template <typename T>
inline T gelu_scalar(T x) {
    const T s = T(0.7978845608028654); // sqrt(2/pi)
    const T inner = s * (x + T(0.044715) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(inner));
}

template <typename T>
inline T gelu_grad_scalar(T x) {
    const T s = T(0.7978845608028654);
    const T inner = s * (x + T(0.044715) * x * x * x);
    const T t = std::tanh(inner);
    const T sech2 = T(1) - t * t;
    return T(0.5) * (T(1) + t) + T(0.5) * x * sech2 * s * (T(1) + T(0.134145) * x * x);
}
} // namespace detail

template <typename T>
Tensor4<T> gelu(const Tensor4<T>& x) {
    Tensor4<T> out = zeros_like(x);
    parallel_for(0, x.numel(), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) out[i] = detail::gelu_scalar(x[i]);
    });
    return out;
}

template <typename T>
Tensor4<T> gelu_backward(const Tensor4<T>& d_out, const Tensor4<T>& x) {
    if (!d_out.same_shape(x)) {
        throw std::invalid_argument("gelu_backward: gradient shape " + d_out.shape_str() +
                                    " vs input " + x.shape_str());
    }
    Tensor4<T> g = zeros_like(x);
    parallel_for(0, x.numel(), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) g[i] = d_out[i] * detail::gelu_grad_scalar(x[i]);
    });
    return g;
}

// ------------------------------------------------------------------------
// Dropout and drop-path. Masks are pure functions of (stream, index), so
// forward and backward recompute the identical mask with no storage, and
// results do not depend on the parallel split.
// ------------------------------------------------------------------------

namespace detail {
inline void check_rate(double rate, const char* op) {
    if (rate < 0.0 || rate >= 1.0) {
        throw std::invalid_argument(std::string(op) + ": rate " + std::to_string(rate) +
                                    " outside [0, 1)");
    }
}
} // namespace detail

template <typename T>
Tensor4<T> dropout(const Tensor4<T>& x, double rate, const Rng& rng, bool training) {
    detail::check_rate(rate, "dropout");
    if (!training || rate == 0.0) return x;
    const T scale = T(1.0 / (1.0 - rate));
    Tensor4<T> out = zeros_like(x);
    parallel_for(0, x.numel(), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            out[i] = rng.uniform_at(uint64_t(i)) >= rate ? x[i] * scale : T(0);
        }
    });
    return out;
}

template <typename T>
Tensor4<T> dropout_backward(const Tensor4<T>& d_out, double rate, const Rng& rng, bool training) {
    return dropout(d_out, rate, rng, training); // the mask is its own adjoint
}

template <typename T>
Tensor4<T> drop_path(const Tensor4<T>& x, double rate, const Rng& rng, bool training) {
    detail::check_rate(rate, "drop_path");
    if (!training || rate == 0.0) return x;
    const T scale = T(1.0 / (1.0 - rate));
    const int64_t per = x.c() * x.h() * x.w();
    Tensor4<T> out = zeros_like(x);
    parallel_for(0, x.n(), [&](int64_t lo, int64_t hi) {
        for (int64_t n = lo; n < hi; ++n) {
            const bool keep = rng.uniform_at(uint64_t(n)) >= rate;
            if (!keep) continue;
            const T* xp = x.data() + n * per;
            T* op = out.data() + n * per;
            for (int64_t q = 0; q < per; ++q) op[q] = xp[q] * scale;
        }
    });
    return out;
}

template <typename T>
Tensor4<T> drop_path_backward(const Tensor4<T>& d_out, double rate, const Rng& rng,
                              bool training) {
    return drop_path(d_out, rate, rng, training);
}

// ------------------------------------------------------------------------
// Patch embedding: non-overlapping p x p patches, flattened (c, dy, dx)
// row-major, projected to embed_dim channels.
// ------------------------------------------------------------------------

template <typename T>
Tensor4<T> patch_embed(const Tensor4<T>& img, const LinearParams<T>& p, int64_t patch) {
    if (patch < 1) throw std::invalid_argument("patch_embed: patch must be positive");
    if (img.h() % patch != 0 || img.w() % patch != 0) {
        throw std::invalid_argument("patch_embed: spatial " + img.shape_str() +
                                    " not divisible by patch " + std::to_string(patch));
    }
    if (p.c_in() != img.c() * patch * patch) {
        throw std::invalid_argument("patch_embed: weight expects " + std::to_string(p.c_in()) +
                                    " inputs, patches have " +
                                    std::to_string(img.c() * patch * patch));
    }
    const int64_t E = p.c_out();
    const int64_t HO = img.h() / patch, WO = img.w() / patch;
    Tensor4<T> out(img.n(), E, HO, WO);
    parallel_for(0, img.n() * E, [&](int64_t lo, int64_t hi) {
        for (int64_t item = lo; item < hi; ++item) {
            const int64_t e = item % E;
            const int64_t n = item / E;
            const T* wrow = p.weight.data() + e * p.c_in();
            for (int64_t K = 0; K < HO; ++K) {
                for (int64_t L = 0; L < WO; ++L) {
                    T acc = p.bias[e];
                    int64_t idx = 0;
                    for (int64_t c = 0; c < img.c(); ++c)
                        for (int64_t dy = 0; dy < patch; ++dy)
                            for (int64_t dx = 0; dx < patch; ++dx)
                                acc += wrow[idx++] * img(n, c, K * patch + dy, L * patch + dx);
                    out(n, e, K, L) = acc;
                }
            }
        }
    });
    return out;
}

template <typename T>
LinearGrads<T> patch_embed_backward(const Tensor4<T>& d_out, const Tensor4<T>& img,
                                    const LinearParams<T>& p, int64_t patch) {
    if (d_out.c() != p.c_out()) {
        throw std::invalid_argument("patch_embed_backward: gradient channels " +
                                    std::to_string(d_out.c()) + " vs weight rows " +
                                    std::to_string(p.c_out()));
    }
    const int64_t E = p.c_out();
    const int64_t HO = img.h() / patch, WO = img.w() / patch;
    LinearGrads<T> g{zeros_like(img), zeros_like(p.weight), zeros_like(p.bias)};

    // Patches are disjoint, so (n, c) image planes are write-disjoint items.
    parallel_for(0, img.n() * img.c(), [&](int64_t lo, int64_t hi) {
        for (int64_t item = lo; item < hi; ++item) {
            const int64_t c = item % img.c();
            const int64_t n = item / img.c();
            for (int64_t K = 0; K < HO; ++K)
                for (int64_t L = 0; L < WO; ++L)
                    for (int64_t dy = 0; dy < patch; ++dy)
                        for (int64_t dx = 0; dx < patch; ++dx) {
                            const int64_t col = (c * patch + dy) * patch + dx;
                            T acc = T(0);
                            for (int64_t e = 0; e < E; ++e)
                                acc += p.weight[e * p.c_in() + col] * d_out(n, e, K, L);
                            g.d_x(n, c, K * patch + dy, L * patch + dx) = acc;
                        }
        }
    });
    parallel_for(0, E, [&](int64_t lo, int64_t hi) {
        for (int64_t e = lo; e < hi; ++e) {
            T* wrow = g.d_weight.data() + e * p.c_in();
            T db = T(0);
            for (int64_t n = 0; n < img.n(); ++n)
                for (int64_t K = 0; K < HO; ++K)
                    for (int64_t L = 0; L < WO; ++L) {
                        const T go = d_out(n, e, K, L);
                        db += go;
                        int64_t idx = 0;
                        for (int64_t c = 0; c < img.c(); ++c)
                            for (int64_t dy = 0; dy < patch; ++dy)
                                for (int64_t dx = 0; dx < patch; ++dx)
                                    wrow[idx++] += go * img(n, c, K * patch + dy, L * patch + dx);
                    }
            g.d_bias[e] = db;
        }
    });
    return g;
}

// ------------------------------------------------------------------------
// Patch merging: gather 2x2 neighbors into 4C channels (even/even,
// even/odd, odd/even, odd/odd), then project 4C -> 2C.
// ------------------------------------------------------------------------

template <typename T>
Tensor4<T> merge_gather(const Tensor4<T>& x) {
    if (x.h() % 2 != 0 || x.w() % 2 != 0) {
        throw std::invalid_argument("merge_gather: odd spatial extent in " + x.shape_str());
    }
    const int64_t C = x.c(), HO = x.h() / 2, WO = x.w() / 2;
    Tensor4<T> out(x.n(), 4 * C, HO, WO);
    parallel_for(0, x.n() * C, [&](int64_t lo, int64_t hi) {
        for (int64_t item = lo; item < hi; ++item) {
            const int64_t c = item % C;
            const int64_t n = item / C;
            for (int64_t k = 0; k < HO; ++k)
                for (int64_t l = 0; l < WO; ++l) {
                    out(n, c, k, l) = x(n, c, 2 * k, 2 * l);
                    out(n, C + c, k, l) = x(n, c, 2 * k, 2 * l + 1);
                    out(n, 2 * C + c, k, l) = x(n, c, 2 * k + 1, 2 * l);
                    out(n, 3 * C + c, k, l) = x(n, c, 2 * k + 1, 2 * l + 1);
                }
        }
    });
    return out;
}

template <typename T>
Tensor4<T> merge_scatter(const Tensor4<T>& g) {
    if (g.c() % 4 != 0) {
        throw std::invalid_argument("merge_scatter: channels not a multiple of 4 in " +
                                    g.shape_str());
    }
    const int64_t C = g.c() / 4, HO = g.h(), WO = g.w();
    Tensor4<T> out(g.n(), C, 2 * HO, 2 * WO);
    parallel_for(0, g.n() * C, [&](int64_t lo, int64_t hi) {
        for (int64_t item = lo; item < hi; ++item) {
            const int64_t c = item % C;
            const int64_t n = item / C;
            for (int64_t k = 0; k < HO; ++k)
                for (int64_t l = 0; l < WO; ++l) {
                    out(n, c, 2 * k, 2 * l) = g(n, c, k, l);
                    out(n, c, 2 * k, 2 * l + 1) = g(n, C + c, k, l);
                    out(n, c, 2 * k + 1, 2 * l) = g(n, 2 * C + c, k, l);
                    out(n, c, 2 * k + 1, 2 * l + 1) = g(n, 3 * C + c, k, l);
                }
        }
    });
    return out;
}

template <typename T>
Tensor4<T> patch_merge(const Tensor4<T>& x, const LinearParams<T>& p) {
    if (p.c_in() != 4 * x.c()) {
        throw std::invalid_argument("patch_merge: weight expects " + std::to_string(p.c_in()) +
                                    " channels, gathered input has " + std::to_string(4 * x.c()));
    }
    return channel_mlp(merge_gather(x), p);
}

template <typename T>
LinearGrads<T> patch_merge_backward(const Tensor4<T>& d_out, const Tensor4<T>& x,
                                    const LinearParams<T>& p) {
    Tensor4<T> gathered = merge_gather(x);
    LinearGrads<T> lin = channel_mlp_backward(d_out, gathered, p);
    return LinearGrads<T>{merge_scatter(lin.d_x), std::move(lin.d_weight),
                          std::move(lin.d_bias)};
}

} // namespace lifmixer

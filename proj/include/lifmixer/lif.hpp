#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lifmixer/parallel.hpp"
#include "lifmixer/rng.hpp"
#include "lifmixer/tensor.hpp"

namespace lifmixer {

// Full-precision leaky integrate-and-fire token mixing.
//
// A chain of inputs y_1..y_T is folded through the membrane recurrence
//
//     u_1     = y_1
//     o_t     = [u_t > v_th]
//     r_t     = max(u_t, v_th)
//     u_{t+1} = tau * u_t * (1 - o_t) + y_{t+1}
//
// so a value above threshold passes through unchanged (and resets the
// membrane), while a sub-threshold value is clamped to v_th and its
// membrane leaks into the next position. Chains run along H (Vertical)
// or W (Horizontal), in consecutive blocks of `groups` positions; the
// final block of an axis not divisible by `groups` is simply shorter.

enum class LifDirection { Vertical, Horizontal };

inline const char* direction_name(LifDirection d) {
    return d == LifDirection::Vertical ? "vertical" : "horizontal";
}

template <typename T>
struct LifParams {
    T tau = T(0.25);
    T v_th = T(0.25);
    bool tau_learnable = true;
    bool vth_learnable = true;
};

struct LifConfig {
    LifDirection direction = LifDirection::Vertical;
    int64_t groups = 4;
};

// Per-step membrane potentials and fire masks recorded by the forward
// pass; each element of `u`/`o` sits at the same coordinate as the input
// element of its step.
template <typename T>
struct LifSaved {
    Tensor4<T> u;
    Tensor4<T> o;
    LifConfig cfg;
    LifParams<T> params;
};

template <typename T>
struct LifGrads {
    Tensor4<T> d_input;
    T d_tau = T(0);
    T d_vth = T(0);
};

template <typename T>
struct LifForwardResult {
    Tensor4<T> r;
    LifSaved<T> saved;
};

namespace detail {

template <typename T>
void check_finite_input(const Tensor4<T>& x, const char* op) {
    const int64_t bad = first_nonfinite(x);
    if (bad >= 0) {
        const int64_t w = x.w(), h = x.h(), c = x.c();
        const int64_t l = bad % w;
        const int64_t k = (bad / w) % h;
        const int64_t j = (bad / (w * h)) % c;
        const int64_t i = bad / (w * h * c);
        std::ostringstream os;
        os << op << ": non-finite input at flat index " << bad << " = (" << i << "," << j << ","
           << k << "," << l << ")";
        throw std::invalid_argument(os.str());
    }
}

template <typename T>
int64_t chained_extent(const Tensor4<T>& x, LifDirection d) {
    return d == LifDirection::Vertical ? x.h() : x.w();
}

} // namespace detail

// -------------------------------------------------------------------------
// Reference oracles. Plain single-chain loops kept deliberately separate
// from the vectorized kernels they certify.
// -------------------------------------------------------------------------

template <typename T>
struct LifChainTrace {
    std::vector<T> r;
    std::vector<T> u;
    std::vector<uint8_t> o;
};

template <typename T>
LifChainTrace<T> lif_oracle_scalar(const std::vector<T>& chain, T tau, T v_th) {
    if (chain.empty()) throw std::invalid_argument("lif_oracle_scalar: empty chain");
    LifChainTrace<T> out;
    const size_t len = chain.size();
    out.r.resize(len);
    out.u.resize(len);
    out.o.resize(len);
    T u = T(0);
    T o = T(0);
    for (size_t t = 0; t < len; ++t) {
        u = (t == 0) ? chain[0] : tau * u * (T(1) - o) + chain[t];
        o = u > v_th ? T(1) : T(0);
        out.u[t] = u;
        out.o[t] = static_cast<uint8_t>(o);
        out.r[t] = u > v_th ? u : v_th;
    }
    return out;
}

// The classical binary variant: same membrane recurrence, but the emitted
// output is the spike train itself.
template <typename T>
std::vector<uint8_t> lif_classical_binary(const std::vector<T>& chain, T tau, T v_th) {
    return lif_oracle_scalar(chain, tau, v_th).o;
}

// -------------------------------------------------------------------------
// Vectorized forward / backward over rank-4 tensors.
// -------------------------------------------------------------------------

template <typename T>
LifForwardResult<T> lif_forward(const Tensor4<T>& x, const LifParams<T>& params,
                                const LifConfig& cfg) {
    if (cfg.groups < 1) throw std::invalid_argument("lif_forward: groups must be >= 1");
    detail::check_finite_input(x, "lif_forward");

    LifForwardResult<T> res;
    res.r = zeros_like(x);
    res.saved.u = zeros_like(x);
    res.saved.o = zeros_like(x);
    res.saved.cfg = cfg;
    res.saved.params = params;
    if (x.numel() == 0) return res;

    const Axis axis = cfg.direction == LifDirection::Vertical ? Axis::H : Axis::W;
    const int64_t extent = detail::chained_extent(x, cfg.direction);
    if (extent == 0) return res;
    const int64_t g = cfg.groups;
    const int64_t num_blocks = (extent + g - 1) / g;
    const T tau = params.tau;
    const T v_th = params.v_th;

    // One work item per (n, c, block); the cross axis vectorizes inside.
    Tensor4<T>& r = res.r;
    Tensor4<T>& u_sav = res.saved.u;
    Tensor4<T>& o_sav = res.saved.o;
    // AxisBlockView is over the (conceptually const) input; kernels only read it.
    auto& x_mut = const_cast<Tensor4<T>&>(x);

    const int64_t items = x.n() * x.c() * num_blocks;
    parallel_for(0, items, [&](int64_t lo, int64_t hi) {
        for (int64_t item = lo; item < hi; ++item) {
            const int64_t b = item % num_blocks;
            const int64_t nc = item / num_blocks;
            const int64_t cc = nc % x.c();
            const int64_t nn = nc / x.c();
            const int64_t start = b * g;
            const int64_t len = std::min(g, extent - start);
            AxisBlockView<T> vx(x_mut, axis, start, len);
            AxisBlockView<T> vr(r, axis, start, len);
            AxisBlockView<T> vu(u_sav, axis, start, len);
            AxisBlockView<T> vo(o_sav, axis, start, len);
            const int64_t cross = vx.cross_extent();
            for (int64_t t = 0; t < len; ++t) {
                for (int64_t q = 0; q < cross; ++q) {
                    const T y = vx.at(nn, cc, t, q);
                    T u;
                    if (t == 0) {
                        u = y;
                    } else {
                        const T u_prev = vu.at(nn, cc, t - 1, q);
                        const T o_prev = vo.at(nn, cc, t - 1, q);
                        u = tau * u_prev * (T(1) - o_prev) + y;
                    }
                    const T o = u > v_th ? T(1) : T(0);
                    vu.at(nn, cc, t, q) = u;
                    vo.at(nn, cc, t, q) = o;
                    vr.at(nn, cc, t, q) = u > v_th ? u : v_th;
                }
            }
        }
    });
    return res;
}

// Reverse-mode gradients. The fire mask is treated as locally constant:
// dr_t/du_t = o_t, dr_t/dv_th = 1 - o_t, du_{t+1}/du_t = tau * (1 - o_t).
// Per chain the membrane gradient obeys
//     gu_T = d_r[T] * o_T
//     gu_t = d_r[t] * o_t + gu_{t+1} * tau * (1 - o_t)
// with d_input[t] = gu_t, d_tau += gu_{t+1} * u_t * (1 - o_t) for t < T,
// and d_vth += d_r[t] * (1 - o_t). Scalar gradients accumulate per chain
// in forward step order; per-chain partials combine in chain-index order,
// so results are bit-stable across runs and thread counts.
template <typename T>
LifGrads<T> lif_backward(const Tensor4<T>& d_r, const LifSaved<T>& saved) {
    if (!d_r.same_shape(saved.u)) {
        throw std::invalid_argument("lif_backward: upstream gradient shape " + d_r.shape_str() +
                                    " does not match forward shape " + saved.u.shape_str());
    }
    LifGrads<T> grads;
    grads.d_input = zeros_like(d_r);
    if (d_r.numel() == 0) return grads;

    const LifConfig& cfg = saved.cfg;
    const Axis axis = cfg.direction == LifDirection::Vertical ? Axis::H : Axis::W;
    const int64_t extent = detail::chained_extent(d_r, cfg.direction);
    if (extent == 0) return grads;
    const int64_t g = cfg.groups;
    const int64_t num_blocks = (extent + g - 1) / g;
    const T tau = saved.params.tau;

    auto& dr_mut = const_cast<Tensor4<T>&>(d_r);
    auto& u_mut = const_cast<Tensor4<T>&>(saved.u);
    auto& o_mut = const_cast<Tensor4<T>&>(saved.o);

    const int64_t items = d_r.n() * d_r.c() * num_blocks;
    std::vector<T> tau_partial(static_cast<size_t>(items), T(0));
    std::vector<T> vth_partial(static_cast<size_t>(items), T(0));

    parallel_for(0, items, [&](int64_t lo, int64_t hi) {
        for (int64_t item = lo; item < hi; ++item) {
            const int64_t b = item % num_blocks;
            const int64_t nc = item / num_blocks;
            const int64_t cc = nc % d_r.c();
            const int64_t nn = nc / d_r.c();
            const int64_t start = b * g;
            const int64_t len = std::min(g, extent - start);
            AxisBlockView<T> vdr(dr_mut, axis, start, len);
            AxisBlockView<T> vu(u_mut, axis, start, len);
            AxisBlockView<T> vo(o_mut, axis, start, len);
            AxisBlockView<T> vg(grads.d_input, axis, start, len);
            const int64_t cross = vdr.cross_extent();

            // Membrane gradients, reverse sweep.
            for (int64_t q = 0; q < cross; ++q) {
                T gnext = T(0);
                for (int64_t t = len - 1; t >= 0; --t) {
                    const T o = vo.at(nn, cc, t, q);
                    const T gu = vdr.at(nn, cc, t, q) * o + gnext * tau * (T(1) - o);
                    vg.at(nn, cc, t, q) = gu;
                    gnext = gu;
                }
            }
            // Scalar accumulations, forward step order per chain.
            T acc_tau = T(0);
            T acc_vth = T(0);
            for (int64_t q = 0; q < cross; ++q) {
                for (int64_t t = 0; t < len; ++t) {
                    const T o = vo.at(nn, cc, t, q);
                    if (t + 1 < len) {
                        acc_tau += vg.at(nn, cc, t + 1, q) * vu.at(nn, cc, t, q) * (T(1) - o);
                    }
                    acc_vth += vdr.at(nn, cc, t, q) * (T(1) - o);
                }
            }
            tau_partial[static_cast<size_t>(item)] = acc_tau;
            vth_partial[static_cast<size_t>(item)] = acc_vth;
        }
    });

    T d_tau = T(0);
    T d_vth = T(0);
    for (int64_t i = 0; i < items; ++i) {
        d_tau += tau_partial[static_cast<size_t>(i)];
        d_vth += vth_partial[static_cast<size_t>(i)];
    }
    grads.d_tau = d_tau;
    grads.d_vth = d_vth;
    return grads;
}

// -------------------------------------------------------------------------
// Finite-difference certification of the backward pass (f64 only).
// -------------------------------------------------------------------------

struct LifCheckReport {
    double err_input = 0.0;
    double err_tau = 0.0;
    double err_vth = 0.0;
    int resamples = 0;
    bool pass(double gate) const {
        return err_input < gate && err_tau < gate && err_vth < gate;
    }
    double max_err() const {
        double m = err_input > err_tau ? err_input : err_tau;
        return err_vth > m ? err_vth : m;
    }
};

struct LifCheckOptions {
    double margin = 1e-3;     // keep every membrane this far from v_th
    double fd_step = 1e-6;
    int max_resamples = 1000;
    double fault = 0.0;       // test hook: added to one analytic gradient entry
};

namespace detail {

inline double rel_err(double a, double b) {
    double scale = std::abs(a) > std::abs(b) ? std::abs(a) : std::abs(b);
    if (scale < 1.0) scale = 1.0;
    return std::abs(a - b) / scale;
}

// True when every membrane value of every chain stays at least `margin`
// away from the fire threshold.
inline bool margin_ok(const LifSaved<double>& saved, double v_th, double margin) {
    for (int64_t i = 0; i < saved.u.numel(); ++i) {
        if (std::abs(saved.u[i] - v_th) < margin) return false;
    }
    return true;
}

} // namespace detail

// Draws a random input whose whole membrane trace respects the threshold
// margin (resampling chain by chain), then compares lif_backward against
// central finite differences of the scalar loss sum(weights * r).
inline LifCheckReport lif_forward_backward_check(int64_t n, int64_t c, int64_t h, int64_t w,
                                                 const LifConfig& cfg, uint64_t seed,
                                                 const LifParams<double>& params = {},
                                                 const LifCheckOptions& opt = {}) {
    Rng rng = Rng(seed).fork("lif-gradcheck");
    Tensor4<double> x(n, c, h, w);
    Rng draw = rng.fork("input");
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = draw.uniform(-1.0, 1.0);

    LifCheckReport report;
    LifForwardResult<double> fwd = lif_forward(x, params, cfg);
    while (!detail::margin_ok(fwd.saved, params.v_th, opt.margin)) {
        if (++report.resamples > opt.max_resamples) {
            throw std::runtime_error(
                "lif_forward_backward_check: no margin-respecting sample after " +
                std::to_string(opt.max_resamples) + " resamples (margin " +
                std::to_string(opt.margin) + ")");
        }
        // Redraw only the offending chains' inputs: perturbing any element of a
        // chain reshapes that chain's whole trace, so redraw per flat element
        // of chains that violate.
        Rng redraw = rng.fork("resample").fork(static_cast<uint64_t>(report.resamples));
        for (int64_t i = 0; i < x.numel(); ++i) {
            if (std::abs(fwd.saved.u[i] - params.v_th) < opt.margin) {
                x[i] = redraw.uniform(-1.0, 1.0);
            }
        }
        fwd = lif_forward(x, params, cfg);
    }

    Tensor4<double> weights = zeros_like(x);
    Rng wdraw = rng.fork("weights");
    for (int64_t i = 0; i < weights.numel(); ++i) weights[i] = wdraw.uniform(-1.0, 1.0);

    LifGrads<double> grads = lif_backward(weights, fwd.saved);
    if (opt.fault != 0.0 && grads.d_input.numel() > 0) {
        grads.d_input[0] += opt.fault;
        grads.d_tau += opt.fault;
    }

    auto loss_at = [&](const Tensor4<double>& input, double tau, double v_th) {
        LifParams<double> p = params;
        p.tau = tau;
        p.v_th = v_th;
        LifForwardResult<double> f = lif_forward(input, p, cfg);
        double acc = 0.0;
        for (int64_t i = 0; i < f.r.numel(); ++i) acc += weights[i] * f.r[i];
        return acc;
    };

    const double hstep = opt.fd_step;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double orig = x[i];
        x[i] = orig + hstep;
        const double up = loss_at(x, params.tau, params.v_th);
        x[i] = orig - hstep;
        const double dn = loss_at(x, params.tau, params.v_th);
        x[i] = orig;
        const double fd = (up - dn) / (2.0 * hstep);
        const double e = detail::rel_err(grads.d_input[i], fd);
        if (e > report.err_input) report.err_input = e;
    }
    {
        const double up = loss_at(x, params.tau + hstep, params.v_th);
        const double dn = loss_at(x, params.tau - hstep, params.v_th);
        report.err_tau = detail::rel_err(grads.d_tau, (up - dn) / (2.0 * hstep));
    }
    {
        const double up = loss_at(x, params.tau, params.v_th + hstep);
        const double dn = loss_at(x, params.tau, params.v_th - hstep);
        report.err_vth = detail::rel_err(grads.d_vth, (up - dn) / (2.0 * hstep));
    }
    return report;
}

} // namespace lifmixer

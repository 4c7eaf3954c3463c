#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lifmixer/layers.hpp"
#include "lifmixer/lif.hpp"
#include "lifmixer/model.hpp"
#include "lifmixer/rng.hpp"
#include "lifmixer/tensor.hpp"

// Finite-difference certification for every layer's handwritten adjoint.
// All checks run in real64 on small random shapes; each perturbs one scalar
// at a time and compares the central difference of a weighted-sum loss
// against the analytic gradient.

namespace lifmixer {

struct CheckResult {
    std::string name;
    double err = 0.0;
};

namespace detail {

// Central difference of loss() with respect to every element of `param`,
// compared against `analytic`; returns the worst relative error.
inline double fd_max_rel_err(const std::function<double()>& loss, Tensor4<double>& param,
                             const Tensor4<double>& analytic, double step = 1e-6) {
    double worst = 0.0;
    for (int64_t i = 0; i < param.numel(); ++i) {
        const double orig = param[i];
        param[i] = orig + step;
        const double up = loss();
        param[i] = orig - step;
        const double dn = loss();
        param[i] = orig;
        const double fd = (up - dn) / (2.0 * step);
        const double e = rel_err(analytic[i], fd);
        if (e > worst) worst = e;
    }
    return worst;
}

inline Tensor4<double> draw(int64_t n, int64_t c, int64_t h, int64_t w, Rng rng,
                            double lo = -1.0, double hi = 1.0) {
    Tensor4<double> t(n, c, h, w);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

inline double weighted_sum(const Tensor4<double>& out, const Tensor4<double>& w) {
    double acc = 0.0;
    for (int64_t i = 0; i < out.numel(); ++i) acc += out[i] * w[i];
    return acc;
}

} // namespace detail

inline CheckResult check_channel_mlp(uint64_t seed, double fault = 0.0) {
    Rng rng = Rng(seed).fork("check-channel-mlp");
    Tensor4<double> x = detail::draw(2, 3, 4, 5, rng.fork("x"));
    LinearParams<double> p = make_linear<double>(4, 3, rng.fork("p"));
    for (int64_t i = 0; i < p.bias.numel(); ++i) p.bias[i] = rng.uniform(-0.1, 0.1);
    Tensor4<double> w = detail::draw(2, 4, 4, 5, rng.fork("w"));

    LinearGrads<double> g = channel_mlp_backward(w, x, p);
    g.d_x[0] += fault;
    auto loss = [&]() { return detail::weighted_sum(channel_mlp(x, p), w); };
    double err = detail::fd_max_rel_err(loss, x, g.d_x);
    err = std::max(err, detail::fd_max_rel_err(loss, p.weight, g.d_weight));
    err = std::max(err, detail::fd_max_rel_err(loss, p.bias, g.d_bias));
    return {"channel_mlp", err};
}

inline CheckResult check_dwconv3x3(uint64_t seed, double fault = 0.0) {
    Rng rng = Rng(seed).fork("check-dwconv");
    Tensor4<double> x = detail::draw(2, 3, 5, 4, rng.fork("x"));
    DwConvParams<double> p = make_dwconv<double>(3, rng.fork("p"));
    for (int64_t i = 0; i < p.bias.numel(); ++i) p.bias[i] = rng.uniform(-0.1, 0.1);
    Tensor4<double> w = detail::draw(2, 3, 5, 4, rng.fork("w"));

    DwConvGrads<double> g = dwconv3x3_backward(w, x, p);
    g.d_x[0] += fault;
    auto loss = [&]() { return detail::weighted_sum(dwconv3x3(x, p), w); };
    double err = detail::fd_max_rel_err(loss, x, g.d_x);
    err = std::max(err, detail::fd_max_rel_err(loss, p.kernel, g.d_kernel));
    err = std::max(err, detail::fd_max_rel_err(loss, p.bias, g.d_bias));
    return {"dwconv3x3", err};
}

inline CheckResult check_group_norm(uint64_t seed, double fault = 0.0) {
    Rng rng = Rng(seed).fork("check-group-norm");
    Tensor4<double> x = detail::draw(2, 6, 4, 3, rng.fork("x"));
    GroupNormParams<double> p = make_group_norm<double>(6, 3);
    for (int64_t i = 0; i < 6; ++i) {
        p.gamma[i] = rng.uniform(0.5, 1.5);
        p.beta[i] = rng.uniform(-0.5, 0.5);
    }
    Tensor4<double> w = detail::draw(2, 6, 4, 3, rng.fork("w"));

    GroupNormSaved<double> saved;
    group_norm(x, p, &saved);
    GroupNormGrads<double> g = group_norm_backward(w, x, p, saved);
    g.d_x[0] += fault;
    auto loss = [&]() { return detail::weighted_sum(group_norm(x, p), w); };
    double err = detail::fd_max_rel_err(loss, x, g.d_x);
    err = std::max(err, detail::fd_max_rel_err(loss, p.gamma, g.d_gamma));
    err = std::max(err, detail::fd_max_rel_err(loss, p.beta, g.d_beta));
    return {"group_norm", err};
}

inline CheckResult check_gelu(uint64_t seed, double fault = 0.0) {
    Rng rng = Rng(seed).fork("check-gelu");
    Tensor4<double> x = detail::draw(1, 2, 6, 6, rng.fork("x"), -3.0, 3.0);
    // Keep samples away from the origin where the finite difference itself
    // is least accurate.
    Rng re = rng.fork("re");
    for (int64_t i = 0; i < x.numel(); ++i) {
        while (std::abs(x[i]) < 1e-3) x[i] = re.uniform(-3.0, 3.0);
    }
    Tensor4<double> w = detail::draw(1, 2, 6, 6, rng.fork("w"));
    Tensor4<double> g = gelu_backward(w, x);
    g[0] += fault;
    auto loss = [&]() { return detail::weighted_sum(gelu(x), w); };
    return {"gelu", detail::fd_max_rel_err(loss, x, g)};
}

inline CheckResult check_dropout(uint64_t seed, double fault = 0.0) {
    Rng rng = Rng(seed).fork("check-dropout");
    Tensor4<double> x = detail::draw(2, 3, 4, 4, rng.fork("x"));
    Tensor4<double> w = detail::draw(2, 3, 4, 4, rng.fork("w"));
    Rng mask = rng.fork("mask");
    Tensor4<double> g = dropout_backward(w, 0.3, mask, true);
    g[0] += fault;
    auto loss = [&]() { return detail::weighted_sum(dropout(x, 0.3, mask, true), w); };
    return {"dropout", detail::fd_max_rel_err(loss, x, g)};
}

inline CheckResult check_drop_path(uint64_t seed, double fault = 0.0) {
    Rng rng = Rng(seed).fork("check-drop-path");
    Tensor4<double> x = detail::draw(4, 2, 3, 3, rng.fork("x"));
    Tensor4<double> w = detail::draw(4, 2, 3, 3, rng.fork("w"));
    Rng mask = rng.fork("mask");
    Tensor4<double> g = drop_path_backward(w, 0.4, mask, true);
    g[0] += fault;
    auto loss = [&]() { return detail::weighted_sum(drop_path(x, 0.4, mask, true), w); };
    return {"drop_path", detail::fd_max_rel_err(loss, x, g)};
}

inline CheckResult check_patch_embed(uint64_t seed, double fault = 0.0) {
    Rng rng = Rng(seed).fork("check-patch-embed");
    Tensor4<double> img = detail::draw(2, 3, 8, 8, rng.fork("x"));
    LinearParams<double> p = make_linear<double>(5, 3 * 4 * 4, rng.fork("p"));
    Tensor4<double> w = detail::draw(2, 5, 2, 2, rng.fork("w"));
    LinearGrads<double> g = patch_embed_backward(w, img, p, 4);
    g.d_x[0] += fault;
    auto loss = [&]() { return detail::weighted_sum(patch_embed(img, p, 4), w); };
    double err = detail::fd_max_rel_err(loss, img, g.d_x);
    err = std::max(err, detail::fd_max_rel_err(loss, p.weight, g.d_weight));
    err = std::max(err, detail::fd_max_rel_err(loss, p.bias, g.d_bias));
    return {"patch_embed", err};
}

inline CheckResult check_patch_merge(uint64_t seed, double fault = 0.0) {
    Rng rng = Rng(seed).fork("check-patch-merge");
    Tensor4<double> x = detail::draw(1, 6, 4, 4, rng.fork("x"));
    LinearParams<double> p = make_linear<double>(12, 24, rng.fork("p"));
    Tensor4<double> w = detail::draw(1, 12, 2, 2, rng.fork("w"));
    LinearGrads<double> g = patch_merge_backward(w, x, p);
    g.d_x[0] += fault;
    auto loss = [&]() { return detail::weighted_sum(patch_merge(x, p), w); };
    double err = detail::fd_max_rel_err(loss, x, g.d_x);
    err = std::max(err, detail::fd_max_rel_err(loss, p.weight, g.d_weight));
    err = std::max(err, detail::fd_max_rel_err(loss, p.bias, g.d_bias));
    return {"patch_merge", err};
}

inline CheckResult check_lif(uint64_t seed, LifDirection dir, double fault = 0.0) {
    LifCheckOptions opt;
    opt.fault = fault;
    LifCheckReport rep =
        lif_forward_backward_check(2, 2, 6, 5, {dir, 4}, seed, LifParams<double>{}, opt);
    return {dir == LifDirection::Vertical ? "lif_vertical" : "lif_horizontal", rep.max_err()};
}

inline CheckResult check_mlp_block(uint64_t seed, double fault = 0.0) {
    Rng rng = Rng(seed).fork("check-mlp-block");
    Tensor4<double> x = detail::draw(1, 3, 4, 4, rng.fork("x"));
    MlpModuleParams<double> p;
    p.fc1 = make_linear<double>(12, 3, rng.fork("fc1"));
    p.fc2 = make_linear<double>(3, 12, rng.fork("fc2"));
    Tensor4<double> w = detail::draw(1, 3, 4, 4, rng.fork("w"));
    const Rng mask = rng.fork("mask");

    MlpModuleTape<double> tape;
    mlp_block_forward(x, p, 0.1, mask, true, &tape);
    MlpModuleParams<double> g{
        LinearParams<double>{zeros_like(p.fc1.weight), zeros_like(p.fc1.bias)},
        LinearParams<double>{zeros_like(p.fc2.weight), zeros_like(p.fc2.bias)}};
    Tensor4<double> d_x = mlp_block_backward(w, p, tape, 0.1, mask, true, g);
    d_x[0] += fault;
    auto loss = [&]() {
        return detail::weighted_sum(mlp_block_forward<double>(x, p, 0.1, mask, true, nullptr), w);
    };
    double err = detail::fd_max_rel_err(loss, x, d_x);
    err = std::max(err, detail::fd_max_rel_err(loss, p.fc1.weight, g.fc1.weight));
    err = std::max(err, detail::fd_max_rel_err(loss, p.fc2.weight, g.fc2.weight));
    err = std::max(err, detail::fd_max_rel_err(loss, p.fc1.bias, g.fc1.bias));
    err = std::max(err, detail::fd_max_rel_err(loss, p.fc2.bias, g.fc2.bias));
    return {"mlp_block", err};
}

// Composed token-mixing module: input gradient against finite differences,
// resampling until every internal membrane sits clear of the fire
// threshold. Composition noise makes the pass gate 1e-4 rather than the
// single-layer 1e-5.
inline CheckResult check_lif_module(uint64_t seed, double fault = 0.0) {
    Rng rng = Rng(seed).fork("check-lif-module");
    const int64_t C = 4;
    ModelConfig cfg = ModelConfig::toy();
    Rng init = rng.fork("init");
    LifModuleParams<double> p;
    p.proj1 = make_linear<double>(C, C, init.fork("proj1"));
    p.norm1 = make_group_norm<double>(C, 1);
    p.dwconv = make_dwconv<double>(C, init.fork("dwconv"));
    p.norm2 = make_group_norm<double>(C, 1);
    p.vtau = detail::draw(1, 1, 1, 1, init.fork("vt"), 0.2, 0.3);
    p.vvth = detail::draw(1, 1, 1, 1, init.fork("vv"), 0.2, 0.3);
    p.htau = detail::draw(1, 1, 1, 1, init.fork("ht"), 0.2, 0.3);
    p.hvth = detail::draw(1, 1, 1, 1, init.fork("hv"), 0.2, 0.3);
    p.proj_v = make_linear<double>(C, C, init.fork("proj_v"));
    p.proj_h = make_linear<double>(C, C, init.fork("proj_h"));
    p.norm3 = make_group_norm<double>(C, 1);
    p.proj_out = make_linear<double>(C, C, init.fork("proj_out"));

    Tensor4<double> x = detail::draw(1, C, 8, 8, rng.fork("x"));
    const double margin = 1e-3;
    LifModuleTape<double> tape;
    for (int attempt = 0; attempt < 200; ++attempt) {
        lif_module_forward(x, p, cfg.groups, &tape);
        const bool ok =
            detail::margin_ok(tape.vsaved, p.vvth[0], margin) &&
            detail::margin_ok(tape.hsaved, p.hvth[0], margin);
        if (ok) break;
        Rng re = rng.fork("resample").fork(uint64_t(attempt));
        for (int64_t i = 0; i < x.numel(); ++i) x[i] = re.uniform(-1.0, 1.0);
        if (attempt == 199) {
            throw std::runtime_error("check_lif_module: no margin-clean sample found");
        }
    }
    Tensor4<double> w = detail::draw(1, C, 8, 8, rng.fork("w"));
    LifModuleParams<double> g;
    g.proj1 = LinearParams<double>{zeros_like(p.proj1.weight), zeros_like(p.proj1.bias)};
    g.norm1 = GroupNormParams<double>{1, zeros_like(p.norm1.gamma), zeros_like(p.norm1.beta),
                                      p.norm1.epsilon};
    g.dwconv = DwConvParams<double>{zeros_like(p.dwconv.kernel), zeros_like(p.dwconv.bias)};
    g.norm2 = GroupNormParams<double>{1, zeros_like(p.norm2.gamma), zeros_like(p.norm2.beta),
                                      p.norm2.epsilon};
    g.vtau = zeros_like(p.vtau);
    g.vvth = zeros_like(p.vvth);
    g.htau = zeros_like(p.htau);
    g.hvth = zeros_like(p.hvth);
    g.proj_v = LinearParams<double>{zeros_like(p.proj_v.weight), zeros_like(p.proj_v.bias)};
    g.proj_h = LinearParams<double>{zeros_like(p.proj_h.weight), zeros_like(p.proj_h.bias)};
    g.norm3 = GroupNormParams<double>{1, zeros_like(p.norm3.gamma), zeros_like(p.norm3.beta),
                                      p.norm3.epsilon};
    g.proj_out = LinearParams<double>{zeros_like(p.proj_out.weight), zeros_like(p.proj_out.bias)};

    Tensor4<double> d_x = lif_module_backward(w, p, tape, g);
    d_x[0] += fault;
    auto loss = [&]() {
        return detail::weighted_sum(lif_module_forward<double>(x, p, cfg.groups, nullptr), w);
    };
    return {"lif_module", detail::fd_max_rel_err(loss, x, d_x)};
}

// Every individual layer, one line each. `fault` perturbs the analytic
// gradient and must make every check fail; it exists so the checker itself
// can be shown to catch wrong gradients.
inline std::vector<CheckResult> run_layer_gradchecks(uint64_t seed, double fault = 0.0) {
    return {
        check_channel_mlp(seed, fault),  check_dwconv3x3(seed, fault),
        check_group_norm(seed, fault),   check_gelu(seed, fault),
        check_dropout(seed, fault),      check_drop_path(seed, fault),
        check_patch_embed(seed, fault),  check_patch_merge(seed, fault),
        check_lif(seed, LifDirection::Vertical, fault),
        check_lif(seed, LifDirection::Horizontal, fault),
        check_mlp_block(seed, fault),
    };
}

} // namespace lifmixer

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lifmixer/layers.hpp"
#include "lifmixer/lif.hpp"
#include "lifmixer/rng.hpp"
#include "lifmixer/tensor.hpp"

// The four-stage backbone: patch embedding, stages of [token-mixing block +
// channel-MLP block] with additive residuals and drop-path, patch merging
// between stages, and a group-norm / average-pool / linear head.

namespace lifmixer {

struct ModelConfig {
    int64_t patch = 4;
    int64_t embed_dim = 96;
    std::array<int64_t, 4> depths{2, 2, 6, 2};
    int64_t groups = 4;       // LIF chain length along each axis
    double mlp_ratio = 4.0;
    int64_t num_classes = 1000;
    double drop_path = 0.1;   // peak rate; scaled linearly over block depth
    double dropout = 0.0;
    int64_t norm_groups = 1;
    double tau_init = 0.25;
    double vth_init = 0.25;

    int64_t stage_width(int64_t s) const { return embed_dim << s; }
    int64_t total_blocks() const { return depths[0] + depths[1] + depths[2] + depths[3]; }

    static ModelConfig tiny() { return {}; }
    static ModelConfig small() {
        ModelConfig c;
        c.depths = {2, 2, 18, 2};
        return c;
    }
    static ModelConfig base() {
        ModelConfig c;
        c.embed_dim = 128;
        c.depths = {2, 2, 18, 2};
        return c;
    }
    // Desk-scale configuration used by the training checks.
    static ModelConfig toy() {
        ModelConfig c;
        c.embed_dim = 32;
        c.depths = {1, 1, 2, 1};
        c.num_classes = 3;
        c.drop_path = 0.0;
        return c;
    }
};

// ------------------------------------------------------------------------
// Parameters. LIF scalars are 1x1x1x1 tensors so every learnable value
// lives in a named rank-4 tensor.
// ------------------------------------------------------------------------

template <typename T>
struct LifModuleParams {
    LinearParams<T> proj1;
    GroupNormParams<T> norm1;
    DwConvParams<T> dwconv;
    GroupNormParams<T> norm2;
    Tensor4<T> vtau, vvth; // vertical-chain LIF scalars
    Tensor4<T> htau, hvth; // horizontal-chain LIF scalars
    LinearParams<T> proj_v, proj_h;
    GroupNormParams<T> norm3;
    LinearParams<T> proj_out;
};

template <typename T>
struct MlpModuleParams {
    LinearParams<T> fc1, fc2;
};

template <typename T>
struct BlockParams {
    LifModuleParams<T> lif;
    MlpModuleParams<T> mlp;
};

template <typename T>
struct ModelParams {
    ModelConfig cfg;
    LinearParams<T> embed;
    std::vector<std::vector<BlockParams<T>>> stages;
    std::vector<LinearParams<T>> merges; // between stages 0->1, 1->2, 2->3
    GroupNormParams<T> head_norm;
    LinearParams<T> head;
};

namespace detail {

template <typename T>
Tensor4<T> scalar_tensor(T v) {
    Tensor4<T> t(1, 1, 1, 1);
    t[0] = v;
    return t;
}

} // namespace detail

template <typename T>
ModelParams<T> make_model(const ModelConfig& cfg, uint64_t seed) {
    Rng root = Rng(seed).fork("model-init");
    ModelParams<T> m;
    m.cfg = cfg;
    m.embed = make_linear<T>(cfg.embed_dim, 3 * cfg.patch * cfg.patch, root.fork("embed"));
    m.stages.resize(4);
    for (int64_t s = 0; s < 4; ++s) {
        const int64_t C = cfg.stage_width(s);
        const int64_t hidden = int64_t(cfg.mlp_ratio * double(C));
        for (int64_t b = 0; b < cfg.depths[size_t(s)]; ++b) {
            Rng br = root.fork(uint64_t(s * 1024 + b));
            BlockParams<T> blk;
            blk.lif.proj1 = make_linear<T>(C, C, br.fork("proj1"));
            blk.lif.norm1 = make_group_norm<T>(C, cfg.norm_groups);
            blk.lif.dwconv = make_dwconv<T>(C, br.fork("dwconv"));
            blk.lif.norm2 = make_group_norm<T>(C, cfg.norm_groups);
            blk.lif.vtau = detail::scalar_tensor(T(cfg.tau_init));
            blk.lif.vvth = detail::scalar_tensor(T(cfg.vth_init));
            blk.lif.htau = detail::scalar_tensor(T(cfg.tau_init));
            blk.lif.hvth = detail::scalar_tensor(T(cfg.vth_init));
            blk.lif.proj_v = make_linear<T>(C, C, br.fork("proj_v"));
            blk.lif.proj_h = make_linear<T>(C, C, br.fork("proj_h"));
            blk.lif.norm3 = make_group_norm<T>(C, cfg.norm_groups);
            blk.lif.proj_out = make_linear<T>(C, C, br.fork("proj_out"));
            blk.mlp.fc1 = make_linear<T>(hidden, C, br.fork("fc1"));
            blk.mlp.fc2 = make_linear<T>(C, hidden, br.fork("fc2"));
            m.stages[size_t(s)].push_back(std::move(blk));
        }
        if (s < 3) {
            m.merges.push_back(make_linear<T>(2 * C, 4 * C, root.fork(uint64_t(9000 + s))));
        }
    }
    const int64_t C3 = cfg.stage_width(3);
    m.head_norm = make_group_norm<T>(C3, cfg.norm_groups);
    m.head = make_linear<T>(cfg.num_classes, C3, root.fork("head"));
    return m;
}

// A same-shaped, zero-valued mirror used to hold gradients.
template <typename T>
ModelParams<T> zeros_clone(const ModelParams<T>& src) {
    ModelParams<T> g;
    g.cfg = src.cfg;
    auto zlin = [](const LinearParams<T>& p) {
        return LinearParams<T>{zeros_like(p.weight), zeros_like(p.bias)};
    };
    auto znorm = [](const GroupNormParams<T>& p) {
        return GroupNormParams<T>{p.num_groups, zeros_like(p.gamma), zeros_like(p.beta),
                                  p.epsilon};
    };
    g.embed = zlin(src.embed);
    g.stages.resize(4);
    for (size_t s = 0; s < 4; ++s) {
        for (const BlockParams<T>& b : src.stages[s]) {
            BlockParams<T> z;
            z.lif.proj1 = zlin(b.lif.proj1);
            z.lif.norm1 = znorm(b.lif.norm1);
            z.lif.dwconv = DwConvParams<T>{zeros_like(b.lif.dwconv.kernel),
                                           zeros_like(b.lif.dwconv.bias)};
            z.lif.norm2 = znorm(b.lif.norm2);
            z.lif.vtau = zeros_like(b.lif.vtau);
            z.lif.vvth = zeros_like(b.lif.vvth);
            z.lif.htau = zeros_like(b.lif.htau);
            z.lif.hvth = zeros_like(b.lif.hvth);
            z.lif.proj_v = zlin(b.lif.proj_v);
            z.lif.proj_h = zlin(b.lif.proj_h);
            z.lif.norm3 = znorm(b.lif.norm3);
            z.lif.proj_out = zlin(b.lif.proj_out);
            z.mlp.fc1 = zlin(b.mlp.fc1);
            z.mlp.fc2 = zlin(b.mlp.fc2);
            g.stages[s].push_back(std::move(z));
        }
    }
    for (const LinearParams<T>& mp : src.merges) g.merges.push_back(zlin(mp));
    g.head_norm = znorm(src.head_norm);
    g.head = zlin(src.head);
    return g;
}

// ------------------------------------------------------------------------
// Named parameter registry: value and gradient tensors side by side, plus
// the weight-decay flag. Iteration order is the canonical checkpoint and
// optimizer order.
// ------------------------------------------------------------------------

template <typename T>
struct BankEntry {
    std::string name;
    Tensor4<T>* value;
    Tensor4<T>* grad;
    bool decay;
};

template <typename T>
std::vector<BankEntry<T>> make_bank(ModelParams<T>& p, ModelParams<T>& g) {
    std::vector<BankEntry<T>> bank;
    auto lin = [&](const std::string& n, LinearParams<T>& v, LinearParams<T>& gr) {
        bank.push_back({n + ".weight", &v.weight, &gr.weight, true});
        bank.push_back({n + ".bias", &v.bias, &gr.bias, false});
    };
    auto norm = [&](const std::string& n, GroupNormParams<T>& v, GroupNormParams<T>& gr) {
        bank.push_back({n + ".gamma", &v.gamma, &gr.gamma, false});
        bank.push_back({n + ".beta", &v.beta, &gr.beta, false});
    };
    lin("embed", p.embed, g.embed);
    for (size_t s = 0; s < 4; ++s) {
        for (size_t b = 0; b < p.stages[s].size(); ++b) {
            const std::string pre = "stage" + std::to_string(s) + ".block" + std::to_string(b);
            BlockParams<T>& v = p.stages[s][b];
            BlockParams<T>& gr = g.stages[s][b];
            lin(pre + ".proj1", v.lif.proj1, gr.lif.proj1);
            norm(pre + ".norm1", v.lif.norm1, gr.lif.norm1);
            bank.push_back({pre + ".dwconv.kernel", &v.lif.dwconv.kernel,
                            &gr.lif.dwconv.kernel, true});
            bank.push_back({pre + ".dwconv.bias", &v.lif.dwconv.bias, &gr.lif.dwconv.bias,
                            false});
            norm(pre + ".norm2", v.lif.norm2, gr.lif.norm2);
            bank.push_back({pre + ".vlif.tau", &v.lif.vtau, &gr.lif.vtau, false});
            bank.push_back({pre + ".vlif.vth", &v.lif.vvth, &gr.lif.vvth, false});
            bank.push_back({pre + ".hlif.tau", &v.lif.htau, &gr.lif.htau, false});
            bank.push_back({pre + ".hlif.vth", &v.lif.hvth, &gr.lif.hvth, false});
            lin(pre + ".proj_v", v.lif.proj_v, gr.lif.proj_v);
            lin(pre + ".proj_h", v.lif.proj_h, gr.lif.proj_h);
            norm(pre + ".norm3", v.lif.norm3, gr.lif.norm3);
            lin(pre + ".proj_out", v.lif.proj_out, gr.lif.proj_out);
            lin(pre + ".fc1", v.mlp.fc1, gr.mlp.fc1);
            lin(pre + ".fc2", v.mlp.fc2, gr.mlp.fc2);
        }
    }
    for (size_t s = 0; s < p.merges.size(); ++s) {
        lin("merge" + std::to_string(s), p.merges[s], g.merges[s]);
    }
    norm("head_norm", p.head_norm, g.head_norm);
    lin("head", p.head, g.head);
    return bank;
}

// ------------------------------------------------------------------------
// Forward with taped intermediates.
// ------------------------------------------------------------------------

template <typename T>
using CaptureFn = std::function<void(const std::string&, const Tensor4<T>&)>;

template <typename T>
struct LifModuleTape {
    Tensor4<T> x, h0, n1, a1, d0, n2, a2;
    GroupNormSaved<T> s1, s2, s3;
    LifSaved<T> vsaved, hsaved;
    Tensor4<T> vr, hr;
    Tensor4<T> pv, ph;
    Tensor4<T> sum, n3;
};

template <typename T>
struct MlpModuleTape {
    Tensor4<T> x, t1, g1, dr, g2;
};

template <typename T>
struct BlockTape {
    LifModuleTape<T> lif;
    MlpModuleTape<T> mlp;
    double dp_rate = 0.0;
};

template <typename T>
struct ForwardTape {
    Tensor4<T> embed_in;
    std::vector<std::vector<BlockTape<T>>> blocks{4};
    std::vector<Tensor4<T>> merge_in; // input of each patch merge
    Tensor4<T> head_in;               // input of the head norm
    GroupNormSaved<T> head_saved;
    Tensor4<T> head_normed;
    Tensor4<T> pooled;
};

namespace detail {

template <typename T>
LifParams<T> lif_params_of(const Tensor4<T>& tau, const Tensor4<T>& vth) {
    LifParams<T> p;
    p.tau = tau[0];
    p.v_th = vth[0];
    return p;
}

// Per-block drop-path rate ramps linearly from 0 to the configured peak
// across the block sequence.
inline double dp_rate_at(const ModelConfig& cfg, int64_t flat_block) {
    const int64_t total = cfg.total_blocks();
    if (total <= 1 || cfg.drop_path == 0.0) return cfg.drop_path;
    return cfg.drop_path * double(flat_block) / double(total - 1);
}

template <typename T>
void add_into(Tensor4<T>& dst, const Tensor4<T>& src) {
    parallel_for(0, dst.numel(), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) dst[i] += src[i];
    });
}

} // namespace detail

template <typename T>
Tensor4<T> lif_module_forward(const Tensor4<T>& x, const LifModuleParams<T>& p, int64_t groups,
                              LifModuleTape<T>* tape) {
    Tensor4<T> h0 = channel_mlp(x, p.proj1);
    GroupNormSaved<T> s1;
    Tensor4<T> n1 = group_norm(h0, p.norm1, &s1);
    Tensor4<T> a1 = gelu(n1);
    Tensor4<T> d0 = dwconv3x3(a1, p.dwconv);
    GroupNormSaved<T> s2;
    Tensor4<T> n2 = group_norm(d0, p.norm2, &s2);
    Tensor4<T> a2 = gelu(n2);

    LifForwardResult<T> vf = lif_forward(a2, detail::lif_params_of(p.vtau, p.vvth),
                                         {LifDirection::Vertical, groups});
    Tensor4<T> pv = channel_mlp(vf.r, p.proj_v);
    Tensor4<T> xv = gelu(pv);

    LifForwardResult<T> hf = lif_forward(a2, detail::lif_params_of(p.htau, p.hvth),
                                         {LifDirection::Horizontal, groups});
    Tensor4<T> ph = channel_mlp(hf.r, p.proj_h);
    Tensor4<T> xh = gelu(ph);

    Tensor4<T> sum = add(xv, xh);
    GroupNormSaved<T> s3;
    Tensor4<T> n3 = group_norm(sum, p.norm3, &s3);
    Tensor4<T> out = channel_mlp(n3, p.proj_out);

    if (tape) {
        tape->x = x;
        tape->h0 = std::move(h0);
        tape->n1 = std::move(n1);
        tape->a1 = std::move(a1);
        tape->d0 = std::move(d0);
        tape->n2 = std::move(n2);
        tape->a2 = std::move(a2);
        tape->s1 = std::move(s1);
        tape->s2 = std::move(s2);
        tape->s3 = std::move(s3);
        tape->vsaved = std::move(vf.saved);
        tape->hsaved = std::move(hf.saved);
        tape->vr = std::move(vf.r);
        tape->hr = std::move(hf.r);
        tape->pv = std::move(pv);
        tape->ph = std::move(ph);
        tape->sum = std::move(sum);
        tape->n3 = std::move(n3);
    }
    return out;
}

template <typename T>
struct LifModuleGrads {
    Tensor4<T> d_x;
};

// Reverse pass of lif_module_forward; parameter gradients accumulate into g.
template <typename T>
Tensor4<T> lif_module_backward(const Tensor4<T>& d_out, const LifModuleParams<T>& p,
                               const LifModuleTape<T>& t, LifModuleParams<T>& g) {
    LinearGrads<T> gout = channel_mlp_backward(d_out, t.n3, p.proj_out);
    detail::add_into(g.proj_out.weight, gout.d_weight);
    detail::add_into(g.proj_out.bias, gout.d_bias);

    GroupNormGrads<T> g3 = group_norm_backward(gout.d_x, t.sum, p.norm3, t.s3);
    detail::add_into(g.norm3.gamma, g3.d_gamma);
    detail::add_into(g.norm3.beta, g3.d_beta);

    // The sum fans the gradient to both directional branches.
    Tensor4<T> d_pv = gelu_backward(g3.d_x, t.pv);
    LinearGrads<T> gv = channel_mlp_backward(d_pv, t.vr, p.proj_v);
    detail::add_into(g.proj_v.weight, gv.d_weight);
    detail::add_into(g.proj_v.bias, gv.d_bias);
    LifGrads<T> lv = lif_backward(gv.d_x, t.vsaved);
    g.vtau[0] += lv.d_tau;
    g.vvth[0] += lv.d_vth;

    Tensor4<T> d_ph = gelu_backward(g3.d_x, t.ph);
    LinearGrads<T> gh = channel_mlp_backward(d_ph, t.hr, p.proj_h);
    detail::add_into(g.proj_h.weight, gh.d_weight);
    detail::add_into(g.proj_h.bias, gh.d_bias);
    LifGrads<T> lh = lif_backward(gh.d_x, t.hsaved);
    g.htau[0] += lh.d_tau;
    g.hvth[0] += lh.d_vth;

    Tensor4<T> d_a2 = add(lv.d_input, lh.d_input);
    Tensor4<T> d_n2 = gelu_backward(d_a2, t.n2);
    GroupNormGrads<T> g2 = group_norm_backward(d_n2, t.d0, p.norm2, t.s2);
    detail::add_into(g.norm2.gamma, g2.d_gamma);
    detail::add_into(g.norm2.beta, g2.d_beta);

    DwConvGrads<T> gd = dwconv3x3_backward(g2.d_x, t.a1, p.dwconv);
    detail::add_into(g.dwconv.kernel, gd.d_kernel);
    detail::add_into(g.dwconv.bias, gd.d_bias);

    Tensor4<T> d_n1 = gelu_backward(gd.d_x, t.n1);
    GroupNormGrads<T> g1 = group_norm_backward(d_n1, t.h0, p.norm1, t.s1);
    detail::add_into(g.norm1.gamma, g1.d_gamma);
    detail::add_into(g.norm1.beta, g1.d_beta);

    LinearGrads<T> gin = channel_mlp_backward(g1.d_x, t.x, p.proj1);
    detail::add_into(g.proj1.weight, gin.d_weight);
    detail::add_into(g.proj1.bias, gin.d_bias);
    return std::move(gin.d_x);
}

template <typename T>
Tensor4<T> mlp_block_forward(const Tensor4<T>& x, const MlpModuleParams<T>& p, double rate,
                             const Rng& rng, bool training, MlpModuleTape<T>* tape) {
    Tensor4<T> t1 = channel_mlp(x, p.fc1);
    Tensor4<T> g1 = gelu(t1);
    Tensor4<T> dr = dropout(g1, rate, rng, training);
    Tensor4<T> g2 = gelu(dr);
    Tensor4<T> out = channel_mlp(g2, p.fc2);
    if (tape) {
        tape->x = x;
        tape->t1 = std::move(t1);
        tape->g1 = std::move(g1);
        tape->dr = std::move(dr);
        tape->g2 = std::move(g2);
    }
    return out;
}

template <typename T>
Tensor4<T> mlp_block_backward(const Tensor4<T>& d_out, const MlpModuleParams<T>& p,
                              const MlpModuleTape<T>& t, double rate, const Rng& rng,
                              bool training, MlpModuleParams<T>& g) {
    LinearGrads<T> g2 = channel_mlp_backward(d_out, t.g2, p.fc2);
    detail::add_into(g.fc2.weight, g2.d_weight);
    detail::add_into(g.fc2.bias, g2.d_bias);
    Tensor4<T> d_dr = gelu_backward(g2.d_x, t.dr);
    Tensor4<T> d_g1 = dropout_backward(d_dr, rate, rng, training);
    Tensor4<T> d_t1 = gelu_backward(d_g1, t.t1);
    LinearGrads<T> g1 = channel_mlp_backward(d_t1, t.x, p.fc1);
    detail::add_into(g.fc1.weight, g1.d_weight);
    detail::add_into(g.fc1.bias, g1.d_bias);
    return std::move(g1.d_x);
}

// ------------------------------------------------------------------------
// Whole-network forward / backward.
// ------------------------------------------------------------------------

template <typename T>
Tensor4<T> snn_mlp_forward(const Tensor4<T>& img, const ModelParams<T>& m, bool training,
                           const Rng& rng, ForwardTape<T>* tape = nullptr,
                           const CaptureFn<T>* capture = nullptr) {
    const ModelConfig& cfg = m.cfg;
    const int64_t need = cfg.patch * 8;
    if (img.h() % need != 0 || img.w() % need != 0) {
        throw std::invalid_argument("snn_mlp_forward: input " + img.shape_str() +
                                    " not divisible by patch*2^3 = " + std::to_string(need));
    }
    if (tape) tape->embed_in = img;
    Tensor4<T> x = patch_embed(img, m.embed, cfg.patch);
    if (capture) (*capture)("embed", x);

    int64_t flat_block = 0;
    for (int64_t s = 0; s < 4; ++s) {
        const std::string spre = "stage" + std::to_string(s);
        for (size_t b = 0; b < m.stages[size_t(s)].size(); ++b) {
            const BlockParams<T>& blk = m.stages[size_t(s)][b];
            const std::string bpre = spre + ".block" + std::to_string(b);
            BlockTape<T>* bt = nullptr;
            if (tape) {
                tape->blocks[size_t(s)].emplace_back();
                bt = &tape->blocks[size_t(s)].back();
                bt->dp_rate = detail::dp_rate_at(cfg, flat_block);
            }
            const double dp = detail::dp_rate_at(cfg, flat_block);
            const Rng dpv = rng.fork("dp.lif").fork(uint64_t(flat_block));
            const Rng dpm = rng.fork("dp.mlp").fork(uint64_t(flat_block));
            const Rng drop = rng.fork("do.mlp").fork(uint64_t(flat_block));

            // Captures read LIF outputs off a tape, so force a local one
            // when the caller wants activations but no gradients.
            LifModuleTape<T> scratch;
            LifModuleTape<T>* lt = bt ? &bt->lif : (capture ? &scratch : nullptr);
            Tensor4<T> mix = lif_module_forward(x, blk.lif, cfg.groups, lt);
            if (capture && lt) {
                (*capture)(bpre + ".vlif_out", lt->vr);
                (*capture)(bpre + ".hlif_out", lt->hr);
                (*capture)(bpre + ".lif_out", lt->vr);
            }
            detail::add_into(x, drop_path(mix, dp, dpv, training));

            Tensor4<T> ff = mlp_block_forward(x, blk.mlp, cfg.dropout, drop, training,
                                              bt ? &bt->mlp : nullptr);
            detail::add_into(x, drop_path(ff, dp, dpm, training));
            if (capture) (*capture)(bpre + ".out", x);
            ++flat_block;
        }
        if (capture) (*capture)(spre + ".out", x);
        if (s < 3) {
            if (tape) tape->merge_in.push_back(x);
            x = patch_merge(x, m.merges[size_t(s)]);
        }
    }

    GroupNormSaved<T> hsaved;
    Tensor4<T> hn = group_norm(x, m.head_norm, &hsaved);
    Tensor4<T> pooled = reduce_mean_hw(hn);
    Tensor4<T> logits = channel_mlp(pooled, m.head);
    if (capture) (*capture)("logits", logits);
    if (tape) {
        tape->head_in = std::move(x);
        tape->head_saved = std::move(hsaved);
        tape->head_normed = std::move(hn);
        tape->pooled = std::move(pooled);
    }
    return logits;
}

// Fills `grads` (accumulating) and returns the gradient w.r.t. the image.
template <typename T>
Tensor4<T> snn_mlp_backward(const Tensor4<T>& d_logits, const ModelParams<T>& m,
                            const ForwardTape<T>& tape, bool training, const Rng& rng,
                            ModelParams<T>& grads) {
    const ModelConfig& cfg = m.cfg;
    LinearGrads<T> gh = channel_mlp_backward(d_logits, tape.pooled, m.head);
    detail::add_into(grads.head.weight, gh.d_weight);
    detail::add_into(grads.head.bias, gh.d_bias);

    // Undo the average pool: spread each channel gradient uniformly.
    const Tensor4<T>& hn = tape.head_normed;
    Tensor4<T> d_hn = zeros_like(hn);
    const int64_t spatial = hn.h() * hn.w();
    parallel_for(0, hn.n() * hn.c(), [&](int64_t lo, int64_t hi) {
        for (int64_t item = lo; item < hi; ++item) {
            const T v = gh.d_x[item] / T(spatial);
            T* dst = d_hn.data() + item * spatial;
            for (int64_t q = 0; q < spatial; ++q) dst[q] = v;
        }
    });
    GroupNormGrads<T> ghn = group_norm_backward(d_hn, tape.head_in, m.head_norm,
                                                tape.head_saved);
    detail::add_into(grads.head_norm.gamma, ghn.d_gamma);
    detail::add_into(grads.head_norm.beta, ghn.d_beta);
    Tensor4<T> d_x = std::move(ghn.d_x);

    int64_t flat_block = cfg.total_blocks();
    for (int64_t s = 3; s >= 0; --s) {
        if (s < 3) {
            LinearGrads<T> gm = patch_merge_backward(d_x, tape.merge_in[size_t(s)],
                                                     m.merges[size_t(s)]);
            detail::add_into(grads.merges[size_t(s)].weight, gm.d_weight);
            detail::add_into(grads.merges[size_t(s)].bias, gm.d_bias);
            d_x = std::move(gm.d_x);
        }
        for (int64_t b = int64_t(m.stages[size_t(s)].size()) - 1; b >= 0; --b) {
            --flat_block;
            const BlockParams<T>& blk = m.stages[size_t(s)][size_t(b)];
            const BlockTape<T>& bt = tape.blocks[size_t(s)][size_t(b)];
            BlockParams<T>& gblk = grads.stages[size_t(s)][size_t(b)];
            const double dp = bt.dp_rate;
            const Rng dpv = rng.fork("dp.lif").fork(uint64_t(flat_block));
            const Rng dpm = rng.fork("dp.mlp").fork(uint64_t(flat_block));
            const Rng drop = rng.fork("do.mlp").fork(uint64_t(flat_block));

            // x_out = x_mid + drop_path(mlp(x_mid))
            Tensor4<T> d_branch = drop_path_backward(d_x, dp, dpm, training);
            Tensor4<T> d_mid = mlp_block_backward(d_branch, blk.mlp, bt.mlp, cfg.dropout, drop,
                                                  training, gblk.mlp);
            detail::add_into(d_mid, d_x);

            // x_mid = x_in + drop_path(lif_module(x_in))
            Tensor4<T> d_branch2 = drop_path_backward(d_mid, dp, dpv, training);
            Tensor4<T> d_in = lif_module_backward(d_branch2, blk.lif, bt.lif, gblk.lif);
            detail::add_into(d_in, d_mid);
            d_x = std::move(d_in);
        }
    }

    LinearGrads<T> ge = patch_embed_backward(d_x, tape.embed_in, m.embed, cfg.patch);
    detail::add_into(grads.embed.weight, ge.d_weight);
    detail::add_into(grads.embed.bias, ge.d_bias);
    return std::move(ge.d_x);
}

// ------------------------------------------------------------------------
// Analytic budgets.
// ------------------------------------------------------------------------

// Count of learnable scalars, including the per-direction LIF pairs.
inline int64_t count_params(const ModelConfig& cfg) {
    auto linear = [](int64_t co, int64_t ci) { return co * ci + co; };
    int64_t total = linear(cfg.embed_dim, 3 * cfg.patch * cfg.patch);
    for (int64_t s = 0; s < 4; ++s) {
        const int64_t C = cfg.stage_width(s);
        const int64_t hidden = int64_t(cfg.mlp_ratio * double(C));
        const int64_t block = 4 * linear(C, C)           // proj1, proj_v, proj_h, proj_out
                              + 3 * (2 * C)              // three norms
                              + (9 * C + C)              // dwconv kernel + bias
                              + 4                        // two (tau, v_th) pairs
                              + linear(hidden, C) + linear(C, hidden);
        total += cfg.depths[size_t(s)] * block;
        if (s < 3) total += linear(2 * C, 4 * C);
    }
    total += 2 * cfg.stage_width(3);                      // head norm
    total += linear(cfg.num_classes, cfg.stage_width(3)); // classifier
    return total;
}

// Multiply-accumulate count for one forward pass (1 MAC = 1 FLOP, biases
// excluded from linear costs, elementwise ops at stated per-element costs:
// LIF 3, norm 2, gelu 1, residual add 1, dropout 0).
inline int64_t count_flops(const ModelConfig& cfg, int64_t in_h, int64_t in_w) {
    const int64_t H0 = in_h / cfg.patch, W0 = in_w / cfg.patch;
    int64_t total = (3 * cfg.patch * cfg.patch) * cfg.embed_dim * H0 * W0;
    for (int64_t s = 0; s < 4; ++s) {
        const int64_t C = cfg.stage_width(s);
        const int64_t S = (H0 >> s) * (W0 >> s);
        const int64_t hidden = int64_t(cfg.mlp_ratio * double(C));
        const int64_t lif_module = 4 * C * C * S   // four C->C projections
                                   + 26 * C * S;   // norms 6, gelus 4, dwconv 9, LIFs 6, sum 1
        const int64_t mlp_block = 2 * hidden * C * S + 2 * hidden * S;
        const int64_t residuals = 2 * C * S;
        total += cfg.depths[size_t(s)] * (lif_module + mlp_block + residuals);
        if (s < 3) total += (4 * C) * (2 * C) * (S / 4);
    }
    const int64_t C3 = cfg.stage_width(3);
    const int64_t S3 = (H0 >> 3) * (W0 >> 3);
    total += 2 * C3 * S3;              // head norm
    total += C3 * S3;                  // average pool
    total += C3 * cfg.num_classes;     // classifier
    return total;
}

// The intermediate names the forward pass can expose, in capture order.
inline std::vector<std::string> capture_names(const ModelConfig& cfg) {
    std::vector<std::string> names{"embed"};
    for (int64_t s = 0; s < 4; ++s) {
        for (int64_t b = 0; b < cfg.depths[size_t(s)]; ++b) {
            const std::string pre = "stage" + std::to_string(s) + ".block" + std::to_string(b);
            names.push_back(pre + ".vlif_out");
            names.push_back(pre + ".hlif_out");
            names.push_back(pre + ".lif_out");
            names.push_back(pre + ".out");
        }
        names.push_back("stage" + std::to_string(s) + ".out");
    }
    names.push_back("logits");
    return names;
}

} // namespace lifmixer

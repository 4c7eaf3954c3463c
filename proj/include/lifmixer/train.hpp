#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "lifmixer/checkpoint.hpp"
#include "lifmixer/data.hpp"
#include "lifmixer/loss.hpp"
#include "lifmixer/model.hpp"
#include "lifmixer/optim.hpp"

namespace lifmixer {

struct TrainConfig {
    ModelConfig model;
    AdamWConfig opt;        // opt.lr doubles as the schedule's base rate
    double smoothing = 0.1;
    int64_t batch = 32;
    int64_t warmup_steps = 0;
    ChannelNorm norm;
    bool augment = false;
    uint64_t seed = 0;
    std::string metrics_path;    // per-step CSV; empty disables
    std::string checkpoint_path; // saved after every epoch; empty disables
};

// Parameters, gradients, Adam moments, and the schedule position — the unit
// of persistence for stop/resume.
template <typename T>
struct TrainState {
    ModelParams<T> model;
    ModelParams<T> grads;
    ModelParams<T> opt_m;
    ModelParams<T> opt_v;
    int64_t step = 0;  // optimizer steps completed
    int64_t epoch = 0; // epochs completed
};

template <typename T>
TrainState<T> make_train_state(const ModelConfig& cfg, uint64_t seed) {
    TrainState<T> st;
    st.model = make_model<T>(cfg, seed);
    st.grads = zeros_clone(st.model);
    st.opt_m = zeros_clone(st.model);
    st.opt_v = zeros_clone(st.model);
    return st;
}

template <typename T>
void save_train_state(const std::string& path, TrainState<T>& st) {
    Checkpoint ck = snapshot_model(st.model);
    ck.set_config("step", std::to_string(st.step));
    ck.set_config("epoch", std::to_string(st.epoch));
    for (const BankEntry<T>& e : make_bank(st.opt_m, st.opt_v)) {
        ck.tensors.emplace_back("opt.m/" + e.name, *e.value);
        ck.tensors.emplace_back("opt.v/" + e.name, *e.grad);
    }
    write_checkpoint_file(path, ck);
}

template <typename T>
TrainState<T> load_train_state(const std::string& path) {
    Checkpoint ck = read_checkpoint_file(path);
    TrainState<T> st = make_train_state<T>(model_config_from(ck), 0);
    load_model(ck, st.model);
    st.step = parse_int(ck.config_at("step"), "step");
    st.epoch = parse_int(ck.config_at("epoch"), "epoch");
    for (const BankEntry<T>& e : make_bank(st.opt_m, st.opt_v)) {
        for (auto [prefix, dst] : {std::pair<const char*, Tensor4<T>*>{"opt.m/", e.value},
                                   std::pair<const char*, Tensor4<T>*>{"opt.v/", e.grad}}) {
            const std::string name = std::string(prefix) + e.name;
            const AnyTensor* stored = ck.find_tensor(name);
            if (!stored) throw std::runtime_error("checkpoint is missing tensor " + name);
            const Tensor4<T>& src = std::get<Tensor4<T>>(*stored);
            if (!src.same_shape(*dst)) {
                throw std::runtime_error("checkpoint tensor " + name + " has shape " +
                                         src.shape_str() + ", expected " + dst->shape_str());
            }
            *dst = src;
        }
    }
    return st;
}

struct StepRecord {
    int64_t epoch = 0;
    int64_t step = 0;
    double loss = 0.0;
    double acc = 0.0;
    double lr = 0.0;
};

struct EpochRecord {
    int64_t epoch = 0;
    double loss = 0.0;
    double acc = 0.0;
};

struct TrainHistory {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
};

inline std::string metrics_line(const StepRecord& r) {
    return std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + format_real(r.loss) +
           "," + format_real(r.acc) + "," + format_real(r.lr);
}

// Runs training up to `total_epochs` completed epochs (absolute target, so
// resuming a loaded state continues where it stopped). The cosine schedule
// always spans total_epochs; `pause_after` (absolute, optional) stops the
// loop early without shortening that horizon, for interrupt/resume runs.
// Deterministic in (seed, thread count): shuffles, flips, and dropout masks
// are all pure functions of the absolute epoch/step counters.
template <typename T>
TrainHistory train_loop(const TrainConfig& cfg, const Dataset& ds, int64_t total_epochs,
                        TrainState<T>& st, int64_t pause_after = -1) {
    if (cfg.batch < 1) throw std::invalid_argument("train_loop: batch must be >= 1");
    if (ds.size() < 1) throw std::invalid_argument("train_loop: empty dataset");
    if (st.epoch > total_epochs) {
        throw std::invalid_argument("train_loop: state already past epoch " +
                                    std::to_string(total_epochs));
    }
    const int64_t run_until = pause_after < 0 ? total_epochs : std::min(pause_after, total_epochs);
    const int64_t n = ds.size();
    const int64_t steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
    const Schedule sched{cfg.opt.lr, cfg.warmup_steps, total_epochs * steps_per_epoch};

    std::vector<BankEntry<T>> params = make_bank(st.model, st.grads);
    std::vector<BankEntry<T>> moments = make_bank(st.opt_m, st.opt_v);
    Rng root(cfg.seed);

    std::ofstream metrics;
    if (!cfg.metrics_path.empty()) {
        const bool fresh = st.step == 0;
        metrics.open(cfg.metrics_path, fresh ? std::ios::trunc : std::ios::app);
        if (!metrics) throw std::runtime_error("cannot open " + cfg.metrics_path + " for writing");
        if (fresh) metrics << "epoch,step,loss,acc,lr\n";
    }

    TrainHistory hist;
    for (int64_t e = st.epoch; e < run_until; ++e) {
        std::vector<int64_t> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), int64_t(0));
        Rng shuffle = root.fork("shuffle").fork(uint64_t(e));
        for (int64_t i = n - 1; i > 0; --i) {
            const int64_t j = int64_t(shuffle.below(uint64_t(i + 1)));
            std::swap(order[size_t(i)], order[size_t(j)]);
        }

        double epoch_loss = 0.0;
        int64_t epoch_hits = 0;
        for (int64_t b = 0; b < steps_per_epoch; ++b) {
            const int64_t lo = b * cfg.batch;
            const int64_t hi = std::min(n, lo + cfg.batch);
            const std::vector<int64_t> idx(order.begin() + lo, order.begin() + hi);
            std::vector<int64_t> labels(idx.size());
            for (size_t i = 0; i < idx.size(); ++i) labels[i] = ds.labels[size_t(idx[i])];

            const Rng flips = root.fork("flip").fork(uint64_t(st.step));
            Tensor4<T> x = assemble_batch<T>(ds, idx, cfg.norm, cfg.augment, flips);

            const Rng net = root.fork("net").fork(uint64_t(st.step));
            ForwardTape<T> tape;
            Tensor4<T> logits = snn_mlp_forward(x, st.model, true, net, &tape);
            LossResult<T> res = cross_entropy_ls(logits, labels, cfg.smoothing);
            if (!std::isfinite(res.loss)) {
                throw std::runtime_error("training aborted: non-finite loss at step " +
                                         std::to_string(st.step) + " (epoch " + std::to_string(e) +
                                         ")");
            }
            zero_grads(params);
            snn_mlp_backward(res.d_logits, st.model, tape, true, net, st.grads);

            const double lr = cosine_lr(st.step, sched);
            adamw_step(params, moments, st.step + 1, cfg.opt, lr);

            int64_t hits = 0;
            for (size_t i = 0; i < labels.size(); ++i) {
                if (argmax_class(logits, int64_t(i)) == labels[i]) ++hits;
            }
            const double acc = double(hits) / double(labels.size());
            StepRecord rec{e, st.step, res.loss, acc, lr};
            hist.steps.push_back(rec);
            if (metrics.is_open()) metrics << metrics_line(rec) << "\n";

            epoch_loss += res.loss * double(labels.size());
            epoch_hits += hits;
            ++st.step;
        }
        st.epoch = e + 1;
        hist.epochs.push_back({e, epoch_loss / double(n), double(epoch_hits) / double(n)});
        if (metrics.is_open()) metrics.flush();
        if (!cfg.checkpoint_path.empty()) save_train_state(cfg.checkpoint_path, st);
    }
    return hist;
}

// Top-1 accuracy in eval mode (no augmentation, no stochastic paths).
template <typename T>
double evaluate(const Dataset& ds, ModelParams<T>& m, const ChannelNorm& nrm, int64_t batch) {
    if (ds.size() < 1) throw std::invalid_argument("evaluate: empty dataset");
    if (batch < 1) throw std::invalid_argument("evaluate: batch must be >= 1");
    int64_t hits = 0;
    for (int64_t lo = 0; lo < ds.size(); lo += batch) {
        const int64_t hi = std::min(ds.size(), lo + batch);
        std::vector<int64_t> idx(size_t(hi - lo));
        std::iota(idx.begin(), idx.end(), lo);
        Tensor4<T> x = assemble_batch<T>(ds, idx, nrm, false, Rng(0));
        Tensor4<T> logits = snn_mlp_forward(x, m, false, Rng(0));
        for (size_t i = 0; i < idx.size(); ++i) {
            if (argmax_class(logits, int64_t(i)) == ds.labels[size_t(idx[i])]) ++hits;
        }
    }
    return double(hits) / double(ds.size());
}

} // namespace lifmixer

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lifmixer/checkpoint.hpp"
#include "lifmixer/data.hpp"
#include "lifmixer/gradcheck.hpp"
#include "lifmixer/lif.hpp"
#include "lifmixer/model.hpp"
#include "lifmixer/parallel.hpp"
#include "lifmixer/tensor_io.hpp"
#include "lifmixer/train.hpp"

namespace {

using namespace lifmixer;

constexpr int exit_ok = 0;
constexpr int exit_check_failed = 1;
constexpr int exit_usage = 2;
constexpr int exit_io = 3;

// ---- flat key=value config files ------------------------------------------

struct KvFile {
    std::vector<std::pair<std::string, std::string>> pairs;
    std::set<std::string> consumed;

    std::optional<std::string> take(const std::string& key) {
        for (const auto& [k, v] : pairs) {
            if (k == key) {
                consumed.insert(key);
                return v;
            }
        }
        return std::nullopt;
    }

    void reject_unknown() const {
        std::string unknown;
        for (const auto& [k, v] : pairs) {
            if (!consumed.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
        }
        if (!unknown.empty()) {
            throw std::invalid_argument("config file has unknown keys: " + unknown);
        }
    }
};

std::string trim(const std::string& s) {
    const size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

KvFile read_kv_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file " + path);
    KvFile kv;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                        ": expected key=value, got '" + line + "'");
        }
        kv.pairs.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return kv;
}

std::array<double, 3> parse_triple(const std::string& text, const std::string& what) {
    std::array<double, 3> out{};
    std::istringstream is(text);
    std::string part;
    size_t i = 0;
    while (std::getline(is, part, ',')) {
        if (i >= 3) break;
        out[i++] = parse_real(trim(part), what);
    }
    if (i != 3) throw std::invalid_argument(what + " needs 3 comma-separated values, got '" +
                                            text + "'");
    return out;
}

bool parse_bool(const std::string& text, const std::string& what) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw std::invalid_argument(what + " must be true/false, got '" + text + "'");
}

ModelConfig variant_config(const std::string& name) {
    if (name == "tiny") return ModelConfig::tiny();
    if (name == "small") return ModelConfig::small();
    if (name == "base") return ModelConfig::base();
    if (name == "toy") return ModelConfig::toy();
    throw std::invalid_argument("unknown variant '" + name +
                                "' (expected tiny, small, base, or toy)");
}

ModelConfig model_config_from_kv_file(KvFile& kv, const std::string& fallback_variant) {
    ModelConfig cfg = variant_config(kv.take("variant").value_or(fallback_variant));
    if (auto v = kv.take("patch")) cfg.patch = parse_int(*v, "patch");
    if (auto v = kv.take("embed_dim")) cfg.embed_dim = parse_int(*v, "embed_dim");
    if (auto v = kv.take("depths")) {
        std::istringstream is(*v);
        std::string part;
        size_t i = 0;
        while (std::getline(is, part, ',') && i < 4) cfg.depths[i++] = parse_int(part, "depths");
        if (i != 4) throw std::invalid_argument("depths must list 4 values, got '" + *v + "'");
    }
    if (auto v = kv.take("groups")) cfg.groups = parse_int(*v, "groups");
    if (auto v = kv.take("mlp_ratio")) cfg.mlp_ratio = parse_real(*v, "mlp_ratio");
    if (auto v = kv.take("num_classes")) cfg.num_classes = parse_int(*v, "num_classes");
    if (auto v = kv.take("drop_path")) cfg.drop_path = parse_real(*v, "drop_path");
    if (auto v = kv.take("dropout")) cfg.dropout = parse_real(*v, "dropout");
    if (auto v = kv.take("norm_groups")) cfg.norm_groups = parse_int(*v, "norm_groups");
    if (auto v = kv.take("tau_init")) cfg.tau_init = parse_real(*v, "tau_init");
    if (auto v = kv.take("vth_init")) cfg.vth_init = parse_real(*v, "vth_init");
    return cfg;
}

// ---- shared option plumbing ------------------------------------------------

struct CommonOpts {
    std::string config_path;
    uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0; // 0 = unresolved
    std::string dtype = "f32";
};

// Priority: --threads flag, then LIFMIXER_THREADS, then config file, then 1.
// File keys are consumed even when outranked so they never read as unknown.
void resolve_threads(CommonOpts& c, KvFile* kv) {
    std::optional<std::string> from_file;
    if (kv) from_file = kv->take("threads");
    int n = c.threads;
    if (n <= 0) {
        if (const char* env = std::getenv("LIFMIXER_THREADS")) {
            n = int(parse_int(env, "LIFMIXER_THREADS"));
        }
    }
    if (n <= 0 && from_file) n = int(parse_int(*from_file, "threads"));
    if (n <= 0) n = 1;
    set_global_threads(n);
}

void resolve_seed(CommonOpts& c, KvFile* kv) {
    std::optional<std::string> from_file;
    if (kv) from_file = kv->take("seed");
    if (!c.seed_set && from_file) c.seed = uint64_t(parse_int(*from_file, "seed"));
}

struct DataOpts {
    std::string dataset = "synth"; // synth | cifar10
    std::string data_path;
    int64_t synth_classes = 3;
    int64_t synth_n = 300;
    uint64_t synth_seed = 1;
};

void data_opts_from_kv(DataOpts& d, KvFile& kv) {
    if (auto v = kv.take("dataset")) d.dataset = *v;
    if (auto v = kv.take("data_path")) d.data_path = *v;
    if (auto v = kv.take("synth_classes")) d.synth_classes = parse_int(*v, "synth_classes");
    if (auto v = kv.take("synth_n")) d.synth_n = parse_int(*v, "synth_n");
    if (auto v = kv.take("synth_seed")) d.synth_seed = uint64_t(parse_int(*v, "synth_seed"));
}

Dataset load_dataset(const DataOpts& d) {
    if (d.dataset == "synth") return synth_dataset(d.synth_classes, d.synth_n, d.synth_seed);
    if (d.dataset == "cifar10") {
        if (d.data_path.empty()) {
            throw std::invalid_argument("dataset cifar10 needs data_path=<batch file>");
        }
        return load_cifar10(d.data_path);
    }
    throw std::invalid_argument("unknown dataset '" + d.dataset + "' (expected synth or cifar10)");
}

// ---- gradcheck -------------------------------------------------------------

struct LifCase {
    int64_t n, c, h, w;
    int64_t groups;
    LifDirection dir;
};

std::vector<LifCase> lif_case_grid(std::optional<int64_t> extra_groups) {
    const int64_t shapes[5][4] = {
        {2, 3, 8, 6}, {1, 4, 7, 9}, {2, 2, 5, 5}, {3, 1, 4, 11}, {1, 2, 16, 3}};
    const int64_t gs[10] = {1, 2, 4, 7, 16, 3, 5, 8, 2, 6};
    std::vector<LifCase> cases;
    for (int i = 0; i < 10; ++i) {
        const auto& s = shapes[i % 5];
        cases.push_back({s[0], s[1], s[2], s[3], gs[i], LifDirection::Vertical});
        cases.push_back({s[0], s[1], s[2], s[3], gs[i], LifDirection::Horizontal});
    }
    if (extra_groups) {
        cases.push_back({2, 3, 9, 8, *extra_groups, LifDirection::Vertical});
        cases.push_back({2, 3, 9, 8, *extra_groups, LifDirection::Horizontal});
    }
    return cases;
}

int cmd_gradcheck(uint64_t seed, std::optional<int64_t> groups, double fault) {
    struct Line {
        std::string name;
        double err;
        double gate;
    };
    std::vector<Line> lines;
    for (const CheckResult& r : run_layer_gradchecks(seed, fault)) {
        lines.push_back({r.name, r.err, 1e-5});
    }
    const std::vector<LifCase> cases = lif_case_grid(groups);
    for (size_t i = 0; i < cases.size(); ++i) {
        const LifCase& c = cases[i];
        LifCheckOptions opt;
        opt.fault = fault;
        const LifCheckReport rep = lif_forward_backward_check(
            c.n, c.c, c.h, c.w, {c.dir, c.groups}, seed + 101 * i, LifParams<double>{}, opt);
        std::ostringstream name;
        name << "lif_case" << i << " dir=" << (c.dir == LifDirection::Vertical ? "v" : "h")
             << " g=" << c.groups << " shape=(" << c.n << "," << c.c << "," << c.h << "," << c.w
             << ")";
        if (c.groups == 1) name << " [clamp identity]";
        lines.push_back({name.str(), rep.max_err(), 1e-5});
    }
    lines.push_back({"lif_module [composed, relaxed gate]", check_lif_module(seed, fault).err,
                     1e-4});

    int failures = 0;
    for (const Line& l : lines) {
        const bool ok = l.err < l.gate;
        failures += !ok;
        std::ostringstream row;
        row.setf(std::ios::scientific);
        row.precision(3);
        row << l.name << "  max_rel_err=" << l.err << "  " << (ok ? "PASS" : "FAIL");
        std::cout << row.str() << "\n";
    }
    if (failures == 0) {
        std::cout << "ALL PASS (" << lines.size() << " checks)\n";
        return exit_ok;
    }
    std::cout << "FAIL: " << failures << " of " << lines.size() << " checks exceeded their gate\n";
    return exit_check_failed;
}

// ---- count -----------------------------------------------------------------

std::string deviation_str(int64_t got, double target) {
    std::ostringstream os;
    const double dev = (double(got) / target - 1.0) * 100.0;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << (dev >= 0 ? "+" : "") << dev << "%";
    return os.str();
}

int cmd_count(const std::string& variant, const std::string& config_path) {
    ModelConfig cfg;
    bool compare = false;
    double param_target = 0.0, flop_target = 0.0;
    if (!config_path.empty()) {
        KvFile kv = read_kv_file(config_path);
        cfg = model_config_from_kv_file(kv, "toy");
        kv.reject_unknown();
        std::cout << "config " << config_path << "\n";
    } else {
        cfg = variant_config(variant);
        if (variant == "tiny") {
            compare = true;
            param_target = 28e6;
            flop_target = 4.4e9;
        } else if (variant == "small") {
            compare = true;
            param_target = 50e6;
            flop_target = 8.5e9;
        } else if (variant == "base") {
            compare = true;
            param_target = 88e6;
            flop_target = 15.2e9;
        }
        std::cout << "variant " << variant << "\n";
    }
    const int64_t params = count_params(cfg);
    const int64_t flops = count_flops(cfg, 224, 224);
    std::cout << "params " << params;
    if (compare) {
        std::cout << "  target " << int64_t(param_target) << "  deviation "
                  << deviation_str(params, param_target);
    }
    std::cout << "\nflops224 " << flops;
    if (compare) {
        std::cout << "  target " << int64_t(flop_target) << "  deviation "
                  << deviation_str(flops, flop_target);
    }
    std::cout << "\n";
    return exit_ok;
}

// ---- train / eval ----------------------------------------------------------

struct TrainCliOpts {
    std::string variant = "toy";
    int64_t epochs = 10;
    int64_t batch = 32;
    int64_t warmup_steps = 0;
    double lr = 1e-3;
    std::string metrics_path = "metrics.csv";
    std::string checkpoint_path = "checkpoint.ck";
    bool augment = false;
    double smoothing = 0.1;
};

template <typename T>
int run_train(const CommonOpts& common, const TrainCliOpts& t, const DataOpts& d,
              ModelConfig model_cfg, const ChannelNorm& norm) {
    TrainConfig cfg;
    cfg.model = model_cfg;
    cfg.opt.lr = t.lr;
    cfg.smoothing = t.smoothing;
    cfg.batch = t.batch;
    cfg.warmup_steps = t.warmup_steps;
    cfg.norm = norm;
    cfg.augment = t.augment;
    cfg.seed = common.seed;
    cfg.metrics_path = t.metrics_path;
    cfg.checkpoint_path = t.checkpoint_path;

    Dataset ds = load_dataset(d);
    TrainState<T> st = make_train_state<T>(cfg.model, common.seed);
    TrainHistory hist;
    try {
        hist = train_loop(cfg, ds, t.epochs, st);
    } catch (const std::runtime_error& e) {
        if (std::string(e.what()).find("non-finite") != std::string::npos) {
            std::cerr << e.what() << "\n";
            return exit_check_failed;
        }
        throw;
    }
    for (const EpochRecord& e : hist.epochs) {
        std::ostringstream row;
        row.setf(std::ios::fixed);
        row.precision(4);
        row << "epoch " << e.epoch << "  loss " << e.loss << "  acc " << e.acc;
        std::cout << row.str() << "\n";
    }
    if (!hist.epochs.empty()) {
        std::ostringstream fin;
        fin.setf(std::ios::fixed);
        fin.precision(4);
        fin << "final train accuracy " << hist.epochs.back().acc;
        std::cout << fin.str() << "\n";
    }
    std::cout << "metrics " << t.metrics_path << "\ncheckpoint " << t.checkpoint_path << "\n";
    return exit_ok;
}

template <typename T>
int run_eval(const Checkpoint& ck, const DataOpts& d, const ChannelNorm& norm, int64_t batch) {
    ModelConfig cfg = model_config_from(ck);
    ModelParams<T> m = make_model<T>(cfg, 0);
    load_model(ck, m);
    Dataset ds = load_dataset(d);
    if (ds.num_classes != cfg.num_classes) {
        throw std::runtime_error("checkpoint expects " + std::to_string(cfg.num_classes) +
                                 " classes but dataset has " + std::to_string(ds.num_classes));
    }
    const double acc = evaluate(ds, m, norm, batch);
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    os << "top-1 accuracy " << acc;
    std::cout << os.str() << "\n";
    return exit_ok;
}

// ---- bench -----------------------------------------------------------------

struct BenchStats {
    double median_ms = 0.0;
    double p95_ms = 0.0;
};

template <typename F>
BenchStats time_op(F&& body, int repeats, int warmup) {
    for (int i = 0; i < warmup; ++i) body();
    std::vector<double> ms;
    ms.reserve(size_t(repeats));
    for (int i = 0; i < repeats; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        body();
        const auto t1 = std::chrono::steady_clock::now();
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(ms.begin(), ms.end());
    BenchStats s;
    const size_t r = ms.size();
    s.median_ms = (r % 2) ? ms[r / 2] : 0.5 * (ms[r / 2 - 1] + ms[r / 2]);
    s.p95_ms = ms[std::min(r - 1, size_t(std::ceil(0.95 * double(r))) - 1)];
    return s;
}

void print_bench_row(const std::string& op, const std::string& g, const BenchStats& s,
                     int64_t elements) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    os << op << "  g=" << g << "  median_ms=" << s.median_ms << "  p95_ms=" << s.p95_ms;
    os.precision(0);
    os << "  elements_per_s=" << (double(elements) / (s.median_ms / 1000.0));
    std::cout << os.str() << "\n";
}

template <typename T>
int run_bench(const std::string& op, int64_t n, int64_t c, int64_t hw,
              std::optional<int64_t> groups, int repeats, int warmup, uint64_t seed) {
    Tensor4<T> x(n, c, hw, hw);
    Rng r(seed);
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = T(r.uniform(-1.0, 1.0));
    std::cout << "op " << op << "  shape (" << n << "," << c << "," << hw << "," << hw
              << ")  repeats " << repeats << "\n";
    const std::vector<int64_t> grid =
        groups ? std::vector<int64_t>{*groups} : std::vector<int64_t>{2, 4, 7, 56};

    if (op == "lif_forward") {
        for (int64_t g : grid) {
            const LifConfig cfg{LifDirection::Vertical, g};
            const LifParams<T> p{};
            BenchStats s = time_op([&] { lif_forward(x, p, cfg); }, repeats, warmup);
            print_bench_row(op, std::to_string(g), s, x.numel());
        }
    } else if (op == "lif_backward") {
        for (int64_t g : grid) {
            const LifConfig cfg{LifDirection::Vertical, g};
            const LifParams<T> p{};
            LifForwardResult<T> fwd = lif_forward(x, p, cfg);
            Tensor4<T> d_r(n, c, hw, hw);
            d_r.fill(T(1));
            BenchStats s = time_op([&] { lif_backward(d_r, fwd.saved); }, repeats, warmup);
            print_bench_row(op, std::to_string(g), s, x.numel());
        }
    } else if (op == "dwconv3x3") {
        DwConvParams<T> p = make_dwconv<T>(c, Rng(seed).fork("k"));
        BenchStats s = time_op([&] { dwconv3x3(x, p); }, repeats, warmup);
        print_bench_row(op, "-", s, x.numel());
    } else if (op == "lif_module") {
        Rng init = Rng(seed).fork("bench-module");
        LifModuleParams<T> p;
        p.proj1 = make_linear<T>(c, c, init.fork("a"));
        p.norm1 = make_group_norm<T>(c, 1);
        p.dwconv = make_dwconv<T>(c, init.fork("b"));
        p.norm2 = make_group_norm<T>(c, 1);
        p.vtau = Tensor4<T>(1, 1, 1, 1);
        p.vvth = Tensor4<T>(1, 1, 1, 1);
        p.htau = Tensor4<T>(1, 1, 1, 1);
        p.hvth = Tensor4<T>(1, 1, 1, 1);
        p.vtau[0] = p.htau[0] = T(0.25);
        p.vvth[0] = p.hvth[0] = T(0.25);
        p.proj_v = make_linear<T>(c, c, init.fork("c"));
        p.proj_h = make_linear<T>(c, c, init.fork("d"));
        p.norm3 = make_group_norm<T>(c, 1);
        p.proj_out = make_linear<T>(c, c, init.fork("e"));
        for (int64_t g : grid) {
            BenchStats s =
                time_op([&] { lif_module_forward<T>(x, p, g, nullptr); }, repeats, warmup);
            print_bench_row(op, std::to_string(g), s, x.numel());
        }
    } else {
        throw std::invalid_argument(
            "unknown bench op '" + op +
            "' (expected lif_forward, lif_backward, dwconv3x3, or lif_module)");
    }
    return exit_ok;
}

// ---- export-features -------------------------------------------------------

template <typename T>
int run_export(const Checkpoint& ck, const std::string& image_path, const std::string& layer,
               const std::string& out_path) {
    ModelConfig cfg = model_config_from(ck);
    ModelParams<T> m = make_model<T>(cfg, 0);
    load_model(ck, m);

    const std::vector<std::string> names = capture_names(cfg);
    if (std::find(names.begin(), names.end(), layer) == names.end()) {
        std::string list;
        for (const std::string& n : names) list += "\n  " + n;
        throw std::invalid_argument("unknown layer '" + layer + "'; valid names:" + list);
    }

    AnyTensor raw = read_lift_file(image_path);
    Tensor4<T> img = std::visit(
        [](const auto& t) {
            Tensor4<T> out(t.n(), t.c(), t.h(), t.w());
            for (int64_t i = 0; i < t.numel(); ++i) out[i] = T(t[i]);
            return out;
        },
        raw);

    Tensor4<T> grabbed(0, 0, 0, 0);
    bool found = false;
    CaptureFn<T> cap = [&](const std::string& name, const Tensor4<T>& t) {
        if (name == layer) {
            grabbed = t;
            found = true;
        }
    };
    snn_mlp_forward<T>(img, m, false, Rng(0), nullptr, &cap);
    if (!found) throw std::runtime_error("capture missed layer " + layer);
    write_lift_file(out_path, grabbed);
    std::cout << "wrote " << layer << " shape " << grabbed.shape_str() << " to " << out_path
              << "\n";
    return exit_ok;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"group-LIF token-mixing backbone: verification, training, and inspection"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::simple);

    CommonOpts common;
    std::string dtype = "f32";
    auto add_common = [&](CLI::App* sub, bool with_dtype_flag) {
        sub->add_option("--config", common.config_path, "key=value config file");
        sub->add_option("--seed", common.seed, "RNG seed")->each([&](const std::string&) {
            common.seed_set = true;
        });
        sub->add_option("--threads", common.threads,
                        "worker threads (fallback: LIFMIXER_THREADS, then 1)");
        if (with_dtype_flag) {
            sub->add_option("--dtype", dtype, "element type")
                ->check(CLI::IsMember({"f32", "f64"}));
        }
    };

    // gradcheck
    auto* sc_grad = app.add_subcommand("gradcheck", "finite-difference checks for every operator");
    std::optional<int64_t> grad_groups;
    double grad_fault = 0.0;
    add_common(sc_grad, false);
    sc_grad->add_option("--groups", grad_groups, "add extra LIF cases with this group size");
    sc_grad->add_option("--fault", grad_fault, "perturb analytic gradients (negative control)")
        ->group("");

    // count
    auto* sc_count = app.add_subcommand("count", "parameter and FLOP counters");
    std::string count_variant = "tiny";
    add_common(sc_count, false);
    sc_count->add_option("variant", count_variant, "tiny | small | base | toy");

    // train
    auto* sc_train = app.add_subcommand("train", "train on synth or CIFAR-10 data");
    TrainCliOpts topts;
    DataOpts dopts;
    add_common(sc_train, true);
    auto* f_variant = sc_train->add_option("--variant", topts.variant, "model preset");
    auto* f_epochs = sc_train->add_option("--epochs", topts.epochs, "epochs to train");
    auto* f_batch = sc_train->add_option("--batch", topts.batch, "batch size");
    auto* f_lr = sc_train->add_option("--lr", topts.lr, "peak learning rate");
    auto* f_warmup = sc_train->add_option("--warmup-steps", topts.warmup_steps, "warmup steps");
    auto* f_metrics = sc_train->add_option("--metrics", topts.metrics_path, "CSV output path");
    auto* f_ck = sc_train->add_option("--checkpoint", topts.checkpoint_path, "checkpoint path");
    auto* f_augment = sc_train->add_flag("--augment", topts.augment, "horizontal-flip augmentation");
    auto* f_dataset = sc_train->add_option("--dataset", dopts.dataset, "synth | cifar10");
    auto* f_data_path = sc_train->add_option("--data-path", dopts.data_path, "CIFAR-10 batch file");
    auto* f_synth_n = sc_train->add_option("--synth-n", dopts.synth_n, "synthetic sample count");

    // eval
    auto* sc_eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_ck_path;
    int64_t eval_batch = 32;
    add_common(sc_eval, false);
    sc_eval->add_option("--checkpoint", eval_ck_path, "checkpoint to load")->required();
    auto* e_dataset = sc_eval->add_option("--dataset", dopts.dataset, "synth | cifar10");
    auto* e_data_path = sc_eval->add_option("--data-path", dopts.data_path, "CIFAR-10 batch file");
    auto* e_synth_n = sc_eval->add_option("--synth-n", dopts.synth_n, "synthetic sample count");
    auto* e_synth_seed =
        sc_eval->add_option("--synth-seed", dopts.synth_seed, "synthetic dataset seed");
    sc_eval->add_option("--batch", eval_batch, "evaluation batch size");

    // bench
    auto* sc_bench = app.add_subcommand("bench", "micro-benchmarks for the numerical kernels");
    std::string bench_op = "lif_forward";
    int64_t bench_n = 2, bench_c = 96, bench_hw = 56;
    std::optional<int64_t> bench_groups;
    int bench_repeats = 10, bench_warmup = 2;
    add_common(sc_bench, true);
    sc_bench->add_option("--op", bench_op, "lif_forward | lif_backward | dwconv3x3 | lif_module");
    sc_bench->add_option("--n", bench_n, "batch extent");
    sc_bench->add_option("--c", bench_c, "channel extent");
    sc_bench->add_option("--hw", bench_hw, "spatial extent");
    sc_bench->add_option("--groups", bench_groups, "single group size (default: 2,4,7,56 grid)");
    sc_bench->add_option("--repeats", bench_repeats, "timed repetitions");
    sc_bench->add_option("--warmup", bench_warmup, "untimed warmup repetitions");

    // export-features
    auto* sc_export = app.add_subcommand("export-features", "dump a named activation for an image");
    std::string export_ck, export_image, export_layer, export_out;
    add_common(sc_export, false);
    sc_export->add_option("--checkpoint", export_ck, "checkpoint to load")->required();
    sc_export->add_option("--image", export_image, "input image tensor file")->required();
    sc_export->add_option("--layer", export_layer, "activation name, e.g. stage0.block0.lif_out")
        ->required();
    sc_export->add_option("--out", export_out, "output tensor file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_usage;
    }

    try {
        KvFile kv;
        KvFile* kvp = nullptr;
        if (!common.config_path.empty()) {
            kv = read_kv_file(common.config_path);
            kvp = &kv;
        }
        resolve_seed(common, kvp);
        resolve_threads(common, kvp);

        if (sc_grad->parsed()) {
            if (kvp) kv.reject_unknown();
            return cmd_gradcheck(common.seed, grad_groups, grad_fault);
        }

        if (sc_count->parsed()) {
            return cmd_count(count_variant, common.config_path);
        }

        if (sc_train->parsed()) {
            ModelConfig mc;
            ChannelNorm norm;
            if (kvp) {
                if (auto v = kv.take("dtype"); v && !sc_train->count("--dtype")) dtype = *v;
                mc = model_config_from_kv_file(kv, f_variant->count() ? topts.variant : "toy");
                if (f_variant->count()) mc = variant_config(topts.variant);
                if (auto v = kv.take("epochs"); v && !f_epochs->count())
                    topts.epochs = parse_int(*v, "epochs");
                if (auto v = kv.take("batch"); v && !f_batch->count())
                    topts.batch = parse_int(*v, "batch");
                if (auto v = kv.take("lr"); v && !f_lr->count()) topts.lr = parse_real(*v, "lr");
                if (auto v = kv.take("warmup_steps"); v && !f_warmup->count())
                    topts.warmup_steps = parse_int(*v, "warmup_steps");
                if (auto v = kv.take("metrics_path"); v && !f_metrics->count())
                    topts.metrics_path = *v;
                if (auto v = kv.take("checkpoint_path"); v && !f_ck->count())
                    topts.checkpoint_path = *v;
                if (auto v = kv.take("augment"); v && !f_augment->count())
                    topts.augment = parse_bool(*v, "augment");
                if (auto v = kv.take("smoothing")) topts.smoothing = parse_real(*v, "smoothing");
                if (auto v = kv.take("norm_mean")) norm.mean = parse_triple(*v, "norm_mean");
                if (auto v = kv.take("norm_std")) norm.stdev = parse_triple(*v, "norm_std");
                DataOpts file_d;
                data_opts_from_kv(file_d, kv);
                if (!f_dataset->count()) dopts.dataset = file_d.dataset;
                if (!f_data_path->count()) dopts.data_path = file_d.data_path;
                if (!f_synth_n->count()) dopts.synth_n = file_d.synth_n;
                dopts.synth_classes = file_d.synth_classes;
                dopts.synth_seed = file_d.synth_seed;
                kv.reject_unknown();
            } else {
                mc = variant_config(topts.variant);
            }
            if (dopts.dataset == "synth") mc.num_classes = dopts.synth_classes;
            if (dopts.dataset == "cifar10") mc.num_classes = 10;
            if (dtype == "f64") return run_train<double>(common, topts, dopts, mc, norm);
            return run_train<float>(common, topts, dopts, mc, norm);
        }

        if (sc_eval->parsed()) {
            ChannelNorm norm;
            if (kvp) {
                if (auto v = kv.take("norm_mean")) norm.mean = parse_triple(*v, "norm_mean");
                if (auto v = kv.take("norm_std")) norm.stdev = parse_triple(*v, "norm_std");
                DataOpts file_d;
                data_opts_from_kv(file_d, kv);
                if (!e_dataset->count()) dopts.dataset = file_d.dataset;
                if (!e_data_path->count()) dopts.data_path = file_d.data_path;
                if (!e_synth_n->count()) dopts.synth_n = file_d.synth_n;
                if (!e_synth_seed->count()) dopts.synth_seed = file_d.synth_seed;
                dopts.synth_classes = file_d.synth_classes;
                kv.reject_unknown();
            }
            const Checkpoint ck = read_checkpoint_file(eval_ck_path);
            if (ck.config_at("dtype") == "f64") {
                return run_eval<double>(ck, dopts, norm, eval_batch);
            }
            return run_eval<float>(ck, dopts, norm, eval_batch);
        }

        if (sc_bench->parsed()) {
            if (kvp) kv.reject_unknown();
            if (bench_repeats < 1) throw std::invalid_argument("bench: repeats must be >= 1");
            if (dtype == "f64") {
                return run_bench<double>(bench_op, bench_n, bench_c, bench_hw, bench_groups,
                                         bench_repeats, bench_warmup, common.seed);
            }
            return run_bench<float>(bench_op, bench_n, bench_c, bench_hw, bench_groups,
                                    bench_repeats, bench_warmup, common.seed);
        }

        if (sc_export->parsed()) {
            if (kvp) kv.reject_unknown();
            const Checkpoint ck = read_checkpoint_file(export_ck);
            if (ck.config_at("dtype") == "f64") {
                return run_export<double>(ck, export_image, export_layer, export_out);
            }
            return run_export<float>(ck, export_image, export_layer, export_out);
        }

        std::cerr << "no subcommand selected\n";
        return exit_usage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_usage;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_io;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_check_failed;
    }
}

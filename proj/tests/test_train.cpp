#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "lifmixer/train.hpp"

using namespace lifmixer;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/lifmixer_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(bool(f));
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

ModelConfig small_cfg() {
    ModelConfig cfg;
    cfg.embed_dim = 16;
    cfg.depths = {1, 1, 1, 1};
    cfg.num_classes = 3;
    cfg.drop_path = 0.0;
    return cfg;
}

TrainConfig quick_cfg(uint64_t seed) {
    TrainConfig cfg;
    cfg.model = small_cfg();
    cfg.batch = 8;
    cfg.warmup_steps = 2;
    cfg.seed = seed;
    return cfg;
}

// Bitwise equality across every parameter of two models.
template <typename T>
bool params_identical(ModelParams<T>& a, ModelParams<T>& b) {
    auto ba = make_bank(a, a);
    auto bb = make_bank(b, b);
    REQUIRE(ba.size() == bb.size());
    for (size_t i = 0; i < ba.size(); ++i) {
        if (max_abs_diff(*ba[i].value, *bb[i].value) != T(0)) return false;
    }
    return true;
}

} // namespace

TEST_CASE("zero learning rate leaves parameters bit-identical") {
    Dataset ds = synth_dataset(3, 16, 2);
    TrainConfig cfg = quick_cfg(1);
    cfg.opt.lr = 0.0;
    TrainState<float> st = make_train_state<float>(cfg.model, 3);
    TrainState<float> before = make_train_state<float>(cfg.model, 3);
    train_loop(cfg, ds, 1, st);
    CHECK(params_identical(st.model, before.model));
    CHECK(st.step == 2);
    CHECK(st.epoch == 1);
}

TEST_CASE("metrics CSV carries one header and one row per step") {
    Dataset ds = synth_dataset(3, 16, 4);
    TrainConfig cfg = quick_cfg(5);
    TempFile csv("metrics.csv");
    cfg.metrics_path = csv.path;
    TrainState<float> st = make_train_state<float>(cfg.model, 6);
    TrainHistory hist = train_loop(cfg, ds, 2, st);
    CHECK(hist.steps.size() == 4); // 16 samples / batch 8 * 2 epochs
    CHECK(hist.epochs.size() == 2);

    std::istringstream lines(slurp(csv.path));
    std::string line;
    REQUIRE(std::getline(lines, line));
    CHECK(line == "epoch,step,loss,acc,lr");
    size_t rows = 0;
    while (std::getline(lines, line)) {
        CHECK(line == metrics_line(hist.steps[rows]));
        ++rows;
    }
    CHECK(rows == hist.steps.size());

    // Learning rate column follows the shared schedule.
    const Schedule sched{cfg.opt.lr, cfg.warmup_steps, 4};
    for (const StepRecord& r : hist.steps) CHECK(r.lr == cosine_lr(r.step, sched));
}

TEST_CASE("same seed reproduces the run bit for bit") {
    Dataset ds = synth_dataset(3, 16, 7);
    TempFile csv_a("run_a.csv"), csv_b("run_b.csv");

    TrainConfig cfg = quick_cfg(8);
    cfg.augment = true; // exercise flip streams too
    cfg.model.dropout = 0.1;
    cfg.metrics_path = csv_a.path;
    TrainState<float> sa = make_train_state<float>(cfg.model, 9);
    train_loop(cfg, ds, 2, sa);

    cfg.metrics_path = csv_b.path;
    TrainState<float> sb = make_train_state<float>(cfg.model, 9);
    train_loop(cfg, ds, 2, sb);

    CHECK(slurp(csv_a.path) == slurp(csv_b.path));
    CHECK(params_identical(sa.model, sb.model));

    // A different seed diverges.
    TrainConfig other = cfg;
    other.seed = 1234;
    other.metrics_path.clear();
    TrainState<float> sc = make_train_state<float>(other.model, 9);
    train_loop(other, ds, 2, sc);
    CHECK(!params_identical(sa.model, sc.model));
}

TEST_CASE("resume from a checkpoint replays the uninterrupted run exactly") {
    Dataset ds = synth_dataset(3, 16, 10);

    TrainConfig cfg = quick_cfg(11);
    TempFile full_csv("full.csv"), part_csv("part.csv"), ck("resume.ck");

    cfg.metrics_path = full_csv.path;
    TrainState<float> full = make_train_state<float>(cfg.model, 12);
    TrainHistory fh = train_loop(cfg, ds, 4, full);

    cfg.metrics_path = part_csv.path;
    cfg.checkpoint_path = ck.path;
    TrainState<float> part = make_train_state<float>(cfg.model, 12);
    train_loop(cfg, ds, 4, part, 2); // interrupt after epoch 2 of a 4-epoch plan

    TrainState<float> resumed = load_train_state<float>(ck.path);
    CHECK(resumed.step == 4);
    CHECK(resumed.epoch == 2);
    cfg.checkpoint_path.clear();
    TrainHistory rh = train_loop(cfg, ds, 4, resumed);

    CHECK(slurp(full_csv.path) == slurp(part_csv.path));
    CHECK(params_identical(full.model, resumed.model));
    REQUIRE(rh.steps.size() == 4);
    for (size_t i = 0; i < rh.steps.size(); ++i) {
        CHECK(metrics_line(rh.steps[i]) == metrics_line(fh.steps[i + 4]));
    }
}

TEST_CASE("train state round-trips moments and counters bit-exactly") {
    Dataset ds = synth_dataset(3, 8, 13);
    TrainConfig cfg = quick_cfg(14);
    TrainState<float> st = make_train_state<float>(cfg.model, 15);
    train_loop(cfg, ds, 2, st);

    TempFile ck("state.ck");
    save_train_state(ck.path, st);
    TrainState<float> back = load_train_state<float>(ck.path);
    CHECK(back.step == st.step);
    CHECK(back.epoch == st.epoch);
    CHECK(params_identical(st.model, back.model));
    CHECK(params_identical(st.opt_m, back.opt_m));
    CHECK(params_identical(st.opt_v, back.opt_v));
}

TEST_CASE("non-finite loss aborts naming the step") {
    Dataset ds = synth_dataset(3, 8, 16);
    TrainConfig cfg = quick_cfg(17);
    TrainState<float> st = make_train_state<float>(cfg.model, 18);
    st.model.head.weight[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_WITH_AS(train_loop(cfg, ds, 1, st), doctest::Contains("non-finite loss at step 0"),
                         std::runtime_error);
}

TEST_CASE("loss falls when repeatedly fitting one small batch") {
    Dataset ds = synth_dataset(3, 8, 19);
    TrainConfig cfg = quick_cfg(20);
    cfg.smoothing = 0.0;
    cfg.warmup_steps = 0;
    TrainState<float> st = make_train_state<float>(cfg.model, 21);
    TrainHistory hist = train_loop(cfg, ds, 25, st); // one step per epoch
    REQUIRE(hist.steps.size() == 25);
    CHECK(hist.steps.back().loss < hist.steps.front().loss * 0.5);
}

TEST_CASE("evaluate scores a bias-only classifier by its favored class") {
    ModelConfig mc = small_cfg();
    ModelParams<float> m = make_model<float>(mc, 22);
    ModelParams<float> g = zeros_clone(m);
    for (BankEntry<float>& e : make_bank(m, g)) e.value->fill(0.0f);
    m.head.bias[1] = 1.0f;

    Dataset ds = synth_dataset(3, 30, 23);
    int64_t ones = 0;
    for (int64_t y : ds.labels) ones += (y == 1);
    const double acc = evaluate(ds, m, ChannelNorm{}, 7);
    CHECK(acc == doctest::Approx(double(ones) / 30.0));
}

TEST_CASE("train loop validates its arguments") {
    Dataset ds = synth_dataset(3, 8, 24);
    TrainConfig cfg = quick_cfg(25);
    TrainState<float> st = make_train_state<float>(cfg.model, 26);
    st.epoch = 5;
    CHECK_THROWS_AS(train_loop(cfg, ds, 4, st), std::invalid_argument);
    st.epoch = 0;
    cfg.batch = 0;
    CHECK_THROWS_AS(train_loop(cfg, ds, 1, st), std::invalid_argument);
    cfg.batch = 8;
    Dataset empty;
    empty.images = Tensor4<float>(0, 3, 32, 32);
    empty.num_classes = 3;
    CHECK_THROWS_AS(train_loop(cfg, empty, 1, st), std::invalid_argument);
}

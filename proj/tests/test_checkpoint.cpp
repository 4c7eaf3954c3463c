#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <sstream>
#include <string>

#include "lifmixer/checkpoint.hpp"
#include "lifmixer/model.hpp"
#include "lifmixer/rng.hpp"

using namespace lifmixer;

namespace {

Tensor4<double> noisy(int64_t n, int64_t c, int64_t h, int64_t w, uint64_t seed) {
    Tensor4<double> t(n, c, h, w);
    Rng r(seed);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = r.uniform(-3.0, 3.0);
    return t;
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/lifmixer_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

} // namespace

TEST_CASE("checkpoint stream round-trip is bit-exact") {
    Checkpoint ck;
    ck.set_config("alpha", "1");
    ck.set_config("note", "value with = sign kept whole");
    Tensor4<double> a = noisy(2, 3, 4, 5, 1);
    Tensor4<float> b(1, 2, 2, 2);
    Rng r(2);
    for (int64_t i = 0; i < b.numel(); ++i) b[i] = float(r.uniform(-1.0, 1.0));
    ck.tensors.emplace_back("weights", a);
    ck.tensors.emplace_back("small", b);

    std::ostringstream os(std::ios::binary);
    write_checkpoint(os, ck);
    std::istringstream is(os.str(), std::ios::binary);
    Checkpoint back = read_checkpoint(is);

    CHECK(back.config_at("alpha") == "1");
    CHECK(back.config_at("note") == "value with = sign kept whole");
    REQUIRE(back.tensors.size() == 2);
    const auto& a2 = std::get<Tensor4<double>>(*back.find_tensor("weights"));
    const auto& b2 = std::get<Tensor4<float>>(*back.find_tensor("small"));
    REQUIRE(a2.same_shape(a));
    REQUIRE(b2.same_shape(b));
    CHECK(std::memcmp(a2.data(), a.data(), size_t(a.numel()) * sizeof(double)) == 0);
    CHECK(std::memcmp(b2.data(), b.data(), size_t(b.numel()) * sizeof(float)) == 0);
}

TEST_CASE("checkpoint config helpers") {
    Checkpoint ck;
    CHECK(!ck.has_config("x"));
    CHECK_THROWS_WITH_AS(ck.config_at("x"), doctest::Contains("missing key 'x'"),
                         std::runtime_error);
    ck.set_config("x", "1");
    ck.set_config("x", "2"); // overwrite, not append
    CHECK(ck.config.size() == 1);
    CHECK(ck.config_at("x") == "2");
    CHECK(ck.find_tensor("nope") == nullptr);
}

TEST_CASE("checkpoint reader rejects damage") {
    Checkpoint ck;
    ck.set_config("k", "v");
    ck.tensors.emplace_back("t", noisy(1, 1, 2, 2, 3));
    std::ostringstream os(std::ios::binary);
    write_checkpoint(os, ck);
    const std::string good = os.str();

    {
        std::string bad = good;
        bad[0] = 'X';
        std::istringstream is(bad, std::ios::binary);
        CHECK_THROWS_WITH_AS(read_checkpoint(is), doctest::Contains("bad magic"),
                             std::runtime_error);
    }
    {
        std::istringstream is(std::string("LIFCKPT 1\n[config]\nk=v\n"), std::ios::binary);
        CHECK_THROWS_WITH_AS(read_checkpoint(is), doctest::Contains("[data]"),
                             std::runtime_error);
    }
    {
        // Truncate inside the tensor payload.
        std::string bad = good.substr(0, good.size() - 5);
        std::istringstream is(bad, std::ios::binary);
        CHECK_THROWS(read_checkpoint(is));
    }
    {
        // Manifest row whose shape disagrees with the stored dump.
        const size_t at = good.find("t f64 1 1 2 2");
        REQUIRE(at != std::string::npos);
        std::string bad = good;
        bad[at + 6] = '9'; // n: 1 -> 9
        std::istringstream is(bad, std::ios::binary);
        CHECK_THROWS_WITH_AS(read_checkpoint(is), doctest::Contains("disagrees"),
                             std::runtime_error);
    }
    {
        std::string bad = good;
        const size_t at = bad.find(" f64 ");
        bad.replace(at, 5, " f99 ");
        std::istringstream is(bad, std::ios::binary);
        CHECK_THROWS_WITH_AS(read_checkpoint(is), doctest::Contains("unknown dtype"),
                             std::runtime_error);
    }

    CHECK_THROWS_WITH_AS(read_checkpoint_file("/nonexistent/ck.bin"),
                         doctest::Contains("/nonexistent/ck.bin"), std::runtime_error);
}

TEST_CASE("tensor names with whitespace are refused at write time") {
    Checkpoint ck;
    ck.tensors.emplace_back("bad name", noisy(1, 1, 1, 1, 4));
    std::ostringstream os(std::ios::binary);
    CHECK_THROWS_WITH_AS(write_checkpoint(os, ck), doctest::Contains("whitespace"),
                         std::runtime_error);
}

TEST_CASE("real number text round-trips exactly") {
    Rng r(5);
    for (int i = 0; i < 200; ++i) {
        const double v = (r.uniform(-1.0, 1.0)) * std::pow(10.0, r.uniform(-8.0, 8.0));
        CHECK(parse_real(format_real(v), "probe") == v);
    }
    CHECK(parse_real("0.25", "probe") == 0.25);
    CHECK_THROWS_WITH_AS(parse_real("1.5x", "probe"), doctest::Contains("probe"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_int("7.5", "count"), doctest::Contains("count"),
                         std::runtime_error);
    CHECK(parse_int("-12", "count") == -12);
}

TEST_CASE("model config survives the key-value form") {
    ModelConfig cfg = ModelConfig::toy();
    cfg.drop_path = 0.1234567891234;
    cfg.mlp_ratio = 3.5;
    Checkpoint ck;
    ck.config = model_config_kv(cfg);
    ModelConfig back = model_config_from(ck);
    CHECK(back.patch == cfg.patch);
    CHECK(back.embed_dim == cfg.embed_dim);
    CHECK(back.depths == cfg.depths);
    CHECK(back.groups == cfg.groups);
    CHECK(back.mlp_ratio == cfg.mlp_ratio);
    CHECK(back.num_classes == cfg.num_classes);
    CHECK(back.drop_path == cfg.drop_path);
    CHECK(back.dropout == cfg.dropout);
    CHECK(back.norm_groups == cfg.norm_groups);
    CHECK(back.tau_init == cfg.tau_init);
    CHECK(back.vth_init == cfg.vth_init);

    ck.set_config("depths", "1,2");
    CHECK_THROWS_WITH_AS(model_config_from(ck), doctest::Contains("4 values"),
                         std::runtime_error);
}

TEST_CASE("model snapshot reloads into identical behavior") {
    ModelConfig cfg = ModelConfig::toy();
    ModelParams<float> m = make_model<float>(cfg, 41);
    TempFile tmp("model.ck");
    write_checkpoint_file(tmp.path, snapshot_model(m));

    Checkpoint ck = read_checkpoint_file(tmp.path);
    ModelConfig cfg2 = model_config_from(ck);
    ModelParams<float> m2 = make_model<float>(cfg2, 999); // different init, fully overwritten
    load_model(ck, m2);

    Tensor4<float> img(1, 3, 32, 32);
    Rng r(42);
    for (int64_t i = 0; i < img.numel(); ++i) img[i] = float(r.uniform(0.0, 1.0));
    Tensor4<float> la = snn_mlp_forward(img, m, false, Rng(7));
    Tensor4<float> lb = snn_mlp_forward(img, m2, false, Rng(7));
    CHECK(max_abs_diff(la, lb) == 0.0f);
}

TEST_CASE("model load reports missing, mistyped, and misshapen tensors") {
    ModelConfig cfg = ModelConfig::toy();
    ModelParams<float> m = make_model<float>(cfg, 43);
    Checkpoint ck = snapshot_model(m);

    ModelParams<float> dst = make_model<float>(cfg, 44);
    {
        Checkpoint c2 = ck;
        c2.tensors.erase(c2.tensors.begin() + 1);
        CHECK_THROWS_WITH_AS(load_model(c2, dst), doctest::Contains("missing tensor"),
                             std::runtime_error);
    }
    {
        Checkpoint c2 = ck;
        c2.tensors[0].second = Tensor4<double>(1, 1, 1, 1);
        CHECK_THROWS_WITH_AS(load_model(c2, dst), doctest::Contains("dtype"),
                             std::runtime_error);
    }
    {
        Checkpoint c2 = ck;
        c2.tensors[0].second = Tensor4<float>(1, 1, 1, 1);
        CHECK_THROWS_WITH_AS(load_model(c2, dst), doctest::Contains("shape"),
                             std::runtime_error);
    }
    {
        ModelParams<double> wrong = make_model<double>(cfg, 45);
        CHECK_THROWS_WITH_AS(load_model(ck, wrong), doctest::Contains("expected f64"),
                             std::runtime_error);
    }
    // Extra tensors (e.g. optimizer moments) are tolerated.
    Checkpoint c3 = ck;
    c3.tensors.emplace_back("opt.m/extra", Tensor4<float>(1, 1, 1, 1));
    load_model(c3, dst);
    Tensor4<float> img(1, 3, 32, 32);
    img.fill(0.5f);
    CHECK(max_abs_diff(snn_mlp_forward(img, dst, false, Rng(1)),
                       snn_mlp_forward(img, m, false, Rng(1))) == 0.0f);
}

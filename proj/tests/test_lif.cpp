#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "lifmixer/lif.hpp"
#include "lifmixer/rng.hpp"
#include "lifmixer/tensor.hpp"

using namespace lifmixer;

namespace {

template <typename T>
Tensor4<T> random_tensor(int64_t n, int64_t c, int64_t h, int64_t w, uint64_t seed) {
    Tensor4<T> t(n, c, h, w);
    Rng r(seed);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(r.uniform(-1.0, 1.0));
    return t;
}

// Runs the plain per-chain reference over a whole tensor, chain by chain,
// and compares against the vectorized kernel.
template <typename T>
void check_against_oracle(const Tensor4<T>& x, const LifParams<T>& p, const LifConfig& cfg,
                          T tol) {
    LifForwardResult<T> got = lif_forward(x, p, cfg);
    const bool vertical = cfg.direction == LifDirection::Vertical;
    const int64_t extent = vertical ? x.h() : x.w();
    const int64_t cross = vertical ? x.w() : x.h();
    for (int64_t n = 0; n < x.n(); ++n)
        for (int64_t c = 0; c < x.c(); ++c)
            for (int64_t q = 0; q < cross; ++q)
                for (int64_t start = 0; start < extent; start += cfg.groups) {
                    const int64_t len = std::min(cfg.groups, extent - start);
                    std::vector<T> chain(static_cast<size_t>(len));
                    for (int64_t t = 0; t < len; ++t)
                        chain[size_t(t)] = vertical ? x(n, c, start + t, q) : x(n, c, q, start + t);
                    LifChainTrace<T> tr = lif_oracle_scalar(chain, p.tau, p.v_th);
                    for (int64_t t = 0; t < len; ++t) {
                        const T r = vertical ? got.r(n, c, start + t, q) : got.r(n, c, q, start + t);
                        const T u = vertical ? got.saved.u(n, c, start + t, q)
                                             : got.saved.u(n, c, q, start + t);
                        const T o = vertical ? got.saved.o(n, c, start + t, q)
                                             : got.saved.o(n, c, q, start + t);
                        if (tol == T(0)) {
                            CHECK(r == tr.r[size_t(t)]);
                            CHECK(u == tr.u[size_t(t)]);
                        } else {
                            CHECK(std::abs(r - tr.r[size_t(t)]) <= tol);
                            CHECK(std::abs(u - tr.u[size_t(t)]) <= tol);
                        }
                        CHECK(o == T(tr.o[size_t(t)]));
                    }
                }
}

} // namespace

TEST_CASE("worked four-step chain: forward trace") {
    // tau = v_th = 0.25, inputs 0.5, 0.1, 0.1, 0.3 down a single column.
    const std::vector<double> chain = {0.5, 0.1, 0.1, 0.3};
    LifChainTrace<double> tr = lif_oracle_scalar(chain, 0.25, 0.25);
    const std::vector<double> want_u = {0.5, 0.1, 0.125, 0.33125};
    const std::vector<double> want_r = {0.5, 0.25, 0.25, 0.33125};
    const std::vector<uint8_t> want_o = {1, 0, 0, 1};
    for (size_t t = 0; t < 4; ++t) {
        CHECK(tr.u[t] == doctest::Approx(want_u[t]).epsilon(1e-12));
        CHECK(tr.r[t] == doctest::Approx(want_r[t]).epsilon(1e-12));
        CHECK(tr.o[t] == want_o[t]);
    }

    // Same chain through the tensor kernel as a 4-row column.
    Tensor4<double> x(1, 1, 4, 1);
    for (int64_t t = 0; t < 4; ++t) x(0, 0, t, 0) = chain[size_t(t)];
    LifForwardResult<double> fwd = lif_forward(x, {}, {LifDirection::Vertical, 4});
    for (int64_t t = 0; t < 4; ++t) {
        CHECK(fwd.r(0, 0, t, 0) == doctest::Approx(want_r[size_t(t)]).epsilon(1e-12));
        CHECK(fwd.saved.u(0, 0, t, 0) == doctest::Approx(want_u[size_t(t)]).epsilon(1e-12));
        CHECK(fwd.saved.o(0, 0, t, 0) == double(want_o[size_t(t)]));
    }
}

TEST_CASE("worked four-step chain: analytic gradients") {
    Tensor4<double> x(1, 1, 4, 1);
    const double chain[4] = {0.5, 0.1, 0.1, 0.3};
    for (int64_t t = 0; t < 4; ++t) x(0, 0, t, 0) = chain[t];
    LifForwardResult<double> fwd = lif_forward(x, {}, {LifDirection::Vertical, 4});

    Tensor4<double> d_r(1, 1, 4, 1);
    d_r.fill(1.0);
    LifGrads<double> g = lif_backward(d_r, fwd.saved);

    const double want_dx[4] = {1.0, 0.0625, 0.25, 1.0};
    for (int64_t t = 0; t < 4; ++t)
        CHECK(g.d_input(0, 0, t, 0) == doctest::Approx(want_dx[t]).epsilon(1e-12));
    // Two sub-threshold steps leak into their successors:
    // 0.25 * 0.1 + 1.0 * 0.125.
    CHECK(g.d_tau == doctest::Approx(0.15).epsilon(1e-12));
    // Both clamped outputs move one-for-one with the threshold.
    CHECK(g.d_vth == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("threshold comparison is strictly greater-than") {
    const std::vector<double> chain = {0.25, 0.25 + 1e-12};
    LifChainTrace<double> tr = lif_oracle_scalar(chain, 0.25, 0.25);
    CHECK(tr.o[0] == 0); // u == v_th does not fire
    CHECK(tr.o[1] == 1);
    CHECK(tr.r[0] == 0.25);
}

TEST_CASE("classical binary variant emits the spike train") {
    const std::vector<double> chain = {0.5, 0.1, 0.1, 0.3};
    std::vector<uint8_t> spikes = lif_classical_binary(chain, 0.25, 0.25);
    CHECK(spikes == std::vector<uint8_t>{1, 0, 0, 1});
}

TEST_CASE("vectorized kernel matches the per-chain reference exactly") {
    LifParams<double> p;
    for (int64_t groups : {1, 3, 4, 7, 100}) {
        for (LifDirection dir : {LifDirection::Vertical, LifDirection::Horizontal}) {
            auto x = random_tensor<double>(2, 3, 7, 5, 1000 + uint64_t(groups));
            check_against_oracle<double>(x, p, {dir, groups}, 0.0);
        }
    }
    // f32 runs the identical operation order, so it also matches bit for bit.
    LifParams<float> pf;
    auto xf = random_tensor<float>(2, 2, 6, 6, 77);
    check_against_oracle<float>(xf, pf, {LifDirection::Vertical, 4}, 0.0f);
    check_against_oracle<float>(xf, pf, {LifDirection::Horizontal, 4}, 0.0f);
}

TEST_CASE("outputs never drop below the threshold floor") {
    auto x = random_tensor<double>(2, 4, 9, 9, 31);
    LifParams<double> p;
    p.tau = 0.5;
    p.v_th = 0.3;
    for (LifDirection dir : {LifDirection::Vertical, LifDirection::Horizontal}) {
        LifForwardResult<double> fwd = lif_forward(x, p, {dir, 4});
        CHECK(min_element(fwd.r) >= 0.3);
        // Fired positions pass the membrane through; clamped ones sit at v_th.
        for (int64_t i = 0; i < x.numel(); ++i) {
            if (fwd.saved.o[i] == 1.0) {
                CHECK(fwd.r[i] == fwd.saved.u[i]);
                CHECK(fwd.saved.u[i] > 0.3);
            } else {
                CHECK(fwd.r[i] == 0.3);
                CHECK(fwd.saved.u[i] <= 0.3);
            }
        }
    }
}

TEST_CASE("group size one clamps every element independently") {
    auto x = random_tensor<double>(1, 2, 5, 5, 17);
    LifParams<double> p;
    LifForwardResult<double> fwd = lif_forward(x, p, {LifDirection::Vertical, 1});
    for (int64_t i = 0; i < x.numel(); ++i) {
        CHECK(fwd.r[i] == (x[i] > p.v_th ? x[i] : p.v_th));
        CHECK(fwd.saved.u[i] == x[i]);
    }
}

TEST_CASE("oversized group degenerates to one chain per line") {
    auto x = random_tensor<double>(1, 1, 6, 4, 23);
    LifParams<double> p;
    LifForwardResult<double> a = lif_forward(x, p, {LifDirection::Vertical, 6});
    LifForwardResult<double> b = lif_forward(x, p, {LifDirection::Vertical, 1000});
    CHECK(max_abs_diff(a.r, b.r) == 0.0);
    CHECK(max_abs_diff(a.saved.u, b.saved.u) == 0.0);
}

TEST_CASE("blocks are independent of each other") {
    auto x = random_tensor<double>(1, 1, 8, 3, 41);
    LifParams<double> p;
    LifConfig cfg{LifDirection::Vertical, 4};
    LifForwardResult<double> base = lif_forward(x, p, cfg);
    // Poke a value inside the second block; the first block must not move.
    Tensor4<double> y = x;
    y(0, 0, 5, 1) += 0.7;
    LifForwardResult<double> poked = lif_forward(y, p, cfg);
    for (int64_t k = 0; k < 4; ++k)
        for (int64_t l = 0; l < 3; ++l)
            CHECK(poked.r(0, 0, k, l) == base.r(0, 0, k, l));
}

TEST_CASE("chains do not mix across the cross axis") {
    auto x = random_tensor<double>(1, 1, 6, 5, 47);
    LifParams<double> p;
    LifConfig cfg{LifDirection::Vertical, 3};
    LifForwardResult<double> base = lif_forward(x, p, cfg);
    Tensor4<double> y = x;
    for (int64_t k = 0; k < 6; ++k) y(0, 0, k, 2) += 1.0; // disturb one column
    LifForwardResult<double> poked = lif_forward(y, p, cfg);
    for (int64_t k = 0; k < 6; ++k)
        for (int64_t l = 0; l < 5; ++l)
            if (l != 2) CHECK(poked.r(0, 0, k, l) == base.r(0, 0, k, l));
}

TEST_CASE("horizontal equals vertical on the transposed tensor") {
    auto x = random_tensor<double>(2, 2, 5, 7, 53);
    Tensor4<double> xt(2, 2, 7, 5);
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t c = 0; c < 2; ++c)
            for (int64_t k = 0; k < 5; ++k)
                for (int64_t l = 0; l < 7; ++l) xt(n, c, l, k) = x(n, c, k, l);
    LifParams<double> p;
    LifForwardResult<double> hor = lif_forward(x, p, {LifDirection::Horizontal, 4});
    LifForwardResult<double> ver = lif_forward(xt, p, {LifDirection::Vertical, 4});
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t c = 0; c < 2; ++c)
            for (int64_t k = 0; k < 5; ++k)
                for (int64_t l = 0; l < 7; ++l) CHECK(hor.r(n, c, k, l) == ver.r(n, c, l, k));
}

TEST_CASE("saved fire mask agrees with recomputation from the membrane") {
    auto x = random_tensor<double>(2, 3, 6, 6, 59);
    LifParams<double> p;
    LifForwardResult<double> fwd = lif_forward(x, p, {LifDirection::Horizontal, 4});
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(fwd.saved.o[i] == (fwd.saved.u[i] > p.v_th ? 1.0 : 0.0));
}

TEST_CASE("forward rejects bad inputs with located errors") {
    Tensor4<double> x(1, 1, 2, 2);
    x(0, 0, 1, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(lif_forward(x, LifParams<double>{}, LifConfig{}),
                         doctest::Contains("flat index 2"), std::invalid_argument);
    Tensor4<double> ok(1, 1, 2, 2);
    CHECK_THROWS_AS(lif_forward(ok, LifParams<double>{}, LifConfig{LifDirection::Vertical, 0}),
                    std::invalid_argument);
}

TEST_CASE("backward rejects mismatched upstream shapes") {
    auto x = random_tensor<double>(1, 1, 4, 4, 61);
    LifForwardResult<double> fwd = lif_forward(x, LifParams<double>{}, LifConfig{});
    Tensor4<double> wrong(1, 1, 4, 5);
    CHECK_THROWS_AS(lif_backward(wrong, fwd.saved), std::invalid_argument);
}

TEST_CASE("analytic gradients match finite differences") {
    for (uint64_t seed : {1u, 2u, 3u}) {
        LifCheckReport rep = lif_forward_backward_check(2, 2, 6, 5,
                                                        {LifDirection::Vertical, 4}, seed);
        CHECK(rep.err_input < 1e-5);
        CHECK(rep.err_tau < 1e-5);
        CHECK(rep.err_vth < 1e-5);
    }
    LifCheckReport hrep = lif_forward_backward_check(1, 3, 5, 8,
                                                     {LifDirection::Horizontal, 3}, 4);
    CHECK(hrep.max_err() < 1e-5);
}

TEST_CASE("gradient check flags an injected fault") {
    LifCheckOptions opt;
    opt.fault = 1e-2;
    LifCheckReport rep = lif_forward_backward_check(1, 1, 4, 4, {LifDirection::Vertical, 4}, 8,
                                                    LifParams<double>{}, opt);
    CHECK(rep.max_err() > 1e-5);
}

TEST_CASE("empty tensors pass through without work") {
    Tensor4<double> x(0, 3, 4, 4);
    LifForwardResult<double> fwd = lif_forward(x, LifParams<double>{}, LifConfig{});
    CHECK(fwd.r.numel() == 0);
    Tensor4<double> d(0, 3, 4, 4);
    LifGrads<double> g = lif_backward(d, fwd.saved);
    CHECK(g.d_tau == 0.0);
    CHECK(g.d_vth == 0.0);
}

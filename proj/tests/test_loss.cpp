#include <doctest.h>

#include <cmath>
#include <vector>

#include "lifmixer/loss.hpp"
#include "lifmixer/rng.hpp"

using namespace lifmixer;

TEST_CASE("uniform logits with no smoothing cost exactly ln K") {
    for (int64_t k : {2, 3, 10, 100}) {
        Tensor4<double> z(2, k, 1, 1);
        z.fill(0.7); // any constant -- softmax is shift invariant
        LossResult<double> r = cross_entropy_ls(z, {0, k - 1}, 0.0);
        CHECK(r.loss == doctest::Approx(std::log(double(k))).epsilon(1e-12));
    }
}

TEST_CASE("confident correct logits drive the unsmoothed loss to zero") {
    Tensor4<double> z(1, 4, 1, 1);
    z.fill(-50.0);
    z(0, 2, 0, 0) = 50.0;
    LossResult<double> r = cross_entropy_ls(z, {2}, 0.0);
    CHECK(r.loss < 1e-12);
    CHECK(r.loss >= 0.0);
}

TEST_CASE("smoothing spreads the target and lifts the floor") {
    Tensor4<double> z(1, 5, 1, 1);
    z.fill(-30.0);
    z(0, 1, 0, 0) = 30.0;
    const double s = 0.1;
    LossResult<double> r = cross_entropy_ls(z, {1}, s);
    // With p(true) ~ 1: loss ~ -[0.9*ln 1 + 4*(0.025)*ln ~e^-60] = 0.1*60.
    CHECK(r.loss == doctest::Approx(6.0).epsilon(1e-6));

    // Gradient rows sum to zero (softmax and target both sum to one).
    double row = 0.0;
    for (int64_t j = 0; j < 5; ++j) row += r.d_logits(0, j, 0, 0);
    CHECK(std::abs(row) < 1e-15);
}

TEST_CASE("hand-worked two-class case") {
    Tensor4<double> z(1, 2, 1, 1);
    z(0, 0, 0, 0) = 1.0;
    z(0, 1, 0, 0) = -1.0;
    // softmax = (e^2/(1+e^2), 1/(1+e^2)); target (0.9, 0.1) at s = 0.1
    const double p0 = std::exp(2.0) / (1.0 + std::exp(2.0));
    const double want = -(0.9 * std::log(p0) + 0.1 * std::log(1.0 - p0));
    LossResult<double> r = cross_entropy_ls(z, {0}, 0.1);
    CHECK(r.loss == doctest::Approx(want).epsilon(1e-12));
    CHECK(r.d_logits(0, 0, 0, 0) == doctest::Approx(p0 - 0.9).epsilon(1e-12));
    CHECK(r.d_logits(0, 1, 0, 0) == doctest::Approx((1.0 - p0) - 0.1).epsilon(1e-12));
}

TEST_CASE("gradient matches finite differences") {
    Rng rng(11);
    Tensor4<double> z(3, 7, 1, 1);
    for (int64_t i = 0; i < z.numel(); ++i) z[i] = rng.uniform(-2.0, 2.0);
    const std::vector<int64_t> y{1, 6, 0};
    const double s = 0.1;
    LossResult<double> r = cross_entropy_ls(z, y, s);
    const double h = 1e-6;
    double worst = 0.0;
    for (int64_t i = 0; i < z.numel(); ++i) {
        const double orig = z[i];
        z[i] = orig + h;
        const double up = cross_entropy_ls(z, y, s).loss;
        z[i] = orig - h;
        const double dn = cross_entropy_ls(z, y, s).loss;
        z[i] = orig;
        const double fd = (up - dn) / (2.0 * h);
        const double a = double(r.d_logits[i]);
        worst = std::max(worst, std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)}));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("loss is shift invariant and finite for extreme logits") {
    Tensor4<double> a(1, 3, 1, 1), b(1, 3, 1, 1);
    a(0, 0, 0, 0) = 1000.0;
    a(0, 1, 0, 0) = 999.0;
    a(0, 2, 0, 0) = -1000.0;
    for (int64_t j = 0; j < 3; ++j) b(0, j, 0, 0) = a(0, j, 0, 0) - 1000.0;
    LossResult<double> ra = cross_entropy_ls(a, {0}, 0.1);
    LossResult<double> rb = cross_entropy_ls(b, {0}, 0.1);
    CHECK(std::isfinite(ra.loss));
    CHECK(ra.loss == doctest::Approx(rb.loss).epsilon(1e-12));
}

TEST_CASE("invalid inputs are refused with context") {
    Tensor4<double> z(2, 3, 1, 1);
    z.fill(0.0);
    CHECK_THROWS_WITH_AS(cross_entropy_ls(z, {0, 3}, 0.0), doctest::Contains("label 3"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(cross_entropy_ls(z, {0, -1}, 0.0), doctest::Contains("label -1"),
                         std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy_ls(z, {0}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy_ls(z, {0, 1}, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy_ls(z, {0, 1}, -0.1), std::invalid_argument);
    Tensor4<double> spatial(1, 3, 2, 2);
    CHECK_THROWS_WITH_AS(cross_entropy_ls(spatial, {0}, 0.0), doctest::Contains("(n, classes"),
                         std::invalid_argument);
}

TEST_CASE("argmax_class picks the largest logit per row") {
    Tensor4<double> z(2, 4, 1, 1);
    z.fill(0.0);
    z(0, 3, 0, 0) = 2.0;
    z(1, 1, 0, 0) = 5.0;
    z(1, 2, 0, 0) = 5.0; // tie keeps the first
    CHECK(argmax_class(z, 0) == 3);
    CHECK(argmax_class(z, 1) == 1);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "emoe/diffusion.hpp"
#include "emoe/rng.hpp"

using namespace emoe;

TEST_CASE("build_schedule hand-checked products") {
    // 0.9 * 0.8 = 0.72
    NoiseSchedule s = build_schedule(2, 0.1, 0.2);
    CHECK(s.beta(1) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(s.beta(2) == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(s.alpha_bar(0) == 1.0);
    CHECK(s.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(s.alpha_bar(2) == doctest::Approx(0.72).epsilon(1e-15));
}

TEST_CASE("schedule monotonicity invariants") {
    for (auto [steps, lo, hi] : {std::tuple{25, 1e-4, 0.02}, std::tuple{2, 0.1, 0.9},
                                 std::tuple{100, 1e-5, 0.5}}) {
        NoiseSchedule s = build_schedule(steps, lo, hi);
        for (int t = 1; t <= steps; ++t) {
            CHECK(s.beta(t) > 0.0);
            CHECK(s.beta(t) < 1.0);
            if (t > 1) CHECK(s.beta(t) > s.beta(t - 1));
            CHECK(s.alpha_bar(t) > 0.0);
            CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
    }
}

TEST_CASE("build_schedule rejects bad parameters") {
    CHECK_THROWS_AS(build_schedule(1, 0.1, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(build_schedule(10, 0.2, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(build_schedule(10, 0.0, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(build_schedule(10, 0.1, 1.0), std::invalid_argument);
}

TEST_CASE("forward_step near-degenerate noise keeps the latent") {
    NoiseSchedule s = build_schedule(2, 1e-12, 2e-12);
    RngStream stream(1, 1);
    LatentState z0{gaussian(stream, {1, 2, 2}), 0};
    LatentState z1 = forward_step(z0, s, stream);
    CHECK(z1.t == 1);
    for (std::size_t i = 0; i < z0.z.size(); ++i)
        CHECK(std::fabs(z1.z[i] - z0.z[i]) < 1e-5);
}

TEST_CASE("forward_step empirical variance matches beta") {
    NoiseSchedule s = build_schedule(2, 0.3, 0.5);
    RngStream stream(9, 2);
    LatentState zero{Tensor::zeros({1, 1, 1}), 0};
    const int n = 100000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        LatentState z1 = forward_step(zero, s, stream);
        sum += z1.z[0];
        sum_sq += z1.z[0] * z1.z[0];
    }
    double mean = sum / n;
    double var = sum_sq / n - mean * mean;
    // sd of the variance estimate is beta * sqrt(2/n)
    CHECK(std::fabs(var - 0.3) < 4.0 * 0.3 * std::sqrt(2.0 / n));
}

TEST_CASE("forward_step chain bounds and determinism") {
    NoiseSchedule s = build_schedule(3, 0.1, 0.3);
    RngStream a(4, 4), b(4, 4);
    LatentState z{Tensor::full({1, 2, 2}, 0.5), 0};
    LatentState ra = forward_step(z, s, a);
    LatentState rb = forward_step(z, s, b);
    CHECK(ra.z == rb.z);

    LatentState exhausted{Tensor::zeros({1, 2, 2}), 3};
    CHECK_THROWS_WITH_AS(forward_step(exhausted, s, a), doctest::Contains("chain exhausted"),
                         std::runtime_error);
}

TEST_CASE("forward_marginal reconstruction identity") {
    NoiseSchedule s = build_schedule(10, 1e-3, 0.1);
    RngStream stream(13, 1);
    LatentState z0{gaussian(stream, {2, 2, 2}), 0};
    for (int t : {1, 5, 10}) {
        auto [zt, eps] = forward_marginal(z0, t, s, stream);
        CHECK(zt.t == t);
        double a = std::sqrt(s.alpha_bar(t)), b = std::sqrt(1.0 - s.alpha_bar(t));
        for (std::size_t i = 0; i < z0.z.size(); ++i)
            CHECK(std::fabs(zt.z[i] - (a * z0.z[i] + b * eps[i])) < 1e-12);
    }
    CHECK_THROWS_AS(forward_marginal(z0, 0, s, stream), std::invalid_argument);
    CHECK_THROWS_AS(forward_marginal(z0, 11, s, stream), std::invalid_argument);
}

TEST_CASE("forward_marginal matches iterated forward_step in distribution") {
    // Monte Carlo moment equivalence at t = T over 1e4 trials, 3 standard errors
    const int trials = 10000;
    NoiseSchedule s = build_schedule(4, 0.05, 0.3);
    RngStream init(21, 0);
    LatentState z0{gaussian(init, {1, 2, 2}), 0};
    const std::size_t n = z0.z.size();

    std::vector<double> sum_m(n, 0.0), sq_m(n, 0.0), sum_i(n, 0.0), sq_i(n, 0.0);
    RngStream sm(21, 1), si(21, 2);
    for (int trial = 0; trial < trials; ++trial) {
        auto [zt, eps] = forward_marginal(z0, 4, s, sm);
        for (std::size_t i = 0; i < n; ++i) {
            sum_m[i] += zt.z[i];
            sq_m[i] += zt.z[i] * zt.z[i];
        }
        LatentState z = z0;
        for (int t = 0; t < 4; ++t) z = forward_step(z, s, si);
        for (std::size_t i = 0; i < n; ++i) {
            sum_i[i] += z.z[i];
            sq_i[i] += z.z[i] * z.z[i];
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        double m1 = sum_m[i] / trials, m2 = sum_i[i] / trials;
        double v1 = sq_m[i] / trials - m1 * m1, v2 = sq_i[i] / trials - m2 * m2;
        double se_mean = std::sqrt(v1 / trials + v2 / trials);
        CHECK(std::fabs(m1 - m2) < 3.0 * se_mean);
        double se_var = std::sqrt(2.0 * (v1 * v1 + v2 * v2) / trials);
        CHECK(std::fabs(v1 - v2) < 3.0 * se_var);
    }
}

TEST_CASE("ddim inverts the t=1 corruption with the oracle eps") {
    NoiseSchedule s = build_schedule(25, 1e-4, 0.02);
    RngStream stream(31, 7);
    LatentState z0{gaussian(stream, {2, 4, 4}), 0};
    auto [z1, eps] = forward_marginal(z0, 1, s, stream);
    LatentState rec = ddim_step(z1, eps, s);
    CHECK(rec.t == 0);
    for (std::size_t i = 0; i < z0.z.size(); ++i) CHECK(std::fabs(rec.z[i] - z0.z[i]) < 1e-10);
}

TEST_CASE("ddim is deterministic and honors the alpha_bar(0)=1 convention") {
    NoiseSchedule s = build_schedule(5, 0.01, 0.2);
    RngStream stream(3, 3);
    Tensor z = gaussian(stream, {1, 2, 2});
    Tensor eps = gaussian(stream, {1, 2, 2});
    LatentState a = ddim_step({z, 3}, eps, s);
    LatentState b = ddim_step({z, 3}, eps, s);
    CHECK(a.z == b.z);

    // at t=1 the output is exactly z0_hat
    LatentState out = ddim_step({z, 1}, eps, s);
    double at = s.alpha_bar(1);
    for (std::size_t i = 0; i < z.size(); ++i) {
        double z0_hat = (z[i] - std::sqrt(1.0 - at) * eps[i]) / std::sqrt(at);
        CHECK(out.z[i] == doctest::Approx(z0_hat).epsilon(1e-14));
    }

    CHECK_THROWS_AS(ddim_step({z, 0}, eps, s), std::invalid_argument);
    CHECK_THROWS_AS(ddim_step({z, 3}, Tensor({1, 2, 3}), s), std::invalid_argument);
}

TEST_CASE("ldm_loss basics") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::full({2, 3}, 1.0);
    CHECK(ldm_loss(a, a) == 0.0);
    CHECK(ldm_loss(a, b) == doctest::Approx(1.0).epsilon(1e-15));
    RngStream s(5, 1);
    Tensor x = gaussian(s, {3, 3}), y = gaussian(s, {3, 3});
    CHECK(ldm_loss(x, y) == ldm_loss(y, x));
    CHECK_THROWS_AS(ldm_loss(a, Tensor({3, 2})), std::invalid_argument);
}

TEST_CASE("ldm_loss gradient matches central differences at 100 random points") {
    RngStream s(17, 4);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor eps = gaussian(s, {2, 3});
        Tensor pred = gaussian(s, {2, 3});
        Tensor grad = ldm_loss_grad(eps, pred);
        const double h = 1e-6;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            Tensor plus = pred, minus = pred;
            plus[i] += h;
            minus[i] -= h;
            double fd = (ldm_loss(eps, plus) - ldm_loss(eps, minus)) / (2.0 * h);
            double denom = std::max({1e-8, std::fabs(fd), std::fabs(grad[i])});
            CHECK(std::fabs(grad[i] - fd) / denom < 1e-6);
        }
    }
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "emoe/math_ops.hpp"
#include "emoe/rng.hpp"
#include "emoe/tensor.hpp"

using namespace emoe;

TEST_CASE("tensor shape invariants") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK_THROWS_AS(Tensor({}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor({2, 0}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor({2, 3}, {1.0}), std::invalid_argument);
    t.at(1, 2) = 5.0;
    CHECK(t[5] == 5.0);
}

TEST_CASE("gaussian determinism and stream independence") {
    RngStream a(7, 0);
    RngStream b(7, 0);
    Tensor ta = gaussian(a, {4});
    Tensor tb = gaussian(b, {4});
    CHECK(ta == tb);  // bit-identical

    // the counter advanced, so the next draw differs
    Tensor tc = gaussian(a, {4});
    CHECK_FALSE(ta == tc);

    // distinct stream ids give unrelated sequences
    RngStream c(7, 1);
    Tensor td = gaussian(c, {4});
    for (std::size_t i = 0; i < 4; ++i) CHECK(ta[i] != td[i]);

    CHECK_THROWS_AS(gaussian(a, {}), std::invalid_argument);
}

TEST_CASE("gaussian moments over 1e5 draws") {
    RngStream s(2024, 11);
    const std::size_t n = 100000;
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double x = s.next_gaussian();
        sum += x;
        sum_sq += x * x;
    }
    double mean = sum / n;
    double var = sum_sq / n - mean * mean;
    CHECK(std::fabs(mean) < 0.0095);  // 3 / sqrt(1e5)
    CHECK(std::fabs(var - 1.0) < 0.02);
}

TEST_CASE("uniform draws land in (0, 1]") {
    RngStream s(5, 5);
    for (int i = 0; i < 1000; ++i) {
        double u = s.next_uniform();
        CHECK(u > 0.0);
        CHECK(u <= 1.0);
    }
}

TEST_CASE("softmax basics") {
    auto p = softmax({0.0, 0.0});
    CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-12));

    // hand computation: e^{ln 2} / (e^{ln 2} + 1) = 2/3
    auto q = softmax({std::log(2.0), 0.0});
    CHECK(q[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(q[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    // max subtraction keeps huge logits finite
    auto r = softmax({1000.0, 0.0});
    CHECK(std::isfinite(r[0]));
    CHECK(r[0] == doctest::Approx(1.0));
    CHECK(r[1] == doctest::Approx(0.0));

    CHECK_THROWS_AS(softmax({}), std::invalid_argument);
}

TEST_CASE("softmax shift invariance and normalization (property)") {
    RngStream s(99, 1);
    for (int trial = 0; trial < 1000; ++trial) {
        std::size_t n = 1 + s.next_below(8);
        std::vector<double> logits(n);
        for (auto& v : logits) v = 3.0 * s.next_gaussian();
        double c = 10.0 * s.next_gaussian();
        auto base = softmax(logits);
        for (auto& v : logits) v += c;
        auto shifted = softmax(logits);
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(std::fabs(base[i] - shifted[i]) < 1e-12);
            CHECK(base[i] > 0.0);
            sum += base[i];
        }
        CHECK(std::fabs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("attention degenerate cases") {
    // identical K rows: uniform weights, rows equal the mean of V rows
    Tensor q({2, 3}, {1, 0, 0, 0, 2, 0});
    Tensor k({3, 3}, {1, 1, 1, 1, 1, 1, 1, 1, 1});
    Tensor v({3, 2}, {0, 0, 3, 0, 0, 6});
    Tensor out = attention(q, k, v);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(out.at(i, 0) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(out.at(i, 1) == doctest::Approx(2.0).epsilon(1e-12));
    }

    // single query, single key: output equals V exactly
    Tensor q1({1, 4}, {1, 2, 3, 4});
    Tensor k1({1, 4}, {-1, 0, 1, 2});
    Tensor v1({1, 2}, {7.5, -2.25});
    Tensor out1 = attention(q1, k1, v1);
    CHECK(out1.at(0, 0) == 7.5);
    CHECK(out1.at(0, 1) == -2.25);
}

TEST_CASE("attention hand-evaluated example") {
    // softmax([100/sqrt(2), 0]) . V
    Tensor q({1, 2}, {10, 0});
    Tensor k({2, 2}, {10, 0, 0, 10});
    Tensor v({2, 2}, {1, 0, 0, 1});
    Tensor out = attention(q, k, v);
    double s = 100.0 / std::sqrt(2.0);
    double w0 = 1.0 / (1.0 + std::exp(-s));
    CHECK(out.at(0, 0) == doctest::Approx(w0).epsilon(1e-12));
    CHECK(out.at(0, 1) == doctest::Approx(1.0 - w0).epsilon(1e-12));
}

TEST_CASE("attention errors name the offending axes") {
    Tensor q({1, 3});
    Tensor k({2, 2});
    Tensor v({2, 2});
    CHECK_THROWS_WITH_AS(attention(q, k, v), doctest::Contains("[1, 3]"),
                         std::invalid_argument);
    Tensor k2({2, 3});
    Tensor v2({3, 2});
    CHECK_THROWS_WITH_AS(attention(q, k2, v2), doctest::Contains("[3, 2]"),
                         std::invalid_argument);
}

TEST_CASE("attention weight rows are stochastic (property)") {
    RngStream s(42, 3);
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t lq = 1 + s.next_below(5), lk = 1 + s.next_below(5);
        std::size_t d = 1 + s.next_below(6), dv = 1 + s.next_below(6);
        Tensor q = gaussian(s, {lq, d});
        Tensor k = gaussian(s, {lk, d});
        Tensor v = gaussian(s, {lk, dv});
        auto [out, w] = attention_with_weights(q, k, v);
        for (std::size_t i = 0; i < lq; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < lk; ++j) {
                CHECK(w.at(i, j) >= 0.0);
                sum += w.at(i, j);
            }
            CHECK(std::fabs(sum - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("ensemble_mean_var examples") {
    // single member: zero variance
    auto [m1, v1] = ensemble_mean_var({Tensor({3}, {1, 2, 3})});
    for (std::size_t i = 0; i < 3; ++i) CHECK(v1[i] == 0.0);

    // zeros and twos: mean ones, population variance ((0-1)^2 + (2-1)^2)/2 = 1
    auto [m2, v2] = ensemble_mean_var({Tensor::zeros({2, 2}), Tensor::full({2, 2}, 2.0)});
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(m2[i] == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(v2[i] == doctest::Approx(1.0).epsilon(1e-15));
    }

    CHECK_THROWS_AS(ensemble_mean_var({}), std::invalid_argument);
    CHECK_THROWS_AS(ensemble_mean_var({Tensor({2}), Tensor({3})}), std::invalid_argument);
}

TEST_CASE("ensemble_mean_var matches a naive two-pass oracle (property)") {
    RngStream s(7, 77);
    for (int trial = 0; trial < 1000; ++trial) {
        std::size_t m = 1 + s.next_below(6);
        std::size_t n = 1 + s.next_below(12);
        std::vector<Tensor> members;
        for (std::size_t i = 0; i < m; ++i) members.push_back(gaussian(s, {n}));

        auto [mean, var] = ensemble_mean_var(members);

        // independent oracle: explicit per-element loops
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (const auto& t : members) acc += t[j];
            double mu = acc / static_cast<double>(m);
            double acc2 = 0.0;
            for (const auto& t : members) acc2 += (t[j] - mu) * (t[j] - mu);
            double sigma2 = acc2 / static_cast<double>(m);
            CHECK(std::fabs(mean[j] - mu) < 1e-12);
            CHECK(std::fabs(var[j] - sigma2) < 1e-12);
            CHECK(var[j] >= 0.0);
        }
    }
}

TEST_CASE("ensemble_mean_var is order invariant") {
    RngStream s(8, 88);
    std::vector<Tensor> members;
    for (int i = 0; i < 4; ++i) members.push_back(gaussian(s, {5}));
    auto [m_a, v_a] = ensemble_mean_var(members);
    std::swap(members[0], members[3]);
    std::swap(members[1], members[2]);
    auto [m_b, v_b] = ensemble_mean_var(members);
    CHECK(m_a == m_b);
    CHECK(v_a == v_b);
}

TEST_CASE("fnv1a64 is stable") {
    // frozen reference values (FNV-1a 64-bit)
    CHECK(fnv1a64(std::string("")) == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64(std::string("a")) == 0xaf63dc4c8601ec8cULL);
}

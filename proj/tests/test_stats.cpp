#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "emoe/rng.hpp"
#include "emoe/stats.hpp"

using namespace emoe;

namespace {

// independent pair-enumeration oracle for the JT statistic
double jt_oracle(const std::vector<std::vector<double>>& groups) {
    double jt = 0.0;
    for (std::size_t k = 0; k < groups.size(); ++k)
        for (std::size_t l = k + 1; l < groups.size(); ++l)
            for (double a : groups[k])
                for (double b : groups[l]) jt += a < b ? 1.0 : (a == b ? 0.5 : 0.0);
    return jt;
}

// exhaustive permutation distribution of JT for small pooled samples
double jt_exact_p_increasing(const std::vector<std::vector<double>>& groups) {
    std::vector<double> pooled;
    std::vector<std::size_t> labels;
    for (std::size_t g = 0; g < groups.size(); ++g)
        for (double v : groups[g]) {
            pooled.push_back(v);
            labels.push_back(g);
        }
    double observed = jt_oracle(groups);
    std::sort(labels.begin(), labels.end());
    std::size_t total = 0, at_least = 0;
    do {
        std::vector<std::vector<double>> regrouped(groups.size());
        for (std::size_t i = 0; i < pooled.size(); ++i) regrouped[labels[i]].push_back(pooled[i]);
        ++total;
        if (jt_oracle(regrouped) >= observed - 1e-12) ++at_least;
    } while (std::next_permutation(labels.begin(), labels.end()));
    return static_cast<double>(at_least) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("quartile_split bin sizes and ordering") {
    QuartileAssignment q4 = quartile_split({1, 2, 3, 4});
    CHECK(q4.sizes == std::vector<std::size_t>{1, 1, 1, 1});
    CHECK(q4.quartile_of == std::vector<std::size_t>{0, 1, 2, 3});

    // remainder lands in the earliest bins: n=10 -> [3,3,2,2]
    std::vector<double> ten;
    for (int i = 0; i < 10; ++i) ten.push_back(static_cast<double>(10 - i));
    QuartileAssignment q10 = quartile_split(ten);
    CHECK(q10.sizes == std::vector<std::size_t>{3, 3, 2, 2});
    // input was descending, so the last inputs fall in the first quartile
    CHECK(q10.quartile_of[9] == 0);
    CHECK(q10.quartile_of[0] == 3);

    CHECK_THROWS_AS(quartile_split({1, 2, 3}), std::invalid_argument);
}

TEST_CASE("quartile_split breaks ties by input index") {
    QuartileAssignment q = quartile_split({5, 5, 5, 5, 5, 5, 5, 5});
    CHECK(q.sizes == std::vector<std::size_t>{2, 2, 2, 2});
    CHECK(q.quartile_of == std::vector<std::size_t>{0, 0, 1, 1, 2, 2, 3, 3});
}

TEST_CASE("quartile bins partition the score multiset (property)") {
    RngStream s(31, 0);
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t n = 4 + s.next_below(40);
        std::vector<double> scores(n);
        for (auto& v : scores) v = s.next_gaussian();
        QuartileAssignment q = quartile_split(scores);
        std::size_t total = 0;
        std::vector<double> reassembled;
        for (std::size_t b = 0; b < 4; ++b) {
            total += q.sizes[b];
            for (std::size_t idx : q.members[b]) reassembled.push_back(scores[idx]);
            // near-equal bins
            CHECK(q.sizes[b] >= n / 4);
            CHECK(q.sizes[b] <= n / 4 + 1);
        }
        CHECK(total == n);
        std::vector<double> sorted_scores = scores;
        std::sort(sorted_scores.begin(), sorted_scores.end());
        std::sort(reassembled.begin(), reassembled.end());
        CHECK(reassembled == sorted_scores);
    }
}

TEST_CASE("JT statistic on hand-enumerated examples") {
    // every cross pair ascends: 4 pairs
    TrendTestResult up = jonckheere_terpstra({{1, 2}, {3, 4}}, TrendDirection::increasing);
    CHECK(up.statistic == 4.0);
    CHECK(up.z_score == doctest::Approx(1.5491933384829668).epsilon(1e-12));
    CHECK(up.p_value == doctest::Approx(0.060667625179241055).epsilon(1e-9));

    // no ascending cross pairs
    TrendTestResult down = jonckheere_terpstra({{3, 4}, {1, 2}}, TrendDirection::increasing);
    CHECK(down.statistic == 0.0);

    // half-credit for ties
    TrendTestResult tie = jonckheere_terpstra({{1, 2}, {2, 3}}, TrendDirection::increasing);
    CHECK(tie.statistic == doctest::Approx(3.5));

    CHECK_THROWS_AS(jonckheere_terpstra({{1.0}}, TrendDirection::increasing),
                    std::invalid_argument);
    CHECK_THROWS_AS(jonckheere_terpstra({{1.0}, {}}, TrendDirection::increasing),
                    std::invalid_argument);
}

TEST_CASE("JT statistic equals brute-force pair counting (1000 random cases)") {
    RngStream s(32, 0);
    for (int trial = 0; trial < 1000; ++trial) {
        std::size_t n_groups = 2 + s.next_below(3);
        std::vector<std::vector<double>> groups(n_groups);
        for (auto& g : groups) {
            std::size_t n = 1 + s.next_below(6);
            for (std::size_t i = 0; i < n; ++i)
                g.push_back(std::floor(4.0 * s.next_gaussian()));  // coarse grid forces ties
        }
        TrendTestResult res = jonckheere_terpstra(groups, TrendDirection::increasing);
        CHECK(res.statistic == jt_oracle(groups));
    }
}

TEST_CASE("JT p-value within 0.02 of exhaustive permutation for n <= 8") {
    RngStream s(33, 0);
    std::vector<std::vector<std::size_t>> layouts = {{4, 4}, {3, 3, 2}, {2, 2, 2, 2}, {3, 5},
                                                     {2, 3, 3}};
    for (const auto& layout : layouts) {
        for (int trial = 0; trial < 40; ++trial) {
            std::vector<std::vector<double>> groups;
            double shift = 0.0;
            for (std::size_t size : layout) {
                std::vector<double> g;
                for (std::size_t i = 0; i < size; ++i) g.push_back(s.next_gaussian() + shift);
                shift += 0.5;  // induce a mild trend so p spans its range
                groups.push_back(std::move(g));
            }
            double exact = jt_exact_p_increasing(groups);
            double approx = jonckheere_terpstra(groups, TrendDirection::increasing).p_value;
            CHECK(std::fabs(exact - approx) < 0.02);
        }
    }
}

TEST_CASE("JT null p-values are approximately uniform (KS < 0.05)") {
    RngStream s(34, 0);
    const int sims = 2000;
    std::vector<double> pvals;
    pvals.reserve(sims);
    for (int k = 0; k < sims; ++k) {
        std::vector<std::vector<double>> groups(4);
        for (auto& g : groups)
            for (int i = 0; i < 10; ++i) g.push_back(s.next_gaussian());
        pvals.push_back(jonckheere_terpstra(groups, TrendDirection::increasing).p_value);
    }
    std::sort(pvals.begin(), pvals.end());
    double ks = 0.0;
    for (int i = 0; i < sims; ++i) {
        double ecdf_hi = static_cast<double>(i + 1) / sims;
        double ecdf_lo = static_cast<double>(i) / sims;
        ks = std::max({ks, std::fabs(ecdf_hi - pvals[static_cast<std::size_t>(i)]),
                       std::fabs(pvals[static_cast<std::size_t>(i)] - ecdf_lo)});
    }
    CHECK(ks < 0.05);
}

TEST_CASE("JT direction flip mirrors the p-value") {
    std::vector<std::vector<double>> groups = {{1, 3, 2}, {4, 2, 5}, {6, 5, 7}};
    TrendTestResult inc = jonckheere_terpstra(groups, TrendDirection::increasing);
    TrendTestResult dec = jonckheere_terpstra(groups, TrendDirection::decreasing);
    CHECK(inc.p_value + dec.p_value == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(inc.p_value < 0.5);  // the data do trend upward
}

TEST_CASE("welch t-test conventions and frozen references") {
    std::vector<double> a = {1.0, 2.0, 3.0};
    TrendTestResult same = welch_t_test(a, a);
    CHECK(same.statistic == 0.0);
    CHECK(same.p_value == doctest::Approx(0.5).epsilon(1e-12));

    // antisymmetry
    std::vector<double> b = {2.0, 2.5, 4.0, 1.0};
    TrendTestResult ab = welch_t_test(a, b);
    TrendTestResult ba = welch_t_test(b, a);
    CHECK(ab.statistic == doctest::Approx(-ba.statistic).epsilon(1e-12));

    // degenerate zero-variance groups
    TrendTestResult flat = welch_t_test({2, 2, 2}, {2, 2});
    CHECK(flat.p_value == 0.5);
    TrendTestResult sep = welch_t_test({3, 3}, {1, 1});
    CHECK(sep.p_value == 0.0);

    CHECK_THROWS_AS(welch_t_test({1.0}, a), std::invalid_argument);
}

TEST_CASE("welch detects a unit mean shift at n=1000 with p < 1e-10") {
    RngStream s(35, 0);
    std::vector<double> a(1000), b(1000);
    for (auto& v : a) v = 1.0 + s.next_gaussian();
    for (auto& v : b) v = s.next_gaussian();
    TrendTestResult res = welch_t_test(a, b);
    CHECK(res.p_value < 1e-10);
}

TEST_CASE("student t survival and incomplete beta match frozen references") {
    CHECK(student_t_sf(2.0, 10.0) == doctest::Approx(0.036694017385370196).epsilon(1e-10));
    CHECK(student_t_sf(-1.5, 3.7) == doctest::Approx(0.8932009153989934).epsilon(1e-10));
    // far tail stays accurate through the continued fraction
    CHECK(student_t_sf(22.0, 1998.0) ==
          doctest::Approx(1.557963860975533e-96).epsilon(1e-6));
    CHECK(regularized_incomplete_beta(2.5, 3.5, 0.3) ==
          doctest::Approx(0.29675298929566646).epsilon(1e-12));
    CHECK(regularized_incomplete_beta(0.5, 0.5, 0.7) ==
          doctest::Approx(0.6309898804344546).epsilon(1e-12));
    CHECK(regularized_incomplete_beta(1.0, 1.0, 0.25) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(normal_cdf(1.96) == doctest::Approx(0.9750021048517795).epsilon(1e-12));
    CHECK(normal_cdf(-3.0) == doctest::Approx(0.0013498980316300933).epsilon(1e-12));
}

TEST_CASE("pearson correlation") {
    std::vector<double> x = {1, 2, 3, 4, 5};
    std::vector<double> y;
    for (double v : x) y.push_back(2.0 * v + 3.0);
    CHECK(pearson(x, y) == doctest::Approx(1.0).epsilon(1e-12));
    for (auto& v : y) v = -v;
    CHECK(pearson(x, y) == doctest::Approx(-1.0).epsilon(1e-12));

    RngStream s(36, 0);
    std::vector<double> u(10000), w(10000);
    for (std::size_t i = 0; i < u.size(); ++i) {
        u[i] = s.next_gaussian();
        w[i] = s.next_gaussian();
    }
    CHECK(std::fabs(pearson(u, w)) < 0.05);

    CHECK_THROWS_AS(pearson({1, 1, 1}, {1, 2, 3}), std::invalid_argument);
    CHECK_THROWS_AS(pearson({1, 2}, {1, 2, 3}), std::invalid_argument);
}

#include "emoe/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace emoe {

QuartileAssignment quartile_split(const std::vector<double>& scores) {
    std::size_t n = scores.size();
    if (n < 4) throw std::invalid_argument("quartile_split: need at least 4 scores");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    QuartileAssignment out;
    out.quartile_of.resize(n);
    out.members.resize(4);
    out.sizes.resize(4);
    out.upper_bounds.resize(4);
    std::size_t base = n / 4, rem = n % 4;
    std::size_t pos = 0;
    for (std::size_t q = 0; q < 4; ++q) {
        std::size_t size = base + (q < rem ? 1 : 0);
        out.sizes[q] = size;
        for (std::size_t k = 0; k < size; ++k) {
            std::size_t idx = order[pos++];
            out.quartile_of[idx] = q;
            out.members[q].push_back(idx);
        }
        out.upper_bounds[q] = scores[order[pos - 1]];
    }
    return out;
}

TrendTestResult jonckheere_terpstra(const std::vector<std::vector<double>>& groups,
                                    TrendDirection direction) {
    if (groups.size() < 2)
        throw std::invalid_argument("jonckheere_terpstra: need at least 2 groups");
    for (const auto& g : groups)
        if (g.empty()) throw std::invalid_argument("jonckheere_terpstra: empty group");

    double jt = 0.0;
    for (std::size_t k = 0; k + 1 < groups.size(); ++k)
        for (std::size_t l = k + 1; l < groups.size(); ++l)
            for (double a : groups[k])
                for (double b : groups[l]) {
                    if (a < b)
                        jt += 1.0;
                    else if (a == b)
                        jt += 0.5;
                }

    double n_total = 0.0, sum_sq = 0.0, sum_var = 0.0;
    for (const auto& g : groups) {
        double ni = static_cast<double>(g.size());
        n_total += ni;
        sum_sq += ni * ni;
        sum_var += ni * ni * (2.0 * ni + 3.0);
    }
    double mean = (n_total * n_total - sum_sq) / 4.0;
    // classical no-tie variance; ties are rare with continuous scores
    double var = (n_total * n_total * (2.0 * n_total + 3.0) - sum_var) / 72.0;
    double z = (jt - mean) / std::sqrt(var);

    TrendTestResult res;
    res.test_name = "jonckheere-terpstra";
    res.statistic = jt;
    res.z_score = z;
    res.p_value = direction == TrendDirection::increasing ? normal_cdf(-z) : normal_cdf(z);
    return res;
}

double sample_mean(const std::vector<double>& xs) {
    if (xs.empty()) throw std::invalid_argument("sample_mean: empty input");
    double s = 0.0;
    for (double v : xs) s += v;
    return s / static_cast<double>(xs.size());
}

double sample_variance(const std::vector<double>& xs) {
    if (xs.size() < 2) throw std::invalid_argument("sample_variance: need n >= 2");
    double m = sample_mean(xs);
    double s = 0.0;
    for (double v : xs) s += (v - m) * (v - m);
    return s / static_cast<double>(xs.size() - 1);
}

TrendTestResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2)
        throw std::invalid_argument("welch_t_test: need at least 2 samples per group");
    double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    double ma = sample_mean(a), mb = sample_mean(b);
    double va = sample_variance(a) / na, vb = sample_variance(b) / nb;
    double se2 = va + vb;

    TrendTestResult res;
    res.test_name = "welch-t";
    if (se2 == 0.0) {
        // degenerate: both groups constant
        if (ma == mb) {
            res.statistic = 0.0;
            res.p_value = 0.5;
        } else {
            res.statistic = ma > mb ? std::numeric_limits<double>::infinity()
                                    : -std::numeric_limits<double>::infinity();
            res.p_value = ma > mb ? 0.0 : 1.0;
        }
        res.z_score = res.statistic;
        return res;
    }
    double t = (ma - mb) / std::sqrt(se2);
    double dof = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    res.statistic = t;
    res.z_score = t;
    res.p_value = student_t_sf(t, dof);
    return res;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
    if (x.size() < 2) throw std::invalid_argument("pearson: need n >= 2");
    double mx = sample_mean(x), my = sample_mean(y);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw std::invalid_argument("pearson: zero variance input");
    double r = sxy / std::sqrt(sxx * syy);
    return std::clamp(r, -1.0, 1.0);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

namespace {

// continued fraction for the incomplete beta (modified Lentz)
double betacf(double a, double b, double x) {
    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-15;
    constexpr int max_iter = 300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0 && b > 0.0)) throw std::invalid_argument("incomplete_beta: a, b must be > 0");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                      b * std::log(1.0 - x);
    double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_t_sf(double t, double dof) {
    if (!(dof > 0.0)) throw std::invalid_argument("student_t_sf: dof must be > 0");
    if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
    double x = dof / (dof + t * t);
    double tail = 0.5 * regularized_incomplete_beta(dof / 2.0, 0.5, x);
    return t >= 0.0 ? tail : 1.0 - tail;
}

}  // namespace emoe

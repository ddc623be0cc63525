#pragma once

#include <string>
#include <vector>

namespace emoe {

struct TrendTestResult {
    std::string test_name;
    double statistic = 0.0;
    double z_score = 0.0;  // normal approximation, where applicable
    double p_value = 1.0;
};

enum class TrendDirection { increasing, decreasing };

// Four contiguous bins over ascending scores, sizes floor(n/4) with the
// remainder distributed to the earliest bins; ties broken by input index.
struct QuartileAssignment {
    std::vector<std::size_t> quartile_of;            // per input index, 0..3
    std::vector<std::vector<std::size_t>> members;   // input indices per bin
    std::vector<std::size_t> sizes;                  // 4 bin sizes
    std::vector<double> upper_bounds;                // max score per bin
};

QuartileAssignment quartile_split(const std::vector<double>& scores);

// Jonckheere-Terpstra statistic for an ordered trend across groups:
//   JT = sum_{k<l} (#{a<b} + 0.5 #{a==b}) over cross pairs,
// z-scored with the classical no-tie variance formula; one-sided p in the
// requested direction.
TrendTestResult jonckheere_terpstra(const std::vector<std::vector<double>>& groups,
                                    TrendDirection direction);

// Welch's t with Satterthwaite degrees of freedom; one-sided p for
// H1: mean(a) > mean(b). Zero-variance inputs with equal means give the
// p = 0.5 convention.
TrendTestResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b);

// Product-moment correlation; throws on zero variance.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

double normal_cdf(double z);

// I_x(a, b) by Lentz continued fraction.
double regularized_incomplete_beta(double a, double b, double x);

// P(T > t) for Student's t with `dof` degrees of freedom.
double student_t_sf(double t, double dof);

double sample_mean(const std::vector<double>& xs);
double sample_variance(const std::vector<double>& xs);  // unbiased, n-1

}  // namespace emoe

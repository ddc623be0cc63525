#include "emoe/math_ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace emoe {

std::vector<double> softmax(const std::vector<double>& logits) {
    if (logits.empty()) throw std::invalid_argument("softmax: empty input");
    double max_val = *std::max_element(logits.begin(), logits.end());
    if (!std::isfinite(max_val)) throw std::invalid_argument("softmax: non-finite input");
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - max_val);
        sum += out[i];
    }
    for (auto& v : out) v /= sum;
    return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

static void require_rank2(const Tensor& t, const char* who) {
    if (t.rank() != 2) throw std::invalid_argument(std::string(who) + ": rank-2 tensor required");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: inner dimensions " + shape_string(a.shape()) +
                                    " x " + shape_string(b.shape()) + " do not agree");
    std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            double av = a.at(i, p);
            for (std::size_t j = 0; j < n; ++j) c.at(i, j) += av * b.at(p, j);
        }
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul_nt");
    require_rank2(b, "matmul_nt");
    if (a.dim(1) != b.dim(1))
        throw std::invalid_argument("matmul_nt: inner dimensions " + shape_string(a.shape()) +
                                    " x " + shape_string(b.shape()) + "^T do not agree");
    std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a.at(i, p) * b.at(j, p);
            c.at(i, j) = s;
        }
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul_tn");
    require_rank2(b, "matmul_tn");
    if (a.dim(0) != b.dim(0))
        throw std::invalid_argument("matmul_tn: inner dimensions " + shape_string(a.shape()) +
                                    "^T x " + shape_string(b.shape()) + " do not agree");
    std::size_t m = a.dim(1), k = a.dim(0), n = b.dim(1);
    Tensor c({m, n});
    for (std::size_t p = 0; p < k; ++p)
        for (std::size_t i = 0; i < m; ++i) {
            double av = a.at(p, i);
            for (std::size_t j = 0; j < n; ++j) c.at(i, j) += av * b.at(p, j);
        }
    return c;
}

std::pair<Tensor, Tensor> attention_with_weights(const Tensor& q, const Tensor& k,
                                                 const Tensor& v) {
    require_rank2(q, "attention");
    require_rank2(k, "attention");
    require_rank2(v, "attention");
    if (q.dim(1) != k.dim(1))
        throw std::invalid_argument("attention: Q feature dim " + shape_string(q.shape()) +
                                    " vs K feature dim " + shape_string(k.shape()));
    if (k.dim(0) != v.dim(0))
        throw std::invalid_argument("attention: K rows " + shape_string(k.shape()) +
                                    " vs V rows " + shape_string(v.shape()));
    std::size_t lq = q.dim(0), lk = k.dim(0), d = q.dim(1);
    double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor weights({lq, lk});
    std::vector<double> row(lk);
    for (std::size_t i = 0; i < lq; ++i) {
        for (std::size_t j = 0; j < lk; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < d; ++p) s += q.at(i, p) * k.at(j, p);
            row[j] = s * scale;
        }
        std::vector<double> w = softmax(row);
        for (std::size_t j = 0; j < lk; ++j) weights.at(i, j) = w[j];
    }
    return {matmul(weights, v), weights};
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    return attention_with_weights(q, k, v).first;
}

std::pair<Tensor, Tensor> ensemble_mean_var(const std::vector<Tensor>& members) {
    if (members.empty()) throw std::invalid_argument("ensemble_mean_var: empty member list");
    const std::size_t m = members.size();
    for (const auto& t : members)
        if (!t.same_shape(members.front()))
            throw std::invalid_argument("ensemble_mean_var: member shape mismatch");
    Tensor mean(members.front().shape());
    Tensor var(members.front().shape());
    const std::size_t n = mean.size();
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (const auto& t : members) s += t[i];
        mean[i] = s / static_cast<double>(m);
    }
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (const auto& t : members) {
            double d = t[i] - mean[i];
            s += d * d;
        }
        var[i] = s / static_cast<double>(m);
    }
    return {mean, var};
}

}  // namespace emoe

#pragma once

#include <utility>
#include <vector>

#include "emoe/tensor.hpp"

namespace emoe {

// Numerically stable softmax (max subtraction). Entries positive, sum 1.
std::vector<double> softmax(const std::vector<double>& logits);

double dot(const std::vector<double>& a, const std::vector<double>& b);

// C = A * B           (A: m x k, B: k x n)
Tensor matmul(const Tensor& a, const Tensor& b);
// C = A * B^T         (A: m x k, B: n x k)
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// C = A^T * B         (A: k x m, B: k x n)
Tensor matmul_tn(const Tensor& a, const Tensor& b);

// Scaled dot-product attention: softmax(Q K^T / sqrt(d)) V.
// Q: Lq x d, K: Lk x d, V: Lk x dv -> Lq x dv.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

// Attention that also returns the row-stochastic weight matrix (Lq x Lk),
// needed by the backward pass and the row-stochasticity property test.
std::pair<Tensor, Tensor> attention_with_weights(const Tensor& q, const Tensor& k,
                                                 const Tensor& v);

// Per-element mean and population variance (divide by M) over ensemble
// members of identical shape. The population form is the single variance
// convention used repo-wide.
std::pair<Tensor, Tensor> ensemble_mean_var(const std::vector<Tensor>& members);

}  // namespace emoe

#pragma once

// Differentiable tensor operations. All shapes are checked eagerly and
// mismatches raise DimensionError.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mlmgen/rng.hpp"
#include "mlmgen/tensor.hpp"

namespace mlmgen {

Tensor matmul(const Tensor& a, const Tensor& b);     // [m x k] * [k x n]
Tensor matmul_bt(const Tensor& a, const Tensor& b);  // [m x k] * [n x k]^T
Tensor add(const Tensor& a, const Tensor& b);        // same shape
Tensor add_bias(const Tensor& x, const Tensor& bias);  // [m x n] + [n] per row
Tensor mul(const Tensor& a, const Tensor& b);        // elementwise, same shape
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);                         // scalar

/// Softmax along `axis`, with max subtraction.
Tensor softmax(const Tensor& x, std::size_t axis);

/// Normalizes each row over the last axis: (x - mean) / sqrt(var + eps) * gain + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

/// GELU, tanh approximation.
Tensor gelu(const Tensor& x);
double gelu_scalar(double x);

/// Mean negative log-likelihood over rows whose target != ignore_index.
/// Throws std::domain_error when every row is ignored.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets,
                     std::int32_t ignore_index = -100);

/// Row lookup: table[V x d], ids -> [n x d].
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);

/// Selects rows of a [m x n] tensor.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

/// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng);

/// Multi-head scaled dot-product attention over packed sequences.
/// `qkv` is [N x 3d] with rows of all sequences concatenated (`lengths`).
/// `bias_table` is an optional [heads x buckets] tensor read through
/// `bucket(key - query)`. Returns [N x d].
Tensor attention(const Tensor& qkv, std::span<const std::size_t> lengths, std::size_t heads,
                 bool causal, const Tensor& bias_table,
                 const std::function<std::size_t(std::ptrdiff_t)>& bucket);

}  // namespace mlmgen

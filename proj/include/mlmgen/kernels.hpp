#pragma once

// Dense kernels behind the tensor ops. Every kernel exists twice: a plain
// serial reference and an OpenMP version. The OpenMP versions partition work
// so each output element is reduced in the same order as the serial one, so
// both produce bit-identical results for any thread count.

#include <cstddef>
#include <span>

namespace mlmgen::kernels {

/// Packed query/key/value rows for a batch of independent sequences.
/// Row r of `qkv` is [q | k | v], each `heads * head_dim` wide.
struct AttentionLayout {
  std::span<const std::size_t> lengths;   // sequence lengths, rows are concatenated
  std::size_t heads = 1;
  std::size_t head_dim = 1;
  bool causal = false;

  std::size_t model_dim() const { return heads * head_dim; }
  std::size_t total_rows() const;
  /// Size of the per-(sequence, head) probability buffer.
  std::size_t probs_size() const;
  /// Size of the per-(sequence, head) offset-indexed bias buffer (2L-1 per pair).
  std::size_t bias_size() const;
};

namespace serial {

// c[m x n] (+)= a[m x k] * b[k x n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
// c[m x n] (+)= a[m x k] * b[n x k]^T
void matmul_bt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
// c[k x n] (+)= a[m x k]^T * b[m x n]
void matmul_at(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                  std::size_t cols);
// `bias` holds 2L-1 values per (sequence, head), indexed by (key - query) + L - 1;
// empty means no positional bias. `probs` receives the attention weights.
void attention_forward(std::span<const double> qkv, std::span<const double> bias,
                       const AttentionLayout& layout, std::span<double> out,
                       std::span<double> probs);
// Overwrites d_qkv, and d_bias when non-empty (same layout as the forward bias).
void attention_backward(std::span<const double> qkv, std::span<const double> probs,
                        std::span<const double> d_out, const AttentionLayout& layout,
                        std::span<double> d_qkv, std::span<double> d_bias);

}  // namespace serial

namespace parallel {

// c[m x n] (+)= a[m x k] * b[k x n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
// c[m x n] (+)= a[m x k] * b[n x k]^T
void matmul_bt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
// c[k x n] (+)= a[m x k]^T * b[m x n]
void matmul_at(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                  std::size_t cols);
// `bias` holds 2L-1 values per (sequence, head), indexed by (key - query) + L - 1;
// empty means no positional bias. `probs` receives the attention weights.
void attention_forward(std::span<const double> qkv, std::span<const double> bias,
                       const AttentionLayout& layout, std::span<double> out,
                       std::span<double> probs);
// Overwrites d_qkv, and d_bias when non-empty (same layout as the forward bias).
void attention_backward(std::span<const double> qkv, std::span<const double> probs,
                        std::span<const double> d_out, const AttentionLayout& layout,
                        std::span<double> d_qkv, std::span<double> d_bias);

}  // namespace parallel

// The ops layer calls these; they forward to the OpenMP versions.
using parallel::attention_backward;
using parallel::attention_forward;
using parallel::matmul;
using parallel::matmul_at;
using parallel::matmul_bt;
using parallel::softmax_rows;

}  // namespace mlmgen::kernels

#include <algorithm>
#include <cmath>
#include <vector>

#include "attention_pair.hpp"
#include "mlmgen/kernels.hpp"

namespace mlmgen::kernels {

std::size_t AttentionLayout::total_rows() const {
  std::size_t rows = 0;
  for (auto len : lengths) rows += len;
  return rows;
}

std::size_t AttentionLayout::probs_size() const {
  std::size_t n = 0;
  for (auto len : lengths) n += heads * len * len;
  return n;
}

std::size_t AttentionLayout::bias_size() const {
  std::size_t n = 0;
  for (auto len : lengths) n += len == 0 ? 0 : heads * (2 * len - 1);
  return n;
}

namespace serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c.begin(), c.begin() + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += av * b[p * n + j];
    }
  }
}

void matmul_bt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c.begin(), c.begin() + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += av * b[j * k + p];
    }
  }
}

void matmul_at(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c.begin(), c.begin() + k * n, 0.0);
  for (std::size_t p = 0; p < m; ++p) {
    for (std::size_t i = 0; i < k; ++i) {
      const double av = a[p * k + i];
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += av * b[p * n + j];
    }
  }
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                  std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * cols;
    double* out = y.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      out[j] = std::exp(in[j] - mx);
      total += out[j];
    }
    for (std::size_t j = 0; j < cols; ++j) out[j] /= total;
  }
}

void attention_forward(std::span<const double> qkv, std::span<const double> bias,
                       const AttentionLayout& layout, std::span<double> out,
                       std::span<double> probs) {
  for (const auto& p : detail::pair_offsets(layout)) {
    detail::attention_pair_forward(qkv, bias, layout, p, out, probs);
  }
}

void attention_backward(std::span<const double> qkv, std::span<const double> probs,
                        std::span<const double> d_out, const AttentionLayout& layout,
                        std::span<double> d_qkv, std::span<double> d_bias) {
  for (const auto& p : detail::pair_offsets(layout)) {
    detail::attention_pair_backward(qkv, probs, d_out, layout, p, d_qkv, d_bias);
  }
}

}  // namespace serial
}  // namespace mlmgen::kernels

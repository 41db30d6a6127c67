#include <omp.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "attention_pair.hpp"
#include "mlmgen/kernels.hpp"

namespace mlmgen::kernels::parallel {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

using Index = std::ptrdiff_t;

}  // namespace

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (Index ii = 0; ii < static_cast<Index>(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = c.data() + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    const double* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_bt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  // Transposing b first keeps the inner loop contiguous; the reduction order
  // over p is unchanged.
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  matmul(a, bt, c, m, k, n, accumulate);
}

void matmul_at(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (Index ii = 0; ii < static_cast<Index>(k); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = c.data() + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    for (std::size_t p = 0; p < m; ++p) {
      const double av = a[p * k + i];
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows,
                  std::size_t cols) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (Index rr = 0; rr < static_cast<Index>(rows); ++rr) {
    const auto r = static_cast<std::size_t>(rr);
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
  const auto pairs = detail::pair_offsets(layout);
  const std::size_t work = layout.probs_size() * layout.head_dim;
#pragma omp parallel for schedule(dynamic) if (work > kParallelWork)
  for (Index i = 0; i < static_cast<Index>(pairs.size()); ++i) {
    detail::attention_pair_forward(qkv, bias, layout, pairs[static_cast<std::size_t>(i)], out,
                                   probs);
  }
}

void attention_backward(std::span<const double> qkv, std::span<const double> probs,
                        std::span<const double> d_out, const AttentionLayout& layout,
                        std::span<double> d_qkv, std::span<double> d_bias) {
  const auto pairs = detail::pair_offsets(layout);
  const std::size_t work = layout.probs_size() * layout.head_dim;
#pragma omp parallel for schedule(dynamic) if (work > kParallelWork)
  for (Index i = 0; i < static_cast<Index>(pairs.size()); ++i) {
    detail::attention_pair_backward(qkv, probs, d_out, layout, pairs[static_cast<std::size_t>(i)],
                                    d_qkv, d_bias);
  }
}

}  // namespace mlmgen::kernels::parallel

#pragma once

// Per-(sequence, head) attention routines shared by the serial and OpenMP
// kernel sets. Each call touches only its own rows/columns of the outputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "mlmgen/kernels.hpp"

namespace mlmgen::kernels::detail {

struct PairOffsets {
  std::size_t row = 0;    // first row of the sequence
  std::size_t length = 0;
  std::size_t probs = 0;  // offset into the probability buffer
  std::size_t bias = 0;   // offset into the bias buffer
  std::size_t head = 0;
};

inline std::vector<PairOffsets> pair_offsets(const AttentionLayout& layout) {
  std::vector<PairOffsets> pairs;
  pairs.reserve(layout.lengths.size() * layout.heads);
  std::size_t row = 0, probs = 0, bias = 0;
  for (std::size_t len : layout.lengths) {
    for (std::size_t h = 0; h < layout.heads; ++h) {
      pairs.push_back({row, len, probs, bias, h});
      probs += len * len;
      bias += len == 0 ? 0 : 2 * len - 1;
    }
    row += len;
  }
  return pairs;
}

inline void attention_pair_forward(std::span<const double> qkv, std::span<const double> bias,
                                   const AttentionLayout& layout, const PairOffsets& p,
                                   std::span<double> out, std::span<double> probs) {
  const std::size_t d = layout.model_dim();
  const std::size_t hd = layout.head_dim;
  const std::size_t stride = 3 * d;
  const std::size_t col = p.head * hd;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t len = p.length;
  for (std::size_t i = 0; i < len; ++i) {
    const double* q = qkv.data() + (p.row + i) * stride + col;
    double* prow = probs.data() + p.probs + i * len;
    const std::size_t limit = layout.causal ? i + 1 : len;
    double max_score = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < limit; ++j) {
      const double* k = qkv.data() + (p.row + j) * stride + d + col;
      double s = 0.0;
      for (std::size_t t = 0; t < hd; ++t) s += q[t] * k[t];
      s *= scale;
      if (!bias.empty()) s += bias[p.bias + j + len - 1 - i];
      prow[j] = s;
      max_score = std::max(max_score, s);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < limit; ++j) {
      prow[j] = std::exp(prow[j] - max_score);
      total += prow[j];
    }
    for (std::size_t j = 0; j < limit; ++j) prow[j] /= total;
    for (std::size_t j = limit; j < len; ++j) prow[j] = 0.0;

    double* o = out.data() + (p.row + i) * d + col;
    std::fill(o, o + hd, 0.0);
    for (std::size_t j = 0; j < limit; ++j) {
      const double w = prow[j];
      const double* v = qkv.data() + (p.row + j) * stride + 2 * d + col;
      for (std::size_t t = 0; t < hd; ++t) o[t] += w * v[t];
    }
  }
}

inline void attention_pair_backward(std::span<const double> qkv, std::span<const double> probs,
                                    std::span<const double> d_out, const AttentionLayout& layout,
                                    const PairOffsets& p, std::span<double> d_qkv,
                                    std::span<double> d_bias) {
  const std::size_t d = layout.model_dim();
  const std::size_t hd = layout.head_dim;
  const std::size_t stride = 3 * d;
  const std::size_t col = p.head * hd;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t len = p.length;

  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t part = 0; part < 3; ++part) {
      double* g = d_qkv.data() + (p.row + i) * stride + part * d + col;
      std::fill(g, g + hd, 0.0);
    }
  }
  if (!d_bias.empty() && len > 0) {
    std::fill(d_bias.begin() + p.bias, d_bias.begin() + p.bias + 2 * len - 1, 0.0);
  }

  std::vector<double> dp(len);
  for (std::size_t i = 0; i < len; ++i) {
    const double* prow = probs.data() + p.probs + i * len;
    const double* go = d_out.data() + (p.row + i) * d + col;
    const double* q = qkv.data() + (p.row + i) * stride + col;
    double* gq = d_qkv.data() + (p.row + i) * stride + col;
    const std::size_t limit = layout.causal ? i + 1 : len;
    double weighted = 0.0;
    for (std::size_t j = 0; j < limit; ++j) {
      const double* v = qkv.data() + (p.row + j) * stride + 2 * d + col;
      double s = 0.0;
      for (std::size_t t = 0; t < hd; ++t) s += go[t] * v[t];
      dp[j] = s;
      weighted += prow[j] * s;
    }
    for (std::size_t j = 0; j < limit; ++j) {
      const double pij = prow[j];
      const double ds = pij * (dp[j] - weighted);
      const double* k = qkv.data() + (p.row + j) * stride + d + col;
      double* gk = d_qkv.data() + (p.row + j) * stride + d + col;
      double* gv = d_qkv.data() + (p.row + j) * stride + 2 * d + col;
      for (std::size_t t = 0; t < hd; ++t) {
        gq[t] += scale * ds * k[t];
        gk[t] += scale * ds * q[t];
        gv[t] += pij * go[t];
      }
      if (!d_bias.empty()) d_bias[p.bias + j + len - 1 - i] += ds;
    }
  }
}

}  // namespace mlmgen::kernels::detail

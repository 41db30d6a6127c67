#include "mlmgen/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "mlmgen/errors.hpp"
#include "mlmgen/kernels.hpp"

namespace mlmgen {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Grad buffer of input `i`, or nullptr when that input takes no gradient.
std::vector<double>* input_grad(detail::Node& self, std::size_t i) {
  auto& in = *self.inputs[i];
  return in.requires_grad ? &in.ensure_grad() : nullptr;
}

const std::vector<double>& input_value(const detail::Node& self, std::size_t i) {
  return self.inputs[i]->value;
}

constexpr double kGeluC = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::matmul(a.data(), b.data(), out, m, k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    if (auto* ga = input_grad(self, 0)) {
      kernels::matmul_bt(self.grad, input_value(self, 1), *ga, m, n, k, true);
    }
    if (auto* gb = input_grad(self, 1)) {
      kernels::matmul_at(input_value(self, 0), self.grad, *gb, m, k, n, true);
    }
  }, "matmul");
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_bt");
  require_rank(b, 2, "matmul_bt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_bt: inner extents differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n);
  kernels::matmul_bt(a.data(), b.data(), out, m, k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    if (auto* ga = input_grad(self, 0)) {
      kernels::matmul(self.grad, input_value(self, 1), *ga, m, n, k, true);
    }
    if (auto* gb = input_grad(self, 1)) {
      // d(b)[n x k] = grad^T [n x m] * a [m x k]
      kernels::matmul_at(self.grad, input_value(self, 0), *gb, m, n, k, true);
    }
  }, "matmul_bt");
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* g = input_grad(self, k)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  }, "add");
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_bias");
  require_rank(bias, 1, "add_bias");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.dim(0) != n) throw DimensionError("add_bias: bias length differs from row width");
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.data()[j];
  return make_result(x.shape(), std::move(out), {x, bias}, [m, n](detail::Node& self) {
    if (auto* gx = input_grad(self, 0)) {
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i];
    }
    if (auto* gb = input_grad(self, 1)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*gb)[j] += self.grad[i * n + j];
    }
  }, "add_bias");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& av = input_value(self, 0);
    const auto& bv = input_value(self, 1);
    if (auto* ga = input_grad(self, 0)) {
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i] * bv[i];
    }
    if (auto* gb = input_grad(self, 1)) {
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += self.grad[i] * av[i];
    }
  }, "mul");
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  return make_result(x.shape(), std::move(out), {x}, [factor](detail::Node& self) {
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * factor;
    }
  }, "scale");
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result({1}, {total}, {x}, [](detail::Node& self) {
    if (auto* g = input_grad(self, 0)) {
      for (auto& v : *g) v += self.grad[0];
    }
  }, "sum");
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto& shape = x.shape();
  if (axis >= shape.size()) throw DimensionError("softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];

  std::vector<double> out(x.numel());
  if (inner == 1) {
    kernels::softmax_rows(x.data(), out, outer, n);
  } else {
    const auto in = x.data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t c = 0; c < inner; ++c) {
        auto at = [&](std::size_t j) { return (o * n + j) * inner + c; };
        double mx = in[at(0)];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[at(j)]);
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          out[at(j)] = std::exp(in[at(j)] - mx);
          total += out[at(j)];
        }
        for (std::size_t j = 0; j < n; ++j) out[at(j)] /= total;
      }
    }
  }
  std::vector<double> y = out;
  return make_result(shape, std::move(out), {x},
                     [y = std::move(y), outer, inner, n](detail::Node& self) {
    auto* g = input_grad(self, 0);
    if (!g) return;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t c = 0; c < inner; ++c) {
        auto at = [&](std::size_t j) { return (o * n + j) * inner + c; };
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += y[at(j)] * self.grad[at(j)];
        for (std::size_t j = 0; j < n; ++j) (*g)[at(j)] += y[at(j)] * (self.grad[at(j)] - dot);
      }
    }
  }, "softmax");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  if (gain.numel() != n || bias.numel() != n) {
    throw DimensionError("layer_norm: gain/bias length differs from row width");
  }
  std::vector<double> out(x.numel()), xhat(x.numel()), inv_std(rows);
  const auto in = x.data();
  const auto g = gain.data();
  const auto b = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (row[j] - mean) * inv_std[r];
      out[r * n + j] = xhat[r * n + j] * g[j] + b[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gain, bias},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
                      n](detail::Node& self) {
    const auto& gv = input_value(self, 1);
    auto* gx = input_grad(self, 0);
    auto* gg = input_grad(self, 1);
    auto* gb = input_grad(self, 2);
    std::vector<double> dxhat(n);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* dy = self.grad.data() + r * n;
      const double* xh = xhat.data() + r * n;
      if (gg) for (std::size_t j = 0; j < n; ++j) (*gg)[j] += dy[j] * xh[j];
      if (gb) for (std::size_t j = 0; j < n; ++j) (*gb)[j] += dy[j];
      if (!gx) continue;
      double mean_d = 0.0, mean_dx = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        dxhat[j] = dy[j] * gv[j];
        mean_d += dxhat[j];
        mean_dx += dxhat[j] * xh[j];
      }
      mean_d /= static_cast<double>(n);
      mean_dx /= static_cast<double>(n);
      for (std::size_t j = 0; j < n; ++j) {
        (*gx)[r * n + j] += inv_std[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
      }
    }
  }, "layer_norm");
}

double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kGeluC * x * x * x)));
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_scalar(x.data()[i]);
  return make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto* g = input_grad(self, 0);
    if (!g) return;
    const auto& xv = input_value(self, 0);
    for (std::size_t i = 0; i < g->size(); ++i) {
      const double v = xv[i];
      const double t = std::tanh(kSqrt2OverPi * (v + kGeluC * v * v * v));
      const double dt = (1.0 - t * t) * kSqrt2OverPi * (1.0 + 3.0 * kGeluC * v * v);
      (*g)[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
    }
  }, "gelu");
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets,
                     std::int32_t ignore_index) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != rows) throw DimensionError("cross_entropy: one target per row required");
  std::size_t counted = 0;
  for (auto t : targets) {
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw std::out_of_range("cross_entropy: target id " + std::to_string(t) + " out of range");
    }
    ++counted;
  }
  if (counted == 0) throw std::domain_error("cross_entropy: every position is ignored");

  std::vector<double> probs(rows * vocab);
  kernels::softmax_rows(logits.data(), probs, rows, vocab);
  double loss = 0.0;
  const auto in = logits.data();
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == ignore_index) continue;
    const double* row = in.data() + r * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double total = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) total += std::exp(row[j] - mx);
    loss -= row[static_cast<std::size_t>(targets[r])] - mx - std::log(total);
  }
  const double denom = static_cast<double>(counted);
  loss /= denom;
  std::vector<std::int32_t> tg(targets.begin(), targets.end());
  return make_result({1}, {loss}, {logits},
                     [probs = std::move(probs), tg = std::move(tg), rows, vocab, denom,
                      ignore_index](detail::Node& self) {
    auto* g = input_grad(self, 0);
    if (!g) return;
    const double up = self.grad[0] / denom;
    for (std::size_t r = 0; r < rows; ++r) {
      if (tg[r] == ignore_index) continue;
      for (std::size_t j = 0; j < vocab; ++j) (*g)[r * vocab + j] += up * probs[r * vocab + j];
      (*g)[r * vocab + static_cast<std::size_t>(tg[r])] -= up;
    }
  }, "cross_entropy");
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids) {
  require_rank(table, 2, "embedding");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " out of range");
    }
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  return make_result({ids.size(), d}, std::move(out), {table},
                     [idv = std::move(idv), d](detail::Node& self) {
    auto* g = input_grad(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < idv.size(); ++i) {
      const std::size_t base = static_cast<std::size_t>(idv[i]) * d;
      for (std::size_t j = 0; j < d; ++j) (*g)[base + j] += self.grad[i * d + j];
    }
  }, "embedding");
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(rows.size() * n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m) throw std::out_of_range("gather_rows: row index out of range");
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * n), n,
                out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  std::vector<std::size_t> rv(rows.begin(), rows.end());
  return make_result({rows.size(), n}, std::move(out), {x},
                     [rv = std::move(rv), n](detail::Node& self) {
    auto* g = input_grad(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < rv.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) (*g)[rv[i] * n + j] += self.grad[i * n + j];
  }, "gather_rows");
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout probability must be < 1");
  std::vector<double> keep(x.numel());
  const double s = 1.0 / (1.0 - p);
  for (auto& k : keep) k = uniform01(rng) < p ? 0.0 : s;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * keep[i];
  return make_result(x.shape(), std::move(out), {x}, [keep = std::move(keep)](detail::Node& self) {
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * keep[i];
    }
  }, "dropout");
}

Tensor attention(const Tensor& qkv, std::span<const std::size_t> lengths, std::size_t heads,
                 bool causal, const Tensor& bias_table,
                 const std::function<std::size_t(std::ptrdiff_t)>& bucket) {
  require_rank(qkv, 2, "attention");
  if (heads == 0 || qkv.dim(1) % (3 * heads) != 0) {
    throw DimensionError("attention: qkv width must be 3 * heads * head_dim");
  }
  const std::size_t d = qkv.dim(1) / 3;
  std::vector<std::size_t> lens(lengths.begin(), lengths.end());
  kernels::AttentionLayout layout{lens, heads, d / heads, causal};
  if (layout.total_rows() != qkv.dim(0)) {
    throw DimensionError("attention: sequence lengths do not cover the qkv rows");
  }

  // Expand the bucketed table into one offset-indexed row per (sequence, head).
  std::vector<double> bias;
  std::vector<std::size_t> bias_bucket;  // bucket column for each bias entry
  std::size_t buckets = 0;
  if (bias_table.defined()) {
    require_rank(bias_table, 2, "attention");
    if (bias_table.dim(0) != heads) throw DimensionError("attention: bias table needs one row per head");
    buckets = bias_table.dim(1);
    bias.reserve(layout.bias_size());
    bias_bucket.reserve(layout.bias_size());
    const auto table = bias_table.data();
    for (std::size_t len : lens) {
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t o = 0; o + 1 < 2 * len; ++o) {
          const auto offset = static_cast<std::ptrdiff_t>(o) - static_cast<std::ptrdiff_t>(len - 1);
          const std::size_t b = bucket(offset);
          if (b >= buckets) throw std::out_of_range("attention: bucket id out of range");
          bias.push_back(table[h * buckets + b]);
          bias_bucket.push_back(h * buckets + b);
        }
      }
    }
  }

  std::vector<double> out(qkv.dim(0) * d);
  std::vector<double> probs(layout.probs_size());
  kernels::attention_forward(qkv.data(), bias, layout, out, probs);

  std::vector<Tensor> inputs{qkv};
  if (bias_table.defined()) inputs.push_back(bias_table);
  return make_result({qkv.dim(0), d}, std::move(out), std::move(inputs),
                     [lens = std::move(lens), heads, d, causal, probs = std::move(probs),
                      bias_bucket = std::move(bias_bucket)](detail::Node& self) {
    kernels::AttentionLayout layout{lens, heads, d / heads, causal};
    auto* gq = input_grad(self, 0);
    auto* gt = self.inputs.size() > 1 ? input_grad(self, 1) : nullptr;
    std::vector<double> d_qkv(self.inputs[0]->value.size());
    std::vector<double> d_bias(gt ? bias_bucket.size() : 0);
    kernels::attention_backward(input_value(self, 0), probs, self.grad, layout, d_qkv, d_bias);
    if (gq) {
      for (std::size_t i = 0; i < d_qkv.size(); ++i) (*gq)[i] += d_qkv[i];
    }
    if (gt) {
      for (std::size_t i = 0; i < d_bias.size(); ++i) (*gt)[bias_bucket[i]] += d_bias[i];
    }
  }, "attention");
}

}  // namespace mlmgen

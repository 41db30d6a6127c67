#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "mlmgen/model.hpp"
#include "mlmgen/tensor.hpp"

namespace test {

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

inline mlmgen::Tensor random_tensor(mlmgen::Shape shape, std::uint64_t seed, bool grad = false) {
  const std::size_t n = mlmgen::shape_numel(shape);
  return mlmgen::Tensor::from_data(std::move(shape), random_values(n, seed), grad);
}

/// Small model with weights large enough that its distributions are far
/// from uniform.
inline mlmgen::ModelConfig tiny_config(std::size_t vocab, mlmgen::AttentionMode mode =
                                                             mlmgen::AttentionMode::bidirectional) {
  mlmgen::ModelConfig c;
  c.vocab_size = vocab;
  c.layers = 2;
  c.heads = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.num_buckets = 8;
  c.max_distance = 16;
  c.attention_mode = mode;
  c.init_std = 0.5;
  return c;
}

inline mlmgen::Transformer tiny_model(std::size_t vocab, std::uint64_t seed,
                                      mlmgen::AttentionMode mode = mlmgen::AttentionMode::bidirectional) {
  auto config = tiny_config(vocab, mode);
  auto weights = mlmgen::init_weights(config, seed);
  // Nonzero relative biases so positions matter.
  auto bias = weights.relative_bias.mutable_data();
  const auto noise = random_values(bias.size(), seed + 1000);
  for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = noise[i];
  return mlmgen::Transformer(config, std::move(weights));
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)});
}

}  // namespace test

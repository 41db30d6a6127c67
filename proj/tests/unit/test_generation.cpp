#include <cmath>
#include <map>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "mlmgen/errors.hpp"
#include "mlmgen/generation.hpp"

using namespace mlmgen;

namespace {

// Logits are a fixed table row chosen by the token before the readout.
class BigramLM : public MaskedLM {
 public:
  BigramLM(std::size_t vocab, std::uint64_t seed) : vocab_(vocab), table_(test::random_values(vocab * vocab, seed, 2.0)) {}
  std::size_t vocab_size() const override { return vocab_; }
  std::vector<double> logits_at(std::span<const TokenId> ids, std::size_t position) const override {
    const auto prev = static_cast<std::size_t>(position == 0 ? 0 : ids[position - 1]);
    return {table_.begin() + static_cast<std::ptrdiff_t>(prev * vocab_),
            table_.begin() + static_cast<std::ptrdiff_t>((prev + 1) * vocab_)};
  }

 private:
  std::size_t vocab_;
  std::vector<double> table_;
};

double log_softmax_at(std::vector<double> logits, std::size_t i) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (double x : logits) z += std::exp(x - m);
  return logits[i] - m - std::log(z);
}

}  // namespace

TEST_CASE("mask-append input layout") {
  GenerationConfig cfg;
  const std::vector<TokenId> prefix{2, 20, 21};
  CHECK(mask_append_input(prefix, cfg) == std::vector<TokenId>{2, 20, 21, 4, 4, 4, 3});
  cfg.n_pad_masks = 0;
  CHECK(mask_append_input(prefix, cfg) == std::vector<TokenId>{2, 20, 21, 4, 3});
  cfg.append_sep = false;
  CHECK(mask_append_input(prefix, cfg) == std::vector<TokenId>{2, 20, 21, 4});
}

TEST_CASE("next-token distribution matches manual assembly and sums to one") {
  const auto model = test::tiny_model(30, 4);
  for (std::size_t pads : {0, 1, 2, 3}) {
    GenerationConfig cfg;
    cfg.n_pad_masks = pads;
    const std::vector<TokenId> prefix{2, 17, 25, 9};
    std::vector<TokenId> manual = prefix;
    manual.insert(manual.end(), 1 + pads, special::kMask);
    manual.push_back(special::kSep);
    const auto logits = model.logits_at(manual, prefix.size());
    const auto lp = next_token_log_dist(model, prefix, cfg);
    const auto p = next_token_dist(model, prefix, cfg);
    double sum = 0;
    for (std::size_t t = 0; t < lp.size(); ++t) {
      CHECK(lp[t] == doctest::Approx(log_softmax_at(logits, t)).epsilon(1e-12));
      CHECK(p[t] >= 0.0);
      sum += p[t];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  // Batched and single calls agree exactly.
  const std::vector<std::vector<TokenId>> prefixes{{2, 17}, {2, 18, 19, 20}, {2}};
  const auto batch = next_token_log_dists(model, prefixes, {});
  for (std::size_t i = 0; i < prefixes.size(); ++i) CHECK(batch[i] == next_token_log_dist(model, prefixes[i], {}));
}

TEST_CASE("generation enforces the input cap") {
  const auto model = test::tiny_model(20, 1);
  GenerationConfig cfg;
  cfg.max_input_length = 7;  // prompt + readout + 2 pads + SEP
  const std::vector<TokenId> prompt{2, 17, 18};
  CHECK_NOTHROW(next_token_log_dist(model, prompt, cfg));
  const std::vector<TokenId> longer{2, 17, 18, 19};
  CHECK_THROWS_AS(next_token_log_dist(model, longer, cfg), LengthError);
}

TEST_CASE("greedy equals beam search of width one") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto model = test::tiny_model(25, 10 + seed);
    GenerationConfig cfg;
    cfg.max_new_tokens = 6;
    cfg.beam_width = 1;
    const std::vector<TokenId> prompt{2, 16};
    CHECK(greedy(model, prompt, cfg) == beam_search(model, prompt, cfg).best.tokens);
  }
}

TEST_CASE("beam search matches exhaustive enumeration on a bigram model") {
  const BigramLM model(6, 3);
  GenerationConfig cfg;
  cfg.max_new_tokens = 3;
  cfg.beam_width = 216;
  const std::vector<TokenId> prompt{2};
  const auto beam = beam_search(model, prompt, cfg);
  double best = -INFINITY;
  std::vector<TokenId> arg;
  for (TokenId a = 0; a < 6; ++a) {
    for (TokenId b = 0; b < 6; ++b) {
      for (TokenId c = 0; c < 6; ++c) {
        const double s = log_softmax_at(model.logits_at(std::vector<TokenId>{2, 4}, 1), static_cast<std::size_t>(a)) +
                         log_softmax_at(model.logits_at(std::vector<TokenId>{2, a, 4}, 2), static_cast<std::size_t>(b)) +
                         log_softmax_at(model.logits_at(std::vector<TokenId>{2, a, b, 4}, 3), static_cast<std::size_t>(c));
        if (s > best) {
          best = s;
          arg = {a, b, c};
        }
      }
    }
  }
  CHECK(beam.best.tokens == arg);
  CHECK(beam.best.score == doctest::Approx(best).epsilon(1e-12));
  CHECK(beam.finished.size() == 216);
}

TEST_CASE("beam scores are the sum of re-scored token log-probabilities") {
  const auto model = test::tiny_model(25, 21);
  GenerationConfig cfg;
  cfg.max_new_tokens = 5;
  const std::vector<TokenId> prompt{2, 16, 17};
  const auto result = beam_search(model, prompt, cfg);
  for (const auto& h : result.finished) {
    double s = 0;
    std::vector<TokenId> prefix = prompt;
    for (TokenId t : h.tokens) {
      s += next_token_log_dist(model, prefix, cfg)[static_cast<std::size_t>(t)];
      prefix.push_back(t);
    }
    CHECK(h.score == doctest::Approx(s).epsilon(1e-12));
  }
  for (std::size_t i = 1; i < result.finished.size(); ++i) {
    CHECK(result.finished[i - 1].score >= result.finished[i].score);
  }
}

TEST_CASE("stop tokens end a hypothesis and are kept") {
  const BigramLM model(8, 5);
  GenerationConfig cfg;
  cfg.max_new_tokens = 10;
  cfg.strategy = Strategy::greedy;
  const std::vector<TokenId> prompt{2};
  const auto free_run = greedy(model, prompt, cfg);
  REQUIRE(free_run.size() == 10);
  cfg.stop_tokens = {free_run[2]};
  const auto stopped = greedy(model, prompt, cfg);
  const auto first = std::find(free_run.begin(), free_run.end(), free_run[2]);
  CHECK(stopped == std::vector<TokenId>(free_run.begin(), first + 1));

  cfg.max_new_tokens = 0;
  Rng rng(1);
  CHECK(generate(model, prompt, cfg, rng).empty());
  cfg.strategy = Strategy::beam;
  CHECK(generate(model, prompt, cfg, rng).empty());
}

TEST_CASE("digit constraint yields exactly six digits") {
  const auto model = test::tiny_model(30, 8);
  GenerationConfig cfg;
  cfg.constraint = digit_constraint(6);
  cfg.max_new_tokens = 20;
  const std::vector<TokenId> prompt{2, 20};
  for (Strategy s : {Strategy::greedy, Strategy::beam, Strategy::sample}) {
    cfg.strategy = s;
    Rng rng(3);
    const auto out = generate(model, prompt, cfg, rng);
    REQUIRE(out.size() == 6);
    for (TokenId t : out) {
      CHECK(t >= special::kFirstDigit);
      CHECK(t < special::kFirstRegular);
    }
  }
  std::vector<double> lp(30, -INFINITY);
  lp[20] = 0.0;
  const std::vector<TokenId> digits{5, 6};
  CHECK_THROWS_AS(apply_constraint(lp, digits), ConstraintError);
  std::vector<double> mixed{std::log(0.5), std::log(0.25), std::log(0.25)};
  const std::vector<TokenId> allowed{1, 2};
  apply_constraint(mixed, allowed);
  CHECK(mixed[0] == -INFINITY);
  CHECK(std::exp(mixed[1]) == doctest::Approx(0.5));
}

TEST_CASE("filter_distribution: top-k, top-p, temperature") {
  const std::vector<double> logits{std::log(0.5), std::log(0.3), std::log(0.15), std::log(0.05)};
  auto p = filter_distribution(logits, 0, 1.0, 1.0);
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[3] == doctest::Approx(0.05));

  p = filter_distribution(logits, 1, 1.0, 1.0);
  CHECK(p == std::vector<double>{1.0, 0.0, 0.0, 0.0});

  p = filter_distribution(logits, 0, 0.75, 1.0);  // nucleus {0, 1}
  CHECK(p[0] == doctest::Approx(0.5 / 0.8));
  CHECK(p[1] == doctest::Approx(0.3 / 0.8));
  CHECK(p[2] == 0.0);

  p = filter_distribution(logits, 2, 0.9, 1.0);  // top-k is the smaller set
  CHECK(p[2] == 0.0);
  CHECK(p[0] + p[1] == doctest::Approx(1.0));

  p = filter_distribution(logits, 0, 1.0, 1e-3);
  CHECK(p[0] == doctest::Approx(1.0));

  p = filter_distribution(logits, 0, 1.0, 2.0);
  CHECK(p[0] / p[1] == doctest::Approx(std::sqrt(0.5 / 0.3)));

  CHECK_THROWS(filter_distribution(logits, 0, 1.0, 0.0));
  CHECK_THROWS(filter_distribution(logits, 0, 0.0, 1.0));
}

TEST_CASE("draw matches its probabilities") {
  const std::vector<double> p{0.1, 0.6, 0.3};
  Rng rng(17);
  std::vector<double> counts(3, 0);
  const int n = 30000;
  for (int i = 0; i < n; ++i) counts[draw(p, rng)] += 1;
  for (std::size_t i = 0; i < 3; ++i) CHECK(counts[i] / n == doctest::Approx(p[i]).epsilon(0.05));
}

TEST_CASE("sampling with top_k = 1 is greedy; sampling is reproducible") {
  const auto model = test::tiny_model(25, 31);
  GenerationConfig cfg;
  cfg.max_new_tokens = 6;
  cfg.top_k = 1;
  const std::vector<TokenId> prompt{2, 15};
  Rng rng(2);
  CHECK(sample(model, prompt, cfg, rng) == greedy(model, prompt, cfg));

  cfg.top_k = 0;
  cfg.top_p = 1.0;
  Rng a(5), b(5);
  CHECK(sample(model, prompt, cfg, a) == sample(model, prompt, cfg, b));
}

TEST_CASE("generation config validation and JSON") {
  GenerationConfig cfg;
  cfg.beam_width = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.top_p = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.temperature = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = {};
  cfg.n_pad_masks = 3;
  cfg.strategy = Strategy::sample;
  cfg.stop_tokens = {20, 21};
  const nlohmann::json j = cfg;
  const auto back = j.get<GenerationConfig>();
  CHECK(back.n_pad_masks == 3);
  CHECK(back.strategy == Strategy::sample);
  CHECK(back.stop_tokens == cfg.stop_tokens);
  CHECK(strategy_from_string(to_string(Strategy::beam)) == Strategy::beam);
  CHECK_THROWS(strategy_from_string("nucleus"));
}

TEST_CASE("Gibbs sampling: length, no specials, determinism, degenerate vocab") {
  const auto model = test::tiny_model(30, 41);
  const std::vector<TokenId> prompt{2, 20, 21};
  for (GibbsInit init : {GibbsInit::mask, GibbsInit::random}) {
    GibbsConfig cfg;
    cfg.iters = 40;
    cfg.burn_in = 20;
    cfg.init = init;
    Rng a(8), b(8);
    const auto x = gibbs_generate(model, prompt, 7, cfg, a);
    CHECK(x == gibbs_generate(model, prompt, 7, cfg, b));
    REQUIRE(x.size() == 7);
    for (TokenId t : x) CHECK(t >= special::kCount);
  }
  GibbsConfig cfg;
  Rng rng(1);
  CHECK_THROWS(gibbs_generate(model, prompt, 0, cfg, rng));
  const auto specials_only = test::tiny_model(special::kCount, 2);
  CHECK_THROWS(gibbs_generate(specials_only, prompt, 3, cfg, rng));
}

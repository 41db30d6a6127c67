#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "mlmgen/corpus.hpp"
#include "mlmgen/errors.hpp"
#include "mlmgen/trainer.hpp"

using namespace mlmgen;

namespace {

std::vector<TokenId> regular_sequence(std::size_t n, TokenId first = special::kFirstRegular) {
  std::vector<TokenId> ids{special::kCls};
  for (std::size_t i = 0; i < n; ++i) ids.push_back(static_cast<TokenId>(first + i % 20));
  ids.push_back(special::kSep);
  return ids;
}

struct Trained {
  std::vector<std::string> lines;
  Vocabulary vocab;
  std::vector<std::vector<TokenId>> data;
};

Trained grammar_data(std::size_t size, std::uint64_t seed) {
  CorpusSpec spec;
  spec.size = size;
  spec.seed = seed;
  Trained t{make_corpus(spec), Vocabulary{}, {}};
  t.vocab = build_vocab(t.lines, 128);
  t.data = encode_corpus(t.lines, t.vocab);
  return t;
}

ModelConfig small_config(std::size_t vocab, AttentionMode mode = AttentionMode::bidirectional) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.layers = 1;
  c.heads = 2;
  c.d_model = 32;
  c.d_ff = 64;
  c.num_buckets = 16;
  c.max_distance = 32;
  c.attention_mode = mode;
  return c;
}

}  // namespace

TEST_CASE("span mask budget, span lengths and replacement split") {
  Rng rng(3);
  const auto ids = regular_sequence(40);
  const MaskedSequence m = sample_span_mask(ids, 100, rng);
  CHECK(m.plan.positions.size() == 6);  // round(0.15 * 40)
  std::size_t total = 0;
  for (std::size_t len : m.plan.span_lengths) {
    CHECK(len >= 1);
    CHECK(len <= 3);
    total += len;
  }
  CHECK(total == 6);
  CHECK(std::is_sorted(m.plan.positions.begin(), m.plan.positions.end()));
  REQUIRE(m.targets.size() == ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const bool masked = std::binary_search(m.plan.positions.begin(), m.plan.positions.end(), i);
    CHECK(m.targets[i] == (masked ? ids[i] : kIgnoreTarget));
    if (!masked) CHECK(m.corrupted[i] == ids[i]);
  }

  // Replacement shares over many draws: 80 / 10 / 10.
  std::map<Replacement, double> counts;
  double n = 0;
  for (int r = 0; r < 3000; ++r) {
    const MaskedSequence s = sample_span_mask(ids, 100, rng);
    for (std::size_t j = 0; j < s.plan.positions.size(); ++j) {
      const std::size_t p = s.plan.positions[j];
      const Replacement kind = s.plan.replacement[j];
      counts[kind] += 1;
      n += 1;
      if (kind == Replacement::mask) CHECK(s.corrupted[p] == special::kMask);
      if (kind == Replacement::keep) CHECK(s.corrupted[p] == ids[p]);
      if (kind == Replacement::random) {
        CHECK(s.corrupted[p] >= special::kFirstRegular);
        CHECK(s.corrupted[p] < 100);
      }
    }
  }
  CHECK(counts[Replacement::mask] / n == doctest::Approx(0.8).epsilon(0.02));
  CHECK(counts[Replacement::random] / n == doctest::Approx(0.1).epsilon(0.1));
  CHECK(counts[Replacement::keep] / n == doctest::Approx(0.1).epsilon(0.1));
}

TEST_CASE("span masking never touches specials and spans stay inside segments") {
  Rng rng(5);
  std::vector<TokenId> ids{special::kCls};
  for (int seg = 0; seg < 6; ++seg) {
    for (int i = 0; i < 3; ++i) ids.push_back(static_cast<TokenId>(special::kFirstRegular + seg));
    ids.push_back(special::kSep);
  }
  for (int r = 0; r < 500; ++r) {
    const MaskedSequence m = sample_span_mask(ids, 40, rng, MaskingOptions{0.5, 3, 0.8, 0.1});
    for (std::size_t p : m.plan.positions) CHECK(ids[p] >= special::kCount);
  }
}

TEST_CASE("span masking rejects degenerate inputs") {
  Rng rng(1);
  CHECK_THROWS_AS(sample_span_mask(std::vector<TokenId>{2, 20, 3}, 50, rng), std::invalid_argument);
  CHECK_THROWS(sample_span_mask(std::vector<TokenId>{2, 0, 0, 0, 3}, 50, rng));
  // Random replacement needs a regular id to draw.
  CHECK_THROWS(sample_span_mask(regular_sequence(10, special::kFirstDigit), special::kFirstRegular, rng));
  MaskingOptions no_random;
  no_random.mask_prob = 0.9;
  no_random.random_prob = 0.0;
  CHECK_NOTHROW(sample_span_mask(regular_sequence(10, special::kFirstDigit), special::kFirstRegular, rng, no_random));
}

TEST_CASE("span masking is deterministic per rng state") {
  const auto ids = regular_sequence(30);
  Rng a(9), b(9);
  const auto x = sample_span_mask(ids, 60, a), y = sample_span_mask(ids, 60, b);
  CHECK(x.corrupted == y.corrupted);
  CHECK(x.plan.positions == y.plan.positions);
}

TEST_CASE("corpora are deterministic and shaped as specified") {
  CorpusSpec spec;
  spec.size = 200;
  CHECK(make_corpus(spec) == make_corpus(spec));
  spec.seed = 2;
  const auto other = make_corpus(spec);
  spec.seed = 1;
  CHECK(other != make_corpus(spec));

  spec.kind = CorpusKind::parallel_pairs;
  for (const auto& line : make_corpus(spec)) {
    const auto tgt = line.find(" TGT: ");
    REQUIRE(line.rfind("SRC: ", 0) == 0);
    REQUIRE(tgt != std::string::npos);
    CHECK(line.substr(tgt + 6) == translate_tokens(line.substr(5, tgt - 5)));
  }

  spec.kind = CorpusKind::idiom_injected;
  spec.size = 4000;
  spec.idiom_rate = 0.25;
  double hits = 0;
  for (const auto& line : make_corpus(spec)) hits += line.find(spec.idiom) != std::string::npos;
  CHECK(hits / 4000 == doctest::Approx(0.25).epsilon(0.1));

  spec.kind = CorpusKind::grammar_sentences;
  spec.size = 10;
  spec.lines_per_document = 4;
  const auto docs = make_corpus(spec);
  REQUIRE(docs.size() == 3);
  CHECK(std::count(docs[0].begin(), docs[0].end(), '\n') == 3);
  CHECK(std::count(docs[2].begin(), docs[2].end(), '\n') == 1);
}

TEST_CASE("learning-rate schedule and config JSON") {
  TrainConfig tc;
  tc.lr = 0.01;
  tc.warmup_steps = 10;
  CHECK(learning_rate(tc, 0) == doctest::Approx(0.001));
  CHECK(learning_rate(tc, 9) == doctest::Approx(0.01));
  CHECK(learning_rate(tc, 500) == doctest::Approx(0.01));

  tc.pack = true;
  tc.masking.max_span = 2;
  const nlohmann::json j = tc;
  CHECK(j.get<TrainConfig>() == tc);
  CHECK_THROWS_AS(nlohmann::json({{"stepz", 3}}).get<TrainConfig>(), ConfigError);
}

TEST_CASE("zero steps return the initialization; training is reproducible") {
  const auto t = grammar_data(100, 1);
  const ModelConfig c = small_config(t.vocab.size());
  TrainConfig tc;
  tc.steps = 0;
  const auto zero = train(c, t.data, tc);
  const auto init = init_weights(c, tc.seed);
  CHECK(checkpoint_bytes(c, zero.weights) == checkpoint_bytes(c, init));
  CHECK(zero.trace.empty());

  tc.steps = 5;
  tc.batch_size = 4;
  const auto a = train(c, t.data, tc), b = train(c, t.data, tc);
  CHECK(checkpoint_bytes(c, a.weights) == checkpoint_bytes(c, b.weights));
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) CHECK(a.trace[i].loss == b.trace[i].loss);

  std::ostringstream csv;
  write_loss_csv(csv, a.trace);
  CHECK(csv.str().rfind("step,loss,lr\n", 0) == 0);
}

TEST_CASE("MLM training lowers the loss on the grammar corpus") {
  const auto t = grammar_data(2000, 4);
  const ModelConfig c = small_config(t.vocab.size());
  TrainConfig tc;
  tc.steps = 300;
  tc.batch_size = 16;
  tc.lr = 0.003;
  tc.warmup_steps = 20;
  const auto r = train(c, t.data, tc);
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    first += r.trace[i].loss;
    last += r.trace[r.trace.size() - 1 - i].loss;
  }
  CHECK(last <= 0.7 * first);

  const Transformer before(c, init_weights(c, tc.seed)), after(c, r.weights);
  CHECK(heldout_mlm_loss(after, t.data, 7) < heldout_mlm_loss(before, t.data, 7));
}

TEST_CASE("packed training runs and stays reproducible") {
  const auto t = grammar_data(200, 6);
  ModelConfig c = small_config(t.vocab.size());
  c.max_train_len = 32;
  TrainConfig tc;
  tc.steps = 4;
  tc.batch_size = 3;
  tc.pack = true;
  const auto a = train(c, t.data, tc), b = train(c, t.data, tc);
  CHECK(checkpoint_bytes(c, a.weights) == checkpoint_bytes(c, b.weights));
}

TEST_CASE("causal training beats the unigram oracle perplexity") {
  const auto t = grammar_data(2000, 8);
  const auto heldout = grammar_data(200, 9);
  const ModelConfig c = small_config(t.vocab.size(), AttentionMode::causal);
  TrainConfig tc;
  tc.steps = 300;
  tc.lr = 0.003;
  tc.warmup_steps = 20;
  const Transformer model(c, train(c, t.data, tc).weights);

  // Unigram model of next tokens (everything after CLS) with add-one smoothing.
  std::vector<double> counts(t.vocab.size(), 1.0);
  double total = static_cast<double>(t.vocab.size());
  for (const auto& seq : t.data) {
    for (std::size_t i = 1; i < seq.size(); ++i) {
      counts[static_cast<std::size_t>(seq[i])] += 1;
      total += 1;
    }
  }
  const auto reencoded = encode_corpus(heldout.lines, t.vocab);
  double nll = 0, n = 0;
  for (const auto& seq : reencoded) {
    for (std::size_t i = 1; i < seq.size(); ++i) {
      nll -= std::log(counts[static_cast<std::size_t>(seq[i])] / total);
      n += 1;
    }
  }
  const double unigram = std::exp(nll / n);
  CHECK(heldout_causal_perplexity(model, reencoded) < unigram);
}

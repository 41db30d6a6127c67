#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "doctest.h"
#include "mlmgen/cli.hpp"
#include "mlmgen/errors.hpp"

using namespace mlmgen;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mlmgen_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Trains a tiny checkpoint once for the tests that need a model.
const fs::path& tiny_checkpoint() {
  static const fs::path ckpt = [] {
    const fs::path dir = scratch("model");
    const Run r = cli({"train", "--out", dir.string(), "--set", "corpus.size=100", "--set", "vocab_size=64",
                       "--set", "model.layers=1", "--set", "model.d_model=16", "--set", "model.heads=2",
                       "--set", "model.d_ff=32", "--set", "train.steps=3", "--set", "train.batch_size=2"});
    REQUIRE(r.code == 0);
    return dir / "model.ckpt";
  }();
  return ckpt;
}

}  // namespace

TEST_CASE("dotted overrides") {
  nlohmann::json c = nlohmann::json::object();
  apply_override(c, "train.lr=0.5");
  apply_override(c, "prompt=hello world");
  apply_override(c, "pad_masks=[0,2]");
  CHECK(c["train"]["lr"] == 0.5);
  CHECK(c["prompt"] == "hello world");
  CHECK(c["pad_masks"] == nlohmann::json::array({0, 2}));
  CHECK_THROWS(apply_override(c, "no_equals_sign"));
}

TEST_CASE("usage and configuration errors exit with 2") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"fly"}).code == 2);
  const fs::path dir = scratch("errors");
  CHECK(cli({"train", "--out", dir.string(), "--set", "bogus=1"}).code == 2);
  CHECK(cli({"train", "--out", dir.string(), "--set", "train.bogus=1"}).code == 2);
  CHECK(cli({"eval", "--out", dir.string(), "--checkpoint", tiny_checkpoint().string(), "--set", "builtin=nope"})
            .code == 2);
  CHECK(cli({"generate", "--out", dir.string(), "--config", (dir / "missing.json").string()}).code != 0);
}

TEST_CASE("runtime failures exit with 1") {
  const fs::path dir = scratch("runtime");
  CHECK(cli({"generate", "--out", dir.string(), "--checkpoint", (dir / "none.ckpt").string()}).code == 1);
}

TEST_CASE("generate with max_new_tokens = 0 writes an empty continuation") {
  const fs::path dir = scratch("gen0");
  const Run r = cli({"generate", "--out", dir.string(), "--checkpoint", tiny_checkpoint().string(), "--set",
                     "prompt=the cat", "--set", "generation.max_new_tokens=0"});
  REQUIRE(r.code == 0);
  CHECK(slurp(dir / "generation.txt") == "\n");
  const auto resolved = nlohmann::json::parse(slurp(dir / "config.resolved.json"));
  CHECK(resolved["generation"]["max_new_tokens"] == 0);
}

TEST_CASE("repeated commands produce identical files") {
  const std::vector<std::vector<std::string>> commands{
      {"generate", "--set", "prompt=the dog", "--set", "generation.strategy=sample"},
      {"rank", "--set", "context=the dog", "--set", R"(candidates=["runs .", "sees the cat ."])"},
      {"eval", "--set", "builtin=transitivity", "--set", "size=4"},
      {"needle", "--set", "needle.haystack_lengths=[16]", "--set", "needle.trials_per_cell=1"},
  };
  for (const auto& base : commands) {
    std::string first;
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path dir = scratch("repeat");
      auto args = base;
      args.insert(args.end(), {"--out", dir.string(), "--checkpoint", tiny_checkpoint().string(), "--seed", "3"});
      REQUIRE(cli(args).code == 0);
      std::string all;
      for (const auto& e : fs::directory_iterator(dir)) all += e.path().filename().string() + slurp(e.path());
      if (rep == 0) first = all;
      else CHECK(all == first);
    }
  }
}

TEST_CASE("needle with the copy oracle writes an all-ones grid") {
  const fs::path dir = scratch("oracle");
  REQUIRE(cli({"needle", "--out", dir.string(), "--set", "copy_oracle=true", "--set", "needle.trials_per_cell=2"})
              .code == 0);
  std::istringstream csv(slurp(dir / "needle.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "length,depth,accuracy,trials");
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    CHECK(line.find(",1,2") != std::string::npos);
    ++rows;
  }
  CHECK(rows == 20);
}

TEST_CASE("train reads a corpus file when given a path") {
  const fs::path dir = scratch("corpus_file");
  std::ofstream(dir / "lines.txt") << "the cat runs .\n\nthe dog sleeps .\na bird sings today .\n";
  const Run r = cli({"train", "--out", (dir / "out").string(), "--set", "corpus.path=" + (dir / "lines.txt").string(),
                     "--set", "vocab_size=32", "--set", "model.layers=1", "--set", "model.d_model=8", "--set",
                     "model.heads=2", "--set", "model.d_ff=8", "--set", "train.steps=2", "--set", "train.batch_size=2"});
  REQUIRE(r.code == 0);
  const std::string vocab = slurp(dir / "out" / "vocab.txt");
  CHECK(vocab.find("\nbird\n") != std::string::npos);
  CHECK(cli({"train", "--out", (dir / "out").string(), "--set", "corpus.path=" + (dir / "none.txt").string()}).code == 1);
}

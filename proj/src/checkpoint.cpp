#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mlmgen/errors.hpp"
#include "mlmgen/model.hpp"

namespace mlmgen {

namespace {

constexpr char kMagic[4] = {'M', 'L', 'M', 'G'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> checkpoint_bytes(const ModelConfig& config, const ModelWeights& weights) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kVersion);
  const std::string json = nlohmann::json(config).dump();
  put_u32(out, static_cast<std::uint32_t>(json.size()));
  out.insert(out.end(), json.begin(), json.end());
  for (const auto& p : weights.parameters()) {
    const auto data = p.tensor.data();
    put_u64(out, data.size());
    for (double v : data) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

void save_checkpoint(const std::string& path, const ModelConfig& config, const ModelWeights& weights) {
  const auto bytes = checkpoint_bytes(config, weights);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing checkpoint " + path);
}

Transformer checkpoint_from_bytes(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  const auto magic = in.take(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("not an MLMG checkpoint");
  const auto version = in.uint(4);
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto json_len = static_cast<std::size_t>(in.uint(4));
  const auto json_bytes = in.take(json_len);
  ModelConfig config;
  try {
    config = nlohmann::json::parse(json_bytes.begin(), json_bytes.end()).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint config: ") + e.what());
  }

  ModelWeights weights = init_weights(config, 0);
  std::size_t expected = 0;
  const auto params = weights.parameters();
  for (const auto& p : params) expected += 8 + 4 * p.tensor.numel();
  if (in.remaining() != expected) {
    throw FormatError("checkpoint payload is " + std::to_string(in.remaining()) +
                      " bytes, config implies " + std::to_string(expected));
  }
  for (auto p : params) {
    const auto count = in.uint(8);
    if (count != p.tensor.numel()) throw FormatError("parameter " + p.name + " has wrong length");
    auto data = p.tensor.mutable_data();
    for (auto& v : data) v = static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(in.uint(4))));
  }
  return Transformer(config, std::move(weights));
}

Transformer load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return checkpoint_from_bytes(bytes);
}

}  // namespace mlmgen

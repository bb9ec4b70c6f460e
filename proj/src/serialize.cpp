#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "deepspace/errors.hpp"
#include "deepspace/model.hpp"

namespace deepspace::model {

namespace {

constexpr char kMagic[4] = {'D', 'S', 'P', 'C'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "model files are little-endian");

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("truncated model file", pos_);
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t checksum(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes 32-bit lengths.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1U << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> serialize(const DensityModel& model) {
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kVersion);
  const std::string schema = model.schema().to_json().dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(schema.size()));
  w.put_bytes(schema.data(), schema.size());
  w.put<std::uint64_t>(model.n_total());
  w.put<std::uint64_t>(model.config().seed);

  const auto& ix = model.indexing();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ix.hidden_degrees.size()));
  for (const auto& layer : ix.hidden_degrees) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(layer.size()));
    for (int d : layer) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  }

  for (const auto& st : model.stats()) {
    w.put<double>(st.mean);
    w.put<double>(st.stddev);
    w.put<std::uint8_t>(st.log_transform ? 1 : 0);
  }

  const auto masks = model.static_masks();
  const auto& layers = model.network().layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    w.put<std::uint32_t>(static_cast<std::uint32_t>(layer.weights.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(layer.weights.cols()));
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) {
      if (masks[l].data()[i] != 0.0) w.put<float>(static_cast<float>(layer.weights.data()[i]));
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) w.put<float>(static_cast<float>(layer.bias[i]));
  }
  w.put<std::uint32_t>(checksum(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

DensityModel deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.get_string(4) != std::string(kMagic, 4)) throw FormatError("bad magic", 0);
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw FormatError("unsupported model version " + std::to_string(version), 4);
  if (bytes.size() < 12) throw FormatError("truncated model file", bytes.size());
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (checksum(bytes.data(), body) != stored) throw FormatError("checksum mismatch", body);
  Reader in(bytes.first(body));
  in.get<std::uint64_t>();  // magic and version, already checked

  const auto schema_len = in.get<std::uint32_t>();
  const std::size_t schema_at = in.offset();
  data::AttributeSchema schema;
  try {
    schema = data::AttributeSchema::from_json(nlohmann::json::parse(in.get_string(schema_len)));
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("invalid schema: ") + e.what(), schema_at);
  }
  const auto n_total = in.get<std::uint64_t>();
  ModelConfig config;
  config.seed = in.get<std::uint64_t>();
  const std::size_t layers_at = in.offset();
  const auto hidden_count = in.get<std::uint32_t>();
  if (hidden_count == 0 || hidden_count > 64) throw FormatError("invalid hidden layer count", layers_at);
  std::vector<std::vector<int>> degrees(hidden_count);
  config.hidden_sizes.clear();
  for (auto& layer : degrees) {
    const auto size = in.get<std::uint32_t>();
    if (size == 0 || size > in.remaining() / 4) throw FormatError("invalid hidden layer size", in.offset() - 4);
    for (std::uint32_t i = 0; i < size; ++i) layer.push_back(static_cast<int>(in.get<std::uint32_t>()));
    config.hidden_sizes.push_back(static_cast<int>(size));
  }
  std::vector<data::ContinuousStats> stats(schema.size());
  for (auto& st : stats) {
    st.mean = in.get<double>();
    st.stddev = in.get<double>();
    st.log_transform = in.get<std::uint8_t>() != 0;
  }

  DensityModel model;
  try {
    model = DensityModel(schema, config, stats, n_total);
  } catch (const Error& e) {
    throw FormatError(std::string("inconsistent model header: ") + e.what(), layers_at);
  }
  if (model.indexing().hidden_degrees != degrees) {
    throw FormatError("stored neuron degrees do not match the schema", layers_at);
  }
  const auto masks = model.static_masks();
  auto& layers = model.network().layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& layer = layers[l];
    const std::size_t shape_at = in.offset();
    const auto rows = in.get<std::uint32_t>();
    const auto cols = in.get<std::uint32_t>();
    if (rows != layer.weights.rows() || cols != layer.weights.cols()) {
      throw FormatError("layer " + std::to_string(l) + " shape mismatch", shape_at);
    }
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) {
      layer.weights.data()[i] = masks[l].data()[i] != 0.0 ? static_cast<double>(in.get<float>()) : 0.0;
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = static_cast<double>(in.get<float>());
  }
  if (in.remaining() != 0) throw FormatError("trailing bytes after the weights", in.offset());
  return model;
}

void save(const DensityModel& model, const std::string& path) {
  const auto bytes = serialize(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ArgumentError("failed to write " + path);
}

DensityModel load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open model file " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace deepspace::model

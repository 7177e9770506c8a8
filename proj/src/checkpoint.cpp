#include "margin_audit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include <zlib.h>

namespace margin_audit {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'U', 'D', 'I', 'T', 'C', 'K'};

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host expected");
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos, const char* what) {
  if (pos + sizeof(T) > in.size()) {
    throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  }
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::uint32_t crc32_of(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

void append_tensor(std::vector<double>& payload, const Tensor& t) {
  payload.insert(payload.end(), t.data.begin(), t.data.end());
}

Tensor take_tensor(const std::vector<double>& payload, std::size_t& pos,
                   std::vector<std::size_t> shape) {
  const auto n = shape_product(shape);
  if (pos + n > payload.size()) throw CheckpointError("checkpoint payload too short for spec");
  Tensor t(std::move(shape), std::vector<double>(payload.begin() + static_cast<std::ptrdiff_t>(pos),
                                                 payload.begin() + static_cast<std::ptrdiff_t>(pos + n)));
  pos += n;
  return t;
}

}  // namespace

void write_container(const std::filesystem::path& path, const CheckpointContainer& container,
                     std::uint32_t version) {
  std::string buf(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(buf, version);
  const auto header = container.header.dump();
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(header.size()));
  buf += header;
  put_le<std::uint64_t>(buf, container.payload.size());
  for (double v : container.payload) put_le<double>(buf, v);
  put_le<std::uint32_t>(buf, crc32_of(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

CheckpointContainer read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint file");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = get_le<std::uint32_t>(buf, pos, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError("checkpoint format version " + std::to_string(version) +
                                 " is not supported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  }
  if (buf.size() < pos + 4) throw CheckpointError("checkpoint truncated");
  std::size_t crc_pos = buf.size() - 4;
  const auto stored = get_le<std::uint32_t>(buf, crc_pos, "checksum");
  if (stored != crc32_of(buf.data(), buf.size() - 4)) {
    throw CheckpointChecksumError("checkpoint " + path.string() + " failed its CRC-32 check");
  }

  CheckpointContainer c;
  const auto header_len = get_le<std::uint32_t>(buf, pos, "header length");
  if (pos + header_len > buf.size() - 4) throw CheckpointError("checkpoint header truncated");
  c.header = nlohmann::json::parse(buf.substr(pos, header_len));
  pos += header_len;
  const auto count = get_le<std::uint64_t>(buf, pos, "payload count");
  if (pos + count * sizeof(double) != buf.size() - 4) {
    throw CheckpointError("checkpoint payload length does not match its count");
  }
  c.payload.resize(count);
  for (auto& v : c.payload) v = get_le<double>(buf, pos, "payload");
  return c;
}

nlohmann::json spec_to_json(const FeatureExtractorSpec& spec) {
  nlohmann::json j;
  j["input_width"] = spec.input_width;
  j["hidden"] = spec.hidden;
  std::vector<std::string> acts;
  for (auto a : spec.activations) acts.emplace_back(activation_name(a));
  j["activations"] = acts;
  if (spec.conv) {
    const auto& g = spec.conv->geometry;
    j["conv"] = {{"channels", g.channels},         {"height", g.height},
                 {"width", g.width},               {"kernel", g.kernel},
                 {"out_channels", g.out_channels}, {"stride", g.stride},
                 {"activation", std::string(activation_name(spec.conv->activation))}};
  }
  return j;
}

FeatureExtractorSpec spec_from_json(const nlohmann::json& j) {
  FeatureExtractorSpec spec;
  spec.input_width = j.at("input_width").get<std::size_t>();
  spec.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  for (const auto& a : j.at("activations")) spec.activations.push_back(parse_activation(a.get<std::string>()));
  if (j.contains("conv")) {
    const auto& c = j["conv"];
    ConvStage stage;
    stage.geometry.channels = c.at("channels");
    stage.geometry.height = c.at("height");
    stage.geometry.width = c.at("width");
    stage.geometry.kernel = c.at("kernel");
    stage.geometry.out_channels = c.at("out_channels");
    stage.geometry.stride = c.at("stride");
    stage.activation = parse_activation(c.at("activation").get<std::string>());
    spec.conv = stage;
  }
  spec.validate();
  return spec;
}

void save_checkpoint(const Classifier& classifier, const std::filesystem::path& path,
                     const Provenance& provenance) {
  CheckpointContainer c;
  c.header["kind"] = "classifier";
  c.header["spec"] = spec_to_json(classifier.spec());
  c.header["num_classes"] = classifier.num_classes();
  c.header["seed"] = classifier.metadata().seed;
  c.header["training"] = classifier.metadata().training;
  c.header["train_epsilon"] = classifier.metadata().train_epsilon;
  c.header["config_hash"] = provenance.config_hash;
  c.header["master_seed"] = provenance.master_seed;
  if (classifier.conv()) {
    append_tensor(c.payload, classifier.conv()->weights);
    append_tensor(c.payload, classifier.conv()->biases);
  }
  for (const auto& l : classifier.layers()) {
    append_tensor(c.payload, l.weights);
    append_tensor(c.payload, l.biases);
  }
  append_tensor(c.payload, classifier.head().weights);
  append_tensor(c.payload, classifier.head().biases);
  write_container(path, c);
}

Classifier load_checkpoint(const std::filesystem::path& path) {
  const auto c = read_container(path);
  if (c.header.value("kind", "") != "classifier") {
    throw CheckpointError(path.string() + " does not hold a classifier");
  }
  const auto spec = spec_from_json(c.header.at("spec"));
  const auto k = c.header.at("num_classes").get<std::size_t>();
  std::size_t pos = 0;
  std::optional<DenseLayer> conv;
  std::size_t width = spec.input_width;
  if (spec.conv) {
    const auto& g = spec.conv->geometry;
    auto kern = take_tensor(c.payload, pos, {g.out_channels, g.channels * g.kernel * g.kernel});
    auto bias = take_tensor(c.payload, pos, {g.out_channels});
    conv = DenseLayer{std::move(kern), std::move(bias)};
    width = g.output_size();
  }
  std::vector<DenseLayer> layers;
  for (auto h : spec.hidden) {
    auto w = take_tensor(c.payload, pos, {h, width});
    auto b = take_tensor(c.payload, pos, {h});
    layers.push_back({std::move(w), std::move(b)});
    width = h;
  }
  LinearHead head;
  head.weights = take_tensor(c.payload, pos, {k, width});
  head.biases = take_tensor(c.payload, pos, {k});
  if (pos != c.payload.size()) throw CheckpointError("checkpoint payload has trailing values");
  ClassifierMetadata meta;
  meta.seed = c.header.value("seed", std::uint64_t{0});
  meta.training = c.header.value("training", std::string("unknown"));
  meta.train_epsilon = c.header.value("train_epsilon", 0.0);
  return Classifier(spec, std::move(conv), std::move(layers), std::move(head), meta);
}

}  // namespace margin_audit

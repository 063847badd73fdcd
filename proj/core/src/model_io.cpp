// Model file layout:
//   "SLPN" | version (1 byte) | header length (u64 LE) | JSON header | payload
// The payload is every tensor of SleepNet::tensors() as little-endian
// float32, in manifest order. The header carries the config, the manifest
// (name, shape, offset, count), NormStats, frozen layer names and the
// SHA-256 of the payload.

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "somnoflow/digest.hpp"
#include "somnoflow/sleepnet.hpp"

namespace somnoflow::net {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'S', 'L', 'P', 'N'};
constexpr std::size_t kPreamble = 4 + 1 + 8;

json config_to_json(const ModelConfig& c) {
  json heads = json::array();
  for (const auto& h : c.heads) {
    heads.push_back({{"kernel_width", h.kernel_width},
                     {"n_filters", h.n_filters},
                     {"pool_width", h.pool_width},
                     {"dropout_rate", h.dropout_rate},
                     {"fc_width", h.fc_width}});
  }
  return {{"input_features", c.input_features}, {"window_epochs", c.window_epochs},
          {"heads", heads},                     {"trunk_widths", c.trunk_widths},
          {"aux_loss_weight", c.aux_loss_weight}, {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.input_features = j.at("input_features").get<std::size_t>();
  c.window_epochs = j.at("window_epochs").get<std::size_t>();
  c.heads.clear();
  for (const auto& h : j.at("heads")) {
    HeadConfig hc;
    hc.kernel_width = h.at("kernel_width").get<std::size_t>();
    hc.n_filters = h.at("n_filters").get<std::size_t>();
    hc.pool_width = h.at("pool_width").get<std::size_t>();
    hc.dropout_rate = h.at("dropout_rate").get<double>();
    hc.fc_width = h.at("fc_width").get<std::size_t>();
    c.heads.push_back(hc);
  }
  c.trunk_widths = j.at("trunk_widths").get<std::vector<std::size_t>>();
  c.aux_loss_weight = j.at("aux_loss_weight").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

void append_le32(std::vector<std::byte>& out, float v) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((bits >> (8 * i)) & 0xffu));
}

float read_le32(const std::byte* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

/// Mutable spans over the same tensors tensors() lists, in the same order.
std::vector<std::span<float>> mutable_tensors(SleepNet& m) {
  std::vector<std::span<float>> out;
  auto add_layer = [&](nn::LayerParams<float>& p) {
    out.emplace_back(p.weight);
    out.emplace_back(p.bias);
  };
  for (std::size_t h = 0; h < m.head_count(); ++h) {
    auto& hd = m.head(h);
    add_layer(hd.conv);
    add_layer(hd.bn.params);
    out.emplace_back(hd.bn.running_mean);
    out.emplace_back(hd.bn.running_var);
    add_layer(hd.fc);
    add_layer(hd.pred);
  }
  for (auto& l : m.trunk()) add_layer(l);
  out.emplace_back(m.norm_stats().mean);
  out.emplace_back(m.norm_stats().std);
  return out;
}

}  // namespace

std::vector<std::byte> serialize_model(const SleepNet& model) {
  std::vector<std::byte> payload;
  json manifest = json::array();
  for (const auto& t : model.tensors()) {
    manifest.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", payload.size()}, {"count", t.values.size()}});
    for (float v : t.values) append_le32(payload, v);
  }
  json frozen = json::array();
  for (const auto* l : model.layers())
    if (l->frozen) frozen.push_back(l->name);

  const auto& ns = model.norm_stats();
  json header = {{"config", config_to_json(model.config())},
                 {"norm_stats", {{"features", data::kFeatureNames}, {"mean", ns.mean}, {"std", ns.std}}},
                 {"tensors", manifest},
                 {"frozen", frozen},
                 {"payload_bytes", payload.size()},
                 {"digest", sha256_hex(payload)}};
  const std::string text = header.dump(1);

  std::vector<std::byte> out;
  out.reserve(kPreamble + text.size() + payload.size());
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  out.push_back(static_cast<std::byte>(kModelFormatVersion));
  const std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((len >> (8 * i)) & 0xffu));
  for (char c : text) out.push_back(static_cast<std::byte>(c));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

SleepNet deserialize_model(std::span<const std::byte> bytes) {
  if (bytes.size() < kPreamble) {
    throw ModelTruncatedError("model file truncated: " + std::to_string(bytes.size()) + " bytes, preamble needs " +
                              std::to_string(kPreamble));
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw ModelFormatError("not a model file (bad magic)");
  const auto version = static_cast<unsigned>(bytes[4]);
  if (version != kModelFormatVersion) {
    throw ModelVersionError("unsupported model format version " + std::to_string(version) +
                            " (this build reads version " + std::to_string(kModelFormatVersion) + ")");
  }
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[5 + i]) << (8 * i);
  if (len > bytes.size() - kPreamble) {
    throw ModelTruncatedError("model file truncated inside the header");
  }
  const auto* hp = reinterpret_cast<const char*>(bytes.data() + kPreamble);
  json header;
  try {
    header = json::parse(hp, hp + len);
  } catch (const json::exception& e) {
    throw ModelFormatError(std::string("malformed model header: ") + e.what());
  }

  try {
    const auto payload = bytes.subspan(kPreamble + len);
    const auto expected = header.at("payload_bytes").get<std::size_t>();
    if (payload.size() < expected) {
      throw ModelTruncatedError("model payload truncated: " + std::to_string(payload.size()) + " of " +
                                std::to_string(expected) + " bytes");
    }
    if (payload.size() > expected) throw ModelFormatError("trailing bytes after model payload");
    const auto recorded = header.at("digest").get<std::string>();
    const auto actual = sha256_hex(payload);
    if (recorded != actual) {
      throw ModelDigestError("model digest mismatch: header " + recorded + ", payload " + actual);
    }

    SleepNet model(config_from_json(header.at("config")));
    const auto views = model.tensors();
    auto targets = mutable_tensors(model);
    const auto& manifest = header.at("tensors");
    if (manifest.size() != views.size()) throw ModelFormatError("tensor manifest does not match the config");
    for (std::size_t i = 0; i < views.size(); ++i) {
      const auto& entry = manifest[i];
      if (entry.at("name").get<std::string>() != views[i].name ||
          entry.at("shape").get<std::vector<std::size_t>>() != views[i].shape ||
          entry.at("count").get<std::size_t>() != targets[i].size()) {
        throw ModelFormatError("manifest entry " + std::to_string(i) + " does not match tensor " + views[i].name);
      }
      const auto offset = entry.at("offset").get<std::size_t>();
      if (offset + 4 * targets[i].size() > payload.size()) throw ModelFormatError("tensor runs past the payload");
      for (std::size_t k = 0; k < targets[i].size(); ++k) targets[i][k] = read_le32(payload.data() + offset + 4 * k);
    }
    const auto frozen = header.value("frozen", std::vector<std::string>{});
    for (auto* l : model.layers()) l->frozen = std::find(frozen.begin(), frozen.end(), l->name) != frozen.end();
    return model;
  } catch (const json::exception& e) {
    throw ModelFormatError(std::string("malformed model header: ") + e.what());
  } catch (const nn::ConfigError& e) {
    throw ModelFormatError(std::string("invalid model config: ") + e.what());
  }
}

void save_model(const SleepNet& model, const std::string& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::ios_base::failure("cannot write model file '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::ios_base::failure("write failed for '" + path + "'");
}

SleepNet load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open model file '" + path + "'");
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> bytes(raw.size());
  std::memcpy(bytes.data(), raw.data(), raw.size());
  return deserialize_model(bytes);
}

}  // namespace somnoflow::net

#include "pseudocam/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "pseudocam/error.hpp"

namespace pseudocam {

namespace {

constexpr std::array<char, 8> kMagic = {'P', 'C', 'A', 'M', 'C', 'K', 'P', 'T'};

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T read_le(std::istream& in, const std::string& what) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw IoError("checkpoint truncated while reading " + what);
    value |= static_cast<T>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return value;
}

nlohmann::json layer_to_json(const LayerSpec& s) {
  nlohmann::json j = {{"kind", std::string(layer_kind_name(s.kind))}};
  switch (s.kind) {
    case LayerKind::kDense: j["units"] = s.units; break;
    case LayerKind::kConv3x3:
      j["channels"] = s.channels;
      j["bias"] = s.bias;
      break;
    case LayerKind::kDropout: j["probability"] = s.dropout; break;
    case LayerKind::kDenseBlock:
      j["depth"] = s.depth;
      j["growth"] = s.growth;
      break;
    case LayerKind::kTransition: j["compression"] = s.compression; break;
    default: break;
  }
  return j;
}

LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec s;
  s.kind = parse_layer_kind(j.at("kind").get<std::string>());
  s.units = j.value("units", std::size_t{0});
  s.channels = j.value("channels", std::size_t{0});
  s.bias = j.value("bias", true);
  s.depth = j.value("depth", std::size_t{0});
  s.growth = j.value("growth", std::size_t{0});
  s.dropout = j.value("probability", 0.6);
  s.compression = j.value("compression", 0.5);
  return s;
}

}  // namespace

nlohmann::json network_config_to_json(const NetworkConfig& config) {
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerSpec& s : config.layers) layers.push_back(layer_to_json(s));
  return {{"channels", config.channels}, {"height", config.height}, {"width", config.width}, {"layers", layers}};
}

NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  c.channels = j.at("channels").get<std::size_t>();
  c.height = j.at("height").get<std::size_t>();
  c.width = j.at("width").get<std::size_t>();
  for (const auto& l : j.at("layers")) c.layers.push_back(layer_from_json(l));
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Network& net, const ArtifactMeta& meta) {
  Network copy = net;
  const StateList state = copy.state();
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, t] : state) tensors.push_back({{"name", name}, {"shape", t->shape()}});
  const nlohmann::json header = {
      {"tool", "pseudocam"},
      {"tool_version", kToolVersion},
      {"seed", meta.seed},
      {"config_hash", meta.config_hash},
      {"network", network_config_to_json(net.config())},
      {"tensors", tensors},
  };
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic.data(), kMagic.size());
  write_le<std::uint32_t>(out, kCheckpointVersion);
  write_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : state) {
    for (double v : t->values()) write_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw IoError(path.string() + " is not a pseudocam checkpoint");
  const auto version = read_le<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  const auto length = read_le<std::uint64_t>(in, "header length");
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw IoError("checkpoint truncated in header: " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }

  Rng unused(0);
  LoadedCheckpoint loaded{Network::build(network_config_from_json(header.at("network")), unused), {}};
  loaded.meta.seed = header.value("seed", std::uint64_t{0});
  loaded.meta.config_hash = header.value("config_hash", std::string{});

  const StateList state = loaded.net.state();
  const auto& tensors = header.at("tensors");
  if (tensors.size() != state.size()) {
    throw IoError("checkpoint lists " + std::to_string(tensors.size()) + " tensors, network has " +
                  std::to_string(state.size()));
  }
  for (std::size_t i = 0; i < state.size(); ++i) {
    const auto& [name, t] = state[i];
    const std::string stored = tensors[i].at("name").get<std::string>();
    const Shape shape = tensors[i].at("shape").get<Shape>();
    if (stored != name || shape != t->shape()) {
      throw IoError("checkpoint tensor " + std::to_string(i) + " is " + stored + " " + to_string(shape) +
                    ", network expects " + name + " " + to_string(t->shape()));
    }
    for (double& v : t->values()) v = std::bit_cast<double>(read_le<std::uint64_t>(in, name));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes after checkpoint payload");
  loaded.net.set_mode(Mode::kEval);
  return loaded;
}

}  // namespace pseudocam

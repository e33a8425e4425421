#include "pseudocam/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "pseudocam/error.hpp"

namespace pseudocam {

namespace pt = boost::property_tree;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
  return v;
}

std::uint64_t to_uint(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

bool to_bool(const std::string& key, const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// Binds each "section.key" to a setter and a getter on the config.
struct Field {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

using FieldMap = std::map<std::string, Field>;

template <typename Access>
Field dbl(std::string key, Access access) {
  return {[key, access](ExperimentConfig& c, const std::string& v) { access(c) = to_double(key, v); },
          [access](const ExperimentConfig& c) { return fmt(access(c)); }};
}

template <typename Access>
Field uint(std::string key, Access access) {
  return {[key, access](ExperimentConfig& c, const std::string& v) {
            access(c) = static_cast<std::remove_reference_t<decltype(access(c))>>(to_uint(key, v));
          },
          [access](const ExperimentConfig& c) { return std::to_string(access(c)); }};
}

template <typename Access>
Field boolean(std::string key, Access access) {
  return {[key, access](ExperimentConfig& c, const std::string& v) { access(c) = to_bool(key, v); },
          [access](const ExperimentConfig& c) {
            return std::string(access(c) ? "true" : "false");
          }};
}

template <typename Access>
Field str(Access access) {
  return {[access](ExperimentConfig& c, const std::string& v) { access(c) = v; },
          [access](const ExperimentConfig& c) { return access(c); }};
}

const FieldMap& fields() {
  static const FieldMap map = [] {
    FieldMap m;
    m["seed"] = uint("seed", [](auto& c) -> auto& { return c.seed; });

    m["data.manifest"] = str([](auto& c) -> auto& { return c.data.manifest; });
    m["data.holdout"] = str([](auto& c) -> auto& { return c.data.holdout; });
    m["data.val_frac"] = dbl("data.val_frac", [](auto& c) -> auto& { return c.data.val_frac; });
    m["data.filter_outliers"] =
        boolean("data.filter_outliers", [](auto& c) -> auto& { return c.data.filter_outliers; });

    m["outliers.white_thresh"] =
        dbl("outliers.white_thresh", [](auto& c) -> auto& { return c.data.outliers.white_thresh; });
    m["outliers.black_thresh"] =
        dbl("outliers.black_thresh", [](auto& c) -> auto& { return c.data.outliers.black_thresh; });
    m["outliers.white_level"] =
        dbl("outliers.white_level", [](auto& c) -> auto& { return c.data.outliers.white_level; });
    m["outliers.black_level"] =
        dbl("outliers.black_level", [](auto& c) -> auto& { return c.data.outliers.black_level; });

    m["synthetic.n"] = uint("synthetic.n", [](auto& c) -> auto& { return c.synthetic.n; });
    m["synthetic.positive_frac"] =
        dbl("synthetic.positive_frac", [](auto& c) -> auto& { return c.synthetic.positive_frac; });
    m["synthetic.patch_size"] =
        uint("synthetic.patch_size", [](auto& c) -> auto& { return c.synthetic.patch_size; });
    m["synthetic.channels"] =
        uint("synthetic.channels", [](auto& c) -> auto& { return c.synthetic.channels; });
    m["synthetic.noise"] = dbl("synthetic.noise", [](auto& c) -> auto& { return c.synthetic.noise; });
    m["synthetic.labeled_frac"] =
        dbl("synthetic.labeled_frac", [](auto& c) -> auto& { return c.labeled_frac; });

    m["network.channels"] =
        uint("network.channels", [](auto& c) -> auto& { return c.network.channels; });
    m["network.height"] = uint("network.height", [](auto& c) -> auto& { return c.network.height; });
    m["network.width"] = uint("network.width", [](auto& c) -> auto& { return c.network.width; });
    m["network.layers"] = {
        [](ExperimentConfig& c, const std::string& v) { c.network.layers = parse_layers(v); },
        [](const ExperimentConfig& c) { return format_layers(c.network.layers); }};

    m["schedule.lr_max"] =
        dbl("schedule.lr_max", [](auto& c) -> auto& { return c.ssl.schedule.lr_max; });
    m["schedule.lr_min"] =
        dbl("schedule.lr_min", [](auto& c) -> auto& { return c.ssl.schedule.lr_min; });
    m["schedule.final_lr"] =
        dbl("schedule.final_lr", [](auto& c) -> auto& { return c.ssl.schedule.final_lr; });
    m["schedule.momentum_high"] =
        dbl("schedule.momentum_high", [](auto& c) -> auto& { return c.ssl.schedule.momentum_high; });
    m["schedule.momentum_low"] =
        dbl("schedule.momentum_low", [](auto& c) -> auto& { return c.ssl.schedule.momentum_low; });
    m["schedule.step_fraction"] =
        dbl("schedule.step_fraction", [](auto& c) -> auto& { return c.ssl.schedule.step_fraction; });

    m["ssl.runs"] = uint("ssl.runs", [](auto& c) -> auto& { return c.ssl.runs; });
    m["ssl.epochs"] = uint("ssl.epochs", [](auto& c) -> auto& { return c.ssl.epochs; });
    m["ssl.batch_size"] = uint("ssl.batch_size", [](auto& c) -> auto& { return c.ssl.batch_size; });
    m["ssl.pseudo_batch_size"] =
        uint("ssl.pseudo_batch_size", [](auto& c) -> auto& { return c.ssl.pseudo_batch_size; });
    m["ssl.positive_above"] =
        dbl("ssl.positive_above", [](auto& c) -> auto& { return c.ssl.thresholds.positive_above; });
    m["ssl.negative_below"] =
        dbl("ssl.negative_below", [](auto& c) -> auto& { return c.ssl.thresholds.negative_below; });
    m["ssl.alpha_final"] =
        dbl("ssl.alpha_final", [](auto& c) -> auto& { return c.ssl.alpha.alpha_final; });
    m["ssl.alpha_t1"] = uint("ssl.alpha_t1", [](auto& c) -> auto& { return c.ssl.alpha.t1; });
    m["ssl.alpha_t2"] = uint("ssl.alpha_t2", [](auto& c) -> auto& { return c.ssl.alpha.t2; });
    m["ssl.augment_probability"] =
        dbl("ssl.augment_probability", [](auto& c) -> auto& { return c.ssl.augment_probability; });
    m["ssl.pseudo_tta"] = str([](auto& c) -> auto& { return c.ssl.pseudo_tta; });
    m["ssl.entropy_sample"] =
        uint("ssl.entropy_sample", [](auto& c) -> auto& { return c.ssl.entropy_sample; });
    m["ssl.map_lambda"] = dbl("ssl.map_lambda", [](auto& c) -> auto& { return c.ssl.map_lambda; });
    m["ssl.threads"] = uint("ssl.threads", [](auto& c) -> auto& { return c.ssl.threads; });
    return m;
  }();
  return map;
}

void apply(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(cfg, value);
}

std::string strip_quotes(std::string v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

}  // namespace

std::vector<LayerSpec> parse_layers(std::string_view text) {
  std::vector<LayerSpec> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == ' ' || text[i] == '\t' || text[i] == ',') {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && text[j] != '(' && text[j] != ' ' && text[j] != ',') ++j;
    const std::string name(text.substr(i, j - i));
    std::vector<std::string> args;
    if (j < text.size() && text[j] == '(') {
      const auto close = text.find(')', j);
      if (close == std::string_view::npos) throw ConfigError("layer '" + name + "': missing ')'");
      std::string_view inner = text.substr(j + 1, close - j - 1);
      std::size_t a = 0;
      while (a <= inner.size()) {
        const auto comma = inner.find(',', a);
        args.push_back(trim(inner.substr(a, comma == std::string_view::npos ? std::string_view::npos : comma - a)));
        if (comma == std::string_view::npos) break;
        a = comma + 1;
      }
      j = close + 1;
    }
    const LayerKind kind = parse_layer_kind(name);
    auto need = [&](std::size_t n) {
      if (args.size() != n) {
        throw ConfigError("layer '" + name + "' takes " + std::to_string(n) + " argument(s), got " +
                          std::to_string(args.size()));
      }
    };
    const std::string label = "layer " + std::to_string(out.size()) + " (" + name + ")";
    switch (kind) {
      case LayerKind::kDense: need(1); out.push_back(LayerSpec::dense(to_uint(label, args[0]))); break;
      case LayerKind::kConv3x3:
        if (args.size() == 2 && args[1] == "nobias") {
          out.push_back(LayerSpec::conv3x3(to_uint(label, args[0]), false));
        } else {
          need(1);
          out.push_back(LayerSpec::conv3x3(to_uint(label, args[0])));
        }
        break;
      case LayerKind::kDropout: need(1); out.push_back(LayerSpec::dropout_layer(to_double(label, args[0]))); break;
      case LayerKind::kDenseBlock:
        need(2);
        out.push_back(LayerSpec::dense_block(to_uint(label, args[0]), to_uint(label, args[1])));
        break;
      case LayerKind::kTransition:
        if (args.size() > 1) need(1);
        out.push_back(LayerSpec::transition(args.empty() ? 0.5 : to_double(label, args[0])));
        break;
      default:
        need(0);
        out.push_back(LayerSpec{kind});
        break;
    }
    i = j;
  }
  if (out.empty()) throw ConfigError("empty layer list");
  return out;
}

std::string format_layers(const std::vector<LayerSpec>& layers) {
  std::string out;
  for (const LayerSpec& s : layers) {
    if (!out.empty()) out += ' ';
    out += layer_kind_name(s.kind);
    switch (s.kind) {
      case LayerKind::kDense: out += "(" + std::to_string(s.units) + ")"; break;
      case LayerKind::kConv3x3: out += "(" + std::to_string(s.channels) + (s.bias ? ")" : ",nobias)"); break;
      case LayerKind::kDropout: out += "(" + fmt(s.dropout) + ")"; break;
      case LayerKind::kDenseBlock: out += "(" + std::to_string(s.depth) + "," + std::to_string(s.growth) + ")"; break;
      case LayerKind::kTransition: out += "(" + fmt(s.compression) + ")"; break;
      default: break;
    }
  }
  return out;
}

ExperimentConfig parse_config(std::string_view text) {
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  ExperimentConfig cfg;
  for (const auto& [section, node] : tree) {
    if (node.empty()) {
      apply(cfg, section, strip_quotes(node.data()));
      continue;
    }
    for (const auto& [key, value] : node) apply(cfg, section + "." + key, strip_quotes(value.data()));
  }
  cfg.ssl.seed = cfg.seed;
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_config(text.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string format_config(const ExperimentConfig& cfg) {
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
  std::string out;
  for (const auto& [key, field] : fields()) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) {
      out += key + " = " + field.get(cfg) + "\n";
    } else {
      sections[key.substr(0, dot)].emplace_back(key.substr(dot + 1), field.get(cfg));
    }
  }
  for (const auto& [section, entries] : sections) {
    out += "\n[" + section + "]\n";
    for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
  }
  return out;
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, field] : fields()) j[key] = field.get(cfg);
  return j;
}

std::string config_hash(const ExperimentConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(config_to_json(cfg).dump())));
  return buf;
}

}  // namespace pseudocam

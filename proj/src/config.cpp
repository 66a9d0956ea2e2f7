#include "wplus/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "wplus/error.hpp"

namespace wplus {

BackboneSpec BackboneSpec::se_resnet50_truncated() {
  return {"se_resnet50_trunc", 64, 16, {{{64, 3}, {128, 4}, {256, 14}}}};
}

BackboneSpec BackboneSpec::toy() { return {"toy", 16, 4, {{{16, 1}, {32, 1}, {64, 1}}}}; }

BackboneSpec BackboneSpec::preset(const std::string& name) {
  if (name == "se_resnet50_trunc") return se_resnet50_truncated();
  if (name == "toy") return toy();
  throw ConfigError("unknown backbone preset '" + name + "' (expected se_resnet50_trunc or toy)");
}

EncoderConfig EncoderConfig::toy() {
  EncoderConfig c;
  c.n_codes = 6;
  c.dim = 16;
  c.input_resolution = 32;
  c.split = {3, 2, 1};
  c.pool_sizes = {2, 2, 2};
  c.backbone = BackboneSpec::toy();
  return c;
}

int EncoderConfig::min_input_resolution() const {
  const int need = std::max({pool_sizes[0], (pool_sizes[1] + 1) / 2, (pool_sizes[2] + 3) / 4, 1});
  return 8 * need;
}

void EncoderConfig::validate() const {
  if (n_codes < 1 || dim < 1) throw ConfigError("encoder needs n_codes >= 1 and dim >= 1");
  for (int n : split)
    if (n < 0) throw ConfigError("latent split entries must be >= 0");
  if (split[0] + split[1] + split[2] != n_codes)
    throw ConfigError("latent split (" + std::to_string(split[0]) + "," + std::to_string(split[1]) + "," +
                      std::to_string(split[2]) + ") does not sum to n_codes = " + std::to_string(n_codes));
  for (int p : pool_sizes)
    if (p < 1) throw ConfigError("pool sizes must be >= 1");
  if (input_resolution < 8 || input_resolution % 8 != 0)
    throw ConfigError("encoder input resolution must be a positive multiple of 8");
  const std::array<int, 3> sides{input_resolution / 8, input_resolution / 4, input_resolution / 2};
  for (int i = 0; i < 3; ++i)
    if (pool_sizes[i] > sides[i])
      throw ConfigError("pool size " + std::to_string(pool_sizes[i]) + " exceeds feature-map side " +
                        std::to_string(sides[i]) + "; smallest valid input resolution is " +
                        std::to_string(min_input_resolution()));
  for (const auto& s : backbone.stages)
    if (s.depth < 1 || s.units < 1) throw ConfigError("backbone stages need depth >= 1 and units >= 1");
  if (backbone.stem_channels < 1 || backbone.se_reduction < 1) throw ConfigError("invalid backbone preset");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = nlohmann::json{{"n_codes", c.n_codes},
                     {"dim", c.dim},
                     {"input_resolution", c.input_resolution},
                     {"split", c.split},
                     {"pool_sizes", c.pool_sizes},
                     {"backbone", c.backbone.name}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  c.n_codes = j.at("n_codes").get<int>();
  c.dim = j.at("dim").get<int>();
  c.input_resolution = j.at("input_resolution").get<int>();
  c.split = j.at("split").get<std::array<int, 3>>();
  c.pool_sizes = j.at("pool_sizes").get<std::array<int, 3>>();
  c.backbone = BackboneSpec::preset(j.at("backbone").get<std::string>());
}

void LossWeights::validate() const {
  if (!(pixel >= 0 && perceptual >= 0 && identity >= 0 && parsing >= 0))
    throw ValidationError("loss weights must be non-negative");
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = nlohmann::json::array({w.pixel, w.perceptual, w.identity, w.parsing});
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 4) throw FormatError("loss weights need four entries");
  w = {v[0], v[1], v[2], v[3]};
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text) {
  KeyValueConfig kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    kv.values_[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  KeyValueConfig kv = parse(ss.str());
  kv.base_dir_ = path.parent_path();
  return kv;
}

std::string KeyValueConfig::get(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::string KeyValueConfig::require(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
  return it->second;
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
  if (!has(key)) return fallback;
  try {
    std::size_t used = 0;
    const int v = std::stoi(values_.at(key), &used);
    if (used != values_.at(key).size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not an integer");
  }
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(values_.at(key), &used);
    if (used != values_.at(key).size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not a number");
  }
}

std::vector<double> KeyValueConfig::get_list(const std::string& key, std::vector<double> fallback) const {
  if (!has(key)) return fallback;
  std::vector<double> out;
  std::stringstream ss(values_.at(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' has a non-numeric entry '" + item + "'");
    }
  }
  return out;
}

std::filesystem::path KeyValueConfig::resolve(const std::string& value) const {
  std::filesystem::path p(value);
  if (p.is_absolute() || base_dir_.empty()) return p;
  return base_dir_ / p;
}

EncoderConfig encoder_config_from(const KeyValueConfig& kv) {
  const std::string preset = kv.get("encoder.backbone", "se_resnet50_trunc");
  EncoderConfig c = preset == "toy" ? EncoderConfig::toy() : EncoderConfig::standard();
  c.backbone = BackboneSpec::preset(preset);
  c.n_codes = kv.get_int("encoder.n_codes", kv.get_int("generator.n_codes", c.n_codes));
  c.dim = kv.get_int("encoder.dim", kv.get_int("generator.dim", c.dim));
  c.input_resolution = kv.get_int("encoder.input_resolution", c.input_resolution);
  auto triple = [&](const std::string& key, std::array<int, 3>& dst) {
    if (!kv.has(key)) return;
    const auto v = kv.get_list(key, {});
    if (v.size() != 3) throw ConfigError("config key '" + key + "' needs three entries");
    for (int i = 0; i < 3; ++i) dst[i] = static_cast<int>(v[i]);
  };
  triple("encoder.split", c.split);
  triple("encoder.pools", c.pool_sizes);
  c.validate();
  return c;
}

LossWeights loss_weights_from(const KeyValueConfig& kv) {
  const auto v = kv.get_list("loss.weights", {1.0, 0.8, 0.5, 1.0});
  if (v.size() != 4) throw ConfigError("loss.weights needs four entries");
  LossWeights w{v[0], v[1], v[2], v[3]};
  w.validate();
  return w;
}

}  // namespace wplus

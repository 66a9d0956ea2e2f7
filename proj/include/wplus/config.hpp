#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace wplus {

/// One residual stage of the backbone: output channels and unit count.
/// The first unit of every stage halves the spatial resolution.
struct BackboneStage {
  int depth = 0;
  int units = 0;
};

struct BackboneSpec {
  std::string name;
  int stem_channels = 0;
  int se_reduction = 16;
  std::array<BackboneStage, 3> stages{};  // outputs at 1/2, 1/4, 1/8

  /// Squeeze-excitation residual backbone (50-layer layout) cut before the 1/16 stage.
  static BackboneSpec se_resnet50_truncated();
  /// Narrow single-unit variant used for desk-scale experiments.
  static BackboneSpec toy();
  /// Resolves a preset by name; throws ConfigError for unknown names.
  static BackboneSpec preset(const std::string& name);
};

struct EncoderConfig {
  int n_codes = 18;
  int dim = 512;
  int input_resolution = 256;
  std::array<int, 3> split{9, 5, 4};       // codes from deep (1/8), mid (1/4), shallow (1/2)
  std::array<int, 3> pool_sizes{7, 5, 3};  // deep, mid, shallow
  BackboneSpec backbone = BackboneSpec::se_resnet50_truncated();

  static EncoderConfig standard() { return {}; }
  /// 6 codes x 16 dims at 32x32, split (3,2,1), pools (2,2,2).
  static EncoderConfig toy();

  /// Throws ConfigError; message names the smallest admissible input resolution
  /// when a pool size exceeds its feature-map side.
  void validate() const;
  /// Smallest input resolution (multiple of 8) for which every pool fits.
  int min_input_resolution() const;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

/// Weights of the pixel, perceptual, identity and parsing terms.
struct LossWeights {
  double pixel = 1.0;
  double perceptual = 0.8;
  double identity = 0.5;
  double parsing = 1.0;

  void validate() const;
  friend LossWeights operator+(const LossWeights& a, const LossWeights& b) {
    return {a.pixel + b.pixel, a.perceptual + b.perceptual, a.identity + b.identity,
            a.parsing + b.parsing};
  }
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

/// Flat `key = value` configuration file. `#` starts a comment.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;
  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  std::string get(const std::string& key, const std::string& fallback) const;
  std::string require(const std::string& key) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::vector<double> get_list(const std::string& key, std::vector<double> fallback) const;

  /// Directory of the loaded file; relative paths in values resolve against it.
  std::filesystem::path resolve(const std::string& value) const;
  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::filesystem::path base_dir_;
};

EncoderConfig encoder_config_from(const KeyValueConfig& kv);
LossWeights loss_weights_from(const KeyValueConfig& kv);

}  // namespace wplus

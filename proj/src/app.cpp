#include "wplus/app.hpp"

#include "wplus/error.hpp"

namespace wplus {

GeneratorHandle generator_from(const KeyValueConfig& kv) {
  const std::string kind = kv.get("generator", "toy");
  if (kind == "toy") {
    return make_toy_generator(static_cast<std::uint64_t>(kv.get_int("generator.seed", 7)),
                              kv.get_int("generator.n_codes", 6), kv.get_int("generator.dim", 16),
                              kv.get_int("generator.resolution", 32), kv.get_int("generator.channels", 16));
  }
  if (kind == "pretrained") {
    return load_pretrained_generator(kv.resolve(kv.require("generator.asset")),
                                     kv.resolve(kv.require("generator.manifest")));
  }
  throw ConfigError("generator must be toy or pretrained, got '" + kind + "'");
}

LossExtractors<float> extractors_from(const KeyValueConfig& kv) {
  const auto seed = static_cast<std::uint64_t>(kv.get_int("loss.extractor_seed", 11));
  auto one = [&](const std::string& key, ExtractorKind kind,
                 std::uint64_t offset) -> std::shared_ptr<const FeatureExtractor<float>> {
    const std::string v = kv.get(key, "toy");
    if (v == "none") return nullptr;
    if (v == "toy") return make_toy_extractor<float>(kind, seed + offset);
    auto ext = load_extractor(kv.resolve(v));
    if (ext->kind() != kind)
      throw ConfigError(key + " points at a " + to_string(ext->kind()) + " extractor");
    return ext;
  };
  LossExtractors<float> ex;
  ex.perceptual = one("loss.perceptual", ExtractorKind::Perceptual, 0);
  ex.identity = one("loss.identity", ExtractorKind::Identity, 1);
  ex.parsing = one("loss.parsing", ExtractorKind::Parsing, 2);
  return ex;
}

}  // namespace wplus

#pragma once

#include "wplus/config.hpp"
#include "wplus/generator.hpp"
#include "wplus/losses.hpp"

namespace wplus {

/// `generator = toy` (generator.seed, n_codes, dim, resolution, channels) or
/// `generator = pretrained` (generator.asset, generator.manifest).
GeneratorHandle generator_from(const KeyValueConfig& kv);

/// loss.perceptual / loss.identity / loss.parsing: `toy`, `none`, or a manifest path.
/// Toy extractors are seeded from loss.extractor_seed.
LossExtractors<float> extractors_from(const KeyValueConfig& kv);

}  // namespace wplus

#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "wplus/config.hpp"
#include "wplus/encoder.hpp"
#include "wplus/generator.hpp"
#include "wplus/image.hpp"
#include "wplus/losses.hpp"

namespace wplus {

enum class Task { Inversion, Colorization, Inpainting, SuperResolution, Sketch2Image, Seg2Image };

std::string to_string(Task t);
Task task_from(const std::string& s);
bool needs_aux(Task t);

struct TrainConfig {
  double base_learning_rate = 1e-4;
  int epochs = 25;
  int batch_size = 8;
  double flip_probability = 0.5;
  LossWeights weights;
  Task task = Task::Inversion;
  std::uint64_t seed = 0;
  int max_steps = 0;  // 0: no cap beyond epochs
  PixelNorm pixel_norm = PixelNorm::Rms;

  void validate() const;
};

TrainConfig train_config_from(const KeyValueConfig& kv);

struct Sample {
  std::string name;
  ImageTensor image;
  std::optional<ImageTensor> aux;  // sketch / label map for translation tasks
  std::optional<LatentCode> latent;  // known source latent, if generated
};

struct Dataset {
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  /// PNG files of `dir` in name order, resized to `resolution` when > 0. A paired
  /// directory supplies aux images by matching file name.
  static Dataset load_dir(const std::filesystem::path& dir, int resolution = 0,
                          const std::optional<std::filesystem::path>& paired = std::nullopt);
  /// n images G(w) for w drawn from `sampler`.
  static Dataset sample(const GeneratorHandle& g, const LatentSampler& sampler, int n, std::uint64_t seed);
};

struct Example {
  ImageTensor input;
  ImageTensor target;
};

/// Task-specific (input, target) pair; throws DataError when aux is required but absent.
Example augment(const ImageTensor& x, const std::optional<ImageTensor>& aux, Task task, std::mt19937_64& rng);

/// Horizontal flip with probability p (applied to image and aux alike), then augment.
Example prepare_example(const Sample& s, Task task, double flip_probability, std::mt19937_64& rng);

struct EpochLog {
  int epoch = 0;
  long steps = 0;
  double mean_total = 0;
  LossTerms mean_terms;
  double seconds = 0;
};

struct StepInfo {
  long step = 0;
  int epoch = 0;
  double loss = 0;
  LossTerms terms;
};

struct TrainHooks {
  std::function<void(const StepInfo&)> on_step;
  std::function<void(const EpochLog&)> on_epoch;
  /// When set, receives the checkpoint and a log.jsonl with one line per epoch.
  std::optional<std::filesystem::path> out_dir;
};

struct TrainResult {
  std::unique_ptr<Encoder> encoder;
  std::vector<EpochLog> log;
  long steps = 0;
  double first_step_loss = 0;
};

/// Stage 1 predicts W directly; stage t > 1 predicts a residual on top of the
/// frozen stages in `prev`. Only the new encoder's parameters move.
TrainResult train_stage(int stage, const Dataset& data, const GeneratorHandle& g,
                        const std::vector<const Encoder*>& prev, const TrainConfig& cfg,
                        const EncoderConfig& enc_cfg, const LossExtractors<float>& extractors,
                        const TrainHooks& hooks = {});

/// Continues training an existing encoder in place.
TrainResult train_stage(std::unique_ptr<Encoder> encoder, const Dataset& data, const GeneratorHandle& g,
                        const std::vector<const Encoder*>& prev, const TrainConfig& cfg,
                        const LossExtractors<float>& extractors, const TrainHooks& hooks = {});

/// Input the stage-`stages` encoder sees: the image itself for stage 1, else the
/// image concatenated with the render of the latent from the frozen pipeline.
struct PipelineState {
  LatentCode latent;
  ImageTensor render;  // at the generator's resolution
};

/// W1 = E1(x); Wt = Et(x, G(W_{t-1})) + W_{t-1}. Returns (W_n, G(W_n)).
PipelineState invert(const std::vector<const InversionStage*>& pipeline, const GeneratorHandle& g,
                     const ImageTensor& x, int n_stages);

/// Resizes an image to `side` x `side` when needed.
ImageTensor fit_to(const ImageTensor& img, int side);

struct SplitSearchConfig {
  int total_codes = 18;
  double epsilon = 0.01;
  double tradeoff_lambda = 0.0;
  int min_part = 0;  // 0 or 1
  std::function<double(int, int, int)> quality_fn;
  std::function<double(int, int, int)> size_fn;
};

struct SplitResult {
  int n1 = 0, n2 = 0, n3 = 0;
  double quality = 0;
  double best_quality = 0;
  double objective = 0;  // -quality + lambda * size
  long evaluations = 0;
  bool non_monotone = false;
  std::string warning;
};

SplitResult search_latent_split(const SplitSearchConfig& cfg);

}  // namespace wplus

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "wplus/encoder.hpp"
#include "wplus/generator.hpp"
#include "wplus/image.hpp"
#include "wplus/losses.hpp"
#include "wplus/trainer.hpp"

namespace wplus {

/// Peak-to-peak 2 for the [-1, 1] range; +inf when the images are identical.
double psnr(const ImageTensor& x, const ImageTensor& y);

/// Mean SSIM over luminance remapped to [0, 1]; Gaussian window, valid region only.
double ssim(const ImageTensor& x, const ImageTensor& y, int window = 11, double sigma = 1.5);

using Embedder = std::function<Eigen::VectorXd(const ImageTensor&)>;

/// Flattened deepest level of an extractor.
Embedder extractor_embedder(std::shared_ptr<const FeatureExtractor<float>> f);

/// Cosine of the two embeddings; 0 (with a warning) when either is zero.
double identity_similarity(const ImageTensor& x, const ImageTensor& y, const Embedder& embedder);

enum class LatentOptimizer { Adam, Ranger };

struct OptimizationOptions {
  double lr = 0.05;
  LatentOptimizer optimizer = LatentOptimizer::Adam;
  PixelNorm pixel_norm = PixelNorm::Rms;
};

struct OptimizationResult {
  LatentCode latent;  // best iterate
  double initial_loss = 0;
  double best_loss = 0;
  int best_iteration = 0;
  int iterations_run = 0;
  bool non_finite = false;
  std::vector<double> history;  // loss of every evaluated iterate
};

/// Gradient descent on total_loss(x, G(W)) from `init`. Returns the best iterate
/// seen, so the result never scores worse than `init`. x must be at the
/// generator's output resolution.
OptimizationResult invert_by_optimization(const GeneratorHandle& g, const ImageTensor& x, int iterations,
                                          const LatentCode& init, const LossWeights& weights,
                                          const LossExtractors<float>& extractors = {},
                                          const OptimizationOptions& opt = {});

/// One inversion approach under evaluation.
class BenchMethod {
 public:
  virtual ~BenchMethod() = default;
  virtual std::string name() const = 0;
  virtual double param_millions() const = 0;
  virtual LatentCode invert(const Sample& s) const = 0;
};

/// Feed-forward pipeline run for n stages.
std::shared_ptr<BenchMethod> encoder_method(std::string name, std::vector<std::shared_ptr<const Encoder>> pipeline,
                                            int n_stages, GeneratorHandle g);
/// Optimization from a fixed initial latent (the mean latent for the classic baseline).
std::shared_ptr<BenchMethod> optimization_method(std::string name, GeneratorHandle g, LatentCode init, int iterations,
                                                 LossWeights weights, LossExtractors<float> extractors,
                                                 OptimizationOptions opt = {});
/// Encoder output refined by optimization.
std::shared_ptr<BenchMethod> hybrid_method(std::string name, std::vector<std::shared_ptr<const Encoder>> pipeline,
                                           int n_stages, GeneratorHandle g, int iterations, LossWeights weights,
                                           LossExtractors<float> extractors, OptimizationOptions opt = {});
/// Returns each sample's known source latent.
std::shared_ptr<BenchMethod> replay_method(std::string name = "replay");

/// Reads a method manifest: {"methods": [{"name", "type": encoder|optimization|hybrid|replay,
/// "checkpoints": [dirs], "stages", "iterations", "lr"}]}. Paths resolve against the manifest.
std::vector<std::shared_ptr<BenchMethod>> load_methods(const std::filesystem::path& manifest, const GeneratorHandle& g,
                                                       const LossExtractors<float>& extractors,
                                                       const LossWeights& weights = {});

struct BenchRow {
  std::string name;
  bool ok = true;
  std::string error;
  double ssim = 0;
  double psnr = 0;
  double ids = 0;
  double pixel_loss = 0;
  double runtime_seconds = 0;  // median per image
  double param_millions = 0;
  int images = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  nlohmann::json dataset;
  nlohmann::json environment;

  nlohmann::json to_json() const;
  std::string to_markdown() const;
  const BenchRow* find(const std::string& name) const;
};

/// Per-method means over the dataset. A method that throws is reported as failed.
BenchReport run_benchmark(const Dataset& data, const std::vector<std::shared_ptr<BenchMethod>>& methods,
                          const GeneratorHandle& g, const Embedder& embedder, const std::string& dataset_name = "");

}  // namespace wplus

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>

#include "wplus/app.hpp"
#include "wplus/editing.hpp"
#include "wplus/encoder.hpp"
#include "wplus/error.hpp"
#include "wplus/image_io.hpp"
#include "wplus/latent_io.hpp"
#include "wplus/log.hpp"
#include "wplus/metrics.hpp"
#include "wplus/service.hpp"
#include "wplus/stego.hpp"
#include "wplus/trainer.hpp"

namespace fs = std::filesystem;
using namespace wplus;

namespace {

KeyValueConfig load_config(const std::string& path) {
  return path.empty() ? KeyValueConfig{} : KeyValueConfig::load(path);
}

std::vector<std::shared_ptr<const Encoder>> load_pipeline(const std::vector<std::string>& dirs) {
  std::vector<std::shared_ptr<const Encoder>> out;
  for (const auto& d : dirs) out.push_back(load_checkpoint(d));
  return out;
}

void render_if(const std::string& path, const std::string& config, const LatentCode& w) {
  if (path.empty()) return;
  const GeneratorHandle g = generator_from(load_config(config));
  save_image(synthesize(g, w), path);
}

int exit_code(const Error& e) {
  if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const UsageError*>(&e) ||
      dynamic_cast<const ConfigError*>(&e))
    return 2;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"W+ inversion toolkit: train encoders, invert and edit images, hide latents"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train one encoder stage");
  std::string t_config, t_data, t_out, t_paired;
  int t_stage = 1;
  std::vector<std::string> t_prev;
  train->add_option("--config", t_config, "Key-value config file")->required()->check(CLI::ExistingFile);
  train->add_option("--stage", t_stage, "Stage index (1 = direct, >1 = refinement)")->check(CLI::PositiveNumber);
  train->add_option("--data", t_data, "Directory of training PNGs")->required()->check(CLI::ExistingDirectory);
  train->add_option("--paired", t_paired, "Paired sketch/label directory for translation tasks");
  train->add_option("--prev", t_prev, "Checkpoints of the frozen earlier stages, in order");
  train->add_option("--out", t_out, "Checkpoint directory")->required();

  // invert
  auto* inv = app.add_subcommand("invert", "Invert an image through an encoder pipeline");
  std::string i_config, i_image, i_latent, i_render;
  std::vector<std::string> i_pipeline;
  int i_stages = 0;
  inv->add_option("--config", i_config, "Config naming the generator");
  inv->add_option("--image", i_image, "Input PNG")->required()->check(CLI::ExistingFile);
  inv->add_option("--pipeline", i_pipeline, "Stage checkpoints, stage 1 first")->required();
  inv->add_option("--stages", i_stages, "Stages to run (default: all)");
  inv->add_option("--out-latent", i_latent, "Output .wlat")->required();
  inv->add_option("--out-image", i_render, "Output reconstruction PNG");

  // benchmark
  auto* bench = app.add_subcommand("benchmark", "Evaluate inversion methods");
  std::string b_config, b_data, b_methods;
  std::vector<std::string> b_out;
  bench->add_option("--config", b_config, "Config naming the generator and extractors");
  bench->add_option("--data", b_data, "Directory of PNGs (optional .wlat with the same stem)")->required();
  bench->add_option("--methods", b_methods, "Method manifest JSON")->required()->check(CLI::ExistingFile);
  bench->add_option("--out", b_out, "report.json and/or report.md")->required();

  // edit
  auto* edit = app.add_subcommand("edit", "Move a latent along a semantic direction");
  std::string e_latent, e_direction, e_out, e_render, e_config;
  double e_alpha = 0;
  edit->add_option("--latent", e_latent)->required()->check(CLI::ExistingFile);
  edit->add_option("--direction", e_direction, "Direction JSON")->required()->check(CLI::ExistingFile);
  edit->add_option("--alpha", e_alpha)->required();
  edit->add_option("--out", e_out, "Output .wlat")->required();
  edit->add_option("--render", e_render, "Also write G(w') as PNG");
  edit->add_option("--config", e_config, "Config naming the generator (for --render)");

  // interp
  auto* interp = app.add_subcommand("interp", "Blend two latents");
  std::string n_a, n_b, n_out, n_render, n_config;
  double n_lambda = 0.5;
  bool n_permissive = false;
  interp->add_option("--a", n_a)->required()->check(CLI::ExistingFile);
  interp->add_option("--b", n_b)->required()->check(CLI::ExistingFile);
  interp->add_option("--lambda", n_lambda, "Weight of b")->required();
  interp->add_flag("--permissive", n_permissive, "Allow lambda outside [0, 1]");
  interp->add_option("--out", n_out)->required();
  interp->add_option("--render", n_render);
  interp->add_option("--config", n_config);

  // mix
  auto* mix = app.add_subcommand("mix", "Coarse codes from content, fine codes from style");
  std::string m_content, m_style, m_out, m_render, m_config;
  int m_keep = -1;
  mix->add_option("--content", m_content)->required()->check(CLI::ExistingFile);
  mix->add_option("--style", m_style)->required()->check(CLI::ExistingFile);
  mix->add_option("--keep", m_keep, "Leading codes kept from content (default n_codes - 11)");
  mix->add_option("--out", m_out)->required();
  mix->add_option("--render", m_render);
  mix->add_option("--config", m_config);

  // hide / reveal
  auto* hide_cmd = app.add_subcommand("hide", "Hide a latent in a carrier PNG");
  std::string h_secret, h_carrier, h_out;
  std::uint64_t h_key = 0;
  bool h_f32 = false;
  hide_cmd->add_option("--secret", h_secret)->required()->check(CLI::ExistingFile);
  hide_cmd->add_option("--carrier", h_carrier)->required()->check(CLI::ExistingFile);
  hide_cmd->add_option("--key", h_key)->required();
  hide_cmd->add_flag("--f32", h_f32, "Hide full-precision values instead of f16");
  hide_cmd->add_option("--out", h_out)->required();

  auto* reveal_cmd = app.add_subcommand("reveal", "Recover a hidden latent");
  std::string r_stego, r_out, r_render, r_config;
  std::uint64_t r_key = 0;
  reveal_cmd->add_option("--stego", r_stego)->required()->check(CLI::ExistingFile);
  reveal_cmd->add_option("--key", r_key)->required();
  reveal_cmd->add_option("--out", r_out)->required();
  reveal_cmd->add_option("--render", r_render, "Also write G(w) as PNG");
  reveal_cmd->add_option("--config", r_config);

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP editing service");
  std::string s_config, s_host = "127.0.0.1";
  std::vector<std::string> s_pipeline, s_directions;
  int s_port = 8080, s_workers = 4, s_timeout = 30 * 60;
  serve->add_option("--config", s_config);
  serve->add_option("--pipeline", s_pipeline, "Stage checkpoints, stage 1 first");
  serve->add_option("--directions", s_directions, "Direction JSON files");
  serve->add_option("--host", s_host);
  serve->add_option("--port", s_port);
  serve->add_option("--workers", s_workers);
  serve->add_option("--idle-timeout", s_timeout, "Session idle timeout in seconds");

  // sample
  auto* sample = app.add_subcommand("sample", "Write generator samples (PNG + .wlat) to a directory");
  std::string p_config, p_out;
  int p_count = 16;
  std::uint64_t p_seed = 0;
  sample->add_option("--config", p_config);
  sample->add_option("--count", p_count);
  sample->add_option("--seed", p_seed);
  sample->add_option("--out", p_out)->required();

  // export-generator
  auto* exp = app.add_subcommand("export-generator", "Write the configured generator as an asset + manifest");
  std::string x_config, x_asset, x_manifest;
  int x_mean_samples = 1000;
  exp->add_option("--config", x_config);
  exp->add_option("--asset", x_asset)->required();
  exp->add_option("--manifest", x_manifest)->required();
  exp->add_option("--mean-samples", x_mean_samples);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const auto kv = load_config(t_config);
      const auto g = generator_from(kv);
      const auto enc_cfg = encoder_config_from(kv);
      const auto cfg = train_config_from(kv);
      const auto ex = extractors_from(kv);
      std::optional<fs::path> paired;
      if (!t_paired.empty()) paired = t_paired;
      const Dataset data = Dataset::load_dir(t_data, enc_cfg.input_resolution, paired);
      const auto prev = load_pipeline(t_prev);
      std::vector<const Encoder*> raw;
      for (const auto& p : prev) raw.push_back(p.get());
      TrainHooks hooks;
      hooks.out_dir = t_out;
      hooks.on_epoch = [](const EpochLog& l) {
        std::cout << "epoch " << l.epoch << "  steps " << l.steps << "  loss " << l.mean_total << "  pixel "
                  << l.mean_terms.pixel << "  (" << l.seconds << " s)\n";
      };
      train_stage(t_stage, data, g, raw, cfg, enc_cfg, ex, hooks);
      std::cout << "checkpoint written to " << t_out << "\n";
    } else if (*inv) {
      const GeneratorHandle g = generator_from(load_config(i_config));
      const auto pipeline = load_pipeline(i_pipeline);
      std::vector<const InversionStage*> raw;
      for (const auto& p : pipeline) raw.push_back(p.get());
      const int n = i_stages > 0 ? i_stages : static_cast<int>(raw.size());
      const ImageTensor x = fit_to(load_image(i_image), raw.front()->input_resolution());
      const PipelineState st = invert(raw, g, x, n);
      save_latent(st.latent, i_latent);
      if (!i_render.empty()) save_image(st.render, i_render);
    } else if (*bench) {
      const auto kv = load_config(b_config);
      const GeneratorHandle g = generator_from(kv);
      const auto ex = extractors_from(kv);
      const Dataset data = Dataset::load_dir(b_data, 0);
      const auto methods = load_methods(b_methods, g, ex, loss_weights_from(kv));
      const Embedder emb = ex.identity ? extractor_embedder(ex.identity) : Embedder{};
      const BenchReport rep = run_benchmark(data, methods, g, emb, fs::path(b_data).filename().string());
      for (const auto& o : b_out) {
        std::ofstream f(o);
        if (!f) throw IoError("cannot write " + o);
        if (fs::path(o).extension() == ".md") {
          f << rep.to_markdown();
        } else {
          f << rep.to_json().dump(2) << '\n';
        }
      }
      std::cout << rep.to_markdown();
    } else if (*edit) {
      const LatentCode w = manipulate(load_latent(e_latent), SemanticDirection::load(e_direction), e_alpha);
      save_latent(w, e_out);
      render_if(e_render, e_config, w);
    } else if (*interp) {
      const auto mode = n_permissive ? InterpolationMode::Permissive : InterpolationMode::Strict;
      const LatentCode w = interpolate(load_latent(n_a), load_latent(n_b), n_lambda, mode);
      save_latent(w, n_out);
      render_if(n_render, n_config, w);
    } else if (*mix) {
      std::optional<int> keep;
      if (m_keep >= 0) keep = m_keep;
      const LatentCode w = style_mix(load_latent(m_content), load_latent(m_style), keep);
      save_latent(w, m_out);
      render_if(m_render, m_config, w);
    } else if (*hide_cmd) {
      const LatentCode s = load_latent(h_secret);
      const Rgb8Image stego = hide(s, load_png_rgb8(h_carrier), h_key, h_f32 ? Dtype::F32 : Dtype::F16);
      save_png_rgb8(stego, h_out);
      std::cout << "hid " << payload_bits(s.n_codes(), s.dim(), h_f32 ? Dtype::F32 : Dtype::F16) << " bits\n";
    } else if (*reveal_cmd) {
      const LatentCode w = reveal(load_png_rgb8(r_stego), r_key);
      save_latent(w, r_out);
      render_if(r_render, r_config, w);
    } else if (*serve) {
      const GeneratorHandle g = generator_from(load_config(s_config));
      std::vector<SemanticDirection> dirs;
      for (const auto& d : s_directions) dirs.push_back(SemanticDirection::load(d));
      ServiceConfig cfg;
      cfg.worker_budget = s_workers;
      cfg.idle_timeout = std::chrono::seconds(s_timeout);
      EditingService svc(g, load_pipeline(s_pipeline), std::move(dirs), cfg);
      HttpServer server(svc, s_workers);
      std::cout << "serving on http://" << s_host << ":" << s_port << "\n" << std::flush;
      server.run(s_host, s_port);
    } else if (*sample) {
      const GeneratorHandle g = generator_from(load_config(p_config));
      fs::create_directories(p_out);
      const Dataset d = Dataset::sample(g, gaussian_sampler(g.n_codes(), g.dim()), p_count, p_seed);
      for (const auto& s : d.samples) {
        save_image(s.image, fs::path(p_out) / (s.name + ".png"));
        save_latent(*s.latent, fs::path(p_out) / (s.name + ".wlat"));
      }
    } else if (*exp) {
      const GeneratorHandle g = generator_from(load_config(x_config));
      const LatentCode w_avg = mean_latent(g, gaussian_sampler(g.n_codes(), g.dim()), x_mean_samples);
      export_generator(g, w_avg, x_asset, x_manifest);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

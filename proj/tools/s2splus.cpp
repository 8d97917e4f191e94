// Command-line front end: add-noise, train, denoise, run, eval, gradcheck, manifest.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include "s2s/png_io.hpp"
#include "s2s/run_manifest.hpp"
#include "s2s/s2s.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct TrainFlags {
  s2s::TrainConfig cfg;
  std::optional<double> p;
  std::optional<double> p_mask;
  std::optional<double> p_drop;
  std::string loss = "l1";
  bool no_gconv = false;
  std::size_t log_every = 100;

  s2s::TrainConfig resolve() const {
    s2s::TrainConfig out = cfg;
    if (p) out.set_probability(*p);
    if (p_mask) out.p_mask = *p_mask;
    if (p_drop) out.p_drop = *p_drop;
    out.loss = loss == "l2" ? s2s::LossVariant::L2 : s2s::LossVariant::L1;
    out.gconv = !no_gconv;
    return out;
  }
};

struct EnsembleFlags {
  std::size_t instances = s2s::kDefaultEnsembleSize;
  std::uint64_t seed = 0;
  std::optional<double> p_mask;
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());

  s2s::EnsembleConfig resolve() const { return {instances, p_mask, seed, threads}; }
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  auto prob = CLI::Range(0.0, 1.0);
  cmd->add_option("--steps", f.cfg.steps, "Optimization steps")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--p", f.p, "Shared mask/dropout probability (default 0.4)")->check(prob);
  cmd->add_option("--p-mask", f.p_mask, "Bernoulli mask drop probability")->check(prob);
  cmd->add_option("--p-drop", f.p_drop, "Dropout-layer probability")->check(prob);
  cmd->add_option("--lr", f.cfg.lr, "Adam learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--lambda-iqa", f.cfg.lambda_iqa, "Weight of the quality loss")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--scorer", f.cfg.scorer, "Quality scorer")
      ->capture_default_str()
      ->check(CLI::IsMember({"null", "smoothtv"}));
  cmd->add_option("--loss", f.loss, "Self-supervised residual loss")
      ->capture_default_str()
      ->check(CLI::IsMember({"l1", "l2"}));
  cmd->add_flag("--no-gconv", f.no_gconv, "Use vanilla convolutions in the encoder");
  cmd->add_flag("--normalize", f.cfg.normalize, "Average the residual loss over hidden elements");
  cmd->add_option("--seed", f.cfg.seed, "Training seed")->capture_default_str();
  cmd->add_option("--log-every", f.log_every, "Print the step loss every N steps (0 = never)")->capture_default_str();
}

// `standalone` is false for `run`, where --seed and --p-mask belong to training.
void add_ensemble_flags(CLI::App* cmd, EnsembleFlags& f, bool standalone) {
  cmd->add_option("--ensemble", f.instances, "Dropout-ensemble size")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option(standalone ? "--seed" : "--ensemble-seed", f.seed, "Inference seed")->capture_default_str();
  cmd->add_option(standalone ? "--p-mask" : "--p-mask-infer", f.p_mask,
                  "Mask probability at inference (default: training value)")
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--threads", f.threads, "Inference worker threads")->capture_default_str()->check(CLI::PositiveNumber);
}

void record_train_config(s2s::RunManifest& m, const s2s::TrainConfig& cfg) {
  m.set("steps", cfg.steps);
  m.set("p_mask", cfg.p_mask);
  m.set("p_drop", cfg.p_drop);
  m.set("lr", cfg.lr);
  m.set("lambda_iqa", cfg.lambda_iqa);
  m.set("loss", cfg.loss == s2s::LossVariant::L1 ? "l1" : "l2");
  m.set("normalize", cfg.normalize);
  m.set("gconv", cfg.gconv);
  m.set("scorer", cfg.scorer);
  m.set("seed", cfg.seed);
}

s2s::Checkpoint run_training(const s2s::Image& y, const s2s::TrainConfig& cfg, std::size_t log_every,
                             s2s::RunManifest& m) {
  auto log = [&](std::size_t step, double loss) {
    if (log_every > 0 && (step % log_every == 0 || step + 1 == cfg.steps))
      std::printf("step %zu loss %.6g\n", step, loss);
  };
  auto result = m.timed("train", [&] { return s2s::train(y, cfg, log); });
  m.set("final_loss", result.loss_trace.back());
  return std::move(result.checkpoint);
}

void record_metrics(s2s::RunManifest& m, const s2s::Image& test, const std::string& ref_path) {
  const s2s::Image ref = s2s::read_png(ref_path);
  const s2s::MetricReport r = s2s::evaluate(s2s::clamp01(test), ref);
  std::cout << r.to_text() << '\n' << r.to_record() << '\n';
  m.set("reference", ref_path);
  m.set("psnr_db", r.psnr_db);
  m.set("ssim", r.ssim);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-image self-supervised denoiser (gated-conv encoder/decoder, dropout ensemble)"};
  app.require_subcommand(1);
  std::string manifest_path;
  app.add_option("--manifest", manifest_path, "Append the run manifest to this file");

  // add-noise
  auto* add_noise = app.add_subcommand("add-noise", "Add white Gaussian noise to a PNG");
  std::string an_in, an_out;
  s2s::NoiseSpec noise;
  add_noise->add_option("--input", an_in)->required()->check(CLI::ExistingFile);
  add_noise->add_option("--output", an_out)->required();
  add_noise->add_option("--sigma", noise.sigma, "Std-dev on the 0-255 scale")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  add_noise->add_option("--seed", noise.seed)->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Train on a single noisy image");
  std::string tr_in, tr_ckpt;
  TrainFlags tr_flags;
  train->add_option("--input", tr_in)->required()->check(CLI::ExistingFile);
  train->add_option("--checkpoint", tr_ckpt)->required();
  add_train_flags(train, tr_flags);

  // denoise
  auto* denoise = app.add_subcommand("denoise", "Denoise with a trained checkpoint");
  std::string dn_in, dn_ckpt, dn_out, dn_ref;
  EnsembleFlags dn_flags;
  denoise->add_option("--input", dn_in)->required()->check(CLI::ExistingFile);
  denoise->add_option("--checkpoint", dn_ckpt)->required()->check(CLI::ExistingFile);
  denoise->add_option("--output", dn_out)->required();
  denoise->add_option("--reference", dn_ref, "Clean image for PSNR/SSIM")->check(CLI::ExistingFile);
  add_ensemble_flags(denoise, dn_flags, true);

  // run = train + denoise
  auto* run = app.add_subcommand("run", "Train and denoise in one go");
  std::string rn_in, rn_out, rn_ckpt, rn_ref;
  TrainFlags rn_train;
  EnsembleFlags rn_ens;
  run->add_option("--input", rn_in)->required()->check(CLI::ExistingFile);
  run->add_option("--output", rn_out)->required();
  run->add_option("--checkpoint", rn_ckpt, "Also save the checkpoint here");
  run->add_option("--reference", rn_ref, "Clean image for PSNR/SSIM")->check(CLI::ExistingFile);
  add_train_flags(run, rn_train);
  add_ensemble_flags(run, rn_ens, false);

  // eval
  auto* eval = app.add_subcommand("eval", "PSNR/SSIM of a test image against a reference");
  std::string ev_test, ev_ref;
  eval->add_option("--test", ev_test)->required()->check(CLI::ExistingFile);
  eval->add_option("--ref", ev_ref)->required()->check(CLI::ExistingFile);

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable primitive");
  std::uint64_t gc_seed = 0;
  gradcheck->add_option("--seed", gc_seed)->capture_default_str();

  // manifest
  auto* manifest = app.add_subcommand("manifest", "Print the parameter shapes of a checkpoint or configuration");
  std::string mf_ckpt;
  std::size_t mf_channels = 3;
  bool mf_no_gconv = false;
  manifest->add_option("--checkpoint", mf_ckpt)->check(CLI::ExistingFile);
  manifest->add_option("--channels", mf_channels)->capture_default_str()->check(CLI::IsMember({1, 3}));
  manifest->add_flag("--no-gconv", mf_no_gconv);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    std::optional<s2s::RunManifest> m;
    std::string default_manifest;

    if (add_noise->parsed()) {
      m.emplace("add-noise");
      m->set("input", an_in);
      m->set("output", an_out);
      m->set("sigma", noise.sigma);
      m->set("seed", noise.seed);
      const s2s::Image x = s2s::read_png(an_in);
      s2s::write_png(an_out, s2s::add_awgn(x, noise));
      default_manifest = an_out + ".manifest";
    } else if (train->parsed()) {
      const s2s::TrainConfig cfg = tr_flags.resolve();
      m.emplace("train");
      m->set("input", tr_in);
      m->set("checkpoint", tr_ckpt);
      record_train_config(*m, cfg);
      const s2s::Image y = s2s::read_png(tr_in);
      const s2s::Checkpoint ckpt = run_training(y, cfg, tr_flags.log_every, *m);
      s2s::save_checkpoint(ckpt, tr_ckpt);
      default_manifest = tr_ckpt + ".manifest";
    } else if (denoise->parsed()) {
      const s2s::EnsembleConfig ens = dn_flags.resolve();
      m.emplace("denoise");
      m->set("input", dn_in);
      m->set("checkpoint", dn_ckpt);
      m->set("output", dn_out);
      m->set("ensemble", ens.instances);
      m->set("seed", ens.seed);
      m->set("threads", ens.threads);
      const s2s::Image y = s2s::read_png(dn_in);
      const s2s::Checkpoint ckpt = s2s::load_checkpoint(dn_ckpt);
      const s2s::Image x = m->timed("denoise", [&] { return s2s::denoise_ensemble(ckpt, y, ens); });
      s2s::write_png(dn_out, x);
      if (!dn_ref.empty()) record_metrics(*m, x, dn_ref);
      default_manifest = dn_out + ".manifest";
    } else if (run->parsed()) {
      const s2s::TrainConfig cfg = rn_train.resolve();
      s2s::EnsembleConfig ens = rn_ens.resolve();
      m.emplace("run");
      m->set("input", rn_in);
      m->set("output", rn_out);
      record_train_config(*m, cfg);
      m->set("ensemble", ens.instances);
      m->set("ensemble_seed", ens.seed);
      m->set("threads", ens.threads);
      const s2s::Image y = s2s::read_png(rn_in);
      const s2s::Checkpoint ckpt = run_training(y, cfg, rn_train.log_every, *m);
      if (!rn_ckpt.empty()) {
        s2s::save_checkpoint(ckpt, rn_ckpt);
        m->set("checkpoint", rn_ckpt);
      }
      const s2s::Image x = m->timed("denoise", [&] { return s2s::denoise_ensemble(ckpt, y, ens); });
      s2s::write_png(rn_out, x);
      if (!rn_ref.empty()) record_metrics(*m, x, rn_ref);
      default_manifest = rn_out + ".manifest";
    } else if (eval->parsed()) {
      m.emplace("eval");
      m->set("test", ev_test);
      m->set("ref", ev_ref);
      const s2s::MetricReport r = s2s::evaluate(s2s::read_png(ev_test), s2s::read_png(ev_ref));
      std::cout << r.to_text() << '\n' << r.to_record() << '\n';
      m->set("psnr_db", r.psnr_db);
      m->set("ssim", r.ssim);
    } else if (gradcheck->parsed()) {
      m.emplace("gradcheck");
      m->set("seed", gc_seed);
      const auto results = m->timed("gradcheck", [&] { return s2s::gradcheck::run_suite(gc_seed); });
      std::cout << s2s::gradcheck::format_results(results);
      bool ok = true;
      double worst = 0.0;
      for (const auto& r : results) {
        ok = ok && r.passed;
        worst = std::max(worst, r.max_rel_error);
      }
      m->set("max_rel_error", worst);
      m->set("passed", ok);
      if (!manifest_path.empty()) m->append_to(manifest_path);
      return ok ? kExitOk : kExitFailure;
    } else if (manifest->parsed()) {
      m.emplace("manifest");
      s2s::ShapeManifest sm;
      if (!mf_ckpt.empty()) {
        const s2s::Checkpoint ckpt = s2s::load_checkpoint(mf_ckpt);
        sm = s2s::restore_network<float>(ckpt).manifest();
        m->set("checkpoint", mf_ckpt);
      } else {
        sm = s2s::build_network<float>(mf_channels, 0.4, !mf_no_gconv, s2s::RngStream(0, s2s::streams::kInit)).manifest();
      }
      std::cout << sm.to_text();
      m->set("total_parameters", sm.total);
    }

    const std::string target = manifest_path.empty() ? default_manifest : manifest_path;
    if (m && !target.empty()) m->append_to(target);
    return kExitOk;
  } catch (const s2s::ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

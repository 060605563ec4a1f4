#include "adfseg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include "adfseg/errors.hpp"

namespace fs = std::filesystem;

namespace adfseg {

using nn::Tensor;
using nn::Var;

bool deterministic_mode() {
  const char* v = std::getenv("ADFSEG_DETERMINISTIC");
  if (!v) return true;
  const std::string s(v);
  return !(s == "0" || s == "false" || s == "FALSE" || s == "off");
}

int64_t resolve_seed(int64_t requested) {
  if (requested >= 0) return requested;
  if (deterministic_mode()) {
    throw ConfigError(
        "trainer.seed < 0 requests entropy seeding, which deterministic mode refuses "
        "(set ADFSEG_DETERMINISTIC=0 to allow)");
  }
  std::random_device rd;
  const uint64_t hi = rd(), lo = rd();
  return static_cast<int64_t>(((hi << 32) | lo) & 0x7fffffffffffffffULL);
}

ModelConfig model_config_of(const ExperimentConfig& cfg) {
  ModelConfig mc;
  mc.encoder = cfg.encoder;
  mc.fd = cfg.disentangle;
  mc.fusion = cfg.fusion;
  mc.image_size = cfg.data.gen.image_size;
  mc.mode = mode_from_string(cfg.trainer.mode);
  return mc;
}

double lambda2_schedule(int64_t e, int64_t E, double alpha_fd_max, double alpha_fd_init) {
  if (E < 1 || e < 1 || e > E) {
    throw ContractError("lambda2_schedule: epoch " + std::to_string(e) + " outside [1, " +
                        std::to_string(E) + "]");
  }
  return std::min(alpha_fd_max,
                  (static_cast<double>(e) / static_cast<double>(E)) * alpha_fd_init);
}

std::pair<Var, Var> seg_losses(const Var& logits, const Tensor& mask) {
  if (logits.value().rank() != 4 || logits.dim(1) != 2) {
    throw ContractError("seg_losses: logits must be (B,2,H,W)");
  }
  const int64_t b = logits.dim(0), h = logits.dim(2), w = logits.dim(3);
  if (mask.rank() != 3 || mask.dim(0) != b || mask.dim(1) != h || mask.dim(2) != w) {
    throw ContractError("seg_losses: mask must be (B,H,W) matching logits");
  }
  for (int64_t i = 0; i < mask.numel(); ++i) {
    if (mask[i] != 0.0 && mask[i] != 1.0) throw ContractError("seg_losses: mask must be binary");
  }
  Var ce = nn::ce_with_logits(logits, mask);

  constexpr double kSmooth = 1.0;
  Var fg = nn::select_dim1(logits, 1);
  Var bg = nn::select_dim1(logits, 0);
  Var prob = nn::sigmoid(nn::sub(fg, bg));  // foreground softmax prob for 2 classes
  Var pflat = nn::reshape(prob, {b, h * w});
  Var gflat = nn::constant(Tensor({b, h * w}, mask.vec()));
  Var inter = nn::sum_last(nn::mul(pflat, gflat));
  Var psum = nn::sum_last(pflat);
  Var gsum = nn::sum_last(gflat);
  Var num = nn::add_scalar(nn::mul_scalar(inter, 2.0), kSmooth);
  Var den = nn::add_scalar(nn::add(psum, gsum), kSmooth);
  Var dice = nn::add_scalar(nn::mul_scalar(nn::mean_all(nn::div(num, den)), -1.0), 1.0);
  return {ce, dice};
}

Trainer::Trainer(Model& model, const ExperimentConfig& cfg)
    : model_(model),
      cfg_(cfg),
      opt_(model.params().params(), cfg.trainer.lr),
      sigma_(cfg.alignment.sigma > 0 ? cfg.alignment.sigma : 0.0) {
  cfg_.validate();
}

void Trainer::ensure_sigma(const data::Batch& batch) {
  if (sigma_ > 0) return;
  if (model_.config().mode != Mode::multimodal || !cfg_.trainer.da) return;
  Model::Forward f = model_.forward(batch.x_w, batch.x_n);
  sigma_ = median_sigma(f.desc_w.global.value(), f.desc_n.global.value());
}

namespace {

void require_finite(double v, const char* term, int64_t epoch, int64_t step) {
  if (!std::isfinite(v)) {
    throw NonFiniteLossError(std::string("non-finite loss term '") + term + "' at epoch " +
                             std::to_string(epoch) + " step " + std::to_string(step));
  }
}

}  // namespace

LossReport Trainer::train_step(const data::Batch& batch, int64_t epoch, int64_t step) {
  const int64_t b = batch.x_w.dim(0);
  if (b < 2) throw ContractError("train_step: batch must be >= 2");
  const TrainerConfig& tc = cfg_.trainer;
  const bool multimodal = model_.config().mode == Mode::multimodal;
  const bool use_da = multimodal && tc.da;
  const bool use_fd = multimodal && (tc.pd || tc.dacl);

  LossReport r;
  r.epoch = epoch;
  r.step = step;

  Model::Forward f = model_.forward(batch.x_w, batch.x_n);
  auto [ce, dice] = seg_losses(f.logits, batch.mask);

  Var total = nn::add(nn::mul_scalar(ce, tc.lambda_ce), nn::mul_scalar(dice, tc.lambda_dice));
  if (use_da) {
    if (sigma_ <= 0) ensure_sigma(batch);
    Var da = mmd_loss(f.desc_w.global, f.desc_n.global, sigma_);
    r.da = da.value().item();
    total = nn::add(total, nn::mul_scalar(da, cfg_.alignment.lambda_da));
  }
  if (use_fd) {
    FDConfig eff = cfg_.disentangle;
    if (!tc.pd) eff.alpha = eff.beta = eff.gamma = 0.0;
    if (!tc.dacl) eff.delta = 0.0;
    FdParts parts = loss_fd(f.bundle, eff);
    r.lambda2 = tc.ts ? lambda2_schedule(epoch, tc.epochs, tc.alpha_fd_max, tc.alpha_fd_init)
                      : tc.alpha_fd_max;
    r.align = parts.align.value().item();
    r.diff = parts.diff.value().item();
    r.orth = parts.orth.value().item();
    r.dacl = parts.dacl.value().item();
    r.fd = parts.total.value().item();
    total = nn::add(total, nn::mul_scalar(parts.total, r.lambda2));
  }
  r.ce = ce.value().item();
  r.dice = dice.value().item();
  r.total = total.value().item();

  require_finite(r.da, "DA", epoch, step);
  require_finite(r.align, "Align", epoch, step);
  require_finite(r.diff, "Diff", epoch, step);
  require_finite(r.orth, "Orth", epoch, step);
  require_finite(r.dacl, "DACL", epoch, step);
  require_finite(r.fd, "FD", epoch, step);
  require_finite(r.ce, "CE", epoch, step);
  require_finite(r.dice, "Dice", epoch, step);
  require_finite(r.total, "total", epoch, step);

  opt_.zero_grad();
  nn::backward(total);
  opt_.step();
  return r;
}

namespace {

const char* kCsvHeader = "epoch,step,da,align,diff,orth,dacl,fd,ce,dice,total,lambda2\n";

void write_row(std::ofstream& out, const LossReport& r, bool with_step) {
  char buf[512];
  if (with_step) {
    std::snprintf(buf, sizeof(buf),
                  "%lld,%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(r.epoch), static_cast<long long>(r.step), r.da, r.align,
                  r.diff, r.orth, r.dacl, r.fd, r.ce, r.dice, r.total, r.lambda2);
  } else {
    std::snprintf(buf, sizeof(buf),
                  "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(r.epoch), r.da, r.align, r.diff, r.orth, r.dacl, r.fd,
                  r.ce, r.dice, r.total, r.lambda2);
  }
  out << buf;
}

}  // namespace

FitResult fit(Model& model, const data::DatasetManifest& manifest, const ExperimentConfig& cfg,
              const std::string& out_dir, const std::string& resume_path, bool dry_run) {
  cfg.validate();
  fs::create_directories(out_dir);
  FitResult result;
  result.steps_csv = (fs::path(out_dir) / "steps.csv").string();
  result.epochs_csv = (fs::path(out_dir) / "epochs.csv").string();

  {
    std::ofstream cfg_out(fs::path(out_dir) / "config.json");
    cfg_out << cfg.to_json_text() << "\n";
  }

  const TrainerConfig& tc = cfg.trainer;
  std::ofstream steps(result.steps_csv);
  std::ofstream epochs(result.epochs_csv);
  steps << kCsvHeader;
  epochs << "epoch,da,align,diff,orth,dacl,fd,ce,dice,total,lambda2\n";

  if (dry_run) {
    for (int64_t e = 1; e <= tc.epochs; ++e) {
      LossReport r;
      r.epoch = e;
      r.lambda2 = tc.ts ? lambda2_schedule(e, tc.epochs, tc.alpha_fd_max, tc.alpha_fd_init)
                        : tc.alpha_fd_max;
      write_row(epochs, r, false);
      result.epoch_means.push_back(r);
    }
    return result;
  }

  Trainer trainer(model, cfg);
  int64_t start_epoch = 1;
  if (!resume_path.empty()) {
    CheckpointMeta meta =
        load_checkpoint(resume_path, model.params(), trainer.optimizer().m(), trainer.optimizer().v());
    if (meta.config_hash != cfg.hash()) {
      throw ConfigError("resume: checkpoint config hash mismatch (checkpoint " +
                        std::to_string(meta.config_hash) + ", config " + std::to_string(cfg.hash()) +
                        ")");
    }
    trainer.optimizer().set_t(meta.adam_t);
    if (meta.sigma > 0) trainer.set_sigma(meta.sigma);
    start_epoch = meta.epoch + 1;
  }

  auto train_view = manifest.split_view("train");
  if (train_view.empty()) throw ContractError("fit: manifest has no train split");

  if (tc.seed < 0) throw ConfigError("fit: trainer.seed must be resolved (nonnegative)");
  const uint64_t seed = static_cast<uint64_t>(tc.seed);
  auto save = [&](int64_t epoch, const std::string& name) {
    CheckpointMeta meta;
    meta.epoch = epoch;
    meta.adam_t = trainer.optimizer().t();
    meta.sigma = trainer.sigma();
    meta.config_hash = cfg.hash();
    meta.config_text = cfg.to_json_text();
    const std::string path = (fs::path(out_dir) / name).string();
    save_checkpoint(path, model.params(), trainer.optimizer().m(), trainer.optimizer().v(), meta);
    return path;
  };

  for (int64_t e = start_epoch; e <= tc.epochs; ++e) {
    auto batches = data::make_batches(train_view, tc.batch, mix_seed(seed, "shuffle", static_cast<uint64_t>(e)), true);
    if (batches.empty()) {
      throw ConfigError("fit: train split smaller than one batch (" +
                        std::to_string(train_view.size()) + " pairs, batch " +
                        std::to_string(tc.batch) + ")");
    }
    LossReport mean;
    mean.epoch = e;
    int64_t step = 0;
    for (const auto& batch : batches) {
      LossReport r = trainer.train_step(batch, e, step);
      write_row(steps, r, true);
      mean.da += r.da;
      mean.align += r.align;
      mean.diff += r.diff;
      mean.orth += r.orth;
      mean.dacl += r.dacl;
      mean.fd += r.fd;
      mean.ce += r.ce;
      mean.dice += r.dice;
      mean.total += r.total;
      mean.lambda2 = r.lambda2;
      ++step;
    }
    const double inv = 1.0 / static_cast<double>(step);
    mean.da *= inv;
    mean.align *= inv;
    mean.diff *= inv;
    mean.orth *= inv;
    mean.dacl *= inv;
    mean.fd *= inv;
    mean.ce *= inv;
    mean.dice *= inv;
    mean.total *= inv;
    write_row(epochs, mean, false);
    result.epoch_means.push_back(mean);
    if (e % tc.checkpoint_every == 0 && e != tc.epochs) {
      char name[64];
      std::snprintf(name, sizeof(name), "ckpt_epoch_%04lld.bin", static_cast<long long>(e));
      save(e, name);
    }
  }
  result.checkpoint_path = save(tc.epochs, "ckpt_final.bin");
  return result;
}

}  // namespace adfseg

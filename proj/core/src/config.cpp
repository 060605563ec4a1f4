#include "adfseg/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "adfseg/errors.hpp"
#include "adfseg/model.hpp"

// nlohmann::json (std::map-backed) keeps keys sorted, which makes dumps canonical
using json = nlohmann::json;

namespace adfseg {

void TrainerConfig::validate() const {
  if (epochs < 1) throw ConfigError("trainer: epochs must be >= 1");
  if (lr <= 0) throw ConfigError("trainer: lr must be > 0");
  if (batch < 2) throw ConfigError("trainer: batch must be >= 2");
  if (lambda_ce < 0 || lambda_dice < 0) throw ConfigError("trainer: loss weights must be >= 0");
  if (alpha_fd_init < 0 || alpha_fd_max < 0) {
    throw ConfigError("trainer: alpha_fd_init and alpha_fd_max must be >= 0");
  }
  if (checkpoint_every < 1) throw ConfigError("trainer: checkpoint_every must be >= 1");
  mode_from_string(mode);
}

void ExperimentConfig::validate() const {
  if (data.n_pairs < 1) throw ConfigError("data: n_pairs must be >= 1");
  data.gen.validate();
  encoder.validate();
  alignment.validate();
  disentangle.validate();
  fusion.validate();
  trainer.validate();
  if (data.gen.image_size % encoder.patch_size != 0) {
    throw ConfigError("config: data.image_size must be divisible by encoder.patch_size");
  }
}

namespace {

class SectionReader {
 public:
  SectionReader(const json& j, std::string section) : section_(std::move(section)) {
    if (auto it = j.find(section_); it != j.end()) {
      if (!it->is_object()) throw ConfigError("config: section '" + section_ + "' must be an object");
      obj_ = &*it;
    }
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_) return;
    if (auto it = obj_->find(key); it != obj_->end()) {
      try {
        out = it->get<T>();
      } catch (const json::exception&) {
        throw ConfigError("config: bad value for " + section_ + "." + key);
      }
    }
  }

  // sigma: number, or the string "auto" mapped to 0
  void read_sigma(const char* key, double& out) {
    seen_.insert(key);
    if (!obj_) return;
    if (auto it = obj_->find(key); it != obj_->end()) {
      if (it->is_string()) {
        if (it->get<std::string>() != "auto") {
          throw ConfigError("config: " + section_ + "." + key + " must be a number or \"auto\"");
        }
        out = 0.0;
      } else if (it->is_number()) {
        out = it->get<double>();
        if (out <= 0) throw ConfigError("config: " + section_ + "." + key + " must be > 0 or \"auto\"");
      } else {
        throw ConfigError("config: " + section_ + "." + key + " must be a number or \"auto\"");
      }
    }
  }

  void reject_unknown() const {
    if (!obj_) return;
    for (auto it = obj_->begin(); it != obj_->end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ConfigError("config: unknown key " + section_ + "." + it.key());
      }
    }
  }

 private:
  std::string section_;
  const json* obj_{nullptr};
  std::set<std::string> seen_;
};

const std::set<std::string> kSections = {"data",   "encoder", "alignment", "disentangle",
                                         "fusion", "trainer", "metrics"};

}  // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!kSections.count(it.key())) throw ConfigError("config: unknown section " + it.key());
  }

  ExperimentConfig c;
  {
    SectionReader r(j, "data");
    r.read("n_pairs", c.data.n_pairs);
    r.read("seed", c.data.seed);
    r.read("image_size", c.data.gen.image_size);
    r.read("tumor_fraction", c.data.gen.tumor_fraction);
    r.read("lesion_r_min", c.data.gen.lesion_r_min);
    r.read("lesion_r_max", c.data.gen.lesion_r_max);
    r.read("complementary", c.data.gen.complementary);
    r.read("warp_max_shift", c.data.gen.warp_max_shift);
    r.read("noise", c.data.gen.noise);
    r.read("train_fraction", c.data.gen.train_fraction);
    r.read("foreground_min", c.data.gen.foreground_min);
    r.read("foreground_max", c.data.gen.foreground_max);
    r.reject_unknown();
  }
  {
    SectionReader r(j, "encoder");
    r.read("in_channels", c.encoder.in_channels);
    r.read("patch_size", c.encoder.patch_size);
    r.read("dim", c.encoder.dim);
    r.read("depth", c.encoder.depth);
    r.read("shallow_taps", c.encoder.shallow_taps);
    r.read("heads", c.encoder.heads);
    r.read("mlp_ratio", c.encoder.mlp_ratio);
    r.read("share_weights", c.encoder.share_weights);
    r.reject_unknown();
  }
  {
    SectionReader r(j, "alignment");
    r.read_sigma("sigma", c.alignment.sigma);
    r.read("lambda_da", c.alignment.lambda_da);
    r.reject_unknown();
  }
  {
    SectionReader r(j, "disentangle");
    r.read("alpha", c.disentangle.alpha);
    r.read("beta", c.disentangle.beta);
    r.read("gamma", c.disentangle.gamma);
    r.read("delta", c.disentangle.delta);
    r.read("tau", c.disentangle.tau);
    r.read("symmetrize_dacl", c.disentangle.symmetrize_dacl);
    r.read("flatten_tokens", c.disentangle.flatten_tokens);
    r.reject_unknown();
  }
  {
    SectionReader r(j, "fusion");
    r.read("base_channels", c.fusion.base_channels);
    r.read("aggregate_bias", c.fusion.aggregate_bias);
    r.reject_unknown();
  }
  {
    SectionReader r(j, "trainer");
    r.read("epochs", c.trainer.epochs);
    r.read("lr", c.trainer.lr);
    r.read("batch", c.trainer.batch);
    r.read("seed", c.trainer.seed);
    r.read("lambda_ce", c.trainer.lambda_ce);
    r.read("lambda_dice", c.trainer.lambda_dice);
    r.read("alpha_fd_init", c.trainer.alpha_fd_init);
    r.read("alpha_fd_max", c.trainer.alpha_fd_max);
    r.read("checkpoint_every", c.trainer.checkpoint_every);
    r.read("mode", c.trainer.mode);
    r.read("da", c.trainer.da);
    r.read("pd", c.trainer.pd);
    r.read("dacl", c.trainer.dacl);
    r.read("ts", c.trainer.ts);
    r.reject_unknown();
  }
  {
    SectionReader r(j, "metrics");
    r.read("dump_embeddings", c.metrics.dump_embeddings);
    r.reject_unknown();
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string ExperimentConfig::to_json_text() const {
  json j;
  j["data"] = {{"n_pairs", data.n_pairs},
               {"seed", data.seed},
               {"image_size", data.gen.image_size},
               {"tumor_fraction", data.gen.tumor_fraction},
               {"lesion_r_min", data.gen.lesion_r_min},
               {"lesion_r_max", data.gen.lesion_r_max},
               {"complementary", data.gen.complementary},
               {"warp_max_shift", data.gen.warp_max_shift},
               {"noise", data.gen.noise},
               {"train_fraction", data.gen.train_fraction},
               {"foreground_min", data.gen.foreground_min},
               {"foreground_max", data.gen.foreground_max}};
  j["encoder"] = {{"in_channels", encoder.in_channels},
                  {"patch_size", encoder.patch_size},
                  {"dim", encoder.dim},
                  {"depth", encoder.depth},
                  {"shallow_taps", encoder.shallow_taps},
                  {"heads", encoder.heads},
                  {"mlp_ratio", encoder.mlp_ratio},
                  {"share_weights", encoder.share_weights}};
  if (alignment.sigma > 0) {
    j["alignment"] = {{"sigma", alignment.sigma}, {"lambda_da", alignment.lambda_da}};
  } else {
    j["alignment"] = {{"sigma", "auto"}, {"lambda_da", alignment.lambda_da}};
  }
  j["disentangle"] = {{"alpha", disentangle.alpha},
                      {"beta", disentangle.beta},
                      {"gamma", disentangle.gamma},
                      {"delta", disentangle.delta},
                      {"tau", disentangle.tau},
                      {"symmetrize_dacl", disentangle.symmetrize_dacl},
                      {"flatten_tokens", disentangle.flatten_tokens}};
  j["fusion"] = {{"base_channels", fusion.base_channels},
                 {"aggregate_bias", fusion.aggregate_bias}};
  j["trainer"] = {{"epochs", trainer.epochs},
                  {"lr", trainer.lr},
                  {"batch", trainer.batch},
                  {"seed", trainer.seed},
                  {"lambda_ce", trainer.lambda_ce},
                  {"lambda_dice", trainer.lambda_dice},
                  {"alpha_fd_init", trainer.alpha_fd_init},
                  {"alpha_fd_max", trainer.alpha_fd_max},
                  {"checkpoint_every", trainer.checkpoint_every},
                  {"mode", trainer.mode},
                  {"da", trainer.da},
                  {"pd", trainer.pd},
                  {"dacl", trainer.dacl},
                  {"ts", trainer.ts}};
  j["metrics"] = {{"dump_embeddings", metrics.dump_embeddings}};
  return j.dump(2);
}

uint64_t ExperimentConfig::hash() const {
  return fnv1a64(to_json_text());
}

std::string apply_override(const std::string& json_text, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("config: --set expects section.key=value, got '" + spec + "'");
  }
  const std::string path = spec.substr(0, eq);
  const std::string value = spec.substr(eq + 1);
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;  // unquoted strings like mode=single_w
  }
  std::string ptr = "/";
  for (char ch : path) ptr += ch == '.' ? '/' : ch;
  j[json::json_pointer(ptr)] = parsed;
  return j.dump();
}

}  // namespace adfseg

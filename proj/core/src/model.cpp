#include "adfseg/model.hpp"

#include "adfseg/errors.hpp"

namespace adfseg {

using nn::Var;

Mode mode_from_string(const std::string& s) {
  if (s == "multimodal") return Mode::multimodal;
  if (s == "single_w") return Mode::single_w;
  if (s == "single_n") return Mode::single_n;
  throw ConfigError("model: unknown mode '" + s + "' (multimodal|single_w|single_n)");
}

std::string mode_to_string(Mode m) {
  switch (m) {
    case Mode::multimodal: return "multimodal";
    case Mode::single_w: return "single_w";
    case Mode::single_n: return "single_n";
  }
  return "multimodal";
}

void ModelConfig::validate() const {
  encoder.validate();
  fd.validate();
  fusion.validate();
  if (image_size < encoder.patch_size) throw ConfigError("model: image_size below patch_size");
}

Model::Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(mix_seed(seed, "model-init"));
  encoder_ = std::make_unique<TwoBranchEncoder>(cfg_.encoder, cfg_.image_size, params_, rng);
  const int64_t d = cfg_.encoder.dim;
  const int64_t ld = cfg_.encoder.shallow_taps * d;
  if (cfg_.mode == Mode::multimodal) {
    scorer_w_ = nn::Linear(params_, rng, "align.scorer_w", ld, 1);
    scorer_n_ = nn::Linear(params_, rng, "align.scorer_n", ld, 1);
    projectors_ = Projectors(params_, rng, "proj", d);
    f_sh_ = nn::Linear(params_, rng, "fusion.agg", 2 * d, d, cfg_.fusion.aggregate_bias);
    fusion_maps_ = FusionMaps(params_, rng, "fusion.map", d);
  }
  decoder_ = Decoder(params_, rng, "dec", d, cfg_.encoder.patch_size, cfg_.fusion.base_channels);
}

Model::Forward Model::forward(const nn::Tensor& x_w, const nn::Tensor& x_n) {
  Forward out;
  if (cfg_.mode != Mode::multimodal) {
    const nn::Tensor& x = cfg_.mode == Mode::single_w ? x_w : x_n;
    Var vx = nn::constant(x);
    auto enc1 = encoder_->encode_single(vx, cfg_.mode == Mode::single_w ? 0 : 1);
    out.logits = decoder_(enc1.second);
    return out;
  }
  Var vw = nn::constant(x_w);
  Var vn = nn::constant(x_n);
  EncoderOutput enc = encoder_->encode(vw, vn);
  Var ms_w = concat_multiscale(enc.shallow_w);
  Var ms_n = concat_multiscale(enc.shallow_n);
  out.desc_w = global_descriptor(ms_w, scorer_w_);
  out.desc_n = global_descriptor(ms_n, scorer_n_);
  out.bundle = project(enc.deep_w, enc.deep_n, projectors_, cfg_.fd.flatten_tokens);
  Var z_sh = aggregate_shared(out.bundle.Z_ws, out.bundle.Z_ns, f_sh_);
  Var z_fused = fuse(z_sh, out.bundle.Z_wp, out.bundle.Z_np, fusion_maps_);
  out.logits = decoder_(z_fused);
  return out;
}

nn::Tensor Model::predict(const nn::Tensor& x_w, const nn::Tensor& x_n) {
  Forward f = forward(x_w, x_n);
  const nn::Tensor& lg = f.logits.value();
  const int64_t b = lg.dim(0), h = lg.dim(2), w = lg.dim(3);
  nn::Tensor mask({b, h, w});
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < h * w; ++j) {
      const double bg = lg[(i * 2 + 0) * h * w + j];
      const double fg = lg[(i * 2 + 1) * h * w + j];
      mask[i * h * w + j] = fg > bg ? 1.0 : 0.0;
    }
  return mask;
}

}  // namespace adfseg

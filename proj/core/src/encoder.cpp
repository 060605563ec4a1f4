#include "adfseg/encoder.hpp"

#include "adfseg/errors.hpp"

namespace adfseg {

using nn::Var;

void EncoderConfig::validate() const {
  if (in_channels < 1) throw ConfigError("encoder: in_channels must be >= 1");
  if (patch_size < 1 || (patch_size & (patch_size - 1)) != 0) {
    throw ConfigError("encoder: patch_size must be a power of two");
  }
  if (dim < 1 || heads < 1 || dim % heads != 0) {
    throw ConfigError("encoder: dim must be divisible by heads");
  }
  if (depth < 1) throw ConfigError("encoder: depth must be >= 1");
  if (shallow_taps < 1 || shallow_taps >= depth) {
    throw ConfigError("encoder: shallow_taps must satisfy 1 <= L < depth");
  }
  if (mlp_ratio < 1) throw ConfigError("encoder: mlp_ratio must be >= 1");
}

TwoBranchEncoder::TwoBranchEncoder(const EncoderConfig& cfg, int64_t image_size,
                                   nn::ParamStore& ps, Rng& rng)
    : cfg_(cfg), image_size_(image_size), shared_(cfg.share_weights) {
  cfg_.validate();
  if (image_size % cfg_.patch_size != 0) {
    throw ConfigError("encoder: image_size must be divisible by patch_size");
  }
  const int64_t grid = image_size / cfg_.patch_size;
  n_tokens_ = grid * grid;
  w_ = make_branch("enc.w", ps, rng);
  if (!shared_) n_ = make_branch("enc.n", ps, rng);
}

TwoBranchEncoder::Branch TwoBranchEncoder::make_branch(const std::string& name, nn::ParamStore& ps,
                                                       Rng& rng) const {
  Branch br;
  const int64_t fdim = cfg_.in_channels * cfg_.patch_size * cfg_.patch_size;
  br.patch_embed = nn::Linear(ps, rng, name + ".embed", fdim, cfg_.dim);
  nn::Tensor pos({n_tokens_, cfg_.dim});
  rng.fill_normal(pos, 0.0, 0.02);
  br.pos = ps.add(name + ".pos", std::move(pos));
  for (int64_t i = 0; i < cfg_.depth; ++i) {
    br.blocks.emplace_back(ps, rng, name + ".blk" + std::to_string(i), cfg_.dim, cfg_.heads,
                           cfg_.mlp_ratio * cfg_.dim);
  }
  return br;
}

std::pair<std::vector<Var>, Var> TwoBranchEncoder::run(const Branch& br, const Var& x) const {
  if (x.value().rank() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != image_size_ ||
      x.dim(3) != image_size_) {
    throw ContractError("encoder: expected input (B, " + std::to_string(cfg_.in_channels) + ", " +
                        std::to_string(image_size_) + ", " + std::to_string(image_size_) + "), got " +
                        nn::shape_str(x.shape()));
  }
  Var t = br.patch_embed(nn::img_to_patches(x, cfg_.patch_size));
  t = nn::add_bcast0(t, br.pos);
  std::vector<Var> shallow;
  for (int64_t i = 0; i < cfg_.depth; ++i) {
    t = br.blocks[static_cast<size_t>(i)](t);
    if (i < cfg_.shallow_taps) shallow.push_back(t);
  }
  return {shallow, t};
}

EncoderOutput TwoBranchEncoder::encode(const Var& x_w, const Var& x_n) const {
  if (x_w.dim(0) != x_n.dim(0)) {
    throw ContractError("encoder: modality batch sizes differ: " + nn::shape_str(x_w.shape()) +
                        " vs " + nn::shape_str(x_n.shape()));
  }
  EncoderOutput out;
  auto [sw, dw] = run(w_, x_w);
  auto [sn, dn] = run(shared_ ? w_ : n_, x_n);
  out.shallow_w = std::move(sw);
  out.shallow_n = std::move(sn);
  out.deep_w = dw;
  out.deep_n = dn;
  return out;
}

std::pair<std::vector<Var>, Var> TwoBranchEncoder::encode_single(const Var& x,
                                                                 int64_t modality) const {
  if (modality != 0 && modality != 1) throw ContractError("encoder: modality must be 0 or 1");
  const Branch& br = (modality == 0 || shared_) ? w_ : n_;
  return run(br, x);
}

}  // namespace adfseg

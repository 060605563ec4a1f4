#include "adfseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include <nlohmann/json.hpp>

#include "adfseg/errors.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace adfseg::data {

namespace {

// Lesion contrast shared by both modalities; visibility suppression scales it
// per modality. Not a latent: zeroed specific codes must still show lesions.
constexpr double kLesionContrast = 0.35;
constexpr double kBaseW = 0.55;
constexpr double kBaseN = 0.45;
constexpr double kEdgePx = 1.5;  // soft boundary width of the lobe field

// shared_code layout
enum SharedIdx {
  kPresence = 0,
  kCx,
  kCy,
  kRadA,
  kRadB,
  kSep,
  kAngle,
  kWobAmpA,
  kWobPhaseA,
  kWobAmpB,
  kWobPhaseB,
  kWobFreq,
  kSharedLen
};

// specific_w layout
enum SpecWIdx { kIllumGx = 0, kIllumGy, kVignette, kBaseShiftW, kHideB, kSpecWLen };

// specific_n layout
enum SpecNIdx {
  kVesselFreq1 = 0,
  kVesselAngle,
  kVesselPhase,
  kVesselAmp,
  kVesselFreq2,
  kHideA,
  kShiftY,
  kShiftX,
  kSpecNLen
};

struct Lobe {
  double cx, cy, r, wob_amp, wob_phase, wob_freq;
};

// 1 inside the wobbled disc, 0 outside, linear ramp of width 2*kEdgePx.
double lobe_alpha(const Lobe& l, double y, double x) {
  const double dy = y - l.cy;
  const double dx = x - l.cx;
  const double d = std::sqrt(dy * dy + dx * dx);
  const double theta = std::atan2(dy, dx);
  const double r_eff = l.r * (1.0 + l.wob_amp * std::sin(l.wob_freq * theta + l.wob_phase));
  const double s = d - r_eff;
  return std::clamp(0.5 - s / (2.0 * kEdgePx), 0.0, 1.0);
}

std::pair<Lobe, Lobe> lobes_from_code(const std::vector<double>& sc, int64_t size) {
  const double s = static_cast<double>(size);
  const double cx = sc[kCx] * s, cy = sc[kCy] * s;
  const double ra = sc[kRadA] * s, rb = sc[kRadB] * s;
  const double sep = sc[kSep] * 0.5 * (ra + rb);
  const double ca = std::cos(sc[kAngle]), sa = std::sin(sc[kAngle]);
  Lobe a{cx - sep * ca, cy - sep * sa, ra, sc[kWobAmpA], sc[kWobPhaseA], sc[kWobFreq]};
  Lobe b{cx + sep * ca, cy + sep * sa, rb, sc[kWobAmpB], sc[kWobPhaseB], sc[kWobFreq]};
  return {a, b};
}

std::string pair_id(int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "synth-%05lld", static_cast<long long>(i));
  return buf;
}

}  // namespace

void GeneratorConfig::validate() const {
  if (image_size < 8) throw ConfigError("data: image_size must be >= 8");
  if (!(lesion_r_min > 0 && lesion_r_min <= lesion_r_max && lesion_r_max < 0.5)) {
    throw ConfigError("data: lesion radii must satisfy 0 < min <= max < 0.5");
  }
  if (tumor_fraction < 0 || tumor_fraction > 1) throw ConfigError("data: tumor_fraction in [0,1]");
  if (train_fraction < 0 || train_fraction > 1) throw ConfigError("data: train_fraction in [0,1]");
  if (noise < 0) throw ConfigError("data: noise must be >= 0");
  if (warp_max_shift < 0) throw ConfigError("data: warp_max_shift must be >= 0");
  if (!(foreground_min >= 0 && foreground_min < foreground_max && foreground_max <= 1)) {
    throw ConfigError("data: foreground bounds must satisfy 0 <= min < max <= 1");
  }
}

std::vector<const SamplePair*> DatasetManifest::split_view(const std::string& split) const {
  std::vector<const SamplePair*> view;
  for (const auto& p : pairs)
    if (p.split == split) view.push_back(&p);
  return view;
}

PlantedFactors draw_factors(Rng& rng, bool tumor, const GeneratorConfig& cfg) {
  PlantedFactors f;
  f.shared_code.resize(kSharedLen);
  f.shared_code[kPresence] = tumor ? 1.0 : 0.0;
  f.shared_code[kCx] = rng.uniform(0.35, 0.65);
  f.shared_code[kCy] = rng.uniform(0.35, 0.65);
  f.shared_code[kRadA] = rng.uniform(cfg.lesion_r_min, cfg.lesion_r_max);
  f.shared_code[kRadB] = rng.uniform(cfg.lesion_r_min, cfg.lesion_r_max);
  f.shared_code[kSep] = rng.uniform(0.8, 1.4);  // lobes touch to slightly apart
  f.shared_code[kAngle] = rng.uniform(0.0, std::numbers::pi);
  f.shared_code[kWobAmpA] = rng.uniform(0.0, 0.22);
  f.shared_code[kWobPhaseA] = rng.uniform(0.0, 2 * std::numbers::pi);
  f.shared_code[kWobAmpB] = rng.uniform(0.0, 0.22);
  f.shared_code[kWobPhaseB] = rng.uniform(0.0, 2 * std::numbers::pi);
  f.shared_code[kWobFreq] = static_cast<double>(3 + rng.below(3));

  f.specific_w.resize(kSpecWLen);
  f.specific_w[kIllumGx] = rng.uniform(-0.2, 0.2);
  f.specific_w[kIllumGy] = rng.uniform(-0.2, 0.2);
  f.specific_w[kVignette] = rng.uniform(0.0, 0.15);
  f.specific_w[kBaseShiftW] = rng.uniform(-0.05, 0.05);
  f.specific_w[kHideB] = cfg.complementary ? rng.uniform(0.92, 1.0) : 0.0;

  f.specific_n.resize(kSpecNLen);
  f.specific_n[kVesselFreq1] = rng.uniform(0.4, 1.0);
  f.specific_n[kVesselAngle] = rng.uniform(0.0, std::numbers::pi);
  f.specific_n[kVesselPhase] = rng.uniform(0.0, 2 * std::numbers::pi);
  f.specific_n[kVesselAmp] = rng.uniform(0.05, 0.12);
  f.specific_n[kVesselFreq2] = rng.uniform(0.15, 0.5);
  f.specific_n[kHideA] = cfg.complementary ? rng.uniform(0.92, 1.0) : 0.0;
  f.specific_n[kShiftY] = rng.uniform(-1.0, 1.0);
  f.specific_n[kShiftX] = rng.uniform(-1.0, 1.0);
  return f;
}

Image render_mask(const std::vector<double>& sc, const GeneratorConfig& cfg) {
  const int64_t s = cfg.image_size;
  Image mask(1, s, s);
  if (sc[kPresence] < 0.5) return mask;
  auto [la, lb] = lobes_from_code(sc, s);
  for (int64_t y = 0; y < s; ++y)
    for (int64_t x = 0; x < s; ++x) {
      const double a = std::max(lobe_alpha(la, static_cast<double>(y), static_cast<double>(x)),
                                lobe_alpha(lb, static_cast<double>(y), static_cast<double>(x)));
      mask.at(0, y, x) = a >= 0.5 ? 1.0 : 0.0;
    }
  return mask;
}

SamplePair render_sample(const PlantedFactors& f, const GeneratorConfig& cfg, uint64_t noise_seed) {
  cfg.validate();
  if (f.shared_code.size() != kSharedLen || f.specific_w.size() != kSpecWLen ||
      f.specific_n.size() != kSpecNLen) {
    throw ContractError("render_sample: factor vectors have wrong length");
  }
  const int64_t s = cfg.image_size;
  const double sd = static_cast<double>(s);
  SamplePair p;
  p.mask = render_mask(f.shared_code, cfg);
  p.x_w = Image(1, s, s);
  p.x_n = Image(1, s, s);
  const bool present = f.shared_code[kPresence] >= 0.5;
  auto [la, lb] = lobes_from_code(f.shared_code, s);

  const double vis_b_w = 1.0 - f.specific_w[kHideB];
  const double vis_a_n = 1.0 - f.specific_n[kHideA];
  const double vca = std::cos(f.specific_n[kVesselAngle]);
  const double vsa = std::sin(f.specific_n[kVesselAngle]);

  for (int64_t y = 0; y < s; ++y) {
    for (int64_t x = 0; x < s; ++x) {
      const double yd = static_cast<double>(y), xd = static_cast<double>(x);
      const double u = xd / sd - 0.5, v = yd / sd - 0.5;
      double aa = 0, ab = 0;
      if (present) {
        aa = lobe_alpha(la, yd, xd);
        ab = lobe_alpha(lb, yd, xd);
      }
      // modality w: morphology under an illumination field
      double iw = kBaseW + f.specific_w[kBaseShiftW] + f.specific_w[kIllumGx] * u +
                  f.specific_w[kIllumGy] * v - f.specific_w[kVignette] * 4.0 * (u * u + v * v);
      iw -= kLesionContrast * (aa + vis_b_w * ab - aa * vis_b_w * ab);  // union blend
      p.x_w.at(0, y, x) = iw;
      // modality n: vessel texture, complementary lobe visibility
      const double r1 = f.specific_n[kVesselFreq1] * (vca * xd + vsa * yd);
      const double r2 = f.specific_n[kVesselFreq2] * (-vsa * xd + vca * yd);
      double in = kBaseN + f.specific_n[kVesselAmp] * std::sin(r1 + f.specific_n[kVesselPhase]) *
                               std::sin(r2 + 1.7 * f.specific_n[kVesselPhase]);
      in -= kLesionContrast * (vis_a_n * aa + ab - vis_a_n * aa * ab);
      p.x_n.at(0, y, x) = in;
    }
  }

  if (cfg.warp_max_shift > 0) {
    p.x_n = shift_bilinear(p.x_n, f.specific_n[kShiftY] * cfg.warp_max_shift,
                           f.specific_n[kShiftX] * cfg.warp_max_shift);
  }
  if (cfg.noise > 0) {
    Rng nrng(mix_seed(noise_seed, "pixel-noise"));
    for (auto& px : p.x_w.pix) px += cfg.noise * nrng.normal();
    for (auto& px : p.x_n.pix) px += cfg.noise * nrng.normal();
  }
  for (auto& px : p.x_w.pix) px = std::clamp(px, 0.0, 1.0);
  for (auto& px : p.x_n.pix) px = std::clamp(px, 0.0, 1.0);

  p.label = present ? "tumor" : "benign";
  p.factors = f;
  return p;
}

DatasetManifest synthesize_dataset(int64_t n_pairs, uint64_t seed, const GeneratorConfig& cfg) {
  if (n_pairs < 1) throw ContractError("synthesize_dataset: n_pairs must be >= 1");
  cfg.validate();
  DatasetManifest m;
  const int64_t n_train = static_cast<int64_t>(std::llround(cfg.train_fraction * static_cast<double>(n_pairs)));
  for (int64_t i = 0; i < n_pairs; ++i) {
    Rng rng(mix_seed(seed, "factors", static_cast<uint64_t>(i)));
    const bool tumor = rng.uniform() < cfg.tumor_fraction;
    PlantedFactors f = draw_factors(rng, tumor, cfg);
    SamplePair p = render_sample(f, cfg, mix_seed(seed, "noise", static_cast<uint64_t>(i)));
    p.id = pair_id(i);
    p.split = i < n_train ? "train" : "test";
    m.pairs.push_back(std::move(p));
  }
  return m;
}

void save_dataset(const DatasetManifest& m, const std::string& out_dir, const GeneratorConfig& cfg,
                  uint64_t seed) {
  for (const char* split : {"train", "test"}) {
    for (const char* sub : {"images_w", "images_n", "masks"}) {
      fs::create_directories(fs::path(out_dir) / split / sub);
    }
  }
  json pairs = json::array();
  for (const auto& p : m.pairs) {
    const fs::path base = fs::path(out_dir) / p.split;
    write_png((base / "images_w" / (p.id + ".png")).string(), p.x_w);
    write_png((base / "images_n" / (p.id + ".png")).string(), p.x_n);
    write_png((base / "masks" / (p.id + ".png")).string(), p.mask);
    json rec{{"id", p.id}, {"split", p.split}, {"label", p.label}};
    if (p.factors) {
      rec["factors"] = {{"shared_code", p.factors->shared_code},
                        {"specific_w", p.factors->specific_w},
                        {"specific_n", p.factors->specific_n}};
    }
    pairs.push_back(std::move(rec));
  }
  json manifest{{"format", "adfseg-dataset-v1"},
                {"seed", seed},
                {"generator",
                 {{"image_size", cfg.image_size},
                  {"tumor_fraction", cfg.tumor_fraction},
                  {"lesion_r_min", cfg.lesion_r_min},
                  {"lesion_r_max", cfg.lesion_r_max},
                  {"complementary", cfg.complementary},
                  {"warp_max_shift", cfg.warp_max_shift},
                  {"noise", cfg.noise},
                  {"train_fraction", cfg.train_fraction}}},
                {"pairs", pairs}};
  std::ofstream out(fs::path(out_dir) / "manifest.json");
  if (!out) throw IoError("cannot write manifest under " + out_dir);
  out << manifest.dump(2) << "\n";
}

DatasetManifest load_directory(const std::string& root, int64_t h, int64_t w) {
  if (!fs::is_directory(root)) throw ManifestError("dataset root not found: " + root);
  DatasetManifest m;
  m.root = root;
  for (const char* split : {"train", "test"}) {
    const fs::path base = fs::path(root) / split;
    const fs::path wdir = base / "images_w";
    if (!fs::is_directory(wdir)) continue;  // a split may be absent
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(wdir)) {
      if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
    }
    std::sort(ids.begin(), ids.end());
    for (const auto& id : ids) {
      const fs::path nf = base / "images_n" / (id + ".png");
      const fs::path mf = base / "masks" / (id + ".png");
      if (!fs::exists(nf)) throw ManifestError("missing images_n counterpart for id " + id);
      if (!fs::exists(mf)) throw ManifestError("missing mask for id " + id);
      SamplePair p;
      p.id = id;
      p.split = split;
      p.x_w = resize_bilinear(read_png_gray((wdir / (id + ".png")).string()), h, w);
      p.x_n = resize_bilinear(read_png_gray(nf.string()), h, w);
      Image mask = read_png_gray(mf.string());
      bool binary = true;
      for (double v : mask.pix) {
        if (v != 0.0 && v != 1.0) {
          binary = false;
          break;
        }
      }
      if (!binary) std::fprintf(stderr, "warning: non-binary mask for id %s, binarizing at 0.5\n", id.c_str());
      mask = resize_bilinear(mask, h, w);
      for (double& v : mask.pix) v = v >= 0.5 ? 1.0 : 0.0;
      p.mask = std::move(mask);
      bool any = false;
      for (double v : p.mask.pix) any = any || v > 0;
      p.label = any ? "tumor" : "benign";
      m.pairs.push_back(std::move(p));
    }
  }
  if (m.pairs.empty()) throw ManifestError("no pairs found under " + root);
  return m;
}

std::vector<Batch> make_batches(const std::vector<const SamplePair*>& pairs, int64_t batch_size,
                                uint64_t shuffle_seed, bool train) {
  if (train && batch_size < 2) throw ConfigError("make_batches: training batch_size must be >= 2");
  if (batch_size < 1) throw ConfigError("make_batches: batch_size must be >= 1");
  std::vector<int64_t> order(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) order[i] = static_cast<int64_t>(i);
  if (train) {
    Rng rng(mix_seed(shuffle_seed, "shuffle"));
    order = rng.permutation(static_cast<int64_t>(pairs.size()));
  }
  std::vector<Batch> batches;
  const int64_t n = static_cast<int64_t>(pairs.size());
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t b = std::min(batch_size, n - start);
    if (train && b < batch_size) break;  // drop short tail
    const SamplePair& first = *pairs[static_cast<size_t>(order[static_cast<size_t>(start)])];
    const int64_t hh = first.x_w.h, ww = first.x_w.w;
    Batch batch;
    batch.x_w = nn::Tensor({b, 1, hh, ww});
    batch.x_n = nn::Tensor({b, 1, hh, ww});
    batch.mask = nn::Tensor({b, hh, ww});
    for (int64_t k = 0; k < b; ++k) {
      const SamplePair& p = *pairs[static_cast<size_t>(order[static_cast<size_t>(start + k)])];
      if (p.x_w.h != hh || p.x_w.w != ww) throw ContractError("make_batches: mixed image sizes");
      for (int64_t i = 0; i < hh * ww; ++i) {
        batch.x_w[(k * 1) * hh * ww + i] = p.x_w.pix[static_cast<size_t>(i)];
        batch.x_n[(k * 1) * hh * ww + i] = p.x_n.pix[static_cast<size_t>(i)];
        batch.mask[k * hh * ww + i] = p.mask.pix[static_cast<size_t>(i)];
      }
      batch.ids.push_back(p.id);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace adfseg::data

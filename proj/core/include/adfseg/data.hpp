#pragma once

#include <optional>
#include <string>
#include <vector>

#include "adfseg/image.hpp"
#include "adfseg/rng.hpp"
#include "adfseg/tensor.hpp"

namespace adfseg::data {

/// Knobs of the paired-modality generator. The planted structure: lesion
/// geometry (two lobes) is a function of the shared code alone; modality-w
/// carries an illumination field and sees lobe A, modality-n carries a vessel
/// texture and sees lobe B. Complementary visibility itself lives in the
/// specific codes, so zeroing them renders both lobes fully in both images.
struct GeneratorConfig {
  int64_t image_size = 224;
  double tumor_fraction = 0.8;    // remainder are benign pairs with empty masks
  double lesion_r_min = 0.10;     // per-lobe radius, relative to image size
  double lesion_r_max = 0.22;
  bool complementary = true;      // hide lobe B in w and lobe A in n
  double warp_max_shift = 0.0;    // max |subpixel shift| applied to x_n, in pixels
  double noise = 0.02;            // stddev of additive pixel noise
  double train_fraction = 0.8;
  // admissible mean foreground fraction over tumor masks, used by checks
  double foreground_min = 0.005;
  double foreground_max = 0.40;

  void validate() const;  // throws ConfigError
};

/// Latent record behind one synthetic pair. The mask depends on shared_code
/// only; everything modality-specific (illumination, vessels, visibility
/// suppression, misalignment shift) sits in the specific codes.
struct PlantedFactors {
  std::vector<double> shared_code;  // presence, centers, radii, separation, wobble
  std::vector<double> specific_w;   // illumination + lobe-B suppression
  std::vector<double> specific_n;   // vessel texture + lobe-A suppression + shift
};

struct SamplePair {
  Image x_w, x_n;  // single-channel, values in [0,1]
  Image mask;      // single-channel, values in {0,1}
  std::string id;
  std::string label;  // "tumor" | "benign"
  std::string split;  // "train" | "test"
  std::optional<PlantedFactors> factors;
};

struct DatasetManifest {
  std::string root;  // empty while in-memory
  std::vector<SamplePair> pairs;

  std::vector<const SamplePair*> split_view(const std::string& split) const;
};

/// Draws the latent record for one pair; tumor toggles shared_code presence.
PlantedFactors draw_factors(Rng& rng, bool tumor, const GeneratorConfig& cfg);

/// Pure render of one pair from its latents. noise_seed controls the additive
/// pixel noise stream only.
SamplePair render_sample(const PlantedFactors& f, const GeneratorConfig& cfg, uint64_t noise_seed);

/// Binary lesion mask from the shared code alone.
Image render_mask(const std::vector<double>& shared_code, const GeneratorConfig& cfg);

DatasetManifest synthesize_dataset(int64_t n_pairs, uint64_t seed, const GeneratorConfig& cfg);

/// Writes root/{train,test}/{images_w,images_n,masks}/<id>.png plus
/// root/manifest.json (ids, splits, labels, planted factors, generator echo).
void save_dataset(const DatasetManifest& m, const std::string& out_dir,
                  const GeneratorConfig& cfg, uint64_t seed);

/// Reads the directory layout back; images resized to (h, w), masks binarized
/// at 0.5 (a warning is printed if a mask held non-binary values).
DatasetManifest load_directory(const std::string& root, int64_t h, int64_t w);

struct Batch {
  nn::Tensor x_w, x_n;  // (B, 1, H, W)
  nn::Tensor mask;      // (B, H, W), values in {0,1}
  std::vector<std::string> ids;
};

/// Training mode shuffles with the given seed and drops the short tail batch;
/// eval mode keeps input order and the tail. batch_size < 2 is rejected in
/// training mode (pair-level losses need at least two samples).
std::vector<Batch> make_batches(const std::vector<const SamplePair*>& pairs, int64_t batch_size,
                                uint64_t shuffle_seed, bool train);

}  // namespace adfseg::data

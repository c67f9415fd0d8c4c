#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nsae/rng.hpp"
#include "nsae/tensor.hpp"

namespace nsae {

/// One image of the procedural benchmark. Pixels are [3,H,W] in [0,1].
struct LabeledImage {
  Tensor<float> pixels;
  int label = -1;
  int domain_id = -1;
};

/// Parametric generator for one class: a textured colored shape.
struct ClassSpec {
  int shape_kind = 0;        // index into the shape family
  float hue = 0.0f;          // base hue in [0,1)
  float texture_freq = 3.0f; // stripe cycles across the image
  float texture_angle = 0.0f;
  float size = 0.55f;        // shape radius as a fraction of the half-image
};

/// Marginal-statistics shift applied uniformly to a domain.
struct DomainShift {
  float hue_rotation = 0.0f;  // radians, rotation of RGB about the gray axis
  float texture_freq_scale = 1.0f;
  float background_level = 0.35f;
  float background_noise = 0.05f;
  float contrast = 1.0f;
  // Amplitude of class-independent background stripes with per-instance
  // orientation/frequency/phase: clutter a classifier can ignore but a
  // reconstruction has to carry.
  float background_clutter = 0.18f;
};

struct DomainSpec {
  int domain_id = 0;
  int image_size = 32;
  std::vector<ClassSpec> classes;
  DomainShift shift;
};

struct Dataset {
  int domain_id = 0;
  int image_size = 0;
  std::uint64_t seed = 0;
  int class_count = 0;
  std::vector<LabeledImage> images;
  std::vector<std::vector<int>> by_class;  // image indices per label
};

/// One N-way K-shot task. Labels are episode-local; classes[i] is the
/// dataset label mapped to local index i.
struct Episode {
  std::vector<LabeledImage> support;
  std::vector<int> support_labels;
  std::vector<LabeledImage> query;
  std::vector<int> query_labels;
  std::vector<int> classes;
  int n_way = 0, k_shot = 0, q_queries = 0;
};

/// Deterministic procedural generation; pure in (spec, seed, class, index).
Dataset generate_domain(const DomainSpec& spec, int images_per_class,
                        std::uint64_t seed);

/// The default desk-scale benchmark: one source domain and two label-disjoint
/// shifted target domains.
DomainSpec benchmark_source_spec(int image_size);
enum class TargetShift { kMild, kStrong };
DomainSpec benchmark_target_spec(int image_size, TargetShift shift);

Episode sample_episode(const Dataset& ds, int n_way, int k_shot, int q_queries,
                       Rng& rng);

/// Split item indices of an N-class pool into disjoint pseudo-support /
/// pseudo-query halves per class (ceil/floor for odd counts).
std::pair<std::vector<int>, std::vector<int>> pseudo_split(
    const std::vector<int>& labels, int n_classes, Rng& rng);

// ---- augmentation ----

struct AugmentConfig {
  bool crop = true, flip = true, color_jitter = true;
  float prob = 0.5f;           // per-op application probability
  float crop_min_frac = 0.7f;  // smallest crop size as a fraction of H
  float jitter_strength = 0.3f;
};

/// Deterministic primitives; the label is always preserved.
LabeledImage crop_resize(const LabeledImage& img, int crop_size, int off_i, int off_j);
LabeledImage flip_horizontal(const LabeledImage& img);
LabeledImage color_jitter(const LabeledImage& img, const float gains[3], float offset);

LabeledImage augment(const LabeledImage& img, const AugmentConfig& cfg, Rng& rng);

// ---- handcrafted noise ----

enum class NoiseKind { kGaussian, kSaltPepper, kPoisson, kSpeckle };

struct NoiseConfig {
  float gaussian_var = 0.1f;
  float salt_vs_pepper = 0.5f;
  float salt_pepper_amount = 0.05f;  // fraction of pixels flipped
  float speckle_var = 0.05f;
};

NoiseKind noise_kind_from_string(const std::string& s);
std::string to_string(NoiseKind k);

LabeledImage inject_noise(const LabeledImage& img, NoiseKind kind,
                          const NoiseConfig& cfg, Rng& rng);

// ---- persistence ----

/// Directory layout: manifest.json + images.bin (raw float32, row-major).
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// ---- helpers ----

/// Stack images into a [B,3,H,W] batch tensor.
Tensor<float> stack_images(const std::vector<LabeledImage>& images);
Tensor<float> stack_images(const std::vector<LabeledImage>& images,
                           const std::vector<int>& indices);

/// Bilinear channel-wise resize of a [3,H,W] buffer.
std::vector<float> resize_bilinear(const std::vector<float>& src, int channels,
                                   int h, int w, int oh, int ow);

}  // namespace nsae

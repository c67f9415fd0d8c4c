#include "nsae/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "nsae/error.hpp"

namespace nsae {

namespace {

constexpr float kPi = 3.14159265358979323846f;

struct Rgb {
  float r, g, b;
};

Rgb hsv_to_rgb(float h, float s, float v) {
  h = h - std::floor(h);
  const float i = std::floor(h * 6.0f);
  const float f = h * 6.0f - i;
  const float p = v * (1.0f - s);
  const float q = v * (1.0f - f * s);
  const float t = v * (1.0f - (1.0f - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// Signed-distance proxy for the shape family; negative inside.
float shape_distance(int kind, float u, float v) {
  const float r = std::sqrt(u * u + v * v);
  const float au = std::abs(u), av = std::abs(v);
  switch (kind % 8) {
    case 0:  // disk
      return r - 1.0f;
    case 1:  // square
      return std::max(au, av) - 1.0f;
    case 2:  // diamond
      return au + av - 1.0f;
    case 3:  // ring
      return std::max(r - 1.0f, 0.55f - r);
    case 4:  // plus
      return std::min(std::max(au - 0.35f, av - 1.0f),
                      std::max(av - 0.35f, au - 1.0f));
    case 5:  // triangle, pointing up
      return std::max({-v - 0.5f, 0.866f * u + 0.5f * v - 0.5f,
                       -0.866f * u + 0.5f * v - 0.5f});
    case 6: {  // two horizontal bars
      const float b1 = std::max(au - 1.0f, std::abs(v - 0.5f) - 0.22f);
      const float b2 = std::max(au - 1.0f, std::abs(v + 0.5f) - 0.22f);
      return std::min(b1, b2);
    }
    default: {  // hollow square frame
      const float m = std::max(au, av);
      return std::max(m - 1.0f, 0.55f - m);
    }
  }
}

// 3x3 rotation about the gray axis (1,1,1)/sqrt(3) by theta radians.
void gray_axis_rotation(float theta, float m[9]) {
  const float c = std::cos(theta), s = std::sin(theta);
  const float a = 1.0f / std::sqrt(3.0f);
  const float axis[3] = {a, a, a};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      float val = (i == j ? c : 0.0f) + (1.0f - c) * axis[i] * axis[j];
      // cross-product matrix contribution
      const int k = 3 - i - j;
      if (i != j) {
        const float sign = ((j - i + 3) % 3 == 1) ? -1.0f : 1.0f;
        val += s * sign * axis[k];
      }
      m[i * 3 + j] = val;
    }
}

LabeledImage render_image(const DomainSpec& spec, int class_idx,
                          std::uint64_t seed, int instance) {
  const ClassSpec& cs = spec.classes[class_idx];
  const int n = spec.image_size;
  Rng rng(derive_seed(derive_seed(seed ^ (0x51ed2700ULL * (spec.domain_id + 1)),
                                  static_cast<std::uint64_t>(class_idx)),
                      static_cast<std::uint64_t>(instance)));

  // Instance jitter.
  const float cx = 0.3f * (static_cast<float>(rng.uniform()) - 0.5f);
  const float cy = 0.3f * (static_cast<float>(rng.uniform()) - 0.5f);
  const float sz = cs.size * (0.8f + 0.4f * static_cast<float>(rng.uniform()));
  const float rot = 0.6f * (static_cast<float>(rng.uniform()) - 0.5f);
  const float hue = cs.hue + 0.04f * (static_cast<float>(rng.uniform()) - 0.5f);
  const float freq = cs.texture_freq * spec.shift.texture_freq_scale *
                     (0.9f + 0.2f * static_cast<float>(rng.uniform()));
  const float tex_angle = cs.texture_angle + 0.2f * (static_cast<float>(rng.uniform()) - 0.5f);
  const float tex_phase = 2.0f * kPi * static_cast<float>(rng.uniform());
  // Class-independent background clutter (random stripes per instance).
  const float bg_freq = 1.5f + 3.0f * static_cast<float>(rng.uniform());
  const float bg_ang = kPi * static_cast<float>(rng.uniform());
  const float bg_phase = 2.0f * kPi * static_cast<float>(rng.uniform());
  const float bca = std::cos(bg_ang), bsa = std::sin(bg_ang);

  const Rgb fg = hsv_to_rgb(hue, 0.75f, 0.95f);
  const float edge = 3.0f / static_cast<float>(n);
  const float cr = std::cos(rot), sr = std::sin(rot);
  const float ca = std::cos(tex_angle), sa = std::sin(tex_angle);

  std::vector<float> px(static_cast<std::size_t>(3) * n * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const float y = 2.0f * (i + 0.5f) / n - 1.0f;
      const float x = 2.0f * (j + 0.5f) / n - 1.0f;
      // shape-local coordinates
      const float dx = (x - cx) / sz, dy = (y - cy) / sz;
      const float u = cr * dx + sr * dy;
      const float v = -sr * dx + cr * dy;
      const float d = shape_distance(cs.shape_kind, u, v) * sz;
      const float mask = std::clamp(0.5f - d / edge, 0.0f, 1.0f);

      const float tex = 0.5f + 0.5f * std::sin(2.0f * kPi * freq * 0.5f *
                                               (x * ca + y * sa) + tex_phase);
      const float tmod = 0.65f + 0.35f * tex;

      const float bg = spec.shift.background_level +
                       spec.shift.background_clutter *
                           std::sin(2.0f * kPi * bg_freq * 0.5f *
                                        (x * bca + y * bsa) +
                                    bg_phase) +
                       spec.shift.background_noise *
                           2.0f * (static_cast<float>(rng.uniform()) - 0.5f);
      float rgb[3] = {bg * (1.0f - mask) + fg.r * tmod * mask,
                      bg * (1.0f - mask) + fg.g * tmod * mask,
                      bg * (1.0f - mask) + fg.b * tmod * mask};
      const long idx = static_cast<long>(i) * n + j;
      px[idx] = rgb[0];
      px[static_cast<long>(n) * n + idx] = rgb[1];
      px[2l * n * n + idx] = rgb[2];
    }
  }

  // Domain shift: hue rotation then contrast, clamped to [0,1].
  float rotm[9];
  gray_axis_rotation(spec.shift.hue_rotation, rotm);
  const long plane = static_cast<long>(n) * n;
  for (long q = 0; q < plane; ++q) {
    const float r0 = px[q], g0 = px[plane + q], b0 = px[2 * plane + q];
    float out[3];
    for (int c = 0; c < 3; ++c)
      out[c] = rotm[c * 3 + 0] * r0 + rotm[c * 3 + 1] * g0 + rotm[c * 3 + 2] * b0;
    for (int c = 0; c < 3; ++c) {
      float vpx = 0.5f + spec.shift.contrast * (out[c] - 0.5f);
      px[c * plane + q] = std::clamp(vpx, 0.0f, 1.0f);
    }
  }

  LabeledImage img;
  img.pixels = Tensor<float>::from({3, n, n}, std::move(px));
  img.label = class_idx;
  img.domain_id = spec.domain_id;
  return img;
}

}  // namespace

Dataset generate_domain(const DomainSpec& spec, int images_per_class,
                        std::uint64_t seed) {
  if (images_per_class < 1)
    throw ConfigError("generate_domain: images_per_class must be >= 1");
  Dataset ds;
  ds.domain_id = spec.domain_id;
  ds.image_size = spec.image_size;
  ds.seed = seed;
  ds.class_count = static_cast<int>(spec.classes.size());
  ds.by_class.resize(ds.class_count);
  for (int c = 0; c < ds.class_count; ++c) {
    for (int i = 0; i < images_per_class; ++i) {
      ds.by_class[c].push_back(static_cast<int>(ds.images.size()));
      ds.images.push_back(render_image(spec, c, seed, i));
    }
  }
  return ds;
}

DomainSpec benchmark_source_spec(int image_size) {
  DomainSpec spec;
  spec.domain_id = 0;
  spec.image_size = image_size;
  for (int i = 0; i < 8; ++i) {
    ClassSpec cs;
    // Hue is the dominant class signal: classes i and i+4 share a shape and
    // differ only in color, and texture/size carry no label information, so
    // a source classifier is free to rely on color alone.
    cs.shape_kind = i % 4;
    cs.hue = i / 8.0f + 0.04f;
    cs.texture_freq = 3.0f;
    cs.texture_angle = 0.4f * (i % 4);
    cs.size = 0.55f;
    spec.classes.push_back(cs);
  }
  return spec;
}

DomainSpec benchmark_target_spec(int image_size, TargetShift shift) {
  DomainSpec spec;
  spec.image_size = image_size;
  if (shift == TargetShift::kMild) {
    spec.domain_id = 1;
    for (int i = 0; i < 8; ++i) {
      ClassSpec cs;
      cs.shape_kind = (i + 3) % 8;
      cs.hue = i / 8.0f + 0.11f;
      cs.texture_freq = 2.5f + static_cast<float>((i + 1) % 4);
      cs.texture_angle = 0.2f + 0.45f * i;
      cs.size = 0.5f + 0.05f * (i % 3);
      spec.classes.push_back(cs);
    }
    spec.shift = {0.5f, 1.2f, 0.42f, 0.06f, 0.9f, 0.15f};
  } else {
    spec.domain_id = 2;
    for (int i = 0; i < 8; ++i) {
      ClassSpec cs;
      cs.shape_kind = (i + 5) % 8;
      // A narrow hue band: color separates source classes but carries almost
      // no signal here, which is what makes the shift strong.
      cs.hue = 0.58f + 0.015f * i;
      cs.texture_freq = 2.4f + 0.8f * (i % 4);
      cs.texture_angle = 0.3f + 0.5f * i;
      cs.size = 0.56f - 0.04f * (i % 4);
      spec.classes.push_back(cs);
    }
    // The shift is style-only (hue rotation, texture scale, contrast,
    // clutter); pixel noise stays at the source level so that additive-noise
    // augmentation cannot imitate the domain gap.
    spec.shift = {2.1f, 1.7f, 0.55f, 0.05f, 0.75f, 0.22f};
  }
  return spec;
}

Episode sample_episode(const Dataset& ds, int n_way, int k_shot, int q_queries,
                       Rng& rng) {
  if (ds.class_count < n_way)
    throw SamplingError("sample_episode: need " + std::to_string(n_way) +
                        " classes, dataset has " + std::to_string(ds.class_count));
  for (int c = 0; c < ds.class_count; ++c)
    if (static_cast<int>(ds.by_class[c].size()) < k_shot + q_queries)
      throw SamplingError("sample_episode: class " + std::to_string(c) + " has " +
                          std::to_string(ds.by_class[c].size()) + " images, need " +
                          std::to_string(k_shot + q_queries));

  std::vector<int> classes(ds.class_count);
  for (int c = 0; c < ds.class_count; ++c) classes[c] = c;
  rng.shuffle(classes.begin(), classes.end());
  classes.resize(n_way);

  Episode ep;
  ep.n_way = n_way;
  ep.k_shot = k_shot;
  ep.q_queries = q_queries;
  ep.classes = classes;
  for (int local = 0; local < n_way; ++local) {
    auto pool = ds.by_class[classes[local]];
    rng.shuffle(pool.begin(), pool.end());
    for (int k = 0; k < k_shot; ++k) {
      ep.support.push_back(ds.images[pool[k]]);
      ep.support_labels.push_back(local);
    }
    for (int q = 0; q < q_queries; ++q) {
      ep.query.push_back(ds.images[pool[k_shot + q]]);
      ep.query_labels.push_back(local);
    }
  }
  return ep;
}

std::pair<std::vector<int>, std::vector<int>> pseudo_split(
    const std::vector<int>& labels, int n_classes, Rng& rng) {
  std::vector<std::vector<int>> per_class(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes)
      throw SamplingError("pseudo_split: label out of range");
    per_class[labels[i]].push_back(static_cast<int>(i));
  }
  std::vector<int> ps, pq;
  for (int c = 0; c < n_classes; ++c) {
    auto& idx = per_class[c];
    if (idx.size() < 2)
      throw SamplingError("pseudo_split: class " + std::to_string(c) +
                          " has fewer than 2 items");
    rng.shuffle(idx.begin(), idx.end());
    const std::size_t half = (idx.size() + 1) / 2;  // ceil to pseudo-support
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < half ? ps : pq).push_back(idx[i]);
  }
  return {ps, pq};
}

// ---- augmentation ----

std::vector<float> resize_bilinear(const std::vector<float>& src, int channels,
                                   int h, int w, int oh, int ow) {
  std::vector<float> out(static_cast<std::size_t>(channels) * oh * ow);
  const float sy = static_cast<float>(h) / oh;
  const float sx = static_cast<float>(w) / ow;
  for (int c = 0; c < channels; ++c) {
    const float* sp = src.data() + static_cast<long>(c) * h * w;
    float* op = out.data() + static_cast<long>(c) * oh * ow;
    for (int i = 0; i < oh; ++i) {
      const float fy = std::clamp((i + 0.5f) * sy - 0.5f, 0.0f, h - 1.0f);
      const int y0 = static_cast<int>(fy);
      const int y1 = std::min(y0 + 1, h - 1);
      const float wy = fy - y0;
      for (int j = 0; j < ow; ++j) {
        const float fx = std::clamp((j + 0.5f) * sx - 0.5f, 0.0f, w - 1.0f);
        const int x0 = static_cast<int>(fx);
        const int x1 = std::min(x0 + 1, w - 1);
        const float wx = fx - x0;
        const float top = sp[y0 * w + x0] * (1 - wx) + sp[y0 * w + x1] * wx;
        const float bot = sp[y1 * w + x0] * (1 - wx) + sp[y1 * w + x1] * wx;
        op[static_cast<long>(i) * ow + j] = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

LabeledImage crop_resize(const LabeledImage& img, int crop_size, int off_i,
                         int off_j) {
  const auto& sh = img.pixels.shape();
  const int h = sh[1], w = sh[2];
  if (crop_size > h || crop_size > w || off_i < 0 || off_j < 0 ||
      off_i + crop_size > h || off_j + crop_size > w)
    throw DimensionError("crop_resize: window out of bounds");
  std::vector<float> win(static_cast<std::size_t>(3) * crop_size * crop_size);
  const auto& src = img.pixels.values();
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < crop_size; ++i)
      for (int j = 0; j < crop_size; ++j)
        win[(static_cast<long>(c) * crop_size + i) * crop_size + j] =
            src[(static_cast<long>(c) * h + off_i + i) * w + off_j + j];
  LabeledImage out = img;
  out.pixels = Tensor<float>::from({3, h, w},
                                   resize_bilinear(win, 3, crop_size, crop_size, h, w));
  return out;
}

LabeledImage flip_horizontal(const LabeledImage& img) {
  const auto& sh = img.pixels.shape();
  const int h = sh[1], w = sh[2];
  std::vector<float> px(img.pixels.values());
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w / 2; ++j)
        std::swap(px[(static_cast<long>(c) * h + i) * w + j],
                  px[(static_cast<long>(c) * h + i) * w + (w - 1 - j)]);
  LabeledImage out = img;
  out.pixels = Tensor<float>::from({3, h, w}, std::move(px));
  return out;
}

LabeledImage color_jitter(const LabeledImage& img, const float gains[3],
                          float offset) {
  const auto& sh = img.pixels.shape();
  const long plane = static_cast<long>(sh[1]) * sh[2];
  std::vector<float> px(img.pixels.values());
  for (int c = 0; c < 3; ++c)
    for (long q = 0; q < plane; ++q) {
      float& p = px[c * plane + q];
      p = std::clamp(p * gains[c] + offset, 0.0f, 1.0f);
    }
  LabeledImage out = img;
  out.pixels = Tensor<float>::from(sh, std::move(px));
  return out;
}

LabeledImage augment(const LabeledImage& img, const AugmentConfig& cfg, Rng& rng) {
  LabeledImage out = img;
  const int h = img.pixels.shape()[1];
  if (cfg.crop && rng.uniform() < cfg.prob) {
    const int lo = std::max(2, static_cast<int>(std::lround(h * cfg.crop_min_frac)));
    const int size = lo + rng.randint(h - lo + 1);
    const int oi = rng.randint(h - size + 1);
    const int oj = rng.randint(h - size + 1);
    out = crop_resize(out, size, oi, oj);
  }
  if (cfg.flip && rng.uniform() < cfg.prob) out = flip_horizontal(out);
  if (cfg.color_jitter && rng.uniform() < cfg.prob) {
    const float s = cfg.jitter_strength;
    float gains[3];
    for (auto& g : gains) g = 1.0f + s * 2.0f * (static_cast<float>(rng.uniform()) - 0.5f);
    const float offset = s * 0.5f * (static_cast<float>(rng.uniform()) - 0.5f);
    out = color_jitter(out, gains, offset);
  }
  return out;
}

// ---- handcrafted noise ----

NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "gaussian") return NoiseKind::kGaussian;
  if (s == "salt_pepper" || s == "s&p") return NoiseKind::kSaltPepper;
  if (s == "poisson") return NoiseKind::kPoisson;
  if (s == "speckle") return NoiseKind::kSpeckle;
  throw ConfigError("unknown noise kind: " + s);
}

std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::kGaussian: return "gaussian";
    case NoiseKind::kSaltPepper: return "salt_pepper";
    case NoiseKind::kPoisson: return "poisson";
    default: return "speckle";
  }
}

LabeledImage inject_noise(const LabeledImage& img, NoiseKind kind,
                          const NoiseConfig& cfg, Rng& rng) {
  std::vector<float> px(img.pixels.values());
  switch (kind) {
    case NoiseKind::kGaussian: {
      const float sd = std::sqrt(cfg.gaussian_var);
      for (auto& p : px)
        p = std::clamp(p + sd * static_cast<float>(rng.normal()), 0.0f, 1.0f);
      break;
    }
    case NoiseKind::kSaltPepper: {
      for (auto& p : px)
        if (rng.uniform() < cfg.salt_pepper_amount)
          p = rng.uniform() < cfg.salt_vs_pepper ? 1.0f : 0.0f;
      break;
    }
    case NoiseKind::kPoisson: {
      // Per-pixel Poisson resampling at 8-bit intensity scale.
      constexpr float kScale = 255.0f;
      for (auto& p : px)
        p = std::clamp(rng.poisson(p * kScale) / kScale, 0.0f, 1.0f);
      break;
    }
    case NoiseKind::kSpeckle: {
      const float sd = std::sqrt(cfg.speckle_var);
      for (auto& p : px)
        p = std::clamp(p * (1.0f + sd * static_cast<float>(rng.normal())), 0.0f, 1.0f);
      break;
    }
  }
  LabeledImage out = img;
  out.pixels = Tensor<float>::from(img.pixels.shape(), std::move(px));
  return out;
}

// ---- persistence ----

void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  nlohmann::json manifest;
  manifest["domain_id"] = ds.domain_id;
  manifest["image_size"] = ds.image_size;
  manifest["seed"] = ds.seed;
  manifest["class_count"] = ds.class_count;
  manifest["image_shape"] = {3, ds.image_size, ds.image_size};
  nlohmann::json labels = nlohmann::json::array();
  nlohmann::json domains = nlohmann::json::array();
  for (const auto& img : ds.images) {
    labels.push_back(img.label);
    domains.push_back(img.domain_id);
  }
  manifest["labels"] = std::move(labels);
  manifest["domain_ids"] = std::move(domains);

  std::ofstream mf(dir + "/manifest.json");
  if (!mf) throw IoError("cannot write " + dir + "/manifest.json");
  mf << manifest.dump(2) << "\n";

  std::ofstream bf(dir + "/images.bin", std::ios::binary);
  if (!bf) throw IoError("cannot write " + dir + "/images.bin");
  for (const auto& img : ds.images)
    bf.write(reinterpret_cast<const char*>(img.pixels.values().data()),
             static_cast<std::streamsize>(img.pixels.values().size() * sizeof(float)));
  if (!bf) throw IoError("write failed for " + dir + "/images.bin");
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw IoError("cannot read " + dir + "/manifest.json");
  nlohmann::json manifest = nlohmann::json::parse(mf, nullptr, true);

  Dataset ds;
  ds.domain_id = manifest.at("domain_id").get<int>();
  ds.image_size = manifest.at("image_size").get<int>();
  ds.seed = manifest.at("seed").get<std::uint64_t>();
  ds.class_count = manifest.at("class_count").get<int>();
  const auto& labels = manifest.at("labels");
  const auto& domains = manifest.at("domain_ids");

  std::ifstream bf(dir + "/images.bin", std::ios::binary);
  if (!bf) throw IoError("cannot read " + dir + "/images.bin");
  const std::size_t per_image = static_cast<std::size_t>(3) * ds.image_size * ds.image_size;
  ds.by_class.resize(ds.class_count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::vector<float> px(per_image);
    bf.read(reinterpret_cast<char*>(px.data()),
            static_cast<std::streamsize>(per_image * sizeof(float)));
    if (!bf) throw IoError("truncated images.bin in " + dir);
    LabeledImage img;
    img.pixels = Tensor<float>::from({3, ds.image_size, ds.image_size}, std::move(px));
    img.label = labels[i].get<int>();
    img.domain_id = domains[i].get<int>();
    ds.by_class.at(img.label).push_back(static_cast<int>(ds.images.size()));
    ds.images.push_back(std::move(img));
  }
  return ds;
}

// ---- helpers ----

Tensor<float> stack_images(const std::vector<LabeledImage>& images) {
  std::vector<int> idx(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) idx[i] = static_cast<int>(i);
  return stack_images(images, idx);
}

Tensor<float> stack_images(const std::vector<LabeledImage>& images,
                           const std::vector<int>& indices) {
  if (indices.empty()) throw DimensionError("stack_images: empty batch");
  const auto& sh = images[indices[0]].pixels.shape();
  const std::size_t per = images[indices[0]].pixels.values().size();
  std::vector<float> data(per * indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& img = images[indices[i]];
    if (img.pixels.shape() != sh)
      throw DimensionError("stack_images: inconsistent image shapes");
    std::copy(img.pixels.values().begin(), img.pixels.values().end(),
              data.begin() + i * per);
  }
  return Tensor<float>::from({static_cast<int>(indices.size()), sh[0], sh[1], sh[2]},
                             std::move(data));
}

}  // namespace nsae

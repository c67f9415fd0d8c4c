#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "nsae/data.hpp"
#include "nsae/error.hpp"
#include "nsae/rng.hpp"

using namespace nsae;

namespace {

Dataset small_source(int size = 16, int per_class = 8, std::uint64_t seed = 7) {
  return generate_domain(benchmark_source_spec(size), per_class, seed);
}

std::array<double, 3> channel_means(const Dataset& ds) {
  std::array<double, 3> m{0, 0, 0};
  const long plane = static_cast<long>(ds.image_size) * ds.image_size;
  for (const auto& img : ds.images)
    for (int c = 0; c < 3; ++c)
      for (long q = 0; q < plane; ++q) m[c] += img.pixels.values()[c * plane + q];
  for (auto& v : m) v /= static_cast<double>(ds.images.size()) * plane;
  return m;
}

}  // namespace

TEST_CASE("generation is deterministic and bit-identical") {
  auto a = small_source();
  auto b = small_source();
  REQUIRE(a.images.size() == b.images.size());
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    CHECK(a.images[i].label == b.images[i].label);
    CHECK(a.images[i].pixels.values() == b.images[i].pixels.values());
  }
  auto c = generate_domain(benchmark_source_spec(16), 8, 8);
  CHECK(a.images[0].pixels.values() != c.images[0].pixels.values());
}

TEST_CASE("generated images are in range with the expected layout") {
  auto ds = small_source();
  CHECK(ds.class_count == 8);
  CHECK(static_cast<int>(ds.images.size()) == 8 * 8);
  for (const auto& img : ds.images) {
    REQUIRE(img.pixels.shape() == Shape{3, 16, 16});
    for (float v : img.pixels.values()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  for (int c = 0; c < 8; ++c) {
    REQUIRE(static_cast<int>(ds.by_class[c].size()) == 8);
    for (int idx : ds.by_class[c]) CHECK(ds.images[idx].label == c);
  }
}

TEST_CASE("5-way 5-shot 15-query episode has 25 support and 75 query images") {
  auto ds = small_source(16, 20);
  Rng rng(11);
  auto ep = sample_episode(ds, 5, 5, 15, rng);
  CHECK(ep.support.size() == 25);
  CHECK(ep.query.size() == 75);
  CHECK(ep.support_labels.size() == 25);
  CHECK(ep.query_labels.size() == 75);
  REQUIRE(ep.classes.size() == 5);
  std::set<int> uniq(ep.classes.begin(), ep.classes.end());
  CHECK(uniq.size() == 5);
  // Local labels cover [0, n_way) with exactly k_shot / q_queries each.
  for (int local = 0; local < 5; ++local) {
    CHECK(std::count(ep.support_labels.begin(), ep.support_labels.end(), local) == 5);
    CHECK(std::count(ep.query_labels.begin(), ep.query_labels.end(), local) == 15);
  }
}

TEST_CASE("support and query sets are disjoint") {
  auto ds = small_source(16, 20);
  Rng rng(13);
  for (int rep = 0; rep < 20; ++rep) {
    auto ep = sample_episode(ds, 5, 5, 15, rng);
    std::set<const void*> sup;
    for (const auto& img : ep.support) sup.insert(img.pixels.node().get());
    for (const auto& img : ep.query) CHECK(sup.count(img.pixels.node().get()) == 0);
  }
}

TEST_CASE("episode sampling rejects infeasible requests with a clear error") {
  auto ds = small_source(16, 4);
  Rng rng(17);
  CHECK_THROWS_AS(sample_episode(ds, 9, 1, 1, rng), SamplingError);
  CHECK_THROWS_AS(sample_episode(ds, 5, 3, 2, rng), SamplingError);
}

TEST_CASE("every class appears in 5-of-8 episodes at the expected frequency") {
  auto ds = small_source(8, 6);
  Rng rng(19);
  const int episodes = 10000;
  std::array<int, 8> counts{};
  for (int e = 0; e < episodes; ++e) {
    auto ep = sample_episode(ds, 5, 1, 1, rng);
    for (int c : ep.classes) ++counts[c];
  }
  const double p = 5.0 / 8.0;
  const double se = std::sqrt(p * (1 - p) / episodes);
  for (int c = 0; c < 8; ++c)
    CHECK(std::abs(counts[c] / static_cast<double>(episodes) - p) < 3 * se + 1e-12);
}

TEST_CASE("pseudo split halves each class with ceil/floor") {
  Rng rng(23);
  SUBCASE("two per class") {
    std::vector<int> labels{0, 1, 0, 1};
    auto [ps, pq] = pseudo_split(labels, 2, rng);
    CHECK(ps.size() == 2);
    CHECK(pq.size() == 2);
  }
  SUBCASE("five per class gives three plus two") {
    std::vector<int> labels;
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 5; ++k) labels.push_back(c);
    auto [ps, pq] = pseudo_split(labels, 3, rng);
    CHECK(ps.size() == 9);
    CHECK(pq.size() == 6);
    // Partition: disjoint and jointly exhaustive.
    std::set<int> all(ps.begin(), ps.end());
    for (int i : pq) CHECK(all.insert(i).second);
    CHECK(all.size() == labels.size());
    // Per-class counts.
    for (int c = 0; c < 3; ++c) {
      auto in_class = [&](const std::vector<int>& v) {
        return std::count_if(v.begin(), v.end(), [&](int i) { return labels[i] == c; });
      };
      CHECK(in_class(ps) == 3);
      CHECK(in_class(pq) == 2);
    }
  }
  SUBCASE("singleton class is rejected") {
    std::vector<int> labels{0, 0, 1};
    CHECK_THROWS_AS(pseudo_split(labels, 2, rng), SamplingError);
  }
}

TEST_CASE("horizontal flip is an involution") {
  auto ds = small_source();
  for (int i : {0, 9, 33}) {
    auto once = flip_horizontal(ds.images[i]);
    CHECK(once.pixels.values() != ds.images[i].pixels.values());
    auto twice = flip_horizontal(once);
    CHECK(twice.pixels.values() == ds.images[i].pixels.values());
    CHECK(twice.label == ds.images[i].label);
  }
}

TEST_CASE("full-size zero-offset crop is the identity") {
  auto ds = small_source();
  auto out = crop_resize(ds.images[0], 16, 0, 0);
  CHECK(out.pixels.values() == ds.images[0].pixels.values());
  CHECK_THROWS_AS(crop_resize(ds.images[0], 12, 8, 0), DimensionError);
}

TEST_CASE("unit-gain zero-offset jitter is the identity") {
  auto ds = small_source();
  const float gains[3] = {1.0f, 1.0f, 1.0f};
  auto out = color_jitter(ds.images[0], gains, 0.0f);
  CHECK(out.pixels.values() == ds.images[0].pixels.values());
  const float dim[3] = {0.5f, 0.5f, 0.5f};
  auto dimmed = color_jitter(ds.images[0], dim, 0.0f);
  for (std::size_t i = 0; i < dimmed.pixels.values().size(); ++i)
    CHECK(dimmed.pixels.values()[i] ==
          doctest::Approx(0.5f * ds.images[0].pixels.values()[i]));
}

TEST_CASE("augment preserves label and shape and is rng-deterministic") {
  auto ds = small_source();
  AugmentConfig cfg;
  cfg.prob = 1.0f;
  Rng r1(29), r2(29);
  auto a = augment(ds.images[5], cfg, r1);
  auto b = augment(ds.images[5], cfg, r2);
  CHECK(a.pixels.values() == b.pixels.values());
  CHECK(a.label == ds.images[5].label);
  CHECK(a.pixels.shape() == ds.images[5].pixels.shape());
  for (float v : a.pixels.values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("gaussian noise variance matches the configured variance") {
  // Mid-gray image and small variance so [0,1] clipping is negligible.
  const int n = 578;  // 3*578*578 > 1e6 samples
  LabeledImage img;
  img.pixels = Tensor<float>::from({3, n, n},
                                   std::vector<float>(3l * n * n, 0.5f));
  NoiseConfig cfg;
  cfg.gaussian_var = 0.01f;
  Rng rng(31);
  auto noisy = inject_noise(img, NoiseKind::kGaussian, cfg, rng);
  double s = 0, s2 = 0;
  for (float v : noisy.pixels.values()) {
    const double d = v - 0.5;
    s += d;
    s2 += d * d;
  }
  const double cnt = static_cast<double>(noisy.pixels.values().size());
  const double var = s2 / cnt - (s / cnt) * (s / cnt);
  CHECK(std::abs(var - 0.01) < 0.05 * 0.01);
}

TEST_CASE("salt-and-pepper alters the configured fraction with even polarity") {
  const int n = 400;
  LabeledImage img;
  img.pixels = Tensor<float>::from({3, n, n},
                                   std::vector<float>(3l * n * n, 0.5f));
  NoiseConfig cfg;
  Rng rng(37);
  auto noisy = inject_noise(img, NoiseKind::kSaltPepper, cfg, rng);
  long salt = 0, pepper = 0;
  for (float v : noisy.pixels.values()) {
    if (v == 1.0f) ++salt;
    else if (v == 0.0f) ++pepper;
    else CHECK(v == 0.5f);
  }
  const double total = static_cast<double>(img.pixels.values().size());
  const double altered = static_cast<double>(salt + pepper);
  const double se_amt = std::sqrt(0.05 * 0.95 / total);
  CHECK(std::abs(altered / total - 0.05) < 3 * se_amt);
  const double se_salt = std::sqrt(0.25 / altered);
  CHECK(std::abs(salt / altered - 0.5) < 3 * se_salt);
}

TEST_CASE("speckle noise fixes the all-zero image") {
  const int n = 16;
  LabeledImage img;
  img.pixels = Tensor<float>::from({3, n, n}, std::vector<float>(3l * n * n, 0.0f));
  NoiseConfig cfg;
  Rng rng(41);
  auto noisy = inject_noise(img, NoiseKind::kSpeckle, cfg, rng);
  for (float v : noisy.pixels.values()) CHECK(v == 0.0f);
}

TEST_CASE("poisson noise roughly preserves the mean") {
  const int n = 256;
  LabeledImage img;
  img.pixels = Tensor<float>::from({3, n, n}, std::vector<float>(3l * n * n, 0.5f));
  NoiseConfig cfg;
  Rng rng(43);
  auto noisy = inject_noise(img, NoiseKind::kPoisson, cfg, rng);
  double mean = 0;
  for (float v : noisy.pixels.values()) mean += v;
  mean /= static_cast<double>(noisy.pixels.values().size());
  CHECK(std::abs(mean - 0.5) < 0.005);
}

TEST_CASE("noise kind names round-trip") {
  for (auto k : {NoiseKind::kGaussian, NoiseKind::kSaltPepper, NoiseKind::kPoisson,
                 NoiseKind::kSpeckle})
    CHECK(noise_kind_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(noise_kind_from_string("perlin"), ConfigError);
}

TEST_CASE("domain shift moves the marginal pixel statistics") {
  const int per = 6;
  auto src = generate_domain(benchmark_source_spec(16), per, 7);
  auto mild = generate_domain(benchmark_target_spec(16, TargetShift::kMild), per, 7);
  auto strong = generate_domain(benchmark_target_spec(16, TargetShift::kStrong), per, 7);
  auto ms = channel_means(src);
  auto mm = channel_means(mild);
  auto mt = channel_means(strong);
  double d_mild = 0, d_strong = 0;
  for (int c = 0; c < 3; ++c) {
    d_mild += std::abs(mm[c] - ms[c]);
    d_strong += std::abs(mt[c] - ms[c]);
  }
  CHECK(d_strong > d_mild);
  CHECK(d_strong > 0.05);
}

TEST_CASE("save and load round-trip bit-identically") {
  auto ds = small_source(12, 3, 99);
  const std::string dir =
      (std::filesystem::temp_directory_path() / "nsae_ds_roundtrip").string();
  save_dataset(ds, dir);
  auto back = load_dataset(dir);
  CHECK(back.domain_id == ds.domain_id);
  CHECK(back.image_size == ds.image_size);
  CHECK(back.seed == ds.seed);
  CHECK(back.class_count == ds.class_count);
  REQUIRE(back.images.size() == ds.images.size());
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    CHECK(back.images[i].label == ds.images[i].label);
    CHECK(back.images[i].domain_id == ds.images[i].domain_id);
    CHECK(back.images[i].pixels.values() == ds.images[i].pixels.values());
  }
  CHECK(back.by_class == ds.by_class);
  std::filesystem::remove_all(dir);
}

TEST_CASE("stack_images builds a batch in index order") {
  auto ds = small_source(8, 2);
  auto batch = stack_images(ds.images, {3, 0});
  REQUIRE(batch.shape() == Shape{2, 3, 8, 8});
  const std::size_t per = ds.images[0].pixels.values().size();
  for (std::size_t i = 0; i < per; ++i) {
    CHECK(batch.values()[i] == ds.images[3].pixels.values()[i]);
    CHECK(batch.values()[per + i] == ds.images[0].pixels.values()[i]);
  }
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "nsae/model.hpp"
#include "nsae/rng.hpp"
#include "testutil.hpp"

using namespace nsae;

namespace {

Tensor<float> random_batch(int b, int size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(static_cast<std::size_t>(b) * 3 * size * size);
  for (auto& x : v) x = static_cast<float>(rng.uniform());
  return Tensor<float>::from({b, 3, size, size}, std::move(v));
}

}  // namespace

TEST_CASE("84x84 profile encodes to 1600 features and decodes to 3x80x80") {
  Rng rng(1);
  NsaeModel<float> m(Profile::kPaper84, 8, rng);
  CHECK(m.image_size() == 84);
  CHECK(m.feature_dim() == 1600);
  CHECK(m.recon_size() == 80);
  auto x = random_batch(2, 84, 2);
  auto feat = m.encode(x, BnMode::kTrain);
  REQUIRE(feat.shape() == Shape{2, 1600});
  auto recon = m.decode(feat, BnMode::kTrain);
  REQUIRE(recon.shape() == Shape{2, 3, 80, 80});
  for (float v : recon.values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("fast profile encodes 32x32 to 512 features and mirrors back") {
  Rng rng(3);
  NsaeModel<float> m(Profile::kFast32, 8, rng);
  CHECK(m.feature_dim() == 512);
  CHECK(m.recon_size() == 32);
  auto x = random_batch(3, 32, 4);
  auto feat = m.encode(x, BnMode::kTrain);
  REQUIRE(feat.shape() == Shape{3, 512});
  auto recon = m.decode(feat, BnMode::kTrain);
  REQUIRE(recon.shape() == Shape{3, 3, 32, 32});
}

TEST_CASE("constant-zero input yields finite features") {
  Rng rng(5);
  NsaeModel<float> m(Profile::kFast32, 4, rng);
  auto x = Tensor<float>::zeros({2, 3, 32, 32});
  auto feat = m.encode(x, BnMode::kTrain);
  for (float v : feat.values()) CHECK(std::isfinite(v));
}

TEST_CASE("eval-mode forward is deterministic bitwise") {
  Rng rng(7);
  NsaeModel<float> m(Profile::kFast32, 4, rng);
  auto x = random_batch(2, 32, 8);
  auto a = m.forward(x, BnMode::kEval);
  auto b = m.forward(x, BnMode::kEval);
  CHECK(a.feat.values() == b.feat.values());
  CHECK(a.recon.values() == b.recon.values());
  CHECK(a.logits_orig.values() == b.logits_orig.values());
  CHECK(a.feat_recon.values() == b.feat_recon.values());
  CHECK(a.logits_recon.values() == b.logits_recon.values());
}

TEST_CASE("batch size one decodes in eval mode") {
  Rng rng(9);
  NsaeModel<float> m(Profile::kFast32, 4, rng);
  auto x = random_batch(1, 32, 10);
  auto feat = m.encode(x, BnMode::kEval);
  auto recon = m.decode(feat, BnMode::kEval);
  CHECK(recon.shape()[0] == 1);
}

TEST_CASE("classify is an affine map of the features") {
  Rng rng(11);
  NsaeModel<float> m(Profile::kFast32, 5, rng);
  auto x = random_batch(2, 32, 12);
  auto feat = m.encode(x, BnMode::kEval);
  auto logits = m.classify(feat);
  REQUIRE(logits.shape() == Shape{2, 5});

  // Zero head -> zero logits.
  for (auto& p : m.head_params())
    for (auto& v : p.values()) v = 0.0f;
  auto zero_logits = m.classify(feat);
  for (float v : zero_logits.values()) CHECK(v == 0.0f);

  // Against a direct affine oracle on a fresh random head.
  Rng hr(13);
  m.reinit_head(5, hr);
  auto w = m.head_params()[0];  // [F, C]
  auto b = m.head_params()[1];
  auto l2 = m.classify(feat);
  for (int i = 0; i < 2; ++i)
    for (int c = 0; c < 5; ++c) {
      double acc = b.values()[c];
      for (int f = 0; f < m.feature_dim(); ++f)
        acc += static_cast<double>(feat.values()[i * m.feature_dim() + f]) *
               w.values()[f * 5 + c];
      CHECK(l2.values()[i * 5 + c] == doctest::Approx(acc).epsilon(1e-4));
    }
}

TEST_CASE("full forward shares encoder parameters across both passes") {
  Rng rng(15);
  NsaeModel<float> m(Profile::kFast32, 4, rng);
  auto x = random_batch(2, 32, 16);
  for (auto& p : m.parameters()) p.zero_grad();
  auto out = m.forward(x, BnMode::kTrain);
  for (const auto& t : {out.feat, out.recon, out.logits_orig, out.feat_recon,
                        out.logits_recon})
    CHECK(t.shape()[0] == 2);
  // Backprop only through the reconstructed-image logits: the gradient must
  // reach the encoder (shared weights) AND the decoder.
  backward(sum(out.logits_recon));
  auto nonzero = [](const Tensor<float>& p) {
    for (float g : p.grad())
      if (g != 0.0f) return true;
    return false;
  };
  CHECK(nonzero(m.encoder_params()[0]));
  CHECK(nonzero(m.decoder_params()[0]));
}

TEST_CASE("clone is a deep copy") {
  Rng rng(17);
  NsaeModel<float> m(Profile::kFast32, 4, rng);
  auto c = m.clone();
  const float before = c.encoder_params()[0].values()[0];
  m.encoder_params()[0].values()[0] = before + 42.0f;
  CHECK(c.encoder_params()[0].values()[0] == before);
  auto x = random_batch(2, 32, 18);
  // Independent bn stats: training the original leaves the clone untouched.
  m.encode(x, BnMode::kTrain);
  auto a = c.encode(x, BnMode::kEval);
  auto b = c.encode(x, BnMode::kEval);
  CHECK(a.values() == b.values());
}

TEST_CASE("checkpoints round-trip bitwise") {
  Rng rng(19);
  NsaeModel<float> m(Profile::kFast32, 6, rng);
  auto x = random_batch(2, 32, 20);
  m.forward(x, BnMode::kTrain);  // move bn stats off their init values
  const std::string dir =
      (std::filesystem::temp_directory_path() / "nsae_ckpt_roundtrip").string();
  save_checkpoint(m, dir, "cfg-hash-123");
  std::string hash;
  auto back = load_checkpoint(dir, &hash);
  CHECK(hash == "cfg-hash-123");
  CHECK(back.profile() == m.profile());
  CHECK(back.class_count() == 6);
  auto a = m.blobs();
  auto b = back.blobs();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(*a[i].second == *b[i].second);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("fan-in uniform init is bounded and zero-mean-ish") {
  Rng rng(21);
  auto t = fanin_uniform<float>({64, 3, 3, 3}, 27, rng);
  const float bound = 1.0f / std::sqrt(27.0f);
  double mean = 0;
  for (float v : t.values()) {
    CHECK(std::abs(v) <= bound);
    mean += v;
  }
  mean /= static_cast<double>(t.size());
  CHECK(std::abs(mean) < bound / 10);
  CHECK(t.requires_grad());
}

TEST_CASE("reconstruction target resizing") {
  auto x = random_batch(2, 84, 22);
  auto t = recon_target(x, 80);
  REQUIRE(t.shape() == Shape{2, 3, 80, 80});
  auto x32 = random_batch(2, 32, 23);
  auto same = recon_target(x32, 32);
  CHECK(same.values() == x32.values());
}

TEST_CASE("upsample_bilinear matches the plain resize helper") {
  nsae::Rng rng(25);
  auto x = testutil::random_tensor({1, 2, 5, 5}, rng);
  auto up = nsae::upsample_bilinear(x, 8, 8);
  REQUIRE(up.shape() == Shape{1, 2, 8, 8});
  // identity at equal size
  auto same = nsae::upsample_bilinear(x, 5, 5);
  CHECK(same.values() == x.values());
}

TEST_CASE("upsample_bilinear gradients match finite differences") {
  for (int seed = 0; seed < 5; ++seed) {
    nsae::Rng rng(27 + seed);
    auto x = testutil::random_tensor({1, 2, 4, 4}, rng);
    testutil::check_gradients(
        [&] {
          nsae::Rng prj(99);
          auto up = nsae::upsample_bilinear(x, 7, 7);
          std::vector<double> w(up.size());
          for (auto& v : w) v = prj.uniform(-1, 1);
          return nsae::sum(nsae::mul(up, Tensor<double>::from(up.shape(), std::move(w))));
        },
        {x});
  }
}

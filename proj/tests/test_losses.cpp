#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "nsae/eig.hpp"
#include "nsae/losses.hpp"
#include "nsae/rng.hpp"
#include "testutil.hpp"

using namespace nsae;
using testutil::check_gradients;
using testutil::random_tensor;

namespace {

Tensor<double> random_batch_d(int b, int size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(b) * 3 * size * size);
  for (auto& x : v) x = rng.uniform();
  return Tensor<double>::from({b, 3, size, size}, std::move(v));
}

}  // namespace

TEST_CASE("rec_loss worked examples") {
  Rng rng0(1);
  auto x = random_tensor({2, 3, 4, 4}, rng0);
  CHECK(rec_loss(x, x).item() == 0.0);

  const int d = 3 * 4 * 4;
  auto zeros = Tensor<double>::zeros({1, 3, 4, 4});
  auto tenth = Tensor<double>::full({1, 3, 4, 4}, 0.1);
  CHECK(rec_loss(zeros, tenth).item() == doctest::Approx(0.1 * std::sqrt(d)));

  // batch of 2 equals the mean of per-sample losses
  Rng rng(2);
  auto a = random_tensor({1, 3, 4, 4}, rng);
  auto b = random_tensor({1, 3, 4, 4}, rng);
  auto ah = random_tensor({1, 3, 4, 4}, rng);
  auto bh = random_tensor({1, 3, 4, 4}, rng);
  std::vector<double> tv(a.values());
  tv.insert(tv.end(), b.values().begin(), b.values().end());
  std::vector<double> hv(ah.values());
  hv.insert(hv.end(), bh.values().begin(), bh.values().end());
  auto both = rec_loss(Tensor<double>::from({2, 3, 4, 4}, tv),
                       Tensor<double>::from({2, 3, 4, 4}, hv));
  CHECK(both.item() ==
        doctest::Approx(0.5 * (rec_loss(a, ah).item() + rec_loss(b, bh).item()))
            .epsilon(1e-12));

  CHECK_THROWS_AS(rec_loss(zeros, Tensor<double>::zeros({1, 3, 4, 5})),
                  DimensionError);
}

TEST_CASE("ce_loss worked examples and direct-formula oracle") {
  auto uniform = Tensor<double>::zeros({3, 5});
  CHECK(ce_loss(uniform, {0, 2, 4}).item() == doctest::Approx(std::log(5.0)));

  auto confident = Tensor<double>::from({1, 3}, {50.0, 0.0, 0.0});
  CHECK(ce_loss(confident, {0}).item() < 1e-10);

  Rng rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    auto logits = random_tensor({4, 6}, rng, -3, 3);
    std::vector<int> labels{1, 0, 5, 3};
    double oracle = 0;
    for (int i = 0; i < 4; ++i) {
      double z = 0;
      for (int c = 0; c < 6; ++c) z += std::exp(logits.values()[i * 6 + c]);
      oracle += -std::log(std::exp(logits.values()[i * 6 + labels[i]]) / z);
    }
    oracle /= 4.0;
    CHECK(std::abs(ce_loss(logits, labels).item() - oracle) < 1e-10);
  }
}

TEST_CASE("bsr_loss worked examples") {
  Rng rng(5);
  auto logits = random_tensor({2, 3}, rng);
  std::vector<int> labels{0, 2};
  auto feats = random_tensor({2, 8}, rng);
  CHECK(bsr_loss(logits, labels, feats, 0.0).item() ==
        ce_loss(logits, labels).item());

  auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  const double with = bsr_loss(logits, labels, eye, 0.001).item();
  CHECK(with - ce_loss(logits, labels).item() == doctest::Approx(0.002));
}

TEST_CASE("Frobenius-form spectral penalty equals the SVD form") {
  Rng rng(7);
  // float at 1e-6 and double at 1e-10, 100 random batches up to 16x32
  for (int rep = 0; rep < 100; ++rep) {
    const int r = 2 + rng.randint(15);
    const int c = 2 + rng.randint(31);
    auto m = random_tensor({r, c}, rng, -2, 2);
    auto sv = singular_values(m);
    double svd_form = 0;
    for (double s : sv) svd_form += s * s;
    CHECK(std::abs(bsr_penalty(m).item() - svd_form) < 1e-10);

    std::vector<float> mf(m.values().begin(), m.values().end());
    auto tf = Tensor<float>::from(m.shape(), std::move(mf));
    auto svf = singular_values(tf);
    double svd_f = 0;
    for (double s : svf) svd_f += s * s;
    CHECK(std::abs(bsr_penalty(tf).item() - svd_f) < 1e-6 * std::max(1.0, svd_f));
  }
}

TEST_CASE("sae_loss additivity and lambda1=0 reduction") {
  Rng rng(9);
  NsaeModel<double> model(Profile::kFast32, 4, rng);
  auto x = random_batch_d(2, 32, 10);
  std::vector<int> y{1, 3};

  LossConfig cfg;
  cfg.lambda1 = 0.7;
  const double total = sae_loss(x, y, model, cfg, BnMode::kTrain).item();

  auto feat = model.encode(x, BnMode::kTrain);
  auto recon = model.decode(feat, BnMode::kTrain);
  const double cls = pretrain_cls_loss(model.classify(feat), y, feat, cfg).item();
  const double rec = rec_loss(recon_target(x, model.recon_size()), recon).item();
  CHECK(std::abs(total - (cls + 0.7 * rec)) < 1e-12);

  cfg.lambda1 = 0.0;
  CHECK(std::abs(sae_loss(x, y, model, cfg, BnMode::kTrain).item() - cls) < 1e-12);
}

TEST_CASE("loss-reduction lattice across variants") {
  Rng rng(11);
  NsaeModel<double> model(Profile::kFast32, 4, rng);
  auto x = random_batch_d(2, 32, 12);
  std::vector<int> y{0, 2};

  LossConfig cfg;
  cfg.lambda1 = 0.5;
  cfg.lambda2 = 0.0;
  cfg.variant = Variant::kNsae;
  auto nsae0 = nsae_loss(x, y, model, cfg, BnMode::kTrain);
  cfg.variant = Variant::kSae;
  auto sae = nsae_loss(x, y, model, cfg, BnMode::kTrain);
  CHECK(std::abs(nsae0.total.item() - sae.total.item()) < 1e-12);

  cfg.lambda1 = 0.0;
  auto sae_nolat = nsae_loss(x, y, model, cfg, BnMode::kTrain);
  CHECK(std::abs(sae_nolat.total.item() - sae_nolat.cls_orig.item()) < 1e-12);

  cfg.variant = Variant::kBaseline;
  cfg.lambda1 = cfg.lambda2 = 0.0;
  auto base = nsae_loss(x, y, model, cfg, BnMode::kTrain);
  auto feat = model.encode(x, BnMode::kTrain);
  const double plain = ce_loss(model.classify(feat), y).item();
  CHECK(std::abs(base.total.item() - plain) < 1e-12);
  CHECK(base.rec.item() == 0.0);
  CHECK(base.cls_recon.item() == 0.0);

  // SAE* doubles the original classification weight.
  cfg.variant = Variant::kSaeStar;
  cfg.lambda1 = 0.5;
  auto star = nsae_loss(x, y, model, cfg, BnMode::kTrain);
  CHECK(std::abs(star.total.item() -
                 (2.0 * star.cls_orig.item() + 0.5 * star.rec.item())) < 1e-12);

  // With a perfect autoencoder (reconstruction stubbed to the input itself),
  // NSAE with lambda2=1 collapses to SAE*: cls_recon becomes cls_orig.
  const double stubbed_nsae =
      star.cls_orig.item() + 0.5 * star.rec.item() + 1.0 * star.cls_orig.item();
  CHECK(std::abs(star.total.item() - stubbed_nsae) < 1e-12);
}

TEST_CASE("full NSAE loss gradient matches finite differences on sampled weights") {
  Rng rng(13);
  NsaeModel<double> model(Profile::kFast32, 4, rng);
  auto x = random_batch_d(2, 32, 14);
  std::vector<int> y{1, 2};
  LossConfig cfg;

  auto eval_loss = [&] { return nsae_loss(x, y, model, cfg, BnMode::kTrain).total; };

  for (auto& p : model.parameters()) p.zero_grad();
  auto loss = eval_loss();
  backward(loss);

  Rng pick(15);
  auto params = model.parameters();
  int checked = 0;
  for (std::size_t pi = 0; pi < params.size(); pi += 3) {
    auto& p = params[pi];
    for (int rep = 0; rep < 3; ++rep) {
      const int j = pick.randint(static_cast<int>(p.size()));
      const double orig = p.values()[j];
      // Small step: at h=1e-4 relu/maxpool kink crossings inside the deep
      // composite dominate the finite-difference error.
      const double h = 1e-6;
      p.values()[j] = orig + h;
      const double fp = eval_loss().item();
      p.values()[j] = orig - h;
      const double fm = eval_loss().item();
      p.values()[j] = orig;
      const double fd = (fp - fm) / (2 * h);
      const double an = p.grad()[j];
      const double err =
          std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
      CHECK(err < 1e-3);
      ++checked;
    }
  }
  CHECK(checked >= 10);
}

TEST_CASE("prototypes are per-class feature means") {
  auto feats = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto p = prototypes(feats, {0, 1}, 2);
  CHECK(p.values() == std::vector<double>{1, 2, 3, 4, 5, 6});

  auto vv = Tensor<double>::from({2, 2}, {1, 2, -1, -2});
  auto zero = prototypes(vv, {0, 0}, 1);
  CHECK(zero.values() == std::vector<double>{0, 0});

  Rng rng(17);
  auto f = random_tensor({6, 4}, rng);
  std::vector<int> labels{0, 1, 2, 0, 1, 2};
  auto pr = prototypes(f, labels, 3);
  for (int c = 0; c < 3; ++c)
    for (int d = 0; d < 4; ++d) {
      double m = 0;
      int n = 0;
      for (int i = 0; i < 6; ++i)
        if (labels[i] == c) {
          m += f.values()[i * 4 + d];
          ++n;
        }
      CHECK(pr.values()[c * 4 + d] == doctest::Approx(m / n).epsilon(1e-12));
    }
}

TEST_CASE("distance probabilities are a scale-invariant distribution") {
  Rng rng(19);
  for (int rep = 0; rep < 20; ++rep) {
    auto q = random_tensor({4, 6}, rng, 0.1, 1.0);
    auto protos = random_tensor({5, 6}, rng, 0.1, 1.0);
    auto p = distance_probs(q, protos);
    for (int i = 0; i < 4; ++i) {
      double s = 0;
      for (int c = 0; c < 5; ++c) {
        const double v = p.values()[i * 5 + c];
        CHECK(v >= 0.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-10);
    }
    // positive rescaling of a prototype or the query changes nothing
    auto scaled = Tensor<double>::from(protos.shape(), protos.values());
    for (int d = 0; d < 6; ++d) scaled.values()[2 * 6 + d] *= 3.7;
    auto p2 = distance_probs(q, scaled);
    for (std::int64_t i = 0; i < p.size(); ++i)
      CHECK(std::abs(p.values()[i] - p2.values()[i]) < 1e-10);
  }
}

TEST_CASE("distance argmax equals exhaustive nearest-prototype search") {
  Rng rng(21);
  for (int rep = 0; rep < 200; ++rep) {
    auto q = random_tensor({3, 8}, rng, -1, 1);
    auto protos = random_tensor({5, 8}, rng, -1, 1);
    // keep rows away from zero norm
    for (int i = 0; i < 3; ++i) q.values()[i * 8] += 2.0;
    for (int c = 0; c < 5; ++c) protos.values()[c * 8] += 2.0;
    auto p = distance_probs(q, protos);
    for (int i = 0; i < 3; ++i) {
      int am = 0;
      for (int c = 1; c < 5; ++c)
        if (p.values()[i * 5 + c] > p.values()[i * 5 + am]) am = c;
      // exhaustive min cosine distance
      int nn = -1;
      double best = 1e18;
      for (int c = 0; c < 5; ++c) {
        double dot = 0, nq = 0, np = 0;
        for (int d = 0; d < 8; ++d) {
          dot += q.values()[i * 8 + d] * protos.values()[c * 8 + d];
          nq += q.values()[i * 8 + d] * q.values()[i * 8 + d];
          np += protos.values()[c * 8 + d] * protos.values()[c * 8 + d];
        }
        const double dist = 1.0 - dot / std::sqrt(nq * np);
        if (dist < best) {
          best = dist;
          nn = c;
        }
      }
      CHECK(am == nn);
    }
  }
}

TEST_CASE("distance_loss equals cross entropy on -d logits") {
  Rng rng(23);
  auto q = random_tensor({4, 6}, rng, 0.1, 1.0);
  auto protos = random_tensor({5, 6}, rng, 0.1, 1.0);
  std::vector<int> labels{0, 4, 2, 1};
  const double dl = distance_loss(q, labels, protos).item();
  const double ce = ce_loss(distance_logits(q, protos), labels).item();
  CHECK(std::abs(dl - ce) < 1e-12);

  // uniform case: all prototypes identical -> probs 1/N -> loss log N
  auto same = Tensor<double>::full({5, 6}, 0.3);
  CHECK(distance_loss(q, labels, same).item() == doctest::Approx(std::log(5.0)));

  auto zeros = Tensor<double>::zeros({5, 6});
  CHECK_THROWS_AS(distance_loss(q, labels, zeros), DegeneracyError);
}

TEST_CASE("composite loss gradients match finite differences") {
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    auto target = random_tensor({2, 3, 3, 3}, rng);
    auto xhat = random_tensor({2, 3, 3, 3}, rng);
    check_gradients([&] { return rec_loss(target, xhat); }, {xhat});

    auto logits = random_tensor({3, 4}, rng, -2, 2);
    std::vector<int> labels{0, 3, 1};
    check_gradients([&] { return ce_loss(logits, labels); }, {logits});

    auto feats = random_tensor({3, 5}, rng);
    check_gradients(
        [&] { return bsr_loss(logits, labels, feats, 0.01); }, {logits, feats});

    auto q = random_tensor({3, 5}, rng, 0.2, 1.2);
    auto protos = random_tensor({4, 5}, rng, 0.2, 1.2);
    std::vector<int> qlab{2, 0, 3};
    check_gradients([&] { return distance_loss(q, qlab, protos); }, {q, protos});
  }
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "nsae/train.hpp"
#include "testutil.hpp"

using namespace nsae;

namespace {

Dataset tiny_source(int per_class = 4, std::uint64_t seed = 7) {
  return generate_domain(benchmark_source_spec(32), per_class, seed);
}

TrainConfig tiny_cfg() {
  TrainConfig cfg;
  cfg.pretrain.epochs = 2;
  cfg.pretrain.batch_size = 16;
  cfg.finetune_step1.epochs = 2;
  cfg.finetune_step2.epochs = 2;
  cfg.seed = 0;
  return cfg;
}

std::vector<std::vector<float>> snapshot(std::vector<Tensor<float>> params) {
  std::vector<std::vector<float>> out;
  for (auto& p : params) out.push_back(p.values());
  return out;
}

bool all_equal(const std::vector<std::vector<float>>& snap,
               std::vector<Tensor<float>> params) {
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].values() != snap[i]) return false;
  return true;
}

bool none_equal(const std::vector<std::vector<float>>& snap,
                std::vector<Tensor<float>> params) {
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].values() == snap[i]) return false;
  return true;
}

double support_accuracy(NsaeModel<float>& model,
                        const std::vector<LabeledImage>& imgs,
                        const std::vector<int>& labels) {
  auto x = stack_images(imgs);
  auto logits = model.classify(model.encode(x, BnMode::kTransductive));
  const int c = logits.shape()[1];
  int hit = 0;
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    int am = 0;
    for (int j = 1; j < c; ++j)
      if (logits.values()[i * c + j] > logits.values()[i * c + am]) am = j;
    hit += am == labels[i];
  }
  return static_cast<double>(hit) / imgs.size();
}

}  // namespace

TEST_CASE("one epoch on a one-batch dataset changes parameters") {
  auto ds = generate_domain(benchmark_source_spec(32), 1, 3);
  Rng rng(1);
  NsaeModel<float> model(Profile::kFast32, ds.class_count, rng);
  auto before = snapshot(model.parameters());
  TrainConfig cfg = tiny_cfg();
  cfg.pretrain.epochs = 1;
  LossConfig loss_cfg;
  auto hist = pretrain(model, ds, cfg, loss_cfg);
  CHECK(hist.size() == 1);
  bool changed = false;
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i)
    changed = changed || params[i].values() != before[i];
  CHECK(changed);
}

TEST_CASE("loss history decreases from first to final epoch") {
  auto ds = tiny_source();
  Rng rng(2);
  NsaeModel<float> model(Profile::kFast32, ds.class_count, rng);
  TrainConfig cfg = tiny_cfg();
  cfg.pretrain.epochs = 4;
  LossConfig loss_cfg;
  auto hist = pretrain(model, ds, cfg, loss_cfg);
  REQUIRE(hist.size() == 4);
  CHECK(hist.back().total < hist.front().total);
  for (const auto& row : hist) {
    CHECK(std::isfinite(row.total));
    // float32 bookkeeping: allow a few ulps relative to the magnitude
    CHECK(std::abs(row.total - (row.cls_orig + row.rec + row.cls_recon)) <
          1e-5 * std::max(1.0, std::abs(static_cast<double>(row.total))));
  }
}

TEST_CASE("baseline variant leaves decoder parameters bitwise untouched") {
  auto ds = tiny_source(2);
  Rng rng(3);
  NsaeModel<float> model(Profile::kFast32, ds.class_count, rng);
  auto dec_before = snapshot(model.decoder_params());
  TrainConfig cfg = tiny_cfg();
  LossConfig loss_cfg;
  loss_cfg.variant = Variant::kBaseline;
  loss_cfg.lambda1 = loss_cfg.lambda2 = 0.0;
  pretrain(model, ds, cfg, loss_cfg);
  CHECK(all_equal(dec_before, model.decoder_params()));
}

TEST_CASE("identical config and seed reproduce training bitwise") {
  auto ds = tiny_source(2);
  TrainConfig cfg = tiny_cfg();
  LossConfig loss_cfg;
  Rng r1(4), r2(4);
  NsaeModel<float> m1(Profile::kFast32, ds.class_count, r1);
  NsaeModel<float> m2(Profile::kFast32, ds.class_count, r2);
  auto h1 = pretrain(m1, ds, cfg, loss_cfg);
  auto h2 = pretrain(m2, ds, cfg, loss_cfg);
  REQUIRE(h1.size() == h2.size());
  for (std::size_t i = 0; i < h1.size(); ++i) CHECK(h1[i].total == h2[i].total);
  auto p1 = m1.parameters(), p2 = m2.parameters();
  for (std::size_t i = 0; i < p1.size(); ++i)
    CHECK(p1[i].values() == p2[i].values());
}

TEST_CASE("pretrain config validation") {
  auto ds = tiny_source(2);
  Rng rng(5);
  NsaeModel<float> model(Profile::kFast32, 3, rng);  // wrong head size
  CHECK_THROWS_AS(pretrain(model, ds, tiny_cfg(), LossConfig{}), ConfigError);
  TrainConfig bad = tiny_cfg();
  bad.pretrain.lr = -1;
  NsaeModel<float> ok(Profile::kFast32, ds.class_count, rng);
  CHECK_THROWS_AS(pretrain(ok, ds, bad, LossConfig{}), ConfigError);
}

TEST_CASE("divergence guard reports the exploding run") {
  auto ds = tiny_source(2);
  Rng rng(6);
  NsaeModel<float> model(Profile::kFast32, ds.class_count, rng);
  TrainConfig cfg = tiny_cfg();
  cfg.pretrain.lr = 1e9;
  cfg.pretrain.epochs = 10;
  CHECK_THROWS_AS(pretrain(model, ds, cfg, LossConfig{}), NumericalError);
}

TEST_CASE("two-step with zero reconstruction epochs equals one-step bitwise") {
  auto ds = tiny_source(6);
  Rng erng(7);
  auto ep = sample_episode(ds, 3, 2, 1, erng);
  TrainConfig cfg = tiny_cfg();
  cfg.finetune_step1.epochs = 0;
  LossConfig loss_cfg;

  Rng r1(8), r2(8);
  NsaeModel<float> m1(Profile::kFast32, ds.class_count, r1);
  auto m2 = m1.clone();
  Rng f1(9), f2(9);
  finetune_two_step(m1, ep.support, ep.support_labels, ep.n_way, cfg, loss_cfg, f1);
  finetune_one_step(m2, ep.support, ep.support_labels, ep.n_way, cfg, loss_cfg, f2);
  auto p1 = m1.parameters(), p2 = m2.parameters();
  REQUIRE(p1.size() == p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i)
    CHECK(p1[i].values() == p2[i].values());
}

TEST_CASE("reconstruction step reduces support reconstruction loss") {
  auto ds = tiny_source(6);
  Rng erng(10);
  auto ep = sample_episode(ds, 3, 3, 1, erng);
  Rng mr(11);
  NsaeModel<float> model(Profile::kFast32, ds.class_count, mr);

  auto rec_on_support = [&](NsaeModel<float>& m) {
    auto x = stack_images(ep.support);
    auto recon = m.decode(m.encode(x, BnMode::kTransductive), BnMode::kTransductive);
    return rec_loss(recon_target(x, m.recon_size()), recon).item();
  };

  const double before = rec_on_support(model);
  TrainConfig cfg = tiny_cfg();
  cfg.finetune_step1.epochs = 8;
  cfg.finetune_step2.epochs = 1;
  LossConfig loss_cfg;
  Rng fr(12);
  finetune_two_step(model, ep.support, ep.support_labels, ep.n_way, cfg, loss_cfg, fr);
  CHECK(rec_on_support(model) < before);
}

TEST_CASE("CE fine-tuning memorizes a small separable support set") {
  auto ds = tiny_source(4);
  Rng erng(13);
  auto ep = sample_episode(ds, 2, 4, 0, erng);
  Rng mr(14);
  NsaeModel<float> model(Profile::kFast32, ds.class_count, mr);
  TrainConfig cfg = tiny_cfg();
  cfg.finetune_step1.epochs = 0;
  cfg.finetune_step2.epochs = 25;
  cfg.finetune_aug_copies = 0;
  LossConfig loss_cfg;
  Rng fr(15);
  finetune_one_step(model, ep.support, ep.support_labels, ep.n_way, cfg, loss_cfg, fr);
  CHECK(support_accuracy(model, ep.support, ep.support_labels) == 1.0);
}

TEST_CASE("no parameter is frozen in CE step 2") {
  auto ds = tiny_source(4);
  Rng erng(16);
  auto ep = sample_episode(ds, 3, 3, 0, erng);
  Rng mr(17);
  NsaeModel<float> model(Profile::kFast32, ds.class_count, mr);
  auto enc_before = snapshot(model.encoder_params());
  TrainConfig cfg = tiny_cfg();
  cfg.finetune_step1.epochs = 0;
  cfg.finetune_step2.epochs = 3;
  LossConfig loss_cfg;
  Rng fr(18);
  finetune_one_step(model, ep.support, ep.support_labels, ep.n_way, cfg, loss_cfg, fr);
  CHECK(none_equal(enc_before, model.encoder_params()));
  for (auto& p : model.head_params())
    CHECK(p.grad().size() == p.values().size());  // head participated
}

TEST_CASE("distance fine-tuning leaves head and decoder untouched in step 2") {
  auto ds = tiny_source(4);
  Rng erng(19);
  auto ep = sample_episode(ds, 3, 4, 0, erng);
  Rng mr(20);
  NsaeModel<float> model(Profile::kFast32, ds.class_count, mr);
  auto head_before = snapshot(model.head_params());
  auto dec_before = snapshot(model.decoder_params());
  TrainConfig cfg = tiny_cfg();
  cfg.finetune_step1.epochs = 0;
  cfg.finetune_step2.epochs = 3;
  LossConfig loss_cfg;
  loss_cfg.finetune_cls = FinetuneCls::kD;
  Rng fr(21);
  finetune_one_step(model, ep.support, ep.support_labels, ep.n_way, cfg, loss_cfg, fr);
  CHECK(all_equal(head_before, model.head_params()));
  CHECK(all_equal(dec_before, model.decoder_params()));
}

TEST_CASE("step2 batch-size default follows the shot count") {
  CHECK(default_step2_batch(5) == 4);
  CHECK(default_step2_batch(20) == 4);
  CHECK(default_step2_batch(50) == 16);
}

TEST_CASE("loss history CSV has one row per epoch with all terms") {
  std::vector<LossHistoryRow> hist{{0, 3.0, 1.0, 1.5, 0.5}, {1, 2.0, 0.8, 1.0, 0.2}};
  const std::string path = "/tmp/nsae_loss_hist_test.csv";
  write_loss_history(hist, path);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "epoch,total,cls_orig,rec,cls_recon");
  int rows = 0;
  while (std::getline(f, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
  std::remove(path.c_str());
}

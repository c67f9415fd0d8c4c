#include "nsae/train.hpp"

#include <cmath>
#include <fstream>

#include "nsae/error.hpp"
#include "nsae/optim.hpp"

namespace nsae {

int default_step2_batch(int k_shot) { return k_shot >= 50 ? 16 : 4; }

void TrainConfig::validate() const {
  if (pretrain.epochs < 1) throw ConfigError("pretrain.epochs must be >= 1");
  if (pretrain.batch_size < 2) throw ConfigError("pretrain.batch_size must be >= 2");
  if (finetune_step1.epochs < 0)
    throw ConfigError("finetune_step1.epochs must be >= 0");
  if (finetune_step2.epochs < 1)
    throw ConfigError("finetune_step2.epochs must be >= 1");
  if (finetune_step2.batch_size < 2)
    throw ConfigError("finetune_step2.batch_size must be >= 2");
  for (double lr : {pretrain.lr, finetune_step1.lr, finetune_step2.lr})
    if (!(lr > 0)) throw ConfigError("learning rates must be positive");
  if (finetune_aug_copies < 0)
    throw ConfigError("finetune_aug_copies must be >= 0");
}

namespace {

// Abort when the loss is non-finite or explodes past 1000x its first value.
void check_divergence(double loss, double initial, const char* phase, int epoch,
                      int batch) {
  if (std::isfinite(loss) && loss <= 1e3 * initial) return;
  throw NumericalError(std::string(phase) + " diverged at epoch " +
                       std::to_string(epoch) + ", batch " + std::to_string(batch) +
                       ": loss " + std::to_string(loss));
}

Tensor<float> stack_batch(const std::vector<LabeledImage>& pool,
                          const std::vector<int>& idx, std::size_t begin,
                          std::size_t end, std::vector<int>* labels,
                          const std::vector<int>& label_of) {
  std::vector<int> sel(idx.begin() + begin, idx.begin() + end);
  if (labels) {
    labels->clear();
    for (int i : sel) labels->push_back(label_of[i]);
  }
  return stack_images(pool, sel);
}

}  // namespace

std::vector<LossHistoryRow> pretrain(NsaeModel<float>& model,
                                     const Dataset& source,
                                     const TrainConfig& cfg,
                                     const LossConfig& loss_cfg) {
  cfg.validate();
  loss_cfg.validate();
  if (model.class_count() != source.class_count)
    throw ConfigError("pretrain: head has " + std::to_string(model.class_count()) +
                      " classes, source has " + std::to_string(source.class_count));
  if (source.images.size() < 2)
    throw ConfigError("pretrain: source dataset needs at least 2 images");

  Rng rng(derive_seed(cfg.seed, 0x70726574ULL));

  std::vector<Tensor<float>> params = model.encoder_params();
  if (loss_cfg.variant != Variant::kBaseline)
    for (auto& p : model.decoder_params()) params.push_back(p);
  for (auto& p : model.head_params()) params.push_back(p);
  Sgd<float> opt(params, static_cast<float>(cfg.pretrain.lr),
                 static_cast<float>(cfg.pretrain.momentum),
                 static_cast<float>(cfg.pretrain.weight_decay));

  std::vector<int> idx(source.images.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  std::vector<int> label_of(source.images.size());
  for (std::size_t i = 0; i < idx.size(); ++i) label_of[i] = source.images[i].label;

  std::vector<LossHistoryRow> history;
  double initial = -1.0;
  for (int epoch = 0; epoch < cfg.pretrain.epochs; ++epoch) {
    rng.shuffle(idx.begin(), idx.end());
    LossHistoryRow row{epoch, 0, 0, 0, 0};
    int batches = 0;
    for (std::size_t start = 0; start < idx.size();
         start += cfg.pretrain.batch_size) {
      const std::size_t end =
          std::min(idx.size(), start + cfg.pretrain.batch_size);
      if (end - start < 2) continue;  // batch norm needs two samples

      std::vector<int> y;
      Tensor<float> x;
      if (cfg.pretrain.augmentation) {
        std::vector<LabeledImage> imgs;
        y.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) {
          imgs.push_back(augment(source.images[idx[i]], cfg.augment, rng));
          y.push_back(label_of[idx[i]]);
        }
        x = stack_images(imgs);
      } else {
        x = stack_batch(source.images, idx, start, end, &y, label_of);
      }

      opt.zero_grad();
      auto terms = nsae_loss(x, y, model, loss_cfg, BnMode::kTrain);
      const double lv = terms.total.item();
      if (initial < 0 && std::isfinite(lv)) initial = lv;
      check_divergence(lv, initial, "pretrain", epoch, batches);
      backward(terms.total);
      opt.step();

      row.total += lv;
      row.cls_orig += terms.cls_orig.item();
      row.rec += terms.rec.item();
      row.cls_recon += terms.cls_recon.item();
      ++batches;
    }
    if (batches == 0)
      throw ConfigError("pretrain: no usable batches (all smaller than 2)");
    row.total /= batches;
    row.cls_orig /= batches;
    row.rec /= batches;
    row.cls_recon /= batches;
    history.push_back(row);
  }
  return history;
}

void write_loss_history(const std::vector<LossHistoryRow>& history,
                        const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "epoch,total,cls_orig,rec,cls_recon\n";
  f.precision(10);
  for (const auto& row : history)
    f << row.epoch << ',' << row.total << ',' << row.cls_orig << ',' << row.rec
      << ',' << row.cls_recon << '\n';
  if (!f) throw IoError("write failed for " + path);
}

namespace {

// Pool for classification fine-tuning: the support set plus augmented copies
// (augment first, then split/batch — matching the published ordering).
std::vector<LabeledImage> build_pool(const std::vector<LabeledImage>& support,
                                     const std::vector<int>& labels,
                                     const TrainConfig& cfg, Rng& rng,
                                     std::vector<int>* pool_labels) {
  std::vector<LabeledImage> pool = support;
  *pool_labels = labels;
  for (int c = 0; c < cfg.finetune_aug_copies; ++c)
    for (std::size_t i = 0; i < support.size(); ++i) {
      pool.push_back(augment(support[i], cfg.augment, rng));
      pool_labels->push_back(labels[i]);
    }
  return pool;
}

void finetune_step2(NsaeModel<float>& model,
                    const std::vector<LabeledImage>& support,
                    const std::vector<int>& labels, int n_way,
                    const TrainConfig& cfg, const LossConfig& loss_cfg,
                    Rng& rng) {
  std::vector<int> pool_labels;
  auto pool = build_pool(support, labels, cfg, rng, &pool_labels);

  const auto& sc = cfg.finetune_step2;
  double initial = -1.0;
  if (loss_cfg.finetune_cls == FinetuneCls::kCe) {
    model.reinit_head(n_way, rng);
    auto params = model.encoder_params();
    for (auto& p : model.head_params()) params.push_back(p);
    Sgd<float> opt(params, static_cast<float>(sc.lr),
                   static_cast<float>(sc.momentum),
                   static_cast<float>(sc.weight_decay));
    std::vector<int> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    for (int epoch = 0; epoch < sc.epochs; ++epoch) {
      rng.shuffle(idx.begin(), idx.end());
      int batches = 0;
      for (std::size_t start = 0; start < idx.size(); start += sc.batch_size) {
        const std::size_t end = std::min(idx.size(), start + sc.batch_size);
        if (end - start < 2) continue;
        std::vector<int> y;
        auto x = stack_batch(pool, idx, start, end, &y, pool_labels);
        opt.zero_grad();
        auto loss = ce_loss(model.classify(model.encode(x, BnMode::kTrain)), y);
        const double lv = loss.item();
        if (initial < 0 && std::isfinite(lv)) initial = lv;
        check_divergence(lv, initial, "finetune step 2", epoch, batches);
        backward(loss);
        opt.step();
        ++batches;
      }
    }
  } else {
    // Distance-based: per-iteration pseudo-split of the (augmented) support,
    // prototypes from the pseudo-support, Eq. 8 on the pseudo-query.
    Sgd<float> opt(model.encoder_params(), static_cast<float>(sc.lr),
                   static_cast<float>(sc.momentum),
                   static_cast<float>(sc.weight_decay));
    for (int epoch = 0; epoch < sc.epochs; ++epoch) {
      auto [ps, pq] = pseudo_split(pool_labels, n_way, rng);
      std::vector<int> ys, yq;
      for (int i : ps) ys.push_back(pool_labels[i]);
      for (int i : pq) yq.push_back(pool_labels[i]);
      auto xs = stack_images(pool, ps);
      auto xq = stack_images(pool, pq);
      opt.zero_grad();
      auto protos = prototypes(model.encode(xs, BnMode::kTrain), ys, n_way);
      auto loss = distance_loss(model.encode(xq, BnMode::kTrain), yq, protos);
      const double lv = loss.item();
      if (initial < 0 && std::isfinite(lv)) initial = lv;
      check_divergence(lv, initial, "finetune step 2", epoch, 0);
      backward(loss);
      opt.step();
    }
  }
}

}  // namespace

void finetune_two_step(NsaeModel<float>& model,
                       const std::vector<LabeledImage>& support,
                       const std::vector<int>& labels, int n_way,
                       const TrainConfig& cfg, const LossConfig& loss_cfg,
                       Rng& rng) {
  cfg.validate();
  loss_cfg.validate();
  if (support.empty() || support.size() != labels.size())
    throw ConfigError("finetune: support and labels must be non-empty and equal");

  if (cfg.two_step && cfg.finetune_step1.epochs > 0) {
    std::vector<Tensor<float>> params = model.encoder_params();
    for (auto& p : model.decoder_params()) params.push_back(p);
    Sgd<float> opt(params, static_cast<float>(cfg.finetune_step1.lr));
    std::vector<int> idx(support.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    double initial = -1.0;
    for (int epoch = 0; epoch < cfg.finetune_step1.epochs; ++epoch) {
      rng.shuffle(idx.begin(), idx.end());
      int batches = 0;
      for (std::size_t start = 0; start < idx.size();
           start += cfg.finetune_step2.batch_size) {
        const std::size_t end =
            std::min(idx.size(), start + cfg.finetune_step2.batch_size);
        if (end - start < 2) continue;
        auto x = stack_batch(support, idx, start, end, nullptr, labels);
        opt.zero_grad();
        auto recon = model.decode(model.encode(x, BnMode::kTrain), BnMode::kTrain);
        auto loss = rec_loss(recon_target(x, model.recon_size()), recon);
        const double lv = loss.item();
        if (initial < 0 && std::isfinite(lv)) initial = lv;
        check_divergence(lv, initial, "finetune step 1", epoch, batches);
        backward(loss);
        opt.step();
        ++batches;
      }
    }
  }
  finetune_step2(model, support, labels, n_way, cfg, loss_cfg, rng);
}

void finetune_one_step(NsaeModel<float>& model,
                       const std::vector<LabeledImage>& support,
                       const std::vector<int>& labels, int n_way,
                       const TrainConfig& cfg, const LossConfig& loss_cfg,
                       Rng& rng) {
  TrainConfig one = cfg;
  one.two_step = false;
  one.finetune_step1.epochs = 0;
  finetune_two_step(model, support, labels, n_way, one, loss_cfg, rng);
}

}  // namespace nsae

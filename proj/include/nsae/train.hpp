#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nsae/data.hpp"
#include "nsae/losses.hpp"
#include "nsae/model.hpp"

namespace nsae {

struct PretrainConfig {
  int epochs = 400;  // paper-scale default; desk runs override
  int batch_size = 64;
  double lr = 1e-3, momentum = 0.9, weight_decay = 5e-4;
  bool augmentation = true;
};

struct Step1Config {
  int epochs = 30;
  double lr = 1e-3;
};

struct Step2Config {
  int epochs = 200;
  double lr = 1e-2, momentum = 0.9, weight_decay = 1e-3;
  int batch_size = 4;
};

/// 4 for 5- and 20-shot, 16 for 50-shot.
int default_step2_batch(int k_shot);

struct TrainConfig {
  PretrainConfig pretrain;
  Step1Config finetune_step1;
  Step2Config finetune_step2;
  bool two_step = true;
  std::uint64_t seed = 0;
  AugmentConfig augment;
  // Extra augmented copies per support image added to the fine-tuning pool.
  int finetune_aug_copies = 1;

  void validate() const;
};

struct LossHistoryRow {
  int epoch;
  double total, cls_orig, rec, cls_recon;
};

/// SGD over shuffled mini-batches of the source set minimizing the
/// configured variant's loss. Batches of one are skipped (batch-norm needs
/// two samples). Throws NumericalError naming epoch and batch on divergence.
std::vector<LossHistoryRow> pretrain(NsaeModel<float>& model,
                                     const Dataset& source,
                                     const TrainConfig& cfg,
                                     const LossConfig& loss_cfg);

void write_loss_history(const std::vector<LossHistoryRow>& history,
                        const std::string& path);

/// Two-step adaptation on an episode's support set: reconstruction-only
/// training of encoder+decoder, then classification fine-tuning of the
/// encoder (with a fresh head for CE, or pseudo-split distance loss for D).
void finetune_two_step(NsaeModel<float>& model,
                       const std::vector<LabeledImage>& support,
                       const std::vector<int>& labels, int n_way,
                       const TrainConfig& cfg, const LossConfig& loss_cfg,
                       Rng& rng);

/// Classification fine-tuning only; identical to two-step with zero
/// reconstruction epochs.
void finetune_one_step(NsaeModel<float>& model,
                       const std::vector<LabeledImage>& support,
                       const std::vector<int>& labels, int n_way,
                       const TrainConfig& cfg, const LossConfig& loss_cfg,
                       Rng& rng);

}  // namespace nsae

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nsae/train.hpp"

namespace nsae {

struct EvalConfig {
  int n_way = 5, k_shot = 5, q_queries = 15;
  int episodes = 600;
  bool transductive = true;
  // When false the checkpoint is evaluated as-is (no per-episode adaptation);
  // with a CE head this is the chance-level sanity configuration.
  bool finetune = true;
  std::uint64_t seed = 0;
  int jobs = 1;
};

struct EvalReport {
  std::vector<double> accuracies;
  double mean = 0.0, ci95 = 0.0;
  int episodes = 0;
  // config echo
  int n_way = 0, k_shot = 0, q_queries = 0;
  std::uint64_t seed = 0;
  bool transductive = true, two_step = true, finetuned = true;
  std::string variant, combo, profile;
};

/// Predicted episode-local labels for the query set. CE fine-tuning reads the
/// head's logits; D builds prototypes from the FULL support set and assigns
/// by minimum cosine distance. Transductive mode normalizes with the query
/// batch's own statistics.
std::vector<int> predict_query(NsaeModel<float>& model, const Episode& ep,
                               const LossConfig& loss_cfg, bool transductive);

/// The episodic protocol: per episode, clone the checkpoint, fine-tune on the
/// support set per config, and score the query set. Episode e draws from
/// seed derive_seed(cfg.seed, e), so results are independent of episode
/// order and of the number of worker threads.
EvalReport evaluate_protocol(const NsaeModel<float>& checkpoint,
                             const Dataset& target, const EvalConfig& cfg,
                             const TrainConfig& tcfg, const LossConfig& lcfg);

/// Sample mean and half-width 1.96*std/sqrt(E) (sample std, E-1 denominator;
/// 0 by convention for a single episode).
std::pair<double, double> mean_ci95(const std::vector<double>& values);

void write_report_json(const EvalReport& report, const std::string& path);
/// One CSV row; writes a header first when the file does not exist yet.
void append_report_csv(const EvalReport& report, const std::string& path);

}  // namespace nsae

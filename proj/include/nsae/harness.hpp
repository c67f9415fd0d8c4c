#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nsae/eval.hpp"

namespace nsae {

/// Appendix-C rows. NSAE(-) pre-trains like NSAE but fine-tunes in one step;
/// every other variant maps directly onto a pre-training loss.
enum class AblationVariant { kBaseline, kSae, kSaeStar, kNsaeMinus, kNsae };

AblationVariant ablation_variant_from_string(const std::string& s);
std::string to_string(AblationVariant v);
/// The pre-training loss variant behind an ablation row (NSAE(-) -> NSAE).
Variant pretrain_variant(AblationVariant v);
/// Two-step fine-tuning is the full method's privilege; all other rows
/// adapt in one step.
bool uses_two_step(AblationVariant v);

/// A §3.5 loss combination "<pretrain>+<finetune>", e.g. "BSR+D".
struct Combo {
  PretrainCls pretrain = PretrainCls::kCe;
  FinetuneCls finetune = FinetuneCls::kCe;
};

Combo combo_from_string(const std::string& s);
std::string to_string(const Combo& c);

/// Shared settings for the ablation and noise-study harnesses.
struct HarnessConfig {
  Profile profile = Profile::kFast32;
  TrainConfig train;  // pretrain epochs/lr and fine-tuning schedule
  LossConfig loss;    // lambda weights; cls fields are overridden per combo
  EvalConfig eval;    // N, K, Q, E, transductive, jobs
  std::uint64_t seed = 0;
  // When non-empty, pre-trained checkpoints are cached here keyed by a hash
  // of (profile, variant, combo, training config, seed) and reused.
  std::string cache_dir;
};

struct AblationCell {
  std::string variant, combo;
  EvalReport report;
};

struct AblationTable {
  std::vector<AblationCell> cells;
  std::uint64_t seed = 0;
};

/// Pre-train one model from scratch for the given loss variant, drawing its
/// seed from cfg.seed and the (variant, cls) pair. Serves the cache when
/// cfg.cache_dir is set.
NsaeModel<float> pretrain_checkpoint(Variant variant, PretrainCls cls,
                                     const Dataset& source,
                                     const HarnessConfig& cfg);

/// For each (variant, combo): pre-train once, then run the episodic protocol
/// on the target. NSAE and NSAE(-) share one pre-trained checkpoint and
/// differ only in the fine-tuning schedule.
AblationTable run_ablation(const std::vector<AblationVariant>& variants,
                           const std::vector<Combo>& combos,
                           const Dataset& source, const Dataset& target,
                           const HarnessConfig& cfg);

void write_ablation_csv(const AblationTable& table, const std::string& path);

// ---- handcrafted-noise study ----

/// The source set plus one noise-injected copy of every image (labels kept).
Dataset with_noisy_copies(const Dataset& source, NoiseKind kind,
                          const NoiseConfig& noise, std::uint64_t seed);

struct NoiseStudyRow {
  std::string label;  // "gaussian (a)", "speckle (b)", ..., "NSAE"
  EvalReport report;
};

/// The Appendix-D comparison: for each of the four noise kinds, setting (a)
/// trains only the encoder on source + noisy images, setting (b) adds the
/// decoder with the reconstruction loss; the final row is NSAE on the clean
/// source. 9 rows total, each pre-trained and evaluated end to end.
std::vector<NoiseStudyRow> run_noise_study(const Dataset& source,
                                           const Dataset& target,
                                           const NoiseConfig& noise,
                                           const HarnessConfig& cfg);

void write_noise_study_csv(const std::vector<NoiseStudyRow>& rows,
                           const std::string& path);

/// FNV-1a content hash used to key cached artifacts.
std::uint64_t fnv1a(const std::string& s);

}  // namespace nsae

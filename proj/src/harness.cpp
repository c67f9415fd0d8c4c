#include "nsae/harness.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "nsae/error.hpp"

namespace nsae {

AblationVariant ablation_variant_from_string(const std::string& s) {
  if (s == "baseline") return AblationVariant::kBaseline;
  if (s == "SAE") return AblationVariant::kSae;
  if (s == "SAE*") return AblationVariant::kSaeStar;
  if (s == "NSAE-" || s == "NSAE(-)") return AblationVariant::kNsaeMinus;
  if (s == "NSAE") return AblationVariant::kNsae;
  throw ConfigError("unknown ablation variant: " + s);
}

std::string to_string(AblationVariant v) {
  switch (v) {
    case AblationVariant::kBaseline: return "baseline";
    case AblationVariant::kSae: return "SAE";
    case AblationVariant::kSaeStar: return "SAE*";
    case AblationVariant::kNsaeMinus: return "NSAE(-)";
    case AblationVariant::kNsae: return "NSAE";
  }
  throw ConfigError("bad ablation variant value");
}

Variant pretrain_variant(AblationVariant v) {
  switch (v) {
    case AblationVariant::kBaseline: return Variant::kBaseline;
    case AblationVariant::kSae: return Variant::kSae;
    case AblationVariant::kSaeStar: return Variant::kSaeStar;
    case AblationVariant::kNsaeMinus:
    case AblationVariant::kNsae: return Variant::kNsae;
  }
  throw ConfigError("bad ablation variant value");
}

bool uses_two_step(AblationVariant v) { return v == AblationVariant::kNsae; }

Combo combo_from_string(const std::string& s) {
  const auto plus = s.find('+');
  if (plus == std::string::npos)
    throw ConfigError("loss combo must look like CE+CE, got: " + s);
  Combo c;
  c.pretrain = pretrain_cls_from_string(s.substr(0, plus));
  c.finetune = finetune_cls_from_string(s.substr(plus + 1));
  return c;
}

std::string to_string(const Combo& c) {
  return to_string(c.pretrain) + "+" + to_string(c.finetune);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

// Everything that changes the pre-trained parameters must enter this key.
std::string pretrain_key(Variant variant, PretrainCls cls, const Dataset& source,
                         const HarnessConfig& cfg) {
  std::ostringstream os;
  const auto& p = cfg.train.pretrain;
  os << to_string(cfg.profile) << '|' << to_string(variant) << '|'
     << to_string(cls) << '|' << source.seed << '|' << source.class_count << '|'
     << source.images.size() << '|' << source.image_size << '|' << p.epochs
     << '|' << p.batch_size << '|' << p.lr << '|' << p.momentum << '|'
     << p.weight_decay << '|' << p.augmentation << '|' << cfg.loss.lambda1
     << '|' << cfg.loss.lambda2 << '|' << cfg.loss.lambda_bsr << '|'
     << cfg.seed;
  return os.str();
}

std::uint64_t pretrain_seed(Variant variant, PretrainCls cls,
                            const HarnessConfig& cfg) {
  // Documented stream layout: seed -> (1, variant) -> cls.
  return derive_seed(derive_seed(derive_seed(cfg.seed, 1),
                                 static_cast<std::uint64_t>(variant)),
                     static_cast<std::uint64_t>(cls));
}

std::uint64_t eval_seed(AblationVariant variant, const Combo& combo,
                        const HarnessConfig& cfg) {
  // Documented stream layout: seed -> (2, variant) -> (pretrain, finetune).
  return derive_seed(
      derive_seed(derive_seed(cfg.seed, 2), static_cast<std::uint64_t>(variant)),
      4 * static_cast<std::uint64_t>(combo.pretrain) +
          static_cast<std::uint64_t>(combo.finetune));
}

}  // namespace

NsaeModel<float> pretrain_checkpoint(Variant variant, PretrainCls cls,
                                     const Dataset& source,
                                     const HarnessConfig& cfg) {
  std::string dir;
  const std::string key = pretrain_key(variant, cls, source, cfg);
  const std::string hash = std::to_string(fnv1a(key));
  if (!cfg.cache_dir.empty()) {
    dir = cfg.cache_dir + "/ckpt_" + hash;
    if (std::filesystem::exists(dir + "/model.json")) {
      std::string stored;
      auto model = load_checkpoint(dir, &stored);
      if (stored == hash) return model;
    }
  }

  Rng init(derive_seed(pretrain_seed(variant, cls, cfg), 0));
  NsaeModel<float> model(cfg.profile, source.class_count, init);
  TrainConfig tcfg = cfg.train;
  tcfg.seed = derive_seed(pretrain_seed(variant, cls, cfg), 1);
  LossConfig lcfg = cfg.loss;
  lcfg.variant = variant;
  lcfg.pretrain_cls = cls;
  pretrain(model, source, tcfg, lcfg);

  if (!dir.empty()) {
    std::filesystem::create_directories(dir);
    save_checkpoint(model, dir, hash);
  }
  return model;
}

AblationTable run_ablation(const std::vector<AblationVariant>& variants,
                           const std::vector<Combo>& combos,
                           const Dataset& source, const Dataset& target,
                           const HarnessConfig& cfg) {
  AblationTable table;
  table.seed = cfg.seed;
  // NSAE and NSAE(-) (and any repeated combo pretrains) share checkpoints.
  std::map<std::pair<Variant, PretrainCls>, NsaeModel<float>> cache;

  for (AblationVariant av : variants)
    for (const Combo& combo : combos) {
      const Variant pv = pretrain_variant(av);
      auto it = cache.find({pv, combo.pretrain});
      if (it == cache.end())
        it = cache.emplace(std::pair{pv, combo.pretrain},
                           pretrain_checkpoint(pv, combo.pretrain, source, cfg))
                 .first;

      TrainConfig tcfg = cfg.train;
      tcfg.two_step = uses_two_step(av);
      LossConfig lcfg = cfg.loss;
      lcfg.variant = pv;
      lcfg.pretrain_cls = combo.pretrain;
      lcfg.finetune_cls = combo.finetune;
      EvalConfig ecfg = cfg.eval;
      ecfg.seed = eval_seed(av, combo, cfg);

      AblationCell cell;
      cell.variant = to_string(av);
      cell.combo = to_string(combo);
      cell.report = evaluate_protocol(it->second, target, ecfg, tcfg, lcfg);
      cell.report.variant = cell.variant;
      cell.report.combo = cell.combo;
      cell.report.profile = to_string(cfg.profile);
      table.cells.push_back(std::move(cell));
    }
  return table;
}

void write_ablation_csv(const AblationTable& table, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "variant,combo,mean,ci95,episodes,n_way,k_shot,seed\n";
  f.precision(10);
  for (const auto& cell : table.cells)
    f << cell.variant << ',' << cell.combo << ',' << cell.report.mean << ','
      << cell.report.ci95 << ',' << cell.report.episodes << ','
      << cell.report.n_way << ',' << cell.report.k_shot << ','
      << cell.report.seed << '\n';
  if (!f) throw IoError("write failed for " + path);
}

Dataset with_noisy_copies(const Dataset& source, NoiseKind kind,
                          const NoiseConfig& noise, std::uint64_t seed) {
  Dataset out = source;
  out.seed = derive_seed(source.seed, seed);
  for (std::size_t i = 0; i < source.images.size(); ++i) {
    Rng rng(derive_seed(out.seed, i));
    LabeledImage noisy = inject_noise(source.images[i], kind, noise, rng);
    out.by_class[noisy.label].push_back(static_cast<int>(out.images.size()));
    out.images.push_back(std::move(noisy));
  }
  return out;
}

std::vector<NoiseStudyRow> run_noise_study(const Dataset& source,
                                           const Dataset& target,
                                           const NoiseConfig& noise,
                                           const HarnessConfig& cfg) {
  static constexpr NoiseKind kKinds[] = {NoiseKind::kGaussian,
                                         NoiseKind::kSaltPepper,
                                         NoiseKind::kPoisson, NoiseKind::kSpeckle};
  std::vector<NoiseStudyRow> rows;

  auto run_row = [&](const std::string& label, Variant variant,
                     const Dataset& train_set, bool two_step,
                     std::uint64_t row_stream) {
    HarnessConfig row_cfg = cfg;
    row_cfg.seed = derive_seed(cfg.seed, row_stream);
    auto model =
        pretrain_checkpoint(variant, cfg.loss.pretrain_cls, train_set, row_cfg);
    TrainConfig tcfg = cfg.train;
    tcfg.two_step = two_step;
    LossConfig lcfg = cfg.loss;
    lcfg.variant = variant;
    EvalConfig ecfg = cfg.eval;
    ecfg.seed = derive_seed(row_cfg.seed, 3);
    NoiseStudyRow row;
    row.label = label;
    row.report = evaluate_protocol(model, target, ecfg, tcfg, lcfg);
    row.report.variant = label;
    row.report.combo = to_string(Combo{cfg.loss.pretrain_cls, cfg.loss.finetune_cls});
    row.report.profile = to_string(cfg.profile);
    rows.push_back(std::move(row));
  };

  std::uint64_t stream = 0;
  for (NoiseKind kind : kKinds) {
    auto doubled = with_noisy_copies(source, kind, noise, derive_seed(cfg.seed, 7));
    // (a) encoder only on source + noisy images; no decoder, one-step.
    run_row(to_string(kind) + " (a)", Variant::kBaseline, doubled, false, stream++);
    // (b) the same images with a decoder and the reconstruction loss; the
    // decoder enables step-1 reconstruction at fine-tuning time.
    run_row(to_string(kind) + " (b)", Variant::kSae, doubled, true, stream++);
  }
  run_row("NSAE", Variant::kNsae, source, true, stream++);
  return rows;
}

void write_noise_study_csv(const std::vector<NoiseStudyRow>& rows,
                           const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "row,combo,mean,ci95,episodes,n_way,k_shot\n";
  f.precision(10);
  for (const auto& row : rows)
    f << row.label << ',' << row.report.combo << ',' << row.report.mean << ','
      << row.report.ci95 << ',' << row.report.episodes << ','
      << row.report.n_way << ',' << row.report.k_shot << '\n';
  if (!f) throw IoError("write failed for " + path);
}

}  // namespace nsae

// Command-line entry point: dataset generation, pre-training,
// fine-tune+evaluate, ablation, ICC comparison, and the noise study.
// All artifacts land under --out; exit codes: 0 success, 2 config error,
// 3 numerical divergence, 4 I/O error.
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "nsae/analysis.hpp"
#include "nsae/config.hpp"
#include "nsae/error.hpp"

using namespace nsae;

namespace {

struct Cli {
  std::string config_path, out_override, profile_override;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int jobs = 0;
  // subcommand-specific
  std::string checkpoint, checkpoint_a, checkpoint_b;
};

RunConfig resolve_config(const Cli& cli) {
  RunConfig cfg;
  if (!cli.config_path.empty()) cfg = load_run_config(cli.config_path);
  if (cli.seed_set) cfg.seed = cli.seed;
  if (cli.jobs > 0) cfg.jobs = cli.jobs;
  if (!cli.profile_override.empty()) {
    cfg.profile = cli.profile_override;
    // the default benchmark size follows the profile unless the config set it
    if (cli.config_path.empty())
      cfg.data.image_size = cfg.profile == "paper84" ? 84 : 32;
  }
  if (!cli.out_override.empty()) cfg.out = cli.out_override;
  cfg.validate();
  return cfg;
}

Extractor encoder_of(NsaeModel<float>& model) {
  return [&model](const Tensor<float>& x) { return model.encode(x, BnMode::kEval); };
}

int cmd_generate(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out);
  write_config_echo(cfg, cfg.out);
  save_dataset(make_source(cfg), cfg.out + "/source");
  save_dataset(make_target(cfg, TargetShift::kMild), cfg.out + "/target_mild");
  save_dataset(make_target(cfg, TargetShift::kStrong), cfg.out + "/target_strong");
  std::cout << "wrote source + 2 target datasets under " << cfg.out << "\n";
  return 0;
}

int cmd_pretrain(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out);
  write_config_echo(cfg, cfg.out);
  auto source = make_source(cfg);
  Rng init(derive_seed(cfg.seed, 0));
  NsaeModel<float> model(profile_from_string(cfg.profile), source.class_count,
                         init);
  TrainConfig tcfg = cfg.train;
  tcfg.seed = derive_seed(cfg.seed, 1);
  auto history = pretrain(model, source, tcfg, cfg.loss);
  write_loss_history(history, cfg.out + "/loss_history.csv");
  const std::string dir = cfg.out + "/checkpoint_" + to_string(cfg.loss.variant);
  std::filesystem::create_directories(dir);
  save_checkpoint(model, dir, config_hash(cfg));
  std::cout << "checkpoint: " << dir << "\n";
  return 0;
}

int cmd_finetune_eval(const RunConfig& cfg, const std::string& checkpoint) {
  std::filesystem::create_directories(cfg.out);
  write_config_echo(cfg, cfg.out);
  auto target = make_target(cfg, cfg.target == "mild" ? TargetShift::kMild
                                                      : TargetShift::kStrong);
  for (int k : cfg.protocol.k_shots) {
    auto h = harness_config(cfg, k);
    h.cache_dir = cfg.out + "/cache";
    std::filesystem::create_directories(h.cache_dir);
    NsaeModel<float> model = [&] {
      if (!checkpoint.empty()) return load_checkpoint(checkpoint);
      auto source = make_source(cfg);
      return pretrain_checkpoint(cfg.loss.variant, cfg.loss.pretrain_cls,
                                 source, h);
    }();
    EvalConfig ecfg = h.eval;
    ecfg.seed = derive_seed(cfg.seed, 2 + k);
    auto report = evaluate_protocol(model, target, ecfg, h.train, h.loss);
    report.variant = to_string(cfg.loss.variant);
    report.combo = to_string(cfg.loss.pretrain_cls) + "+" +
                   to_string(cfg.loss.finetune_cls);
    report.profile = cfg.profile;
    const std::string stem = cfg.out + "/eval_k" + std::to_string(k);
    write_report_json(report, stem + ".json");
    append_report_csv(report, cfg.out + "/eval.csv");
    std::cout << "K=" << k << ": mean " << report.mean << " +/- " << report.ci95
              << "  (" << stem << ".json)\n";
  }
  return 0;
}

int cmd_ablate(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out);
  write_config_echo(cfg, cfg.out);
  auto source = make_source(cfg);
  std::vector<AblationVariant> variants;
  for (const auto& v : cfg.variants)
    variants.push_back(ablation_variant_from_string(v));
  std::vector<Combo> combos;
  for (const auto& c : cfg.combos) combos.push_back(combo_from_string(c));

  auto h = harness_config(cfg, cfg.protocol.k_shots.front());
  h.cache_dir = cfg.out + "/cache";
  std::filesystem::create_directories(h.cache_dir);
  for (auto shift : {TargetShift::kMild, TargetShift::kStrong}) {
    const std::string name = shift == TargetShift::kMild ? "mild" : "strong";
    auto table =
        run_ablation(variants, combos, source, make_target(cfg, shift), h);
    write_ablation_csv(table, cfg.out + "/ablation_" + name + ".csv");
    std::cout << "wrote " << cfg.out << "/ablation_" << name << ".csv\n";
  }
  return 0;
}

int cmd_icc(const RunConfig& cfg, const std::string& ckpt_a,
            const std::string& ckpt_b) {
  std::filesystem::create_directories(cfg.out);
  write_config_echo(cfg, cfg.out);
  auto source = make_source(cfg);
  auto target = make_target(cfg, cfg.target == "mild" ? TargetShift::kMild
                                                      : TargetShift::kStrong);
  auto h = harness_config(cfg, cfg.protocol.k_shots.front());
  h.cache_dir = cfg.out + "/cache";
  std::filesystem::create_directories(h.cache_dir);

  // Default pairing: traditional (baseline pre-training) vs the full method.
  NsaeModel<float> a = ckpt_a.empty()
                           ? pretrain_checkpoint(Variant::kBaseline,
                                                 cfg.loss.pretrain_cls, source, h)
                           : load_checkpoint(ckpt_a);
  NsaeModel<float> b = ckpt_b.empty()
                           ? pretrain_checkpoint(Variant::kNsae,
                                                 cfg.loss.pretrain_cls, source, h)
                           : load_checkpoint(ckpt_b);
  if (a.profile() != b.profile())
    throw ConfigError("checkpoints use different model profiles");
  if (a.image_size() != source.image_size)
    throw ConfigError("checkpoint profile does not match the dataset size");

  auto report = compare_extractors(encoder_of(a), encoder_of(b), source, target,
                                   std::min(5, source.class_count),
                                   cfg.protocol.episodes, cfg.seed);
  write_icc_report_json(report, cfg.out + "/icc.json");
  write_icc_report_csv(report, cfg.out + "/icc.csv");
  std::cout << "icc_ratio source " << report.icc_ratio_source << ", target "
            << report.icc_ratio_target << "  (" << cfg.out << "/icc.json)\n";
  return 0;
}

int cmd_noise_study(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out);
  write_config_echo(cfg, cfg.out);
  auto source = make_source(cfg);
  auto target = make_target(cfg, cfg.target == "mild" ? TargetShift::kMild
                                                      : TargetShift::kStrong);
  auto h = harness_config(cfg, cfg.protocol.k_shots.front());
  h.cache_dir = cfg.out + "/cache";
  std::filesystem::create_directories(h.cache_dir);
  auto rows = run_noise_study(source, target, cfg.noise, h);
  write_noise_study_csv(rows, cfg.out + "/noise_study.csv");
  for (const auto& row : rows)
    std::cout << row.label << ": " << row.report.mean << " +/- "
              << row.report.ci95 << "\n";
  std::cout << "wrote " << cfg.out << "/noise_study.csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NSAE cross-domain few-shot laboratory"};
  app.require_subcommand(1);
  Cli cli;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", cli.config_path, "JSON configuration file");
    sub->add_option("--seed", cli.seed, "master seed (overrides config)")
        ->each([&](const std::string&) { cli.seed_set = true; });
    sub->add_option("--jobs", cli.jobs, "worker threads (overrides config)");
    sub->add_option("--profile", cli.profile_override, "model profile")
        ->check(CLI::IsMember({"paper84", "fast32"}));
    sub->add_option("--out", cli.out_override, "output directory");
    return sub;
  };

  auto* generate = add_common(app.add_subcommand("generate", "write datasets"));
  auto* pretrain_cmd =
      add_common(app.add_subcommand("pretrain", "pre-train on the source"));
  auto* fe = add_common(app.add_subcommand(
      "finetune-eval", "episodic fine-tuning + evaluation on the target"));
  fe->add_option("--checkpoint", cli.checkpoint, "pre-trained checkpoint dir");
  auto* ablate =
      add_common(app.add_subcommand("ablate", "variant x combo ablation table"));
  auto* icc_cmd = add_common(
      app.add_subcommand("icc", "compare extractor discriminability"));
  icc_cmd->add_option("--checkpoint-a", cli.checkpoint_a,
                      "traditional checkpoint dir");
  icc_cmd->add_option("--checkpoint-b", cli.checkpoint_b,
                      "proposed checkpoint dir");
  auto* noise =
      add_common(app.add_subcommand("noise-study", "handcrafted-noise table"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg = resolve_config(cli);
    if (generate->parsed()) return cmd_generate(cfg);
    if (pretrain_cmd->parsed()) return cmd_pretrain(cfg);
    if (fe->parsed()) return cmd_finetune_eval(cfg, cli.checkpoint);
    if (ablate->parsed()) return cmd_ablate(cfg);
    if (icc_cmd->parsed()) return cmd_icc(cfg, cli.checkpoint_a, cli.checkpoint_b);
    if (noise->parsed()) return cmd_noise_study(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical divergence: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#include "nsae/config.hpp"

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include <json.hpp>

#include "nsae/error.hpp"

namespace nsae {

using nlohmann::json;

namespace {

// Strict access: every key of `obj` must appear in `allowed`.
void reject_unknown(const json& obj, const std::string& where,
                    std::initializer_list<const char*> allowed) {
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (key == a) known = true;
    if (!known) throw ConfigError("unknown config key " + where + "." + key);
  }
}

template <class T>
void get(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for config key ") + key + ": " +
                      e.what());
  }
}

void parse_data(const json& j, DataConfig& d) {
  reject_unknown(j, "data",
                 {"image_size", "source_images_per_class",
                  "target_images_per_class", "source_seed", "target_seed"});
  get(j, "image_size", d.image_size);
  get(j, "source_images_per_class", d.source_images_per_class);
  get(j, "target_images_per_class", d.target_images_per_class);
  get(j, "source_seed", d.source_seed);
  get(j, "target_seed", d.target_seed);
}

void parse_train(const json& j, TrainConfig& t) {
  reject_unknown(j, "train",
                 {"pretrain", "finetune_step1", "finetune_step2", "two_step",
                  "finetune_aug_copies", "augmentation"});
  if (j.contains("pretrain")) {
    const auto& p = j.at("pretrain");
    reject_unknown(p, "train.pretrain",
                   {"epochs", "batch_size", "lr", "momentum", "weight_decay"});
    get(p, "epochs", t.pretrain.epochs);
    get(p, "batch_size", t.pretrain.batch_size);
    get(p, "lr", t.pretrain.lr);
    get(p, "momentum", t.pretrain.momentum);
    get(p, "weight_decay", t.pretrain.weight_decay);
  }
  if (j.contains("finetune_step1")) {
    const auto& s = j.at("finetune_step1");
    reject_unknown(s, "train.finetune_step1", {"epochs", "lr"});
    get(s, "epochs", t.finetune_step1.epochs);
    get(s, "lr", t.finetune_step1.lr);
  }
  if (j.contains("finetune_step2")) {
    const auto& s = j.at("finetune_step2");
    reject_unknown(s, "train.finetune_step2",
                   {"epochs", "lr", "momentum", "weight_decay", "batch_size"});
    get(s, "epochs", t.finetune_step2.epochs);
    get(s, "lr", t.finetune_step2.lr);
    get(s, "momentum", t.finetune_step2.momentum);
    get(s, "weight_decay", t.finetune_step2.weight_decay);
    get(s, "batch_size", t.finetune_step2.batch_size);
  }
  get(j, "two_step", t.two_step);
  get(j, "finetune_aug_copies", t.finetune_aug_copies);
  get(j, "augmentation", t.pretrain.augmentation);
}

void parse_loss(const json& j, LossConfig& l) {
  reject_unknown(j, "loss",
                 {"lambda1", "lambda2", "lambda_bsr", "pretrain_cls",
                  "finetune_cls", "variant"});
  get(j, "lambda1", l.lambda1);
  get(j, "lambda2", l.lambda2);
  get(j, "lambda_bsr", l.lambda_bsr);
  std::string s;
  if (j.contains("pretrain_cls")) {
    get(j, "pretrain_cls", s);
    l.pretrain_cls = pretrain_cls_from_string(s);
  }
  if (j.contains("finetune_cls")) {
    get(j, "finetune_cls", s);
    l.finetune_cls = finetune_cls_from_string(s);
  }
  if (j.contains("variant")) {
    get(j, "variant", s);
    l.variant = variant_from_string(s);
  }
}

void parse_protocol(const json& j, ProtocolConfig& p) {
  reject_unknown(j, "protocol",
                 {"n_way", "k_shots", "q_queries", "episodes", "transductive"});
  get(j, "n_way", p.n_way);
  get(j, "k_shots", p.k_shots);
  get(j, "q_queries", p.q_queries);
  get(j, "episodes", p.episodes);
  get(j, "transductive", p.transductive);
}

void parse_noise(const json& j, NoiseConfig& n) {
  reject_unknown(j, "noise",
                 {"gaussian_var", "salt_vs_pepper", "salt_pepper_amount",
                  "speckle_var"});
  get(j, "gaussian_var", n.gaussian_var);
  get(j, "salt_vs_pepper", n.salt_vs_pepper);
  get(j, "salt_pepper_amount", n.salt_pepper_amount);
  get(j, "speckle_var", n.speckle_var);
}

}  // namespace

void RunConfig::validate() const {
  const int want = profile_from_string(profile) == Profile::kFast32 ? 32 : 84;
  if (data.image_size != want)
    throw ConfigError("profile " + profile + " expects image_size " +
                      std::to_string(want));
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (target != "mild" && target != "strong")
    throw ConfigError("target must be 'mild' or 'strong', got: " + target);
  if (protocol.n_way < 1 || protocol.q_queries < 1 || protocol.episodes < 1)
    throw ConfigError("protocol values must be positive");
  if (protocol.k_shots.empty()) throw ConfigError("k_shots must be non-empty");
  for (int k : protocol.k_shots)
    if (k < 1) throw ConfigError("k_shots entries must be positive");
  for (const auto& v : variants) ablation_variant_from_string(v);
  for (const auto& c : combos) combo_from_string(c);
  loss.validate();
  train.validate();
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(j, "",
                 {"profile", "seed", "jobs", "out", "data", "train", "loss",
                  "protocol", "noise", "target", "variants", "combos"});
  RunConfig cfg;
  get(j, "profile", cfg.profile);
  get(j, "seed", cfg.seed);
  get(j, "jobs", cfg.jobs);
  get(j, "out", cfg.out);
  if (j.contains("data")) parse_data(j.at("data"), cfg.data);
  if (j.contains("train")) parse_train(j.at("train"), cfg.train);
  if (j.contains("loss")) parse_loss(j.at("loss"), cfg.loss);
  if (j.contains("protocol")) parse_protocol(j.at("protocol"), cfg.protocol);
  if (j.contains("noise")) parse_noise(j.at("noise"), cfg.noise);
  get(j, "target", cfg.target);
  get(j, "variants", cfg.variants);
  get(j, "combos", cfg.combos);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

std::string config_echo_json(const RunConfig& cfg) {
  json j;
  j["profile"] = cfg.profile;
  j["seed"] = cfg.seed;
  j["jobs"] = cfg.jobs;
  j["out"] = cfg.out;
  j["data"] = {{"image_size", cfg.data.image_size},
               {"source_images_per_class", cfg.data.source_images_per_class},
               {"target_images_per_class", cfg.data.target_images_per_class},
               {"source_seed", cfg.data.source_seed},
               {"target_seed", cfg.data.target_seed}};
  j["train"] = {
      {"pretrain",
       {{"epochs", cfg.train.pretrain.epochs},
        {"batch_size", cfg.train.pretrain.batch_size},
        {"lr", cfg.train.pretrain.lr},
        {"momentum", cfg.train.pretrain.momentum},
        {"weight_decay", cfg.train.pretrain.weight_decay}}},
      {"finetune_step1",
       {{"epochs", cfg.train.finetune_step1.epochs},
        {"lr", cfg.train.finetune_step1.lr}}},
      {"finetune_step2",
       {{"epochs", cfg.train.finetune_step2.epochs},
        {"lr", cfg.train.finetune_step2.lr},
        {"momentum", cfg.train.finetune_step2.momentum},
        {"weight_decay", cfg.train.finetune_step2.weight_decay},
        {"batch_size", cfg.train.finetune_step2.batch_size}}},
      {"two_step", cfg.train.two_step},
      {"finetune_aug_copies", cfg.train.finetune_aug_copies},
      {"augmentation", cfg.train.pretrain.augmentation}};
  j["loss"] = {{"lambda1", cfg.loss.lambda1},
               {"lambda2", cfg.loss.lambda2},
               {"lambda_bsr", cfg.loss.lambda_bsr},
               {"pretrain_cls", to_string(cfg.loss.pretrain_cls)},
               {"finetune_cls", to_string(cfg.loss.finetune_cls)},
               {"variant", to_string(cfg.loss.variant)}};
  j["protocol"] = {{"n_way", cfg.protocol.n_way},
                   {"k_shots", cfg.protocol.k_shots},
                   {"q_queries", cfg.protocol.q_queries},
                   {"episodes", cfg.protocol.episodes},
                   {"transductive", cfg.protocol.transductive}};
  j["noise"] = {{"gaussian_var", cfg.noise.gaussian_var},
                {"salt_vs_pepper", cfg.noise.salt_vs_pepper},
                {"salt_pepper_amount", cfg.noise.salt_pepper_amount},
                {"speckle_var", cfg.noise.speckle_var}};
  j["target"] = cfg.target;
  j["variants"] = cfg.variants;
  j["combos"] = cfg.combos;
  return j.dump(2);  // nlohmann::json orders keys, so the dump is canonical
}

std::string config_hash(const RunConfig& cfg) {
  std::ostringstream os;
  os << std::hex << fnv1a(config_echo_json(cfg));
  return os.str();
}

void write_config_echo(const RunConfig& cfg, const std::string& dir) {
  std::filesystem::create_directories(dir);
  json j = json::parse(config_echo_json(cfg));
  json wrapped = {{"config", j}, {"config_hash", config_hash(cfg)}};
  std::ofstream f(dir + "/config_echo.json");
  if (!f) throw IoError("cannot write " + dir + "/config_echo.json");
  f << wrapped.dump(2) << "\n";
}

HarnessConfig harness_config(const RunConfig& cfg, int k_shot) {
  HarnessConfig h;
  h.profile = profile_from_string(cfg.profile);
  h.train = cfg.train;
  h.loss = cfg.loss;
  h.eval.n_way = cfg.protocol.n_way;
  h.eval.k_shot = k_shot;
  h.eval.q_queries = cfg.protocol.q_queries;
  h.eval.episodes = cfg.protocol.episodes;
  h.eval.transductive = cfg.protocol.transductive;
  h.eval.jobs = cfg.jobs;
  h.seed = cfg.seed;
  return h;
}

Dataset make_source(const RunConfig& cfg) {
  return generate_domain(benchmark_source_spec(cfg.data.image_size),
                         cfg.data.source_images_per_class, cfg.data.source_seed);
}

Dataset make_target(const RunConfig& cfg, TargetShift shift) {
  return generate_domain(
      benchmark_target_spec(cfg.data.image_size, shift),
      cfg.data.target_images_per_class,
      derive_seed(cfg.data.target_seed, shift == TargetShift::kMild ? 0 : 1));
}

}  // namespace nsae

#include "nsae/eval.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "nsae/error.hpp"

namespace nsae {

std::vector<int> predict_query(NsaeModel<float>& model, const Episode& ep,
                               const LossConfig& loss_cfg, bool transductive) {
  const BnMode mode = transductive ? BnMode::kTransductive : BnMode::kEval;
  auto qfeat = model.encode(stack_images(ep.query), mode);

  std::vector<int> pred(ep.query.size());
  if (loss_cfg.finetune_cls == FinetuneCls::kCe) {
    if (model.class_count() != ep.n_way)
      throw ConfigError("predict_query: head has " +
                        std::to_string(model.class_count()) + " classes for a " +
                        std::to_string(ep.n_way) + "-way episode");
    auto logits = model.classify(qfeat);
    const int c = logits.shape()[1];
    for (std::size_t i = 0; i < pred.size(); ++i) {
      int am = 0;
      for (int j = 1; j < c; ++j)
        if (logits.values()[i * c + j] > logits.values()[i * c + am]) am = j;
      pred[i] = am;
    }
  } else {
    auto sfeat = model.encode(stack_images(ep.support), mode);
    auto protos = prototypes(sfeat, ep.support_labels, ep.n_way);
    auto probs = distance_probs(qfeat, protos);
    const int c = probs.shape()[1];
    for (std::size_t i = 0; i < pred.size(); ++i) {
      int am = 0;
      for (int j = 1; j < c; ++j)
        if (probs.values()[i * c + j] > probs.values()[i * c + am]) am = j;
      pred[i] = am;
    }
  }
  return pred;
}

std::pair<double, double> mean_ci95(const std::vector<double>& values) {
  if (values.empty()) throw ConfigError("mean_ci95: empty sample");
  double mean = 0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return {mean, 1.96 * sd / std::sqrt(static_cast<double>(values.size()))};
}

namespace {

double run_episode(const NsaeModel<float>& checkpoint, const Dataset& target,
                   const EvalConfig& cfg, const TrainConfig& tcfg,
                   const LossConfig& lcfg, int index) {
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(index)));
  auto ep = sample_episode(target, cfg.n_way, cfg.k_shot, cfg.q_queries, rng);
  auto model = checkpoint.clone();
  if (cfg.finetune) {
    if (tcfg.two_step)
      finetune_two_step(model, ep.support, ep.support_labels, ep.n_way, tcfg,
                        lcfg, rng);
    else
      finetune_one_step(model, ep.support, ep.support_labels, ep.n_way, tcfg,
                        lcfg, rng);
  } else if (lcfg.finetune_cls == FinetuneCls::kCe) {
    // Unadapted evaluation still needs an N-way head; a fresh random head is
    // independent of the episode's labels.
    model.reinit_head(ep.n_way, rng);
  }
  auto pred = predict_query(model, ep, lcfg, cfg.transductive);
  int hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    hit += pred[i] == ep.query_labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace

EvalReport evaluate_protocol(const NsaeModel<float>& checkpoint,
                             const Dataset& target, const EvalConfig& cfg,
                             const TrainConfig& tcfg, const LossConfig& lcfg) {
  if (cfg.episodes < 1) throw ConfigError("evaluate_protocol: episodes must be >= 1");
  if (cfg.n_way < 1 || cfg.k_shot < 1 || cfg.q_queries < 1)
    throw ConfigError("evaluate_protocol: N, K, Q must be >= 1");

  std::vector<double> acc(cfg.episodes);
  const int jobs = std::max(1, cfg.jobs);
  if (jobs == 1) {
    for (int e = 0; e < cfg.episodes; ++e)
      acc[e] = run_episode(checkpoint, target, cfg, tcfg, lcfg, e);
  } else {
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_mu;
    auto worker = [&] {
      for (;;) {
        const int e = next.fetch_add(1);
        if (e >= cfg.episodes) return;
        try {
          acc[e] = run_episode(checkpoint, target, cfg, tcfg, lcfg, e);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  EvalReport report;
  report.accuracies = std::move(acc);
  auto [m, ci] = mean_ci95(report.accuracies);
  report.mean = m;
  report.ci95 = ci;
  report.episodes = cfg.episodes;
  report.n_way = cfg.n_way;
  report.k_shot = cfg.k_shot;
  report.q_queries = cfg.q_queries;
  report.seed = cfg.seed;
  report.transductive = cfg.transductive;
  report.two_step = tcfg.two_step;
  report.finetuned = cfg.finetune;
  report.variant = to_string(lcfg.variant);
  report.combo = to_string(lcfg.pretrain_cls) + "+" + to_string(lcfg.finetune_cls);
  return report;
}

void write_report_json(const EvalReport& report, const std::string& path) {
  nlohmann::json j;
  j["mean"] = report.mean;
  j["ci95"] = report.ci95;
  j["episodes"] = report.episodes;
  j["n_way"] = report.n_way;
  j["k_shot"] = report.k_shot;
  j["q_queries"] = report.q_queries;
  j["seed"] = report.seed;
  j["transductive"] = report.transductive;
  j["two_step"] = report.two_step;
  j["finetuned"] = report.finetuned;
  j["variant"] = report.variant;
  j["combo"] = report.combo;
  j["profile"] = report.profile;
  j["accuracies"] = report.accuracies;
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << j.dump(2) << "\n";
}

void append_report_csv(const EvalReport& report, const std::string& path) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream f(path, std::ios::app);
  if (!f) throw IoError("cannot write " + path);
  if (fresh)
    f << "variant,combo,profile,n_way,k_shot,q_queries,episodes,seed,"
         "transductive,two_step,finetuned,mean,ci95\n";
  f.precision(10);
  f << report.variant << ',' << report.combo << ',' << report.profile << ','
    << report.n_way << ',' << report.k_shot << ',' << report.q_queries << ','
    << report.episodes << ',' << report.seed << ',' << report.transductive << ','
    << report.two_step << ',' << report.finetuned << ',' << report.mean << ','
    << report.ci95 << '\n';
  if (!f) throw IoError("write failed for " + path);
}

}  // namespace nsae

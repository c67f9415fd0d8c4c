#include "nsae/analysis.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "nsae/error.hpp"

namespace nsae {

Tensor<double> normalize_features(const Tensor<double>& features) {
  if (features.shape().size() != 2)
    throw DimensionError("normalize_features: expected [N,F]");
  const int n = features.shape()[0], f = features.shape()[1];
  std::vector<double> out(features.values());
  for (int i = 0; i < n; ++i) {
    double ss = 0;
    for (int j = 0; j < f; ++j) ss += out[static_cast<long>(i) * f + j] *
                                      out[static_cast<long>(i) * f + j];
    const double norm = std::sqrt(ss);
    if (norm == 0.0)
      throw DegeneracyError("normalize_features: zero-norm row " + std::to_string(i));
    for (int j = 0; j < f; ++j) out[static_cast<long>(i) * f + j] /= norm;
  }
  return Tensor<double>::from(features.shape(), std::move(out));
}

IccStats icc(const Tensor<double>& features, const std::vector<int>& labels,
             int n_classes) {
  if (n_classes < 2) throw ConfigError("icc: need at least 2 classes");
  if (static_cast<int>(labels.size()) != features.shape()[0])
    throw DimensionError("icc: labels and feature rows disagree");
  auto norm = normalize_features(features);
  const int f = norm.shape()[1];

  std::vector<std::vector<double>> centers(n_classes, std::vector<double>(f, 0.0));
  std::vector<int> counts(n_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int c = labels[i];
    if (c < 0 || c >= n_classes) throw ConfigError("icc: label out of range");
    ++counts[c];
    for (int j = 0; j < f; ++j) centers[c][j] += norm.values()[i * f + j];
  }
  for (int c = 0; c < n_classes; ++c) {
    if (counts[c] == 0) throw DegeneracyError("icc: class " + std::to_string(c) +
                                              " is empty");
    for (int j = 0; j < f; ++j) centers[c][j] /= counts[c];
  }

  IccStats out;
  // d_intra: mean over classes of the mean squared distance to the class center.
  std::vector<double> within(n_classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int c = labels[i];
    double d = 0;
    for (int j = 0; j < f; ++j) {
      const double v = norm.values()[i * f + j] - centers[c][j];
      d += v * v;
    }
    within[c] += d;
  }
  for (int c = 0; c < n_classes; ++c) out.d_intra += within[c] / counts[c];
  out.d_intra /= n_classes;

  // d_inter: mean squared center-to-center distance over ordered pairs.
  for (int a = 0; a < n_classes; ++a)
    for (int b = 0; b < n_classes; ++b) {
      if (a == b) continue;
      double d = 0;
      for (int j = 0; j < f; ++j) {
        const double v = centers[a][j] - centers[b][j];
        d += v * v;
      }
      out.d_inter += d;
    }
  out.d_inter /= static_cast<double>(n_classes) * (n_classes - 1);

  if (out.d_intra < kIccDegeneracyFloor)
    throw DegeneracyError("icc: intra-class variation below the degeneracy floor");
  out.icc = out.d_inter / out.d_intra;
  return out;
}

namespace {

// Encode every image once, in small eval batches.
Tensor<double> encode_dataset(const Extractor& extractor, const Dataset& ds) {
  const int batch = 32;
  std::vector<double> all;
  int f = -1;
  for (std::size_t start = 0; start < ds.images.size(); start += batch) {
    std::vector<int> idx;
    for (std::size_t i = start; i < std::min(ds.images.size(), start + batch); ++i)
      idx.push_back(static_cast<int>(i));
    auto feats = extractor(stack_images(ds.images, idx));
    if (feats.shape().size() != 2 ||
        feats.shape()[0] != static_cast<int>(idx.size()))
      throw DimensionError("icc_experiment: extractor must return [B,F]");
    if (f < 0) f = feats.shape()[1];
    all.insert(all.end(), feats.values().begin(), feats.values().end());
  }
  return Tensor<double>::from({static_cast<int>(ds.images.size()), f},
                              std::move(all));
}

}  // namespace

IccExperimentResult icc_experiment(const Extractor& extractor, const Dataset& ds,
                                   int classes_per_rep, int reps, Rng& rng) {
  if (classes_per_rep < 2 || classes_per_rep > ds.class_count)
    throw ConfigError("icc_experiment: classes_per_rep must be in [2, class_count]");
  if (reps < 1) throw ConfigError("icc_experiment: reps must be >= 1");

  auto feats = encode_dataset(extractor, ds);
  const int f = feats.shape()[1];

  IccExperimentResult out;
  std::vector<int> classes(ds.class_count);
  for (int c = 0; c < ds.class_count; ++c) classes[c] = c;
  for (int rep = 0; rep < reps; ++rep) {
    rng.shuffle(classes.begin(), classes.end());
    std::vector<double> rows;
    std::vector<int> labels;
    for (int local = 0; local < classes_per_rep; ++local)
      for (int i : ds.by_class[classes[local]]) {
        rows.insert(rows.end(), feats.values().begin() + static_cast<long>(i) * f,
                    feats.values().begin() + static_cast<long>(i + 1) * f);
        labels.push_back(local);
      }
    try {
      auto s = icc(Tensor<double>::from({static_cast<int>(labels.size()), f},
                                        std::move(rows)),
                   labels, classes_per_rep);
      out.avg.d_intra += s.d_intra;
      out.avg.d_inter += s.d_inter;
      out.avg.icc += s.icc;
      ++out.repetitions;
    } catch (const DegeneracyError&) {
      ++out.degenerate_excluded;
    }
  }
  if (out.repetitions == 0)
    throw DegeneracyError("icc_experiment: every repetition was degenerate");
  out.avg.d_intra /= out.repetitions;
  out.avg.d_inter /= out.repetitions;
  out.avg.icc /= out.repetitions;
  return out;
}

IccReport compare_extractors(const Extractor& a, const Extractor& b,
                             const Dataset& source, const Dataset& target,
                             int classes_per_rep, int reps, std::uint64_t seed) {
  IccReport report;
  report.classes_per_rep = classes_per_rep;
  report.repetitions = reps;
  report.seed = seed;

  // Identical seeds per domain so both extractors see the same class samples.
  auto run = [&](const Extractor& ex, const Dataset& ds, std::uint64_t stream) {
    Rng rng(derive_seed(seed, stream));
    return icc_experiment(ex, ds, classes_per_rep, reps, rng);
  };
  report.a_source = run(a, source, 0);
  report.b_source = run(b, source, 0);
  report.a_target = run(a, target, 1);
  report.b_target = run(b, target, 1);

  auto ratio = [](double num, double den) {
    return den > kIccDegeneracyFloor ? num / den
                                     : std::numeric_limits<double>::quiet_NaN();
  };
  report.icc_ratio_source = ratio(report.a_source.avg.icc, report.b_source.avg.icc);
  report.icc_ratio_target = ratio(report.a_target.avg.icc, report.b_target.avg.icc);
  report.inter_ratio_source =
      ratio(report.a_source.avg.d_inter, report.b_source.avg.d_inter);
  report.inter_ratio_target =
      ratio(report.a_target.avg.d_inter, report.b_target.avg.d_inter);
  return report;
}

namespace {

nlohmann::json stats_json(const IccExperimentResult& r) {
  return {{"d_intra", r.avg.d_intra},
          {"d_inter", r.avg.d_inter},
          {"icc", r.avg.icc},
          {"repetitions", r.repetitions},
          {"degenerate_excluded", r.degenerate_excluded}};
}

}  // namespace

void write_icc_report_json(const IccReport& report, const std::string& path) {
  nlohmann::json j;
  j["a_source"] = stats_json(report.a_source);
  j["a_target"] = stats_json(report.a_target);
  j["b_source"] = stats_json(report.b_source);
  j["b_target"] = stats_json(report.b_target);
  j["icc_ratio_source"] = report.icc_ratio_source;
  j["icc_ratio_target"] = report.icc_ratio_target;
  j["inter_ratio_source"] = report.inter_ratio_source;
  j["inter_ratio_target"] = report.inter_ratio_target;
  j["classes_per_rep"] = report.classes_per_rep;
  j["repetitions"] = report.repetitions;
  j["seed"] = report.seed;
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << j.dump(2) << "\n";
}

void write_icc_report_csv(const IccReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "domain,icc_a,icc_b,icc_ratio,d_inter_a,d_inter_b,inter_ratio\n";
  f.precision(10);
  f << "source," << report.a_source.avg.icc << ',' << report.b_source.avg.icc
    << ',' << report.icc_ratio_source << ',' << report.a_source.avg.d_inter << ','
    << report.b_source.avg.d_inter << ',' << report.inter_ratio_source << '\n';
  f << "target," << report.a_target.avg.icc << ',' << report.b_target.avg.icc
    << ',' << report.icc_ratio_target << ',' << report.a_target.avg.d_inter << ','
    << report.b_target.avg.d_inter << ',' << report.inter_ratio_target << '\n';
  if (!f) throw IoError("write failed for " + path);
}

void dump_embeddings(const Extractor& extractor, const Dataset& ds,
                     const std::vector<int>& class_subset,
                     const std::string& path) {
  std::vector<int> idx;
  for (int c : class_subset) {
    if (c < 0 || c >= ds.class_count)
      throw ConfigError("dump_embeddings: class " + std::to_string(c) +
                        " does not exist");
    for (int i : ds.by_class[c]) idx.push_back(i);
  }
  if (idx.empty()) throw ConfigError("dump_embeddings: empty class subset");

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);

  const int batch = 32;
  int dim = -1;
  std::vector<float> rows;
  std::vector<int> labels;
  for (std::size_t start = 0; start < idx.size(); start += batch) {
    std::vector<int> part(idx.begin() + start,
                          idx.begin() + std::min(idx.size(), start + batch));
    auto feats = extractor(stack_images(ds.images, part));
    if (dim < 0) dim = feats.shape()[1];
    rows.insert(rows.end(), feats.values().begin(), feats.values().end());
    for (int i : part) labels.push_back(ds.images[i].label);
  }
  f << "nsae-embeddings 1\n" << dim << ' ' << labels.size() << '\n';
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::int32_t label = labels[i];
    f.write(reinterpret_cast<const char*>(&label), sizeof(label));
    f.write(reinterpret_cast<const char*>(rows.data() + i * dim),
            static_cast<std::streamsize>(dim * sizeof(float)));
  }
  if (!f) throw IoError("write failed for " + path);
}

std::pair<Tensor<float>, std::vector<int>> load_embeddings(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  std::string magic;
  int version = 0, dim = 0;
  std::size_t count = 0;
  f >> magic >> version >> dim >> count;
  if (magic != "nsae-embeddings" || version != 1)
    throw IoError("not an embedding dump: " + path);
  f.get();  // the newline terminating the header
  std::vector<float> rows(count * dim);
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::int32_t label = 0;
    f.read(reinterpret_cast<char*>(&label), sizeof(label));
    f.read(reinterpret_cast<char*>(rows.data() + i * dim),
           static_cast<std::streamsize>(dim * sizeof(float)));
    if (!f) throw IoError("truncated embedding dump: " + path);
    labels[i] = label;
  }
  return {Tensor<float>::from({static_cast<int>(count), dim}, std::move(rows)),
          std::move(labels)};
}

}  // namespace nsae

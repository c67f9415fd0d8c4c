#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "nsae/data.hpp"
#include "nsae/tensor.hpp"

namespace nsae {

/// Maps an image batch [B,3,H,W] to features [B,F]; typically a model's
/// encoder in eval mode.
using Extractor = std::function<Tensor<float>(const Tensor<float>&)>;

struct IccStats {
  double d_intra = 0, d_inter = 0, icc = 0;
};

struct IccExperimentResult {
  IccStats avg;
  int repetitions = 0;          // repetitions that entered the average
  int degenerate_excluded = 0;  // repetitions dropped for d_intra below floor
};

struct IccReport {
  IccExperimentResult a_source, a_target, b_source, b_target;
  // ratios a/b; NaN when a denominator sits below the degeneracy floor
  double icc_ratio_source = 0, icc_ratio_target = 0;
  double inter_ratio_source = 0, inter_ratio_target = 0;
  int classes_per_rep = 0, repetitions = 0;
  std::uint64_t seed = 0;
};

inline constexpr double kIccDegeneracyFloor = 1e-12;

/// Rows scaled to unit L2 norm; throws DegeneracyError naming the first
/// zero-norm row.
Tensor<double> normalize_features(const Tensor<double>& features);

/// Intra-/inter-class variation of normalized features. labels must cover
/// >= 2 non-empty classes in [0, n_classes).
IccStats icc(const Tensor<double>& features, const std::vector<int>& labels,
             int n_classes);

/// Appendix-A style experiment: encode the dataset once, then repeatedly
/// sample classes_per_rep classes and average the per-repetition statistics.
IccExperimentResult icc_experiment(const Extractor& extractor, const Dataset& ds,
                                   int classes_per_rep, int reps, Rng& rng);

/// Runs the experiment for each (extractor, domain) pair with identical
/// class samples, and reports the a/b ratios per domain.
IccReport compare_extractors(const Extractor& a, const Extractor& b,
                             const Dataset& source, const Dataset& target,
                             int classes_per_rep, int reps, std::uint64_t seed);

void write_icc_report_json(const IccReport& report, const std::string& path);
void write_icc_report_csv(const IccReport& report, const std::string& path);

/// Embedding dump: text header "nsae-embeddings 1\n<dim> <count>\n" followed
/// by binary rows of (int32 label, dim float32 features).
void dump_embeddings(const Extractor& extractor, const Dataset& ds,
                     const std::vector<int>& class_subset,
                     const std::string& path);
std::pair<Tensor<float>, std::vector<int>> load_embeddings(const std::string& path);

}  // namespace nsae

#pragma once

#include <string>
#include <vector>

#include "nsae/model.hpp"
#include "nsae/tensor.hpp"

namespace nsae {

enum class PretrainCls { kCe, kBsr };
enum class FinetuneCls { kCe, kD };
enum class Variant { kBaseline, kSae, kSaeStar, kNsae };

PretrainCls pretrain_cls_from_string(const std::string& s);
FinetuneCls finetune_cls_from_string(const std::string& s);
Variant variant_from_string(const std::string& s);
std::string to_string(PretrainCls c);
std::string to_string(FinetuneCls c);
std::string to_string(Variant v);

struct LossConfig {
  double lambda1 = 1.0;      // reconstruction weight
  double lambda2 = 1.0;      // reconstructed-classification weight
  double lambda_bsr = 0.001; // spectral penalty weight
  PretrainCls pretrain_cls = PretrainCls::kCe;
  FinetuneCls finetune_cls = FinetuneCls::kCe;
  Variant variant = Variant::kNsae;

  void validate() const;  // all weights >= 0
};

/// Mean over the batch of the per-sample L2 norm of the flattened difference.
template <class T>
Tensor<T> rec_loss(const Tensor<T>& x_target, const Tensor<T>& x_hat);

/// Mean cross entropy; labels in [0, C).
template <class T>
Tensor<T> ce_loss(const Tensor<T>& logits, const std::vector<int>& labels);

/// Sum of squared singular values of the batch feature matrix, computed via
/// the Frobenius identity.
template <class T>
Tensor<T> bsr_penalty(const Tensor<T>& feature_batch);

/// Cross entropy plus the spectral penalty.
template <class T>
Tensor<T> bsr_loss(const Tensor<T>& logits, const std::vector<int>& labels,
                   const Tensor<T>& feature_batch, T lambda_bsr);

/// The configured pre-training classification loss (CE or BSR).
template <class T>
Tensor<T> pretrain_cls_loss(const Tensor<T>& logits, const std::vector<int>& labels,
                            const Tensor<T>& feature_batch, const LossConfig& cfg);

/// Classification + weighted reconstruction on one batch.
template <class T>
Tensor<T> sae_loss(const Tensor<T>& x, const std::vector<int>& y,
                   NsaeModel<T>& model, const LossConfig& cfg, BnMode mode);

template <class T>
struct LossTerms {
  Tensor<T> total;
  // Per-term values for the loss-history CSV; zero scalars when a term is
  // disabled by the variant.
  Tensor<T> cls_orig, rec, cls_recon;
};

/// The full pre-training objective under the configured variant:
///   baseline: cls_orig only (the decoder is never run)
///   SAE:      cls_orig + l1*rec
///   SAE*:     2*cls_orig + l1*rec
///   NSAE:     cls_orig + l1*rec + l2*cls_recon
template <class T>
LossTerms<T> nsae_loss(const Tensor<T>& x, const std::vector<int>& y,
                       NsaeModel<T>& model, const LossConfig& cfg, BnMode mode);

/// Class prototypes: per-class mean of features. feats [M,F], labels in
/// [0, n_classes), every class non-empty.
template <class T>
Tensor<T> prototypes(const Tensor<T>& feats, const std::vector<int>& labels,
                     int n_classes);

/// Logits -d where d is the cosine distance 1 - cos(query, prototype).
template <class T>
Tensor<T> distance_logits(const Tensor<T>& query_feats, const Tensor<T>& protos);

/// Softmax over -d; detached probabilities for prediction. [Q,N].
template <class T>
Tensor<T> distance_probs(const Tensor<T>& query_feats, const Tensor<T>& protos);

/// Negative mean log-probability of the true labels under distance_probs.
template <class T>
Tensor<T> distance_loss(const Tensor<T>& query_feats,
                        const std::vector<int>& labels, const Tensor<T>& protos);

}  // namespace nsae

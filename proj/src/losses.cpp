#include "nsae/losses.hpp"

#include <cmath>

#include "nsae/error.hpp"

namespace nsae {

PretrainCls pretrain_cls_from_string(const std::string& s) {
  if (s == "CE" || s == "ce") return PretrainCls::kCe;
  if (s == "BSR" || s == "bsr") return PretrainCls::kBsr;
  throw ConfigError("unknown pre-training classification loss: " + s);
}

FinetuneCls finetune_cls_from_string(const std::string& s) {
  if (s == "CE" || s == "ce") return FinetuneCls::kCe;
  if (s == "D" || s == "d") return FinetuneCls::kD;
  throw ConfigError("unknown fine-tuning classification loss: " + s);
}

Variant variant_from_string(const std::string& s) {
  if (s == "baseline") return Variant::kBaseline;
  if (s == "SAE" || s == "sae") return Variant::kSae;
  if (s == "SAE*" || s == "sae*") return Variant::kSaeStar;
  if (s == "NSAE" || s == "nsae") return Variant::kNsae;
  throw ConfigError("unknown variant: " + s);
}

std::string to_string(PretrainCls c) { return c == PretrainCls::kCe ? "CE" : "BSR"; }
std::string to_string(FinetuneCls c) { return c == FinetuneCls::kCe ? "CE" : "D"; }
std::string to_string(Variant v) {
  switch (v) {
    case Variant::kBaseline: return "baseline";
    case Variant::kSae: return "SAE";
    case Variant::kSaeStar: return "SAE*";
    default: return "NSAE";
  }
}

void LossConfig::validate() const {
  if (lambda1 < 0 || lambda2 < 0 || lambda_bsr < 0)
    throw ConfigError("loss weights must be non-negative");
}

template <class T>
Tensor<T> rec_loss(const Tensor<T>& x_target, const Tensor<T>& x_hat) {
  if (x_target.shape() != x_hat.shape())
    throw DimensionError("rec_loss: shape mismatch " + shape_str(x_target.shape()) +
                         " vs " + shape_str(x_hat.shape()));
  const int b = x_target.shape()[0];
  const int d = static_cast<int>(x_target.size() / b);
  auto diff = sub(reshape(x_target, {b, d}), reshape(x_hat, {b, d}));
  return mean(sqrt_elem(sum_cols(mul(diff, diff))));
}

template <class T>
Tensor<T> ce_loss(const Tensor<T>& logits, const std::vector<int>& labels) {
  return gather_nll(log_softmax(logits), labels);
}

template <class T>
Tensor<T> bsr_penalty(const Tensor<T>& feature_batch) {
  if (feature_batch.shape().size() != 2)
    throw DimensionError("bsr_penalty: expected a 2-d feature matrix");
  // Sum of squared singular values equals the squared Frobenius norm.
  return sum(mul(feature_batch, feature_batch));
}

template <class T>
Tensor<T> bsr_loss(const Tensor<T>& logits, const std::vector<int>& labels,
                   const Tensor<T>& feature_batch, T lambda_bsr) {
  return add(ce_loss(logits, labels),
             scale(bsr_penalty(feature_batch), lambda_bsr));
}

template <class T>
Tensor<T> pretrain_cls_loss(const Tensor<T>& logits, const std::vector<int>& labels,
                            const Tensor<T>& feature_batch, const LossConfig& cfg) {
  if (cfg.pretrain_cls == PretrainCls::kCe) return ce_loss(logits, labels);
  return bsr_loss(logits, labels, feature_batch, static_cast<T>(cfg.lambda_bsr));
}

template <class T>
Tensor<T> sae_loss(const Tensor<T>& x, const std::vector<int>& y,
                   NsaeModel<T>& model, const LossConfig& cfg, BnMode mode) {
  cfg.validate();
  auto feat = model.encode(x, mode);
  auto recon = model.decode(feat, mode);
  auto logits = model.classify(feat);
  auto cls = pretrain_cls_loss(logits, y, feat, cfg);
  auto target = recon_target(x, model.recon_size());
  return add(cls, scale(rec_loss(target, recon), static_cast<T>(cfg.lambda1)));
}

template <class T>
LossTerms<T> nsae_loss(const Tensor<T>& x, const std::vector<int>& y,
                       NsaeModel<T>& model, const LossConfig& cfg, BnMode mode) {
  cfg.validate();
  LossTerms<T> out;
  if (cfg.variant == Variant::kBaseline) {
    auto feat = model.encode(x, mode);
    out.cls_orig = pretrain_cls_loss(model.classify(feat), y, feat, cfg);
    out.rec = Tensor<T>::scalar(T(0));
    out.cls_recon = Tensor<T>::scalar(T(0));
    out.total = out.cls_orig;
    return out;
  }
  auto fwd = model.forward(x, mode);
  out.cls_orig = pretrain_cls_loss(fwd.logits_orig, y, fwd.feat, cfg);
  auto target = recon_target(x, model.recon_size());
  out.rec = rec_loss(target, fwd.recon);
  out.cls_recon = pretrain_cls_loss(fwd.logits_recon, y, fwd.feat_recon, cfg);
  switch (cfg.variant) {
    case Variant::kSae:
      out.total = add(out.cls_orig, scale(out.rec, static_cast<T>(cfg.lambda1)));
      break;
    case Variant::kSaeStar:
      out.total = add(scale(out.cls_orig, T(2)),
                      scale(out.rec, static_cast<T>(cfg.lambda1)));
      break;
    default:
      out.total = add(add(out.cls_orig, scale(out.rec, static_cast<T>(cfg.lambda1))),
                      scale(out.cls_recon, static_cast<T>(cfg.lambda2)));
  }
  return out;
}

template <class T>
Tensor<T> prototypes(const Tensor<T>& feats, const std::vector<int>& labels,
                     int n_classes) {
  return group_means(feats, labels, n_classes);
}

template <class T>
Tensor<T> distance_logits(const Tensor<T>& query_feats, const Tensor<T>& protos) {
  auto cos = matmul_nt(l2_normalize_rows(query_feats), l2_normalize_rows(protos));
  // logits = -d = cos - 1
  return sub(cos, Tensor<T>::full(cos.shape(), T(1)));
}

template <class T>
Tensor<T> distance_probs(const Tensor<T>& query_feats, const Tensor<T>& protos) {
  auto lp = log_softmax(distance_logits(query_feats, protos));
  std::vector<T> p(lp.size());
  for (std::int64_t i = 0; i < lp.size(); ++i) p[i] = std::exp(lp.values()[i]);
  return Tensor<T>::from(lp.shape(), std::move(p));
}

template <class T>
Tensor<T> distance_loss(const Tensor<T>& query_feats,
                        const std::vector<int>& labels, const Tensor<T>& protos) {
  return gather_nll(log_softmax(distance_logits(query_feats, protos)), labels);
}

#define NSAE_INSTANTIATE_LOSSES(T)                                              \
  template Tensor<T> rec_loss<T>(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> ce_loss<T>(const Tensor<T>&, const std::vector<int>&);     \
  template Tensor<T> bsr_penalty<T>(const Tensor<T>&);                          \
  template Tensor<T> bsr_loss<T>(const Tensor<T>&, const std::vector<int>&,     \
                                 const Tensor<T>&, T);                          \
  template Tensor<T> pretrain_cls_loss<T>(const Tensor<T>&,                     \
                                          const std::vector<int>&,              \
                                          const Tensor<T>&, const LossConfig&); \
  template Tensor<T> sae_loss<T>(const Tensor<T>&, const std::vector<int>&,     \
                                 NsaeModel<T>&, const LossConfig&, BnMode);     \
  template LossTerms<T> nsae_loss<T>(const Tensor<T>&, const std::vector<int>&, \
                                     NsaeModel<T>&, const LossConfig&, BnMode); \
  template Tensor<T> prototypes<T>(const Tensor<T>&, const std::vector<int>&,   \
                                   int);                                        \
  template Tensor<T> distance_logits<T>(const Tensor<T>&, const Tensor<T>&);    \
  template Tensor<T> distance_probs<T>(const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> distance_loss<T>(const Tensor<T>&,                         \
                                      const std::vector<int>&, const Tensor<T>&);

NSAE_INSTANTIATE_LOSSES(float)
NSAE_INSTANTIATE_LOSSES(double)

}  // namespace nsae

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "nsae/conv.hpp"
#include "nsae/rng.hpp"
#include "nsae/tensor.hpp"

namespace nsae {

enum class Profile { kPaper84, kFast32 };

Profile profile_from_string(const std::string& s);
std::string to_string(Profile p);

/// One conv (or deconv) layer with its batch norm.
template <class T>
struct ConvBlock {
  Tensor<T> w, b, gamma, beta;
  BnStats<T> stats;
};

template <class T>
struct NsaeOutputs {
  Tensor<T> feat, recon, logits_orig, feat_recon, logits_recon;
};

/// Conv4-style encoder, mirrored deconvolutional decoder, linear head.
/// One instance per training run; batch-norm stats are mutable state.
template <class T>
class NsaeModel {
 public:
  NsaeModel(Profile profile, int class_count, Rng& rng);

  Profile profile() const { return profile_; }
  int image_size() const { return image_size_; }
  int feature_dim() const { return feature_dim_; }
  int recon_size() const { return recon_size_; }
  int class_count() const { return class_count_; }

  /// x [B,3,H,W] -> [B,F] flattened post-pool features.
  Tensor<T> encode(const Tensor<T>& x, BnMode mode);
  /// feat [B,F] -> [B,3,recon_size,recon_size] in [0,1].
  Tensor<T> decode(const Tensor<T>& feat, BnMode mode);
  /// feat [B,F] -> logits [B,C].
  Tensor<T> classify(const Tensor<T>& feat) const;
  /// Full pass: encode, decode, classify, re-encode the reconstruction and
  /// classify it again with the same parameters.
  NsaeOutputs<T> forward(const Tensor<T>& x, BnMode mode);

  /// Replace the classifier head with a freshly initialized one.
  void reinit_head(int class_count, Rng& rng);

  std::vector<Tensor<T>> encoder_params();
  std::vector<Tensor<T>> decoder_params();
  std::vector<Tensor<T>> head_params();
  std::vector<Tensor<T>> parameters();

  /// Deep copy: parameters, head, and running statistics all duplicated.
  NsaeModel clone() const;

  /// Every parameter tensor and batch-norm buffer, with stable names; used
  /// by the checkpoint reader/writer.
  std::vector<std::pair<std::string, std::vector<T>*>> blobs();
  std::vector<std::pair<std::string, Shape>> blob_shapes() const;

 private:
  NsaeModel() = default;
  void configure(Profile profile);

  Profile profile_ = Profile::kFast32;
  int image_size_ = 0, feature_dim_ = 0, recon_size_ = 0, class_count_ = 0;
  int enc_channels_ = 0, enc_spatial_ = 0, dec_hidden_ = 0;

  std::vector<ConvBlock<T>> enc_;
  Tensor<T> fc1_w_, fc1_b_, fc2_w_, fc2_b_;
  std::vector<ConvBlock<T>> dec_;  // transposed-conv blocks, kernels [C,F,k,k]
  ConvBlock<T> final_;
  Tensor<T> head_w_, head_b_;
};

/// Fan-in-scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <class T>
Tensor<T> fanin_uniform(const Shape& shape, int fan_in, Rng& rng);

/// Reconstruction target: bilinear resize of x [B,3,H,W] to [B,3,s,s],
/// detached from the graph.
template <class T>
Tensor<T> recon_target(const Tensor<T>& x, int size);

///// Checkpoint directory: model.json manifest + params.bin float32 blob.
void save_checkpoint(NsaeModel<float>& model, const std::string& dir,
                     const std::string& config_hash);
NsaeModel<float> load_checkpoint(const std::string& dir,
                                 std::string* config_hash = nullptr);

}  // namespace nsae

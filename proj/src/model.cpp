#include "nsae/model.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "nsae/data.hpp"
#include "nsae/error.hpp"

namespace nsae {

Profile profile_from_string(const std::string& s) {
  if (s == "paper84") return Profile::kPaper84;
  if (s == "fast32") return Profile::kFast32;
  throw ConfigError("unknown profile: " + s);
}

std::string to_string(Profile p) {
  return p == Profile::kPaper84 ? "paper84" : "fast32";
}

template <class T>
Tensor<T> fanin_uniform(const Shape& shape, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  auto t = Tensor<T>::from(shape, std::move(v));
  t.set_requires_grad(true);
  return t;
}

namespace {

template <class T>
ConvBlock<T> make_conv_block(int in_ch, int out_ch, int k, Rng& rng) {
  ConvBlock<T> blk;
  blk.w = fanin_uniform<T>({out_ch, in_ch, k, k}, in_ch * k * k, rng);
  blk.b = Tensor<T>::zeros({out_ch});
  blk.b.set_requires_grad(true);
  blk.gamma = Tensor<T>::full({out_ch}, T(1));
  blk.gamma.set_requires_grad(true);
  blk.beta = Tensor<T>::zeros({out_ch});
  blk.beta.set_requires_grad(true);
  blk.stats = BnStats<T>(out_ch);
  return blk;
}

// Transposed conv: kernel layout [C_in, F, k, k].
template <class T>
ConvBlock<T> make_deconv_block(int in_ch, int out_ch, int k, Rng& rng) {
  ConvBlock<T> blk;
  blk.w = fanin_uniform<T>({in_ch, out_ch, k, k}, in_ch * k * k, rng);
  blk.b = Tensor<T>::zeros({out_ch});
  blk.b.set_requires_grad(true);
  blk.gamma = Tensor<T>::full({out_ch}, T(1));
  blk.gamma.set_requires_grad(true);
  blk.beta = Tensor<T>::zeros({out_ch});
  blk.beta.set_requires_grad(true);
  blk.stats = BnStats<T>(out_ch);
  return blk;
}

template <class T>
Tensor<T> deep_copy(const Tensor<T>& t) {
  if (!t.defined()) return t;
  auto out = Tensor<T>::from(t.shape(), t.values());
  out.set_requires_grad(t.requires_grad());
  return out;
}

}  // namespace

template <class T>
void NsaeModel<T>::configure(Profile profile) {
  profile_ = profile;
  if (profile == Profile::kPaper84) {
    image_size_ = 84;
    enc_channels_ = 64;
    enc_spatial_ = 5;   // 84 -> 42 -> 21 -> 10 -> 5
    recon_size_ = 80;   // 5 -> 10 -> 20 -> 40 -> 80
    dec_hidden_ = 512;
  } else {
    image_size_ = 32;
    enc_channels_ = 32;
    enc_spatial_ = 4;   // 32 -> 16 -> 8 -> 4
    recon_size_ = 32;   // 4 -> 8 -> 16 -> 32
    dec_hidden_ = 256;
  }
  feature_dim_ = enc_channels_ * enc_spatial_ * enc_spatial_;
}

template <class T>
NsaeModel<T>::NsaeModel(Profile profile, int class_count, Rng& rng) {
  if (class_count < 1) throw ConfigError("model: class_count must be >= 1");
  configure(profile);
  class_count_ = class_count;

  const int blocks = profile == Profile::kPaper84 ? 4 : 3;
  int in_ch = 3;
  for (int i = 0; i < blocks; ++i) {
    enc_.push_back(make_conv_block<T>(in_ch, enc_channels_, 3, rng));
    in_ch = enc_channels_;
  }

  fc1_w_ = fanin_uniform<T>({feature_dim_, dec_hidden_}, feature_dim_, rng);
  fc1_b_ = Tensor<T>::zeros({dec_hidden_});
  fc1_b_.set_requires_grad(true);
  fc2_w_ = fanin_uniform<T>({dec_hidden_, feature_dim_}, dec_hidden_, rng);
  fc2_b_ = Tensor<T>::zeros({feature_dim_});
  fc2_b_.set_requires_grad(true);

  // Deconv stack ends on 3 channels; the final 3x3 conv keeps 3.
  std::vector<int> filters;
  if (profile == Profile::kPaper84) filters = {64, 64, 64, 3};
  else filters = {32, 32, 3};
  in_ch = enc_channels_;
  for (int f : filters) {
    dec_.push_back(make_deconv_block<T>(in_ch, f, 2, rng));
    in_ch = f;
  }
  final_ = make_conv_block<T>(3, 3, 3, rng);

  Rng head_rng = rng.split(0x42);
  head_w_ = fanin_uniform<T>({feature_dim_, class_count_}, feature_dim_, head_rng);
  head_b_ = Tensor<T>::zeros({class_count_});
  head_b_.set_requires_grad(true);
}

template <class T>
void NsaeModel<T>::reinit_head(int class_count, Rng& rng) {
  if (class_count < 1) throw ConfigError("model: class_count must be >= 1");
  class_count_ = class_count;
  head_w_ = fanin_uniform<T>({feature_dim_, class_count_}, feature_dim_, rng);
  head_b_ = Tensor<T>::zeros({class_count_});
  head_b_.set_requires_grad(true);
}

template <class T>
Tensor<T> NsaeModel<T>::encode(const Tensor<T>& x, BnMode mode) {
  const auto& sh = x.shape();
  if (sh.size() != 4 || sh[1] != 3 || sh[2] != image_size_ || sh[3] != image_size_)
    throw DimensionError("encode: expected [B,3," + std::to_string(image_size_) +
                         "," + std::to_string(image_size_) + "], got " +
                         shape_str(sh));
  Tensor<T> h = x;
  for (auto& blk : enc_) {
    h = conv2d(h, blk.w, blk.b, 1, 1);
    h = batchnorm2d(h, blk.gamma, blk.beta, blk.stats, mode);
    h = relu(h);
    h = maxpool2d(h, 2, 2);
  }
  return reshape(h, {sh[0], feature_dim_});
}

template <class T>
Tensor<T> NsaeModel<T>::decode(const Tensor<T>& feat, BnMode mode) {
  const auto& sh = feat.shape();
  if (sh.size() != 2 || sh[1] != feature_dim_)
    throw DimensionError("decode: expected [B," + std::to_string(feature_dim_) +
                         "], got " + shape_str(sh));
  Tensor<T> h = relu(linear(feat, fc1_w_, fc1_b_));
  h = relu(linear(h, fc2_w_, fc2_b_));
  h = reshape(h, {sh[0], enc_channels_, enc_spatial_, enc_spatial_});
  for (auto& blk : dec_) {
    h = conv_transpose2d(h, blk.w, blk.b, 2, 0);
    h = batchnorm2d(h, blk.gamma, blk.beta, blk.stats, mode);
    h = relu(h);
  }
  h = conv2d(h, final_.w, final_.b, 1, 1);
  h = batchnorm2d(h, final_.gamma, final_.beta, final_.stats, mode);
  return sigmoid(h);
}

template <class T>
Tensor<T> NsaeModel<T>::classify(const Tensor<T>& feat) const {
  const auto& sh = feat.shape();
  if (sh.size() != 2 || sh[1] != feature_dim_)
    throw DimensionError("classify: expected [B," + std::to_string(feature_dim_) +
                         "], got " + shape_str(sh));
  return linear(feat, head_w_, head_b_);
}

template <class T>
NsaeOutputs<T> NsaeModel<T>::forward(const Tensor<T>& x, BnMode mode) {
  NsaeOutputs<T> out;
  out.feat = encode(x, mode);
  out.recon = decode(out.feat, mode);
  out.logits_orig = classify(out.feat);
  // The reconstruction re-enters the same encoder; at the 84x84 profile the
  // decoder emits 80x80, so resize back up to the encoder's input size.
  Tensor<T> re = out.recon;
  if (recon_size_ != image_size_)
    re = upsample_bilinear(re, image_size_, image_size_);
  out.feat_recon = encode(re, mode);
  out.logits_recon = classify(out.feat_recon);
  return out;
}

template <class T>
std::vector<Tensor<T>> NsaeModel<T>::encoder_params() {
  std::vector<Tensor<T>> out;
  for (auto& blk : enc_) {
    out.push_back(blk.w);
    out.push_back(blk.b);
    out.push_back(blk.gamma);
    out.push_back(blk.beta);
  }
  return out;
}

template <class T>
std::vector<Tensor<T>> NsaeModel<T>::decoder_params() {
  std::vector<Tensor<T>> out{fc1_w_, fc1_b_, fc2_w_, fc2_b_};
  for (auto& blk : dec_) {
    out.push_back(blk.w);
    out.push_back(blk.b);
    out.push_back(blk.gamma);
    out.push_back(blk.beta);
  }
  out.push_back(final_.w);
  out.push_back(final_.b);
  out.push_back(final_.gamma);
  out.push_back(final_.beta);
  return out;
}

template <class T>
std::vector<Tensor<T>> NsaeModel<T>::head_params() {
  return {head_w_, head_b_};
}

template <class T>
std::vector<Tensor<T>> NsaeModel<T>::parameters() {
  auto out = encoder_params();
  for (auto& p : decoder_params()) out.push_back(p);
  for (auto& p : head_params()) out.push_back(p);
  return out;
}

template <class T>
NsaeModel<T> NsaeModel<T>::clone() const {
  NsaeModel<T> out;
  out.configure(profile_);
  out.class_count_ = class_count_;
  for (const auto& blk : enc_) {
    ConvBlock<T> c{deep_copy(blk.w), deep_copy(blk.b), deep_copy(blk.gamma),
                   deep_copy(blk.beta), blk.stats};
    out.enc_.push_back(std::move(c));
  }
  out.fc1_w_ = deep_copy(fc1_w_);
  out.fc1_b_ = deep_copy(fc1_b_);
  out.fc2_w_ = deep_copy(fc2_w_);
  out.fc2_b_ = deep_copy(fc2_b_);
  for (const auto& blk : dec_) {
    ConvBlock<T> c{deep_copy(blk.w), deep_copy(blk.b), deep_copy(blk.gamma),
                   deep_copy(blk.beta), blk.stats};
    out.dec_.push_back(std::move(c));
  }
  out.final_ = ConvBlock<T>{deep_copy(final_.w), deep_copy(final_.b),
                            deep_copy(final_.gamma), deep_copy(final_.beta),
                            final_.stats};
  out.head_w_ = deep_copy(head_w_);
  out.head_b_ = deep_copy(head_b_);
  return out;
}

template <class T>
std::vector<std::pair<std::string, std::vector<T>*>> NsaeModel<T>::blobs() {
  std::vector<std::pair<std::string, std::vector<T>*>> out;
  auto add_block = [&](const std::string& prefix, ConvBlock<T>& blk) {
    out.emplace_back(prefix + ".w", &blk.w.values());
    out.emplace_back(prefix + ".b", &blk.b.values());
    out.emplace_back(prefix + ".gamma", &blk.gamma.values());
    out.emplace_back(prefix + ".beta", &blk.beta.values());
    out.emplace_back(prefix + ".running_mean", &blk.stats.running_mean);
    out.emplace_back(prefix + ".running_var", &blk.stats.running_var);
  };
  for (std::size_t i = 0; i < enc_.size(); ++i)
    add_block("enc" + std::to_string(i), enc_[i]);
  out.emplace_back("dec_fc1.w", &fc1_w_.values());
  out.emplace_back("dec_fc1.b", &fc1_b_.values());
  out.emplace_back("dec_fc2.w", &fc2_w_.values());
  out.emplace_back("dec_fc2.b", &fc2_b_.values());
  for (std::size_t i = 0; i < dec_.size(); ++i)
    add_block("deconv" + std::to_string(i), dec_[i]);
  add_block("final", final_);
  out.emplace_back("head.w", &head_w_.values());
  out.emplace_back("head.b", &head_b_.values());
  return out;
}

template <class T>
std::vector<std::pair<std::string, Shape>> NsaeModel<T>::blob_shapes() const {
  std::vector<std::pair<std::string, Shape>> out;
  auto add_block = [&](const std::string& prefix, const ConvBlock<T>& blk) {
    out.emplace_back(prefix + ".w", blk.w.shape());
    out.emplace_back(prefix + ".b", blk.b.shape());
    out.emplace_back(prefix + ".gamma", blk.gamma.shape());
    out.emplace_back(prefix + ".beta", blk.beta.shape());
    const int c = static_cast<int>(blk.stats.running_mean.size());
    out.emplace_back(prefix + ".running_mean", Shape{c});
    out.emplace_back(prefix + ".running_var", Shape{c});
  };
  for (std::size_t i = 0; i < enc_.size(); ++i)
    add_block("enc" + std::to_string(i), enc_[i]);
  out.emplace_back("dec_fc1.w", fc1_w_.shape());
  out.emplace_back("dec_fc1.b", fc1_b_.shape());
  out.emplace_back("dec_fc2.w", fc2_w_.shape());
  out.emplace_back("dec_fc2.b", fc2_b_.shape());
  for (std::size_t i = 0; i < dec_.size(); ++i)
    add_block("deconv" + std::to_string(i), dec_[i]);
  add_block("final", final_);
  out.emplace_back("head.w", head_w_.shape());
  out.emplace_back("head.b", head_b_.shape());
  return out;
}

template <class T>
Tensor<T> recon_target(const Tensor<T>& x, int size) {
  const auto& sh = x.shape();
  if (sh.size() != 4) throw DimensionError("recon_target: expected [B,3,H,W]");
  if (sh[2] == size && sh[3] == size)
    return Tensor<T>::from(sh, x.values());
  std::vector<T> out(static_cast<std::size_t>(sh[0]) * sh[1] * size * size);
  for (int n = 0; n < sh[0]; ++n) {
    std::vector<float> one(static_cast<std::size_t>(sh[1]) * sh[2] * sh[3]);
    const auto* src = x.values().data() + static_cast<long>(n) * one.size();
    for (std::size_t i = 0; i < one.size(); ++i) one[i] = static_cast<float>(src[i]);
    auto r = resize_bilinear(one, sh[1], sh[2], sh[3], size, size);
    auto* dst = out.data() + static_cast<long>(n) * sh[1] * size * size;
    for (std::size_t i = 0; i < r.size(); ++i) dst[i] = static_cast<T>(r[i]);
  }
  return Tensor<T>::from({sh[0], sh[1], size, size}, std::move(out));
}

void save_checkpoint(NsaeModel<float>& model, const std::string& dir,
                     const std::string& config_hash) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);

  nlohmann::json manifest;
  manifest["profile"] = to_string(model.profile());
  manifest["class_count"] = model.class_count();
  manifest["config_hash"] = config_hash;
  nlohmann::json tensors = nlohmann::json::array();
  std::int64_t offset = 0;
  auto shapes = model.blob_shapes();
  for (const auto& [name, shape] : shapes) {
    nlohmann::json t;
    t["name"] = name;
    t["shape"] = shape;
    t["offset"] = offset;
    offset += shape_numel(shape);
    tensors.push_back(std::move(t));
  }
  manifest["tensors"] = std::move(tensors);

  std::ofstream mf(dir + "/model.json");
  if (!mf) throw IoError("cannot write " + dir + "/model.json");
  mf << manifest.dump(2) << "\n";

  std::ofstream bf(dir + "/params.bin", std::ios::binary);
  if (!bf) throw IoError("cannot write " + dir + "/params.bin");
  for (auto& [name, vec] : model.blobs())
    bf.write(reinterpret_cast<const char*>(vec->data()),
             static_cast<std::streamsize>(vec->size() * sizeof(float)));
  if (!bf) throw IoError("write failed for " + dir + "/params.bin");
}

NsaeModel<float> load_checkpoint(const std::string& dir,
                                 std::string* config_hash) {
  std::ifstream mf(dir + "/model.json");
  if (!mf) throw IoError("cannot read " + dir + "/model.json");
  nlohmann::json manifest = nlohmann::json::parse(mf);

  Rng rng(0);
  NsaeModel<float> model(profile_from_string(manifest.at("profile").get<std::string>()),
                         manifest.at("class_count").get<int>(), rng);
  if (config_hash) *config_hash = manifest.at("config_hash").get<std::string>();

  std::ifstream bf(dir + "/params.bin", std::ios::binary);
  if (!bf) throw IoError("cannot read " + dir + "/params.bin");
  const auto& tensors = manifest.at("tensors");
  auto blobs = model.blobs();
  if (tensors.size() != blobs.size())
    throw IoError("checkpoint manifest does not match the model layout");
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    if (tensors[i].at("name").get<std::string>() != blobs[i].first)
      throw IoError("checkpoint tensor name mismatch: " + blobs[i].first);
    auto& vec = *blobs[i].second;
    bf.read(reinterpret_cast<char*>(vec.data()),
            static_cast<std::streamsize>(vec.size() * sizeof(float)));
    if (!bf) throw IoError("truncated params.bin in " + dir);
  }
  return model;
}

template class NsaeModel<float>;
template class NsaeModel<double>;
template Tensor<float> fanin_uniform<float>(const Shape&, int, Rng&);
template Tensor<double> fanin_uniform<double>(const Shape&, int, Rng&);
template Tensor<float> recon_target<float>(const Tensor<float>&, int);
template Tensor<double> recon_target<double>(const Tensor<double>&, int);

}  // namespace nsae

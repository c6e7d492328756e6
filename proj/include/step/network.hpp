#pragma once

// STEP network: small strided CNN backbone, transformer encoder/decoder
// predicting the four task-weight groups, GMSP soft-map module, OMRA
// two-tower offset regressor, and the localization/regression heads.

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "step/encodings.hpp"
#include "step/params.hpp"
#include "step/serialize.hpp"
#include "step/tensor.hpp"

namespace step {

struct ModelConfig {
  EncodingConfig enc;
  int heads = 4;
  int enc_layers = 2;
  int dec_layers = 2;
  int head_channels = 32;
  std::vector<int> backbone_channels = {8, 16, 32};  // three hidden stages, then n
  bool use_gmsp = true;
  EmbedToggles embed;

  int ffn_width() const { return 4 * enc.n; }
  int num_queries() const { return 2 + 2 * enc.k; }

  void validate() const {
    if (enc.n % heads != 0) throw UsageError("model config: n must be divisible by heads");
    if (enc.n % 4 != 0) throw UsageError("model config: n must be divisible by 4");
    if (backbone_channels.size() != 3)
      throw UsageError("model config: backbone_channels must list 3 stages");
    if (enc.feat_h % 4 != 2 || enc.feat_w % 4 != 2)
      throw UsageError("model config: feature extent must be 2 mod 4 for the GMSP geometry");
  }
};

struct ModelWeights {
  Tensor w_loc;   // [1 x n]
  Tensor w_kloc;  // [k x n]
  Tensor w_br;    // [1 x n]
  Tensor w_kp;    // [k x n]
};

struct NetworkOutputs {
  Tensor b_gm_hat;  // [1 x H x W] in [0,1]
  Tensor b_om_hat;  // [4 x H x W] pixels
  Tensor k_gm_hat;  // [k x H x W] in [0,1]
  Tensor k_om_hat;  // [2k x H x W] pixels
  std::vector<Tensor> k_gmsp_hat_train;  // per train frame, with gradient
  Tensor z_test;       // [n x H x W]
  ModelWeights weights;
  Tensor test_features;  // backbone output on the test frame
  Tensor gmsp_test;      // detached soft map on the test frame
};

// One train-frame input to full_forward: either an image (backbone runs) or
// precomputed features, plus the target-state encodings. gmsp_soft, when
// present, is used verbatim for the Eq.4 composition (tracker memory path).
struct NetworkInputFrame {
  Tensor image;
  Tensor features;
  TargetStateMaps maps;
  Tensor gmsp_soft;
};

namespace nn {

// Normalizes over channels at each spatial location.
inline Tensor channel_layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor rows = transpose(reshape(x, {c, h * w}));
  Tensor normed = layer_norm(rows, gain, bias);
  return reshape(transpose(normed), {c, h, w});
}

struct ConvBlock {
  Tensor w, b, gain, bias;
  int stride = 1, pad = 0;
  bool transposed = false;
  bool normed = true;  // Conv-Norm-ReLU when true, linear conv otherwise

  static ConvBlock create(ParameterStore& store, const std::string& prefix, int in, int out,
                          int kernel, int stride, int pad, Rng& rng, bool transposed = false,
                          bool normed = true) {
    ConvBlock cb;
    cb.stride = stride;
    cb.pad = pad;
    cb.transposed = transposed;
    cb.normed = normed;
    const Shape wshape = transposed ? Shape{in, out, kernel, kernel} : Shape{out, in, kernel, kernel};
    cb.w = store.create_normal(prefix + ".w", wshape, rng,
                               std::sqrt(2.0 / (in * kernel * kernel)));
    cb.b = store.create_full(prefix + ".b", {out}, 0.0);
    if (normed) {
      cb.gain = store.create_full(prefix + ".gain", {out}, 1.0);
      cb.bias = store.create_full(prefix + ".bias", {out}, 0.0);
    }
    return cb;
  }

  Tensor apply(const Tensor& x) const {
    Tensor y = transposed ? conv_transpose2d(x, w, stride, pad) : conv2d(x, w, stride, pad);
    y = add_channel_bias(y, b);
    if (normed) y = relu(channel_layer_norm(y, gain, bias));
    return y;
  }
};

struct LayerNormParams {
  Tensor gain, bias;
  static LayerNormParams create(ParameterStore& store, const std::string& prefix, int width) {
    return {store.create_full(prefix + ".gain", {width}, 1.0),
            store.create_full(prefix + ".bias", {width}, 0.0)};
  }
  Tensor apply(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

struct Linear {
  Tensor w, b;
  static Linear create(ParameterStore& store, const std::string& prefix, int in, int out, Rng& rng,
                       double stddev) {
    return {store.create_normal(prefix + ".w", {in, out}, rng, stddev),
            store.create_full(prefix + ".b", {out}, 0.0)};
  }
  Tensor apply(const Tensor& x) const { return add_rowvec(matmul(x, w), b); }
};

struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  int heads = 4, width = 64;

  static MultiHeadAttention create(ParameterStore& store, const std::string& prefix, int n,
                                   int heads, Rng& rng) {
    MultiHeadAttention m;
    m.heads = heads;
    m.width = n;
    const double sd = std::sqrt(1.0 / n);
    m.wq = Linear::create(store, prefix + ".q", n, n, rng, sd);
    m.wk = Linear::create(store, prefix + ".k", n, n, rng, sd);
    m.wv = Linear::create(store, prefix + ".v", n, n, rng, sd);
    m.wo = Linear::create(store, prefix + ".o", n, n, rng, sd);
    return m;
  }

  Tensor apply(const Tensor& queries, const Tensor& keys_values) const {
    const int dh = width / heads;
    Tensor q = wq.apply(queries), k = wk.apply(keys_values), v = wv.apply(keys_values);
    std::vector<Tensor> head_outs;
    head_outs.reserve(heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < heads; ++h) {
      Tensor qh = slice_cols(q, h * dh, dh);
      Tensor kh = slice_cols(k, h * dh, dh);
      Tensor vh = slice_cols(v, h * dh, dh);
      Tensor attn = softmax(mul_scalar(matmul(qh, transpose(kh)), scale), 1);
      head_outs.push_back(matmul(attn, vh));
    }
    return wo.apply(concat_cols(head_outs));
  }
};

struct FeedForward {
  Linear l1, l2;
  static FeedForward create(ParameterStore& store, const std::string& prefix, int n, int hidden,
                            Rng& rng) {
    return {Linear::create(store, prefix + ".l1", n, hidden, rng, std::sqrt(2.0 / n)),
            Linear::create(store, prefix + ".l2", hidden, n, rng, std::sqrt(1.0 / hidden))};
  }
  Tensor apply(const Tensor& x) const { return l2.apply(relu(l1.apply(x))); }
};

struct EncoderLayer {
  LayerNormParams ln1, ln2;
  MultiHeadAttention attn;
  FeedForward ffn;

  static EncoderLayer create(ParameterStore& store, const std::string& prefix,
                             const ModelConfig& cfg, Rng& rng) {
    return {LayerNormParams::create(store, prefix + ".ln1", cfg.enc.n),
            LayerNormParams::create(store, prefix + ".ln2", cfg.enc.n),
            MultiHeadAttention::create(store, prefix + ".attn", cfg.enc.n, cfg.heads, rng),
            FeedForward::create(store, prefix + ".ffn", cfg.enc.n, cfg.ffn_width(), rng)};
  }

  Tensor apply(const Tensor& x) const {
    Tensor h = ln1.apply(x);
    Tensor y = add(x, attn.apply(h, h));
    return add(y, ffn.apply(ln2.apply(y)));
  }
};

struct DecoderLayer {
  LayerNormParams ln1, ln2, ln3;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ffn;

  static DecoderLayer create(ParameterStore& store, const std::string& prefix,
                             const ModelConfig& cfg, Rng& rng) {
    return {LayerNormParams::create(store, prefix + ".ln1", cfg.enc.n),
            LayerNormParams::create(store, prefix + ".ln2", cfg.enc.n),
            LayerNormParams::create(store, prefix + ".ln3", cfg.enc.n),
            MultiHeadAttention::create(store, prefix + ".self", cfg.enc.n, cfg.heads, rng),
            MultiHeadAttention::create(store, prefix + ".cross", cfg.enc.n, cfg.heads, rng),
            FeedForward::create(store, prefix + ".ffn", cfg.enc.n, cfg.ffn_width(), rng)};
  }

  Tensor apply(const Tensor& q, const Tensor& memory) const {
    Tensor h = ln1.apply(q);
    Tensor y = add(q, self_attn.apply(h, h));
    y = add(y, cross_attn.apply(ln2.apply(y), memory));
    return add(y, ffn.apply(ln3.apply(y)));
  }
};

// 2-D sinusoidal positions: first half of the channels encodes x, second half y.
inline Tensor positional_encoding_2d(int feat_h, int feat_w, int n) {
  const int half = n / 2;
  std::vector<double> data(static_cast<size_t>(feat_h) * feat_w * n);
  for (int y = 0; y < feat_h; ++y)
    for (int x = 0; x < feat_w; ++x) {
      double* row = data.data() + (static_cast<size_t>(y) * feat_w + x) * n;
      for (int i = 0; i < half / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / half);
        row[2 * i] = std::sin(x * freq);
        row[2 * i + 1] = std::cos(x * freq);
        row[half + 2 * i] = std::sin(y * freq);
        row[half + 2 * i + 1] = std::cos(y * freq);
      }
    }
  return Tensor::from_data({feat_h * feat_w, n}, std::move(data));
}

}  // namespace nn

class Model {
 public:
  Model(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng = make_rng(seed, 0xa11);
    build(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  const EmbeddingSet& embeddings() const { return emb_; }

  // ---- blocks ----

  // Four stride-2 Conv-Norm-ReLU stages; 16x total stride.
  Tensor backbone_forward(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != cfg_.enc.image_h() ||
        image.dim(2) != cfg_.enc.image_w())
      throw DimensionError("backbone_forward: expected [3 x " +
                           std::to_string(cfg_.enc.image_h()) + " x " +
                           std::to_string(cfg_.enc.image_w()) + "] image");
    Tensor x = image;
    for (const auto& blk : backbone_) x = blk.apply(x);
    return x;
  }

  // Encoder-decoder over the feature grid; sigmoid soft keypoint map.
  Tensor gmsp_forward(const Tensor& features) const {
    if (!cfg_.use_gmsp) throw UsageError("gmsp_forward: model built without the GMSP module");
    Tensor x = gmsp_enc1_.apply(features);
    x = gmsp_enc2_.apply(x);
    x = gmsp_dec1_.apply(x);
    x = gmsp_dec2_.apply(x);
    return sigmoid(x);
  }

  // Joint encoding of train+test tokens; 2+2k learned queries decode into the
  // four weight groups. Returns test-frame tokens regridded as z_test.
  std::pair<Tensor, ModelWeights> transformer_predict(const std::vector<Tensor>& f_train,
                                                      const Tensor& f_test) const {
    if (f_train.empty()) throw DimensionError("transformer_predict: no train frames");
    const int n = cfg_.enc.n, hw = cfg_.enc.cells();
    std::vector<Tensor> token_blocks;
    token_blocks.reserve(f_train.size() + 1);
    for (const auto& f : f_train) token_blocks.push_back(tokens_of(f));
    token_blocks.push_back(tokens_of(f_test));
    Tensor x = concat_rows(token_blocks);
    for (const auto& layer : enc_layers_) x = layer.apply(x);
    Tensor enc_out = enc_final_ln_.apply(x);

    Tensor z_tokens = slice_rows(enc_out, static_cast<int>(f_train.size()) * hw, hw);
    Tensor z_test = reshape(transpose(z_tokens), {n, cfg_.enc.feat_h, cfg_.enc.feat_w});

    Tensor q = queries_;
    for (const auto& layer : dec_layers_) q = layer.apply(q, enc_out);
    Tensor w = dec_final_ln_.apply(q);

    ModelWeights mw;
    mw.w_loc = slice_rows(w, 0, 1);
    mw.w_br = slice_rows(w, 1, 1);
    mw.w_kloc = slice_rows(w, 2, cfg_.enc.k);
    mw.w_kp = slice_rows(w, 2 + cfg_.enc.k, cfg_.enc.k);
    return {z_test, mw};
  }

  // Per-cell correlation of weight rows with features: [rows x H x W].
  Tensor attention_map(const Tensor& weight_rows, const Tensor& z) const {
    Tensor flat = reshape(z, {cfg_.enc.n, cfg_.enc.cells()});
    return reshape(matmul(weight_rows, flat),
                   {weight_rows.dim(0), cfg_.enc.feat_h, cfg_.enc.feat_w});
  }

  Tensor localizer_forward(const Tensor& z_test, const Tensor& w_loc) const {
    return score_head(loc_head_, attention_map(w_loc, z_test));
  }

  Tensor keypoint_localizer_forward(const Tensor& z_test, const Tensor& w_kloc) const {
    return score_head(kloc_head_, attention_map(w_kloc, z_test));
  }

  Tensor bbox_regressor_forward(const Tensor& z_test, const Tensor& w_br) const {
    Tensor x = attention_map(w_br, z_test);
    for (const auto& blk : breg_head_.cnr) x = blk.apply(x);
    // linear output scaled to pixel range so the conv learns O(1) values
    return mul_scalar(breg_head_.out.apply(x), static_cast<double>(cfg_.enc.image_h()));
  }

  // Two towers (weight attention, GMSP soft maps) fused into offset maps. In
  // the no-GMSP ablation the soft-map branch is omitted entirely.
  Tensor omra_forward(const Tensor& z_test, const Tensor& w_kp, const Tensor& gmsp_test) const {
    Tensor t1 = attention_map(w_kp, z_test);
    for (const auto& blk : omra_tower1_) t1 = blk.apply(t1);
    Tensor fused = t1;
    if (cfg_.use_gmsp) {
      Tensor t2 = gmsp_test;
      for (const auto& blk : omra_tower2_) t2 = blk.apply(t2);
      const int hc = cfg_.head_channels, h = cfg_.enc.feat_h, w = cfg_.enc.feat_w;
      fused = reshape(concat_rows({reshape(t1, {hc, h * w}), reshape(t2, {hc, h * w})}),
                      {2 * hc, h, w});
    }
    for (const auto& blk : omra_fuse_) fused = blk.apply(fused);
    return mul_scalar(omra_out_.apply(fused), static_cast<double>(cfg_.enc.image_h()));
  }

  // ---- orchestration ----

  Tensor frame_features(const NetworkInputFrame& in) const {
    if (in.features.defined()) return in.features;
    if (!in.image.defined()) throw UsageError("full_forward: frame has neither image nor features");
    return backbone_forward(in.image);
  }

  NetworkOutputs full_forward(const std::vector<NetworkInputFrame>& train,
                              const NetworkInputFrame& test) const {
    NetworkOutputs out;
    std::vector<Tensor> f_train;
    f_train.reserve(train.size());
    for (const auto& tf : train) {
      Tensor x = frame_features(tf);
      Tensor soft;
      if (cfg_.use_gmsp) {
        if (tf.gmsp_soft.defined()) {
          soft = tf.gmsp_soft;
        } else {
          Tensor pred = gmsp_forward(x);
          out.k_gmsp_hat_train.push_back(pred);
          // composition sees the soft map as data; GMSP learns only from its
          // own supervision term
          soft = pred.detach();
        }
      }
      f_train.push_back(
          compose_train_features(x, tf.maps, emb_, cfg_.use_gmsp, soft, cfg_.enc, cfg_.embed));
    }

    out.test_features = frame_features(test);
    // frozen on the test path: no gradient reaches GMSP from here
    if (cfg_.use_gmsp)
      out.gmsp_test = test.gmsp_soft.defined() ? test.gmsp_soft
                                               : gmsp_forward(out.test_features).detach();
    else
      out.gmsp_test = Tensor::zeros({cfg_.enc.k, cfg_.enc.feat_h, cfg_.enc.feat_w});
    Tensor f_test = compose_test_features(out.test_features, emb_, cfg_.enc, cfg_.embed);

    auto [z_test, weights] = transformer_predict(f_train, f_test);
    out.z_test = z_test;
    out.weights = weights;
    out.b_gm_hat = localizer_forward(z_test, weights.w_loc);
    out.k_gm_hat = keypoint_localizer_forward(z_test, weights.w_kloc);
    out.b_om_hat = bbox_regressor_forward(z_test, weights.w_br);
    out.k_om_hat = omra_forward(z_test, weights.w_kp, out.gmsp_test);
    return out;
  }

  // ---- persistence ----

  void save(const std::string& path) const {
    save_checkpoint(path, params_, config_records());
  }

  static Model load(const std::string& path) {
    NamedTensors records = load_named_tensors(path);
    ModelConfig cfg = config_from_records(records, path);
    Model m(cfg, /*seed=*/0);
    load_checkpoint_into(path, m.params_);
    return m;
  }

  NamedTensors config_records() const {
    auto f = [](const std::string& name, std::vector<double> v) {
      return std::make_pair("config." + name,
                            Tensor::from_data({static_cast<int>(v.size())}, std::move(v)));
    };
    return {
        f("s", {static_cast<double>(cfg_.enc.s)}),
        f("k", {static_cast<double>(cfg_.enc.k)}),
        f("n", {static_cast<double>(cfg_.enc.n)}),
        f("sigma", {cfg_.enc.sigma}),
        f("feat", {static_cast<double>(cfg_.enc.feat_h), static_cast<double>(cfg_.enc.feat_w)}),
        f("heads", {static_cast<double>(cfg_.heads)}),
        f("layers", {static_cast<double>(cfg_.enc_layers), static_cast<double>(cfg_.dec_layers)}),
        f("head_channels", {static_cast<double>(cfg_.head_channels)}),
        f("backbone", {static_cast<double>(cfg_.backbone_channels[0]),
                       static_cast<double>(cfg_.backbone_channels[1]),
                       static_cast<double>(cfg_.backbone_channels[2])}),
        f("use_gmsp", {cfg_.use_gmsp ? 1.0 : 0.0}),
        f("embed", {cfg_.embed.phi_loc ? 1.0 : 0.0, cfg_.embed.phi_kp ? 1.0 : 0.0,
                    cfg_.embed.phi_test ? 1.0 : 0.0, cfg_.embed.x_test ? 1.0 : 0.0}),
    };
  }

  static ModelConfig config_from_records(const NamedTensors& records, const std::string& path) {
    auto get = [&records, &path](const std::string& name) -> const Tensor& {
      for (const auto& [n, t] : records)
        if (n == "config." + name) return t;
      throw SchemaError("checkpoint missing config record '" + name + "': " + path);
    };
    ModelConfig cfg;
    cfg.enc.s = static_cast<int>(get("s").data()[0]);
    cfg.enc.k = static_cast<int>(get("k").data()[0]);
    cfg.enc.n = static_cast<int>(get("n").data()[0]);
    cfg.enc.sigma = get("sigma").data()[0];
    cfg.enc.feat_h = static_cast<int>(get("feat").data()[0]);
    cfg.enc.feat_w = static_cast<int>(get("feat").data()[1]);
    cfg.heads = static_cast<int>(get("heads").data()[0]);
    cfg.enc_layers = static_cast<int>(get("layers").data()[0]);
    cfg.dec_layers = static_cast<int>(get("layers").data()[1]);
    cfg.head_channels = static_cast<int>(get("head_channels").data()[0]);
    cfg.backbone_channels = {static_cast<int>(get("backbone").data()[0]),
                             static_cast<int>(get("backbone").data()[1]),
                             static_cast<int>(get("backbone").data()[2])};
    cfg.use_gmsp = get("use_gmsp").data()[0] != 0.0;
    const auto& e = get("embed").data();
    cfg.embed = {e[0] != 0.0, e[1] != 0.0, e[2] != 0.0, e[3] != 0.0};
    return cfg;
  }

 private:
  void build(Rng& rng) {
    const int n = cfg_.enc.n;
    emb_ = EmbeddingSet::create(params_, cfg_.enc, /*with_psi_kp=*/!cfg_.use_gmsp, rng);

    const std::vector<int> widths = {3, cfg_.backbone_channels[0], cfg_.backbone_channels[1],
                                     cfg_.backbone_channels[2], n};
    for (int i = 0; i < 4; ++i)
      backbone_.push_back(nn::ConvBlock::create(params_, "backbone.b" + std::to_string(i),
                                                widths[i], widths[i + 1], 4, 2, 1, rng));

    gmsp_enc1_ = nn::ConvBlock::create(params_, "gmsp.enc1", n, n, 4, 2, 1, rng);
    gmsp_enc2_ = nn::ConvBlock::create(params_, "gmsp.enc2", n, n, 3, 2, 1, rng);
    gmsp_dec1_ = nn::ConvBlock::create(params_, "gmsp.dec1", n, n, 3, 2, 1, rng, true);
    gmsp_dec2_ =
        nn::ConvBlock::create(params_, "gmsp.dec2", n, cfg_.enc.k, 4, 2, 1, rng, true, false);

    pos_encoding_ = nn::positional_encoding_2d(cfg_.enc.feat_h, cfg_.enc.feat_w, n);
    queries_ = params_.create_normal("transformer.queries", {cfg_.num_queries(), n}, rng, 0.02);
    for (int i = 0; i < cfg_.enc_layers; ++i)
      enc_layers_.push_back(
          nn::EncoderLayer::create(params_, "transformer.enc" + std::to_string(i), cfg_, rng));
    for (int i = 0; i < cfg_.dec_layers; ++i)
      dec_layers_.push_back(
          nn::DecoderLayer::create(params_, "transformer.dec" + std::to_string(i), cfg_, rng));
    enc_final_ln_ = nn::LayerNormParams::create(params_, "transformer.enc_ln", n);
    dec_final_ln_ = nn::LayerNormParams::create(params_, "transformer.dec_ln", n);

    const int hc = cfg_.head_channels, k = cfg_.enc.k;
    auto make_cnr_stack = [&](const std::string& prefix, int in, int count,
                              std::vector<nn::ConvBlock>& dst) {
      int cur = in;
      for (int i = 0; i < count; ++i) {
        dst.push_back(nn::ConvBlock::create(params_, prefix + ".c" + std::to_string(i), cur, hc, 3,
                                            1, 1, rng));
        cur = hc;
      }
    };
    make_cnr_stack("head.loc", 1, 3, loc_head_.cnr);
    loc_head_.out = nn::ConvBlock::create(params_, "head.loc.out", hc, 1, 1, 1, 0, rng, false, false);
    make_cnr_stack("head.kloc", k, 3, kloc_head_.cnr);
    kloc_head_.out =
        nn::ConvBlock::create(params_, "head.kloc.out", hc, k, 1, 1, 0, rng, false, false);
    make_cnr_stack("head.breg", 1, 3, breg_head_.cnr);
    breg_head_.out =
        nn::ConvBlock::create(params_, "head.breg.out", hc, 4, 1, 1, 0, rng, false, false);

    make_cnr_stack("omra.t1", k, 3, omra_tower1_);
    make_cnr_stack("omra.t2", k, 4, omra_tower2_);
    make_cnr_stack("omra.fuse", 2 * hc, 4, omra_fuse_);
    omra_out_ =
        nn::ConvBlock::create(params_, "omra.out", hc, 2 * k, 1, 1, 0, rng, false, false);
  }

  struct Head {
    std::vector<nn::ConvBlock> cnr;
    nn::ConvBlock out;
  };

  Tensor score_head(const Head& head, Tensor x) const {
    for (const auto& blk : head.cnr) x = blk.apply(x);
    return sigmoid(head.out.apply(x));
  }

  // [n x H x W] -> [HW x n] tokens with positions added
  Tensor tokens_of(const Tensor& f) const {
    return add(transpose(reshape(f, {cfg_.enc.n, cfg_.enc.cells()})), pos_encoding_);
  }

  ModelConfig cfg_;
  ParameterStore params_;
  EmbeddingSet emb_;
  std::vector<nn::ConvBlock> backbone_;
  nn::ConvBlock gmsp_enc1_, gmsp_enc2_, gmsp_dec1_, gmsp_dec2_;
  Tensor pos_encoding_;
  Tensor queries_;
  std::vector<nn::EncoderLayer> enc_layers_;
  std::vector<nn::DecoderLayer> dec_layers_;
  nn::LayerNormParams enc_final_ln_, dec_final_ln_;
  Head loc_head_, kloc_head_, breg_head_;
  std::vector<nn::ConvBlock> omra_tower1_, omra_tower2_, omra_fuse_;
  nn::ConvBlock omra_out_;
};

}  // namespace step

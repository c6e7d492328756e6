#pragma once

// Target-state map encodings on the stride-s feature grid, the learnable
// embedding set that folds them into transformer inputs, and the inverse
// decodings from predicted maps back to image space.

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "step/data.hpp"
#include "step/params.hpp"
#include "step/tensor.hpp"

namespace step {

struct EncodingConfig {
  int s = 16;          // pixels per feature cell
  int k = 17;          // keypoints per target
  int n = 64;          // feature channels
  double sigma = 1.0;  // Gaussian width in cells
  int feat_h = 18, feat_w = 18;

  int image_h() const { return s * feat_h; }
  int image_w() const { return s * feat_w; }
  int cells() const { return feat_h * feat_w; }
  double half_stride() const { return std::floor(s / 2.0); }
  // Continuous image coordinate -> feature-grid position, the inverse of the
  // cell-center map j -> floor(s/2) + s*j.
  double to_grid_x(double x) const { return (x - half_stride()) / s; }
  double to_grid_y(double y) const { return (y - half_stride()) / s; }
  double cell_center_x(int jx) const { return half_stride() + s * jx; }
  double cell_center_y(int jy) const { return half_stride() + s * jy; }
};

struct TargetStateMaps {
  Tensor b_om;           // [4 x H x W] offsets to box edges, pixels
  Tensor b_gm;           // [1 x H x W] in [0,1]
  Tensor k_om;           // [2k x H x W] offsets to keypoints, pixels
  Tensor k_gm;           // [k x H x W] target keypoints only
  Tensor k_gmsp_target;  // [k x H x W] keypoints of every annotated object
};

// Channel pair (2i, 2i+1) holds (floor(s/2) + s*jx - x_i, floor(s/2) + s*jy - y_i)
// at every cell; channels of invisible keypoints stay zero.
inline Tensor keypoint_offset_map(const std::vector<Keypoint>& kps, const EncodingConfig& cfg) {
  const int h = cfg.feat_h, w = cfg.feat_w;
  Tensor t = Tensor::zeros({2 * static_cast<int>(kps.size()), h, w});
  auto& d = t.mutable_data();
  for (size_t i = 0; i < kps.size(); ++i) {
    if (kps[i].v == 0) continue;
    double* cx = d.data() + (2 * i) * static_cast<size_t>(h) * w;
    double* cy = d.data() + (2 * i + 1) * static_cast<size_t>(h) * w;
    for (int jy = 0; jy < h; ++jy)
      for (int jx = 0; jx < w; ++jx) {
        cx[static_cast<size_t>(jy) * w + jx] = cfg.cell_center_x(jx) - kps[i].x;
        cy[static_cast<size_t>(jy) * w + jx] = cfg.cell_center_y(jy) - kps[i].y;
      }
  }
  return t;
}

// LTRB-style offsets, x coordinates against x edges and y against y edges,
// channel order (x1, y1, x2, y2).
inline Tensor bbox_offset_map(const BBox& box, const EncodingConfig& cfg) {
  const int h = cfg.feat_h, w = cfg.feat_w;
  Tensor t = Tensor::zeros({4, h, w});
  auto& d = t.mutable_data();
  const double edges[4] = {box.x1, box.y1, box.x2, box.y2};
  for (int c = 0; c < 4; ++c) {
    const bool is_x = (c % 2 == 0);
    double* plane = d.data() + static_cast<size_t>(c) * h * w;
    for (int jy = 0; jy < h; ++jy)
      for (int jx = 0; jx < w; ++jx)
        plane[static_cast<size_t>(jy) * w + jx] =
            (is_x ? cfg.cell_center_x(jx) : cfg.cell_center_y(jy)) - edges[c];
  }
  return t;
}

struct GaussCenter {
  double x = 0, y = 0;
  bool active = false;
};

// One Gaussian bump per channel at the center's grid position; inactive
// centers leave the channel zero.
inline Tensor gaussian_map(const std::vector<GaussCenter>& centers, const EncodingConfig& cfg) {
  const int h = cfg.feat_h, w = cfg.feat_w;
  Tensor t = Tensor::zeros({static_cast<int>(centers.size()), h, w});
  auto& d = t.mutable_data();
  const double inv2s2 = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
  for (size_t c = 0; c < centers.size(); ++c) {
    if (!centers[c].active) continue;
    const double gx = cfg.to_grid_x(centers[c].x), gy = cfg.to_grid_y(centers[c].y);
    double* plane = d.data() + c * static_cast<size_t>(h) * w;
    for (int jy = 0; jy < h; ++jy)
      for (int jx = 0; jx < w; ++jx) {
        const double dx = jx - gx, dy = jy - gy;
        plane[static_cast<size_t>(jy) * w + jx] = std::exp(-(dx * dx + dy * dy) * inv2s2);
      }
  }
  return t;
}

// Per-channel max over several center sets (one per object); used for the
// all-objects keypoint map so K_gm <= K_gmsp holds elementwise.
inline Tensor gaussian_map_multi(const std::vector<std::vector<GaussCenter>>& per_object,
                                 int channels, const EncodingConfig& cfg) {
  Tensor acc = Tensor::zeros({channels, cfg.feat_h, cfg.feat_w});
  for (const auto& centers : per_object) {
    Tensor one = gaussian_map(centers, cfg);
    auto& a = acc.mutable_data();
    for (size_t i = 0; i < a.size(); ++i) a[i] = std::max(a[i], one.data()[i]);
  }
  return acc;
}

inline std::vector<GaussCenter> keypoint_centers(const Annotation& a) {
  std::vector<GaussCenter> cs;
  cs.reserve(a.keypoints.size());
  for (const auto& kp : a.keypoints) cs.push_back({kp.x, kp.y, kp.v > 0});
  return cs;
}

// All five target-state maps for one target in one frame.
inline TargetStateMaps encode_target_state(const Frame& frame, const Annotation& target,
                                           const EncodingConfig& cfg) {
  TargetStateMaps maps;
  maps.b_om = bbox_offset_map(target.bbox, cfg);
  maps.b_gm = gaussian_map({{target.bbox.cx(), target.bbox.cy(), true}}, cfg);
  maps.k_om = keypoint_offset_map(target.keypoints, cfg);
  maps.k_gm = gaussian_map(keypoint_centers(target), cfg);
  std::vector<std::vector<GaussCenter>> all;
  for (const auto& a : frame.annotations) all.push_back(keypoint_centers(a));
  maps.k_gmsp_target = gaussian_map_multi(all, cfg.k, cfg);
  return maps;
}

// ---- embeddings and composition -----------------------------------------------

// Two-layer per-cell MLP lifting offset maps into n channels. Inputs are
// scaled by 1/image_side before the first layer; stored maps stay in pixels.
struct PerCellMlp {
  Tensor w1, b1, w2, b2;

  static PerCellMlp create(ParameterStore& store, const std::string& prefix, int in, int hidden,
                           int out, Rng& rng) {
    PerCellMlp m;
    m.w1 = store.create_normal(prefix + ".w1", {in, hidden}, rng, std::sqrt(2.0 / in));
    m.b1 = store.create_full(prefix + ".b1", {hidden}, 0.0);
    m.w2 = store.create_normal(prefix + ".w2", {hidden, out}, rng, std::sqrt(2.0 / hidden));
    m.b2 = store.create_full(prefix + ".b2", {out}, 0.0);
    return m;
  }

  // maps [C x H x W] -> [out x H x W]
  Tensor apply(const Tensor& maps, double input_scale) const {
    const int c = maps.dim(0), h = maps.dim(1), w = maps.dim(2);
    Tensor cells = transpose(reshape(mul_scalar(maps, input_scale), {c, h * w}));  // [HW x C]
    Tensor hid = relu(add_rowvec(matmul(cells, w1), b1));
    Tensor out = add_rowvec(matmul(hid, w2), b2);
    return reshape(transpose(out), {w2.dim(1), h, w});
  }
};

// Ablation switches for the composition terms.
struct EmbedToggles {
  bool phi_loc = true;
  bool phi_kp = true;
  bool phi_test = true;
  bool x_test = true;
};

struct EmbeddingSet {
  Tensor phi_loc;   // [1 x n]
  Tensor phi_kp;    // [k x n]
  Tensor phi_test;  // [1 x n]
  PerCellMlp psi_b;                  // 4 -> n -> n
  std::optional<PerCellMlp> psi_kp;  // 2k -> n -> n, only when Eq.3 composition trains

  static EmbeddingSet create(ParameterStore& store, const EncodingConfig& cfg, bool with_psi_kp,
                             Rng& rng) {
    EmbeddingSet e;
    e.phi_loc = store.create_normal("embed.phi_loc", {1, cfg.n}, rng, 0.02);
    e.phi_kp = store.create_normal("embed.phi_kp", {cfg.k, cfg.n}, rng, 0.02);
    e.phi_test = store.create_normal("embed.phi_test", {1, cfg.n}, rng, 0.02);
    e.psi_b = PerCellMlp::create(store, "embed.psi_b", 4, cfg.n, cfg.n, rng);
    if (with_psi_kp)
      e.psi_kp = PerCellMlp::create(store, "embed.psi_kp", 2 * cfg.k, cfg.n, cfg.n, rng);
    return e;
  }
};

// phi [C x n] weighting maps [C x H x W]: out[c',y,x] = sum_c phi[c,c'] * maps[c,y,x].
inline Tensor embed_weighted(const Tensor& phi, const Tensor& maps) {
  const int c = maps.dim(0), h = maps.dim(1), w = maps.dim(2);
  Tensor flat = reshape(maps, {c, h * w});
  return reshape(matmul(transpose(phi), flat), {phi.dim(1), h, w});
}

// Training-feature composition. With use_gmsp the keypoint state enters only
// through the supplied soft map; otherwise the exact keypoint encodings are
// folded in through psi_kp and phi_kp.
inline Tensor compose_train_features(const Tensor& features, const TargetStateMaps& maps,
                                     const EmbeddingSet& emb, bool use_gmsp,
                                     const Tensor& gmsp_map, const EncodingConfig& cfg,
                                     const EmbedToggles& toggles = {}) {
  if (features.dim(0) != cfg.n)
    throw DimensionError("compose_train_features: feature channels != n");
  const double off_scale = 1.0 / cfg.image_h();
  Tensor f = add(features, emb.psi_b.apply(maps.b_om, off_scale));
  if (toggles.phi_loc) f = add(f, embed_weighted(emb.phi_loc, maps.b_gm));
  if (use_gmsp) {
    if (toggles.phi_kp) f = add(f, embed_weighted(emb.phi_kp, gmsp_map));
  } else {
    if (!emb.psi_kp)
      throw UsageError("compose_train_features: model has no psi_kp (built for gmsp mode)");
    f = add(f, emb.psi_kp->apply(maps.k_om, off_scale));
    if (toggles.phi_kp) f = add(f, embed_weighted(emb.phi_kp, maps.k_gm));
  }
  return f;
}

// f_test = X_test + repeat(phi_test); either side can be ablated away.
inline Tensor compose_test_features(const Tensor& features, const EmbeddingSet& emb,
                                    const EncodingConfig& cfg, const EmbedToggles& toggles = {}) {
  Tensor token_map;
  if (toggles.phi_test) {
    Tensor ones = Tensor::full({1, cfg.cells()}, 1.0);
    token_map = reshape(matmul(transpose(emb.phi_test), ones), {cfg.n, cfg.feat_h, cfg.feat_w});
  }
  if (toggles.x_test && toggles.phi_test) return add(features, token_map);
  if (toggles.x_test) return features;
  if (toggles.phi_test) return token_map;
  return Tensor::zeros(features.shape());
}

// ---- decoding -------------------------------------------------------------------

struct DecodedKeypoint {
  double x = 0, y = 0;
  double conf = 0;
};

namespace detail {
inline int argmax_plane(const Tensor& t, int channel) {
  const int hw = t.dim(1) * t.dim(2);
  const double* p = t.data().data() + static_cast<size_t>(channel) * hw;
  int best = 0;
  for (int i = 1; i < hw; ++i)
    if (p[i] > p[best]) best = i;
  return best;
}
}  // namespace detail

// Peak cell per channel, then invert the offset map at that cell.
inline std::vector<DecodedKeypoint> decode_keypoints(const Tensor& k_gm_hat,
                                                     const Tensor& k_om_hat,
                                                     const EncodingConfig& cfg) {
  if (k_gm_hat.dim(0) * 2 != k_om_hat.dim(0))
    throw DimensionError("decode_keypoints: k_om channels must be twice k_gm channels");
  const int k = k_gm_hat.dim(0), w = k_gm_hat.dim(2);
  const int hw = k_gm_hat.dim(1) * w;
  std::vector<DecodedKeypoint> out;
  out.reserve(k);
  for (int i = 0; i < k; ++i) {
    const int j = detail::argmax_plane(k_gm_hat, i);
    const int jy = j / w, jx = j % w;
    const double off_x = k_om_hat.data()[(2 * i) * static_cast<size_t>(hw) + j];
    const double off_y = k_om_hat.data()[(2 * i + 1) * static_cast<size_t>(hw) + j];
    out.push_back({cfg.cell_center_x(jx) - off_x, cfg.cell_center_y(jy) - off_y,
                   k_gm_hat.data()[i * static_cast<size_t>(hw) + j]});
  }
  return out;
}

// Peak of the localization map, LTRB offsets inverted to xyxy. Geometrically
// invalid boxes keep their coordinates but are reported with confidence 0.
inline std::pair<BBox, double> decode_bbox(const Tensor& b_gm_hat, const Tensor& b_om_hat,
                                           const EncodingConfig& cfg) {
  if (b_om_hat.dim(0) != 4) throw DimensionError("decode_bbox: expected 4 offset channels");
  const int w = b_gm_hat.dim(2);
  const int hw = b_gm_hat.dim(1) * w;
  const int j = detail::argmax_plane(b_gm_hat, 0);
  const int jy = j / w, jx = j % w;
  const double cx = cfg.cell_center_x(jx), cy = cfg.cell_center_y(jy);
  BBox box{cx - b_om_hat.data()[0 * static_cast<size_t>(hw) + j],
           cy - b_om_hat.data()[1 * static_cast<size_t>(hw) + j],
           cx - b_om_hat.data()[2 * static_cast<size_t>(hw) + j],
           cy - b_om_hat.data()[3 * static_cast<size_t>(hw) + j]};
  double conf = b_gm_hat.data()[j];
  if (!box.valid()) conf = 0.0;
  return {box, conf};
}

}  // namespace step

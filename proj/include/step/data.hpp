#pragma once

// Dataset loading (COCO-keypoint-style JSON interchange) and synthetic
// multi-frame sequence generation via interpolated random affines.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "step/image.hpp"
#include "step/tensor.hpp"

namespace step {

struct Keypoint {
  double x = 0, y = 0;
  int v = 0;  // 0 absent, 1 labeled-occluded, 2 visible
};

struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x1 < x2 && y1 < y2; }
};

struct Annotation {
  int64_t target_id = 0;
  BBox bbox;
  std::vector<Keypoint> keypoints;
};

struct Frame {
  Tensor image;  // [3 x H x W] in [0,1]
  std::vector<Annotation> annotations;

  int height() const { return image.dim(1); }
  int width() const { return image.dim(2); }
  const Annotation* find_target(int64_t target_id) const {
    for (const auto& a : annotations)
      if (a.target_id == target_id) return &a;
    return nullptr;
  }
};

enum class SequenceSource { natural, synthetic };

struct Sequence {
  int64_t id = 0;
  std::vector<Frame> frames;
  SequenceSource source = SequenceSource::natural;
};

struct Dataset {
  int k = 0;  // keypoints per annotation
  std::vector<Sequence> sequences;
};

struct AffineParams {
  double rotation = 0.0;  // radians
  double scale = 1.0;
  double tx = 0.0, ty = 0.0;  // pixels
  double shear = 0.0;  // radians

  static AffineParams lerp(const AffineParams& a, const AffineParams& b, double t) {
    return {a.rotation + (b.rotation - a.rotation) * t, a.scale + (b.scale - a.scale) * t,
            a.tx + (b.tx - a.tx) * t, a.ty + (b.ty - a.ty) * t,
            a.shear + (b.shear - a.shear) * t};
  }
};

struct AffineRanges {
  double rotation = 15.0 * std::numbers::pi / 180.0;  // +/- radians
  double scale_min = 0.9, scale_max = 1.1;
  double translate_frac = 0.10;  // +/- fraction of image side
  double shear = 5.0 * std::numbers::pi / 180.0;  // +/- radians

  static AffineRanges identity() { return {0.0, 1.0, 1.0, 0.0, 0.0}; }
};

// Rotation, shear and scale about the image center, then translation.
inline Affine affine_from_params(const AffineParams& p, double cx, double cy) {
  const double cs = std::cos(p.rotation), sn = std::sin(p.rotation);
  const double sh = std::tan(p.shear);
  // L = R * Shear_x * Scale
  Affine m;
  m.a = p.scale * cs;
  m.b = p.scale * (cs * sh - sn);
  m.d = p.scale * sn;
  m.e = p.scale * (sn * sh + cs);
  m.c = cx + p.tx - (m.a * cx + m.b * cy);
  m.f = cy + p.ty - (m.d * cx + m.e * cy);
  return m;
}

// ---- dataset JSON -------------------------------------------------------------

// Schema: {"k", "images":[{id,file_name,width,height}],
//          "annotations":[{id,image_id,track_id,bbox[x,y,w,h],keypoints[x,y,v]*k}],
//          "sequences":[{id,image_ids:[...]}]}
inline Dataset load_dataset(const std::string& path, int canonical_size = 288) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open dataset: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("dataset JSON parse failure in " + path + ": " + e.what());
  }
  Dataset ds;
  try {
    ds.k = j.at("k").get<int>();
  } catch (const nlohmann::json::exception&) {
    throw SchemaError("dataset missing integer field 'k': " + path);
  }
  const auto dir = std::filesystem::path(path).parent_path();

  struct ImageRec {
    std::string file;
    int width = 0, height = 0;
  };
  std::unordered_map<int64_t, ImageRec> images;
  for (const auto& im : j.value("images", nlohmann::json::array())) {
    try {
      images[im.at("id").get<int64_t>()] = {im.at("file_name").get<std::string>(),
                                            im.at("width").get<int>(),
                                            im.at("height").get<int>()};
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed image record: ") + e.what());
    }
  }

  std::unordered_map<int64_t, std::vector<Annotation>> anns_by_image;
  for (const auto& an : j.value("annotations", nlohmann::json::array())) {
    int64_t ann_id = -1;
    try {
      ann_id = an.at("id").get<int64_t>();
      Annotation a;
      a.target_id = an.at("track_id").get<int64_t>();
      const auto bb = an.at("bbox");
      const double bx = bb.at(0).get<double>(), by = bb.at(1).get<double>();
      const double bw = bb.at(2).get<double>(), bh = bb.at(3).get<double>();
      a.bbox = {bx, by, bx + bw, by + bh};
      if (!a.bbox.valid())
        throw ParseError("annotation " + std::to_string(ann_id) + ": degenerate bbox");
      const auto kps = an.at("keypoints");
      if (static_cast<int>(kps.size()) != 3 * ds.k)
        throw SchemaError("annotation " + std::to_string(ann_id) + ": expected " +
                          std::to_string(3 * ds.k) + " keypoint values, got " +
                          std::to_string(kps.size()));
      for (int i = 0; i < ds.k; ++i)
        a.keypoints.push_back({kps.at(3 * i).get<double>(), kps.at(3 * i + 1).get<double>(),
                               kps.at(3 * i + 2).get<int>()});
      anns_by_image[an.at("image_id").get<int64_t>()].push_back(std::move(a));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("malformed annotation " + std::to_string(ann_id) + ": " + e.what());
    }
  }

  for (const auto& sq : j.value("sequences", nlohmann::json::array())) {
    Sequence seq;
    try {
      seq.id = sq.at("id").get<int64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed sequence record: ") + e.what());
    }
    for (const auto& img_id_j : sq.at("image_ids")) {
      const int64_t img_id = img_id_j.get<int64_t>();
      auto it = images.find(img_id);
      if (it == images.end())
        throw SchemaError("sequence " + std::to_string(seq.id) + " references unknown image " +
                          std::to_string(img_id));
      Frame f;
      f.image = load_image((dir / it->second.file).string());
      if (f.image.dim(1) != it->second.height || f.image.dim(2) != it->second.width)
        throw SchemaError("image " + std::to_string(img_id) + ": size on disk differs from record");
      double scale = 1.0;
      if (f.image.dim(1) != canonical_size || f.image.dim(2) != canonical_size) {
        scale = static_cast<double>(canonical_size) / std::max(f.image.dim(1), f.image.dim(2));
        const int nh = static_cast<int>(std::lround(f.image.dim(1) * scale));
        const int nw = static_cast<int>(std::lround(f.image.dim(2) * scale));
        Tensor resized = resize_bilinear(f.image, nh, nw);
        // pad bottom/right to the canonical square
        Tensor canvas = Tensor::zeros({3, canonical_size, canonical_size});
        for (int c = 0; c < 3; ++c)
          for (int y = 0; y < nh; ++y)
            std::copy_n(resized.data().begin() + (static_cast<size_t>(c) * nh + y) * nw, nw,
                        canvas.mutable_data().begin() +
                            (static_cast<size_t>(c) * canonical_size + y) * canonical_size);
        f.image = canvas;
      }
      auto ait = anns_by_image.find(img_id);
      if (ait != anns_by_image.end()) {
        for (Annotation a : ait->second) {
          a.bbox = {a.bbox.x1 * scale, a.bbox.y1 * scale, a.bbox.x2 * scale, a.bbox.y2 * scale};
          for (auto& kp : a.keypoints) {
            kp.x *= scale;
            kp.y *= scale;
            if (kp.v > 0 && (kp.x < 0 || kp.x >= canonical_size || kp.y < 0 ||
                             kp.y >= canonical_size))
              throw SchemaError("annotation for image " + std::to_string(img_id) +
                                ": visible keypoint outside image bounds");
          }
          f.annotations.push_back(std::move(a));
        }
      }
      seq.frames.push_back(std::move(f));
    }
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

// Writes dataset JSON plus one PPM per frame into dir. Frames are shared per
// sequence; annotation content round trips exactly.
inline std::string save_dataset(const Dataset& ds, const std::string& dir,
                                const std::string& json_name = "dataset.json") {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json j;
  j["k"] = ds.k;
  j["images"] = nlohmann::json::array();
  j["annotations"] = nlohmann::json::array();
  j["sequences"] = nlohmann::json::array();
  int64_t img_id = 1, ann_id = 1;
  for (const auto& seq : ds.sequences) {
    nlohmann::json sq;
    sq["id"] = seq.id;
    auto& ids = sq["image_ids"] = nlohmann::json::array();
    for (size_t t = 0; t < seq.frames.size(); ++t) {
      const Frame& f = seq.frames[t];
      char name[64];
      std::snprintf(name, sizeof(name), "seq%04lld_f%03zu.ppm",
                    static_cast<long long>(seq.id), t);
      save_ppm((fs::path(dir) / name).string(), f.image);
      j["images"].push_back({{"id", img_id},
                             {"file_name", name},
                             {"width", f.width()},
                             {"height", f.height()}});
      for (const auto& a : f.annotations) {
        nlohmann::json an;
        an["id"] = ann_id++;
        an["image_id"] = img_id;
        an["track_id"] = a.target_id;
        an["bbox"] = {a.bbox.x1, a.bbox.y1, a.bbox.width(), a.bbox.height()};
        auto& kv = an["keypoints"] = nlohmann::json::array();
        for (const auto& kp : a.keypoints) {
          kv.push_back(kp.x);
          kv.push_back(kp.y);
          kv.push_back(kp.v);
        }
        j["annotations"].push_back(std::move(an));
      }
      ids.push_back(img_id++);
    }
    j["sequences"].push_back(std::move(sq));
  }
  const std::string json_path = (fs::path(dir) / json_name).string();
  std::ofstream os(json_path);
  if (!os) throw IoError("cannot write dataset JSON: " + json_path);
  os << j.dump(1) << "\n";
  return json_path;
}

// ---- synthetic sequences ------------------------------------------------------

// Deterministic core: warps `frame` through affines interpolated from `start`
// to `end`, mapping annotations exactly and recomputing boxes as corner hulls.
inline Sequence synth_sequence_between(const Frame& frame, int n_frames,
                                       const AffineParams& start, const AffineParams& end,
                                       int64_t seq_id = 0) {
  if (n_frames < 2) throw SamplingError("synth_sequence: need at least 2 frames");
  const int h = frame.height(), w = frame.width();
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  Sequence seq;
  seq.id = seq_id;
  seq.source = SequenceSource::synthetic;
  for (int t = 0; t < n_frames; ++t) {
    const AffineParams p = AffineParams::lerp(start, end, static_cast<double>(t) / (n_frames - 1));
    const Affine m = affine_from_params(p, cx, cy);
    Frame out;
    out.image = warp_affine(frame.image, m, h, w);
    for (const auto& a : frame.annotations) {
      Annotation ta;
      ta.target_id = a.target_id;
      const std::array<std::array<double, 2>, 4> corners = {
          m.apply(a.bbox.x1, a.bbox.y1), m.apply(a.bbox.x2, a.bbox.y1),
          m.apply(a.bbox.x1, a.bbox.y2), m.apply(a.bbox.x2, a.bbox.y2)};
      double x1 = corners[0][0], x2 = corners[0][0], y1 = corners[0][1], y2 = corners[0][1];
      for (const auto& c : corners) {
        x1 = std::min(x1, c[0]);
        x2 = std::max(x2, c[0]);
        y1 = std::min(y1, c[1]);
        y2 = std::max(y2, c[1]);
      }
      ta.bbox = {x1, y1, x2, y2};
      for (const auto& kp : a.keypoints) {
        if (kp.v == 0) {
          ta.keypoints.push_back({0, 0, 0});
          continue;
        }
        const auto q = m.apply(kp.x, kp.y);
        const bool inside = q[0] >= 0 && q[0] < w && q[1] >= 0 && q[1] < h;
        ta.keypoints.push_back({q[0], q[1], inside ? kp.v : 0});
      }
      out.annotations.push_back(std::move(ta));
    }
    seq.frames.push_back(std::move(out));
  }
  return seq;
}

inline AffineParams sample_affine_params(const AffineRanges& r, int side, Rng& rng) {
  std::uniform_real_distribution<double> rot(-r.rotation, r.rotation);
  std::uniform_real_distribution<double> sc(r.scale_min, r.scale_max);
  std::uniform_real_distribution<double> tr(-r.translate_frac * side, r.translate_frac * side);
  std::uniform_real_distribution<double> sh(-r.shear, r.shear);
  return {rot(rng), sc(rng), tr(rng), tr(rng), sh(rng)};
}

inline Sequence synth_sequence(const Frame& frame, int n_frames, const AffineRanges& ranges,
                               uint64_t seed, int64_t seq_id = 0) {
  if (n_frames < 2) throw SamplingError("synth_sequence: need at least 2 frames");
  Rng rng = make_rng(seed, 0x5e9);
  const int side = std::max(frame.height(), frame.width());
  for (int attempt = 0; attempt < 100; ++attempt) {
    const AffineParams start = sample_affine_params(ranges, side, rng);
    const AffineParams end = sample_affine_params(ranges, side, rng);
    const double cx = (frame.width() - 1) / 2.0, cy = (frame.height() - 1) / 2.0;
    bool ok = true;
    for (int t = 0; t < n_frames && ok; ++t) {
      const AffineParams p =
          AffineParams::lerp(start, end, static_cast<double>(t) / (n_frames - 1));
      ok = std::abs(affine_from_params(p, cx, cy).det()) >= 1e-6;
    }
    if (ok) return synth_sequence_between(frame, n_frames, start, end, seq_id);
  }
  throw SamplingError("synth_sequence: could not sample a non-degenerate affine in 100 tries");
}

// ---- triplet sampling ----------------------------------------------------------

struct Triplet {
  int train_a = 0, train_b = 0, test = 0;  // frame indices
  int64_t target_id = 0;
};

// Three distinct frames containing a common target; two train (in index order
// of the draw), one test.
inline Triplet sample_triplet(const Sequence& seq, uint64_t seed) {
  if (seq.frames.size() < 3)
    throw SamplingError("sample_triplet: sequence has fewer than 3 frames");
  Rng rng = make_rng(seed, 0x731);

  std::vector<int64_t> candidates;
  {
    std::unordered_map<int64_t, int> count;
    for (const auto& f : seq.frames)
      for (const auto& a : f.annotations) ++count[a.target_id];
    for (const auto& [tid, n] : count)
      if (n >= 3) candidates.push_back(tid);
    std::sort(candidates.begin(), candidates.end());
  }
  if (candidates.empty())
    throw SamplingError("sample_triplet: no target appears in 3 or more frames");
  const int64_t target =
      candidates[std::uniform_int_distribution<size_t>(0, candidates.size() - 1)(rng)];

  std::vector<int> frames_with_target;
  for (size_t t = 0; t < seq.frames.size(); ++t)
    if (seq.frames[t].find_target(target)) frames_with_target.push_back(static_cast<int>(t));

  // Fisher-Yates prefix of 3.
  for (int i = 0; i < 3; ++i) {
    const size_t jpick =
        std::uniform_int_distribution<size_t>(i, frames_with_target.size() - 1)(rng);
    std::swap(frames_with_target[i], frames_with_target[jpick]);
  }
  return {frames_with_target[0], frames_with_target[1], frames_with_target[2], target};
}

}  // namespace step

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "step/data.hpp"

using namespace step;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("step_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Frame checker_frame(int size, int k) {
  Tensor img = Tensor::zeros({3, size, size});
  auto& d = img.mutable_data();
  const size_t plane = static_cast<size_t>(size) * size;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double v = ((x / 16 + y / 16) % 2) ? 0.75 : 0.25;
      for (int c = 0; c < 3; ++c) d[c * plane + y * static_cast<size_t>(size) + x] = v;
    }
  Frame f;
  f.image = img;
  Annotation a;
  a.target_id = 1;
  a.bbox = {60, 80, 180, 200};
  for (int i = 0; i < k; ++i)
    a.keypoints.push_back({80.0 + 10 * i, 100.0 + 12 * i, 2});
  f.annotations.push_back(a);
  return f;
}

}  // namespace

TEST_CASE("affine round trip is exact") {
  AffineParams p{0.3, 1.07, 12.5, -4.0, 0.05};
  Affine m = affine_from_params(p, 143.5, 143.5);
  Affine inv = m.inverse();
  Rng rng = make_rng(5);
  std::uniform_real_distribution<double> u(0.0, 287.0);
  for (int i = 0; i < 200; ++i) {
    const double x = u(rng), y = u(rng);
    auto fwd = m.apply(x, y);
    auto back = inv.apply(fwd[0], fwd[1]);
    REQUIRE(std::abs(back[0] - x) < 1e-9);
    REQUIRE(std::abs(back[1] - y) < 1e-9);
  }
}

TEST_CASE("ppm round trip") {
  auto dir = temp_dir("ppm");
  Frame f = checker_frame(64, 1);
  save_ppm((dir / "a.ppm").string(), f.image);
  Tensor back = load_ppm((dir / "a.ppm").string());
  REQUIRE(back.shape() == f.image.shape());
  for (size_t i = 0; i < back.data().size(); ++i)
    REQUIRE(std::abs(back.data()[i] - f.image.data()[i]) < 0.5 / 255.0 + 1e-12);
}

TEST_CASE("dataset save/load round trips annotation content") {
  auto dir = temp_dir("ds_roundtrip");
  Dataset ds;
  ds.k = 3;
  Frame f = checker_frame(288, 3);
  f.annotations[0].keypoints[2].v = 0;
  f.annotations[0].keypoints[1].v = 1;
  Sequence seq;
  seq.id = 7;
  seq.frames = {f, f};
  ds.sequences.push_back(seq);

  const std::string json = save_dataset(ds, dir.string());
  Dataset back = load_dataset(json);
  REQUIRE(back.k == 3);
  REQUIRE(back.sequences.size() == 1);
  REQUIRE(back.sequences[0].frames.size() == 2);
  const auto& a0 = ds.sequences[0].frames[0].annotations[0];
  const auto& a1 = back.sequences[0].frames[0].annotations[0];
  REQUIRE(a1.target_id == a0.target_id);
  REQUIRE(a1.bbox.x1 == Catch::Approx(a0.bbox.x1).margin(1e-9));
  REQUIRE(a1.bbox.y2 == Catch::Approx(a0.bbox.y2).margin(1e-9));
  REQUIRE(a1.keypoints.size() == 3);
  for (int i = 0; i < 3; ++i) {
    REQUIRE(a1.keypoints[i].x == Catch::Approx(a0.keypoints[i].x).margin(1e-9));
    REQUIRE(a1.keypoints[i].y == Catch::Approx(a0.keypoints[i].y).margin(1e-9));
    REQUIRE(a1.keypoints[i].v == a0.keypoints[i].v);
  }
}

TEST_CASE("load_dataset converts xywh and preserves v flags") {
  auto dir = temp_dir("ds_xywh");
  Frame f = checker_frame(288, 3);
  save_ppm((dir / "img.ppm").string(), f.image);
  nlohmann::json j;
  j["k"] = 3;
  j["images"] = {{{"id", 1}, {"file_name", "img.ppm"}, {"width", 288}, {"height", 288}}};
  j["annotations"] = {{{"id", 1},
                       {"image_id", 1},
                       {"track_id", 4},
                       {"bbox", {10, 20, 30, 40}},
                       {"keypoints", {15, 25, 0, 20, 30, 1, 25, 35, 2}}}};
  j["sequences"] = {{{"id", 1}, {"image_ids", {1}}}};
  std::ofstream((dir / "d.json").string()) << j.dump();

  Dataset ds = load_dataset((dir / "d.json").string());
  REQUIRE(ds.sequences.size() == 1);
  const auto& a = ds.sequences[0].frames[0].annotations[0];
  REQUIRE(a.bbox.x1 == 10.0);
  REQUIRE(a.bbox.y1 == 20.0);
  REQUIRE(a.bbox.x2 == 40.0);
  REQUIRE(a.bbox.y2 == 60.0);
  REQUIRE(a.keypoints[0].v == 0);
  REQUIRE(a.keypoints[1].v == 1);
  REQUIRE(a.keypoints[2].v == 2);
}

TEST_CASE("load_dataset rejects bad keypoint counts and malformed records") {
  auto dir = temp_dir("ds_bad");
  Frame f = checker_frame(288, 2);
  save_ppm((dir / "img.ppm").string(), f.image);
  nlohmann::json j;
  j["k"] = 2;
  j["images"] = {{{"id", 1}, {"file_name", "img.ppm"}, {"width", 288}, {"height", 288}}};
  j["annotations"] = {{{"id", 9},
                       {"image_id", 1},
                       {"track_id", 1},
                       {"bbox", {0, 0, 10, 10}},
                       {"keypoints", {1, 2, 2}}}};  // one keypoint, k=2
  j["sequences"] = {{{"id", 1}, {"image_ids", {1}}}};
  std::ofstream((dir / "d.json").string()) << j.dump();
  try {
    load_dataset((dir / "d.json").string());
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    REQUIRE(std::string(e.what()).find("9") != std::string::npos);
  }

  j["annotations"][0]["keypoints"] = {1, 2, 2, 3, 4, 2};
  j["annotations"][0].erase("bbox");
  std::ofstream((dir / "d.json").string()) << j.dump();
  REQUIRE_THROWS_AS(load_dataset((dir / "d.json").string()), ParseError);
}

TEST_CASE("identity synth leaves frames untouched") {
  Frame f = checker_frame(288, 3);
  Sequence seq = synth_sequence(f, 4, AffineRanges::identity(), 42);
  REQUIRE(seq.frames.size() == 4);
  REQUIRE(seq.source == SequenceSource::synthetic);
  for (const auto& fr : seq.frames) {
    REQUIRE(fr.image.data() == f.image.data());
    REQUIRE(fr.annotations[0].bbox.x1 == Catch::Approx(f.annotations[0].bbox.x1).margin(1e-9));
    for (size_t i = 0; i < fr.annotations[0].keypoints.size(); ++i) {
      REQUIRE(fr.annotations[0].keypoints[i].x ==
              Catch::Approx(f.annotations[0].keypoints[i].x).margin(1e-9));
      REQUIRE(fr.annotations[0].keypoints[i].v == f.annotations[0].keypoints[i].v);
    }
  }
}

TEST_CASE("pure translation advances keypoints linearly") {
  Frame f = checker_frame(288, 2);
  AffineParams start;                      // identity
  AffineParams end{0, 1.0, 56.0, 0.0, 0};  // +56 px over 15 frames = 4 px/frame
  Sequence seq = synth_sequence_between(f, 15, start, end);
  const double x0 = f.annotations[0].keypoints[0].x;
  for (int t = 0; t < 15; ++t) {
    const auto& kp = seq.frames[t].annotations[0].keypoints[0];
    REQUIRE(kp.x == Catch::Approx(x0 + 4.0 * t).margin(1e-9));
    REQUIRE(kp.y == Catch::Approx(f.annotations[0].keypoints[0].y).margin(1e-9));
  }
}

TEST_CASE("keypoints leaving the image get v=0") {
  Frame f = checker_frame(288, 1);
  f.annotations[0].keypoints[0] = {280.0, 100.0, 2};
  AffineParams end{0, 1.0, 40.0, 0.0, 0};
  Sequence seq = synth_sequence_between(f, 3, AffineParams{}, end);
  REQUIRE(seq.frames[0].annotations[0].keypoints[0].v == 2);
  REQUIRE(seq.frames[2].annotations[0].keypoints[0].v == 0);
}

TEST_CASE("synthesized bbox contains transformed visible keypoints") {
  Frame f = checker_frame(288, 5);
  for (int rep = 0; rep < 10; ++rep) {
    Sequence seq = synth_sequence(f, 6, AffineRanges{}, 1000 + rep);
    for (const auto& fr : seq.frames) {
      const auto& a = fr.annotations[0];
      for (const auto& kp : a.keypoints) {
        if (kp.v == 0) continue;
        REQUIRE(kp.x >= a.bbox.x1 - 1e-9);
        REQUIRE(kp.x <= a.bbox.x2 + 1e-9);
        REQUIRE(kp.y >= a.bbox.y1 - 1e-9);
        REQUIRE(kp.y <= a.bbox.y2 + 1e-9);
      }
    }
  }
}

TEST_CASE("synth determinism") {
  Frame f = checker_frame(288, 2);
  Sequence a = synth_sequence(f, 5, AffineRanges{}, 9);
  Sequence b = synth_sequence(f, 5, AffineRanges{}, 9);
  for (size_t t = 0; t < a.frames.size(); ++t) {
    REQUIRE(a.frames[t].image.data() == b.frames[t].image.data());
    REQUIRE(a.frames[t].annotations[0].bbox.x1 == b.frames[t].annotations[0].bbox.x1);
  }
}

TEST_CASE("sample_triplet basics") {
  Frame f = checker_frame(288, 2);
  Sequence seq = synth_sequence(f, 15, AffineRanges::identity(), 1);
  Triplet t = sample_triplet(seq, 123);
  REQUIRE(t.train_a != t.train_b);
  REQUIRE(t.train_a != t.test);
  REQUIRE(t.train_b != t.test);
  REQUIRE(t.target_id == 1);

  Triplet t2 = sample_triplet(seq, 123);
  REQUIRE(t.train_a == t2.train_a);
  REQUIRE(t.train_b == t2.train_b);
  REQUIRE(t.test == t2.test);

  Sequence two;
  two.frames = {f, f};
  REQUIRE_THROWS_AS(sample_triplet(two, 1), SamplingError);

  Sequence no_target;
  Frame empty;
  empty.image = f.image;
  no_target.frames = {empty, empty, empty};
  REQUIRE_THROWS_AS(sample_triplet(no_target, 1), SamplingError);
}

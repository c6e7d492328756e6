#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "step/encodings.hpp"

using namespace step;

namespace {

EncodingConfig small_cfg() {
  EncodingConfig cfg;
  cfg.s = 16;
  cfg.k = 3;
  cfg.n = 8;
  cfg.sigma = 1.0;
  cfg.feat_h = 18;
  cfg.feat_w = 18;
  return cfg;
}

Annotation random_annotation(const EncodingConfig& cfg, Rng& rng, bool all_visible = false) {
  std::uniform_real_distribution<double> coord(0.0, cfg.image_w() - 1.0);
  std::uniform_int_distribution<int> vis(0, 2);
  Annotation a;
  a.target_id = 1;
  double x1 = coord(rng), x2 = coord(rng), y1 = coord(rng), y2 = coord(rng);
  if (x1 > x2) std::swap(x1, x2);
  if (y1 > y2) std::swap(y1, y2);
  a.bbox = {x1, y1, x2 + 1.0, y2 + 1.0};
  for (int i = 0; i < cfg.k; ++i)
    a.keypoints.push_back({coord(rng), coord(rng), all_visible ? 2 : vis(rng)});
  return a;
}

}  // namespace

TEST_CASE("keypoint offset map matches the cell-center formula") {
  EncodingConfig cfg = small_cfg();
  std::vector<Keypoint> kps = {{8, 8, 2}, {10, 20, 2}, {0, 0, 0}};
  Tensor om = keypoint_offset_map(kps, cfg);
  REQUIRE(om.shape() == Shape{6, 18, 18});

  // keypoint (8,8): cell (0,0) -> (0,0); cell (jx=1, jy=0) -> (16,0)
  REQUIRE(om.at({0, 0, 0}) == 0.0);
  REQUIRE(om.at({1, 0, 0}) == 0.0);
  REQUIRE(om.at({0, 0, 1}) == 16.0);
  REQUIRE(om.at({1, 0, 1}) == 0.0);

  // keypoint (10,20): cell (jx=1, jy=2) -> (8+16-10, 8+32-20) = (14,20)
  REQUIRE(om.at({2, 2, 1}) == 14.0);
  REQUIRE(om.at({3, 2, 1}) == 20.0);

  // invisible keypoint leaves zero channels
  for (int jy = 0; jy < 18; ++jy)
    for (int jx = 0; jx < 18; ++jx) {
      REQUIRE(om.at({4, jy, jx}) == 0.0);
      REQUIRE(om.at({5, jy, jx}) == 0.0);
    }
}

TEST_CASE("bbox offset map hand cases") {
  EncodingConfig cfg = small_cfg();
  Tensor deg = bbox_offset_map({8, 8, 8, 8}, cfg);
  for (int c = 0; c < 4; ++c) REQUIRE(deg.at({c, 0, 0}) == 0.0);

  Tensor om = bbox_offset_map({0, 0, 16, 16}, cfg);
  REQUIRE(om.at({0, 0, 0}) == 8.0);
  REQUIRE(om.at({1, 0, 0}) == 8.0);
  REQUIRE(om.at({2, 0, 0}) == -8.0);
  REQUIRE(om.at({3, 0, 0}) == -8.0);
  REQUIRE(om.at({0, 1, 1}) == 24.0);
  REQUIRE(om.at({1, 1, 1}) == 24.0);
  REQUIRE(om.at({2, 1, 1}) == 8.0);
  REQUIRE(om.at({3, 1, 1}) == 8.0);
}

TEST_CASE("offset maps satisfy the formula at every cell") {
  EncodingConfig cfg = small_cfg();
  Rng rng = make_rng(21);
  for (int rep = 0; rep < 20; ++rep) {
    Annotation a = random_annotation(cfg, rng);
    Tensor kom = keypoint_offset_map(a.keypoints, cfg);
    Tensor bom = bbox_offset_map(a.bbox, cfg);
    const double hs = std::floor(cfg.s / 2.0);
    for (int jy = 0; jy < cfg.feat_h; ++jy)
      for (int jx = 0; jx < cfg.feat_w; ++jx) {
        for (int i = 0; i < cfg.k; ++i) {
          const double ex = a.keypoints[i].v > 0 ? hs + cfg.s * jx - a.keypoints[i].x : 0.0;
          const double ey = a.keypoints[i].v > 0 ? hs + cfg.s * jy - a.keypoints[i].y : 0.0;
          REQUIRE(kom.at({2 * i, jy, jx}) == ex);
          REQUIRE(kom.at({2 * i + 1, jy, jx}) == ey);
        }
        REQUIRE(bom.at({0, jy, jx}) == hs + cfg.s * jx - a.bbox.x1);
        REQUIRE(bom.at({1, jy, jx}) == hs + cfg.s * jy - a.bbox.y1);
        REQUIRE(bom.at({2, jy, jx}) == hs + cfg.s * jx - a.bbox.x2);
        REQUIRE(bom.at({3, jy, jx}) == hs + cfg.s * jy - a.bbox.y2);
      }
  }
}

TEST_CASE("gaussian map peak and falloff") {
  EncodingConfig cfg = small_cfg();
  // center exactly at cell (3,2): x = 8 + 16*3, y = 8 + 16*2
  Tensor g = gaussian_map({{8.0 + 48.0, 8.0 + 32.0, true}}, cfg);
  REQUIRE(g.at({0, 2, 3}) == 1.0);
  REQUIRE(g.at({0, 2, 4}) == Catch::Approx(std::exp(-0.5)).margin(1e-12));
  REQUIRE(g.at({0, 3, 3}) == Catch::Approx(std::exp(-0.5)).margin(1e-12));

  Tensor off = gaussian_map({{100.0, 100.0, false}}, cfg);
  for (double v : off.data()) REQUIRE(v == 0.0);
}

TEST_CASE("k_gm is a masked subset of k_gmsp") {
  EncodingConfig cfg = small_cfg();
  Rng rng = make_rng(31);
  Frame f;
  f.image = Tensor::zeros({3, cfg.image_h(), cfg.image_w()});
  f.annotations.push_back(random_annotation(cfg, rng));
  f.annotations.push_back(random_annotation(cfg, rng));
  f.annotations[1].target_id = 2;
  TargetStateMaps maps = encode_target_state(f, f.annotations[0], cfg);
  REQUIRE(maps.k_gm.shape() == maps.k_gmsp_target.shape());
  for (size_t i = 0; i < maps.k_gm.data().size(); ++i)
    REQUIRE(maps.k_gm.data()[i] <= maps.k_gmsp_target.data()[i] + 1e-15);
}

TEST_CASE("encode/decode round trip on random annotations") {
  EncodingConfig cfg = small_cfg();
  Rng rng = make_rng(41);
  for (int rep = 0; rep < 200; ++rep) {
    Frame f;
    f.image = Tensor::zeros({3, cfg.image_h(), cfg.image_w()});
    Annotation a = random_annotation(cfg, rng);
    f.annotations.push_back(a);
    TargetStateMaps maps = encode_target_state(f, a, cfg);

    auto [box, conf] = decode_bbox(maps.b_gm, maps.b_om, cfg);
    REQUIRE(std::abs(box.x1 - a.bbox.x1) < 1e-6);
    REQUIRE(std::abs(box.y1 - a.bbox.y1) < 1e-6);
    REQUIRE(std::abs(box.x2 - a.bbox.x2) < 1e-6);
    REQUIRE(std::abs(box.y2 - a.bbox.y2) < 1e-6);
    REQUIRE(conf > 0.0);

    auto kps = decode_keypoints(maps.k_gm, maps.k_om, cfg);
    for (int i = 0; i < cfg.k; ++i) {
      if (a.keypoints[i].v == 0) continue;
      REQUIRE(std::abs(kps[i].x - a.keypoints[i].x) < 1e-6);
      REQUIRE(std::abs(kps[i].y - a.keypoints[i].y) < 1e-6);
    }
  }
}

TEST_CASE("decode confidence and tie breaking") {
  EncodingConfig cfg = small_cfg();
  cfg.k = 1;
  Tensor gm = Tensor::full({1, 18, 18}, 0.73);
  Tensor om = Tensor::zeros({2, 18, 18});
  auto kps = decode_keypoints(gm, om, cfg);
  REQUIRE(kps[0].conf == 0.73);
  // uniform map -> first row-major cell (0,0) -> coordinates are its center
  REQUIRE(kps[0].x == 8.0);
  REQUIRE(kps[0].y == 8.0);
}

TEST_CASE("decode flags degenerate boxes with zero confidence") {
  EncodingConfig cfg = small_cfg();
  Tensor gm = Tensor::zeros({1, 18, 18});
  gm.mutable_data()[0] = 0.9;
  Tensor om = Tensor::zeros({4, 18, 18});
  om.mutable_data()[0] = -10.0;  // x1 = 8 + 10 = 18
  om.mutable_data()[2 * 18 * 18] = 10.0;  // x2 = 8 - 10 = -2 -> x1 >= x2
  auto [box, conf] = decode_bbox(gm, om, cfg);
  REQUIRE_FALSE(box.valid());
  REQUIRE(conf == 0.0);
}

TEST_CASE("compose_train_features additive identity and one-hot row injection") {
  EncodingConfig cfg = small_cfg();
  Rng rng = make_rng(55);
  ParameterStore store;
  EmbeddingSet emb = EmbeddingSet::create(store, cfg, true, rng);
  // zero the MLP so psi_b contributes nothing
  for (auto& p : store.all())
    if (p.name.rfind("embed.psi_b", 0) == 0)
      std::fill(p.tensor.mutable_data().begin(), p.tensor.mutable_data().end(), 0.0);

  Tensor x = Tensor::randn({cfg.n, 18, 18}, rng);
  TargetStateMaps maps;
  maps.b_om = Tensor::zeros({4, 18, 18});
  maps.b_gm = Tensor::zeros({1, 18, 18});
  maps.k_om = Tensor::zeros({2 * cfg.k, 18, 18});
  maps.k_gm = Tensor::zeros({cfg.k, 18, 18});
  maps.k_gmsp_target = Tensor::zeros({cfg.k, 18, 18});
  Tensor gmsp = Tensor::zeros({cfg.k, 18, 18});

  Tensor f = compose_train_features(x, maps, emb, true, gmsp, cfg);
  REQUIRE(f.shape() == Shape{cfg.n, 18, 18});
  for (size_t i = 0; i < f.data().size(); ++i)
    REQUIRE(f.data()[i] == Catch::Approx(x.data()[i]).margin(1e-12));

  // one-hot gmsp channel 1 at cell (4,7) adds exactly phi_kp row 1 there
  Tensor onehot = Tensor::zeros({cfg.k, 18, 18});
  onehot.mutable_data()[1 * 18 * 18 + 4 * 18 + 7] = 1.0;
  Tensor f2 = compose_train_features(x, maps, emb, true, onehot, cfg);
  for (int c = 0; c < cfg.n; ++c) {
    const double got = f2.at({c, 4, 7}) - x.at({c, 4, 7});
    REQUIRE(got == Catch::Approx(emb.phi_kp.at({1, c})).margin(1e-12));
    REQUIRE(f2.at({c, 5, 7}) == Catch::Approx(x.at({c, 5, 7})).margin(1e-12));
  }
}

TEST_CASE("compose_train_features is additive in each map input") {
  EncodingConfig cfg = small_cfg();
  Rng rng = make_rng(66);
  ParameterStore store;
  EmbeddingSet emb = EmbeddingSet::create(store, cfg, true, rng);
  Tensor x = Tensor::zeros({cfg.n, 18, 18});
  TargetStateMaps zero;
  zero.b_om = Tensor::zeros({4, 18, 18});
  zero.b_gm = Tensor::zeros({1, 18, 18});
  zero.k_om = Tensor::zeros({2 * cfg.k, 18, 18});
  zero.k_gm = Tensor::zeros({cfg.k, 18, 18});
  zero.k_gmsp_target = Tensor::zeros({cfg.k, 18, 18});

  // the phi terms are linear in the gaussian maps: f(a+b) = f(a)+f(b)-f(0)
  auto with_bgm = [&](const Tensor& bgm) {
    TargetStateMaps m = zero;
    m.b_gm = bgm;
    Tensor gmsp = Tensor::zeros({cfg.k, 18, 18});
    return compose_train_features(x, m, emb, true, gmsp, cfg);
  };
  Tensor ga = Tensor::rand_uniform({1, 18, 18}, rng, 0.0, 1.0);
  Tensor gb = Tensor::rand_uniform({1, 18, 18}, rng, 0.0, 1.0);
  Tensor fa = with_bgm(ga), fb = with_bgm(gb), fab = with_bgm(add(ga, gb));
  Tensor f0 = with_bgm(Tensor::zeros({1, 18, 18}));
  for (size_t i = 0; i < fab.data().size(); ++i)
    REQUIRE(fab.data()[i] ==
            Catch::Approx(fa.data()[i] + fb.data()[i] - f0.data()[i]).margin(1e-9));
}

TEST_CASE("compose_test_features broadcasts the token") {
  EncodingConfig cfg = small_cfg();
  Rng rng = make_rng(77);
  ParameterStore store;
  EmbeddingSet emb = EmbeddingSet::create(store, cfg, true, rng);
  Tensor x = Tensor::randn({cfg.n, 18, 18}, rng);
  Tensor f = compose_test_features(x, emb, cfg);
  REQUIRE(f.shape() == x.shape());
  // every cell differs from x by the same vector
  for (int c = 0; c < cfg.n; ++c) {
    const double d00 = f.at({c, 0, 0}) - x.at({c, 0, 0});
    REQUIRE(d00 == Catch::Approx(emb.phi_test.at({0, c})).margin(1e-12));
    for (int jy = 0; jy < 18; jy += 5)
      for (int jx = 0; jx < 18; jx += 5)
        REQUIRE(f.at({c, jy, jx}) - x.at({c, jy, jx}) == Catch::Approx(d00).margin(1e-12));
  }

  // zero token -> identity
  std::fill(emb.phi_test.mutable_data().begin(), emb.phi_test.mutable_data().end(), 0.0);
  Tensor f2 = compose_test_features(x, emb, cfg);
  for (size_t i = 0; i < f2.data().size(); ++i)
    REQUIRE(f2.data()[i] == Catch::Approx(x.data()[i]).margin(1e-12));
}

TEST_CASE("composition gradients flow into embeddings") {
  EncodingConfig cfg = small_cfg();
  Rng rng = make_rng(88);
  ParameterStore store;
  EmbeddingSet emb = EmbeddingSet::create(store, cfg, true, rng);
  Frame f;
  f.image = Tensor::zeros({3, cfg.image_h(), cfg.image_w()});
  Annotation a = random_annotation(cfg, rng, true);
  f.annotations.push_back(a);
  TargetStateMaps maps = encode_target_state(f, a, cfg);
  Tensor x = Tensor::randn({cfg.n, 18, 18}, rng, 0.1);
  Tensor gmsp = Tensor::rand_uniform({cfg.k, 18, 18}, rng, 0.0, 1.0);

  Tensor loss = sum(compose_train_features(x, maps, emb, false, gmsp, cfg));
  backward(loss);
  int with_grad = 0;
  for (auto& p : store.all()) {
    if (!p.tensor.has_grad()) continue;
    double mag = 0;
    for (double g : p.tensor.grad()) mag += std::abs(g);
    if (mag > 0) ++with_grad;
  }
  // phi_test is unused by the train composition; everything else participates
  // (second-layer weights always, first layers whenever inputs are nonzero).
  REQUIRE(with_grad >= static_cast<int>(store.size()) - 3);
}

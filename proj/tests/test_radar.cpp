#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "crn/radar.hpp"

using namespace crn;

namespace {

CameraModel forward_camera() {
  Mat3 r;
  r.m = {0, -1, 0, 0, 0, -1, 1, 0, 0};
  return CameraModel::make(500.0, 500.0, 352.0, 128.0, RigidTransform{r, Vec3{}},
                           704, 256);
}

RadarPoint pt(float x, float y, float z, float rcs = 0.5f, float dop = 0.0f,
              float age = 0.0f) {
  return RadarPoint{x, y, z, rcs, dop, age};
}

bool close(float a, double b, double tol = 1e-6) {
  return std::abs(double(a) - b) <= tol * std::max(1.0, std::abs(b));
}

}  // namespace

TEST_CASE("voxelize: crafted point lands in the expected pillar") {
  CameraModel cam = forward_camera();
  FrustumGrid g = FrustumGrid::for_image(704, 256);
  RadarPointCloud cloud;
  cloud.points.push_back(pt(10.3f, -0.5f, 0.1f, 0.7f, -2.0f, 0.25f));
  PillarCanvas canvas = voxelize_frustum(cloud, cam, g, 8, 3);

  CHECK(canvas.camera_index == 3);
  CHECK(canvas.drops.kept == 1);
  CHECK(canvas.drops.total() == 1);
  REQUIRE(canvas.pillars.size() == 1);

  // Oracle: recompute the projection and binning directly.
  Projection p = project_ego_point(cam, Vec3{10.3, -0.5, 0.1});
  const int d_bin = *depth_to_bin(g, p.d);
  const int u_bin = int(std::floor(p.u / g.stride));
  CHECK(d_bin == 16);
  CHECK(u_bin == 23);
  const int key = d_bin * g.feat_w + u_bin;
  REQUIRE(canvas.pillars.count(key) == 1);
  const auto& feats = canvas.pillars.at(key);
  REQUIRE(feats.size() == 1);
  CHECK(close(feats[0][0], p.d - bin_center_depth(g, d_bin)));
  CHECK(close(feats[0][1], (p.u - column_center_px(g, u_bin)) / g.stride));
  CHECK(feats[0][2] == 0.7f);
  CHECK(feats[0][3] == -2.0f);
  CHECK(feats[0][4] == 0.25f);
}

TEST_CASE("voxelize: every drop reason is recorded once per point") {
  CameraModel cam = forward_camera();
  FrustumGrid g = FrustumGrid::for_image(704, 256);
  RadarPointCloud cloud;
  cloud.points.push_back(pt(-5.0f, 0.0f, 0.0f));   // behind
  cloud.points.push_back(pt(5.0f, 30.0f, 0.0f));   // out of image
  cloud.points.push_back(pt(70.0f, 0.0f, 0.0f));   // beyond last depth bin
  cloud.points.push_back(pt(1.5f, 0.0f, 0.0f));    // before first depth bin
  cloud.points.push_back(pt(10.0f, 0.0f, 0.0f, 0.1f, 1.0f));
  cloud.points.push_back(pt(10.0f, 0.0f, 0.0f, 0.2f, 2.0f));
  cloud.points.push_back(pt(10.0f, 0.0f, 0.0f, 0.3f, 3.0f));  // pillar full
  PillarCanvas canvas = voxelize_frustum(cloud, cam, g, 2);

  CHECK(canvas.drops.behind_plane == 1);
  CHECK(canvas.drops.out_of_image == 1);
  CHECK(canvas.drops.out_of_depth == 2);
  CHECK(canvas.drops.pillar_full == 1);
  CHECK(canvas.drops.kept == 2);
  CHECK(canvas.drops.total() == 7);

  REQUIRE(canvas.pillars.size() == 1);
  const auto& feats = canvas.pillars.begin()->second;
  REQUIRE(feats.size() == 2);  // capped at p_max, input order
  CHECK(feats[0][3] == 1.0f);
  CHECK(feats[1][3] == 2.0f);
}

TEST_CASE("voxelize: conservation against an independent classifier") {
  auto rig = default_rig(6, 704, 256, 500.0, 500.0);
  const CameraModel& cam = rig[2];
  FrustumGrid g = FrustumGrid::for_image(704, 256);
  Rng rng(99);
  RadarPointCloud cloud;
  for (int i = 0; i < 2000; ++i)
    cloud.points.push_back(pt(float(-80.0 + 160.0 * rng.next_unit()),
                              float(-80.0 + 160.0 * rng.next_unit()),
                              float(rng.next_unit() * 3.0)));
  const int p_max = 4;
  PillarCanvas canvas = voxelize_frustum(cloud, cam, g, p_max);

  DropStats want;
  std::map<int, int> pillar_counts;
  for (const auto& q : cloud.points) {
    auto proj = try_project_ego_point(cam, Vec3{q.x, q.y, q.z});
    if (!proj) {
      ++want.behind_plane;
      continue;
    }
    if (!proj->in_image) {
      ++want.out_of_image;
      continue;
    }
    auto bin = depth_to_bin(g, proj->d);
    if (!bin) {
      ++want.out_of_depth;
      continue;
    }
    const int key = *bin * g.feat_w + int(std::floor(proj->u / g.stride));
    if (pillar_counts[key] >= p_max) {
      ++want.pillar_full;
    } else {
      ++pillar_counts[key];
      ++want.kept;
    }
  }
  CHECK(canvas.drops.kept == want.kept);
  CHECK(canvas.drops.behind_plane == want.behind_plane);
  CHECK(canvas.drops.out_of_image == want.out_of_image);
  CHECK(canvas.drops.out_of_depth == want.out_of_depth);
  CHECK(canvas.drops.pillar_full == want.pillar_full);
  CHECK(canvas.drops.total() == 2000);
  for (const auto& [key, feats] : canvas.pillars) {
    REQUIRE(int(feats.size()) <= p_max);
    REQUIRE(int(feats.size()) == pillar_counts[key]);
  }
}

TEST_CASE("scatter: identity point mlp keeps ReLU of features, max per pillar") {
  CameraModel cam = forward_camera();
  FrustumGrid g = FrustumGrid::for_image(704, 256);
  RadarPointCloud cloud;
  cloud.points.push_back(pt(10.26f, 0.0f, 0.0f, 0.9f, -3.0f, 0.1f));
  cloud.points.push_back(pt(10.30f, 0.0f, 0.0f, 0.4f, 5.0f, 0.3f));
  PillarCanvas canvas = voxelize_frustum(cloud, cam, g, 8);
  REQUIRE(canvas.pillars.size() == 1);

  Tensor w({kPillarFeatureDim, kPillarFeatureDim});
  for (int i = 0; i < kPillarFeatureDim; ++i) w.at(i, i) = 1.0f;
  Tensor b({kPillarFeatureDim});
  Tensor canvas_t = scatter_pillars(canvas, w, b);
  REQUIRE(canvas_t.dims == std::vector<int>({kPillarFeatureDim, 112, 44}));

  const int key = canvas.pillars.begin()->first;
  const int d_bin = key / g.feat_w, u_bin = key % g.feat_w;
  const auto& feats = canvas.pillars.begin()->second;
  REQUIRE(feats.size() == 2);
  for (int c = 0; c < kPillarFeatureDim; ++c) {
    const float want = std::max(std::max(feats[0][c], 0.0f), std::max(feats[1][c], 0.0f));
    REQUIRE(canvas_t.at(c, d_bin, u_bin) == want);
  }
  // Everything else stays zero.
  double sum = 0.0;
  for (float v : canvas_t.data) sum += std::abs(v);
  double pillar_sum = 0.0;
  for (int c = 0; c < kPillarFeatureDim; ++c) pillar_sum += canvas_t.at(c, d_bin, u_bin);
  CHECK(sum == doctest::Approx(pillar_sum));
}

TEST_CASE("encode: empty canvas equals the conv trunk bias pattern") {
  CameraModel cam = forward_camera();
  FrustumGrid g = FrustumGrid::for_image(704, 256);
  PillarCanvas canvas = voxelize_frustum(RadarPointCloud{}, cam, g, 8);
  Rng rng(5);
  RadarHeadWeights w = RadarHeadWeights::init(rng, 16);
  // Nonzero biases so the pattern is visible.
  for (auto& v : w.trunk1.b.data) v = 0.3f;
  for (auto& v : w.trunk2.b.data) v = -0.1f;

  Tensor got = encode_pillars(canvas, w);
  Tensor zeros({16, 112, 44});
  Tensor want = relu(conv2d(relu(conv2d(zeros, w.trunk1.w, w.trunk1.b)), w.trunk2.w,
                            w.trunk2.b));
  REQUIRE(got.dims == want.dims);
  for (size_t i = 0; i < got.data.size(); ++i) REQUIRE(got.data[i] == want.data[i]);
}

TEST_CASE("heads: occupancy is a sigmoid conv, context a linear conv") {
  Rng rng(6);
  RadarHeadWeights w = RadarHeadWeights::init(rng, 8);
  Tensor f({8, 10, 7});
  for (auto& v : f.data) v = float(rng.next_unit() * 2.0 - 1.0);
  RadarMaps maps = radar_heads(f, w);
  REQUIRE(maps.context.dims == std::vector<int>({8, 10, 7}));
  REQUIRE(maps.occupancy.dims == std::vector<int>({1, 10, 7}));
  for (float v : maps.occupancy.data) {
    REQUIRE(v > 0.0f);
    REQUIRE(v < 1.0f);
  }
  Tensor ctx_want = conv2d(f, w.context.w, w.context.b);
  Tensor occ_want = sigmoid(conv2d(f, w.occupancy.w, w.occupancy.b));
  for (size_t i = 0; i < ctx_want.data.size(); ++i)
    REQUIRE(maps.context.data[i] == ctx_want.data[i]);
  for (size_t i = 0; i < occ_want.data.size(); ++i)
    REQUIRE(maps.occupancy.data[i] == occ_want.data[i]);
}

TEST_CASE("weights: deterministic init, zero biases") {
  Rng a(77), b(77);
  RadarHeadWeights wa = RadarHeadWeights::init(a, 32);
  RadarHeadWeights wb = RadarHeadWeights::init(b, 32);
  CHECK(wa.point_mlp_w.data == wb.point_mlp_w.data);
  CHECK(wa.trunk2.w.data == wb.trunk2.w.data);
  CHECK(wa.occupancy.w.dims == std::vector<int>({1, 32, 3, 3}));
  for (float v : wa.point_mlp_b.data) CHECK(v == 0.0f);
  for (float v : wa.context.b.data) CHECK(v == 0.0f);
}

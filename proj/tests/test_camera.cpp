#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "crn/camera.hpp"

using namespace crn;

TEST_CASE("extract_features: zero input with zero biases stays zero") {
  Rng rng(1);
  CameraHeadWeights w = CameraHeadWeights::init(rng, 4, 8, 16);
  Tensor img({4, 6, 10});
  Tensor f = extract_features(img, w);
  REQUIRE(f.dims == std::vector<int>({8, 6, 10}));
  for (float v : f.data) CHECK(v == 0.0f);
}

TEST_CASE("extract_features: equals the conv/relu composition") {
  Rng rng(2);
  CameraHeadWeights w = CameraHeadWeights::init(rng, 3, 6, 12);
  for (auto& v : w.backbone1.b.data) v = 0.05f;
  Tensor img({3, 5, 9});
  for (auto& v : img.data) v = float(rng.next_unit() * 2.0 - 1.0);
  Tensor got = extract_features(img, w);
  Tensor want = relu(conv2d(relu(conv2d(img, w.backbone1.w, w.backbone1.b)),
                            w.backbone2.w, w.backbone2.b));
  REQUIRE(got.dims == want.dims);
  for (size_t i = 0; i < got.data.size(); ++i) REQUIRE(got.data[i] == want.data[i]);
}

TEST_CASE("heads: softmax depth sums to one per pixel") {
  Rng rng(3);
  CameraHeadWeights w = CameraHeadWeights::init(rng, 3, 6, 20);
  Tensor img({3, 4, 7});
  for (auto& v : img.data) v = float(rng.next_unit() * 4.0 - 2.0);
  Tensor f = extract_features(img, w);
  CameraMaps maps = context_depth_heads(f, w, DepthActivation::kSoftmax);
  REQUIRE(maps.context.dims == std::vector<int>({6, 4, 7}));
  REQUIRE(maps.depth.dims == std::vector<int>({20, 4, 7}));
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 7; ++x) {
      double sum = 0.0;
      for (int d = 0; d < 20; ++d) sum += maps.depth.at(d, y, x);
      REQUIRE(std::abs(sum - 1.0) < 1e-6);
    }
}

TEST_CASE("heads: sigmoid depth is elementwise and unnormalized") {
  Rng rng(4);
  CameraHeadWeights w = CameraHeadWeights::init(rng, 3, 6, 20);
  Tensor img({3, 4, 7});
  for (auto& v : img.data) v = float(rng.next_unit() * 4.0 - 2.0);
  Tensor f = extract_features(img, w);
  CameraMaps maps = context_depth_heads(f, w, DepthActivation::kSigmoid);
  Tensor want = sigmoid(conv2d(f, w.depth.w, w.depth.b));
  for (size_t i = 0; i < want.data.size(); ++i) {
    REQUIRE(maps.depth.data[i] == want.data[i]);
    REQUIRE(maps.depth.data[i] > 0.0f);
    REQUIRE(maps.depth.data[i] < 1.0f);
  }
  // Context head does not depend on the depth activation.
  CameraMaps soft = context_depth_heads(f, w, DepthActivation::kSoftmax);
  for (size_t i = 0; i < maps.context.data.size(); ++i)
    REQUIRE(maps.context.data[i] == soft.context.data[i]);
}

TEST_CASE("weights: deterministic init and shape contract") {
  Rng a(5), b(5);
  CameraHeadWeights wa = CameraHeadWeights::init(a, 8, 64, 112);
  CameraHeadWeights wb = CameraHeadWeights::init(b, 8, 64, 112);
  CHECK(wa.depth.w.dims == std::vector<int>({112, 64, 3, 3}));
  CHECK(wa.backbone1.w.dims == std::vector<int>({64, 8, 3, 3}));
  CHECK(wa.backbone1.w.data == wb.backbone1.w.data);
  CHECK(wa.depth.w.data == wb.depth.w.data);
  CHECK_THROWS_AS(CameraHeadWeights::init(a, 0, 4, 4), std::invalid_argument);
}

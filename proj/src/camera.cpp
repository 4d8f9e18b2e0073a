#include "crn/camera.hpp"

namespace crn {

CameraHeadWeights CameraHeadWeights::init(Rng& rng, int in_channels, int channels,
                                          int depth_bins) {
  if (in_channels <= 0 || channels <= 0 || depth_bins <= 0)
    throw std::invalid_argument("camera head dims must be positive");
  CameraHeadWeights w;
  w.backbone1 = {init_uniform(rng, {channels, in_channels, 3, 3}, in_channels * 9),
                 Tensor({channels})};
  w.backbone2 = {init_uniform(rng, {channels, channels, 3, 3}, channels * 9),
                 Tensor({channels})};
  w.context = {init_uniform(rng, {channels, channels, 3, 3}, channels * 9),
               Tensor({channels})};
  w.depth = {init_uniform(rng, {depth_bins, channels, 3, 3}, channels * 9),
             Tensor({depth_bins})};
  return w;
}

Tensor extract_features(const Tensor& image, const CameraHeadWeights& w) {
  Tensor h = relu(conv2d(image, w.backbone1.w, w.backbone1.b));
  return relu(conv2d(h, w.backbone2.w, w.backbone2.b));
}

CameraMaps context_depth_heads(const Tensor& features, const CameraHeadWeights& w,
                               DepthActivation activation) {
  CameraMaps maps;
  maps.context = conv2d(features, w.context.w, w.context.b);
  Tensor logits = conv2d(features, w.depth.w, w.depth.b);
  maps.depth = activation == DepthActivation::kSoftmax ? softmax(logits, 0)
                                                       : sigmoid(logits);
  return maps;
}

}  // namespace crn

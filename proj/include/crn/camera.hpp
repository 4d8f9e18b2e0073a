#pragma once

// Image-branch encoder: a two-conv feature stack over per-camera feature
// images, then parallel heads for the context map and the per-pixel depth
// distribution (softmax over bins, or independent sigmoid).

#include "crn/radar.hpp"  // ConvLayer
#include "crn/tensor.hpp"

namespace crn {

enum class DepthActivation { kSoftmax, kSigmoid };

struct CameraHeadWeights {
  ConvLayer backbone1;  // C_in -> C
  ConvLayer backbone2;  // C -> C
  ConvLayer context;    // C -> C
  ConvLayer depth;      // C -> D

  // Draw order: backbone1.w, backbone2.w, context.w, depth.w; biases zero.
  static CameraHeadWeights init(Rng& rng, int in_channels, int channels,
                                int depth_bins);
};

// conv + ReLU, conv + ReLU. image [C_in, H, W] -> [C, H, W].
Tensor extract_features(const Tensor& image, const CameraHeadWeights& w);

struct CameraMaps {
  Tensor context;  // [C, H, W]
  Tensor depth;    // [D, H, W]; softmax mode sums to 1 over D per (h, w)
};

CameraMaps context_depth_heads(const Tensor& features, const CameraHeadWeights& w,
                               DepthActivation activation);

}  // namespace crn

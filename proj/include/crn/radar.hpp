#pragma once

// Radar points binned into per-camera frustum pillars (depth bin x image
// column), then encoded into a dense feature canvas: per-point MLP + ReLU,
// per-pillar elementwise max, scatter, and a two-layer 3x3 conv trunk.
// Heads produce a context map and a sigmoid occupancy map.

#include <array>
#include <cstdint>
#include <map>
#include <vector>

#include "crn/geometry.hpp"
#include "crn/tensor.hpp"

namespace crn {

struct RadarPoint {
  float x = 0.0f, y = 0.0f, z = 0.0f;  // ego frame, meters
  float rcs = 0.0f;
  float doppler = 0.0f;
  float sweep_age = 0.0f;  // seconds since the newest sweep
};

struct RadarPointCloud {
  std::vector<RadarPoint> points;
};

// Per-point pillar features: depth offset from the bin center (m), column
// offset from the column center (in columns, [-0.5, 0.5)), rcs, doppler,
// sweep age.
constexpr int kPillarFeatureDim = 5;

struct DropStats {
  std::int64_t kept = 0;
  std::int64_t behind_plane = 0;
  std::int64_t out_of_image = 0;
  std::int64_t out_of_depth = 0;
  std::int64_t pillar_full = 0;

  std::int64_t total() const {
    return kept + behind_plane + out_of_image + out_of_depth + pillar_full;
  }
};

// Sparse pillar storage keyed by d_bin * feat_w + u_bin; each pillar keeps
// at most p_max points in input order.
struct PillarCanvas {
  int camera_index = 0;
  int d_bins = 0;
  int feat_w = 0;
  int p_max = 0;
  std::map<int, std::vector<std::array<float, kPillarFeatureDim>>> pillars;
  DropStats drops;
};

// Every input point either lands in exactly one pillar or increments exactly
// one drop counter.
PillarCanvas voxelize_frustum(const RadarPointCloud& cloud, const CameraModel& cam,
                              const FrustumGrid& grid, int p_max,
                              int camera_index = 0);

struct ConvLayer {
  Tensor w;  // [C_out, C_in, 3, 3]
  Tensor b;  // [C_out]
};

struct RadarHeadWeights {
  Tensor point_mlp_w;  // [C, kPillarFeatureDim]
  Tensor point_mlp_b;  // [C]
  ConvLayer trunk1;    // C -> C
  ConvLayer trunk2;    // C -> C
  ConvLayer context;   // C -> C
  ConvLayer occupancy; // C -> 1

  // Draw order: point_mlp_w, trunk1.w, trunk2.w, context.w, occupancy.w;
  // biases are zero-initialized and consume no draws.
  static RadarHeadWeights init(Rng& rng, int channels);
};

// Dense [C, D, W] canvas before the conv trunk: ReLU(point_mlp(feature))
// per point, elementwise max per pillar, zeros for empty pillars.
Tensor scatter_pillars(const PillarCanvas& canvas, const Tensor& point_mlp_w,
                       const Tensor& point_mlp_b);

// scatter_pillars followed by the conv trunk (conv, ReLU, conv, ReLU).
Tensor encode_pillars(const PillarCanvas& canvas, const RadarHeadWeights& w);

struct RadarMaps {
  Tensor context;    // [C, D, W]
  Tensor occupancy;  // [1, D, W], values in (0, 1)
};

RadarMaps radar_heads(const Tensor& encoded, const RadarHeadWeights& w);

}  // namespace crn

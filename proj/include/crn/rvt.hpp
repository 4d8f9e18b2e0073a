#pragma once

// View transformation from per-camera image space into BEV.
//
// frustum_transform lifts a [C, H, W] context map into the camera frustum
// [C, D, W] two ways and fuses them:
//   branch A[c,d,w] = sum_h ctx[c,h,w] * depth[d,h,w]  (depth-weighted)
//   branch B[c,d,w] = (sum_h ctx[c,h,w]) * occ[0,d,w]  (occupancy-gated)
// Radar-assisted mode concatenates [A; B] along channels (A first) and
// applies a 3x3 conv; depth-only mode applies a conv to A alone.
//
// voxel_pool_avg scatters every frustum cell of every camera into the BEV
// grid cell under its center (column center pixel, principal row, depth bin
// center) and averages context features per cell; confidence maps pool by
// max. Accumulation is a sequential reduction in canonical (camera, d, u)
// order with f64 sums, so results are independent of the visit order
// presented to the _ordered entry point.

#include <cstdint>
#include <vector>

#include "crn/geometry.hpp"
#include "crn/radar.hpp"  // ConvLayer
#include "crn/tensor.hpp"

namespace crn {

enum class ViewTransformMode { kRadarAssisted, kDepthOnly };

struct RvtWeights {
  ConvLayer fuse;  // [C, 2C, 3, 3], radar-assisted fusion
  ConvLayer lift;  // [C, C, 3, 3], depth-only
  // Draw order: fuse.w, lift.w; biases zero.
  static RvtWeights init(Rng& rng, int channels);
};

// ctx [C, H, W], depth [D, H, W], occupancy [1, D, W] (ignored and may be
// null in depth-only mode) -> [C, D, W].
Tensor frustum_transform(const Tensor& ctx, const Tensor& depth,
                         const Tensor* occupancy, const RvtWeights& w,
                         ViewTransformMode mode);

// Max over image rows: [D, H, W] -> [1, D, W].
Tensor collapse_depth_conf(const Tensor& depth);

struct FrustumCellJob {
  int cam = 0;
  int d = 0;
  int u = 0;
  bool operator==(const FrustumCellJob&) const = default;
};

struct BevFeatureBundle {
  BevGrid grid;
  Tensor img_ctx;     // [C, X, Y] mean-pooled image context
  Tensor radar_ctx;   // [C, X, Y] mean-pooled radar context
  Tensor depth_conf;  // [1, X, Y] max-pooled depth confidence
  Tensor occ_conf;    // [1, X, Y] max-pooled occupancy
  Tensor count;       // [1, X, Y] contributing frustum cells
  std::int64_t dropped_cells = 0;  // frustum cells outside the grid
};

// img_ctx_fv and radar_ctx_fv are per-camera [C, D, W]; depth_conf_fv and
// occ_fv are per-camera [1, D, W]. All vectors must have one entry per
// camera. Sum over BEV cells of `count` equals cameras * D * W minus
// dropped_cells.
BevFeatureBundle voxel_pool_avg(const std::vector<Tensor>& img_ctx_fv,
                                const std::vector<Tensor>& radar_ctx_fv,
                                const std::vector<Tensor>& depth_conf_fv,
                                const std::vector<Tensor>& occ_fv,
                                const std::vector<CameraModel>& cams,
                                const FrustumGrid& fgrid, const BevGrid& bgrid);

// Same reduction over an explicit visit list, which must be a permutation of
// the full (camera, d, u) job set. The list is canonicalized before
// accumulation, so any permutation yields bit-identical output.
BevFeatureBundle voxel_pool_avg_ordered(const std::vector<Tensor>& img_ctx_fv,
                                        const std::vector<Tensor>& radar_ctx_fv,
                                        const std::vector<Tensor>& depth_conf_fv,
                                        const std::vector<Tensor>& occ_fv,
                                        const std::vector<CameraModel>& cams,
                                        const FrustumGrid& fgrid,
                                        const BevGrid& bgrid,
                                        std::vector<FrustumCellJob> visit);

}  // namespace crn

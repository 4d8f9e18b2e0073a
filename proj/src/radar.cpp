#include "crn/radar.hpp"

#include <cmath>

namespace crn {

PillarCanvas voxelize_frustum(const RadarPointCloud& cloud, const CameraModel& cam,
                              const FrustumGrid& grid, int p_max, int camera_index) {
  if (p_max <= 0) throw std::invalid_argument("p_max must be positive");
  PillarCanvas canvas;
  canvas.camera_index = camera_index;
  canvas.d_bins = grid.d_bins;
  canvas.feat_w = grid.feat_w;
  canvas.p_max = p_max;

  for (const RadarPoint& p : cloud.points) {
    const auto proj = try_project_ego_point(cam, Vec3{p.x, p.y, p.z});
    if (!proj) {
      ++canvas.drops.behind_plane;
      continue;
    }
    if (!proj->in_image) {
      ++canvas.drops.out_of_image;
      continue;
    }
    const auto d_bin = depth_to_bin(grid, proj->d);
    if (!d_bin) {
      ++canvas.drops.out_of_depth;
      continue;
    }
    const int u_bin = static_cast<int>(std::floor(proj->u / grid.stride));
    auto& pillar = canvas.pillars[*d_bin * grid.feat_w + u_bin];
    if (static_cast<int>(pillar.size()) >= p_max) {
      ++canvas.drops.pillar_full;
      continue;
    }
    pillar.push_back({static_cast<float>(proj->d - bin_center_depth(grid, *d_bin)),
                      static_cast<float>((proj->u - column_center_px(grid, u_bin)) /
                                         grid.stride),
                      p.rcs, p.doppler, p.sweep_age});
    ++canvas.drops.kept;
  }
  return canvas;
}

RadarHeadWeights RadarHeadWeights::init(Rng& rng, int channels) {
  if (channels <= 0) throw std::invalid_argument("channels must be positive");
  RadarHeadWeights w;
  w.point_mlp_w = init_uniform(rng, {channels, kPillarFeatureDim}, kPillarFeatureDim);
  w.point_mlp_b = Tensor({channels});
  const int fan = channels * 9;
  w.trunk1 = {init_uniform(rng, {channels, channels, 3, 3}, fan), Tensor({channels})};
  w.trunk2 = {init_uniform(rng, {channels, channels, 3, 3}, fan), Tensor({channels})};
  w.context = {init_uniform(rng, {channels, channels, 3, 3}, fan), Tensor({channels})};
  w.occupancy = {init_uniform(rng, {1, channels, 3, 3}, fan), Tensor({1})};
  return w;
}

Tensor scatter_pillars(const PillarCanvas& canvas, const Tensor& point_mlp_w,
                       const Tensor& point_mlp_b) {
  if (point_mlp_w.rank() != 2 || point_mlp_w.dims[1] != kPillarFeatureDim)
    throw ShapeError("point mlp weight must be [C, " +
                     std::to_string(kPillarFeatureDim) + "]");
  const int c = point_mlp_w.dims[0];
  Tensor out({c, canvas.d_bins, canvas.feat_w});

  for (const auto& [key, feats] : canvas.pillars) {
    const int d_bin = key / canvas.feat_w;
    const int u_bin = key % canvas.feat_w;
    Tensor batch({static_cast<int>(feats.size()), kPillarFeatureDim});
    for (size_t i = 0; i < feats.size(); ++i)
      for (int j = 0; j < kPillarFeatureDim; ++j)
        batch.at(static_cast<int>(i), j) = feats[i][j];
    Tensor mapped = relu(linear(batch, point_mlp_w, point_mlp_b));
    for (int ch = 0; ch < c; ++ch) {
      float mx = mapped.at(0, ch);
      for (int i = 1; i < static_cast<int>(feats.size()); ++i)
        mx = std::max(mx, mapped.at(i, ch));
      out.at(ch, d_bin, u_bin) = mx;
    }
  }
  return out;
}

Tensor encode_pillars(const PillarCanvas& canvas, const RadarHeadWeights& w) {
  Tensor canvas_t = scatter_pillars(canvas, w.point_mlp_w, w.point_mlp_b);
  Tensor h = relu(conv2d(canvas_t, w.trunk1.w, w.trunk1.b));
  return relu(conv2d(h, w.trunk2.w, w.trunk2.b));
}

RadarMaps radar_heads(const Tensor& encoded, const RadarHeadWeights& w) {
  RadarMaps maps;
  maps.context = conv2d(encoded, w.context.w, w.context.b);
  maps.occupancy = sigmoid(conv2d(encoded, w.occupancy.w, w.occupancy.b));
  return maps;
}

}  // namespace crn

#include "crn/rvt.hpp"

#include <algorithm>
#include <cmath>

namespace crn {

RvtWeights RvtWeights::init(Rng& rng, int channels) {
  if (channels <= 0) throw std::invalid_argument("channels must be positive");
  RvtWeights w;
  w.fuse = {init_uniform(rng, {channels, 2 * channels, 3, 3}, 2 * channels * 9),
            Tensor({channels})};
  w.lift = {init_uniform(rng, {channels, channels, 3, 3}, channels * 9),
            Tensor({channels})};
  return w;
}

namespace {

void check_transform_shapes(const Tensor& ctx, const Tensor& depth,
                            const Tensor* occupancy, ViewTransformMode mode) {
  if (ctx.rank() != 3) throw ShapeError("context must be [C, H, W]");
  if (depth.rank() != 3 || depth.dims[1] != ctx.dims[1] || depth.dims[2] != ctx.dims[2])
    throw ShapeError("depth must be [D, H, W] matching the context H, W");
  if (mode == ViewTransformMode::kRadarAssisted) {
    if (occupancy == nullptr)
      throw ShapeError("radar-assisted transform requires an occupancy map");
    if (occupancy->rank() != 3 || occupancy->dims[0] != 1 ||
        occupancy->dims[1] != depth.dims[0] || occupancy->dims[2] != ctx.dims[2])
      throw ShapeError("occupancy must be [1, D, W]");
  }
}

}  // namespace

Tensor frustum_transform(const Tensor& ctx, const Tensor& depth,
                         const Tensor* occupancy, const RvtWeights& w,
                         ViewTransformMode mode) {
  check_transform_shapes(ctx, depth, occupancy, mode);
  const int c_n = ctx.dims[0], h_n = ctx.dims[1], w_n = ctx.dims[2];
  const int d_n = depth.dims[0];

  const bool fused = mode == ViewTransformMode::kRadarAssisted;
  Tensor stacked({fused ? 2 * c_n : c_n, d_n, w_n});
  std::vector<double> acc(static_cast<size_t>(w_n));

  // Branch A: depth-weighted height collapse.
  for (int c = 0; c < c_n; ++c)
    for (int d = 0; d < d_n; ++d) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int h = 0; h < h_n; ++h) {
        const float* cr = &ctx.data[(static_cast<size_t>(c) * h_n + h) * w_n];
        const float* dr = &depth.data[(static_cast<size_t>(d) * h_n + h) * w_n];
        for (int x = 0; x < w_n; ++x)
          acc[x] += static_cast<double>(cr[x]) * static_cast<double>(dr[x]);
      }
      float* out = &stacked.data[(static_cast<size_t>(c) * d_n + d) * w_n];
      for (int x = 0; x < w_n; ++x) out[x] = static_cast<float>(acc[x]);
    }

  // Branch B: occupancy-gated plain column sum, in the upper channel half.
  if (fused) {
    std::vector<double> col(static_cast<size_t>(w_n));
    for (int c = 0; c < c_n; ++c) {
      std::fill(col.begin(), col.end(), 0.0);
      for (int h = 0; h < h_n; ++h) {
        const float* cr = &ctx.data[(static_cast<size_t>(c) * h_n + h) * w_n];
        for (int x = 0; x < w_n; ++x) col[x] += cr[x];
      }
      for (int d = 0; d < d_n; ++d) {
        const float* orow = &occupancy->data[static_cast<size_t>(d) * w_n];
        float* out =
            &stacked.data[(static_cast<size_t>(c_n + c) * d_n + d) * w_n];
        for (int x = 0; x < w_n; ++x)
          out[x] = static_cast<float>(col[x] * static_cast<double>(orow[x]));
      }
    }
  }

  const ConvLayer& conv = fused ? w.fuse : w.lift;
  return conv2d(stacked, conv.w, conv.b);
}

Tensor collapse_depth_conf(const Tensor& depth) {
  if (depth.rank() != 3) throw ShapeError("depth must be [D, H, W]");
  const int d_n = depth.dims[0], h_n = depth.dims[1], w_n = depth.dims[2];
  Tensor out({1, d_n, w_n});
  for (int d = 0; d < d_n; ++d)
    for (int x = 0; x < w_n; ++x) {
      float mx = depth.at(d, 0, x);
      for (int h = 1; h < h_n; ++h) mx = std::max(mx, depth.at(d, h, x));
      out.at(0, d, x) = mx;
    }
  return out;
}

namespace {

void check_pool_inputs(const std::vector<Tensor>& img, const std::vector<Tensor>& rad,
                       const std::vector<Tensor>& dep, const std::vector<Tensor>& occ,
                       const std::vector<CameraModel>& cams, const FrustumGrid& g) {
  if (cams.empty()) throw std::invalid_argument("pooling needs at least one camera");
  const size_t n = cams.size();
  if (img.size() != n || rad.size() != n || dep.size() != n || occ.size() != n)
    throw ShapeError("per-camera tensor lists must match the camera count");
  const int c_n = img[0].dims[0];
  for (size_t i = 0; i < n; ++i) {
    if (img[i].rank() != 3 || img[i].dims[0] != c_n || img[i].dims[1] != g.d_bins ||
        img[i].dims[2] != g.feat_w)
      throw ShapeError("image context maps must be [C, D, W]");
    if (rad[i].dims != img[i].dims)
      throw ShapeError("radar context maps must be [C, D, W]");
    if (dep[i].rank() != 3 || dep[i].dims[0] != 1 || dep[i].dims[1] != g.d_bins ||
        dep[i].dims[2] != g.feat_w)
      throw ShapeError("depth confidence maps must be [1, D, W]");
    if (occ[i].dims != dep[i].dims) throw ShapeError("occupancy maps must be [1, D, W]");
  }
}

BevFeatureBundle pool_sorted(const std::vector<Tensor>& img,
                             const std::vector<Tensor>& rad,
                             const std::vector<Tensor>& dep,
                             const std::vector<Tensor>& occ,
                             const std::vector<CameraModel>& cams,
                             const FrustumGrid& g, const BevGrid& bev,
                             const std::vector<FrustumCellJob>& jobs) {
  const int c_n = img[0].dims[0];
  const std::int64_t cells = static_cast<std::int64_t>(bev.size_x) * bev.size_y;

  std::vector<double> img_sum(static_cast<size_t>(cells) * c_n, 0.0);
  std::vector<double> rad_sum(static_cast<size_t>(cells) * c_n, 0.0);
  std::vector<float> dmax(static_cast<size_t>(cells), 0.0f);
  std::vector<float> omax(static_cast<size_t>(cells), 0.0f);
  std::vector<std::int32_t> count(static_cast<size_t>(cells), 0);
  std::int64_t dropped = 0;

  const std::int64_t plane = static_cast<std::int64_t>(g.d_bins) * g.feat_w;
  for (const FrustumCellJob& job : jobs) {
    const Vec3 p = unproject_pixel(cams[static_cast<size_t>(job.cam)],
                                   column_center_px(g, job.u),
                                   cams[static_cast<size_t>(job.cam)].cy(),
                                   bin_center_depth(g, job.d));
    const auto cell = bev_cell_of(bev, p.x, p.y);
    if (!cell) {
      ++dropped;
      continue;
    }
    const std::int64_t ci = static_cast<std::int64_t>(cell->ix) * bev.size_y + cell->iy;
    const std::int64_t src = static_cast<std::int64_t>(job.d) * g.feat_w + job.u;
    const float* iv = &img[static_cast<size_t>(job.cam)].data[0];
    const float* rv = &rad[static_cast<size_t>(job.cam)].data[0];
    double* is = &img_sum[static_cast<size_t>(ci) * c_n];
    double* rs = &rad_sum[static_cast<size_t>(ci) * c_n];
    for (int c = 0; c < c_n; ++c) {
      is[c] += iv[c * plane + src];
      rs[c] += rv[c * plane + src];
    }
    dmax[ci] = std::max(dmax[ci], dep[static_cast<size_t>(job.cam)].data[src]);
    omax[ci] = std::max(omax[ci], occ[static_cast<size_t>(job.cam)].data[src]);
    ++count[ci];
  }

  BevFeatureBundle out;
  out.grid = bev;
  out.img_ctx = Tensor({c_n, bev.size_x, bev.size_y});
  out.radar_ctx = Tensor({c_n, bev.size_x, bev.size_y});
  out.depth_conf = Tensor({1, bev.size_x, bev.size_y});
  out.occ_conf = Tensor({1, bev.size_x, bev.size_y});
  out.count = Tensor({1, bev.size_x, bev.size_y});
  out.dropped_cells = dropped;

  for (std::int64_t ci = 0; ci < cells; ++ci) {
    const int n = count[ci];
    out.count.data[ci] = static_cast<float>(n);
    if (n == 0) continue;
    out.depth_conf.data[ci] = dmax[ci];
    out.occ_conf.data[ci] = omax[ci];
    for (int c = 0; c < c_n; ++c) {
      out.img_ctx.data[static_cast<size_t>(c) * cells + ci] =
          static_cast<float>(img_sum[static_cast<size_t>(ci) * c_n + c] / n);
      out.radar_ctx.data[static_cast<size_t>(c) * cells + ci] =
          static_cast<float>(rad_sum[static_cast<size_t>(ci) * c_n + c] / n);
    }
  }
  return out;
}

}  // namespace

BevFeatureBundle voxel_pool_avg(const std::vector<Tensor>& img_ctx_fv,
                                const std::vector<Tensor>& radar_ctx_fv,
                                const std::vector<Tensor>& depth_conf_fv,
                                const std::vector<Tensor>& occ_fv,
                                const std::vector<CameraModel>& cams,
                                const FrustumGrid& fgrid, const BevGrid& bgrid) {
  check_pool_inputs(img_ctx_fv, radar_ctx_fv, depth_conf_fv, occ_fv, cams, fgrid);
  std::vector<FrustumCellJob> jobs;
  jobs.reserve(cams.size() * static_cast<size_t>(fgrid.d_bins) * fgrid.feat_w);
  for (int cam = 0; cam < static_cast<int>(cams.size()); ++cam)
    for (int d = 0; d < fgrid.d_bins; ++d)
      for (int u = 0; u < fgrid.feat_w; ++u) jobs.push_back({cam, d, u});
  return pool_sorted(img_ctx_fv, radar_ctx_fv, depth_conf_fv, occ_fv, cams, fgrid,
                     bgrid, jobs);
}

BevFeatureBundle voxel_pool_avg_ordered(const std::vector<Tensor>& img_ctx_fv,
                                        const std::vector<Tensor>& radar_ctx_fv,
                                        const std::vector<Tensor>& depth_conf_fv,
                                        const std::vector<Tensor>& occ_fv,
                                        const std::vector<CameraModel>& cams,
                                        const FrustumGrid& fgrid, const BevGrid& bgrid,
                                        std::vector<FrustumCellJob> visit) {
  check_pool_inputs(img_ctx_fv, radar_ctx_fv, depth_conf_fv, occ_fv, cams, fgrid);
  const std::int64_t want =
      static_cast<std::int64_t>(cams.size()) * fgrid.d_bins * fgrid.feat_w;
  if (static_cast<std::int64_t>(visit.size()) != want)
    throw std::invalid_argument("visit list must cover every frustum cell once");
  auto key = [&](const FrustumCellJob& j) {
    return (static_cast<std::int64_t>(j.cam) * fgrid.d_bins + j.d) * fgrid.feat_w + j.u;
  };
  std::sort(visit.begin(), visit.end(),
            [&](const FrustumCellJob& a, const FrustumCellJob& b) {
              return key(a) < key(b);
            });
  for (size_t i = 0; i < visit.size(); ++i) {
    const FrustumCellJob& j = visit[i];
    if (j.cam < 0 || j.cam >= static_cast<int>(cams.size()) || j.d < 0 ||
        j.d >= fgrid.d_bins || j.u < 0 || j.u >= fgrid.feat_w)
      throw std::invalid_argument("visit job out of range");
    if (i > 0 && key(visit[i - 1]) == key(j))
      throw std::invalid_argument("visit list contains duplicate jobs");
  }
  return pool_sorted(img_ctx_fv, radar_ctx_fv, depth_conf_fv, occ_fv, cams, fgrid,
                     bgrid, visit);
}

}  // namespace crn

#include "crn/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace crn {

namespace {

constexpr double kPi = std::numbers::pi;

[[noreturn]] void bad_spec(const std::string& msg) {
  throw std::invalid_argument("scene spec: " + msg);
}

struct FaceSeg {
  double cx, cy;
  double tx, ty;
  double extent;
};

// Footprint face whose center is closest to the ego origin; first match wins
// on ties. Radar returns are sampled along this segment.
FaceSeg near_face(const BevBox& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double axl[2] = {c, s}, axw[2] = {-s, c};
  const FaceSeg cand[4] = {
      {b.x + axl[0] * b.l / 2, b.y + axl[1] * b.l / 2, axw[0], axw[1], b.w},
      {b.x - axl[0] * b.l / 2, b.y - axl[1] * b.l / 2, axw[0], axw[1], b.w},
      {b.x + axw[0] * b.w / 2, b.y + axw[1] * b.w / 2, axl[0], axl[1], b.l},
      {b.x - axw[0] * b.w / 2, b.y - axw[1] * b.w / 2, axl[0], axl[1], b.l},
  };
  int best = 0;
  double best_d = std::hypot(cand[0].cx, cand[0].cy);
  for (int i = 1; i < 4; ++i) {
    const double d = std::hypot(cand[i].cx, cand[i].cy);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return cand[best];
}

// Closed separating-axis test between the box footprint and one grid cell.
bool box_cell_overlap(const BevBox& b, double x0, double x1, double y0, double y1) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hx = b.l / 2, hy = b.w / 2;
  const double bx[4] = {b.x + c * hx - s * hy, b.x + c * hx + s * hy,
                        b.x - c * hx - s * hy, b.x - c * hx + s * hy};
  const double by[4] = {b.y + s * hx + c * hy, b.y + s * hx - c * hy,
                        b.y - s * hx + c * hy, b.y - s * hx - c * hy};
  const double cx[4] = {x0, x1, x1, x0};
  const double cy[4] = {y0, y0, y1, y1};
  const double axes[4][2] = {{1.0, 0.0}, {0.0, 1.0}, {c, s}, {-s, c}};
  for (const auto& ax : axes) {
    double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
    for (int i = 0; i < 4; ++i) {
      const double pa = ax[0] * cx[i] + ax[1] * cy[i];
      const double pb = ax[0] * bx[i] + ax[1] * by[i];
      amin = std::min(amin, pa);
      amax = std::max(amax, pa);
      bmin = std::min(bmin, pb);
      bmax = std::max(bmax, pb);
    }
    if (amax < bmin || bmax < amin) return false;
  }
  return true;
}

}  // namespace

double sample_gauss(Rng& rng) {
  const double u1 = 1.0 - rng.next_unit();  // (0, 1] keeps the log finite
  const double u2 = rng.next_unit();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

int sample_poisson(Rng& rng, double mean) {
  if (mean < 0.0) throw std::invalid_argument("poisson mean must be >= 0");
  if (mean > 600.0) throw std::invalid_argument("poisson mean too large for exp(-mean)");
  const double limit = std::exp(-mean);
  int k = 0;
  double p = 1.0;
  do {
    ++k;
    p *= rng.next_unit();
  } while (p > limit);
  return k - 1;
}

SceneSpec SceneSpec::standard(std::uint64_t seed) {
  SceneSpec s;
  s.seed = seed;
  s.rig = default_rig(6, 704, 256, 350.0, 350.0);
  s.frustum = FrustumGrid::for_image(704, 256);
  s.grid = BevGrid::standard();
  s.noise.dropout_prob = 0.05;
  s.noise.clutter_rate = 15.0;
  return s;
}

void SceneSpec::validate() const {
  if (n_boxes < 0) bad_spec("n_boxes must be >= 0");
  if (returns_per_box < 0) bad_spec("returns_per_box must be >= 0");
  if (image_channels < 1) bad_spec("image_channels must be >= 1");
  if (!(blob_sigma_px > 0.0)) bad_spec("blob_sigma_px must be positive");
  if (blob_amplitude < 0.0) bad_spec("blob_amplitude must be >= 0");
  if (!(place_r_min > 0.0) || place_r_max < place_r_min)
    bad_spec("placement ring must satisfy 0 < r_min <= r_max");
  if (place_r_max > grid.range_m) bad_spec("placement ring exceeds the grid range");
  if (center_jitter_m < 0.0) bad_spec("center_jitter_m must be >= 0");
  if (!(box_w_min > 0.0) || box_w_max < box_w_min || !(box_l_min > 0.0) ||
      box_l_max < box_l_min || !(box_h_min > 0.0) || box_h_max < box_h_min)
    bad_spec("box size ranges must satisfy 0 < min <= max");
  if (rcs_min < 0.0 || rcs_max < rcs_min) bad_spec("rcs range must satisfy 0 <= min <= max");
  if (noise.range_sigma < 0.0 || noise.azimuth_sigma < 0.0)
    bad_spec("noise sigmas must be >= 0");
  if (noise.dropout_prob < 0.0 || noise.dropout_prob > 1.0)
    bad_spec("dropout_prob must lie in [0, 1]");
  if (noise.clutter_rate < 0.0 || noise.clutter_rate > 600.0)
    bad_spec("clutter_rate must lie in [0, 600]");
  if (rig.empty()) bad_spec("camera rig must not be empty");
  for (const CameraModel& cam : rig) cam.validate();
  if (frustum.d_bins <= 0 || frustum.feat_w <= 0 || frustum.feat_h <= 0 ||
      frustum.stride <= 0)
    bad_spec("frustum grid must have positive dims");
  if (grid.size_x <= 0 || grid.size_y <= 0 || !(grid.cell_m > 0.0) || !(grid.range_m > 0.0))
    bad_spec("bev grid must have positive dims");
  for (const BevBox& b : fixed_boxes) {
    if (std::abs(b.x) >= grid.range_m || std::abs(b.y) >= grid.range_m)
      bad_spec("fixed box center outside the bev range");
    if (!(b.w > 0.0) || !(b.l > 0.0) || !(b.h > 0.0)) bad_spec("fixed box extents must be positive");
    if (b.rcs < 0.0) bad_spec("fixed box rcs must be >= 0");
  }
}

Tensor rasterize_boxes(const std::vector<BevBox>& boxes, const BevGrid& grid) {
  Tensor gt({1, grid.size_x, grid.size_y});
  for (const BevBox& b : boxes) {
    // Cell scan bounded by the footprint's axis-aligned extent.
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const double ext_x = (std::abs(c) * b.l + std::abs(s) * b.w) / 2;
    const double ext_y = (std::abs(s) * b.l + std::abs(c) * b.w) / 2;
    const auto clamp_cell = [&](double v, int size) {
      return std::clamp(int(std::floor((v + grid.range_m) / grid.cell_m)), 0, size - 1);
    };
    const int ix0 = clamp_cell(b.x - ext_x, grid.size_x);
    const int ix1 = clamp_cell(b.x + ext_x, grid.size_x);
    const int iy0 = clamp_cell(b.y - ext_y, grid.size_y);
    const int iy1 = clamp_cell(b.y + ext_y, grid.size_y);
    for (int ix = ix0; ix <= ix1; ++ix)
      for (int iy = iy0; iy <= iy1; ++iy) {
        const double x0 = -grid.range_m + ix * grid.cell_m;
        const double y0 = -grid.range_m + iy * grid.cell_m;
        if (box_cell_overlap(b, x0, x0 + grid.cell_m, y0, y0 + grid.cell_m))
          gt.at(0, ix, iy) = 1.0f;
      }
  }
  return gt;
}

Scene generate(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Scene scene;
  scene.spec = spec;

  if (!spec.fixed_boxes.empty()) {
    scene.boxes = spec.fixed_boxes;
  } else {
    scene.boxes.reserve(size_t(spec.n_boxes));
    for (int i = 0; i < spec.n_boxes; ++i) {
      BevBox b;
      const double bearing = -kPi + 2.0 * kPi * rng.next_unit();
      const double radius =
          spec.place_r_min + (spec.place_r_max - spec.place_r_min) * rng.next_unit();
      b.x = radius * std::cos(bearing);
      b.y = radius * std::sin(bearing);
      if (spec.snap_to_cell) {
        if (auto cell = bev_cell_of(spec.grid, b.x, b.y)) {
          const auto [cx, cy] = bev_cell_center(spec.grid, cell->ix, cell->iy);
          b.x = cx;
          b.y = cy;
        }
      }
      if (spec.center_jitter_m > 0.0) {
        b.x += spec.center_jitter_m * (2.0 * rng.next_unit() - 1.0);
        b.y += spec.center_jitter_m * (2.0 * rng.next_unit() - 1.0);
      }
      b.w = spec.box_w_min + (spec.box_w_max - spec.box_w_min) * rng.next_unit();
      b.l = spec.box_l_min + (spec.box_l_max - spec.box_l_min) * rng.next_unit();
      b.h = spec.box_h_min + (spec.box_h_max - spec.box_h_min) * rng.next_unit();
      b.yaw = -kPi + 2.0 * kPi * rng.next_unit();
      b.rcs = spec.rcs_min + (spec.rcs_max - spec.rcs_min) * rng.next_unit();
      scene.boxes.push_back(b);
    }
  }

  scene.images.reserve(spec.rig.size());
  for (const CameraModel& cam : spec.rig) {
    const FrustumGrid fg = FrustumGrid::for_image(cam.image_w, cam.image_h, spec.frustum.stride);
    Tensor img({spec.image_channels, fg.feat_h, fg.feat_w});
    std::fill(img.data.begin(), img.data.end(), float(spec.image_bias));
    scene.images.push_back(std::move(img));
  }

  scene.visible = compute_visible(scene.boxes, spec.rig, spec.frustum);
  const double sig = spec.blob_sigma_px;
  const int win = int(std::ceil(4.0 * sig));
  std::vector<double> scale(size_t(spec.image_channels));
  size_t ri = 0;
  for (int bi = 0; bi < int(scene.boxes.size()); ++bi) {
    for (double& v : scale) v = 0.5 + rng.next_unit();
    for (; ri < scene.visible.size() && scene.visible[ri].box == bi; ++ri) {
      const VisibleBlob& vb = scene.visible[ri];
      Tensor& img = scene.images[size_t(vb.cam)];
      const int fh = img.dims[1], fw = img.dims[2];
      const double bu = vb.u / spec.frustum.stride - 0.5;
      const double bv = vb.v / spec.frustum.stride - 0.5;
      const int cu = int(std::lround(bu)), cv = int(std::lround(bv));
      for (int ch = 0; ch < spec.image_channels; ++ch) {
        const double amp = spec.blob_amplitude * scale[size_t(ch)] / vb.d;
        for (int yy = cv - win; yy <= cv + win; ++yy)
          for (int xx = cu - win; xx <= cu + win; ++xx) {
            if (yy < 0 || yy >= fh || xx < 0 || xx >= fw) continue;
            const double du = xx - bu, dv = yy - bv;
            img.at(ch, yy, xx) +=
                float(amp * std::exp(-(du * du + dv * dv) / (2.0 * sig * sig)));
          }
      }
    }
  }

  for (const BevBox& b : scene.boxes) {
    const FaceSeg face = near_face(b);
    for (int k = 0; k < spec.returns_per_box; ++k) {
      const double gate = rng.next_unit();
      if (gate < spec.noise.dropout_prob) continue;
      const double t = rng.next_unit();
      const double z = b.h * rng.next_unit();
      const double g_range = sample_gauss(rng);
      const double g_az = sample_gauss(rng);
      const double rcs_scale = rng.next_unit();
      const double g_dop = sample_gauss(rng);
      const double age = rng.next_unit();

      const double px = face.cx + (t - 0.5) * face.extent * face.tx;
      const double py = face.cy + (t - 0.5) * face.extent * face.ty;
      const double r = std::hypot(px, py) + spec.noise.range_sigma * g_range;
      const double az = std::atan2(py, px) + spec.noise.azimuth_sigma * g_az;
      RadarPoint p;
      p.x = float(r * std::cos(az));
      p.y = float(r * std::sin(az));
      p.z = float(z);
      p.rcs = float(b.rcs * (0.75 + 0.5 * rcs_scale));
      p.doppler = float(1.5 * g_dop);
      p.sweep_age = float(0.5 * age);
      scene.cloud.points.push_back(p);
    }
  }

  const int clutter = sample_poisson(rng, spec.noise.clutter_rate);
  for (int i = 0; i < clutter; ++i) {
    const double r = 1.0 + (spec.grid.range_m - 1.0) * rng.next_unit();
    const double az = -kPi + 2.0 * kPi * rng.next_unit();
    const double z = 2.0 * rng.next_unit();
    const double rcs = 0.05 + 0.95 * rng.next_unit();
    const double g_dop = sample_gauss(rng);
    const double age = rng.next_unit();
    RadarPoint p;
    p.x = float(r * std::cos(az));
    p.y = float(r * std::sin(az));
    p.z = float(z);
    p.rcs = float(rcs);
    p.doppler = float(3.0 * g_dop);
    p.sweep_age = float(0.5 * age);
    scene.cloud.points.push_back(p);
  }

  scene.gt_bev = rasterize_boxes(scene.boxes, spec.grid);
  return scene;
}

std::vector<VisibleBlob> compute_visible(const std::vector<BevBox>& boxes,
                                         const std::vector<CameraModel>& rig,
                                         const FrustumGrid& frustum) {
  std::vector<VisibleBlob> out;
  for (int bi = 0; bi < int(boxes.size()); ++bi) {
    const BevBox& b = boxes[size_t(bi)];
    for (int ci = 0; ci < int(rig.size()); ++ci) {
      const auto pr = try_project_ego_point(rig[size_t(ci)], {b.x, b.y, b.h / 2});
      if (!pr || !pr->in_image || !depth_to_bin(frustum, pr->d)) continue;
      out.push_back({bi, ci, pr->u, pr->v, pr->d});
    }
  }
  return out;
}

Scene apply_sensor_drop(const Scene& scene, const std::vector<int>& drop_cameras,
                        bool drop_radar) {
  for (int idx : drop_cameras)
    if (idx < 0 || idx >= int(scene.images.size()))
      throw std::invalid_argument("apply_sensor_drop: camera index " + std::to_string(idx) +
                                  " out of range");
  Scene out = scene;
  for (int idx : drop_cameras)
    std::fill(out.images[size_t(idx)].data.begin(), out.images[size_t(idx)].data.end(), 0.0f);
  if (drop_radar) out.cloud.points.clear();
  return out;
}

}  // namespace crn

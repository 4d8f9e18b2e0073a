#include "crn/geometry.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace crn {

Mat3 Mat3::identity() {
  Mat3 r;
  r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  return r;
}

Vec3 Mat3::apply(Vec3 v) const {
  return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
          m[3] * v.x + m[4] * v.y + m[5] * v.z,
          m[6] * v.x + m[7] * v.y + m[8] * v.z};
}

Mat3 Mat3::transpose() const {
  Mat3 r;
  r.m = {m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]};
  return r;
}

double Mat3::orthonormality_error() const {
  // max |(R^T R - I)_ij| plus |det - 1|
  double err = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += m[k * 3 + i] * m[k * 3 + j];
      err = std::max(err, std::abs(dot - (i == j ? 1.0 : 0.0)));
    }
  const double det = m[0] * (m[4] * m[8] - m[5] * m[7]) -
                     m[1] * (m[3] * m[8] - m[5] * m[6]) +
                     m[2] * (m[3] * m[7] - m[4] * m[6]);
  return err + std::abs(det - 1.0);
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.rot = rot.transpose();
  Vec3 t = inv.rot.apply(trans);
  inv.trans = {-t.x, -t.y, -t.z};
  return inv;
}

CameraModel CameraModel::make(double fx, double fy, double cx, double cy,
                              RigidTransform cam_from_ego, int image_w, int image_h) {
  CameraModel cam;
  cam.intrinsics = Mat3::identity();
  cam.intrinsics.m[0] = fx;
  cam.intrinsics.m[4] = fy;
  cam.intrinsics.m[2] = cx;
  cam.intrinsics.m[5] = cy;
  cam.cam_from_ego = cam_from_ego;
  cam.image_w = image_w;
  cam.image_h = image_h;
  cam.validate();
  return cam;
}

void CameraModel::validate() const {
  if (fx() <= 0.0 || fy() <= 0.0)
    throw std::invalid_argument("camera focal lengths must be positive");
  if (image_w <= 0 || image_h <= 0)
    throw std::invalid_argument("camera image extents must be positive");
  const auto& k = intrinsics.m;
  if (k[1] != 0.0 || k[3] != 0.0 || k[6] != 0.0 || k[7] != 0.0 || k[8] != 1.0)
    throw std::invalid_argument(
        "camera intrinsics must be upper triangular with unit bottom row");
  if (cam_from_ego.rot.orthonormality_error() > 1e-6)
    throw std::invalid_argument("cam_from_ego rotation is not orthonormal");
  if (z_near <= 0.0) throw std::invalid_argument("z_near must be positive");
}

std::vector<CameraModel> default_rig(int n, int image_w, int image_h, double fx,
                                     double fy, double radius, double height) {
  if (n <= 0) throw std::invalid_argument("rig needs at least one camera");
  std::vector<CameraModel> rig;
  rig.reserve(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) {
    const double yaw = 2.0 * M_PI * k / n;
    const double c = std::cos(yaw), s = std::sin(yaw);
    // ego_from_cam columns: camera right (s, -c, 0), down (0, 0, -1),
    // forward (c, s, 0).
    Mat3 ego_from_cam;
    ego_from_cam.m = {s, 0, c, -c, 0, s, 0, -1, 0};
    RigidTransform ec{ego_from_cam, Vec3{radius * c, radius * s, height}};
    rig.push_back(CameraModel::make(fx, fy, image_w / 2.0, image_h / 2.0,
                                    ec.inverse(), image_w, image_h));
  }
  return rig;
}

Projection project_ego_point(const CameraModel& cam, Vec3 p_ego) {
  auto p = try_project_ego_point(cam, p_ego);
  if (!p)
    throw std::domain_error("point at or behind the camera near plane");
  return *p;
}

std::optional<Projection> try_project_ego_point(const CameraModel& cam, Vec3 p_ego) {
  const Vec3 pc = cam.cam_from_ego.apply(p_ego);
  if (pc.z <= cam.z_near) return std::nullopt;
  Projection out;
  out.u = cam.fx() * pc.x / pc.z + cam.cx();
  out.v = cam.fy() * pc.y / pc.z + cam.cy();
  out.d = pc.z;
  out.in_image = out.u >= 0.0 && out.u < cam.image_w && out.v >= 0.0 &&
                 out.v < cam.image_h;
  return out;
}

Vec3 unproject_pixel(const CameraModel& cam, double u, double v, double d) {
  if (d <= cam.z_near)
    throw std::invalid_argument("unproject depth " + std::to_string(d) +
                                " not beyond near plane " + std::to_string(cam.z_near));
  const Vec3 pc{(u - cam.cx()) * d / cam.fx(), (v - cam.cy()) * d / cam.fy(), d};
  return cam.cam_from_ego.inverse().apply(pc);
}

FrustumGrid FrustumGrid::for_image(int image_w, int image_h, int stride) {
  if (stride <= 0 || image_w <= 0 || image_h <= 0)
    throw std::invalid_argument("frustum grid extents must be positive");
  if (image_w % stride != 0 || image_h % stride != 0)
    throw std::invalid_argument("image extents must be multiples of the stride");
  FrustumGrid g;
  g.feat_w = image_w / stride;
  g.feat_h = image_h / stride;
  g.stride = stride;
  return g;
}

std::optional<int> depth_to_bin(const FrustumGrid& g, double d) {
  if (!(d >= g.d_min) || !(d < g.d_max())) return std::nullopt;
  int bin = static_cast<int>(std::floor((d - g.d_min) / g.d_step));
  if (bin < 0) bin = 0;
  if (bin >= g.d_bins) bin = g.d_bins - 1;
  return bin;
}

double bin_center_depth(const FrustumGrid& g, int bin) {
  if (bin < 0 || bin >= g.d_bins)
    throw std::invalid_argument("depth bin " + std::to_string(bin) + " out of range");
  return g.d_min + (bin + 0.5) * g.d_step;
}

double column_center_px(const FrustumGrid& g, int u) {
  if (u < 0 || u >= g.feat_w)
    throw std::invalid_argument("column " + std::to_string(u) + " out of range");
  return (u + 0.5) * g.stride;
}

std::optional<BevCell> bev_cell_of(const BevGrid& g, double x, double y) {
  if (!(x >= -g.range_m) || !(x < g.range_m)) return std::nullopt;
  if (!(y >= -g.range_m) || !(y < g.range_m)) return std::nullopt;
  auto clamp_idx = [](double v, int n) {
    int i = static_cast<int>(std::floor(v));
    if (i < 0) i = 0;
    if (i >= n) i = n - 1;
    return i;
  };
  BevCell c;
  c.ix = clamp_idx((x + g.range_m) / g.cell_m, g.size_x);
  c.iy = clamp_idx((y + g.range_m) / g.cell_m, g.size_y);
  return c;
}

std::pair<double, double> bev_cell_center(const BevGrid& g, int ix, int iy) {
  if (ix < 0 || ix >= g.size_x || iy < 0 || iy >= g.size_y)
    throw std::invalid_argument("bev cell (" + std::to_string(ix) + ", " +
                                std::to_string(iy) + ") out of grid");
  return {-g.range_m + (ix + 0.5) * g.cell_m, -g.range_m + (iy + 0.5) * g.cell_m};
}

}  // namespace crn

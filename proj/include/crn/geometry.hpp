#pragma once

// Camera projection and the two discretization grids: the per-camera
// frustum (depth bin x image column) and the ego-frame BEV grid. All
// geometry runs in f64.
//
// Frames: ego is +X forward, +Y left, +Z up. Camera is +X right, +Y down,
// +Z forward, so image u grows with camera X and v with camera Y.

#include <array>
#include <optional>
#include <utility>
#include <vector>

namespace crn {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 v) { return {s * v.x, s * v.y, s * v.z}; }

// Row-major 3x3.
struct Mat3 {
  std::array<double, 9> m{};

  static Mat3 identity();
  Vec3 apply(Vec3 v) const;
  Mat3 transpose() const;
  // Deviation of R^T R from the identity plus |det - 1|; 0 for a rotation.
  double orthonormality_error() const;
};

// Rigid map p_out = rot * p_in + trans.
struct RigidTransform {
  Mat3 rot = Mat3::identity();
  Vec3 trans;

  Vec3 apply(Vec3 p) const { return rot.apply(p) + trans; }
  RigidTransform inverse() const;
};

struct CameraModel {
  Mat3 intrinsics;               // [[fx,0,cx],[0,fy,cy],[0,0,1]]
  RigidTransform cam_from_ego;
  int image_w = 0;
  int image_h = 0;
  double z_near = 0.1;

  double fx() const { return intrinsics.m[0]; }
  double fy() const { return intrinsics.m[4]; }
  double cx() const { return intrinsics.m[2]; }
  double cy() const { return intrinsics.m[5]; }

  static CameraModel make(double fx, double fy, double cx, double cy,
                          RigidTransform cam_from_ego, int image_w, int image_h);

  // Throws std::invalid_argument on non-positive focal lengths or image
  // extents, a non-upper-triangular intrinsic matrix, or a cam_from_ego
  // rotation block farther than 1e-6 from orthonormal.
  void validate() const;
};

// A camera ring: n cameras at equal yaw steps starting from +X forward,
// mounted at `radius` from the ego origin at `height`, no pitch or roll.
std::vector<CameraModel> default_rig(int n, int image_w, int image_h, double fx,
                                     double fy, double radius = 0.5,
                                     double height = 1.6);

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double d = 0.0;       // camera-frame Z
  bool in_image = false;  // inside [0, W) x [0, H)
};

// Projects an ego-frame point. Throws std::domain_error when the point is at
// or behind the near plane (Z <= z_near); out-of-image is reported via the
// in_image flag, not an error.
Projection project_ego_point(const CameraModel& cam, Vec3 p_ego);

// Same, but behind-near-plane yields nullopt instead of throwing.
std::optional<Projection> try_project_ego_point(const CameraModel& cam, Vec3 p_ego);

// Inverse of project_ego_point at pixel (u, v) and camera depth d.
// Throws std::invalid_argument when d <= z_near.
Vec3 unproject_pixel(const CameraModel& cam, double u, double v, double d);

// Depth-bin x image-column grid in front of one camera. Columns aggregate
// `stride` pixels; feat_w * stride == image_w is required.
struct FrustumGrid {
  double d_min = 2.0;
  double d_step = 0.5;
  int d_bins = 112;
  int feat_w = 0;
  int feat_h = 0;
  int stride = 16;

  double d_max() const { return d_min + d_step * d_bins; }
  static FrustumGrid for_image(int image_w, int image_h, int stride = 16);
};

// floor((d - d_min) / d_step) for d in [d_min, d_max), else nullopt.
std::optional<int> depth_to_bin(const FrustumGrid& g, double d);
double bin_center_depth(const FrustumGrid& g, int bin);

// Pixel-space center of an image column: (u + 0.5) * stride.
double column_center_px(const FrustumGrid& g, int u);

// Square BEV grid over [-range_m, range_m)^2, cell (ix, iy) covering
// [-range_m + ix*cell_m, ...) in x and likewise in y.
struct BevGrid {
  double range_m = 51.2;
  double cell_m = 0.8;
  int size_x = 128;
  int size_y = 128;

  static BevGrid standard() { return {51.2, 0.8, 128, 128}; }
  static BevGrid long_range() { return {102.4, 0.8, 256, 256}; }
};

struct BevCell {
  int ix = 0;
  int iy = 0;
  bool operator==(const BevCell&) const = default;
};

// Cell containing ego (x, y), or nullopt outside [-range_m, range_m)^2.
std::optional<BevCell> bev_cell_of(const BevGrid& g, double x, double y);

// Ego (x, y) center of a cell. Throws std::invalid_argument out of grid.
std::pair<double, double> bev_cell_center(const BevGrid& g, int ix, int iy);

}  // namespace crn

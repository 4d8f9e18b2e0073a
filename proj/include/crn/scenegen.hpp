// Deterministic synthetic scenes: oriented boxes on a ground plane, Gaussian
// feature blobs painted onto per-camera feature images, radar returns on each
// box's near face plus Poisson clutter, and an analytic BEV occupancy mask.
//
// generate() is a pure function of the scene spec. Draw order per scene (one Rng
// seeded from spec.seed):
//   1. per box (unless fixed_boxes is set): bearing, radius, [jitter x, y],
//      width, length, height, yaw, rcs
//   2. per box: image_channels amplitude scales in [0.5, 1.5)
//   3. per box, per return: dropout gate, edge position, z, range noise,
//      azimuth noise, rcs scale, doppler, sweep age (skipped after a
//      dropped gate)
//   4. clutter count, then per point: range, azimuth, z, rcs, doppler, age
#pragma once

#include <cstdint>
#include <vector>

#include "crn/geometry.hpp"
#include "crn/radar.hpp"
#include "crn/tensor.hpp"

namespace crn {

// Footprint is l along the yaw heading, w across it; the box rests on the
// ground so its center sits at z = h / 2.
struct BevBox {
  double x = 0.0, y = 0.0;
  double w = 2.0, l = 4.0, h = 1.6;
  double yaw = 0.0;
  double rcs = 10.0;
};

struct RadarNoiseSpec {
  double range_sigma = 0.1;      // meters
  double azimuth_sigma = 0.005;  // radians
  double dropout_prob = 0.0;     // per-return drop probability
  double clutter_rate = 0.0;     // Poisson mean, points per scene
};

struct SceneSpec {
  std::uint64_t seed = 0;
  int n_boxes = 4;
  double place_r_min = 6.0;  // centers sampled on this ring
  double place_r_max = 20.0;
  bool snap_to_cell = false;      // snap sampled centers to BEV cell centers
  double center_jitter_m = 0.0;   // uniform +- jitter applied after the snap
  double box_w_min = 1.6, box_w_max = 2.6;
  double box_l_min = 3.5, box_l_max = 5.5;
  double box_h_min = 1.2, box_h_max = 2.2;
  double rcs_min = 2.0, rcs_max = 20.0;
  int returns_per_box = 12;
  RadarNoiseSpec noise;
  double blob_amplitude = 4.0;  // peak at 1 m; scales with 1 / distance
  double blob_sigma_px = 1.5;   // in feature-map pixels
  double image_bias = 0.1;      // constant fill before painting
  int image_channels = 8;
  std::vector<CameraModel> rig;
  FrustumGrid frustum;  // depth gate for blob visibility
  BevGrid grid;
  std::vector<BevBox> fixed_boxes;  // non-empty: use verbatim, skip sampling

  // 6-camera surround rig, 704x256 images, 51.2 m grid.
  static SceneSpec standard(std::uint64_t seed);
  void validate() const;
};

struct VisibleBlob {
  int box = 0;
  int cam = 0;
  double u = 0.0, v = 0.0, d = 0.0;  // projected center, image pixels / meters
};

struct Scene {
  SceneSpec spec;
  std::vector<BevBox> boxes;
  std::vector<Tensor> images;  // per camera [C_in, feat_h, feat_w]
  RadarPointCloud cloud;
  Tensor gt_bev;  // [1, X, Y], 1 iff a box footprint intersects the cell
  std::vector<VisibleBlob> visible;
};

Scene generate(const SceneSpec& spec);

// Box-major, camera-minor records of every box center that projects in-image
// with a depth inside the frustum gate. generate() paints exactly these.
std::vector<VisibleBlob> compute_visible(const std::vector<BevBox>& boxes,
                                         const std::vector<CameraModel>& rig,
                                         const FrustumGrid& frustum);

// Closed-rectangle overlap (boundary contact counts), separating-axis test.
Tensor rasterize_boxes(const std::vector<BevBox>& boxes, const BevGrid& grid);

// Zeroes the listed cameras' images and optionally empties the point cloud;
// everything else is untouched. Out-of-range camera index throws.
Scene apply_sensor_drop(const Scene& scene, const std::vector<int>& drop_cameras,
                        bool drop_radar);

// Standard normal via Box-Muller; consumes exactly two uniform draws.
double sample_gauss(Rng& rng);

// Poisson count by inverse-exponential accumulation; mean must be >= 0 and
// small enough for exp(-mean) to stay normal (mean <= 600 in practice).
int sample_poisson(Rng& rng, double mean);

}  // namespace crn

// End-to-end forward pass over a scene: camera heads -> radar encode ->
// view transform -> voxel pooling -> attention refinement. Stages are timed
// individually; per-camera stages run under parallel_for with disjoint
// writes, so outputs are bit-identical for any thread count.
#pragma once

#include <string>
#include <vector>

#include "crn/camera.hpp"
#include "crn/mfa.hpp"
#include "crn/radar.hpp"
#include "crn/rvt.hpp"
#include "crn/scenegen.hpp"

namespace crn {

struct ModelConfig {
  int image_channels = 8;  // C_in, must match the scene's images
  int channels = 64;       // C, shared across every stage
  int d_bins = 112;        // must match the scene's frustum gate
  int pillar_p_max = 8;    // radar points kept per pillar
  MdcaConfig mdca;         // mdca.channels must equal channels
  BevGrid grid = BevGrid::standard();

  void validate() const;
};

struct PipelineOptions {
  ViewTransformMode view_mode = ViewTransformMode::kRadarAssisted;
  DepthActivation depth_act = DepthActivation::kSoftmax;
  MfaMode mfa_mode = MfaMode::kDense;
  int threads = 1;
  std::vector<int> drop_cameras;
  bool drop_radar = false;
};

struct ModelWeights {
  CameraHeadWeights camera;
  RadarHeadWeights radar;
  RvtWeights rvt;
  MdcaWeights mdca;

  // Draw order: camera, radar, rvt, mdca sub-inits on one shared rng.
  static ModelWeights init(Rng& rng, const ModelConfig& cfg);
};

// Name, storage, and expected dims of every tensor in the model, in a fixed
// order. save/load and the shape checks all walk this one list.
struct WeightEntry {
  std::string name;
  Tensor* tensor;
  std::vector<int> dims;
};
std::vector<WeightEntry> weight_registry(ModelWeights& w, const ModelConfig& cfg);

// Directory with manifest.json plus one CRNT file per tensor. Loading
// validates the manifest's config block and every tensor shape against cfg.
void save_weights(ModelWeights& w, const ModelConfig& cfg, const std::string& dir);
ModelWeights load_weights(const std::string& dir, const ModelConfig& cfg);

// Throws std::invalid_argument for an out-of-range index or when the drops
// leave no input modality (every camera dropped and radar dropped).
void validate_drops(int n_cameras, const std::vector<int>& drop_cameras, bool drop_radar);

struct StageTiming {
  std::string stage;
  double ms = 0.0;
};

struct PipelineResult {
  Tensor bev_feature;         // [C, X, Y]
  BevFeatureBundle bundle;    // pooled intermediates feeding the attention
  std::vector<int> selected;  // refined cell indices
  MdcaStats stats;
  std::vector<StageTiming> timings;  // camera_heads, radar_encode,
                                     // view_transform, voxel_pool, attention
  double total_ms = 0.0;
};

PipelineResult run_pipeline(const Scene& scene, const ModelWeights& w,
                            const ModelConfig& cfg, const PipelineOptions& opts);

}  // namespace crn

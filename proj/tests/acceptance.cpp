// Release gate: one self-timed check per line, PASS/FAIL plus the measured
// runtime against the per-check budget. Exit 0 only when every line passes.
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "crn/bench.hpp"
#include "crn/camera.hpp"
#include "crn/geometry.hpp"
#include "crn/mfa.hpp"
#include "crn/pipeline.hpp"
#include "crn/rvt.hpp"
#include "crn/scenegen.hpp"
#include "crn/tensor.hpp"

namespace fs = std::filesystem;
using namespace crn;

namespace {

struct Outcome {
  bool ok = false;
  std::string detail;
};

Tensor rand_t(Rng& rng, std::vector<int> dims, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(dims));
  for (auto& v : t.data) v = float(lo + (hi - lo) * rng.next_unit());
  return t;
}

bool close(double got, double want, double tol) {
  return std::abs(got - want) <= tol * std::max(1.0, std::abs(want));
}

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(3);
  out << v;
  return out.str();
}

// Depth distributions must sum to one per pixel under the softmax head, and
// every attention softmax across all layers must sum to one per (query, head).
Outcome check_normalization() {
  Rng rng(21);
  double depth_err = 0.0;
  for (int trial = 0; trial < 3; ++trial) {
    CameraHeadWeights w = CameraHeadWeights::init(rng, 3, 8, 24);
    Tensor img = rand_t(rng, {3, 5, 9}, -2.0, 2.0);
    CameraMaps maps =
        context_depth_heads(extract_features(img, w), w, DepthActivation::kSoftmax);
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 9; ++x) {
        double sum = 0.0;
        for (int d = 0; d < 24; ++d) sum += maps.depth.at(d, y, x);
        depth_err = std::max(depth_err, std::abs(sum - 1.0));
      }
  }

  MdcaConfig cfg;
  cfg.channels = 32;
  cfg.heads = 4;
  cfg.layers = 6;
  cfg.top_k = 64;
  MdcaWeights w = MdcaWeights::init(rng, cfg);
  const BevFeatureBundle bundle = bench_bundle(22, cfg.channels, 16, 16);
  double attn_err = 0.0;
  for (MfaMode mode : {MfaMode::kDense, MfaMode::kSparse}) {
    const MfaResult res = mfa_forward(bundle, w, cfg, mode);
    attn_err = std::max(attn_err, res.stats.max_attention_sum_err);
  }

  const bool ok = depth_err <= 1e-6 && attn_err <= 1e-6;
  return {ok, "depth sum err " + fmt(depth_err) + ", attention sum err " +
                  fmt(attn_err) + " over 6 layers"};
}

// Average voxel pooling must match a brute-force group-by-cell mean and be
// bit-identical under a shuffled visit order, on 50 random small instances.
Outcome check_pooling_oracle() {
  double max_err = 0.0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const int C = 3;
    std::vector<CameraModel> cams = default_rig(2, 128, 32, 40.0, 40.0);
    FrustumGrid fgrid = FrustumGrid::for_image(128, 32);
    fgrid.d_bins = 8;
    fgrid.d_step = 8.0;  // reaches past the grid edge so some cells drop
    const BevGrid bgrid = BevGrid::standard();
    Rng rng(seed * 977);
    std::vector<Tensor> img, rad, dep, occ;
    for (int i = 0; i < 2; ++i) {
      img.push_back(rand_t(rng, {C, fgrid.d_bins, fgrid.feat_w}));
      rad.push_back(rand_t(rng, {C, fgrid.d_bins, fgrid.feat_w}));
      dep.push_back(rand_t(rng, {1, fgrid.d_bins, fgrid.feat_w}, 0.0, 1.0));
      occ.push_back(rand_t(rng, {1, fgrid.d_bins, fgrid.feat_w}, 0.0, 1.0));
    }
    const BevFeatureBundle got = voxel_pool_avg(img, rad, dep, occ, cams, fgrid, bgrid);

    struct CellAcc {
      std::vector<double> img, rad;
      float dmax = 0.0f, omax = 0.0f;
      int count = 0;
    };
    std::map<std::pair<int, int>, CellAcc> cells;
    for (int cam = 0; cam < 2; ++cam)
      for (int d = 0; d < fgrid.d_bins; ++d)
        for (int u = 0; u < fgrid.feat_w; ++u) {
          const Vec3 p = unproject_pixel(cams[size_t(cam)], column_center_px(fgrid, u),
                                         cams[size_t(cam)].cy(), bin_center_depth(fgrid, d));
          const auto cell = bev_cell_of(bgrid, p.x, p.y);
          if (!cell) continue;
          CellAcc& acc = cells[{cell->ix, cell->iy}];
          if (acc.img.empty()) {
            acc.img.assign(C, 0.0);
            acc.rad.assign(C, 0.0);
          }
          for (int c = 0; c < C; ++c) {
            acc.img[size_t(c)] += img[size_t(cam)].at(c, d, u);
            acc.rad[size_t(c)] += rad[size_t(cam)].at(c, d, u);
          }
          acc.dmax = std::max(acc.dmax, dep[size_t(cam)].at(0, d, u));
          acc.omax = std::max(acc.omax, occ[size_t(cam)].at(0, d, u));
          ++acc.count;
        }
    for (const auto& [key, acc] : cells)
      for (int c = 0; c < C; ++c) {
        max_err = std::max(max_err,
                           std::abs(double(got.img_ctx.at(c, key.first, key.second)) -
                                    acc.img[size_t(c)] / acc.count));
        max_err = std::max(max_err,
                           std::abs(double(got.radar_ctx.at(c, key.first, key.second)) -
                                    acc.rad[size_t(c)] / acc.count));
      }
    if (max_err > 1e-6)
      return {false, "seed " + std::to_string(seed) + " mean err " + fmt(max_err)};

    std::vector<FrustumCellJob> jobs;
    for (int cam = 0; cam < 2; ++cam)
      for (int d = 0; d < fgrid.d_bins; ++d)
        for (int u = 0; u < fgrid.feat_w; ++u) jobs.push_back({cam, d, u});
    for (size_t i = jobs.size(); i > 1; --i)
      std::swap(jobs[i - 1], jobs[rng.next_u64() % i]);
    const BevFeatureBundle ord =
        voxel_pool_avg_ordered(img, rad, dep, occ, cams, fgrid, bgrid, jobs);
    const auto same = [](const Tensor& a, const Tensor& b) {
      return a.dims == b.dims &&
             std::memcmp(a.data.data(), b.data.data(), 4 * a.data.size()) == 0;
    };
    if (!(same(got.img_ctx, ord.img_ctx) && same(got.radar_ctx, ord.radar_ctx) &&
          same(got.depth_conf, ord.depth_conf) && same(got.occ_conf, ord.occ_conf) &&
          same(got.count, ord.count)))
      return {false, "seed " + std::to_string(seed) + ": shuffled order changed bits"};
  }
  return {true, "50 instances, max mean err " + fmt(max_err) +
                    ", shuffled order bit-identical"};
}

// Sparse refinement must agree with dense refinement at the selected cells.
Outcome check_sparse_dense() {
  MdcaConfig cfg;  // 64 channels, 8 heads, 4 points, 6 layers
  double max_err = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const BevFeatureBundle bundle = bench_bundle(seed, cfg.channels, 32, 32);
    Rng rng(seed * 31 + 7);
    const MdcaWeights w = MdcaWeights::init(rng, cfg);
    const MfaResult dense = mfa_forward(bundle, w, cfg, MfaMode::kDense);
    for (const int nk : {16, 128, 1024}) {
      MdcaConfig scfg = cfg;
      scfg.top_k = nk;
      const MfaResult sparse = mfa_forward(bundle, w, scfg, MfaMode::kSparse);
      if (int(sparse.selected.size()) != nk)
        return {false, "expected " + std::to_string(nk) + " selected cells, got " +
                           std::to_string(sparse.selected.size())};
      for (const int q : sparse.selected)
        for (int c = 0; c < cfg.channels; ++c)
          max_err = std::max(max_err,
                             std::abs(double(sparse.feature.data[size_t(c) * 1024 + q]) -
                                      double(dense.feature.data[size_t(c) * 1024 + q])));
    }
  }
  return {max_err <= 1e-6,
          "10 seeds, n_k in {16, 128, 1024}, max err " + fmt(max_err)};
}

// With zero attention logits and zero offsets every slot samples the query's
// own cell with uniform weight, so one attention application reduces to an
// analytic two-modality convex combination.
Outcome check_attention_closed_form() {
  MdcaConfig cfg;
  cfg.channels = 16;
  cfg.heads = 4;
  cfg.points = 3;
  cfg.layers = 2;
  double max_err = 0.0;
  for (std::uint64_t seed = 40; seed < 43; ++seed) {
    Rng rng(seed);
    MdcaWeights w = MdcaWeights::init(rng, cfg);
    MdcaLayerWeights& l = w.layers[0];
    for (auto& v : l.attn_w.data) v = 0.0f;
    for (auto& v : l.attn_b.data) v = 0.0f;
    for (auto& v : l.offset_w.data) v = 0.0f;
    for (auto& v : l.offset_b.data) v = 0.0f;

    BevFeatureBundle b;
    b.grid = BevGrid{51.2, 0.8, 8, 4};
    b.img_ctx = rand_t(rng, {cfg.channels, 8, 4});
    b.radar_ctx = rand_t(rng, {cfg.channels, 8, 4});
    b.depth_conf = rand_t(rng, {1, 8, 4}, 0.0, 1.0);
    b.occ_conf = rand_t(rng, {1, 8, 4}, 0.0, 1.0);
    b.count = rand_t(rng, {1, 8, 4}, 1.0, 5.0);
    const QueryMap q = query_project(b, w, cfg);
    const Tensor got = mdca(q, b.img_ctx, b.radar_ctx, l, cfg);

    const int cv = cfg.head_dim();
    for (int qi = 0; qi < 32; ++qi) {
      std::vector<double> want(size_t(cfg.channels), 0.0);
      for (int h = 0; h < cfg.heads; ++h) {
        std::vector<double> head(size_t(cv), 0.0);
        for (int m = 0; m < kMdcaModalities; ++m) {
          const Tensor& map = m == 0 ? b.img_ctx : b.radar_ctx;
          for (int v = 0; v < cv; ++v) {
            double acc = 0.0;
            for (int c = 0; c < cfg.channels; ++c)
              acc += double(l.value_w.at(h, m, v, c)) * double(map.data[size_t(c) * 32 + qi]);
            head[size_t(v)] += acc / kMdcaModalities;
          }
        }
        for (int c = 0; c < cfg.channels; ++c)
          for (int v = 0; v < cv; ++v)
            want[size_t(c)] += double(l.out_w.at(h, c, v)) * head[size_t(v)];
      }
      for (int c = 0; c < cfg.channels; ++c)
        max_err = std::max(max_err, std::abs(double(got.at(c, qi)) - want[size_t(c)]));
    }
  }
  return {max_err <= 1e-5, "3 seeds, max err vs analytic form " + fmt(max_err)};
}

Outcome check_geometry() {
  const std::vector<CameraModel> rig = default_rig(6, 704, 256, 350.0, 350.0);
  Rng rng(61);
  double max_rel = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const CameraModel& cam = rig[size_t(rng.next_u64() % rig.size())];
    const double u = rng.next_unit() * 704.0;
    const double v = rng.next_unit() * 256.0;
    const double d = 2.0 + rng.next_unit() * 56.0;
    const Vec3 p = unproject_pixel(cam, u, v, d);
    const Projection proj = project_ego_point(cam, p);
    const double err = std::max({std::abs(proj.u - u), std::abs(proj.v - v),
                                 std::abs(proj.d - d)});
    const double scale = std::max({1.0, std::abs(u), std::abs(v), std::abs(d)});
    max_rel = std::max(max_rel, err / scale);

    const Vec3 p2 = unproject_pixel(cam, proj.u, proj.v, proj.d);
    const double perr = std::sqrt((p2.x - p.x) * (p2.x - p.x) +
                                  (p2.y - p.y) * (p2.y - p.y) +
                                  (p2.z - p.z) * (p2.z - p.z));
    const double pscale =
        std::max(1.0, std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z));
    max_rel = std::max(max_rel, perr / pscale);
  }
  if (max_rel > 1e-9)
    return {false, "projection round trip rel err " + fmt(max_rel)};

  const BevGrid grid = BevGrid::standard();
  for (int ix = 0; ix < grid.size_x; ++ix)
    for (int iy = 0; iy < grid.size_y; ++iy) {
      const auto [x, y] = bev_cell_center(grid, ix, iy);
      const auto cell = bev_cell_of(grid, x, y);
      if (!cell || cell->ix != ix || cell->iy != iy)
        return {false, "cell center round trip failed at (" + std::to_string(ix) +
                           ", " + std::to_string(iy) + ")"};
    }

  const FrustumGrid f = FrustumGrid::for_image(704, 256);
  if (f.d_bins != 112 || f.d_min != 2.0 || f.d_max() != 58.0)
    return {false, "depth grid is not 112 bins over [2.0, 58.0)"};
  if (depth_to_bin(f, 2.0) != 0 || depth_to_bin(f, 57.999999) != 111 ||
      depth_to_bin(f, 58.0).has_value() || depth_to_bin(f, 1.999).has_value())
    return {false, "depth bin boundaries are wrong"};
  for (int b = 0; b < f.d_bins; ++b)
    if (depth_to_bin(f, bin_center_depth(f, b)) != b)
      return {false, "bin center does not map back to bin " + std::to_string(b)};

  return {true, "projection rel err " + fmt(max_rel) +
                    ", exact cell round trips, 112 bins over [2.0, 58.0)"};
}

// Single-box scenes, uniform depth distributions, and a crafted one-hot
// occupancy at the box's true depth bin: the radar-assisted transform must
// put the strongest pooled response in the box's cell; the depth-only
// transform has no occupancy signal, so its argmax is reported but free.
Outcome check_localization() {
  const int C = 4;
  int radar_hits = 0, depth_hits = 0;
  for (int trial = 0; trial < 20; ++trial) {
    SceneSpec spec;
    spec.seed = 900 + std::uint64_t(trial);
    spec.n_boxes = 1;
    spec.snap_to_cell = true;
    spec.place_r_min = 6.0;
    spec.place_r_max = 18.0;
    spec.returns_per_box = 0;
    spec.noise = RadarNoiseSpec{0.0, 0.0, 0.0, 0.0};
    spec.image_bias = 0.0;
    spec.image_channels = C;
    spec.rig = default_rig(6, 704, 256, 350.0, 350.0);
    spec.frustum = FrustumGrid::for_image(704, 256);
    spec.grid = BevGrid{51.2, 1.6, 64, 64};
    const Scene s = generate(spec);
    const auto gt = bev_cell_of(spec.grid, s.boxes[0].x, s.boxes[0].y);
    if (!gt) return {false, "box landed outside the grid"};
    const int gt_flat = gt->ix * spec.grid.size_y + gt->iy;

    // Identity center taps: fused = depth branch + occupancy branch.
    RvtWeights rw;
    rw.fuse.w = Tensor({C, 2 * C, 3, 3});
    rw.fuse.b = Tensor({C});
    rw.lift.w = Tensor({C, C, 3, 3});
    rw.lift.b = Tensor({C});
    for (int c = 0; c < C; ++c) {
      rw.fuse.w.at(c, c, 1, 1) = 1.0f;
      rw.fuse.w.at(c, C + c, 1, 1) = 1.0f;
      rw.lift.w.at(c, c, 1, 1) = 1.0f;
    }

    const int D = spec.frustum.d_bins, H = spec.frustum.feat_h,
              W = spec.frustum.feat_w;
    std::vector<Tensor> fv_radar, fv_depth, zeros, conf, occs;
    for (size_t cam = 0; cam < s.images.size(); ++cam) {
      Tensor depth({D, H, W});
      for (auto& v : depth.data) v = 1.0f / float(D);
      Tensor occ({1, D, W});
      for (const VisibleBlob& blob : s.visible) {
        if (blob.cam != int(cam)) continue;
        const auto bin = depth_to_bin(spec.frustum, blob.d);
        if (!bin) continue;
        const int col = std::min(W - 1, std::max(0, int(blob.u) / spec.frustum.stride));
        occ.at(0, *bin, col) = 1.0f;
      }
      fv_radar.push_back(frustum_transform(s.images[cam], depth, &occ, rw,
                                           ViewTransformMode::kRadarAssisted));
      fv_depth.push_back(frustum_transform(s.images[cam], depth, nullptr, rw,
                                           ViewTransformMode::kDepthOnly));
      zeros.push_back(Tensor({C, D, W}));
      conf.push_back(collapse_depth_conf(depth));
      occs.push_back(std::move(occ));
    }

    const auto argmax_cell = [&](const std::vector<Tensor>& fv) {
      const BevFeatureBundle pooled = voxel_pool_avg(fv, zeros, conf, occs, spec.rig,
                                                     spec.frustum, spec.grid);
      const std::int64_t n = std::int64_t(spec.grid.size_x) * spec.grid.size_y;
      int best = 0;
      double best_v = -1.0;
      for (std::int64_t q = 0; q < n; ++q) {
        double v = 0.0;
        for (int c = 0; c < C; ++c) v += std::abs(pooled.img_ctx.data[size_t(c) * n + q]);
        if (v > best_v) {
          best_v = v;
          best = int(q);
        }
      }
      return best;
    };
    radar_hits += argmax_cell(fv_radar) == gt_flat ? 1 : 0;
    depth_hits += argmax_cell(fv_depth) == gt_flat ? 1 : 0;
  }
  return {radar_hits >= 19, "radar-assisted " + std::to_string(radar_hits) +
                                "/20, depth-only " + std::to_string(depth_hits) +
                                "/20 (not required)"};
}

Outcome check_complexity() {
  const BenchReport report = bench_mfa({{128, 128}, {256, 256}},
                                       {MfaMode::kDense, MfaMode::kSparse},
                                       4096, 5, 1);
  const std::vector<std::string> failures = check_scaling(report);
  double dense_ratio = 0.0, sparse_ratio = 0.0;
  for (const BenchRatio& r : report.ratios)
    (r.mode == "dense" ? dense_ratio : sparse_ratio) = r.median_ratio;
  double dense256 = 0.0, sparse256 = 0.0;
  for (const BenchRow& row : report.rows)
    if (row.grid_x == 256) (row.mode == "dense" ? dense256 : sparse256) = row.median_ms;
  std::string detail = "dense x" + fmt(dense_ratio) + " (band [3.5, 4.5]), sparse x" +
                       fmt(sparse_ratio) + " (<= 1.3), sparse speedup x" +
                       fmt(dense256 / sparse256) + " (>= 2)";
  for (const std::string& f : failures) detail += "; " + f;
  return {failures.empty(), detail};
}

// Every camera subset times radar on/off must run to finite outputs; dropping
// everything must be rejected.
Outcome check_robustness() {
  SceneSpec spec;
  spec.seed = 77;
  spec.n_boxes = 3;
  spec.place_r_min = 6.0;
  spec.place_r_max = 18.0;
  spec.returns_per_box = 10;
  spec.noise = RadarNoiseSpec{0.05, 0.002, 0.0, 5.0};
  spec.image_channels = 3;
  spec.rig = default_rig(6, 256, 128, 120.0, 120.0);
  spec.frustum = FrustumGrid{2.0, 7.0, 8, 16, 8, 16};
  spec.grid = BevGrid{51.2, 3.2, 32, 32};
  const Scene scene = generate(spec);

  ModelConfig cfg;
  cfg.image_channels = 3;
  cfg.channels = 16;
  cfg.d_bins = 8;
  cfg.pillar_p_max = 6;
  cfg.mdca = MdcaConfig{16, 4, 2, 2, 64};
  cfg.grid = spec.grid;
  Rng rng(5);
  const ModelWeights w = ModelWeights::init(rng, cfg);

  int runs = 0;
  for (int mask = 0; mask < 64; ++mask)
    for (const bool drop_radar : {false, true}) {
      PipelineOptions opts;
      opts.drop_radar = drop_radar;
      for (int i = 0; i < 6; ++i)
        if (mask & (1 << i)) opts.drop_cameras.push_back(i);
      if (mask == 63 && drop_radar) {
        try {
          run_pipeline(scene, w, cfg, opts);
          return {false, "dropping every sensor was not rejected"};
        } catch (const std::invalid_argument&) {
          continue;
        }
      }
      const PipelineResult res = run_pipeline(scene, w, cfg, opts);
      for (const float v : res.bev_feature.data)
        if (!std::isfinite(v))
          return {false, "non-finite output with camera mask " + std::to_string(mask) +
                             (drop_radar ? " and radar dropped" : "")};
      ++runs;
    }
  return {true, std::to_string(runs) +
                    " drop combinations finite, all-dropped rejected"};
}

Outcome check_determinism() {
  const Scene scene = generate(SceneSpec::standard(42));
  ModelConfig cfg;  // matches the standard scene: 8 input channels, 112 bins
  Rng rng(7);
  const ModelWeights w = ModelWeights::init(rng, cfg);

  const fs::path dir = fs::temp_directory_path() / "crn_acceptance";
  fs::create_directories(dir);
  const auto run_to_file = [&](int threads, const std::string& name) {
    PipelineOptions opts;
    opts.threads = threads;
    const PipelineResult res = run_pipeline(scene, w, cfg, opts);
    const std::string path = (dir / name).string();
    save_crnt(path, res.bev_feature);
    std::ifstream in(path, std::ios::binary);
    std::ostringstream bytes;
    bytes << in.rdbuf();
    return bytes.str();
  };
  const std::string a = run_to_file(1, "t1_a.crnt");
  const std::string b = run_to_file(1, "t1_b.crnt");
  const std::string c = run_to_file(4, "t4.crnt");
  if (a.empty() || a != b) return {false, "repeat runs differ"};
  if (a != c) return {false, "thread counts 1 and 4 differ"};
  return {true, "bit-identical files across runs and threads 1 vs 4 (" +
                    std::to_string(a.size()) + " bytes)"};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double limit_s;
    std::function<Outcome()> fn;
  };
  const std::vector<Criterion> criteria = {
      {"normalization", 10.0, check_normalization},
      {"pooling-oracle", 10.0, check_pooling_oracle},
      {"sparse-dense-agreement", 60.0, check_sparse_dense},
      {"attention-closed-form", 5.0, check_attention_closed_form},
      {"geometry-round-trips", 5.0, check_geometry},
      {"radar-assisted-localization", 60.0, check_localization},
      {"complexity-scaling", 300.0, check_complexity},
      {"drop-robustness", 60.0, check_robustness},
      {"determinism", 60.0, check_determinism},
  };

  bool all_ok = true;
  for (const Criterion& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool ok = o.ok && elapsed < c.limit_s;
    std::printf("%s %s: %s [%.1f s, limit %.0f s]\n", ok ? "PASS" : "FAIL", c.name,
                o.detail.c_str(), elapsed, c.limit_s);
    std::fflush(stdout);
    all_ok = all_ok && ok;
  }
  return all_ok ? 0 : 1;
}

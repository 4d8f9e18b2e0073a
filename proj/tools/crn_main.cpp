// Command-line driver: scene generation, pipeline runs with ablation flags,
// and the scaling benchmark. Exit codes: 0 success, 1 validation or argument
// error, 2 I/O error, 3 assertion failure.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "crn/bench.hpp"
#include "crn/pipeline.hpp"
#include "crn/scene_io.hpp"
#include "crn/scenegen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;
constexpr int kExitAssertion = 3;

struct GenSceneArgs {
  std::uint64_t seed = 42;
  int boxes = 8;
  double dropout = 0.05;
  double clutter = 15.0;
  std::string out = "scene.json";
};

struct RunArgs {
  std::string scene;
  std::string out = "out";
  std::string mode = "radar-assisted";
  std::string depth_act = "softmax";
  bool sparse = false;
  bool verify_sparse = false;
  int nk = 4096;
  std::vector<int> drop_cameras;
  bool drop_radar = false;
  int threads = 1;
  std::uint64_t seed = 1;
  bool seed_given = false;
  std::string weights;
};

struct BenchArgs {
  std::vector<int> grids{128, 256};
  std::vector<std::string> modes{"dense", "sparse"};
  int nk = 4096;
  int repeats = 5;
  int threads = 1;
  std::uint64_t seed = 73;
  std::string out = ".";
  bool assert_bands = false;
  std::string scene;
};

// Weight seed precedence: explicit --seed, then CRN_SEED, then the default.
std::uint64_t resolve_seed(std::uint64_t flag_value, bool flag_given) {
  if (flag_given) return flag_value;
  const char* env = std::getenv("CRN_SEED");
  if (env == nullptr) return flag_value;
  char* end = nullptr;
  const std::uint64_t v = std::strtoull(env, &end, 10);
  if (end == env || *end != '\0')
    throw std::invalid_argument("CRN_SEED is not an unsigned integer: " +
                                std::string(env));
  return v;
}

// [C, X, Y] -> per-cell max over channels, min-max scaled to 8-bit P5.
// A constant projection maps to all zeros.
void write_pgm(const std::string& path, const crn::Tensor& f) {
  const int c = f.dims[0], x = f.dims[1], y = f.dims[2];
  const std::int64_t n = std::int64_t(x) * y;
  std::vector<float> proj(size_t(n), -std::numeric_limits<float>::infinity());
  for (int ch = 0; ch < c; ++ch)
    for (std::int64_t i = 0; i < n; ++i)
      proj[size_t(i)] = std::max(proj[size_t(i)], f.data[size_t(ch) * n + i]);
  const auto [mn_it, mx_it] = std::minmax_element(proj.begin(), proj.end());
  const float mn = *mn_it, mx = *mx_it;
  const float scale = mx > mn ? 255.0f / (mx - mn) : 0.0f;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw crn::IoError("cannot open for writing: " + path);
  out << "P5\n" << y << " " << x << "\n255\n";
  const size_t row_bytes = size_t(y);
  std::vector<unsigned char> row(row_bytes);
  for (int ix = 0; ix < x; ++ix) {
    for (int iy = 0; iy < y; ++iy) {
      const float v = (proj[size_t(ix) * y + iy] - mn) * scale;
      row[size_t(iy)] = static_cast<unsigned char>(
          std::clamp(std::lround(v), 0l, 255l));
    }
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!out) throw crn::IoError("write failed: " + path);
}

crn::ModelConfig config_for_scene(const crn::Scene& scene, int nk) {
  crn::ModelConfig cfg;
  cfg.image_channels = scene.spec.image_channels;
  cfg.d_bins = scene.spec.frustum.d_bins;
  cfg.mdca.top_k = nk;
  cfg.grid = scene.spec.grid;
  return cfg;
}

crn::PipelineOptions options_from(const RunArgs& a) {
  crn::PipelineOptions opts;
  if (a.mode == "radar-assisted")
    opts.view_mode = crn::ViewTransformMode::kRadarAssisted;
  else if (a.mode == "depth-only")
    opts.view_mode = crn::ViewTransformMode::kDepthOnly;
  else
    throw std::invalid_argument("--mode must be radar-assisted or depth-only");
  if (a.depth_act == "softmax")
    opts.depth_act = crn::DepthActivation::kSoftmax;
  else if (a.depth_act == "sigmoid")
    opts.depth_act = crn::DepthActivation::kSigmoid;
  else
    throw std::invalid_argument("--depth-act must be softmax or sigmoid");
  opts.mfa_mode = a.sparse ? crn::MfaMode::kSparse : crn::MfaMode::kDense;
  opts.threads = a.threads;
  opts.drop_cameras = a.drop_cameras;
  opts.drop_radar = a.drop_radar;
  return opts;
}

json config_json(const crn::ModelConfig& cfg, const crn::PipelineOptions& opts) {
  return json{
      {"image_channels", cfg.image_channels},
      {"channels", cfg.channels},
      {"d_bins", cfg.d_bins},
      {"pillar_p_max", cfg.pillar_p_max},
      {"mdca",
       {{"channels", cfg.mdca.channels},
        {"heads", cfg.mdca.heads},
        {"points", cfg.mdca.points},
        {"layers", cfg.mdca.layers},
        {"top_k", cfg.mdca.top_k}}},
      {"grid",
       {{"range_m", cfg.grid.range_m},
        {"cell_m", cfg.grid.cell_m},
        {"size_x", cfg.grid.size_x},
        {"size_y", cfg.grid.size_y}}},
      {"view_transform", opts.view_mode == crn::ViewTransformMode::kRadarAssisted
                             ? "radar-assisted"
                             : "depth-only"},
      {"depth_activation",
       opts.depth_act == crn::DepthActivation::kSoftmax ? "softmax" : "sigmoid"},
      {"attention", opts.mfa_mode == crn::MfaMode::kSparse ? "sparse" : "dense"},
      {"drop_cameras", opts.drop_cameras},
      {"drop_radar", opts.drop_radar},
      {"threads", opts.threads},
  };
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw crn::IoError("cannot open for writing: " + path);
  out << text;
  if (!out) throw crn::IoError("write failed: " + path);
}

int cmd_gen_scene(const GenSceneArgs& a) {
  crn::SceneSpec spec = crn::SceneSpec::standard(a.seed);
  spec.n_boxes = a.boxes;
  spec.noise.dropout_prob = a.dropout;
  spec.noise.clutter_rate = a.clutter;
  spec.validate();

  const crn::Scene scene = crn::generate(spec);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  crn::save_scene(scene, a.out);

  std::int64_t occupied = 0;
  for (const float v : scene.gt_bev.data) occupied += v > 0.0f ? 1 : 0;
  std::cout << a.out << ": " << scene.boxes.size() << " boxes, "
            << scene.cloud.points.size() << " radar returns, "
            << scene.visible.size() << " visible blobs, " << occupied
            << " occupied cells, " << scene.spec.rig.size() << " cameras\n";
  return kExitOk;
}

int cmd_run(const RunArgs& a) {
  const crn::Scene scene = crn::load_scene(a.scene);
  const crn::ModelConfig cfg = config_for_scene(scene, a.nk);
  cfg.validate();
  const crn::PipelineOptions opts = options_from(a);

  const std::uint64_t seed = resolve_seed(a.seed, a.seed_given);
  crn::ModelWeights weights;
  if (!a.weights.empty()) {
    weights = crn::load_weights(a.weights, cfg);
  } else {
    crn::Rng rng(seed);
    weights = crn::ModelWeights::init(rng, cfg);
  }

  const crn::PipelineResult res = crn::run_pipeline(scene, weights, cfg, opts);

  fs::create_directories(a.out);
  const std::string crnt_path = (fs::path(a.out) / "bev_feature.crnt").string();
  const std::string pgm_path = (fs::path(a.out) / "bev_feature.pgm").string();
  const std::string manifest_path =
      (fs::path(a.out) / "run_manifest.json").string();
  crn::save_crnt(crnt_path, res.bev_feature);
  write_pgm(pgm_path, res.bev_feature);

  const json cfg_json = config_json(cfg, opts);
  const std::string cfg_text = cfg_json.dump();
  json manifest{
      {"format", "crn-run-v1"},
      {"inputs", {{"scene", a.scene}}},
      {"config", cfg_json},
      {"config_hash", crn::fnv1a64(cfg_text.data(), cfg_text.size())},
      {"outputs", {{"bev_feature", crnt_path}, {"bev_projection", pgm_path}}},
      {"selected_cells", res.selected.size()},
  };
  if (a.weights.empty())
    manifest["weight_seed"] = seed;
  else
    manifest["weights_dir"] = a.weights;
  json timings = json::object();
  for (const crn::StageTiming& t : res.timings) timings[t.stage] = t.ms;
  timings["total"] = res.total_ms;
  manifest["timings_ms"] = timings;

  int exit_code = kExitOk;
  if (a.verify_sparse) {
    // Rerun with the other aggregation mode; outputs must agree at the cells
    // the sparse pass refines.
    crn::PipelineOptions other = opts;
    other.mfa_mode = a.sparse ? crn::MfaMode::kDense : crn::MfaMode::kSparse;
    const crn::PipelineResult alt = crn::run_pipeline(scene, weights, cfg, other);
    const std::vector<int>& cells = a.sparse ? res.selected : alt.selected;
    const std::int64_t n =
        std::int64_t(cfg.grid.size_x) * cfg.grid.size_y;
    double max_diff = 0.0;
    for (int c = 0; c < cfg.channels; ++c)
      for (const int q : cells)
        max_diff = std::max(
            max_diff, std::abs(double(res.bev_feature.data[size_t(c) * n + q]) -
                               double(alt.bev_feature.data[size_t(c) * n + q])));
    std::cout << "verify-sparse: max |dense - sparse| over " << cells.size()
              << " selected cells = " << max_diff << "\n";
    manifest["verify_sparse"] = {{"selected_cells", cells.size()},
                                 {"max_abs_diff", max_diff},
                                 {"tolerance", 1e-6}};
    if (!(max_diff <= 1e-6)) {
      std::cerr << "verify-sparse: dense and sparse outputs diverge ("
                << max_diff << " > 1e-6)\n";
      exit_code = kExitAssertion;
    }
  }
  write_text(manifest_path, manifest.dump(2) + "\n");

  for (const crn::StageTiming& t : res.timings)
    std::cout << t.stage << "\t" << t.ms << " ms\n";
  std::cout << "total\t" << res.total_ms << " ms\n";
  std::cout << "wrote " << crnt_path << " [" << res.bev_feature.dims[0] << ","
            << res.bev_feature.dims[1] << "," << res.bev_feature.dims[2]
            << "]\n";
  std::cout << "wrote " << pgm_path << "\n";
  std::cout << "wrote " << manifest_path << "\n";
  return exit_code;
}

int cmd_bench(const BenchArgs& a) {
  std::vector<std::pair<int, int>> grids;
  for (const int g : a.grids) grids.emplace_back(g, g);
  std::vector<crn::MfaMode> modes;
  for (const std::string& m : a.modes) {
    if (m == "dense")
      modes.push_back(crn::MfaMode::kDense);
    else if (m == "sparse")
      modes.push_back(crn::MfaMode::kSparse);
    else
      throw std::invalid_argument("--modes entries must be dense or sparse");
  }

  crn::BenchReport report =
      crn::bench_mfa(grids, modes, a.nk, a.repeats, a.threads, a.seed);
  const std::vector<std::string> failures = crn::check_scaling(report);

  if (!a.scene.empty()) {
    const crn::Scene scene = crn::load_scene(a.scene);
    const crn::ModelConfig cfg = config_for_scene(scene, a.nk);
    crn::PipelineOptions opts;
    opts.threads = a.threads;
    const crn::BenchReport stages =
        crn::bench_pipeline(scene, cfg, opts, a.repeats, a.seed);
    report.rows.insert(report.rows.end(), stages.rows.begin(),
                       stages.rows.end());
  }

  fs::create_directories(a.out);
  const std::string json_path = (fs::path(a.out) / "bench_report.json").string();
  const std::string tsv_path = (fs::path(a.out) / "bench_report.tsv").string();
  write_text(json_path, report.to_text());
  write_text(tsv_path, report.to_table());

  std::cout << report.to_table();
  for (const crn::BenchRatio& r : report.ratios)
    std::cout << "ratio " << r.mode << " " << r.from_x << "x" << r.from_y
              << " -> " << r.to_x << "x" << r.to_y << " = " << r.median_ratio
              << "\n";
  std::cout << "wrote " << json_path << "\n";
  std::cout << "wrote " << tsv_path << "\n";

  if (a.assert_bands) {
    if (!failures.empty()) {
      for (const std::string& f : failures) std::cerr << "FAIL " << f << "\n";
      return kExitAssertion;
    }
    std::cout << "scaling bands hold\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"camera-radar BEV feature pipeline"};
  app.require_subcommand(1);

  GenSceneArgs gen;
  CLI::App* cmd_gen = app.add_subcommand(
      "gen-scene", "generate a deterministic synthetic scene");
  cmd_gen->add_option("--seed", gen.seed, "scene seed");
  cmd_gen->add_option("--boxes", gen.boxes, "number of boxes");
  cmd_gen->add_option("--dropout", gen.dropout, "per-return drop probability");
  cmd_gen->add_option("--clutter", gen.clutter, "Poisson clutter mean");
  cmd_gen->add_option("--out", gen.out, "scene file path");

  RunArgs run;
  CLI::App* cmd_run_p =
      app.add_subcommand("run", "run the pipeline on a scene");
  cmd_run_p->add_option("--scene", run.scene, "scene file")->required();
  cmd_run_p->add_option("--out", run.out, "output directory");
  cmd_run_p->add_option("--mode", run.mode, "radar-assisted | depth-only");
  cmd_run_p->add_option("--depth-act", run.depth_act, "softmax | sigmoid");
  cmd_run_p->add_flag("--sparse", run.sparse, "sparse attention aggregation");
  cmd_run_p->add_flag("--verify-sparse", run.verify_sparse,
                      "compare dense vs sparse at the selected cells");
  cmd_run_p->add_option("--nk", run.nk, "sparse query budget");
  cmd_run_p->add_option("--drop-cameras", run.drop_cameras, "camera indices")
      ->delimiter(',');
  cmd_run_p->add_flag("--drop-radar", run.drop_radar, "drop the radar cloud");
  cmd_run_p->add_option("--threads", run.threads, "worker threads");
  cmd_run_p->add_option("--seed", run.seed, "weight seed");
  cmd_run_p->add_option("--weights", run.weights, "weight directory");

  BenchArgs bench;
  CLI::App* cmd_bench_p =
      app.add_subcommand("bench", "attention scaling benchmark");
  cmd_bench_p->add_option("--grids", bench.grids, "square grid sizes")
      ->delimiter(',');
  cmd_bench_p->add_option("--modes", bench.modes, "dense,sparse")
      ->delimiter(',');
  cmd_bench_p->add_option("--nk", bench.nk, "sparse query budget");
  cmd_bench_p->add_option("--repeats", bench.repeats, "timed repeats (>= 5)");
  cmd_bench_p->add_option("--threads", bench.threads, "worker threads");
  cmd_bench_p->add_option("--seed", bench.seed, "weight seed");
  cmd_bench_p->add_option("--out", bench.out, "report directory");
  cmd_bench_p->add_flag("--assert", bench.assert_bands,
                        "exit 3 unless the scaling bands hold");
  cmd_bench_p->add_option("--scene", bench.scene,
                          "also time the pipeline stages on this scene");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }
  run.seed_given = cmd_run_p->count("--seed") > 0;

  try {
    if (cmd_gen->parsed()) return cmd_gen_scene(gen);
    if (cmd_run_p->parsed()) return cmd_run(run);
    return cmd_bench(bench);
  } catch (const crn::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}

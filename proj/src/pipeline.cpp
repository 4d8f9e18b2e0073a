#include "crn/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>

#include "crn/parallel.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace crn {

void ModelConfig::validate() const {
  if (image_channels < 1) throw std::invalid_argument("image_channels must be >= 1");
  if (channels < 1) throw std::invalid_argument("channels must be >= 1");
  if (d_bins < 1) throw std::invalid_argument("d_bins must be >= 1");
  if (pillar_p_max < 1) throw std::invalid_argument("pillar_p_max must be >= 1");
  mdca.validate();
  if (mdca.channels != channels)
    throw std::invalid_argument("mdca.channels must equal channels");
  if (grid.size_x < 1 || grid.size_y < 1 || grid.cell_m <= 0.0 || grid.range_m <= 0.0)
    throw std::invalid_argument("bev grid extents must be positive");
}

ModelWeights ModelWeights::init(Rng& rng, const ModelConfig& cfg) {
  cfg.validate();
  ModelWeights w;
  w.camera = CameraHeadWeights::init(rng, cfg.image_channels, cfg.channels, cfg.d_bins);
  w.radar = RadarHeadWeights::init(rng, cfg.channels);
  w.rvt = RvtWeights::init(rng, cfg.channels);
  w.mdca = MdcaWeights::init(rng, cfg.mdca);
  return w;
}

std::vector<WeightEntry> weight_registry(ModelWeights& w, const ModelConfig& cfg) {
  const int c = cfg.channels;
  const int cin = cfg.image_channels;
  const int d = cfg.d_bins;
  const int h = cfg.mdca.heads;
  const int taps = h * kMdcaModalities * cfg.mdca.points;
  const int cv = cfg.mdca.head_dim();

  if (int(w.mdca.layers.size()) != cfg.mdca.layers)
    w.mdca.layers.resize(size_t(cfg.mdca.layers));

  std::vector<WeightEntry> reg;
  auto add = [&reg](std::string name, Tensor& t, std::vector<int> dims) {
    reg.push_back({std::move(name), &t, std::move(dims)});
  };
  auto add_conv = [&](const std::string& name, ConvLayer& l, int c_out, int c_in) {
    add(name + ".w", l.w, {c_out, c_in, 3, 3});
    add(name + ".b", l.b, {c_out});
  };
  auto add_ln = [&](const std::string& name, LnParams& ln) {
    add(name + ".gain", ln.gain, {c});
    add(name + ".shift", ln.shift, {c});
  };

  add_conv("camera.backbone1", w.camera.backbone1, c, cin);
  add_conv("camera.backbone2", w.camera.backbone2, c, c);
  add_conv("camera.context", w.camera.context, c, c);
  add_conv("camera.depth", w.camera.depth, d, c);

  add("radar.point_mlp.w", w.radar.point_mlp_w, {c, kPillarFeatureDim});
  add("radar.point_mlp.b", w.radar.point_mlp_b, {c});
  add_conv("radar.trunk1", w.radar.trunk1, c, c);
  add_conv("radar.trunk2", w.radar.trunk2, c, c);
  add_conv("radar.context", w.radar.context, c, c);
  add_conv("radar.occupancy", w.radar.occupancy, 1, c);

  add_conv("rvt.fuse", w.rvt.fuse, c, 2 * c);
  add_conv("rvt.lift", w.rvt.lift, c, c);

  add_ln("mdca.ln_img", w.mdca.ln_img);
  add_ln("mdca.ln_radar", w.mdca.ln_radar);
  add("mdca.query.w", w.mdca.query_w, {c, 2 * c});
  add("mdca.query.b", w.mdca.query_b, {c});
  for (int li = 0; li < cfg.mdca.layers; ++li) {
    MdcaLayerWeights& lw = w.mdca.layers[size_t(li)];
    const std::string p = "mdca.layer" + std::to_string(li) + ".";
    add(p + "attn.w", lw.attn_w, {taps, c});
    add(p + "attn.b", lw.attn_b, {taps});
    add(p + "offset.w", lw.offset_w, {taps * 2, c});
    add(p + "offset.b", lw.offset_b, {taps * 2});
    add(p + "value.w", lw.value_w, {h, kMdcaModalities, cv, c});
    add(p + "out.w", lw.out_w, {h, c, cv});
    add(p + "ffn1.w", lw.ffn1_w, {4 * c, c});
    add(p + "ffn1.b", lw.ffn1_b, {4 * c});
    add(p + "ffn2.w", lw.ffn2_w, {c, 4 * c});
    add(p + "ffn2.b", lw.ffn2_b, {c});
    add_ln(p + "ln_attn", lw.ln_attn);
    add_ln(p + "ln_ffn", lw.ln_ffn);
  }
  return reg;
}

namespace {

std::string tensor_file(const std::string& name) {
  std::string f = name;
  std::replace(f.begin(), f.end(), '.', '_');
  return f + ".crnt";
}

json config_block(const ModelConfig& cfg) {
  // Only the fields that determine tensor shapes.
  json j;
  j["image_channels"] = cfg.image_channels;
  j["channels"] = cfg.channels;
  j["d_bins"] = cfg.d_bins;
  j["heads"] = cfg.mdca.heads;
  j["points"] = cfg.mdca.points;
  j["layers"] = cfg.mdca.layers;
  return j;
}

}  // namespace

void save_weights(ModelWeights& w, const ModelConfig& cfg, const std::string& dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create weight directory " + dir);

  json manifest;
  manifest["format"] = "crn-weights-v1";
  manifest["config"] = config_block(cfg);
  manifest["tensors"] = json::array();
  for (const WeightEntry& e : weight_registry(w, cfg)) {
    const std::string file = tensor_file(e.name);
    save_crnt((fs::path(dir) / file).string(), *e.tensor);
    manifest["tensors"].push_back({{"name", e.name}, {"file", file}});
  }
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ofstream out(mpath, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + mpath.string() + " for writing");
  out << manifest.dump(2) << '\n';
  if (!out.flush()) throw IoError("failed writing " + mpath.string());
}

ModelWeights load_weights(const std::string& dir, const ModelConfig& cfg) {
  cfg.validate();
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream in(mpath, std::ios::binary);
  if (!in) throw IoError("cannot open " + mpath.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw IoError(mpath.string() + ": " + e.what());
  }

  ModelWeights w;
  auto reg = weight_registry(w, cfg);
  try {
    if (manifest.at("format").get<std::string>() != "crn-weights-v1")
      throw std::invalid_argument("unrecognized weight manifest format");
    if (manifest.at("config") != config_block(cfg))
      throw std::invalid_argument("weight manifest config does not match");
    std::map<std::string, std::string> files;
    for (const json& t : manifest.at("tensors"))
      files[t.at("name").get<std::string>()] = t.at("file").get<std::string>();
    if (files.size() != reg.size())
      throw std::invalid_argument("weight manifest tensor list does not match the model");
    for (const WeightEntry& e : reg) {
      auto it = files.find(e.name);
      if (it == files.end())
        throw std::invalid_argument("weight manifest is missing tensor " + e.name);
      Tensor t = load_crnt((fs::path(dir) / it->second).string());
      if (t.dims != e.dims)
        throw std::invalid_argument("tensor " + e.name + " has the wrong shape");
      *e.tensor = std::move(t);
    }
  } catch (const json::exception& e) {
    throw IoError(mpath.string() + ": " + e.what());
  }
  return w;
}

void validate_drops(int n_cameras, const std::vector<int>& drop_cameras,
                    bool drop_radar) {
  std::set<int> dropped;
  for (int idx : drop_cameras) {
    if (idx < 0 || idx >= n_cameras)
      throw std::invalid_argument("camera drop index " + std::to_string(idx) +
                                  " out of range");
    if (!dropped.insert(idx).second)
      throw std::invalid_argument("camera drop index " + std::to_string(idx) +
                                  " listed twice");
  }
  if (drop_radar && int(dropped.size()) == n_cameras)
    throw std::invalid_argument("cannot drop every camera and the radar");
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

}  // namespace

PipelineResult run_pipeline(const Scene& scene, const ModelWeights& w,
                            const ModelConfig& cfg, const PipelineOptions& opts) {
  cfg.validate();
  if (opts.threads < 1) throw std::invalid_argument("threads must be >= 1");
  const SceneSpec& spec = scene.spec;
  const int n_cams = int(spec.rig.size());
  if (n_cams == 0) throw std::invalid_argument("scene has no cameras");
  if (spec.image_channels != cfg.image_channels)
    throw std::invalid_argument("scene image channels do not match the config");
  if (spec.frustum.d_bins != cfg.d_bins)
    throw std::invalid_argument("scene depth bins do not match the config");
  if (spec.grid.range_m != cfg.grid.range_m || spec.grid.cell_m != cfg.grid.cell_m ||
      spec.grid.size_x != cfg.grid.size_x || spec.grid.size_y != cfg.grid.size_y)
    throw std::invalid_argument("scene bev grid does not match the config");
  validate_drops(n_cams, opts.drop_cameras, opts.drop_radar);

  const auto t_start = Clock::now();
  const Scene s = apply_sensor_drop(scene, opts.drop_cameras, opts.drop_radar);
  const int cam_threads = std::min(opts.threads, n_cams);
  const size_t n = size_t(n_cams);

  PipelineResult res;
  auto t0 = Clock::now();
  std::vector<CameraMaps> cam_maps(n);
  parallel_for(n_cams, cam_threads, [&](int begin, int end, int) {
    for (int ci = begin; ci < end; ++ci) {
      Tensor feats = extract_features(s.images[size_t(ci)], w.camera);
      cam_maps[size_t(ci)] = context_depth_heads(feats, w.camera, opts.depth_act);
    }
  });
  auto t1 = Clock::now();
  res.timings.push_back({"camera_heads", ms_between(t0, t1)});

  std::vector<RadarMaps> radar_maps(n);
  parallel_for(n_cams, cam_threads, [&](int begin, int end, int) {
    for (int ci = begin; ci < end; ++ci) {
      PillarCanvas canvas =
          voxelize_frustum(s.cloud, spec.rig[size_t(ci)], spec.frustum,
                           cfg.pillar_p_max, ci);
      radar_maps[size_t(ci)] = radar_heads(encode_pillars(canvas, w.radar), w.radar);
    }
  });
  auto t2 = Clock::now();
  res.timings.push_back({"radar_encode", ms_between(t1, t2)});

  std::vector<Tensor> fused(n), radar_ctx(n);
  std::vector<Tensor> depth_conf(n), occ(n);
  parallel_for(n_cams, cam_threads, [&](int begin, int end, int) {
    for (int ci = begin; ci < end; ++ci) {
      const size_t i = size_t(ci);
      fused[i] = frustum_transform(cam_maps[i].context, cam_maps[i].depth,
                                   &radar_maps[i].occupancy, w.rvt, opts.view_mode);
      radar_ctx[i] = radar_maps[i].context;
      depth_conf[i] = collapse_depth_conf(cam_maps[i].depth);
      occ[i] = radar_maps[i].occupancy;
    }
  });
  auto t3 = Clock::now();
  res.timings.push_back({"view_transform", ms_between(t2, t3)});

  BevFeatureBundle bundle = voxel_pool_avg(fused, radar_ctx, depth_conf, occ,
                                           spec.rig, spec.frustum, cfg.grid);
  auto t4 = Clock::now();
  res.timings.push_back({"voxel_pool", ms_between(t3, t4)});

  MfaResult mfa = mfa_forward(bundle, w.mdca, cfg.mdca, opts.mfa_mode, opts.threads);
  auto t5 = Clock::now();
  res.timings.push_back({"attention", ms_between(t4, t5)});

  res.bev_feature = std::move(mfa.feature);
  res.bundle = std::move(bundle);
  res.selected = std::move(mfa.selected);
  res.stats = mfa.stats;
  res.total_ms = ms_between(t_start, t5);
  return res;
}

}  // namespace crn

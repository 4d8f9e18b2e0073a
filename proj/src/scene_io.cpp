#include "crn/scene_io.hpp"

#include <filesystem>
#include <fstream>
#include <vector>

#include "json.hpp"

namespace crn {

namespace {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

ordered_json camera_to_json(const CameraModel& cam) {
  ordered_json j;
  j["intrinsics"] = std::vector<double>(cam.intrinsics.m.begin(), cam.intrinsics.m.end());
  std::vector<double> ext(16, 0.0);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) ext[size_t(r * 4 + c)] = cam.cam_from_ego.rot.m[r * 3 + c];
    ext[size_t(r * 4 + 3)] = r == 0   ? cam.cam_from_ego.trans.x
                             : r == 1 ? cam.cam_from_ego.trans.y
                                      : cam.cam_from_ego.trans.z;
  }
  ext[15] = 1.0;
  j["cam_from_ego"] = ext;
  j["image_w"] = cam.image_w;
  j["image_h"] = cam.image_h;
  j["z_near"] = cam.z_near;
  return j;
}

CameraModel camera_from_json(const ordered_json& j) {
  const auto intr = j.at("intrinsics").get<std::vector<double>>();
  const auto ext = j.at("cam_from_ego").get<std::vector<double>>();
  if (intr.size() != 9 || ext.size() != 16)
    throw std::invalid_argument("scene file: camera needs 9 intrinsics and 16 extrinsics");
  CameraModel cam;
  std::copy(intr.begin(), intr.end(), cam.intrinsics.m.begin());
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) cam.cam_from_ego.rot.m[r * 3 + c] = ext[size_t(r * 4 + c)];
  cam.cam_from_ego.trans = {ext[3], ext[7], ext[11]};
  cam.image_w = j.at("image_w").get<int>();
  cam.image_h = j.at("image_h").get<int>();
  cam.z_near = j.at("z_near").get<double>();
  cam.validate();
  return cam;
}

ordered_json box_to_json(const BevBox& b) {
  return ordered_json{{"x", b.x}, {"y", b.y},     {"w", b.w},    {"l", b.l},
                      {"h", b.h}, {"yaw", b.yaw}, {"rcs", b.rcs}};
}

BevBox box_from_json(const ordered_json& j) {
  BevBox b;
  b.x = j.at("x").get<double>();
  b.y = j.at("y").get<double>();
  b.w = j.at("w").get<double>();
  b.l = j.at("l").get<double>();
  b.h = j.at("h").get<double>();
  b.yaw = j.at("yaw").get<double>();
  b.rcs = j.at("rcs").get<double>();
  return b;
}

ordered_json spec_to_json(const SceneSpec& s) {
  ordered_json j;
  j["seed"] = s.seed;
  j["n_boxes"] = s.n_boxes;
  j["place_r_min"] = s.place_r_min;
  j["place_r_max"] = s.place_r_max;
  j["snap_to_cell"] = s.snap_to_cell;
  j["center_jitter_m"] = s.center_jitter_m;
  j["box_w"] = {s.box_w_min, s.box_w_max};
  j["box_l"] = {s.box_l_min, s.box_l_max};
  j["box_h"] = {s.box_h_min, s.box_h_max};
  j["rcs"] = {s.rcs_min, s.rcs_max};
  j["returns_per_box"] = s.returns_per_box;
  j["noise"] = {{"range_sigma", s.noise.range_sigma},
                {"azimuth_sigma", s.noise.azimuth_sigma},
                {"dropout_prob", s.noise.dropout_prob},
                {"clutter_rate", s.noise.clutter_rate}};
  j["blob_amplitude"] = s.blob_amplitude;
  j["blob_sigma_px"] = s.blob_sigma_px;
  j["image_bias"] = s.image_bias;
  j["image_channels"] = s.image_channels;
  j["cameras"] = ordered_json::array();
  for (const CameraModel& cam : s.rig) j["cameras"].push_back(camera_to_json(cam));
  j["frustum"] = {{"d_min", s.frustum.d_min},   {"d_step", s.frustum.d_step},
                  {"d_bins", s.frustum.d_bins}, {"feat_w", s.frustum.feat_w},
                  {"feat_h", s.frustum.feat_h}, {"stride", s.frustum.stride}};
  j["grid"] = {{"range_m", s.grid.range_m},
               {"cell_m", s.grid.cell_m},
               {"size_x", s.grid.size_x},
               {"size_y", s.grid.size_y}};
  j["fixed_boxes"] = ordered_json::array();
  for (const BevBox& b : s.fixed_boxes) j["fixed_boxes"].push_back(box_to_json(b));
  return j;
}

SceneSpec spec_from_json(const ordered_json& j) {
  SceneSpec s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.n_boxes = j.at("n_boxes").get<int>();
  s.place_r_min = j.at("place_r_min").get<double>();
  s.place_r_max = j.at("place_r_max").get<double>();
  s.snap_to_cell = j.at("snap_to_cell").get<bool>();
  s.center_jitter_m = j.at("center_jitter_m").get<double>();
  const auto pair = [&](const char* key, double& lo, double& hi) {
    const auto v = j.at(key).get<std::vector<double>>();
    if (v.size() != 2) throw std::invalid_argument("scene file: range needs two values");
    lo = v[0];
    hi = v[1];
  };
  pair("box_w", s.box_w_min, s.box_w_max);
  pair("box_l", s.box_l_min, s.box_l_max);
  pair("box_h", s.box_h_min, s.box_h_max);
  pair("rcs", s.rcs_min, s.rcs_max);
  s.returns_per_box = j.at("returns_per_box").get<int>();
  const auto& n = j.at("noise");
  s.noise.range_sigma = n.at("range_sigma").get<double>();
  s.noise.azimuth_sigma = n.at("azimuth_sigma").get<double>();
  s.noise.dropout_prob = n.at("dropout_prob").get<double>();
  s.noise.clutter_rate = n.at("clutter_rate").get<double>();
  s.blob_amplitude = j.at("blob_amplitude").get<double>();
  s.blob_sigma_px = j.at("blob_sigma_px").get<double>();
  s.image_bias = j.at("image_bias").get<double>();
  s.image_channels = j.at("image_channels").get<int>();
  for (const auto& cj : j.at("cameras")) s.rig.push_back(camera_from_json(cj));
  const auto& f = j.at("frustum");
  s.frustum.d_min = f.at("d_min").get<double>();
  s.frustum.d_step = f.at("d_step").get<double>();
  s.frustum.d_bins = f.at("d_bins").get<int>();
  s.frustum.feat_w = f.at("feat_w").get<int>();
  s.frustum.feat_h = f.at("feat_h").get<int>();
  s.frustum.stride = f.at("stride").get<int>();
  const auto& g = j.at("grid");
  s.grid.range_m = g.at("range_m").get<double>();
  s.grid.cell_m = g.at("cell_m").get<double>();
  s.grid.size_x = g.at("size_x").get<int>();
  s.grid.size_y = g.at("size_y").get<int>();
  for (const auto& bj : j.at("fixed_boxes")) s.fixed_boxes.push_back(box_from_json(bj));
  return s;
}

}  // namespace

void save_scene(const Scene& scene, const std::string& path) {
  const fs::path file(path);
  const std::string stem = file.stem().string();

  ordered_json j;
  j["format"] = "crn-scene-v1";
  j["spec"] = spec_to_json(scene.spec);
  j["boxes"] = ordered_json::array();
  for (const BevBox& b : scene.boxes) j["boxes"].push_back(box_to_json(b));
  j["radar_points"] = ordered_json::array();
  for (const RadarPoint& p : scene.cloud.points)
    j["radar_points"].push_back({p.x, p.y, p.z, p.rcs, p.doppler, p.sweep_age});
  j["images"] = ordered_json::array();
  for (size_t i = 0; i < scene.images.size(); ++i) {
    const std::string name = stem + "_cam" + std::to_string(i) + ".crnt";
    j["images"].push_back(name);
    save_crnt((file.parent_path() / name).string(), scene.images[i]);
  }

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write scene file: " + path);
  os << j.dump(2) << '\n';
  if (!os) throw IoError("short write on scene file: " + path);
}

Scene load_scene(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read scene file: " + path);
  ordered_json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("scene file " + path + ": " + e.what());
  }

  Scene scene;
  try {
    if (j.at("format").get<std::string>() != "crn-scene-v1")
      throw std::invalid_argument("scene file: unknown format tag");
    scene.spec = spec_from_json(j.at("spec"));
    for (const auto& bj : j.at("boxes")) scene.boxes.push_back(box_from_json(bj));
    for (const auto& pj : j.at("radar_points")) {
      const auto v = pj.get<std::vector<double>>();
      if (v.size() != kPillarFeatureDim + 1)
        throw std::invalid_argument("scene file: radar point needs 6 values");
      scene.cloud.points.push_back({float(v[0]), float(v[1]), float(v[2]), float(v[3]),
                                    float(v[4]), float(v[5])});
    }
    const auto names = j.at("images").get<std::vector<std::string>>();
    if (names.size() != scene.spec.rig.size())
      throw std::invalid_argument("scene file: one image per camera required");
    for (size_t i = 0; i < names.size(); ++i) {
      Tensor img = load_crnt((fs::path(path).parent_path() / names[i]).string());
      const FrustumGrid fg = FrustumGrid::for_image(
          scene.spec.rig[i].image_w, scene.spec.rig[i].image_h, scene.spec.frustum.stride);
      if (img.dims != std::vector<int>{scene.spec.image_channels, fg.feat_h, fg.feat_w})
        throw std::invalid_argument("scene file: image " + names[i] +
                                    " dims do not match the scene spec");
      scene.images.push_back(std::move(img));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("scene file " + path + ": " + e.what());
  }

  scene.spec.validate();
  scene.gt_bev = rasterize_boxes(scene.boxes, scene.spec.grid);
  scene.visible = compute_visible(scene.boxes, scene.spec.rig, scene.spec.frustum);
  return scene;
}

}  // namespace crn

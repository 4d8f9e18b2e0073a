#include "crn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "json.hpp"

using json = nlohmann::ordered_json;

namespace crn {

std::uint64_t fnv1a64(const void* data, std::size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 14695981039346656037ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

double bench_quantile(std::vector<double> samples, double q) {
  if (samples.empty()) throw std::invalid_argument("quantile of an empty sample");
  if (q < 0.0 || q > 1.0) throw std::invalid_argument("quantile q outside [0, 1]");
  std::sort(samples.begin(), samples.end());
  const double pos = q * double(samples.size() - 1);
  const size_t lo = size_t(pos);
  if (lo + 1 >= samples.size()) return samples.back();
  const double frac = pos - double(lo);
  return samples[lo] + frac * (samples[lo + 1] - samples[lo]);
}

BevFeatureBundle bench_bundle(std::uint64_t seed, int channels, int grid_x,
                              int grid_y) {
  if (channels < 1 || grid_x < 1 || grid_y < 1)
    throw std::invalid_argument("bench bundle dims must be positive");
  Rng rng(seed * 1000003ull + std::uint64_t(grid_x) * 8191ull + std::uint64_t(grid_y));
  BevFeatureBundle b;
  b.grid = BevGrid{0.4 * grid_x, 0.8, grid_x, grid_y};
  b.img_ctx = Tensor({channels, grid_x, grid_y});
  b.radar_ctx = Tensor({channels, grid_x, grid_y});
  b.depth_conf = Tensor({1, grid_x, grid_y});
  b.occ_conf = Tensor({1, grid_x, grid_y});
  b.count = Tensor({1, grid_x, grid_y});
  for (float& v : b.img_ctx.data) v = float(2.0 * rng.next_unit() - 1.0);
  for (float& v : b.radar_ctx.data) v = float(2.0 * rng.next_unit() - 1.0);
  for (float& v : b.depth_conf.data) v = float(rng.next_unit());
  for (float& v : b.occ_conf.data) v = float(rng.next_unit());
  for (float& v : b.count.data) v = 1.0f;
  return b;
}

namespace {

using Clock = std::chrono::steady_clock;

std::uint64_t hash_tensor(const Tensor& t) {
  return fnv1a64(t.data.data(), t.data.size() * sizeof(float));
}

struct Timed {
  std::vector<double> ms;
  std::uint64_t hash = 0;
};

// One warm-up call excluded from the statistics; every timed call must hash
// to the warm-up's output.
template <class F>
Timed time_fn(int repeats, F&& fn) {
  Timed t;
  t.hash = fn();
  t.ms.reserve(size_t(repeats));
  for (int i = 0; i < repeats; ++i) {
    const auto a = Clock::now();
    const std::uint64_t h = fn();
    const auto b = Clock::now();
    if (h != t.hash) throw std::runtime_error("benchmarked output changed between runs");
    t.ms.push_back(std::chrono::duration<double, std::milli>(b - a).count());
  }
  return t;
}

void fill_stats(BenchRow& row, const Timed& t) {
  row.repeats = int(t.ms.size());
  row.median_ms = bench_quantile(t.ms, 0.5);
  row.p10_ms = bench_quantile(t.ms, 0.1);
  row.p90_ms = bench_quantile(t.ms, 0.9);
  row.output_hash = t.hash;
}

std::string mode_name(MfaMode mode) {
  return mode == MfaMode::kDense ? "dense" : "sparse";
}

std::int64_t mfa_ops(const MdcaConfig& cfg, int x, int y, MfaMode mode) {
  const std::int64_t cells = std::int64_t(x) * y;
  const std::int64_t c = cfg.channels;
  const std::int64_t active =
      mode == MfaMode::kDense ? cells : std::min<std::int64_t>(cfg.top_k, cells);
  const std::int64_t project = cells * (4 * c * c + 16 * c);
  return project + active * cfg.layers * mdca_query_layer_ops(cfg);
}

std::int64_t mfa_peak_bytes(const MdcaConfig& cfg, int x, int y, int threads) {
  const std::int64_t cells = std::int64_t(x) * y;
  const std::int64_t c = cfg.channels;
  const std::int64_t slots =
      std::int64_t(cfg.heads) * kMdcaModalities * cfg.points;
  const std::int64_t bundle = (2 * c + 3) * cells;      // inputs
  const std::int64_t value_maps = 2 * c * cells;        // channel-last copies
  const std::int64_t queries = 3 * c * cells;           // projection + layer in/out
  const std::int64_t workspace = threads * (4 * c + 4 * slots + 16 * c);
  return 4 * (bundle + value_maps + queries + c * cells + workspace);
}

std::int64_t conv_ops(std::int64_t c_in, std::int64_t c_out, std::int64_t h,
                      std::int64_t w) {
  return 18 * c_in * c_out * h * w;  // 3x3 taps, multiply-add = 2
}

}  // namespace

BenchReport bench_mfa(const std::vector<std::pair<int, int>>& grids,
                      const std::vector<MfaMode>& modes, int n_k, int repeats,
                      int threads, std::uint64_t seed, const MdcaConfig& base) {
  if (repeats < 5) throw std::invalid_argument("repeats must be >= 5");
  if (grids.empty()) throw std::invalid_argument("grid list is empty");
  if (modes.empty()) throw std::invalid_argument("mode list is empty");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
  for (auto [x, y] : grids)
    if (x < 1 || y < 1) throw std::invalid_argument("grid sides must be positive");
  if (n_k < 0) throw std::invalid_argument("n_k must be >= 0");

  MdcaConfig cfg = base;
  cfg.top_k = n_k;
  cfg.validate();
  Rng rng(seed);
  const MdcaWeights w = MdcaWeights::init(rng, cfg);

  BenchReport rep;
  for (auto [x, y] : grids) {
    const BevFeatureBundle bundle = bench_bundle(seed, cfg.channels, x, y);
    for (MfaMode mode : modes) {
      Timed t = time_fn(repeats, [&] {
        return hash_tensor(mfa_forward(bundle, w, cfg, mode, threads).feature);
      });
      BenchRow row;
      row.label = "mfa";
      row.grid_x = x;
      row.grid_y = y;
      row.mode = mode_name(mode);
      row.n_k = n_k;
      row.threads = threads;
      row.ops = mfa_ops(cfg, x, y, mode);
      row.peak_bytes = mfa_peak_bytes(cfg, x, y, threads);
      fill_stats(row, t);
      rep.rows.push_back(std::move(row));
    }
  }

  for (size_t mi = 0; mi < modes.size(); ++mi) {
    for (size_t gi = 0; gi + 1 < grids.size(); ++gi) {
      const BenchRow& from = rep.rows[gi * modes.size() + mi];
      const BenchRow& to = rep.rows[(gi + 1) * modes.size() + mi];
      rep.ratios.push_back({from.mode, from.grid_x, from.grid_y, to.grid_x,
                            to.grid_y, to.median_ms / from.median_ms});
    }
  }
  return rep;
}

BenchReport bench_pipeline(const Scene& scene, const ModelConfig& cfg,
                           const PipelineOptions& opts, int repeats,
                           std::uint64_t weight_seed) {
  if (repeats < 5) throw std::invalid_argument("repeats must be >= 5");
  cfg.validate();
  Rng rng(weight_seed);
  const ModelWeights w = ModelWeights::init(rng, cfg);

  std::vector<std::string> stages;
  std::vector<std::vector<double>> stage_ms;
  std::vector<double> total_ms;
  std::uint64_t hash = 0;
  {
    PipelineResult warm = run_pipeline(scene, w, cfg, opts);  // excluded
    hash = hash_tensor(warm.bev_feature);
    for (const StageTiming& st : warm.timings) {
      stages.push_back(st.stage);
      stage_ms.emplace_back();
    }
  }
  for (int r = 0; r < repeats; ++r) {
    PipelineResult res = run_pipeline(scene, w, cfg, opts);
    if (hash_tensor(res.bev_feature) != hash)
      throw std::runtime_error("benchmarked output changed between runs");
    for (size_t i = 0; i < stages.size(); ++i) stage_ms[i].push_back(res.timings[i].ms);
    total_ms.push_back(res.total_ms);
  }

  const std::int64_t n = std::int64_t(scene.spec.rig.size());
  const std::int64_t cin = cfg.image_channels, c = cfg.channels, d = cfg.d_bins;
  const std::int64_t fh = scene.spec.frustum.feat_h, fw = scene.spec.frustum.feat_w;
  const std::int64_t cells = std::int64_t(cfg.grid.size_x) * cfg.grid.size_y;
  const std::int64_t fuse_in =
      opts.view_mode == ViewTransformMode::kRadarAssisted ? 2 * c : c;
  std::vector<std::int64_t> ops = {
      n * (conv_ops(cin, c, fh, fw) + 2 * conv_ops(c, c, fh, fw) +
           conv_ops(c, d, fh, fw)),
      std::int64_t(scene.cloud.points.size()) * 10 * c +
          n * (3 * conv_ops(c, c, d, fw) + conv_ops(c, 1, d, fw)),
      n * (2 * c * d * fh * fw + c * fh * fw + c * d * fw + conv_ops(fuse_in, c, d, fw)),
      n * d * fw * (2 * c + 4),
      mfa_ops(cfg.mdca, cfg.grid.size_x, cfg.grid.size_y, opts.mfa_mode),
  };

  BenchReport rep;
  auto make = [&](const std::string& label, const std::vector<double>& ms,
                  std::int64_t row_ops, std::uint64_t row_hash) {
    BenchRow row;
    row.label = label;
    row.grid_x = cfg.grid.size_x;
    row.grid_y = cfg.grid.size_y;
    row.mode = mode_name(opts.mfa_mode);
    row.n_k = cfg.mdca.top_k;
    row.threads = opts.threads;
    row.repeats = repeats;
    row.median_ms = bench_quantile(ms, 0.5);
    row.p10_ms = bench_quantile(ms, 0.1);
    row.p90_ms = bench_quantile(ms, 0.9);
    row.ops = row_ops;
    row.peak_bytes =
        mfa_peak_bytes(cfg.mdca, cfg.grid.size_x, cfg.grid.size_y, opts.threads) +
        4 * n * (cin * fh * fw + 2 * c * fh * fw + d * fh * fw + 2 * c * d * fw);
    row.output_hash = row_hash;
    return row;
  };
  std::int64_t total_ops = 0;
  for (size_t i = 0; i < stages.size(); ++i) {
    rep.rows.push_back(make(stages[i], stage_ms[i], ops[i], 0));
    total_ops += ops[i];
  }
  rep.rows.push_back(make("total", total_ms, total_ops, hash));
  return rep;
}

namespace {

json row_to_json(const BenchRow& r) {
  json j;
  j["label"] = r.label;
  j["grid_x"] = r.grid_x;
  j["grid_y"] = r.grid_y;
  j["mode"] = r.mode;
  j["n_k"] = r.n_k;
  j["threads"] = r.threads;
  j["repeats"] = r.repeats;
  j["median_ms"] = r.median_ms;
  j["p10_ms"] = r.p10_ms;
  j["p90_ms"] = r.p90_ms;
  j["ops"] = r.ops;
  j["peak_bytes"] = r.peak_bytes;
  j["output_hash"] = r.output_hash;
  return j;
}

BenchRow row_from_json(const json& j) {
  BenchRow r;
  r.label = j.at("label").get<std::string>();
  r.grid_x = j.at("grid_x").get<int>();
  r.grid_y = j.at("grid_y").get<int>();
  r.mode = j.at("mode").get<std::string>();
  r.n_k = j.at("n_k").get<int>();
  r.threads = j.at("threads").get<int>();
  r.repeats = j.at("repeats").get<int>();
  r.median_ms = j.at("median_ms").get<double>();
  r.p10_ms = j.at("p10_ms").get<double>();
  r.p90_ms = j.at("p90_ms").get<double>();
  r.ops = j.at("ops").get<std::int64_t>();
  r.peak_bytes = j.at("peak_bytes").get<std::int64_t>();
  r.output_hash = j.at("output_hash").get<std::uint64_t>();
  return r;
}

}  // namespace

std::string BenchReport::to_text() const {
  json j;
  j["format"] = "crn-bench-v1";
  j["rows"] = json::array();
  for (const BenchRow& r : rows) j["rows"].push_back(row_to_json(r));
  j["ratios"] = json::array();
  for (const BenchRatio& r : ratios)
    j["ratios"].push_back({{"mode", r.mode},
                           {"from_x", r.from_x},
                           {"from_y", r.from_y},
                           {"to_x", r.to_x},
                           {"to_y", r.to_y},
                           {"median_ratio", r.median_ratio}});
  return j.dump(2) + "\n";
}

BenchReport BenchReport::parse(const std::string& text) {
  try {
    json j = json::parse(text);
    if (j.at("format").get<std::string>() != "crn-bench-v1")
      throw IoError("unrecognized bench report format");
    BenchReport rep;
    for (const json& r : j.at("rows")) rep.rows.push_back(row_from_json(r));
    for (const json& r : j.at("ratios"))
      rep.ratios.push_back({r.at("mode").get<std::string>(), r.at("from_x").get<int>(),
                            r.at("from_y").get<int>(), r.at("to_x").get<int>(),
                            r.at("to_y").get<int>(), r.at("median_ratio").get<double>()});
    return rep;
  } catch (const json::exception& e) {
    throw IoError(std::string("bench report: ") + e.what());
  }
}

std::string BenchReport::to_table() const {
  std::ostringstream out;
  out << "label\tgrid_x\tgrid_y\tmode\tn_k\tthreads\trepeats\tmedian_ms\t"
         "p10_ms\tp90_ms\tops\tpeak_bytes\toutput_hash\n";
  out << std::setprecision(17);
  for (const BenchRow& r : rows) {
    out << r.label << '\t' << r.grid_x << '\t' << r.grid_y << '\t' << r.mode << '\t'
        << r.n_k << '\t' << r.threads << '\t' << r.repeats << '\t' << r.median_ms
        << '\t' << r.p10_ms << '\t' << r.p90_ms << '\t' << r.ops << '\t'
        << r.peak_bytes << '\t' << r.output_hash << '\n';
  }
  return out.str();
}

std::vector<std::string> check_scaling(const BenchReport& report) {
  std::map<std::string, std::vector<const BenchRow*>> by_mode;
  for (const BenchRow& r : report.rows)
    if (r.label == "mfa") by_mode[r.mode].push_back(&r);

  std::vector<std::string> failures;
  auto fail = [&failures](std::ostringstream& os) { failures.push_back(os.str()); };

  if (auto it = by_mode.find("dense"); it != by_mode.end()) {
    const auto& rows = it->second;
    for (size_t i = 0; i + 1 < rows.size(); ++i) {
      const BenchRow& a = *rows[i];
      const BenchRow& b = *rows[i + 1];
      const double growth =
          double(std::int64_t(b.grid_x) * b.grid_y) / double(std::int64_t(a.grid_x) * a.grid_y);
      const double ratio = b.median_ms / a.median_ms;
      if (ratio < 0.875 * growth || ratio > 1.125 * growth) {
        std::ostringstream os;
        os << "dense median ratio " << a.grid_x << "x" << a.grid_y << " -> " << b.grid_x
           << "x" << b.grid_y << " = " << ratio << " outside [" << 0.875 * growth << ", "
           << 1.125 * growth << "]";
        fail(os);
      }
    }
  }

  if (auto it = by_mode.find("sparse"); it != by_mode.end()) {
    const auto& rows = it->second;
    for (size_t i = 0; i + 1 < rows.size(); ++i) {
      const BenchRow& a = *rows[i];
      const BenchRow& b = *rows[i + 1];
      if (std::int64_t(b.n_k) >= std::int64_t(b.grid_x) * b.grid_y) continue;  // not binding
      const double ratio = b.median_ms / a.median_ms;
      if (ratio > 1.3) {
        std::ostringstream os;
        os << "sparse median ratio " << a.grid_x << "x" << a.grid_y << " -> " << b.grid_x
           << "x" << b.grid_y << " = " << ratio << " above 1.3";
        fail(os);
      }
    }

    // Speedup on the largest grid where sparsity binds and a dense row exists.
    const BenchRow* best_sparse = nullptr;
    const BenchRow* best_dense = nullptr;
    for (const BenchRow* s : rows) {
      if (std::int64_t(s->n_k) >= std::int64_t(s->grid_x) * s->grid_y) continue;
      auto dit = by_mode.find("dense");
      if (dit == by_mode.end()) continue;
      for (const BenchRow* d : dit->second) {
        if (d->grid_x != s->grid_x || d->grid_y != s->grid_y) continue;
        if (!best_sparse || std::int64_t(s->grid_x) * s->grid_y >
                                std::int64_t(best_sparse->grid_x) * best_sparse->grid_y) {
          best_sparse = s;
          best_dense = d;
        }
      }
    }
    if (best_sparse && best_sparse->median_ms > 0.5 * best_dense->median_ms) {
      std::ostringstream os;
      os << "sparse median at " << best_sparse->grid_x << "x" << best_sparse->grid_y
         << " = " << best_sparse->median_ms << " not at least 2x faster than dense "
         << best_dense->median_ms;
      fail(os);
    }
  }
  return failures;
}

}  // namespace crn

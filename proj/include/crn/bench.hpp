#pragma once

// Wall-time benchmark harness for the attention stage and the full pipeline.
// Timings come from a monotonic clock, one warm-up run is excluded, and the
// reported statistics are linear-interpolation quantiles over >= 5 repeats.
// Benchmarked code is the exact production entry point; every repeat's output
// is hashed and must match, so benchmarking cannot alter results.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "crn/mfa.hpp"
#include "crn/pipeline.hpp"

namespace crn {

struct BenchRow {
  std::string label;  // "mfa", a pipeline stage, or "total"
  int grid_x = 0;
  int grid_y = 0;
  std::string mode;  // "dense" | "sparse"
  int n_k = 0;
  int threads = 1;
  int repeats = 0;
  double median_ms = 0.0;
  double p10_ms = 0.0;
  double p90_ms = 0.0;
  std::int64_t ops = 0;         // arithmetic estimate, multiply-add = 2
  std::int64_t peak_bytes = 0;  // live tensor bytes of the largest working set
  std::uint64_t output_hash = 0;  // FNV-1a over the result tensor; 0 if none

  bool operator==(const BenchRow&) const = default;
};

// median(to) / median(from) for consecutive grids of one mode.
struct BenchRatio {
  std::string mode;
  int from_x = 0, from_y = 0;
  int to_x = 0, to_y = 0;
  double median_ratio = 0.0;

  bool operator==(const BenchRatio&) const = default;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  std::vector<BenchRatio> ratios;

  bool operator==(const BenchReport&) const = default;

  // JSON; parse() round-trips losslessly.
  std::string to_text() const;
  static BenchReport parse(const std::string& text);

  // Tab-separated, header line plus one line per row.
  std::string to_table() const;
};

std::uint64_t fnv1a64(const void* data, std::size_t n);

// q-quantile with linear interpolation between order statistics.
// Throws std::invalid_argument on an empty sample or q outside [0, 1].
double bench_quantile(std::vector<double> samples, double q);

// Deterministic random bundle on an x-by-y grid with 0.8 m cells.
BevFeatureBundle bench_bundle(std::uint64_t seed, int channels, int grid_x,
                              int grid_y);

// One row per (grid, mode), grids outer. Weights are initialized once from
// `seed` and shared by every configuration. Ratios cover consecutive grid
// pairs per mode. Throws std::invalid_argument for repeats < 5 or an empty
// grid/mode list.
BenchReport bench_mfa(const std::vector<std::pair<int, int>>& grids,
                      const std::vector<MfaMode>& modes, int n_k, int repeats,
                      int threads = 1, std::uint64_t seed = 73,
                      const MdcaConfig& base = MdcaConfig{});

// One row per pipeline stage plus a "total" row; the total row carries the
// output hash. Throws std::invalid_argument for repeats < 5.
BenchReport bench_pipeline(const Scene& scene, const ModelConfig& cfg,
                           const PipelineOptions& opts, int repeats,
                           std::uint64_t weight_seed = 1);

// Scaling bands over an mfa report; empty means every band held.
// Dense consecutive-grid ratios must fall within growth * [0.875, 1.125]
// (growth = cell-count ratio); sparse ratios must stay <= 1.3 where n_k is
// below the larger grid's cell count; and on the largest grid where n_k
// binds, the sparse median must be <= half the dense median.
std::vector<std::string> check_scaling(const BenchReport& report);

}  // namespace crn

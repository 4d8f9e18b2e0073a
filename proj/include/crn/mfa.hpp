#pragma once

// BEV feature refinement: queries built from the fused BEV maps attend to
// both modality maps with deformable sampling.
//
// Per query q at normalized location p_q, one attention application is
//   out_q = sum_h W_h [ sum_m sum_k A_{h,m,q,k} * W'_{h,m} x_m(phi(p_q) + dp_{h,m,q,k}) ]
// where A is softmax-normalized jointly over the M*K slots of each head
// (sum_m sum_k A = 1), x_m are the two BEV value maps (static across
// layers), and W'_{h,m} / W_h are per-head value/output projections without
// bias. phi denormalizes to cell coordinates (p * extent - 0.5) and offsets
// are in cells; samples follow bilinear_sample's rule (a point outside the
// map rectangle contributes a zero vector).
//
// A refinement layer is post-norm: z <- LN(z + mdca(z)); z <- LN(z + FFN(z)).
// Sparse mode refines only the top-k cells ranked by
// max(depth_conf, occ_conf); unselected cells keep their initial queries.
// Every query's trajectory depends only on its own state and the static
// maps, which is what makes sparse and dense refinement agree on the
// selected cells.

#include <array>
#include <cstdint>
#include <vector>

#include "crn/rvt.hpp"
#include "crn/tensor.hpp"

namespace crn {

constexpr int kMdcaModalities = 2;  // image context, radar context

struct MdcaConfig {
  int channels = 64;  // C, query and value-map width
  int heads = 8;      // H
  int points = 4;     // K sampling points per head per modality
  int layers = 6;     // L
  int top_k = 4096;   // sparse query budget (clamped to the cell count)

  int head_dim() const { return channels / heads; }  // C_v
  void validate() const;
};

struct LnParams {
  Tensor gain;   // [C]
  Tensor shift;  // [C]
};

struct MdcaLayerWeights {
  Tensor attn_w, attn_b;      // [H*M*K, C], [H*M*K]
  Tensor offset_w, offset_b;  // [H*M*K*2, C], [H*M*K*2]; slots ordered (h, m, k),
                              // components (dx, dy) in cells
  Tensor value_w;             // [H, M, C_v, C]
  Tensor out_w;               // [H, C, C_v]
  Tensor ffn1_w, ffn1_b;      // [4C, C], [4C]
  Tensor ffn2_w, ffn2_b;      // [C, 4C], [C]
  LnParams ln_attn, ln_ffn;
};

struct MdcaWeights {
  LnParams ln_img, ln_radar;  // per-modality norms inside query projection
  Tensor query_w;             // [C, 2C]
  Tensor query_b;             // [C]
  std::vector<MdcaLayerWeights> layers;

  // Draw order: query_w, then per layer attn_w, offset_w, value_w, out_w,
  // ffn1_w, ffn2_w. Biases zero, LN gains one, LN shifts zero; none of
  // those consume draws.
  static MdcaWeights init(Rng& rng, const MdcaConfig& cfg);
};

// Queries in grid scan order: flat index q = ix * grid_y + iy. p[q] is the
// normalized cell center ((ix + 0.5) / X, (iy + 0.5) / Y).
struct QueryMap {
  Tensor z;  // [C, N_q]
  std::vector<std::array<double, 2>> p;
  int grid_x = 0;
  int grid_y = 0;
};

// z_q = W_z [LN(img_ctx_cell); LN(radar_ctx_cell)] + b per cell. The matvec
// accumulates in f64 over eight interleaved lanes combined in a fixed order,
// and cells are independent, so the output does not depend on the thread
// count or the tiling.
QueryMap query_project(const BevFeatureBundle& bundle, const MdcaWeights& w,
                       const MdcaConfig& cfg, int threads = 1);

struct MdcaStats {
  // max |sum of attention weights - 1| over every (query, head) softmax seen
  double max_attention_sum_err = 0.0;

  void merge(const MdcaStats& o) {
    max_attention_sum_err = std::max(max_attention_sum_err, o.max_attention_sum_err);
  }
};

// One attention application (no residual/LN/FFN). img_map and radar_map are
// [C, X, Y] matching the query grid. Returns [C, N_q].
Tensor mdca(const QueryMap& q, const Tensor& img_map, const Tensor& radar_map,
            const MdcaLayerWeights& w, const MdcaConfig& cfg, int threads = 1,
            MdcaStats* stats = nullptr);

// Full post-norm refinement layer; p and the maps pass through unchanged.
QueryMap mfa_layer(const QueryMap& q, const Tensor& img_map, const Tensor& radar_map,
                   const MdcaLayerWeights& w, const MdcaConfig& cfg, int threads = 1,
                   MdcaStats* stats = nullptr);

// Flat indices of the top-k cells by max(depth_conf, occ_conf), value
// descending, ties toward the lower index. k is clamped to the cell count.
std::vector<int> sparse_select(const Tensor& depth_conf, const Tensor& occ_conf,
                               int top_k);

enum class MfaMode { kDense, kSparse };

struct MfaResult {
  Tensor feature;             // [C, X, Y]
  std::vector<int> selected;  // refined flat cell indices
  MdcaStats stats;
};

MfaResult mfa_forward(const BevFeatureBundle& bundle, const MdcaWeights& w,
                      const MdcaConfig& cfg, MfaMode mode, int threads = 1);

// Analytic per-layer multiply count for one refined query; the attention
// stack is Theta(N_q * H * M * K * C) per layer plus the FFN.
std::int64_t mdca_query_layer_ops(const MdcaConfig& cfg);

}  // namespace crn

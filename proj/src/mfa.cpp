#include "crn/mfa.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#endif

#include "crn/parallel.hpp"

namespace crn {

namespace {

void check_map(const Tensor& map, int c_n, int x, int y, const char* name) {
  if (map.dims != std::vector<int>{c_n, x, y})
    throw ShapeError(std::string(name) + ": expected [C, X, Y] matching the query grid");
}

// layer_norm's per-row math on one gathered lane.
inline void ln_lane(const float* x, int c, const LnParams& ln, float* out) {
  double mean = 0.0;
  for (int i = 0; i < c; ++i) mean += x[i];
  mean /= c;
  double var = 0.0;
  for (int i = 0; i < c; ++i) {
    const double d = x[i] - mean;
    var += d * d;
  }
  var /= c;
  const double inv = 1.0 / std::sqrt(var + double(1e-5f));
  for (int i = 0; i < c; ++i)
    out[i] = float(double(ln.gain.data[i]) * ((x[i] - mean) * inv) +
                   double(ln.shift.data[i]));
}

// Eight interleaved f64 accumulators: element pos0 + i lands in lane
// (pos0 + i) mod 8. The interleaving is part of the query projection's
// definition; it breaks the serial add chain without giving up a fixed,
// thread-independent reduction order.
inline void dot8_acc(const double* v, const float* w, int c, int pos0,
                     double lane[8]) {
  int i = 0;
  if (pos0 % 8 == 0) {
    for (; i + 8 <= c; i += 8) {
      lane[0] += double(w[i]) * v[i];
      lane[1] += double(w[i + 1]) * v[i + 1];
      lane[2] += double(w[i + 2]) * v[i + 2];
      lane[3] += double(w[i + 3]) * v[i + 3];
      lane[4] += double(w[i + 4]) * v[i + 4];
      lane[5] += double(w[i + 5]) * v[i + 5];
      lane[6] += double(w[i + 6]) * v[i + 6];
      lane[7] += double(w[i + 7]) * v[i + 7];
    }
  }
  for (; i < c; ++i) lane[(pos0 + i) % 8] += double(w[i]) * v[i];
}

#if defined(__AVX2__) && defined(__FMA__)
// Same eight-lane reduction with vector registers: `lo` holds lanes 0-3 and
// `hi` lanes 4-7, combined in the fixed tree dot8_acc callers use.
inline float dot8_tree(double bias, __m256d lo, __m256d hi) {
  alignas(32) double l[4], h[4];
  _mm256_store_pd(l, lo);
  _mm256_store_pd(h, hi);
  return float(bias + (((l[0] + l[1]) + (l[2] + l[3])) +
                       ((h[0] + h[1]) + (h[2] + h[3]))));
}
#endif

// Value maps are re-laid channel-last so one bilinear tap reads C contiguous
// floats: v[(ix * Y + iy) * C + c].
struct ChannelLast {
  int x = 0, y = 0, c = 0;
  std::vector<float> v;

  static ChannelLast from(const Tensor& map) {
    ChannelLast m;
    m.c = map.dims[0];
    m.x = map.dims[1];
    m.y = map.dims[2];
    m.v.resize(map.data.size());
    const std::int64_t cells = std::int64_t(m.x) * m.y;
    // Cells are tiled so the strided write window stays cache resident
    // instead of sweeping the whole map once per channel.
    constexpr std::int64_t kTile = 128;
    for (std::int64_t t0 = 0; t0 < cells; t0 += kTile) {
      const std::int64_t t1 = std::min(cells, t0 + kTile);
      for (int c = 0; c < m.c; ++c) {
        const float* src = &map.data[std::int64_t(c) * cells];
        for (std::int64_t i = t0; i < t1; ++i) m.v[i * m.c + c] = src[i];
      }
    }
    return m;
  }
};

// Mirrors bilinear_sample's rule: a point outside the corner rectangle
// [0, X-1] x [0, Y-1] contributes nothing; far-edge indices clamp. sx runs
// along the slow (X) axis, sy along the fast (Y) axis. `out` accumulates
// weight * sample, so callers fold the attention weight into `weight`.
void sample_add(const ChannelLast& m, double sx, double sy, float weight, float* out) {
  if (sx < 0.0 || sy < 0.0 || sx > double(m.x - 1) || sy > double(m.y - 1)) return;
  const int x0 = std::min(int(std::floor(sx)), m.x - 1);
  const int y0 = std::min(int(std::floor(sy)), m.y - 1);
  const int x1 = std::min(x0 + 1, m.x - 1);
  const int y1 = std::min(y0 + 1, m.y - 1);
  const float fx = float(sx - x0), fy = float(sy - y0);
  const float w00 = weight * (1.0f - fx) * (1.0f - fy);
  const float w01 = weight * (1.0f - fx) * fy;
  const float w10 = weight * fx * (1.0f - fy);
  const float w11 = weight * fx * fy;
  const int c_n = m.c;
  const float* r00 = m.v.data() + (std::int64_t(x0) * m.y + y0) * c_n;
  const float* r01 = m.v.data() + (std::int64_t(x0) * m.y + y1) * c_n;
  const float* r10 = m.v.data() + (std::int64_t(x1) * m.y + y0) * c_n;
  const float* r11 = m.v.data() + (std::int64_t(x1) * m.y + y1) * c_n;
  for (int c = 0; c < c_n; ++c)
    out[c] += w00 * r00[c] + w01 * r01[c] + w10 * r10[c] + w11 * r11[c];
}

struct QueryWorkspace {
  std::vector<float> z;       // [C]
  std::vector<float> logits;  // [H*M*K]
  std::vector<float> off;     // [H*M*K*2]
  std::vector<float> alpha;   // [M*K]
  std::vector<float> agg;     // [C] attention-weighted sample sum
  std::vector<float> head;    // [H*C_v]

  explicit QueryWorkspace(const MdcaConfig& cfg)
      : z(cfg.channels),
        logits(size_t(cfg.heads) * kMdcaModalities * cfg.points),
        off(logits.size() * 2),
        alpha(size_t(kMdcaModalities) * cfg.points),
        agg(cfg.channels),
        head(cfg.channels) {}
};

// One query against one layer's weights. Writes the output column, strided.
void run_query(const QueryMap& q, int qi, const ChannelLast& img, const ChannelLast& radar,
               const MdcaLayerWeights& w, const MdcaConfig& cfg, QueryWorkspace& ws,
               float* out_col, std::int64_t out_stride, MdcaStats& stats) {
  const int c_n = cfg.channels, h_n = cfg.heads, k_n = cfg.points;
  const int cv = cfg.head_dim();
  const int slots = kMdcaModalities * k_n;
  const int n_q = q.z.dims[1];

  for (int c = 0; c < c_n; ++c) ws.z[c] = q.z.data[std::int64_t(c) * n_q + qi];

  for (int s = 0; s < h_n * slots; ++s) {
    const float* row = w.attn_w.data.data() + std::int64_t(s) * c_n;
    float acc = w.attn_b.data[s];
    for (int c = 0; c < c_n; ++c) acc += row[c] * ws.z[c];
    ws.logits[s] = acc;
    for (int comp = 0; comp < 2; ++comp) {
      const float* orow = w.offset_w.data.data() + (std::int64_t(s) * 2 + comp) * c_n;
      float oacc = w.offset_b.data[s * 2 + comp];
      for (int c = 0; c < c_n; ++c) oacc += orow[c] * ws.z[c];
      ws.off[s * 2 + comp] = oacc;
    }
  }

  const double base_x = q.p[qi][0] * q.grid_x - 0.5;
  const double base_y = q.p[qi][1] * q.grid_y - 0.5;
  std::fill(ws.head.begin(), ws.head.end(), 0.0f);

  for (int h = 0; h < h_n; ++h) {
    // Softmax over this head's M*K slots, stabilized, summed in double.
    const float* hl = ws.logits.data() + std::ptrdiff_t(h) * slots;
    double mx = hl[0];
    for (int s = 1; s < slots; ++s) mx = std::max(mx, double(hl[s]));
    double sum = 0.0;
    for (int s = 0; s < slots; ++s) sum += std::exp(double(hl[s]) - mx);
    double realized = 0.0;
    for (int s = 0; s < slots; ++s) {
      ws.alpha[s] = float(std::exp(double(hl[s]) - mx) / sum);
      realized += double(ws.alpha[s]);
    }
    stats.max_attention_sum_err =
        std::max(stats.max_attention_sum_err, std::abs(realized - 1.0));

    for (int m = 0; m < kMdcaModalities; ++m) {
      const ChannelLast& map = m == 0 ? img : radar;
      std::fill(ws.agg.begin(), ws.agg.end(), 0.0f);
      for (int k = 0; k < k_n; ++k) {
        const int s = m * k_n + k;
        const int slot = h * slots + s;
        sample_add(map, base_x + ws.off[slot * 2], base_y + ws.off[slot * 2 + 1],
                   ws.alpha[s], ws.agg.data());
      }
      // Attention and projection commute (both linear in the samples), so one
      // value projection per (head, modality) covers all K points.
      for (int v = 0; v < cv; ++v) {
        const float* vrow =
            w.value_w.data.data() + ((std::int64_t(h) * kMdcaModalities + m) * cv + v) * c_n;
        float acc = 0.0f;
        for (int c = 0; c < c_n; ++c) acc += vrow[c] * ws.agg[c];
        ws.head[h * cv + v] += acc;
      }
    }
  }

  for (int c = 0; c < c_n; ++c) {
    float acc = 0.0f;
    for (int h = 0; h < h_n; ++h) {
      const float* hrow = w.out_w.data.data() + (std::int64_t(h) * c_n + c) * cv;
      const float* hv = ws.head.data() + std::ptrdiff_t(h) * cv;
      for (int v = 0; v < cv; ++v) acc += hrow[v] * hv[v];
    }
    out_col[std::int64_t(c) * out_stride] = acc;
  }
}

void check_layer(const MdcaLayerWeights& w, const MdcaConfig& cfg) {
  const int c = cfg.channels, cv = cfg.head_dim();
  const int rows = cfg.heads * kMdcaModalities * cfg.points;
  if (w.attn_w.dims != std::vector<int>{rows, c} || w.attn_b.dims != std::vector<int>{rows})
    throw ShapeError("mdca: attention head weights do not match the config");
  if (w.offset_w.dims != std::vector<int>{rows * 2, c} ||
      w.offset_b.dims != std::vector<int>{rows * 2})
    throw ShapeError("mdca: offset head weights do not match the config");
  if (w.value_w.dims != std::vector<int>{cfg.heads, kMdcaModalities, cv, c})
    throw ShapeError("mdca: value weights do not match the config");
  if (w.out_w.dims != std::vector<int>{cfg.heads, c, cv})
    throw ShapeError("mdca: output weights do not match the config");
}

}  // namespace

void MdcaConfig::validate() const {
  if (channels <= 0 || heads <= 0 || points <= 0 || layers <= 0)
    throw std::invalid_argument("mdca config: channels, heads, points, layers must be positive");
  if (channels % heads != 0)
    throw std::invalid_argument("mdca config: channels must divide evenly across heads");
  if (top_k < 0) throw std::invalid_argument("mdca config: top_k must be non-negative");
}

MdcaWeights MdcaWeights::init(Rng& rng, const MdcaConfig& cfg) {
  cfg.validate();
  const int c = cfg.channels, cv = cfg.head_dim();
  const int rows = cfg.heads * kMdcaModalities * cfg.points;
  auto ones = [](int n) {
    Tensor t({n});
    std::fill(t.data.begin(), t.data.end(), 1.0f);
    return t;
  };

  MdcaWeights w;
  w.ln_img = {ones(c), Tensor({c})};
  w.ln_radar = {ones(c), Tensor({c})};
  w.query_w = init_uniform(rng, {c, 2 * c}, 2 * c);
  w.query_b = Tensor({c});
  w.layers.resize(cfg.layers);
  for (auto& l : w.layers) {
    l.attn_w = init_uniform(rng, {rows, c}, c);
    l.attn_b = Tensor({rows});
    l.offset_w = init_uniform(rng, {rows * 2, c}, c);
    l.offset_b = Tensor({rows * 2});
    l.value_w = init_uniform(rng, {cfg.heads, kMdcaModalities, cv, c}, c);
    l.out_w = init_uniform(rng, {cfg.heads, c, cv}, cv);
    l.ffn1_w = init_uniform(rng, {4 * c, c}, c);
    l.ffn1_b = Tensor({4 * c});
    l.ffn2_w = init_uniform(rng, {c, 4 * c}, 4 * c);
    l.ffn2_b = Tensor({c});
    l.ln_attn = {ones(c), Tensor({c})};
    l.ln_ffn = {ones(c), Tensor({c})};
  }
  return w;
}

QueryMap query_project(const BevFeatureBundle& bundle, const MdcaWeights& w,
                       const MdcaConfig& cfg, int threads) {
  cfg.validate();
  const int c_n = cfg.channels;
  const int x = bundle.grid.size_x, y = bundle.grid.size_y;
  check_map(bundle.img_ctx, c_n, x, y, "query_project: img_ctx");
  check_map(bundle.radar_ctx, c_n, x, y, "query_project: radar_ctx");
  if (w.query_w.dims != std::vector<int>{c_n, 2 * c_n})
    throw ShapeError("query_project: query weights do not match the config");
  if (w.query_b.dims != std::vector<int>{c_n})
    throw ShapeError("query_project: query bias does not match the config");
  if (w.ln_img.gain.dims != std::vector<int>{c_n} ||
      w.ln_img.shift.dims != std::vector<int>{c_n} ||
      w.ln_radar.gain.dims != std::vector<int>{c_n} ||
      w.ln_radar.shift.dims != std::vector<int>{c_n})
    throw ShapeError("query_project: layer norm params do not match the config");
  if (threads < 1) throw std::invalid_argument("query_project: threads must be >= 1");
  const std::int64_t n = std::int64_t(x) * y;

  QueryMap q;
  q.grid_x = x;
  q.grid_y = y;
  q.z = Tensor({c_n, int(n)});

  // Fused per-cell pass over tiles: gather both context lanes, layer_norm,
  // then the query matvec. Cells are independent, so the tiling and the
  // thread chunking cannot change the result.
  //
  // The normalized lanes are widened to f64 once per cell (exact), so both
  // matvec paths below consume identical operands. With the channel count a
  // multiple of eight, the concatenated [img | radar] walk lands element k in
  // lane k mod 8, matching the split dot8_acc calls term for term.
  constexpr int kTile = 128;
  const int k2 = 2 * c_n;
  const std::vector<double> wd(w.query_w.data.begin(), w.query_w.data.end());
  const std::vector<double> bd(w.query_b.data.begin(), w.query_b.data.end());
  parallel_for(int(n), threads, [&](int begin, int end, int) {
    std::vector<float> ti(size_t(kTile) * c_n), tr(size_t(kTile) * c_n);
    std::vector<float> tz(size_t(kTile) * c_n);
    const size_t cn = size_t(c_n);
    std::vector<float> ni(cn), nr(cn);
    std::vector<double> xt(size_t(kTile) * k2);
    for (std::int64_t t0 = begin; t0 < end; t0 += kTile) {
      const int m = int(std::min<std::int64_t>(kTile, end - t0));
      for (int c = 0; c < c_n; ++c) {
        const float* si = &bundle.img_ctx.data[std::int64_t(c) * n + t0];
        const float* sr = &bundle.radar_ctx.data[std::int64_t(c) * n + t0];
        for (int b = 0; b < m; ++b) {
          ti[size_t(b) * c_n + c] = si[b];
          tr[size_t(b) * c_n + c] = sr[b];
        }
      }
      for (int b = 0; b < m; ++b) {
        ln_lane(&ti[size_t(b) * c_n], c_n, w.ln_img, ni.data());
        ln_lane(&tr[size_t(b) * c_n], c_n, w.ln_radar, nr.data());
        double* xb = &xt[size_t(b) * k2];
        for (int i = 0; i < c_n; ++i) xb[i] = double(ni[i]);
        for (int i = 0; i < c_n; ++i) xb[c_n + i] = double(nr[i]);
      }
      int b = 0;
#if defined(__AVX2__) && defined(__FMA__)
      if (c_n % 8 == 0) {
        for (; b + 4 <= m; b += 4) {
          const double* x0 = &xt[size_t(b) * k2];
          const double* x1 = x0 + k2;
          const double* x2 = x1 + k2;
          const double* x3 = x2 + k2;
          float* z0 = &tz[size_t(b) * c_n];
          for (int o = 0; o < c_n; ++o) {
            const double* wr = &wd[size_t(o) * k2];
            __m256d a0l = _mm256_setzero_pd(), a0h = _mm256_setzero_pd();
            __m256d a1l = _mm256_setzero_pd(), a1h = _mm256_setzero_pd();
            __m256d a2l = _mm256_setzero_pd(), a2h = _mm256_setzero_pd();
            __m256d a3l = _mm256_setzero_pd(), a3h = _mm256_setzero_pd();
            for (int k = 0; k < k2; k += 8) {
              const __m256d wl = _mm256_loadu_pd(wr + k);
              const __m256d wh = _mm256_loadu_pd(wr + k + 4);
              a0l = _mm256_fmadd_pd(wl, _mm256_loadu_pd(x0 + k), a0l);
              a0h = _mm256_fmadd_pd(wh, _mm256_loadu_pd(x0 + k + 4), a0h);
              a1l = _mm256_fmadd_pd(wl, _mm256_loadu_pd(x1 + k), a1l);
              a1h = _mm256_fmadd_pd(wh, _mm256_loadu_pd(x1 + k + 4), a1h);
              a2l = _mm256_fmadd_pd(wl, _mm256_loadu_pd(x2 + k), a2l);
              a2h = _mm256_fmadd_pd(wh, _mm256_loadu_pd(x2 + k + 4), a2h);
              a3l = _mm256_fmadd_pd(wl, _mm256_loadu_pd(x3 + k), a3l);
              a3h = _mm256_fmadd_pd(wh, _mm256_loadu_pd(x3 + k + 4), a3h);
            }
            const double bo = bd[size_t(o)];
            z0[o] = dot8_tree(bo, a0l, a0h);
            z0[cn + o] = dot8_tree(bo, a1l, a1h);
            z0[2 * cn + o] = dot8_tree(bo, a2l, a2h);
            z0[3 * cn + o] = dot8_tree(bo, a3l, a3h);
          }
        }
        for (; b < m; ++b) {
          const double* xb = &xt[size_t(b) * k2];
          float* zb = &tz[size_t(b) * c_n];
          for (int o = 0; o < c_n; ++o) {
            const double* wr = &wd[size_t(o) * k2];
            __m256d al = _mm256_setzero_pd(), ah = _mm256_setzero_pd();
            for (int k = 0; k < k2; k += 8) {
              al = _mm256_fmadd_pd(_mm256_loadu_pd(wr + k),
                                   _mm256_loadu_pd(xb + k), al);
              ah = _mm256_fmadd_pd(_mm256_loadu_pd(wr + k + 4),
                                   _mm256_loadu_pd(xb + k + 4), ah);
            }
            zb[o] = dot8_tree(bd[size_t(o)], al, ah);
          }
        }
      }
#endif
      for (; b < m; ++b) {
        const double* xb = &xt[size_t(b) * k2];
        float* zb = &tz[size_t(b) * c_n];
        for (int o = 0; o < c_n; ++o) {
          const float* wr = &w.query_w.data[size_t(o) * k2];
          double lane[8] = {};
          dot8_acc(xb, wr, c_n, 0, lane);
          dot8_acc(xb + c_n, wr + c_n, c_n, c_n, lane);
          zb[o] = float(double(w.query_b.data[size_t(o)]) +
                        (((lane[0] + lane[1]) + (lane[2] + lane[3])) +
                         ((lane[4] + lane[5]) + (lane[6] + lane[7]))));
        }
      }
      for (int c = 0; c < c_n; ++c) {
        float* dst = &q.z.data[std::int64_t(c) * n + t0];
        for (int b2 = 0; b2 < m; ++b2) dst[b2] = tz[size_t(b2) * c_n + c];
      }
    }
  });

  q.p.resize(size_t(n));
  for (int ix = 0; ix < x; ++ix)
    for (int iy = 0; iy < y; ++iy)
      q.p[size_t(ix) * y + iy] = {(ix + 0.5) / x, (iy + 0.5) / y};
  return q;
}

static Tensor mdca_impl(const QueryMap& q, const ChannelLast& img,
                        const ChannelLast& radar, const MdcaLayerWeights& w,
                        const MdcaConfig& cfg, int threads, MdcaStats* stats) {
  cfg.validate();
  check_layer(w, cfg);
  if (q.z.dims.size() != 2 || q.z.dims[0] != cfg.channels)
    throw ShapeError("mdca: queries must be [C, N_q]");
  const int n_q = q.z.dims[1];
  if (int(q.p.size()) != n_q) throw ShapeError("mdca: one reference point per query");
  if (img.c != cfg.channels || img.x != q.grid_x || img.y != q.grid_y ||
      radar.c != cfg.channels || radar.x != q.grid_x || radar.y != q.grid_y)
    throw ShapeError("mdca: value maps do not match the query grid");
  if (threads < 1) throw std::invalid_argument("mdca: threads must be >= 1");

  Tensor out({cfg.channels, n_q});

  const size_t lanes = size_t(threads);
  std::vector<QueryWorkspace> ws(lanes, QueryWorkspace(cfg));
  std::vector<MdcaStats> local(lanes);
  parallel_for(n_q, threads, [&](std::int64_t begin, std::int64_t end, int tid) {
    for (std::int64_t qi = begin; qi < end; ++qi)
      run_query(q, int(qi), img, radar, w, cfg, ws[size_t(tid)], out.data.data() + qi, n_q,
                local[size_t(tid)]);
  });
  MdcaStats merged;
  for (const auto& s : local) merged.merge(s);
  if (stats) stats->merge(merged);
  return out;
}

Tensor mdca(const QueryMap& q, const Tensor& img_map, const Tensor& radar_map,
            const MdcaLayerWeights& w, const MdcaConfig& cfg, int threads,
            MdcaStats* stats) {
  check_map(img_map, cfg.channels, q.grid_x, q.grid_y, "mdca: img_map");
  check_map(radar_map, cfg.channels, q.grid_x, q.grid_y, "mdca: radar_map");
  return mdca_impl(q, ChannelLast::from(img_map), ChannelLast::from(radar_map), w,
                   cfg, threads, stats);
}

static QueryMap mfa_layer_impl(const QueryMap& q, const ChannelLast& img,
                               const ChannelLast& radar, const MdcaLayerWeights& w,
                               const MdcaConfig& cfg, int threads, MdcaStats* stats) {
  const int c_n = cfg.channels;
  Tensor attn = mdca_impl(q, img, radar, w, cfg, threads, stats);
  const std::int64_t n = q.z.dims[1];

  Tensor lanes({int(n), c_n});
  for (int c = 0; c < c_n; ++c)
    for (std::int64_t i = 0; i < n; ++i)
      lanes.data[i * c_n + c] = q.z.data[c * n + i] + attn.data[c * n + i];
  Tensor z1 = layer_norm(lanes, w.ln_attn.gain, w.ln_attn.shift);
  Tensor f = linear(relu(linear(z1, w.ffn1_w, w.ffn1_b)), w.ffn2_w, w.ffn2_b);
  for (std::int64_t i = 0; i < n * c_n; ++i) f.data[i] += z1.data[i];
  Tensor z2 = layer_norm(f, w.ln_ffn.gain, w.ln_ffn.shift);

  QueryMap out;
  out.grid_x = q.grid_x;
  out.grid_y = q.grid_y;
  out.p = q.p;
  out.z = Tensor({c_n, int(n)});
  for (std::int64_t i = 0; i < n; ++i)
    for (int c = 0; c < c_n; ++c) out.z.data[std::int64_t(c) * n + i] = z2.data[i * c_n + c];
  return out;
}

QueryMap mfa_layer(const QueryMap& q, const Tensor& img_map, const Tensor& radar_map,
                   const MdcaLayerWeights& w, const MdcaConfig& cfg, int threads,
                   MdcaStats* stats) {
  check_map(img_map, cfg.channels, q.grid_x, q.grid_y, "mdca: img_map");
  check_map(radar_map, cfg.channels, q.grid_x, q.grid_y, "mdca: radar_map");
  return mfa_layer_impl(q, ChannelLast::from(img_map), ChannelLast::from(radar_map),
                        w, cfg, threads, stats);
}

std::vector<int> sparse_select(const Tensor& depth_conf, const Tensor& occ_conf, int top_k_n) {
  if (depth_conf.dims.size() != 3 || depth_conf.dims[0] != 1)
    throw ShapeError("sparse_select: confidence maps must be [1, X, Y]");
  if (occ_conf.dims != depth_conf.dims)
    throw ShapeError("sparse_select: confidence maps must share a shape");
  if (top_k_n < 0) throw std::invalid_argument("sparse_select: top_k must be non-negative");
  const std::int64_t n = std::int64_t(depth_conf.dims[1]) * depth_conf.dims[2];
  Tensor score({int(n)});
  for (std::int64_t i = 0; i < n; ++i)
    score.data[i] = std::max(depth_conf.data[i], occ_conf.data[i]);
  return top_k(score, std::min<std::int64_t>(top_k_n, n));
}

MfaResult mfa_forward(const BevFeatureBundle& bundle, const MdcaWeights& w,
                      const MdcaConfig& cfg, MfaMode mode, int threads) {
  if (int(w.layers.size()) != cfg.layers)
    throw ShapeError("mfa_forward: weight stack does not match the configured layer count");
  QueryMap q0 = query_project(bundle, w, cfg, threads);
  const std::int64_t n = q0.z.dims[1];

  MfaResult res;
  res.selected.resize(size_t(n));
  for (std::int64_t i = 0; i < n; ++i) res.selected[size_t(i)] = int(i);
  QueryMap run;
  if (mode == MfaMode::kSparse) {
    res.selected = sparse_select(bundle.depth_conf, bundle.occ_conf, cfg.top_k);
    run.grid_x = q0.grid_x;
    run.grid_y = q0.grid_y;
    run.z = Tensor({cfg.channels, int(res.selected.size())});
    const std::int64_t m = std::int64_t(res.selected.size());
    for (std::int64_t i = 0; i < m; ++i) {
      run.p.push_back(q0.p[size_t(res.selected[size_t(i)])]);
      for (int c = 0; c < cfg.channels; ++c)
        run.z.data[c * m + i] = q0.z.data[std::int64_t(c) * n + res.selected[size_t(i)]];
    }
  } else {
    run = q0;
  }

  // Value maps are shared by every layer; build the channel-last copies once.
  const ChannelLast img = ChannelLast::from(bundle.img_ctx);
  const ChannelLast radar = ChannelLast::from(bundle.radar_ctx);
  for (const auto& layer : w.layers)
    run = mfa_layer_impl(run, img, radar, layer, cfg, threads, &res.stats);

  // Unrefined cells keep their projected queries; refined ones are scattered
  // back over them.
  res.feature = Tensor({cfg.channels, q0.grid_x, q0.grid_y});
  res.feature.data = q0.z.data;
  const std::int64_t m = std::int64_t(res.selected.size());
  for (std::int64_t i = 0; i < m; ++i)
    for (int c = 0; c < cfg.channels; ++c)
      res.feature.data[std::int64_t(c) * n + res.selected[size_t(i)]] = run.z.data[c * m + i];
  return res;
}

std::int64_t mdca_query_layer_ops(const MdcaConfig& cfg) {
  const std::int64_t c = cfg.channels, cv = cfg.head_dim();
  const std::int64_t taps = std::int64_t(cfg.heads) * kMdcaModalities * cfg.points;
  const std::int64_t attn = taps * c;            // attention logits
  const std::int64_t offs = taps * 2 * c;        // offset heads
  const std::int64_t samp = taps * 5 * c;        // 4 corner taps + weighted sum
  const std::int64_t val = cfg.heads * kMdcaModalities * cv * c;
  const std::int64_t proj = c * cv * cfg.heads;  // output projection
  const std::int64_t ffn = 8 * c * c;
  return attn + offs + samp + val + proj + ffn;
}

}  // namespace crn

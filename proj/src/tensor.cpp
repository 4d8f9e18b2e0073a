#include "crn/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace crn {

namespace {

std::string dims_str(const std::vector<int>& dims) {
  std::string s = "[";
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) : dims(std::move(shape)) {
  require(!dims.empty(), "tensor rank must be at least 1");
  std::int64_t n = 1;
  for (int d : dims) {
    require(d > 0, "tensor extents must be positive, got " + dims_str(dims));
    n *= d;
  }
  data.assign(static_cast<size_t>(n), 0.0f);
}

Tensor Tensor::from(std::vector<int> shape, std::vector<float> values) {
  Tensor t(std::move(shape));
  require(values.size() == t.data.size(),
          "value count " + std::to_string(values.size()) + " does not fill " +
              dims_str(t.dims));
  t.data = std::move(values);
  return t;
}

std::int64_t Tensor::numel() const {
  std::int64_t n = 1;
  for (int d : dims) n *= d;
  return n;
}

namespace {

size_t checked_index(const std::vector<int>& dims, std::initializer_list<int> idx) {
  if (dims.size() != idx.size())
    throw std::out_of_range("index rank " + std::to_string(idx.size()) +
                            " into tensor " + dims_str(dims));
  size_t flat = 0;
  auto it = idx.begin();
  for (size_t d = 0; d < dims.size(); ++d, ++it) {
    if (*it < 0 || *it >= dims[d])
      throw std::out_of_range("index " + std::to_string(*it) + " out of dim " +
                              std::to_string(dims[d]));
    flat = flat * static_cast<size_t>(dims[d]) + static_cast<size_t>(*it);
  }
  return flat;
}

}  // namespace

float& Tensor::at(int i) { return data[checked_index(dims, {i})]; }
float& Tensor::at(int i, int j) { return data[checked_index(dims, {i, j})]; }
float& Tensor::at(int i, int j, int k) { return data[checked_index(dims, {i, j, k})]; }
float& Tensor::at(int i, int j, int k, int l) {
  return data[checked_index(dims, {i, j, k, l})];
}
float Tensor::at(int i) const { return data[checked_index(dims, {i})]; }
float Tensor::at(int i, int j) const { return data[checked_index(dims, {i, j})]; }
float Tensor::at(int i, int j, int k) const {
  return data[checked_index(dims, {i, j, k})];
}
float Tensor::at(int i, int j, int k, int l) const {
  return data[checked_index(dims, {i, j, k, l})];
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  require(input.rank() == 3, "conv2d input must be [C_in, H, W], got " +
                                 dims_str(input.dims));
  require(kernel.rank() == 4 && kernel.dims[2] == 3 && kernel.dims[3] == 3,
          "conv2d kernel must be [C_out, C_in, 3, 3], got " + dims_str(kernel.dims));
  require(kernel.dims[1] == input.dims[0],
          "conv2d kernel C_in " + std::to_string(kernel.dims[1]) +
              " does not match input C_in " + std::to_string(input.dims[0]));
  require(bias.rank() == 1 && bias.dims[0] == kernel.dims[0],
          "conv2d bias must be [C_out]");

  const int ci_n = input.dims[0], h_n = input.dims[1], w_n = input.dims[2];
  const int co_n = kernel.dims[0];
  Tensor out({co_n, h_n, w_n});
  std::vector<double> acc(static_cast<size_t>(w_n));

  for (int co = 0; co < co_n; ++co) {
    for (int y = 0; y < h_n; ++y) {
      std::fill(acc.begin(), acc.end(), static_cast<double>(bias.data[co]));
      for (int ci = 0; ci < ci_n; ++ci) {
        const float* kbase = &kernel.data[((static_cast<size_t>(co) * ci_n + ci) * 3) * 3];
        for (int ky = 0; ky < 3; ++ky) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h_n) continue;
          const float* row = &input.data[(static_cast<size_t>(ci) * h_n + sy) * w_n];
          for (int kx = 0; kx < 3; ++kx) {
            const double kv = kbase[ky * 3 + kx];
            const int dx = kx - 1;
            const int x0 = std::max(0, -dx);
            const int x1 = std::min(w_n, w_n - dx);
            for (int x = x0; x < x1; ++x) acc[x] += kv * static_cast<double>(row[x + dx]);
          }
        }
      }
      float* orow = &out.data[(static_cast<size_t>(co) * h_n + y) * w_n];
      for (int x = 0; x < w_n; ++x) orow[x] = static_cast<float>(acc[x]);
    }
  }
  return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require(weight.rank() == 2, "linear weight must be [C_out, C_in]");
  const int ci = input.dims.back();
  require(weight.dims[1] == ci, "linear weight C_in " + std::to_string(weight.dims[1]) +
                                    " does not match input " + std::to_string(ci));
  const int co = weight.dims[0];
  require(bias.rank() == 1 && bias.dims[0] == co, "linear bias must be [C_out]");

  const std::int64_t rows = input.numel() / ci;
  std::vector<int> od = input.dims;
  od.back() = co;
  Tensor out(od);
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* x = &input.data[static_cast<size_t>(r) * ci];
    float* y = &out.data[static_cast<size_t>(r) * co];
    for (int o = 0; o < co; ++o) {
      const float* w = &weight.data[static_cast<size_t>(o) * ci];
      double acc = bias.data[o];
      for (int i = 0; i < ci; ++i) acc += static_cast<double>(w[i]) * static_cast<double>(x[i]);
      y[o] = static_cast<float>(acc);
    }
  }
  return out;
}

Tensor softmax(const Tensor& input, int axis) {
  if (axis < 0 || axis >= input.rank())
    throw std::invalid_argument("softmax axis " + std::to_string(axis) +
                                " out of rank " + std::to_string(input.rank()));
  const int n = input.dims[axis];
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= input.dims[i];
  for (int i = axis + 1; i < input.rank(); ++i) inner *= input.dims[i];

  Tensor out(input.dims);
  std::vector<double> e(static_cast<size_t>(n));
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in_i = 0; in_i < inner; ++in_i) {
      const std::int64_t base = o * n * inner + in_i;
      float mx = input.data[base];
      for (int j = 1; j < n; ++j)
        mx = std::max(mx, input.data[base + static_cast<std::int64_t>(j) * inner]);
      double sum = 0.0;
      for (int j = 0; j < n; ++j) {
        e[j] = std::exp(
            static_cast<double>(input.data[base + static_cast<std::int64_t>(j) * inner]) -
            static_cast<double>(mx));
        sum += e[j];
      }
      for (int j = 0; j < n; ++j)
        out.data[base + static_cast<std::int64_t>(j) * inner] =
            static_cast<float>(e[j] / sum);
    }
  }
  return out;
}

Tensor sigmoid(const Tensor& input) {
  Tensor out(input.dims);
  for (size_t i = 0; i < input.data.size(); ++i) {
    const double x = input.data[i];
    double v;
    if (x >= 0.0) {
      v = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double ex = std::exp(x);
      v = ex / (1.0 + ex);
    }
    out.data[i] = static_cast<float>(v);
  }
  return out;
}

Tensor relu(const Tensor& input) {
  Tensor out(input.dims);
  for (size_t i = 0; i < input.data.size(); ++i)
    out.data[i] = input.data[i] > 0.0f ? input.data[i] : 0.0f;
  return out;
}

Tensor layer_norm(const Tensor& input, const Tensor& gain, const Tensor& shift,
                  float eps) {
  const int c = input.dims.back();
  require(gain.rank() == 1 && gain.dims[0] == c, "layer_norm gain must be [C]");
  require(shift.rank() == 1 && shift.dims[0] == c, "layer_norm shift must be [C]");

  const std::int64_t rows = input.numel() / c;
  Tensor out(input.dims);
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* x = &input.data[static_cast<size_t>(r) * c];
    float* y = &out.data[static_cast<size_t>(r) * c];
    double mean = 0.0;
    for (int i = 0; i < c; ++i) mean += x[i];
    mean /= c;
    double var = 0.0;
    for (int i = 0; i < c; ++i) {
      const double d = x[i] - mean;
      var += d * d;
    }
    var /= c;
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    for (int i = 0; i < c; ++i)
      y[i] = static_cast<float>(static_cast<double>(gain.data[i]) * ((x[i] - mean) * inv) +
                                static_cast<double>(shift.data[i]));
  }
  return out;
}

Tensor bilinear_sample(const Tensor& map, double x, double y) {
  require(map.rank() == 3, "bilinear_sample map must be [C, H, W]");
  const int c_n = map.dims[0], h_n = map.dims[1], w_n = map.dims[2];
  Tensor out({c_n});
  if (x < 0.0 || y < 0.0 || x > double(w_n - 1) || y > double(h_n - 1)) return out;

  const int x0 = std::min(static_cast<int>(std::floor(x)), w_n - 1);
  const int y0 = std::min(static_cast<int>(std::floor(y)), h_n - 1);
  const int x1 = std::min(x0 + 1, w_n - 1);
  const int y1 = std::min(y0 + 1, h_n - 1);
  const double tx = x - x0;
  const double ty = y - y0;
  const double w00 = (1.0 - tx) * (1.0 - ty);
  const double w01 = tx * (1.0 - ty);
  const double w10 = (1.0 - tx) * ty;
  const double w11 = tx * ty;
  const std::int64_t plane = static_cast<std::int64_t>(h_n) * w_n;
  for (int c = 0; c < c_n; ++c) {
    const float* m = &map.data[static_cast<size_t>(c) * plane];
    const double v = w00 * m[y0 * w_n + x0] + w01 * m[y0 * w_n + x1] +
                     w10 * m[y1 * w_n + x0] + w11 * m[y1 * w_n + x1];
    out.data[c] = static_cast<float>(v);
  }
  return out;
}

std::vector<int> top_k(const Tensor& values, int k) {
  require(values.rank() == 1, "top_k expects a rank-1 tensor");
  const int n = values.dims[0];
  if (k < 0 || k > n)
    throw std::invalid_argument("top_k k=" + std::to_string(k) + " outside [0, " +
                                std::to_string(n) + "]");
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  auto cmp = [&](int a, int b) {
    if (values.data[a] != values.data[b]) return values.data[a] > values.data[b];
    return a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), cmp);
  idx.resize(static_cast<size_t>(k));
  return idx;
}

Tensor init_uniform(Rng& rng, std::vector<int> dims, int fan_in) {
  if (fan_in <= 0)
    throw std::invalid_argument("init_uniform fan_in must be positive");
  Tensor t(std::move(dims));
  const double a = std::sqrt(1.0 / static_cast<double>(fan_in));
  const float af = static_cast<float>(a);
  for (auto& v : t.data) {
    const double u = rng.next_unit();
    float f = static_cast<float>(a * (2.0 * u - 1.0));
    if (f >= af) f = std::nextafterf(af, 0.0f);
    if (f <= -af) f = std::nextafterf(-af, 0.0f);
    v = f;
  }
  return t;
}

namespace {

void put_u32_le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("truncated tensor header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

constexpr int kMaxRank = 8;

}  // namespace

void write_crnt(std::ostream& os, const Tensor& t) {
  os.write("CRNT", 4);
  put_u32_le(os, static_cast<std::uint32_t>(t.rank()));
  for (int d : t.dims) put_u32_le(os, static_cast<std::uint32_t>(d));
  static_assert(sizeof(float) == 4);
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * 4));
  } else {
    for (float f : t.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32_le(os, bits);
    }
  }
  if (!os) throw IoError("tensor write failed");
}

Tensor read_crnt(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CRNT", 4) != 0)
    throw IoError("bad tensor magic");
  const std::uint32_t rank = get_u32_le(is);
  if (rank == 0 || rank > kMaxRank)
    throw IoError("tensor rank " + std::to_string(rank) + " outside [1, " +
                  std::to_string(kMaxRank) + "]");
  std::vector<int> dims(rank);
  std::int64_t n = 1;
  for (auto& d : dims) {
    const std::uint32_t v = get_u32_le(is);
    if (v == 0 || v > (1u << 30)) throw IoError("bad tensor extent");
    d = static_cast<int>(v);
    n *= d;
  }
  Tensor t(dims);
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(n * 4));
    if (is.gcount() != static_cast<std::streamsize>(n * 4))
      throw IoError("truncated tensor payload");
  } else {
    for (auto& f : t.data) {
      const std::uint32_t bits = get_u32_le(is);
      std::memcpy(&f, &bits, 4);
    }
  }
  return t;
}

void save_crnt(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  write_crnt(os, t);
  os.flush();
  if (!os) throw IoError("write failed: " + path);
}

Tensor load_crnt(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  return read_crnt(is);
}

}  // namespace crn

#pragma once

// Dense row-major f32 tensors plus the small op set used by the BEV fusion
// pipeline. Ops are scalar CPU implementations with deterministic loop
// order; conv accumulates in f64 so results do not depend on how the build
// vectorizes the inner loop.

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace crn {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Row-major, last dimension fastest. dims must all be positive.
struct Tensor {
  std::vector<int> dims;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor from(std::vector<int> shape, std::vector<float> values);

  int rank() const { return static_cast<int>(dims.size()); }
  std::int64_t numel() const;

  float& at(int i);
  float& at(int i, int j);
  float& at(int i, int j, int k);
  float& at(int i, int j, int k, int l);
  float at(int i) const;
  float at(int i, int j) const;
  float at(int i, int j, int k) const;
  float at(int i, int j, int k, int l) const;

  bool same_shape(const Tensor& other) const { return dims == other.dims; }
};

// splitmix64. Full 2^64 state walk, no rejection; next_unit() maps the top
// 53 bits to [0, 1). Seed 0 yields 0xE220A8397B1DCDAF first.
struct Rng {
  std::uint64_t state = 0;

  explicit Rng(std::uint64_t seed) : state(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
};

// 3x3 convolution, stride 1, zero padding 1 (cross-correlation).
// input [C_in, H, W], kernel [C_out, C_in, 3, 3], bias [C_out] -> [C_out, H, W].
// Accumulates per output in f64, summed over (c_in, ky, kx) in that order.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias);

// Affine map over the last axis. input [..., C_in], weight [C_out, C_in],
// bias [C_out] -> [..., C_out]. f64 accumulation.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// Softmax along `axis` with max subtraction; every lane sums to 1.
Tensor softmax(const Tensor& input, int axis);

// Elementwise logistic, computed in the numerically stable branch form.
// Outputs lie in (0, 1) up to f32 underflow at |x| beyond ~100.
Tensor sigmoid(const Tensor& input);

// Elementwise max(x, 0).
Tensor relu(const Tensor& input);

// Normalizes over the last axis (biased variance), then applies gain/shift.
// input [..., C], gain [C], shift [C].
Tensor layer_norm(const Tensor& input, const Tensor& gain, const Tensor& shift,
                  float eps = 1e-5f);

// Samples map [C, H, W] at continuous (x, y); x indexes W, y indexes H.
// A sample point outside the closed rectangle [0, W-1] x [0, H-1] returns a
// zero vector; inside, bilinear interpolation of the four neighbors.
// Exact at integer coordinates. Returns Tensor [C].
Tensor bilinear_sample(const Tensor& map, double x, double y);

// Indices of the k largest entries of a rank-1 tensor, ordered by value
// descending; ties broken toward the lower index. k in [0, N].
std::vector<int> top_k(const Tensor& values, int k);

// Fills a tensor with i.i.d. uniform draws strictly inside (-a, a),
// a = sqrt(1 / fan_in). Consumes exactly one next_u64() per element in flat
// row-major order; computed in f64, cast to f32, and any cast landing
// exactly on +/-(float)a is nudged one ULP toward zero.
Tensor init_uniform(Rng& rng, std::vector<int> dims, int fan_in);

// Binary tensor container: magic "CRNT", then u32 LE rank, rank u32 LE dims,
// then numel f32 LE values row-major.
void write_crnt(std::ostream& os, const Tensor& t);
Tensor read_crnt(std::istream& is);
void save_crnt(const std::string& path, const Tensor& t);
Tensor load_crnt(const std::string& path);

}  // namespace crn

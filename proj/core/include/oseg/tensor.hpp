#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace oseg {

[[noreturn]] inline void fail(const std::string& msg) { throw std::invalid_argument(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

/// Dense row-major tensor of 64-bit reals.
class Tensor {
 public:
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(count(shape)), fill);
  }
  Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    require(static_cast<int64_t>(data.size()) == count(shape), "tensor: data length does not match shape");
  }

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int e : s) {
      require(e > 0, "tensor: extents must be positive");
      n *= e;
    }
    return n;
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool scalar() const { return data.size() == 1; }

  double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  double& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
  double at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
  double& at(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  double at(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  double& at(int i, int j, int k, int l) {
    return data[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  double at(int i, int j, int k, int l) const {
    return data[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  void fill(double v) { data.assign(data.size(), v); }
  bool all_finite() const;
  std::string shape_str() const;
};

bool shapes_equal(const Tensor& a, const Tensor& b);

/// Binary dump: u32 rank, i32 extents, raw little-endian doubles. Round-trips bit-exactly.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

}  // namespace oseg

#include "oseg/tensor.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

namespace oseg {

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool shapes_equal(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

void write_tensor(std::ostream& os, const Tensor& t) {
  uint32_t rank = static_cast<uint32_t>(t.shape.size());
  os.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
  for (int e : t.shape) {
    int32_t v = e;
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

Tensor read_tensor(std::istream& is) {
  uint32_t rank = 0;
  is.read(reinterpret_cast<char*>(&rank), sizeof(rank));
  require(is.good() && rank <= 8, "tensor read: bad rank");
  std::vector<int> shape(rank);
  for (uint32_t i = 0; i < rank; ++i) {
    int32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    require(is.good() && v > 0, "tensor read: bad extent");
    shape[i] = v;
  }
  Tensor t(shape);
  is.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  require(is.good(), "tensor read: truncated data");
  return t;
}

}  // namespace oseg

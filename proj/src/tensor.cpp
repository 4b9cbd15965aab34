#include "msan/tensor.hpp"

#include <cmath>
#include <sstream>

namespace msan {

std::size_t Tensor::numel_of(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::size_t r = rows.size();
  if (r == 0) throw DimensionError("matrix needs at least one row");
  std::size_t c = rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("matrix rows differ in length");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::rows() const {
  if (!is_matrix()) throw DimensionError("rows() on non-matrix " + shape_str());
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (!is_matrix()) throw DimensionError("cols() on non-matrix " + shape_str());
  return shape_[1];
}

bool Tensor::all_finite() const {
  for (double d : data_) {
    if (!std::isfinite(d)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << 'x';
    os << shape_[i];
  }
  os << ']';
  return os.str();
}

void quantize_to_f32(Tensor& t) {
  double* p = t.data();
  for (std::size_t i = 0; i < t.size(); ++i) {
    p[i] = static_cast<double>(static_cast<float>(p[i]));
  }
}

namespace tensor_ops {

Tensor matvec(const Tensor& m, const Tensor& x) {
  if (!m.is_matrix() || !x.is_vector() || m.cols() != x.size()) {
    throw DimensionError("matvec shape mismatch " + m.shape_str() + " * " + x.shape_str());
  }
  Tensor y({m.rows()});
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double acc = 0.0;
    const double* row = m.data() + i * m.cols();
    for (std::size_t j = 0; j < m.cols(); ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
  return y;
}

Tensor affine(const Tensor& m, const Tensor& x, const Tensor& b) {
  Tensor y = matvec(m, x);
  if (!b.is_vector() || b.size() != y.size()) {
    throw DimensionError("affine bias shape mismatch " + b.shape_str());
  }
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (!a.is_matrix() || !b.is_matrix() || a.cols() != b.rows()) {
    throw DimensionError("matmul shape mismatch " + a.shape_str() + " * " + b.shape_str());
  }
  Tensor y({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      double aik = a.at(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) y.at(i, j) += aik * b.at(k, j);
    }
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("add shape mismatch " + a.shape_str() + " + " + b.shape_str());
  }
  Tensor y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
  return y;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("hadamard shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
  Tensor y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b[i];
  return y;
}

Tensor scale(const Tensor& a, double s) {
  Tensor y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= s;
  return y;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& x) {
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = stable_sigmoid(y[i]);
  return y;
}

Tensor tanh(const Tensor& x) {
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(y[i]);
  return y;
}

Tensor softmax(const Tensor& x) {
  if (!x.is_vector() || x.size() == 0) {
    throw DimensionError("softmax expects a non-empty vector");
  }
  Tensor y = x;
  double mx = y[0];
  for (std::size_t i = 1; i < y.size(); ++i) mx = std::max(mx, y[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = std::exp(y[i] - mx);
    z += y[i];
  }
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= z;
  return y;
}

double dot(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("dot shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double sum(const Tensor& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i];
  return acc;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("max_abs_diff shape mismatch");
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace tensor_ops

}  // namespace msan

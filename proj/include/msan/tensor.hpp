#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "msan/errors.hpp"

namespace msan {

// Dense row-major tensor of real values. Values are stored as 64-bit
// doubles; the 32-bit training mode is realized by quantizing every
// operation result through float (see Tape::precision).
//
// Rank 0 (empty shape) denotes a scalar and holds exactly one value.
class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(numel_of(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel_of(shape_)) {
      throw DimensionError("tensor data length does not match shape");
    }
  }

  static Tensor scalar(double v) {
    Tensor t;
    t.data_[0] = v;
    return t;
  }
  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (double& d : t.data_) d = v;
    return t;
  }
  static Tensor vector(std::vector<double> data) {
    std::size_t n = data.size();
    return Tensor({n}, std::move(data));
  }
  // Row-major matrix from nested initializer lists; rows must agree in length.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  bool is_scalar() const { return shape_.empty(); }
  bool is_vector() const { return shape_.size() == 1; }
  bool is_matrix() const { return shape_.size() == 2; }

  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;

  std::string shape_str() const;

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  static std::size_t numel_of(const std::vector<std::size_t>& shape);

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Rounds every entry through IEEE single precision in place.
void quantize_to_f32(Tensor& t);

// Plain (non-differentiable) tensor math used by oracles and inference
// helpers. Shape mismatches throw DimensionError.
namespace tensor_ops {

double stable_sigmoid(double x);
Tensor matvec(const Tensor& m, const Tensor& x);
Tensor affine(const Tensor& m, const Tensor& x, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
// Max-subtracted softmax over a vector.
Tensor softmax(const Tensor& x);
double dot(const Tensor& a, const Tensor& b);
double sum(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace tensor_ops

}  // namespace msan

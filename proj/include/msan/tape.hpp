#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "msan/rng.hpp"
#include "msan/tensor.hpp"

namespace msan {

enum class Precision { F64, F32 };

// Handle to a node on a Tape. Only valid for the tape that produced it.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Named parameter registry. Iteration order is insertion order, which is
// what makes initialization and optimizer sweeps deterministic.
class ParamStore {
 public:
  Tensor& create(const std::string& name, Tensor init);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }
  std::size_t total_entries() const;

 private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor> index_;
};

using GradientMap = std::map<std::string, Tensor>;

// Reverse-mode tape. Every operation records its value and (when gradients
// are enabled and some input needs them) an adjoint closure. backward()
// replays the closures in reverse. Operation results are checked finite and,
// in F32 mode, quantized through single precision, so a tape in a given
// mode is a pure deterministic function of its inputs.
class Tape {
 public:
  explicit Tape(Precision precision = Precision::F64, bool grad_enabled = true)
      : precision_(precision), grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var scalar(double v) { return leaf(Tensor::scalar(v), false); }
  // Leases a registered parameter onto the tape; repeated calls for the
  // same name return the same node.
  Var param(const ParamStore& store, const std::string& name);

  const Tensor& value(Var v) const;
  double scalar_value(Var v) const;

  // --- elementwise / linear algebra ---
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var hadamard(Var a, Var b);
  Var scale(Var a, double s);
  Var matvec(Var m, Var x);
  Var affine(Var m, Var x, Var b);
  Var sigmoid(Var x);
  Var tanh(Var x);
  Var softmax(Var x);
  Var concat(const std::vector<Var>& parts);
  Var pick(Var x, std::size_t index);
  Var scale_by(Var scalar, Var x);
  Var sum(Var x);
  Var dot(Var a, Var b);
  Var sum_squares(Var x);
  Var embedding_row(Var table, std::size_t row);

  // --- fused losses ---
  // -(logits[target] - logsumexp(logits)); adjoint softmax(logits)-onehot.
  Var cross_entropy_logits(Var logits, std::size_t target);
  // -sum_k [y log s + (1-y) log(1-s)] with s clamped to [1e-12, 1-1e-12].
  Var bce_sum(Var probs, Tensor targets);

  // Inverted dropout; identity when rate == 0. Draws one mask from rng.
  Var dropout(Var x, double rate, SplitMix64& rng);

  void backward(Var loss);
  // Gradient of a node after backward(); zeros if the node was not reached.
  Tensor grad(Var v) const;
  // name -> gradient for every parameter in the store (zeros when unused).
  GradientMap gradients(const ParamStore& store) const;

  Precision precision() const { return precision_; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    bool needs_grad = false;
    std::function<void(Tape&)> backward;
  };

  Var push(Tensor value, bool needs_grad, std::function<void(Tape&)> backward,
           const char* op_name);
  Var record(Tensor value, bool needs_grad, const char* op_name,
             const std::function<std::function<void(Tape&)>(Var)>& make_backward);
  void accumulate(std::int32_t id, const Tensor& g);
  const Tensor& grad_ref(std::int32_t id) const;
  bool needs(Var v) const { return grad_enabled_ && nodes_[v.id].needs_grad; }
  void check_var(Var v, const char* op_name) const;

  Precision precision_;
  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<bool> grad_set_;
  std::map<std::string, std::int32_t> param_nodes_;
  bool ran_backward_ = false;
};

// Maximum relative error between analytic and central-difference gradients,
// |a - n| / max(1e-8, |a| + |n|), over every coordinate of every parameter.
struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

GradCheckResult grad_check(ParamStore& params,
                           const std::function<Var(Tape&, const ParamStore&)>& build_loss,
                           double eps);

}  // namespace msan

#include "msan/tape.hpp"

#include <algorithm>
#include <cmath>

namespace msan {

Tensor& ParamStore::create(const std::string& name, Tensor init) {
  if (contains(name)) throw UsageError("parameter already registered: " + name);
  order_.push_back(name);
  return index_.emplace(name, std::move(init)).first->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter: " + name);
  return it->second;
}

std::size_t ParamStore::total_entries() const {
  std::size_t n = 0;
  for (const auto& [name, t] : index_) n += t.size();
  return n;
}

Var Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&)> backward,
               const char* op_name) {
  if (precision_ == Precision::F32) quantize_to_f32(value);
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op_name);
  }
  Node n;
  n.value = std::move(value);
  n.needs_grad = grad_enabled_ && needs_grad;
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

// Pushes the node first so the adjoint closure can capture its own id.
Var Tape::record(Tensor value, bool needs_grad, const char* op_name,
                 const std::function<std::function<void(Tape&)>(Var)>& make_backward) {
  Var v = push(std::move(value), needs_grad, {}, op_name);
  if (nodes_[v.id].needs_grad && make_backward) {
    nodes_[v.id].backward = make_backward(v);
  }
  return v;
}

void Tape::check_var(Var v, const char* op_name) const {
  if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw UsageError(std::string("invalid Var passed to ") + op_name);
  }
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad, {}, "leaf");
}

Var Tape::param(const ParamStore& store, const std::string& name) {
  auto it = param_nodes_.find(name);
  if (it != param_nodes_.end()) return Var{it->second};
  Var v = leaf(store.at(name), true);
  param_nodes_.emplace(name, v.id);
  return v;
}

const Tensor& Tape::value(Var v) const {
  check_var(v, "value");
  return nodes_[v.id].value;
}

double Tape::scalar_value(Var v) const {
  const Tensor& t = value(v);
  if (t.size() != 1) throw UsageError("scalar_value on non-scalar node");
  return t[0];
}

void Tape::accumulate(std::int32_t id, const Tensor& g) {
  if (!nodes_[id].needs_grad) return;
  if (!grad_set_[id]) {
    grads_[id] = g;
    grad_set_[id] = true;
    return;
  }
  Tensor& acc = grads_[id];
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

const Tensor& Tape::grad_ref(std::int32_t id) const { return grads_[id]; }

Var Tape::add(Var a, Var b) {
  check_var(a, "add");
  check_var(b, "add");
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb)) {
    throw DimensionError("add shape mismatch " + ta.shape_str() + " + " + tb.shape_str());
  }
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += tb[i];
  return record(std::move(out), needs(a) || needs(b), "add", [a, b](Var self) {
    return [self, a, b](Tape& t) {
      const Tensor& g = t.grad_ref(self.id);
      t.accumulate(a.id, g);
      t.accumulate(b.id, g);
    };
  });
}

Var Tape::sub(Var a, Var b) {
  check_var(a, "sub");
  check_var(b, "sub");
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb)) {
    throw DimensionError("sub shape mismatch " + ta.shape_str() + " - " + tb.shape_str());
  }
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= tb[i];
  return record(std::move(out), needs(a) || needs(b), "sub", [a, b](Var self) {
    return [self, a, b](Tape& t) {
      const Tensor& g = t.grad_ref(self.id);
      t.accumulate(a.id, g);
      Tensor neg = g;
      for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
      t.accumulate(b.id, neg);
    };
  });
}

Var Tape::hadamard(Var a, Var b) {
  check_var(a, "hadamard");
  check_var(b, "hadamard");
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb)) {
    throw DimensionError("hadamard shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  }
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= tb[i];
  return record(std::move(out), needs(a) || needs(b), "hadamard", [a, b](Var self) {
    return [self, a, b](Tape& t) {
      const Tensor& g = t.grad_ref(self.id);
      const Tensor& ta = t.value(a);
      const Tensor& tb = t.value(b);
      Tensor ga = g;
      Tensor gb = g;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] *= tb[i];
        gb[i] *= ta[i];
      }
      t.accumulate(a.id, ga);
      t.accumulate(b.id, gb);
    };
  });
}

Var Tape::scale(Var a, double s) {
  check_var(a, "scale");
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
  return record(std::move(out), needs(a), "scale", [a, s](Var self) {
    return [self, a, s](Tape& t) {
      Tensor g = t.grad_ref(self.id);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= s;
      t.accumulate(a.id, g);
    };
  });
}

Var Tape::matvec(Var m, Var x) {
  check_var(m, "matvec");
  check_var(x, "matvec");
  Tensor out = tensor_ops::matvec(value(m), value(x));
  return record(std::move(out), needs(m) || needs(x), "matvec", [m, x](Var self) {
    return [self, m, x](Tape& t) {
      const Tensor& g = t.grad_ref(self.id);
      const Tensor& tm = t.value(m);
      const Tensor& tx = t.value(x);
      std::size_t r = tm.rows(), c = tm.cols();
      if (t.nodes_[m.id].needs_grad) {
        Tensor gm({r, c});
        for (std::size_t i = 0; i < r; ++i) {
          double gi = g[i];
          if (gi == 0.0) continue;
          double* row = gm.data() + i * c;
          for (std::size_t j = 0; j < c; ++j) row[j] = gi * tx[j];
        }
        t.accumulate(m.id, gm);
      }
      if (t.nodes_[x.id].needs_grad) {
        Tensor gx({c});
        for (std::size_t i = 0; i < r; ++i) {
          double gi = g[i];
          if (gi == 0.0) continue;
          const double* row = tm.data() + i * c;
          for (std::size_t j = 0; j < c; ++j) gx[j] += gi * row[j];
        }
        t.accumulate(x.id, gx);
      }
    };
  });
}

Var Tape::affine(Var m, Var x, Var b) { return add(matvec(m, x), b); }

Var Tape::sigmoid(Var x) {
  check_var(x, "sigmoid");
  Tensor out = tensor_ops::sigmoid(value(x));
  return record(std::move(out), needs(x), "sigmoid", [x](Var self) {
    return [self, x](Tape& t) {
      const Tensor& g = t.grad_ref(self.id);
      const Tensor& y = t.value(self);
      Tensor gx = g;
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= y[i] * (1.0 - y[i]);
      t.accumulate(x.id, gx);
    };
  });
}

Var Tape::tanh(Var x) {
  check_var(x, "tanh");
  Tensor out = tensor_ops::tanh(value(x));
  return record(std::move(out), needs(x), "tanh", [x](Var self) {
    return [self, x](Tape& t) {
      const Tensor& g = t.grad_ref(self.id);
      const Tensor& y = t.value(self);
      Tensor gx = g;
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= 1.0 - y[i] * y[i];
      t.accumulate(x.id, gx);
    };
  });
}

Var Tape::softmax(Var x) {
  check_var(x, "softmax");
  Tensor out = tensor_ops::softmax(value(x));
  return record(std::move(out), needs(x), "softmax", [x](Var self) {
    return [self, x](Tape& t) {
      const Tensor& g = t.grad_ref(self.id);
      const Tensor& y = t.value(self);
      double gy = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) gy += g[i] * y[i];
      Tensor gx = g;
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = y[i] * (g[i] - gy);
      t.accumulate(x.id, gx);
    };
  });
}

Var Tape::concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw UsageError("concat of zero parts");
  std::vector<double> data;
  std::vector<std::size_t> offsets;
  bool ng = false;
  for (Var p : parts) {
    check_var(p, "concat");
    const Tensor& tp = value(p);
    if (tp.rank() > 1) throw DimensionError("concat expects scalars or vectors");
    offsets.push_back(data.size());
    data.insert(data.end(), tp.data(), tp.data() + tp.size());
    ng = ng || needs(p);
  }
  Tensor out = Tensor::vector(std::move(data));
  auto parts_copy = parts;
  return record(std::move(out), ng, "concat",
                [parts_copy, offsets](Var self) {
    return [self, parts_copy, offsets](Tape& t) {
      const Tensor& g = t.grad_ref(self.id);
      for (std::size_t k = 0; k < parts_copy.size(); ++k) {
        const Tensor& tp = t.value(parts_copy[k]);
        Tensor gk = tp;
        for (std::size_t i = 0; i < tp.size(); ++i) gk[i] = g[offsets[k] + i];
        t.accumulate(parts_copy[k].id, gk);
      }
    };
  });
}

Var Tape::pick(Var x, std::size_t index) {
  check_var(x, "pick");
  const Tensor& tx = value(x);
  if (index >= tx.size()) throw DimensionError("pick index out of range");
  return record(Tensor::scalar(tx[index]), needs(x), "pick", [x, index](Var self) {
    return [self, x, index](Tape& t) {
      const Tensor& g = t.grad_ref(self.id);
      Tensor gx = t.value(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = 0.0;
      gx[index] = g[0];
      t.accumulate(x.id, gx);
    };
  });
}

Var Tape::scale_by(Var scalar, Var x) {
  check_var(scalar, "scale_by");
  check_var(x, "scale_by");
  const Tensor& ts = value(scalar);
  if (ts.size() != 1) throw DimensionError("scale_by expects a scalar multiplier");
  Tensor out = value(x);
  double s = ts[0];
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
  return record(std::move(out), needs(scalar) || needs(x), "scale_by",
                [scalar, x](Var self) {
    return [self, scalar, x](Tape& t) {
      const Tensor& g = t.grad_ref(self.id);
      const Tensor& tx = t.value(x);
      double s = t.value(scalar)[0];
      if (t.nodes_[scalar.id].needs_grad) {
        double gs = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) gs += g[i] * tx[i];
        t.accumulate(scalar.id, Tensor::scalar(gs));
      }
      if (t.nodes_[x.id].needs_grad) {
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= s;
        t.accumulate(x.id, gx);
      }
    };
  });
}

Var Tape::sum(Var x) {
  check_var(x, "sum");
  return record(Tensor::scalar(tensor_ops::sum(value(x))), needs(x), "sum",
                [x](Var self) {
    return [self, x](Tape& t) {
      double g = t.grad_ref(self.id)[0];
      Tensor gx = t.value(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g;
      t.accumulate(x.id, gx);
    };
  });
}

Var Tape::dot(Var a, Var b) {
  check_var(a, "dot");
  check_var(b, "dot");
  return record(Tensor::scalar(tensor_ops::dot(value(a), value(b))),
                needs(a) || needs(b), "dot", [a, b](Var self) {
    return [self, a, b](Tape& t) {
      double g = t.grad_ref(self.id)[0];
      const Tensor& ta = t.value(a);
      const Tensor& tb = t.value(b);
      if (t.nodes_[a.id].needs_grad) {
        Tensor ga = tb;
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= g;
        t.accumulate(a.id, ga);
      }
      if (t.nodes_[b.id].needs_grad) {
        Tensor gb = ta;
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= g;
        t.accumulate(b.id, gb);
      }
    };
  });
}

Var Tape::sum_squares(Var x) {
  check_var(x, "sum_squares");
  const Tensor& tx = value(x);
  double acc = 0.0;
  for (std::size_t i = 0; i < tx.size(); ++i) acc += tx[i] * tx[i];
  return record(Tensor::scalar(acc), needs(x), "sum_squares", [x](Var self) {
    return [self, x](Tape& t) {
      double g = t.grad_ref(self.id)[0];
      Tensor gx = t.value(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= 2.0 * g;
      t.accumulate(x.id, gx);
    };
  });
}

Var Tape::embedding_row(Var table, std::size_t row) {
  check_var(table, "embedding_row");
  const Tensor& e = value(table);
  if (!e.is_matrix() || row >= e.rows()) {
    throw DimensionError("embedding_row: bad table shape or row index");
  }
  std::size_t c = e.cols();
  Tensor out({c});
  for (std::size_t j = 0; j < c; ++j) out[j] = e.at(row, j);
  return record(std::move(out), needs(table), "embedding_row", [table, row](Var self) {
    return [self, table, row](Tape& t) {
      const Tensor& g = t.grad_ref(self.id);
      const Tensor& e = t.value(table);
      Tensor ge({e.rows(), e.cols()});
      for (std::size_t j = 0; j < e.cols(); ++j) ge.at(row, j) = g[j];
      t.accumulate(table.id, ge);
    };
  });
}

Var Tape::cross_entropy_logits(Var logits, std::size_t target) {
  check_var(logits, "cross_entropy_logits");
  const Tensor& z = value(logits);
  if (!z.is_vector() || target >= z.size()) {
    throw DimensionError("cross_entropy_logits: bad logits shape or target");
  }
  double mx = z[0];
  for (std::size_t i = 1; i < z.size(); ++i) mx = std::max(mx, z[i]);
  double lse = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) lse += std::exp(z[i] - mx);
  lse = mx + std::log(lse);
  return record(Tensor::scalar(lse - z[target]), needs(logits), "cross_entropy_logits",
                [logits, target](Var self) {
    return [self, logits, target](Tape& t) {
      double g = t.grad_ref(self.id)[0];
      Tensor p = tensor_ops::softmax(t.value(logits));
      p[target] -= 1.0;
      for (std::size_t i = 0; i < p.size(); ++i) p[i] *= g;
      t.accumulate(logits.id, p);
    };
  });
}

namespace {
constexpr double kBceClamp = 1e-12;
}

Var Tape::bce_sum(Var probs, Tensor targets) {
  check_var(probs, "bce_sum");
  const Tensor& s = value(probs);
  if (!s.same_shape(targets)) {
    throw DimensionError("bce_sum shape mismatch " + s.shape_str() + " vs " +
                         targets.shape_str());
  }
  // The clamp sits inside each log so that s == y gives exactly zero.
  double acc = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    acc -= targets[i] * std::log(std::max(kBceClamp, s[i])) +
           (1.0 - targets[i]) * std::log(std::max(kBceClamp, 1.0 - s[i]));
  }
  return record(Tensor::scalar(acc), needs(probs), "bce_sum",
                [probs, targets = std::move(targets)](Var self) {
    return [self, probs, targets](Tape& t) {
      double g = t.grad_ref(self.id)[0];
      const Tensor& s = t.value(probs);
      Tensor gs = s;
      for (std::size_t i = 0; i < s.size(); ++i) {
        double d = 0.0;
        if (s[i] > kBceClamp) d -= targets[i] / s[i];
        if (1.0 - s[i] > kBceClamp) d += (1.0 - targets[i]) / (1.0 - s[i]);
        gs[i] = g * d;
      }
      t.accumulate(probs.id, gs);
    };
  });
}

Var Tape::dropout(Var x, double rate, SplitMix64& rng) {
  check_var(x, "dropout");
  if (rate < 0.0 || rate >= 1.0) throw UsageError("dropout rate must be in [0, 1)");
  if (rate == 0.0) return x;
  const Tensor& tx = value(x);
  Tensor mask = tx;
  double keep = 1.0 - rate;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.next_unit() < rate ? 0.0 : 1.0 / keep;
  }
  Tensor out = tx;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return record(std::move(out), needs(x), "dropout",
                [x, mask = std::move(mask)](Var self) {
    return [self, x, mask](Tape& t) {
      const Tensor& g = t.grad_ref(self.id);
      Tensor gx = g;
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= mask[i];
      t.accumulate(x.id, gx);
    };
  });
}

void Tape::backward(Var loss) {
  check_var(loss, "backward");
  if (!grad_enabled_) throw UsageError("backward on a gradient-disabled tape");
  if (value(loss).size() != 1) throw UsageError("backward requires a scalar loss");
  if (ran_backward_) throw UsageError("backward already ran on this tape");
  ran_backward_ = true;
  grads_.assign(nodes_.size(), Tensor());
  grad_set_.assign(nodes_.size(), false);
  if (!nodes_[loss.id].needs_grad) return;  // loss detached from every parameter
  Tensor seed = value(loss);
  seed[0] = 1.0;
  grads_[loss.id] = std::move(seed);
  grad_set_[loss.id] = true;
  for (std::int32_t id = loss.id; id >= 0; --id) {
    if (!grad_set_[id] || !nodes_[id].backward) continue;
    nodes_[id].backward(*this);
  }
}

Tensor Tape::grad(Var v) const {
  check_var(v, "grad");
  if (!ran_backward_) throw UsageError("grad before backward");
  if (grad_set_[v.id]) return grads_[v.id];
  Tensor zero = nodes_[v.id].value;
  for (std::size_t i = 0; i < zero.size(); ++i) zero[i] = 0.0;
  return zero;
}

GradientMap Tape::gradients(const ParamStore& store) const {
  if (!ran_backward_) throw UsageError("gradients before backward");
  GradientMap out;
  for (const std::string& name : store.names()) {
    auto it = param_nodes_.find(name);
    if (it != param_nodes_.end() && grad_set_[it->second]) {
      out.emplace(name, grads_[it->second]);
    } else {
      Tensor zero = store.at(name);
      for (std::size_t i = 0; i < zero.size(); ++i) zero[i] = 0.0;
      out.emplace(name, std::move(zero));
    }
  }
  return out;
}

GradCheckResult grad_check(ParamStore& params,
                           const std::function<Var(Tape&, const ParamStore&)>& build_loss,
                           double eps) {
  if (eps <= 0.0) throw UsageError("grad_check eps must be positive");
  Tape tape(Precision::F64, true);
  Var loss = build_loss(tape, params);
  tape.backward(loss);
  GradientMap analytic = tape.gradients(params);

  auto eval = [&](void) -> double {
    Tape t(Precision::F64, false);
    Var l = build_loss(t, params);
    return t.scalar_value(l);
  };

  GradCheckResult result;
  for (const std::string& name : params.names()) {
    Tensor& p = params.at(name);
    const Tensor& a = analytic.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      double saved = p[i];
      p[i] = saved + eps;
      double fp = eval();
      p[i] = saved - eps;
      double fm = eval();
      p[i] = saved;
      double numeric = (fp - fm) / (2.0 * eps);
      double denom = std::max(1e-8, std::abs(a[i]) + std::abs(numeric));
      double rel = std::abs(a[i] - numeric) / denom;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace msan

#include <cmath>
#include <cstring>

#include "doctest.h"
#include "msan/rng.hpp"
#include "msan/tape.hpp"
#include "msan/tensor.hpp"

using namespace msan;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, SplitMix64& rng, double range = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_uniform(-range, range);
  return t;
}

}  // namespace

TEST_CASE("affine matches hand arithmetic") {
  Tape t;
  Var eye = t.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  Var x = t.constant(Tensor::vector({3, 4}));
  Var zero_b = t.constant(Tensor::vector({0, 0}));
  Tensor y = t.value(t.affine(eye, x, zero_b));
  CHECK(y[0] == 3.0);
  CHECK(y[1] == 4.0);

  Var m = t.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  Var ones = t.constant(Tensor::vector({1, 1}));
  Var b = t.constant(Tensor::vector({1, 0}));
  Tensor y2 = t.value(t.affine(m, ones, b));
  CHECK(y2[0] == 4.0);
  CHECK(y2[1] == 7.0);

  Var zero_m = t.constant(Tensor::zeros({2, 2}));
  Var b2 = t.constant(Tensor::vector({5, 6}));
  Tensor y3 = t.value(t.affine(zero_m, x, b2));
  CHECK(y3[0] == 5.0);
  CHECK(y3[1] == 6.0);
}

TEST_CASE("affine rejects mismatched shapes") {
  Tape t;
  Var m = t.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  Var x = t.constant(Tensor::vector({1, 2, 3}));
  Var b = t.constant(Tensor::vector({0, 0}));
  CHECK_THROWS_AS(t.affine(m, x, b), DimensionError);
}

TEST_CASE("sigmoid, tanh, softmax reference points") {
  Tape t;
  CHECK(t.value(t.sigmoid(t.constant(Tensor::scalar(0.0))))[0] == 0.5);
  CHECK(t.value(t.tanh(t.constant(Tensor::scalar(0.0))))[0] == 0.0);
  Tensor s = t.value(t.softmax(t.constant(Tensor::vector({7.5, 7.5, 7.5}))));
  for (std::size_t i = 0; i < 3; ++i) CHECK(s[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax stays on the simplex for extreme inputs") {
  SplitMix64 rng(7);
  for (int it = 0; it < 200; ++it) {
    std::size_t n = 1 + rng.next_below(6);
    Tensor x = random_tensor({n}, rng, 1e4);
    Tape t;
    Tensor y = t.value(t.softmax(t.constant(x)));
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(y[i] >= 0.0);
      total += y[i];
    }
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("gradient of linear and quadratic losses") {
  {
    ParamStore params;
    params.create("p", Tensor::vector({1, 2, 3}));
    Tape t;
    Var loss = t.sum(t.param(params, "p"));
    t.backward(loss);
    Tensor g = t.gradients(params).at("p");
    for (std::size_t i = 0; i < 3; ++i) CHECK(g[i] == 1.0);
  }
  {
    ParamStore params;
    params.create("p", Tensor::vector({2, 3}));
    Tape t;
    Var p = t.param(params, "p");
    Var loss = t.dot(p, p);
    t.backward(loss);
    Tensor g = t.gradients(params).at("p");
    CHECK(g[0] == 4.0);
    CHECK(g[1] == 6.0);
  }
}

TEST_CASE("unused registered parameters get zero gradients") {
  ParamStore params;
  params.create("used", Tensor::vector({1, 2}));
  params.create("unused", Tensor::matrix({{1, 2}, {3, 4}}));
  Tape t;
  Var loss = t.sum(t.param(params, "used"));
  t.backward(loss);
  GradientMap g = t.gradients(params);
  CHECK(g.at("unused").same_shape(params.at("unused")));
  for (std::size_t i = 0; i < 4; ++i) CHECK(g.at("unused")[i] == 0.0);
}

TEST_CASE("grad_check is near-exact on a quadratic") {
  ParamStore params;
  params.create("p", Tensor::vector({0.3, -1.2, 2.0}));
  auto build = [](Tape& t, const ParamStore& ps) {
    Var p = t.param(ps, "p");
    return t.dot(p, p);
  };
  GradCheckResult r = grad_check(params, build, 1e-4);
  CHECK(r.max_rel_error < 1e-9);
}

// Every differentiable op, checked against central differences on small
// randomized shapes.
TEST_CASE("per-op gradients match central differences") {
  SplitMix64 rng(1234);
  auto check = [&](const std::function<Var(Tape&, const ParamStore&)>& build,
                   ParamStore& params) {
    GradCheckResult r = grad_check(params, build, 1e-4);
    CAPTURE(r.worst_param);
    CHECK(r.max_rel_error < 1e-4);
  };

  for (int rep = 0; rep < 5; ++rep) {
    std::size_t r = 2 + rng.next_below(3);
    std::size_t c = 2 + rng.next_below(3);
    {
      ParamStore ps;
      ps.create("M", random_tensor({r, c}, rng));
      ps.create("x", random_tensor({c}, rng));
      ps.create("b", random_tensor({r}, rng));
      check([](Tape& t, const ParamStore& p) {
        Var y = t.affine(t.param(p, "M"), t.param(p, "x"), t.param(p, "b"));
        return t.sum(t.sigmoid(y));
      }, ps);
    }
    {
      ParamStore ps;
      ps.create("a", random_tensor({c}, rng));
      ps.create("b", random_tensor({c}, rng));
      check([](Tape& t, const ParamStore& p) {
        Var h = t.hadamard(t.tanh(t.param(p, "a")), t.param(p, "b"));
        return t.sum_squares(h);
      }, ps);
    }
    {
      ParamStore ps;
      ps.create("x", random_tensor({c}, rng));
      check([](Tape& t, const ParamStore& p) {
        Var s = t.softmax(t.param(p, "x"));
        return t.pick(s, 0);
      }, ps);
    }
    {
      ParamStore ps;
      ps.create("x", random_tensor({4}, rng));
      ps.create("y", random_tensor({3}, rng));
      check([](Tape& t, const ParamStore& p) {
        Var cat = t.concat({t.param(p, "x"), t.param(p, "y")});
        Var sc = t.pick(cat, 5);
        return t.scale_by(sc, t.sum(cat));
      }, ps);
    }
    {
      ParamStore ps;
      ps.create("E", random_tensor({5, 3}, rng));
      check([](Tape& t, const ParamStore& p) {
        Var e1 = t.embedding_row(t.param(p, "E"), 2);
        Var e2 = t.embedding_row(t.param(p, "E"), 2);
        return t.dot(e1, e2);
      }, ps);
    }
    {
      ParamStore ps;
      ps.create("z", random_tensor({6}, rng, 3.0));
      check([](Tape& t, const ParamStore& p) {
        return t.cross_entropy_logits(t.param(p, "z"), 1);
      }, ps);
    }
    {
      ParamStore ps;
      ps.create("s", Tensor::vector({0.2, 0.7, 0.45}));
      Tensor y = Tensor::vector({1, 0, 1});
      check([y](Tape& t, const ParamStore& p) {
        return t.bce_sum(t.param(p, "s"), y);
      }, ps);
    }
    {
      ParamStore ps;
      ps.create("a", random_tensor({c}, rng));
      ps.create("b", random_tensor({c}, rng));
      check([](Tape& t, const ParamStore& p) {
        Var d = t.sub(t.param(p, "a"), t.scale(t.param(p, "b"), 0.37));
        return t.sum_squares(d);
      }, ps);
    }
  }
}

TEST_CASE("cross_entropy_logits agrees with softmax-pick route") {
  SplitMix64 rng(99);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor z = random_tensor({5}, rng, 4.0);
    std::size_t target = rng.next_below(5);
    Tape t;
    Var logits = t.constant(z);
    double fused = t.scalar_value(t.cross_entropy_logits(logits, target));
    double manual = -std::log(t.value(t.softmax(logits))[target]);
    CHECK(fused == doctest::Approx(manual).epsilon(1e-10));
  }
}

TEST_CASE("operations are deterministic bit for bit") {
  SplitMix64 rng(5);
  Tensor m = random_tensor({4, 4}, rng);
  Tensor x = random_tensor({4}, rng);
  auto run = [&]() {
    Tape t;
    Var y = t.softmax(t.tanh(t.matvec(t.constant(m), t.constant(x))));
    return t.value(y);
  };
  Tensor a = run();
  Tensor b = run();
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("f32 mode quantizes every result") {
  SplitMix64 rng(11);
  Tensor m = random_tensor({3, 3}, rng);
  Tensor x = random_tensor({3}, rng);
  Tape t(Precision::F32);
  Tensor y = t.value(t.matvec(t.constant(m), t.constant(x)));
  for (std::size_t i = 0; i < y.size(); ++i) {
    CHECK(static_cast<double>(static_cast<float>(y[i])) == y[i]);
  }
}

TEST_CASE("non-finite results raise NumericError") {
  Tape t;
  Var big = t.constant(Tensor::scalar(1e308));
  CHECK_THROWS_AS(t.add(big, big), NumericError);
}

TEST_CASE("backward demands a scalar loss") {
  Tape t;
  Var v = t.leaf(Tensor::vector({1, 2}), true);
  CHECK_THROWS_AS(t.backward(v), UsageError);
}

TEST_CASE("dropout scales kept entries and zeroes dropped ones") {
  SplitMix64 rng(21);
  Tape t;
  Tensor x = Tensor::full({1000}, 1.0);
  Var y = t.dropout(t.leaf(x, true), 0.5, rng);
  const Tensor& ty = t.value(y);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < ty.size(); ++i) {
    CHECK((ty[i] == 0.0 || ty[i] == 2.0));
    kept += ty[i] != 0.0;
  }
  CHECK(kept > 400);
  CHECK(kept < 600);
}

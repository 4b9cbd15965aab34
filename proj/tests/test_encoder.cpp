#include <cmath>

#include "doctest.h"
#include "msan/encoder.hpp"
#include "test_helpers.hpp"

using namespace msan;
using msan::test::make_random_model;
using msan::test::random_record;
using msan::test::small_dims;

namespace {

// Scalar-loop LSTM step, independent of the tape implementation.
void reference_lstm_step(const Tensor& Wi, const Tensor& Ui, const Tensor& bi,
                         const Tensor& Wf, const Tensor& Uf, const Tensor& bf,
                         const Tensor& Wo, const Tensor& Uo, const Tensor& bo,
                         const Tensor& Wc, const Tensor& Uc, const Tensor& bc,
                         const std::vector<double>& x, std::vector<double>& h,
                         std::vector<double>& c) {
  std::size_t n = h.size();
  std::vector<double> hn(n), cn(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto pre = [&](const Tensor& W, const Tensor& U, const Tensor& b) {
      double acc = b[r];
      for (std::size_t j = 0; j < x.size(); ++j) acc += W.at(r, j) * x[j];
      for (std::size_t j = 0; j < n; ++j) acc += U.at(r, j) * h[j];
      return acc;
    };
    double i = 1.0 / (1.0 + std::exp(-pre(Wi, Ui, bi)));
    double f = 1.0 / (1.0 + std::exp(-pre(Wf, Uf, bf)));
    double o = 1.0 / (1.0 + std::exp(-pre(Wo, Uo, bo)));
    double ct = std::tanh(pre(Wc, Uc, bc));
    cn[r] = i * ct + f * c[r];
    hn[r] = o * std::tanh(cn[r]);
  }
  h = hn;
  c = cn;
}

}  // namespace

TEST_CASE("lstm_step zero-parameter fixed points") {
  Model model = make_random_model(small_dims(1), 1);
  for (const std::string& name : model.params.names()) {
    Tensor& t = model.params.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
  }
  Tape tape;
  LstmVars p = lease_lstm(tape, model.params, "enc.frames.l1");
  std::size_t n = model.dims.n_enc;
  Var x = tape.constant(Tensor::full({model.dims.stream_dims.at("frames")}, 0.7));

  SUBCASE("zero state stays zero") {
    RecurrentState s{tape.constant(Tensor::zeros({n})), tape.constant(Tensor::zeros({n}))};
    RecurrentState out = lstm_step(tape, p, x, s);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(tape.value(out.c)[i] == 0.0);
      CHECK(tape.value(out.h)[i] == 0.0);
    }
  }
  SUBCASE("gates are 0.5, so c' = c/2 and h' = tanh(c/2)/2") {
    Tensor c0 = Tensor::full({n}, 0.8);
    RecurrentState s{tape.constant(Tensor::zeros({n})), tape.constant(c0)};
    RecurrentState out = lstm_step(tape, p, x, s);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(tape.value(out.c)[i] == doctest::Approx(0.4).epsilon(1e-12));
      CHECK(tape.value(out.h)[i] == doctest::Approx(0.5 * std::tanh(0.4)).epsilon(1e-12));
    }
  }
}

TEST_CASE("lstm_step matches the scalar-loop reference") {
  Model model = make_random_model(small_dims(1), 2);
  const ParamStore& ps = model.params;
  SplitMix64 rng(3);
  std::size_t n = model.dims.n_enc;
  std::size_t d = model.dims.stream_dims.at("frames");

  std::vector<double> x(d), h(n, 0.0), c(n, 0.0);
  for (double& v : x) v = rng.next_uniform(-1, 1);
  for (double& v : h) v = rng.next_uniform(-1, 1);
  for (double& v : c) v = rng.next_uniform(-1, 1);

  Tape tape;
  LstmVars p = lease_lstm(tape, ps, "enc.frames.l1");
  RecurrentState s{tape.constant(Tensor::vector(h)), tape.constant(Tensor::vector(c))};
  RecurrentState out = lstm_step(tape, p, tape.constant(Tensor::vector(x)), s);

  auto P = [&](const char* leaf) { return ps.at(std::string("enc.frames.l1.") + leaf); };
  reference_lstm_step(P("Wi"), P("Ui"), P("bi"), P("Wf"), P("Uf"), P("bf"), P("Wo"), P("Uo"),
                      P("bo"), P("Wc"), P("Uc"), P("bc"), x, h, c);
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(tape.value(out.h)[i] == doctest::Approx(h[i]).epsilon(1e-12));
    CHECK(tape.value(out.c)[i] == doctest::Approx(c[i]).epsilon(1e-12));
  }
}

TEST_CASE("lstm_step gradients pass the finite-difference check") {
  Model model = make_random_model(small_dims(1), 4);
  SplitMix64 rng(5);
  std::size_t d = model.dims.stream_dims.at("frames");
  std::vector<double> x(d);
  for (double& v : x) v = rng.next_uniform(-1, 1);

  auto build = [&](Tape& t, const ParamStore& ps) {
    LstmVars p = lease_lstm(t, ps, "enc.frames.l1");
    std::size_t n = model.dims.n_enc;
    RecurrentState s{t.constant(Tensor::zeros({n})), t.constant(Tensor::zeros({n}))};
    RecurrentState out = lstm_step(t, p, t.constant(Tensor::vector(x)), s);
    return t.add(t.sum(out.h), t.sum_squares(out.c));
  };
  GradCheckResult r = grad_check(model.params, build, 1e-4);
  CAPTURE(r.worst_param);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("encode_stream unrolls the two-layer stack") {
  Model model = make_random_model(small_dims(1), 6);
  VideoRecord rec = random_record(model.dims, 7, 3);
  const FeatureSequence& seq = rec.streams.at("frames");

  Tape tape;
  Tensor v = tape.value(encode_stream(tape, model, "frames", seq));

  // manual 3-step unroll through lstm_step
  Tape manual;
  LstmVars l1 = lease_lstm(manual, model.params, "enc.frames.l1");
  LstmVars l2 = lease_lstm(manual, model.params, "enc.frames.l2");
  std::size_t n = model.dims.n_enc;
  RecurrentState s1{manual.constant(Tensor::zeros({n})), manual.constant(Tensor::zeros({n}))};
  RecurrentState s2 = s1;
  for (const auto& frame : seq) {
    s1 = lstm_step(manual, l1, manual.constant(Tensor::vector(frame)), s1);
    s2 = lstm_step(manual, l2, s1.h, s2);
  }
  CHECK(tensor_ops::max_abs_diff(v, manual.value(s2.h)) == 0.0);

  SUBCASE("length-1 sequence is a single stacked step") {
    FeatureSequence one = {seq.front()};
    Tape t1;
    Tensor v1 = t1.value(encode_stream(t1, model, "frames", one));
    Tape t2;
    LstmVars a = lease_lstm(t2, model.params, "enc.frames.l1");
    LstmVars b = lease_lstm(t2, model.params, "enc.frames.l2");
    RecurrentState z{t2.constant(Tensor::zeros({n})), t2.constant(Tensor::zeros({n}))};
    RecurrentState r1 = lstm_step(t2, a, t2.constant(Tensor::vector(one.front())), z);
    RecurrentState r2 = lstm_step(t2, b, r1.h, z);
    CHECK(tensor_ops::max_abs_diff(v1, t2.value(r2.h)) == 0.0);
  }

  SUBCASE("empty sequence is rejected") {
    Tape t;
    CHECK_THROWS_AS(encode_stream(t, model, "frames", {}), UsageError);
  }

  SUBCASE("zero parameters give a zero summary") {
    for (const std::string& name : model.params.names()) {
      Tensor& t = model.params.at(name);
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
    }
    Tape t;
    Tensor vz = t.value(encode_stream(t, model, "frames", seq));
    for (std::size_t i = 0; i < vz.size(); ++i) CHECK(vz[i] == 0.0);
  }
}

TEST_CASE("encode_video concatenates in configured order") {
  Model model = make_random_model(small_dims(3), 8);
  VideoRecord rec = random_record(model.dims, 9, 2);

  Tape tape;
  VideoEncoding enc = encode_video(tape, model, rec);
  CHECK(tape.value(enc.v).size() == 3 * model.dims.n_enc);

  // v is the ordered concatenation of the per-modality summaries
  std::size_t off = 0;
  for (const std::string& m : model.dims.modalities) {
    const Tensor& vm = tape.value(enc.v_m.at(m));
    for (std::size_t i = 0; i < vm.size(); ++i) {
      CHECK(tape.value(enc.v)[off + i] == vm[i]);
    }
    off += vm.size();
  }

  SUBCASE("missing modality is a usage error") {
    VideoRecord broken = rec;
    broken.streams.erase("flow");
    Tape t;
    CHECK_THROWS_AS(encode_video(t, model, broken), UsageError);
  }

  SUBCASE("single modality degenerates to v == v_m") {
    Model single = make_random_model(small_dims(1), 8);
    VideoRecord r1 = random_record(single.dims, 10, 2);
    Tape t;
    VideoEncoding e = encode_video(t, single, r1);
    CHECK(tensor_ops::max_abs_diff(t.value(e.v), t.value(e.v_m.at("frames"))) == 0.0);
  }
}

TEST_CASE("detect_semantics composes affine-tanh-affine-sigmoid") {
  Model model = make_random_model(small_dims(1), 11);
  SplitMix64 rng(12);
  Tensor vm({model.dims.n_enc});
  for (std::size_t i = 0; i < vm.size(); ++i) vm[i] = rng.next_uniform(-1, 1);

  Tape tape;
  Tensor s = tape.value(detect_semantics(tape, model, "frames", tape.constant(vm)));
  Tensor expect = tensor_ops::sigmoid(tensor_ops::affine(
      model.params.at("det.frames.W2"),
      tensor_ops::tanh(tensor_ops::affine(model.params.at("det.frames.W1"), vm,
                                          model.params.at("det.frames.b1"))),
      model.params.at("det.frames.b2")));
  CHECK(tensor_ops::max_abs_diff(s, expect) == 0.0);
  for (std::size_t k = 0; k < s.size(); ++k) {
    CHECK(s[k] > 0.0);
    CHECK(s[k] < 1.0);
  }

  SUBCASE("zero detector weights output 0.5 everywhere") {
    for (const char* leaf : {"W1", "b1", "W2", "b2"}) {
      Tensor& t = model.params.at(std::string("det.frames.") + leaf);
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
    }
    Tape t;
    Tensor sz = t.value(detect_semantics(t, model, "frames", t.constant(vm)));
    for (std::size_t k = 0; k < sz.size(); ++k) CHECK(sz[k] == 0.5);
  }

  SUBCASE("large logits saturate towards 1") {
    Tensor& w2 = model.params.at("det.frames.b2");
    for (std::size_t i = 0; i < w2.size(); ++i) w2[i] = 60.0;
    Tape t;
    Tensor sat = t.value(detect_semantics(t, model, "frames", t.constant(vm)));
    for (std::size_t k = 0; k < sat.size(); ++k) CHECK(sat[k] > 1.0 - 1e-6);
  }
}

TEST_CASE("detector_loss analytic anchors and BCE oracle") {
  SUBCASE("y=[1], s=[0.5], alpha=0 gives ln 2") {
    Tape t;
    Var s = t.constant(Tensor::vector({0.5}));
    double loss = t.scalar_value(t.bce_sum(s, Tensor::vector({1.0})));
    CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("perfect prediction tends to zero") {
    Tape t;
    double eps = 1e-9;
    Var s = t.constant(Tensor::vector({1.0 - eps, eps}));
    double loss = t.scalar_value(t.bce_sum(s, Tensor::vector({1.0, 0.0})));
    CHECK(loss < 1e-8);
    CHECK(loss >= 0.0);
  }
  SUBCASE("random pairs match the scalar-loop oracle") {
    SplitMix64 rng(13);
    for (int rep = 0; rep < 50; ++rep) {
      std::size_t k = 1 + rng.next_below(6);
      Tensor s({k}), y({k});
      for (std::size_t i = 0; i < k; ++i) {
        s[i] = rng.next_uniform(0.01, 0.99);
        y[i] = rng.next_below(2) ? 1.0 : 0.0;
      }
      double expect = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        expect -= y[i] * std::log(s[i]) + (1.0 - y[i]) * std::log(1.0 - s[i]);
      }
      Tape t;
      CHECK(t.scalar_value(t.bce_sum(t.constant(s), y)) ==
            doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("detector_loss reduces to the L2 term at exact predictions") {
  Model model = make_random_model(small_dims(2), 14);
  VideoRecord rec = random_record(model.dims, 15, 2);
  double alpha = 1e-3;

  // Saturate every detector head: zero W2 and huge biases with the label's
  // sign, so s == y exactly in double precision.
  Tensor labels({model.dims.attribute_count});
  labels[0] = 1.0;
  labels[2] = 1.0;
  for (const std::string& m : model.dims.modalities) {
    Tensor& w2 = model.params.at("det." + m + ".W2");
    for (std::size_t i = 0; i < w2.size(); ++i) w2[i] = 0.0;
    Tensor& b2 = model.params.at("det." + m + ".b2");
    for (std::size_t k = 0; k < b2.size(); ++k) b2[k] = labels[k] > 0.5 ? 60.0 : -60.0;
  }

  double expected_l2 = 0.0;
  for (const std::string& name : model.params.names()) {
    if (!is_encoder_weight(name)) continue;
    const Tensor& t = model.params.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) expected_l2 += t[i] * t[i];
  }

  Tape tape;
  VideoEncoding enc = encode_video(tape, model, rec);
  double loss = tape.scalar_value(detector_loss(tape, model, enc, labels, alpha));
  CHECK(loss == doctest::Approx(alpha * expected_l2).epsilon(1e-12));

  SUBCASE("loss is nonnegative for alpha >= 0") {
    Model m2 = make_random_model(small_dims(2), 16);
    Tape t2;
    VideoEncoding e2 = encode_video(t2, m2, rec);
    CHECK(t2.scalar_value(detector_loss(t2, m2, e2, labels, 0.0)) >= 0.0);
    CHECK(t2.scalar_value(detector_loss(t2, m2, e2, labels, 1e-4)) >= 0.0);
  }
}

TEST_CASE("detector loss gradients pass the finite-difference check") {
  Model model = make_random_model(small_dims(2), 17);
  VideoRecord rec = random_record(model.dims, 18, 2);
  Tensor labels({model.dims.attribute_count});
  labels[1] = 1.0;
  auto build = [&](Tape& t, const ParamStore&) {
    VideoEncoding enc = encode_video(t, model, rec);
    return detector_loss(t, model, enc, labels, 1e-3);
  };
  GradCheckResult r = grad_check(model.params, build, 1e-4);
  CAPTURE(r.worst_param);
  CHECK(r.max_rel_error < 1e-4);
}

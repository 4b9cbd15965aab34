#include "msan/selfcheck.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "msan/decoder.hpp"
#include "msan/metrics.hpp"
#include "msan/rng.hpp"

namespace msan {

namespace {

Model toy_model(std::uint64_t seed, std::size_t n_modalities = 2) {
  ModelDims dims;
  const std::vector<std::string> all = {"frames", "clips", "flow"};
  for (std::size_t i = 0; i < n_modalities; ++i) {
    dims.modalities.push_back(all[i]);
    dims.stream_dims[all[i]] = 5;
  }
  dims.n_enc = 6;
  dims.n_det = 6;
  dims.attribute_count = 4;
  dims.n_h = 8;
  dims.n_f = 5;
  dims.n_x = 6;
  dims.n_a = 8;
  std::vector<std::string> words;
  for (int i = 0; i < 5; ++i) words.push_back("w" + std::to_string(i + 4));
  std::vector<std::string> attrs;
  for (int i = 0; i < 4; ++i) attrs.push_back("attr" + std::to_string(i));
  Model model = build_model(dims, Vocabulary::from_tokens(words),
                            AttributeVocabulary::from_words(attrs));
  SplitMix64 rng(seed);
  for (const std::string& name : model.params.names()) {
    Tensor& t = model.params.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_uniform(-0.4, 0.4);
  }
  return model;
}

VideoRecord toy_record(const ModelDims& dims, std::uint64_t seed) {
  SplitMix64 rng(seed);
  VideoRecord rec;
  rec.id = "check";
  for (const std::string& m : dims.modalities) {
    FeatureSequence seq(2, std::vector<double>(dims.stream_dims.at(m)));
    for (auto& frame : seq) {
      for (double& x : frame) x = rng.next_uniform(-1, 1);
    }
    rec.streams[m] = std::move(seq);
  }
  rec.captions = {"w4 w5"};
  return rec;
}

bool check_factorization(std::string& detail) {
  SplitMix64 rng(11);
  for (int rep = 0; rep < 10; ++rep) {
    std::size_t n_h = 3 + rng.next_below(5);
    std::size_t n_f = 1 + rng.next_below(5);
    std::size_t n_x = 2 + rng.next_below(5);
    std::size_t k = 2 + rng.next_below(4);
    Tensor A({n_h, n_f}), B({n_f, k}), Cf({n_f, n_x}), S({k});
    for (Tensor* t : {&A, &B, &Cf, &S}) {
      for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = rng.next_uniform(-1, 1);
    }
    Tensor combo({n_h, n_x});
    for (std::size_t kk = 0; kk < k; ++kk) {
      Tensor basis = Tensor::zeros({k});
      basis[kk] = 1.0;
      Tensor member = ensemble_weight(basis, A, B, Cf);
      for (std::size_t i = 0; i < combo.size(); ++i) combo[i] += S[kk] * member[i];
    }
    double err = tensor_ops::max_abs_diff(combo, ensemble_weight(S, A, B, Cf));
    if (err >= 1e-10) {
      detail = "linearity error " + std::to_string(err);
      return false;
    }
  }
  return true;
}

bool check_rewrite_equivalence(std::string& detail) {
  SplitMix64 rng(12);
  for (int rep = 0; rep < 10; ++rep) {
    Model model = toy_model(100 + rep);
    std::size_t k = model.dims.attribute_count;
    Tensor S({k}), w({model.dims.n_x}), h({model.dims.n_h}), c({model.dims.n_h});
    Tensor v({model.dims.encoding_dim()});
    for (Tensor* t : {&S, &w, &h, &c, &v}) {
      for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = rng.next_uniform(-1, 1);
    }
    // factorized step
    Tape tape(Precision::F64, false);
    DecoderVars dec = lease_decoder(tape, model.params);
    RecurrentState prev{tape.constant(h), tape.constant(c)};
    RecurrentState out =
        semantic_lstm_step(tape, dec, tape.constant(S), tape.constant(w), prev,
                           tape.constant(v), 1);
    // explicit ensemble-matrix step
    const ParamStore& ps = model.params;
    Tensor z = tensor_ops::matvec(ps.at("dec.C"), v);
    auto pre = [&](const std::string& g) {
      Tensor Wg = ensemble_weight(S, ps.at("dec." + g + ".Wa"), ps.at("dec." + g + ".Wb"),
                                  ps.at("dec." + g + ".Wc"));
      Tensor Ug = ensemble_weight(S, ps.at("dec." + g + ".Ua"), ps.at("dec." + g + ".Ub"),
                                  ps.at("dec." + g + ".Uc"));
      return tensor_ops::add(
          z, tensor_ops::add(tensor_ops::matvec(Wg, w),
                             tensor_ops::affine(Ug, h, ps.at("dec." + g + ".b"))));
    };
    Tensor i = tensor_ops::sigmoid(pre("i"));
    Tensor f = tensor_ops::sigmoid(pre("f"));
    Tensor o = tensor_ops::sigmoid(pre("o"));
    Tensor ct = tensor_ops::tanh(pre("c"));
    Tensor ec = tensor_ops::add(tensor_ops::hadamard(i, ct), tensor_ops::hadamard(f, c));
    Tensor eh = tensor_ops::hadamard(o, tensor_ops::tanh(ec));
    double err = std::max(tensor_ops::max_abs_diff(tape.value(out.h), eh),
                          tensor_ops::max_abs_diff(tape.value(out.c), ec));
    if (err >= 1e-10) {
      detail = "factorized vs explicit mismatch " + std::to_string(err);
      return false;
    }
  }
  return true;
}

bool check_gradients(std::string& detail) {
  Model model = toy_model(13);
  VideoRecord rec = toy_record(model.dims, 14);
  Tensor labels({model.dims.attribute_count});
  labels[0] = 1.0;
  labels[2] = 1.0;
  std::vector<int> caption = {4, 5, 6};
  auto build = [&](Tape& t, const ParamStore&) {
    VideoEncoding enc = encode_video(t, model, rec);
    return t.add(detector_loss(t, model, enc, labels, 1e-4),
                 caption_loss(t, model, enc, caption, 16));
  };
  GradCheckResult r = grad_check(model.params, build, 1e-4);
  if (r.max_rel_error >= 1e-4) {
    detail = "max relative error " + std::to_string(r.max_rel_error) + " at " + r.worst_param;
    return false;
  }
  return true;
}

bool check_attention_simplex(std::string& detail) {
  SplitMix64 rng(15);
  Model model = toy_model(16, 3);
  for (int rep = 0; rep < 200; ++rep) {
    std::size_t k = model.dims.attribute_count;
    Tape tape(Precision::F64, false);
    std::vector<Var> sems;
    for (int i = 0; i < 3; ++i) {
      Tensor s({k});
      for (std::size_t j = 0; j < k; ++j) s[j] = rng.next_uniform(0.0, 1.0);
      sems.push_back(tape.constant(s));
    }
    Tensor h({model.dims.n_h});
    for (std::size_t j = 0; j < h.size(); ++j) h[j] = rng.next_uniform(-2, 2);
    AttentionOut out = attend(tape, model.params, tape.constant(h), sems);
    const Tensor& weights = tape.value(out.weights);
    double total = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] < 0.0) {
        detail = "negative attention weight";
        return false;
      }
      total += weights[i];
    }
    if (std::abs(total - 1.0) > 1e-6) {
      detail = "weights sum " + std::to_string(total);
      return false;
    }
  }
  return true;
}

bool check_beam_greedy(std::string& detail) {
  for (std::uint64_t seed = 30; seed < 40; ++seed) {
    Model model = toy_model(seed);
    VideoRecord rec = toy_record(model.dims, seed + 1);
    EncodedValues ev = encode_values(model, rec);
    std::vector<int> greedy = greedy_decode(model, ev, 4);
    BeamResult beam = beam_search(model, ev, 1, 4);
    if (beam.tokens != greedy) {
      detail = "beam=1 diverged from greedy at seed " + std::to_string(seed);
      return false;
    }
  }
  return true;
}

bool check_metric_oracles(std::string& detail) {
  double b = bleu({{"the", "cat", "sat"}}, {{{"the", "cat", "sat", "down"}}}, 1);
  if (std::abs(b - std::exp(-1.0 / 3.0)) > 1e-9) {
    detail = "BLEU brevity-penalty anchor " + std::to_string(b);
    return false;
  }
  double c = cider_d({{"a", "dog", "runs"}, {"a", "dog", "sits"}},
                     {{{"a", "dog", "runs"}}, {{"a", "cat", "sits"}}});
  if (std::abs(c - 4.375) > 1e-9) {
    detail = "CIDEr-D two-video anchor " + std::to_string(c);
    return false;
  }
  return true;
}

}  // namespace

bool run_selfcheck(std::ostream& out, FaultInjection fault) {
  testing::flip_hidden_hadamard_sign = fault == FaultInjection::HiddenHadamardSign;

  struct Check {
    const char* name;
    std::function<bool(std::string&)> fn;
  };
  const std::vector<Check> checks = {
      {"factorization linearity (compact form == K-member ensemble)", check_factorization},
      {"factorization rewrite equivalence (factorized step == explicit matrices)",
       check_rewrite_equivalence},
      {"joint-loss gradients vs central differences", check_gradients},
      {"attention weights on the probability simplex", check_attention_simplex},
      {"beam size 1 equals greedy decoding", check_beam_greedy},
      {"metric oracles (BLEU brevity anchor, CIDEr-D two-video anchor)", check_metric_oracles},
  };

  bool all_ok = true;
  for (const Check& check : checks) {
    std::string detail;
    bool ok = false;
    try {
      ok = check.fn(detail);
    } catch (const Error& e) {
      detail = e.what();
    }
    out << (ok ? "[ok]   " : "[FAIL] ") << check.name;
    if (!ok && !detail.empty()) out << ": " << detail;
    out << '\n';
    all_ok = all_ok && ok;
  }

  testing::flip_hidden_hadamard_sign = false;
  return all_ok;
}

}  // namespace msan

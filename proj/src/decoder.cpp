#include "msan/decoder.hpp"

#include <algorithm>
#include <cmath>

namespace msan {

namespace testing {
bool flip_hidden_hadamard_sign = false;
}

AttentionOut attend(Tape& tape, const ParamStore& params, Var h_prev,
                    const std::vector<Var>& semantics) {
  if (semantics.empty()) throw UsageError("attend needs at least one semantic distribution");
  Var W = tape.param(params, "attn.W");
  Var U = tape.param(params, "attn.U");
  Var v = tape.param(params, "attn.v");
  Var Wh = tape.matvec(W, h_prev);
  std::vector<Var> scores;
  scores.reserve(semantics.size());
  for (Var s : semantics) {
    scores.push_back(tape.dot(v, tape.tanh(tape.add(Wh, tape.matvec(U, s)))));
  }
  AttentionOut out;
  out.weights = tape.softmax(tape.concat(scores));
  Var S;
  for (std::size_t i = 0; i < semantics.size(); ++i) {
    Var term = tape.scale_by(tape.pick(out.weights, i), semantics[i]);
    S = S.valid() ? tape.add(S, term) : term;
  }
  out.S = S;
  return out;
}

Tensor ensemble_weight(const Tensor& S, const Tensor& A, const Tensor& B, const Tensor& Cf) {
  Tensor d = tensor_ops::matvec(B, S);  // [n_f]
  if (A.cols() != d.size() || Cf.rows() != d.size()) {
    throw DimensionError("ensemble_weight factor shapes do not conform");
  }
  // A * diag(d) * Cf, computed as (columns of A scaled by d) * Cf.
  Tensor out({A.rows(), Cf.cols()});
  for (std::size_t i = 0; i < A.rows(); ++i) {
    for (std::size_t k = 0; k < d.size(); ++k) {
      double aik = A.at(i, k) * d[k];
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < Cf.cols(); ++j) out.at(i, j) += aik * Cf.at(k, j);
    }
  }
  return out;
}

DecoderVars lease_decoder(Tape& tape, const ParamStore& params) {
  auto gate = [&](const char* g) {
    std::string p = std::string("dec.") + g + ".";
    GateFactorVars v;
    v.Wa = tape.param(params, p + "Wa");
    v.Wb = tape.param(params, p + "Wb");
    v.Wc = tape.param(params, p + "Wc");
    v.Ua = tape.param(params, p + "Ua");
    v.Ub = tape.param(params, p + "Ub");
    v.Uc = tape.param(params, p + "Uc");
    v.b = tape.param(params, p + "b");
    return v;
  };
  DecoderVars v{gate("i"), gate("f"), gate("o"), gate("c"), tape.param(params, "dec.C")};
  return v;
}

namespace {

Var gate_preactivation(Tape& t, const GateFactorVars& g, Var S, Var w_embed, Var h_prev,
                       std::optional<Var> z) {
  Var w_hat = t.hadamard(t.matvec(g.Wb, S), t.matvec(g.Wc, w_embed));
  Var h_hat = t.hadamard(t.matvec(g.Ub, S), t.matvec(g.Uc, h_prev));
  if (testing::flip_hidden_hadamard_sign) h_hat = t.scale(h_hat, -1.0);
  Var pre = t.add(t.add(t.matvec(g.Wa, w_hat), t.matvec(g.Ua, h_hat)), g.b);
  if (z) pre = t.add(pre, *z);
  return pre;
}

}  // namespace

RecurrentState semantic_lstm_step(Tape& t, const DecoderVars& p, Var S, Var w_embed,
                                  const RecurrentState& prev, std::optional<Var> v, int step) {
  if (step == 1 && !v) throw UsageError("decoder step 1 requires the video vector");
  if (step != 1 && v) throw UsageError("video vector is only injected at step 1");
  std::optional<Var> z;
  if (v) z = t.matvec(p.C, *v);
  Var i = t.sigmoid(gate_preactivation(t, p.i, S, w_embed, prev.h, z));
  Var f = t.sigmoid(gate_preactivation(t, p.f, S, w_embed, prev.h, z));
  Var o = t.sigmoid(gate_preactivation(t, p.o, S, w_embed, prev.h, z));
  Var c_tilde = t.tanh(gate_preactivation(t, p.c, S, w_embed, prev.h, z));
  Var c = t.add(t.hadamard(i, c_tilde), t.hadamard(f, prev.c));
  Var h = t.hadamard(o, t.tanh(c));
  return {h, c};
}

Var step_logits(Tape& tape, const ParamStore& params, Var h) {
  return tape.affine(tape.param(params, "out.W"), h, tape.param(params, "out.b"));
}

Var step_distribution(Tape& tape, const ParamStore& params, Var h) {
  return tape.softmax(step_logits(tape, params, h));
}

Var semantic_context(Tape& tape, const Model& model, Var h_prev,
                     const std::vector<Var>& semantics) {
  if (!model.dims.use_semantic_attention) {
    std::size_t k = model.dims.attribute_count;
    return tape.constant(Tensor::full({k}, 1.0 / static_cast<double>(k)));
  }
  return attend(tape, model.params, h_prev, semantics).S;
}

Var caption_loss(Tape& tape, const Model& model, const VideoEncoding& enc,
                 const std::vector<int>& content_ids, std::size_t max_content_len,
                 double dropout_rate, SplitMix64* dropout_rng) {
  if (content_ids.empty()) throw UsageError("caption_loss on an empty caption");
  if (dropout_rate > 0.0 && dropout_rng == nullptr) {
    throw UsageError("dropout requires an rng");
  }
  for (int id : content_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= model.dims.vocab_size) {
      throw UsageError("caption token id out of range (map unknowns to UNK first)");
    }
  }
  std::size_t n_content = std::min(content_ids.size(), max_content_len);
  std::vector<int> targets(content_ids.begin(), content_ids.begin() + n_content);
  if (content_ids.size() < max_content_len) targets.push_back(Vocabulary::kEos);

  DecoderVars dec = lease_decoder(tape, model.params);
  Var embeddings = tape.param(model.params, "emb.E");
  std::vector<Var> semantics = attention_semantics(model, enc);
  std::size_t n_h = model.dims.n_h;
  RecurrentState state{tape.constant(Tensor::zeros({n_h})), tape.constant(Tensor::zeros({n_h}))};

  Var loss;
  int prev_token = Vocabulary::kBos;
  for (std::size_t step = 0; step < targets.size(); ++step) {
    Var S = semantic_context(tape, model, state.h, semantics);
    Var w = tape.embedding_row(embeddings, static_cast<std::size_t>(prev_token));
    if (dropout_rate > 0.0) w = tape.dropout(w, dropout_rate, *dropout_rng);
    std::optional<Var> v;
    if (step == 0) v = enc.v;
    state = semantic_lstm_step(tape, dec, S, w, state, v, static_cast<int>(step) + 1);
    Var h = state.h;
    if (dropout_rate > 0.0) h = tape.dropout(h, dropout_rate, *dropout_rng);
    Var term = tape.cross_entropy_logits(step_logits(tape, model.params, h),
                                         static_cast<std::size_t>(targets[step]));
    loss = loss.valid() ? tape.add(loss, term) : term;
    prev_token = targets[step];
  }
  return loss;
}

EncodedValues encode_values(const Model& model, const VideoRecord& record) {
  Tape tape(Precision::F64, false);
  VideoEncoding enc = encode_video(tape, model, record);
  EncodedValues out;
  out.v = tape.value(enc.v);
  for (const auto& [m, var] : enc.v_m) out.v_m[m] = tape.value(var);
  for (const auto& [m, var] : enc.s_m) out.s_m[m] = tape.value(var);
  for (const std::string& m : model.dims.attn_modalities) {
    out.attn_semantics.push_back(out.s_m.at(m));
  }
  return out;
}

DecoderState initial_decoder_state(const Model& model) {
  return {Tensor::zeros({model.dims.n_h}), Tensor::zeros({model.dims.n_h}), 1};
}

StepOutput decode_step(const Model& model, const EncodedValues& enc, const DecoderState& state,
                       int prev_token) {
  Tape tape(Precision::F64, false);
  std::vector<Var> semantics;
  semantics.reserve(enc.attn_semantics.size());
  for (const Tensor& s : enc.attn_semantics) semantics.push_back(tape.constant(s));

  RecurrentState prev{tape.constant(state.h), tape.constant(state.c)};
  Var S = semantic_context(tape, model, prev.h, semantics);
  Var w = tape.embedding_row(tape.param(model.params, "emb.E"),
                             static_cast<std::size_t>(prev_token));
  std::optional<Var> v;
  if (state.t == 1) v = tape.constant(enc.v);
  DecoderVars dec = lease_decoder(tape, model.params);
  RecurrentState next = semantic_lstm_step(tape, dec, S, w, prev, v, state.t);

  // log softmax computed directly from the logits for precision
  Tensor logits = tape.value(step_logits(tape, model.params, next.h));
  double mx = logits[0];
  for (std::size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
  double lse = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) lse += std::exp(logits[i] - mx);
  lse = mx + std::log(lse);
  Tensor log_probs = logits;
  for (std::size_t i = 0; i < log_probs.size(); ++i) log_probs[i] -= lse;

  StepOutput out;
  out.state = DecoderState{tape.value(next.h), tape.value(next.c), state.t + 1};
  out.log_probs = std::move(log_probs);
  return out;
}

bool emittable_token(int id) {
  return id != Vocabulary::kPad && id != Vocabulary::kBos && id != Vocabulary::kUnk;
}

std::vector<int> greedy_decode(const Model& model, const EncodedValues& enc, std::size_t max_len) {
  if (max_len < 1) throw UsageError("greedy_decode needs max_len >= 1");
  std::vector<int> tokens;
  DecoderState state = initial_decoder_state(model);
  int prev = Vocabulary::kBos;
  while (tokens.size() < max_len) {
    StepOutput step = decode_step(model, enc, state, prev);
    int best = -1;
    for (std::size_t id = 0; id < step.log_probs.size(); ++id) {
      if (!emittable_token(static_cast<int>(id))) continue;
      if (best < 0 || step.log_probs[id] > step.log_probs[best]) {
        best = static_cast<int>(id);  // strict > keeps the lowest id on ties
      }
    }
    if (best == Vocabulary::kEos) break;
    tokens.push_back(best);
    state = step.state;
    prev = best;
  }
  return tokens;
}

BeamResult beam_search(const Model& model, const EncodedValues& enc, std::size_t beam,
                       std::size_t max_len, bool length_normalize) {
  if (beam < 1) throw UsageError("beam size must be >= 1");
  if (max_len < 1) throw UsageError("beam_search needs max_len >= 1");

  auto final_score = [length_normalize](const BeamHypothesis& h) {
    if (!length_normalize) return h.logprob;
    return h.logprob / static_cast<double>(std::max<std::size_t>(1, h.tokens.size() + 1));
  };
  auto better = [&](const BeamHypothesis& a, const BeamHypothesis& b) {
    double sa = final_score(a), sb = final_score(b);
    if (sa != sb) return sa > sb;
    return a.tokens < b.tokens;
  };

  std::vector<BeamHypothesis> live(1);
  live.front().state = initial_decoder_state(model);
  std::vector<BeamHypothesis> pool;

  for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<BeamHypothesis> candidates;
    for (const BeamHypothesis& hyp : live) {
      int prev = hyp.tokens.empty() ? Vocabulary::kBos : hyp.tokens.back();
      StepOutput out = decode_step(model, enc, hyp.state, prev);
      for (std::size_t id = 0; id < out.log_probs.size(); ++id) {
        if (!emittable_token(static_cast<int>(id))) continue;
        BeamHypothesis next;
        next.logprob = hyp.logprob + out.log_probs[id];
        next.state = out.state;
        next.tokens = hyp.tokens;
        if (static_cast<int>(id) == Vocabulary::kEos) {
          next.finished = true;
        } else {
          next.tokens.push_back(static_cast<int>(id));
        }
        candidates.push_back(std::move(next));
      }
    }
    // Keep the top `beam` candidates overall; finished ones retire to the
    // pool and give up their slot (no refill, so beam=1 is exactly greedy).
    std::sort(candidates.begin(), candidates.end(),
              [](const BeamHypothesis& a, const BeamHypothesis& b) {
                if (a.logprob != b.logprob) return a.logprob > b.logprob;
                if (a.tokens != b.tokens) return a.tokens < b.tokens;
                return a.finished > b.finished;
              });
    if (candidates.size() > beam) candidates.resize(beam);
    live.clear();
    for (BeamHypothesis& c : candidates) {
      if (c.finished) {
        pool.push_back(std::move(c));
      } else {
        live.push_back(std::move(c));
      }
    }
  }
  // Hypotheses cut by the length cap compete without an EOS term.
  for (BeamHypothesis& h : live) pool.push_back(std::move(h));
  if (pool.empty()) return {};

  const BeamHypothesis* best = &pool.front();
  for (const BeamHypothesis& h : pool) {
    if (better(h, *best)) best = &h;
  }
  return {best->tokens, best->logprob};
}

}  // namespace msan

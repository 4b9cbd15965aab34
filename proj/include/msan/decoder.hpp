#pragma once

#include <optional>
#include <vector>

#include "msan/encoder.hpp"
#include "msan/model.hpp"

namespace msan {

namespace testing {
// Fault-injection hook for the selfcheck command. Flips the sign of the
// hidden-side Hadamard term inside semantic_lstm_step when enabled.
extern bool flip_hidden_hadamard_sign;
}  // namespace testing

struct AttentionOut {
  Var S;        // [K] attention-weighted semantic vector
  Var weights;  // [l] softmax weights over the semantics
};

// e_i = v . tanh(W h_prev + U s_i); weights = softmax(e); S = sum_i a_i s_i.
AttentionOut attend(Tape& tape, const ParamStore& params, Var h_prev,
                    const std::vector<Var>& semantics);

// A * diag(B S) * Cf: the compact form of the per-attribute weight ensemble.
Tensor ensemble_weight(const Tensor& S, const Tensor& A, const Tensor& B, const Tensor& Cf);

struct GateFactorVars {
  Var Wa, Wb, Wc, Ua, Ub, Uc, b;
};

struct DecoderVars {
  GateFactorVars i, f, o, c;
  Var C;  // video injection, applied at t == 1 only
};

DecoderVars lease_decoder(Tape& tape, const ParamStore& params);

// One factorized decoder step. v must be present iff t == 1. Each gate's
// pre-activation is Wa (Wb S (.) Wc w) + Ua (Ub S (.) Uc h) + b [+ C v].
RecurrentState semantic_lstm_step(Tape& tape, const DecoderVars& p, Var S, Var w_embed,
                                  const RecurrentState& prev, std::optional<Var> v, int t);

Var step_logits(Tape& tape, const ParamStore& params, Var h);
// softmax(W_out h + b_out)
Var step_distribution(Tape& tape, const ParamStore& params, Var h);

// S_t for one step: attention over the configured semantics, or the fixed
// uniform vector when semantic attention is disabled.
Var semantic_context(Tape& tape, const Model& model, Var h_prev,
                     const std::vector<Var>& semantics);

// Teacher-forced negative log-likelihood of the caption (content token ids;
// out-of-vocabulary entries must already be mapped to UNK). Scores at most
// max_content_len content steps; the EOS step is scored only when the
// caption is shorter than the cap, which keeps decode log-probabilities
// re-scorable through this function.
Var caption_loss(Tape& tape, const Model& model, const VideoEncoding& enc,
                 const std::vector<int>& content_ids, std::size_t max_content_len,
                 double dropout_rate = 0.0, SplitMix64* dropout_rng = nullptr);

// ---- value-domain decoding ----

// Encoded values for inference: v plus the attention semantics in
// configured order.
struct EncodedValues {
  Tensor v;
  std::map<std::string, Tensor> v_m;
  std::map<std::string, Tensor> s_m;
  std::vector<Tensor> attn_semantics;
};

EncodedValues encode_values(const Model& model, const VideoRecord& record);

struct DecoderState {
  Tensor h, c;
  int t = 1;  // next step index
};

DecoderState initial_decoder_state(const Model& model);

struct StepOutput {
  DecoderState state;
  Tensor log_probs;  // full-vocabulary log softmax
};

StepOutput decode_step(const Model& model, const EncodedValues& enc, const DecoderState& state,
                       int prev_token);

// Tokens a decoder may emit: everything except PAD, BOS and UNK.
bool emittable_token(int id);

// Argmax decoding, ties broken by lowest token id; stops at EOS or after
// max_len content tokens. Returns content token ids.
std::vector<int> greedy_decode(const Model& model, const EncodedValues& enc, std::size_t max_len);

struct BeamHypothesis {
  std::vector<int> tokens;  // content tokens only
  double logprob = 0.0;
  DecoderState state;
  bool finished = false;
};

struct BeamResult {
  std::vector<int> tokens;
  double logprob = 0.0;
};

// Breadth-limited search over summed log-probabilities (no length
// normalization unless requested). Finished hypotheses retire to a pool;
// the pool maximum wins, ties broken by lexicographically smaller token
// sequence.
BeamResult beam_search(const Model& model, const EncodedValues& enc, std::size_t beam,
                       std::size_t max_len, bool length_normalize = false);

}  // namespace msan

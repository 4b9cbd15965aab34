#pragma once

#include <map>
#include <string>
#include <vector>

#include "msan/model.hpp"
#include "msan/tape.hpp"

namespace msan {

// One LSTM layer's parameters leased onto a tape.
struct LstmVars {
  Var Wi, Ui, bi, Wf, Uf, bf, Wo, Uo, bo, Wc, Uc, bc;
};

LstmVars lease_lstm(Tape& tape, const ParamStore& params, const std::string& prefix);

struct RecurrentState {
  Var h, c;
};

// Standard gate equations: i,f,o = sigmoid(Wx + Uh + b), c~ = tanh(...),
// c' = i (.) c~ + f (.) c, h' = o (.) tanh(c').
RecurrentState lstm_step(Tape& tape, const LstmVars& p, Var x, const RecurrentState& prev);

// Runs the modality's 2-layer stack over the sequence; returns the final
// top-layer hidden state v_m.
Var encode_stream(Tape& tape, const Model& model, const std::string& modality,
                  const FeatureSequence& features);

// sigmoid(MLP(v_m)) for one modality's detector head.
Var detect_semantics(Tape& tape, const Model& model, const std::string& modality, Var v_m);

struct VideoEncoding {
  std::map<std::string, Var> v_m;  // per-modality summaries
  Var v;                           // ordered concatenation
  std::map<std::string, Var> s_m;  // per-modality semantic distributions
};

// encode_stream per configured modality, ordered concatenation, then the
// semantic detector on each summary.
VideoEncoding encode_video(Tape& tape, const Model& model, const VideoRecord& record);

// Mean over modalities of the clamped negative Bernoulli log-likelihood of
// the attribute labels, plus alpha * sum of squared encoder/detector weights.
Var detector_loss(Tape& tape, const Model& model, const VideoEncoding& enc,
                  const Tensor& labels, double alpha);

// Semantics list feeding the attention unit, in configured modality order.
std::vector<Var> attention_semantics(const Model& model, const VideoEncoding& enc);

}  // namespace msan

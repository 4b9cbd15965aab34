#include "msan/encoder.hpp"

namespace msan {

LstmVars lease_lstm(Tape& tape, const ParamStore& params, const std::string& prefix) {
  auto lease = [&](const char* leaf) { return tape.param(params, prefix + "." + leaf); };
  LstmVars v;
  v.Wi = lease("Wi"); v.Ui = lease("Ui"); v.bi = lease("bi");
  v.Wf = lease("Wf"); v.Uf = lease("Uf"); v.bf = lease("bf");
  v.Wo = lease("Wo"); v.Uo = lease("Uo"); v.bo = lease("bo");
  v.Wc = lease("Wc"); v.Uc = lease("Uc"); v.bc = lease("bc");
  return v;
}

RecurrentState lstm_step(Tape& t, const LstmVars& p, Var x, const RecurrentState& prev) {
  Var i = t.sigmoid(t.add(t.affine(p.Wi, x, p.bi), t.matvec(p.Ui, prev.h)));
  Var f = t.sigmoid(t.add(t.affine(p.Wf, x, p.bf), t.matvec(p.Uf, prev.h)));
  Var o = t.sigmoid(t.add(t.affine(p.Wo, x, p.bo), t.matvec(p.Uo, prev.h)));
  Var c_tilde = t.tanh(t.add(t.affine(p.Wc, x, p.bc), t.matvec(p.Uc, prev.h)));
  Var c = t.add(t.hadamard(i, c_tilde), t.hadamard(f, prev.c));
  Var h = t.hadamard(o, t.tanh(c));
  return {h, c};
}

Var encode_stream(Tape& tape, const Model& model, const std::string& modality,
                  const FeatureSequence& features) {
  if (features.empty()) throw UsageError("cannot encode an empty feature sequence");
  const std::string prefix = "enc." + modality;
  LstmVars l1 = lease_lstm(tape, model.params, prefix + ".l1");
  LstmVars l2 = lease_lstm(tape, model.params, prefix + ".l2");
  std::size_t n = model.dims.n_enc;
  RecurrentState s1{tape.constant(Tensor::zeros({n})), tape.constant(Tensor::zeros({n}))};
  RecurrentState s2 = s1;
  for (const std::vector<double>& frame : features) {
    Var x = tape.constant(Tensor::vector(frame));
    s1 = lstm_step(tape, l1, x, s1);
    s2 = lstm_step(tape, l2, s1.h, s2);
  }
  return s2.h;
}

Var detect_semantics(Tape& tape, const Model& model, const std::string& modality, Var v_m) {
  const std::string prefix = "det." + modality;
  Var hidden = tape.tanh(tape.affine(tape.param(model.params, prefix + ".W1"), v_m,
                                     tape.param(model.params, prefix + ".b1")));
  Var logits = tape.affine(tape.param(model.params, prefix + ".W2"), hidden,
                           tape.param(model.params, prefix + ".b2"));
  return tape.sigmoid(logits);
}

VideoEncoding encode_video(Tape& tape, const Model& model, const VideoRecord& record) {
  VideoEncoding enc;
  std::vector<Var> parts;
  for (const std::string& m : model.dims.modalities) {
    auto it = record.streams.find(m);
    if (it == record.streams.end()) {
      throw UsageError("record " + record.id + " is missing modality " + m);
    }
    Var v_m = encode_stream(tape, model, m, it->second);
    enc.v_m[m] = v_m;
    parts.push_back(v_m);
    enc.s_m[m] = detect_semantics(tape, model, m, v_m);
  }
  enc.v = parts.size() == 1 ? parts.front() : tape.concat(parts);
  return enc;
}

Var detector_loss(Tape& tape, const Model& model, const VideoEncoding& enc,
                  const Tensor& labels, double alpha) {
  if (labels.size() != model.dims.attribute_count) {
    throw DimensionError("label vector length does not match attribute count");
  }
  Var acc;
  for (const std::string& m : model.dims.modalities) {
    Var term = tape.bce_sum(enc.s_m.at(m), labels);
    acc = acc.valid() ? tape.add(acc, term) : term;
  }
  Var loss = tape.scale(acc, 1.0 / static_cast<double>(model.dims.modalities.size()));
  if (alpha != 0.0) {
    Var l2;
    for (const std::string& name : model.params.names()) {
      if (!is_encoder_weight(name)) continue;
      Var sq = tape.sum_squares(tape.param(model.params, name));
      l2 = l2.valid() ? tape.add(l2, sq) : sq;
    }
    loss = tape.add(loss, tape.scale(l2, alpha));
  }
  return loss;
}

std::vector<Var> attention_semantics(const Model& model, const VideoEncoding& enc) {
  std::vector<Var> out;
  for (const std::string& m : model.dims.attn_modalities) out.push_back(enc.s_m.at(m));
  return out;
}

}  // namespace msan

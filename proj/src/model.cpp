#include "msan/model.hpp"

#include <algorithm>

namespace msan {

namespace {

void add_lstm_layer(std::vector<ParamInfo>& out, const std::string& prefix,
                    std::size_t in_dim, std::size_t hidden) {
  for (const char* gate : {"i", "f", "o", "c"}) {
    out.push_back({prefix + ".W" + gate, {hidden, in_dim}, ParamKind::Weight});
    out.push_back({prefix + ".U" + gate, {hidden, hidden}, ParamKind::Weight});
    out.push_back({prefix + ".b" + gate, {hidden}, ParamKind::Bias});
  }
}

}  // namespace

std::vector<ParamInfo> param_layout(const ModelDims& dims) {
  if (dims.modalities.empty()) throw UsageError("model needs at least one modality");
  if (dims.vocab_size < 5) throw UsageError("model vocabulary is empty");
  for (const std::string& m : dims.modalities) {
    if (!dims.stream_dims.count(m)) throw UsageError("missing stream dim for " + m);
  }

  std::vector<ParamInfo> out;
  for (const std::string& m : dims.modalities) {
    add_lstm_layer(out, "enc." + m + ".l1", dims.stream_dims.at(m), dims.n_enc);
    add_lstm_layer(out, "enc." + m + ".l2", dims.n_enc, dims.n_enc);
    out.push_back({"det." + m + ".W1", {dims.n_det, dims.n_enc}, ParamKind::Weight});
    out.push_back({"det." + m + ".b1", {dims.n_det}, ParamKind::Bias});
    out.push_back({"det." + m + ".W2", {dims.attribute_count, dims.n_det}, ParamKind::Weight});
    out.push_back({"det." + m + ".b2", {dims.attribute_count}, ParamKind::Bias});
  }
  for (const char* gate : {"i", "f", "o", "c"}) {
    std::string p = std::string("dec.") + gate;
    out.push_back({p + ".Wa", {dims.n_h, dims.n_f}, ParamKind::Weight});
    out.push_back({p + ".Wb", {dims.n_f, dims.attribute_count}, ParamKind::Weight});
    out.push_back({p + ".Wc", {dims.n_f, dims.n_x}, ParamKind::Weight});
    out.push_back({p + ".Ua", {dims.n_h, dims.n_f}, ParamKind::Weight});
    out.push_back({p + ".Ub", {dims.n_f, dims.attribute_count}, ParamKind::Weight});
    out.push_back({p + ".Uc", {dims.n_f, dims.n_h}, ParamKind::Weight});
    out.push_back({p + ".b", {dims.n_h}, ParamKind::Bias});
  }
  out.push_back({"dec.C", {dims.n_h, dims.encoding_dim()}, ParamKind::Weight});
  out.push_back({"attn.W", {dims.n_a, dims.n_h}, ParamKind::Weight});
  out.push_back({"attn.U", {dims.n_a, dims.attribute_count}, ParamKind::Weight});
  out.push_back({"attn.v", {dims.n_a}, ParamKind::Weight});
  out.push_back({"emb.E", {dims.vocab_size, dims.n_x}, ParamKind::Embedding});
  out.push_back({"out.W", {dims.vocab_size, dims.n_h}, ParamKind::Weight});
  out.push_back({"out.b", {dims.vocab_size}, ParamKind::Bias});
  return out;
}

Model build_model(ModelDims dims, Vocabulary vocab, AttributeVocabulary attr_vocab) {
  if (dims.attribute_count != attr_vocab.size()) {
    throw UsageError("attribute_count does not match the attribute vocabulary");
  }
  dims.vocab_size = vocab.size();
  if (dims.attn_modalities.empty()) {
    dims.attn_modalities = dims.modalities;
  } else {
    for (const std::string& m : dims.attn_modalities) {
      if (std::find(dims.modalities.begin(), dims.modalities.end(), m) == dims.modalities.end()) {
        throw UsageError("attention modality not among data modalities: " + m);
      }
    }
    // keep canonical ordering regardless of how the subset was written
    std::vector<std::string> ordered;
    for (const std::string& m : dims.modalities) {
      if (std::find(dims.attn_modalities.begin(), dims.attn_modalities.end(), m) !=
          dims.attn_modalities.end()) {
        ordered.push_back(m);
      }
    }
    dims.attn_modalities = std::move(ordered);
  }
  Model model{std::move(dims), std::move(vocab), std::move(attr_vocab), ParamStore()};
  for (const ParamInfo& info : param_layout(model.dims)) {
    model.params.create(info.name, Tensor::zeros(info.shape));
  }
  return model;
}

bool is_encoder_weight(const std::string& name) {
  if (name.rfind("enc.", 0) != 0 && name.rfind("det.", 0) != 0) return false;
  auto pos = name.find_last_of('.');
  char leaf = name[pos + 1];
  return leaf == 'W' || leaf == 'U';
}

}  // namespace msan

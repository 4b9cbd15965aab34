#pragma once

#include <map>
#include <string>
#include <vector>

#include "msan/corpus.hpp"
#include "msan/tape.hpp"

namespace msan {

// Architecture dimensions shared by the encoder, detector and decoder.
struct ModelDims {
  std::vector<std::string> modalities;            // data streams, canonical order
  std::map<std::string, std::size_t> stream_dims; // input dim per modality
  std::vector<std::string> attn_modalities;       // semantics fed to the attention unit
  bool use_semantic_attention = true;             // false: S_t fixed to the uniform vector

  std::size_t n_enc = 32;  // encoder LSTM hidden size
  std::size_t n_det = 32;  // detector MLP hidden width
  std::size_t attribute_count = 8;   // K
  std::size_t n_h = 32;    // decoder hidden size
  std::size_t n_f = 32;    // factorization inner dimension
  std::size_t n_x = 32;    // word embedding size
  std::size_t n_a = 32;    // attention unit width
  std::size_t vocab_size = 0;

  std::size_t encoding_dim() const { return modalities.size() * n_enc; }
};

enum class ParamKind { Weight, Bias, Embedding };

struct ParamInfo {
  std::string name;
  std::vector<std::size_t> shape;
  ParamKind kind;
};

// Deterministic parameter layout; initialization and checkpointing walk it
// in this order.
std::vector<ParamInfo> param_layout(const ModelDims& dims);

struct Model {
  ModelDims dims;
  Vocabulary vocab;
  AttributeVocabulary attr_vocab;
  ParamStore params;
};

// Registers every parameter as zeros.
Model build_model(ModelDims dims, Vocabulary vocab, AttributeVocabulary attr_vocab);

// True for the parameters covered by the detector loss L2 term: encoder and
// detector weight matrices, excluding biases.
bool is_encoder_weight(const std::string& name);

}  // namespace msan

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "msan/decoder.hpp"
#include "msan/model.hpp"

namespace msan {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t max_epochs = 20;
  double clip_norm = 5.0;
  double dropout = 0.5;
  std::size_t patience = 3;
  bool early_stop = true;
  double alpha = 1e-4;  // detector loss L2 weight
  std::uint64_t seed = 42;
  std::size_t beam_size = 5;
  double init_range = 0.05;
  std::size_t n_h = 512;
  std::size_t n_f = 512;
  std::size_t n_enc = 512;
  std::size_t n_det = 0;  // 0: same as n_enc
  std::size_t n_x = 300;
  std::size_t n_a = 0;  // 0: same as n_h
  std::size_t attribute_k = 300;
  std::size_t batch_size = 1;
  std::size_t max_caption_len = 16;
  Precision precision = Precision::F64;
  std::vector<std::string> attn_modalities;  // empty: all data modalities
  bool use_semantic_attention = true;
  bool beam_length_norm = false;
  std::string embedding_file;
  std::string stopword_file;

  // Small dimensions and a learning rate suited to the synthetic corpora.
  static TrainConfig synthetic_preset();

  // Applies one `key = value` assignment; unknown keys throw ParseError.
  void apply(const std::string& key, const std::string& value);

  std::size_t resolved_n_det() const { return n_det == 0 ? n_enc : n_det; }
  std::size_t resolved_n_a() const { return n_a == 0 ? n_h : n_a; }
};

// Flat key/value file; '#' starts a comment. A `preset = <name>` line is
// applied first, then the remaining keys in file order.
TrainConfig load_train_config(const std::string& path);

// Parameter initialization: weights and embeddings uniform in
// [-init_range, init_range] from a SplitMix64 stream, biases zero. An
// embedding file (lines of `word f1 .. fn`) overrides matching rows.
void init_params(Model& model, const TrainConfig& config);

// Global-norm gradient clipping; scales in place, returns the pre-clip norm.
double clip_gradients(GradientMap& grads, double threshold);

// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double learning_rate) : lr_(learning_rate) {}

  void step(ParamStore& params, const GradientMap& grads, Precision precision = Precision::F64);
  std::size_t steps_taken() const { return t_; }

 private:
  double lr_;
  std::size_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss1 = 0.0;
  double train_loss2 = 0.0;
  double val_loss = 0.0;
  double learning_rate = 0.0;
  double seconds = 0.0;
};

struct Checkpoint {
  Model model;
  TrainConfig config;
  std::size_t epoch = 0;
  double val_loss = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

// Joint optimization of the detector and captioning losses. Deterministic
// for a fixed (corpus, config); returns the best-validation checkpoint.
TrainResult train(const Corpus& train_corpus, const Corpus& val_corpus,
                  const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

// Mean joint loss over a corpus with dropout disabled; loss2 averaged over
// every reference caption.
double validation_loss(const Model& model, const Corpus& corpus, const TrainConfig& config);

// Checkpoint container: versioned JSON, bit-exact for finite doubles.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace msan

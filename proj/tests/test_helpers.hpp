#pragma once

#include <string>
#include <vector>

#include "msan/model.hpp"
#include "msan/rng.hpp"

namespace msan::test {

// A model with every parameter drawn uniformly from [-range, range];
// big enough values to make gates and attention non-degenerate.
inline Model make_random_model(ModelDims dims, std::uint64_t seed, double range = 0.4) {
  std::vector<std::string> words;
  for (std::size_t i = 4; i < 4 + dims.vocab_size; ++i) words.push_back("w" + std::to_string(i));
  Vocabulary vocab = Vocabulary::from_tokens(words);
  std::vector<std::string> attrs;
  for (std::size_t i = 0; i < dims.attribute_count; ++i) attrs.push_back("attr" + std::to_string(i));
  Model model = build_model(std::move(dims), std::move(vocab),
                            AttributeVocabulary::from_words(std::move(attrs)));
  SplitMix64 rng(seed);
  for (const std::string& name : model.params.names()) {
    Tensor& t = model.params.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_uniform(-range, range);
  }
  return model;
}

inline ModelDims small_dims(std::size_t n_modalities = 2) {
  ModelDims dims;
  const std::vector<std::string> all = {"frames", "clips", "flow"};
  for (std::size_t i = 0; i < n_modalities; ++i) dims.modalities.push_back(all[i]);
  for (const std::string& m : dims.modalities) dims.stream_dims[m] = 5;
  dims.n_enc = 6;
  dims.n_det = 6;
  dims.attribute_count = 4;
  dims.n_h = 8;
  dims.n_f = 5;
  dims.n_x = 6;
  dims.n_a = 8;
  dims.vocab_size = 4;  // content words; reserved ids are added on top
  return dims;
}

inline VideoRecord random_record(const ModelDims& dims, std::uint64_t seed,
                                 std::size_t frames = 3) {
  SplitMix64 rng(seed);
  VideoRecord rec;
  rec.id = "r" + std::to_string(seed);
  for (const std::string& m : dims.modalities) {
    FeatureSequence seq;
    for (std::size_t t = 0; t < frames; ++t) {
      std::vector<double> frame(dims.stream_dims.at(m));
      for (double& x : frame) x = rng.next_uniform(-1.0, 1.0);
      seq.push_back(std::move(frame));
    }
    rec.streams[m] = std::move(seq);
  }
  rec.captions = {"w4 w5 w6"};
  return rec;
}

}  // namespace msan::test

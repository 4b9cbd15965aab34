#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "msan/errors.hpp"
#include "msan/tensor.hpp"

namespace msan {

using TokenSeq = std::vector<std::string>;
// Time-ordered feature vectors for one modality of one video.
using FeatureSequence = std::vector<std::vector<double>>;

// The three stream keys a dataset file may carry, in the order their
// encodings are concatenated.
inline const std::vector<std::string>& canonical_modalities() {
  static const std::vector<std::string> order = {"frames", "clips", "flow"};
  return order;
}

struct VideoRecord {
  std::string id;
  std::map<std::string, FeatureSequence> streams;
  std::vector<std::string> captions;

  bool operator==(const VideoRecord&) const = default;
};

struct Corpus {
  std::vector<VideoRecord> records;

  bool empty() const { return records.empty(); }
  std::size_t size() const { return records.size(); }
  // Stream keys present (uniform across records), in canonical order.
  std::vector<std::string> modalities() const;
  std::map<std::string, std::size_t> stream_dims() const;

  bool operator==(const Corpus&) const = default;
};

// Lowercase, strip punctuation, split on whitespace.
TokenSeq tokenize(const std::string& caption);

// Word vocabulary with reserved ids 0..3 and content tokens ordered by
// descending frequency (lexicographic tie-break).
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  Vocabulary();
  static Vocabulary build(const std::vector<const Corpus*>& corpora);
  static Vocabulary from_tokens(const std::vector<std::string>& content_tokens);

  int id_of(const std::string& token) const;  // kUnk when absent
  const std::string& token(int id) const;
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const TokenSeq& tokens) const;
  TokenSeq decode(const std::vector<int>& ids) const;

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
};

// Top-K non-stopword tokens by training+validation frequency.
class AttributeVocabulary {
 public:
  AttributeVocabulary() = default;
  static AttributeVocabulary build(const std::vector<const Corpus*>& corpora,
                                   std::size_t k, const std::set<std::string>& stopwords);
  static AttributeVocabulary from_words(std::vector<std::string> words);

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  // -1 when the word is not an attribute.
  int index_of(const std::string& word) const;

  bool operator==(const AttributeVocabulary& o) const { return words_ == o.words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> index_;
};

const std::set<std::string>& default_stopwords();
std::set<std::string> load_stopwords(const std::string& path);

// y_k = 1 iff attribute word k appears in any caption of the record.
Tensor attribute_labels(const VideoRecord& record, const AttributeVocabulary& vocab);

struct SyntheticSpec {
  std::size_t n_videos = 100;
  std::size_t n_attributes = 20;  // latent attribute count, >= 2
  std::vector<std::string> modalities = {"frames", "clips", "flow"};
  std::size_t feature_dim = 16;
  std::size_t seq_len = 8;
  double noise = 0.1;
  int captions_per_video = 1;  // 1 or 2 template variants
  std::uint64_t seed = 1;
};

// Deterministic template-grammar corpus. Each video draws one noun and one
// verb attribute; modality streams are noisy linear images of the latent
// indicator with complementary visibility (frames see nouns, flow sees
// verbs, clips see everything attenuated).
Corpus generate_synthetic_corpus(const SyntheticSpec& spec);

struct CorpusSplits {
  Corpus train, val, test;
};
CorpusSplits split_corpus(const Corpus& corpus, double train_frac = 0.6, double val_frac = 0.2);

Corpus load_corpus(const std::string& path);
void save_corpus(const Corpus& corpus, const std::string& path);

}  // namespace msan

#include "msan/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "msan/rng.hpp"

namespace msan {

using json = nlohmann::json;

std::vector<std::string> Corpus::modalities() const {
  std::vector<std::string> out;
  if (records.empty()) return out;
  for (const std::string& m : canonical_modalities()) {
    if (records.front().streams.count(m)) out.push_back(m);
  }
  return out;
}

std::map<std::string, std::size_t> Corpus::stream_dims() const {
  std::map<std::string, std::size_t> dims;
  if (records.empty()) return dims;
  for (const auto& [m, seq] : records.front().streams) {
    dims[m] = seq.empty() ? 0 : seq.front().size();
  }
  return dims;
}

TokenSeq tokenize(const std::string& caption) {
  std::string cleaned;
  cleaned.reserve(caption.size());
  for (unsigned char ch : caption) {
    if (std::isalnum(ch) || ch >= 0x80) {
      cleaned.push_back(static_cast<char>(std::tolower(ch)));
    } else if (std::isspace(ch)) {
      cleaned.push_back(' ');
    }
    // other punctuation is dropped without inserting a break
  }
  TokenSeq tokens;
  std::istringstream is(cleaned);
  std::string tok;
  while (is >> tok) tokens.push_back(tok);
  if (tokens.empty()) throw UsageError("caption tokenizes to nothing: \"" + caption + "\"");
  return tokens;
}

namespace {

// Descending frequency, lexicographic tie-break.
std::vector<std::string> ranked_tokens(const std::map<std::string, std::size_t>& freq) {
  std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> out;
  out.reserve(items.size());
  for (auto& [tok, n] : items) out.push_back(tok);
  return out;
}

std::map<std::string, std::size_t> count_tokens(const std::vector<const Corpus*>& corpora) {
  std::map<std::string, std::size_t> freq;
  for (const Corpus* c : corpora) {
    for (const VideoRecord& r : c->records) {
      for (const std::string& caption : r.captions) {
        for (const std::string& tok : tokenize(caption)) ++freq[tok];
      }
    }
  }
  return freq;
}

}  // namespace

Vocabulary::Vocabulary() {
  tokens_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
  for (std::size_t i = 0; i < tokens_.size(); ++i) ids_[tokens_[i]] = static_cast<int>(i);
}

Vocabulary Vocabulary::build(const std::vector<const Corpus*>& corpora) {
  return from_tokens(ranked_tokens(count_tokens(corpora)));
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& content_tokens) {
  Vocabulary v;
  for (const std::string& tok : content_tokens) {
    if (v.ids_.count(tok)) throw UsageError("duplicate vocabulary token: " + tok);
    v.ids_[tok] = static_cast<int>(v.tokens_.size());
    v.tokens_.push_back(tok);
  }
  return v;
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw UsageError("token id out of range: " + std::to_string(id));
  }
  return tokens_[id];
}

std::vector<int> Vocabulary::encode(const TokenSeq& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const std::string& tok : tokens) ids.push_back(id_of(tok));
  return ids;
}

TokenSeq Vocabulary::decode(const std::vector<int>& ids) const {
  TokenSeq tokens;
  tokens.reserve(ids.size());
  for (int id : ids) tokens.push_back(token(id));
  return tokens;
}

AttributeVocabulary AttributeVocabulary::build(const std::vector<const Corpus*>& corpora,
                                               std::size_t k,
                                               const std::set<std::string>& stopwords) {
  if (k < 1) throw UsageError("attribute vocabulary size must be >= 1");
  std::map<std::string, std::size_t> freq = count_tokens(corpora);
  for (const std::string& sw : stopwords) freq.erase(sw);
  std::vector<std::string> ranked = ranked_tokens(freq);
  if (ranked.size() < k) {
    throw UsageError("insufficient vocabulary: " + std::to_string(ranked.size()) +
                     " eligible words, need " + std::to_string(k));
  }
  ranked.resize(k);
  return from_words(std::move(ranked));
}

AttributeVocabulary AttributeVocabulary::from_words(std::vector<std::string> words) {
  AttributeVocabulary v;
  v.words_ = std::move(words);
  for (std::size_t i = 0; i < v.words_.size(); ++i) {
    v.index_[v.words_[i]] = static_cast<int>(i);
  }
  return v;
}

int AttributeVocabulary::index_of(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? -1 : it->second;
}

const std::set<std::string>& default_stopwords() {
  static const std::set<std::string> words = {
      "a",    "an",    "the",  "is",    "are",  "was",   "were", "be",    "been",
      "being", "am",   "to",   "of",    "in",   "on",    "at",   "with",  "and",
      "or",   "but",   "it",   "its",   "this", "that",  "these", "those", "he",
      "she",  "they",  "we",   "you",   "i",    "as",    "by",   "for",   "from",
      "has",  "have",  "had",  "do",    "does", "did",   "not",  "no",    "so",
      "too",  "very",  "can",  "will",  "there", "here", "his",  "her",   "their",
      "them", "him",   "then", "s",     "t",    "up",    "down", "out",   "into",
  };
  return words;
}

std::set<std::string> load_stopwords(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open stopword list: " + path);
  std::set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (!line.empty()) words.insert(line);
  }
  return words;
}

Tensor attribute_labels(const VideoRecord& record, const AttributeVocabulary& vocab) {
  Tensor y({vocab.size()});
  for (const std::string& caption : record.captions) {
    for (const std::string& tok : tokenize(caption)) {
      int idx = vocab.index_of(tok);
      if (idx >= 0) y[idx] = 1.0;
    }
  }
  return y;
}

namespace {

const std::vector<std::string>& noun_pool() {
  static const std::vector<std::string> pool = {
      "boy",   "girl",  "dog",    "cat",   "man",   "woman", "bird",  "horse",
      "baby",  "monkey", "panda", "chef",  "robot", "lion",  "tiger", "farmer",
  };
  return pool;
}

const std::vector<std::string>& verb_pool() {
  static const std::vector<std::string> pool = {
      "singing", "running",  "jumping", "playing", "eating",  "sleeping",
      "dancing", "walking",  "cooking", "swimming", "drawing", "riding",
      "reading", "driving",  "climbing", "laughing",
  };
  return pool;
}

}  // namespace

Corpus generate_synthetic_corpus(const SyntheticSpec& spec) {
  if (spec.n_attributes < 2) throw UsageError("synthetic corpus needs at least 2 attributes");
  if (spec.modalities.empty()) throw UsageError("synthetic corpus needs at least one modality");
  if (spec.captions_per_video < 1 || spec.captions_per_video > 2) {
    throw UsageError("captions_per_video must be 1 or 2");
  }
  for (const std::string& m : spec.modalities) {
    if (std::find(canonical_modalities().begin(), canonical_modalities().end(), m) ==
        canonical_modalities().end()) {
      throw UsageError("unknown modality: " + m);
    }
  }

  std::size_t n_nouns = (spec.n_attributes + 1) / 2;
  std::size_t n_verbs = spec.n_attributes - n_nouns;
  if (n_nouns > noun_pool().size() || n_verbs > verb_pool().size()) {
    throw UsageError("synthetic attribute count exceeds the built-in word pools");
  }
  std::vector<std::string> attrs(noun_pool().begin(), noun_pool().begin() + n_nouns);
  attrs.insert(attrs.end(), verb_pool().begin(), verb_pool().begin() + n_verbs);
  const std::size_t k = spec.n_attributes;

  SplitMix64 rng(spec.seed);

  // Per-attribute visibility gain for each modality: frames carry nouns,
  // flow carries verbs, clips carry everything attenuated.
  auto visibility = [&](const std::string& modality, std::size_t attr) -> double {
    bool is_noun = attr < n_nouns;
    if (modality == "frames") return is_noun ? 1.0 : 0.0;
    if (modality == "flow") return is_noun ? 0.0 : 1.0;
    return 0.6;  // clips
  };

  // One projection per modality, drawn before any video so the mapping is a
  // corpus-level constant.
  std::map<std::string, std::vector<double>> projections;  // d*k row-major
  for (const std::string& m : canonical_modalities()) {
    if (std::find(spec.modalities.begin(), spec.modalities.end(), m) == spec.modalities.end()) {
      continue;
    }
    std::vector<double> p(spec.feature_dim * k);
    for (double& v : p) v = rng.next_uniform(-1.0, 1.0);
    projections[m] = std::move(p);
  }

  Corpus corpus;
  corpus.records.reserve(spec.n_videos);
  for (std::size_t vi = 0; vi < spec.n_videos; ++vi) {
    std::size_t noun = rng.next_below(n_nouns);
    std::size_t verb = n_nouns + rng.next_below(n_verbs);

    std::vector<double> indicator(k, 0.0);
    indicator[noun] = 1.0;
    indicator[verb] = 1.0;

    VideoRecord rec;
    rec.id = "synth" + std::to_string(vi);
    for (const auto& [m, proj] : projections) {
      FeatureSequence seq(spec.seq_len, std::vector<double>(spec.feature_dim, 0.0));
      std::vector<double> masked(k);
      for (std::size_t a = 0; a < k; ++a) masked[a] = indicator[a] * visibility(m, a);
      for (std::size_t t = 0; t < spec.seq_len; ++t) {
        for (std::size_t d = 0; d < spec.feature_dim; ++d) {
          double acc = 0.0;
          for (std::size_t a = 0; a < k; ++a) acc += proj[d * k + a] * masked[a];
          seq[t][d] = acc + spec.noise * rng.next_uniform(-1.0, 1.0);
        }
      }
      rec.streams[m] = std::move(seq);
    }

    rec.captions.push_back("a " + attrs[noun] + " is " + attrs[verb]);
    if (spec.captions_per_video == 2) {
      rec.captions.push_back("the " + attrs[noun] + " is " + attrs[verb]);
    }
    corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

CorpusSplits split_corpus(const Corpus& corpus, double train_frac, double val_frac) {
  if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1.0) {
    throw UsageError("invalid split fractions");
  }
  CorpusSplits splits;
  std::size_t n = corpus.size();
  std::size_t n_train = static_cast<std::size_t>(train_frac * n + 0.5);
  std::size_t n_val = static_cast<std::size_t>(val_frac * n + 0.5);
  n_train = std::min(n_train, n);
  n_val = std::min(n_val, n - n_train);
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train) {
      splits.train.records.push_back(corpus.records[i]);
    } else if (i < n_train + n_val) {
      splits.val.records.push_back(corpus.records[i]);
    } else {
      splits.test.records.push_back(corpus.records[i]);
    }
  }
  return splits;
}

namespace {

void validate_record(const VideoRecord& rec, const std::vector<std::string>& expected_keys,
                     std::map<std::string, std::size_t>& dims, long line) {
  if (rec.streams.empty()) throw SchemaError("record without streams (line " + std::to_string(line) + ")");
  if (rec.captions.empty()) throw SchemaError("record without captions (line " + std::to_string(line) + ")");

  std::vector<std::string> keys;
  for (const auto& [m, seq] : rec.streams) keys.push_back(m);
  if (!expected_keys.empty() && keys != expected_keys) {
    throw SchemaError("stream keys differ between records (line " + std::to_string(line) + ")");
  }
  for (const auto& [m, seq] : rec.streams) {
    if (std::find(canonical_modalities().begin(), canonical_modalities().end(), m) ==
        canonical_modalities().end()) {
      throw SchemaError("unknown stream key \"" + m + "\" (line " + std::to_string(line) + ")");
    }
    if (seq.empty()) {
      throw SchemaError("empty feature sequence for \"" + m + "\" (line " + std::to_string(line) + ")");
    }
    for (const auto& frame : seq) {
      if (frame.empty()) {
        throw SchemaError("empty feature vector in \"" + m + "\" (line " + std::to_string(line) + ")");
      }
      auto it = dims.find(m);
      if (it == dims.end()) {
        dims[m] = frame.size();
      } else if (it->second != frame.size()) {
        throw SchemaError("feature dimension for \"" + m + "\" changed from " +
                          std::to_string(it->second) + " to " + std::to_string(frame.size()) +
                          " (line " + std::to_string(line) + ")");
      }
    }
  }
}

}  // namespace

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open dataset: " + path);
  Corpus corpus;
  std::map<std::string, std::size_t> dims;
  std::vector<std::string> expected_keys;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
    }
    if (!j.is_object()) throw ParseError("expected a JSON object", line_no);
    if (!j.contains("id") || !j["id"].is_string()) {
      throw ParseError("missing or non-string \"id\"", line_no);
    }
    if (!j.contains("captions") || !j["captions"].is_array()) {
      throw ParseError("missing or non-array \"captions\"", line_no);
    }
    if (!j.contains("streams") || !j["streams"].is_object()) {
      throw ParseError("missing or non-object \"streams\"", line_no);
    }
    VideoRecord rec;
    rec.id = j["id"].get<std::string>();
    for (const auto& c : j["captions"]) {
      if (!c.is_string()) throw ParseError("non-string caption", line_no);
      rec.captions.push_back(c.get<std::string>());
    }
    for (const auto& [key, value] : j["streams"].items()) {
      if (!value.is_array()) throw ParseError("stream \"" + key + "\" is not an array", line_no);
      FeatureSequence seq;
      for (const auto& frame : value) {
        if (!frame.is_array()) throw ParseError("frame in \"" + key + "\" is not an array", line_no);
        std::vector<double> f;
        f.reserve(frame.size());
        for (const auto& x : frame) {
          if (!x.is_number()) throw ParseError("non-numeric feature in \"" + key + "\"", line_no);
          f.push_back(x.get<double>());
        }
        seq.push_back(std::move(f));
      }
      rec.streams[key] = std::move(seq);
    }
    validate_record(rec, expected_keys, dims, line_no);
    if (expected_keys.empty()) {
      for (const auto& [m, seq] : rec.streams) expected_keys.push_back(m);
    }
    corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write dataset: " + path);
  for (const VideoRecord& rec : corpus.records) {
    json j;
    j["id"] = rec.id;
    j["captions"] = rec.captions;
    json streams = json::object();
    for (const auto& [m, seq] : rec.streams) streams[m] = seq;
    j["streams"] = std::move(streams);
    out << j.dump() << '\n';
  }
  if (!out) throw UsageError("failed writing dataset: " + path);
}

}  // namespace msan

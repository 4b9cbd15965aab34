#include "msan/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "msan/decoder.hpp"

namespace msan {

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const TokenSeq& tokens, std::size_t n) {
  NgramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + n)];
  }
  return counts;
}

}  // namespace

BleuSegmentStats bleu_segment_stats(const TokenSeq& candidate,
                                    const std::vector<TokenSeq>& references) {
  if (references.empty()) throw UsageError("bleu needs at least one reference per segment");
  BleuSegmentStats stats;
  stats.candidate_len = candidate.size();

  std::size_t best_len = references.front().size();
  for (const TokenSeq& ref : references) {
    auto diff = [&](std::size_t len) {
      return len > candidate.size() ? len - candidate.size() : candidate.size() - len;
    };
    if (diff(ref.size()) < diff(best_len) || (diff(ref.size()) == diff(best_len) &&
                                              ref.size() < best_len)) {
      best_len = ref.size();
    }
  }
  stats.effective_ref_len = best_len;

  for (int order = 1; order <= kMaxNgramOrder; ++order) {
    NgramCounts cand = count_ngrams(candidate, order);
    NgramCounts max_ref;
    for (const TokenSeq& ref : references) {
      for (const auto& [ngram, count] : count_ngrams(ref, order)) {
        std::size_t& slot = max_ref[ngram];
        slot = std::max(slot, count);
      }
    }
    std::size_t matched = 0, total = 0;
    for (const auto& [ngram, count] : cand) {
      total += count;
      auto it = max_ref.find(ngram);
      if (it != max_ref.end()) matched += std::min(count, it->second);
    }
    stats.matched[order - 1] = matched;
    stats.total[order - 1] = total;
  }
  return stats;
}

double bleu_from_stats(const std::vector<BleuSegmentStats>& stats, int max_order) {
  if (max_order < 1 || max_order > kMaxNgramOrder) {
    throw UsageError("bleu order must be in 1..4");
  }
  if (stats.empty()) throw UsageError("bleu over an empty candidate list");
  std::size_t c = 0, r = 0;
  std::array<std::size_t, kMaxNgramOrder> matched{}, total{};
  for (const BleuSegmentStats& s : stats) {
    c += s.candidate_len;
    r += s.effective_ref_len;
    for (int i = 0; i < kMaxNgramOrder; ++i) {
      matched[i] += s.matched[i];
      total[i] += s.total[i];
    }
  }
  if (c == 0) return 0.0;
  double log_precision = 0.0;
  for (int i = 0; i < max_order; ++i) {
    if (matched[i] == 0 || total[i] == 0) return 0.0;
    log_precision += std::log(static_cast<double>(matched[i]) / static_cast<double>(total[i]));
  }
  log_precision /= max_order;
  double bp = std::min(0.0, 1.0 - static_cast<double>(r) / static_cast<double>(c));
  return std::exp(log_precision + bp);
}

double bleu(const std::vector<TokenSeq>& candidates,
            const std::vector<std::vector<TokenSeq>>& references, int max_order) {
  if (candidates.empty()) throw UsageError("bleu over an empty candidate list");
  if (candidates.size() != references.size()) {
    throw UsageError("bleu: candidate and reference counts differ");
  }
  std::vector<BleuSegmentStats> stats;
  stats.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    stats.push_back(bleu_segment_stats(candidates[i], references[i]));
  }
  return bleu_from_stats(stats, max_order);
}

namespace {

constexpr double kCiderSigma = 6.0;
constexpr double kCiderScale = 10.0;

struct TfIdfVector {
  std::array<std::map<std::vector<std::string>, double>, kMaxNgramOrder> weights;
  std::array<double, kMaxNgramOrder> norm{};
  std::size_t length = 0;
};

TfIdfVector tfidf_vector(const TokenSeq& tokens,
                         const std::map<std::vector<std::string>, std::size_t>& doc_freq,
                         double log_num_docs) {
  TfIdfVector vec;
  vec.length = tokens.size();
  for (int order = 1; order <= kMaxNgramOrder; ++order) {
    for (const auto& [ngram, tf] : count_ngrams(tokens, order)) {
      auto it = doc_freq.find(ngram);
      double df = it == doc_freq.end() ? 0.0 : static_cast<double>(it->second);
      double idf = log_num_docs - std::log(std::max(1.0, df));
      double w = static_cast<double>(tf) * idf;
      vec.weights[order - 1][ngram] = w;
      vec.norm[order - 1] += w * w;
    }
    vec.norm[order - 1] = std::sqrt(vec.norm[order - 1]);
  }
  return vec;
}

// Clipped TF-IDF cosine with the length-difference Gaussian penalty.
double cider_similarity(const TfIdfVector& cand, const TfIdfVector& ref) {
  double delta = static_cast<double>(cand.length) - static_cast<double>(ref.length);
  double penalty = std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
  double score = 0.0;
  for (int n = 0; n < kMaxNgramOrder; ++n) {
    double val = 0.0;
    for (const auto& [ngram, w_cand] : cand.weights[n]) {
      auto it = ref.weights[n].find(ngram);
      if (it != ref.weights[n].end()) val += std::min(w_cand, it->second) * it->second;
    }
    if (cand.norm[n] != 0.0 && ref.norm[n] != 0.0) val /= cand.norm[n] * ref.norm[n];
    score += val * penalty;
  }
  return score / kMaxNgramOrder;
}

}  // namespace

std::vector<double> cider_d_per_video(const std::vector<TokenSeq>& candidates,
                                      const std::vector<std::vector<TokenSeq>>& references) {
  if (candidates.empty()) throw UsageError("cider_d over an empty candidate list");
  if (candidates.size() != references.size()) {
    throw UsageError("cider_d: candidate and reference counts differ");
  }
  // document frequency over reference sets (one document per video)
  std::map<std::vector<std::string>, std::size_t> doc_freq;
  for (const auto& refs : references) {
    if (refs.empty()) throw UsageError("cider_d needs at least one reference per video");
    std::set<std::vector<std::string>> seen;
    for (const TokenSeq& ref : refs) {
      for (int order = 1; order <= kMaxNgramOrder; ++order) {
        for (const auto& [ngram, tf] : count_ngrams(ref, order)) seen.insert(ngram);
      }
    }
    for (const auto& ngram : seen) ++doc_freq[ngram];
  }
  double log_num_docs = std::log(static_cast<double>(references.size()));

  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    TfIdfVector cand = tfidf_vector(candidates[i], doc_freq, log_num_docs);
    double total = 0.0;
    for (const TokenSeq& ref : references[i]) {
      total += cider_similarity(cand, tfidf_vector(ref, doc_freq, log_num_docs));
    }
    scores.push_back(kCiderScale * total / static_cast<double>(references[i].size()));
  }
  return scores;
}

double cider_d(const std::vector<TokenSeq>& candidates,
               const std::vector<std::vector<TokenSeq>>& references) {
  std::vector<double> scores = cider_d_per_video(candidates, references);
  double total = 0.0;
  for (double s : scores) total += s;
  return total / static_cast<double>(scores.size());
}

namespace {

std::size_t evaluation_threads(std::size_t jobs) {
  std::size_t n = std::thread::hardware_concurrency();
  if (n == 0) n = 1;
  if (const char* env = std::getenv("MSAN_THREADS")) {
    char* end = nullptr;
    long parsed = std::strtol(env, &end, 10);
    if (end == env || parsed < 1) throw UsageError("MSAN_THREADS must be a positive integer");
    n = static_cast<std::size_t>(parsed);
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

}  // namespace

EvaluationReport evaluate(const Checkpoint& checkpoint, const Corpus& corpus,
                          std::size_t beam_size) {
  if (corpus.empty()) throw UsageError("evaluate on an empty corpus");
  const Model& model = checkpoint.model;
  std::size_t n = corpus.size();

  std::vector<TokenSeq> candidates(n);
  std::vector<double> logprobs(n);
  std::vector<std::vector<TokenSeq>> references(n);

  // per-video decoding is read-only on the model; results land by index
  std::size_t workers = evaluation_threads(n);
  std::atomic<std::size_t> cursor{0};
  auto worker = [&]() {
    for (;;) {
      std::size_t i = cursor.fetch_add(1);
      if (i >= n) return;
      const VideoRecord& rec = corpus.records[i];
      EncodedValues ev = encode_values(model, rec);
      BeamResult beam = beam_search(model, ev, beam_size, checkpoint.config.max_caption_len,
                                    checkpoint.config.beam_length_norm);
      candidates[i] = model.vocab.decode(beam.tokens);
      logprobs[i] = beam.logprob;
      for (const std::string& caption : rec.captions) references[i].push_back(tokenize(caption));
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  EvaluationReport report;
  report.beam_size = beam_size;
  report.candidate_count = n;
  std::vector<BleuSegmentStats> stats(n);
  std::vector<double> cider_scores = cider_d_per_video(candidates, references);
  for (std::size_t i = 0; i < n; ++i) {
    stats[i] = bleu_segment_stats(candidates[i], references[i]);
    report.reference_count += references[i].size();

    VideoScore vs;
    vs.id = corpus.records[i].id;
    std::ostringstream caption;
    for (std::size_t t = 0; t < candidates[i].size(); ++t) {
      if (t) caption << ' ';
      caption << candidates[i][t];
    }
    vs.caption = caption.str();
    vs.logprob = logprobs[i];
    vs.cider_d = cider_scores[i];
    vs.stats = stats[i];
    for (int order = 1; order <= kMaxNgramOrder; ++order) {
      vs.bleu[order - 1] = bleu_from_stats({stats[i]}, order);
    }
    report.per_video.push_back(std::move(vs));
  }
  for (int order = 1; order <= kMaxNgramOrder; ++order) {
    report.bleu[order] = bleu_from_stats(stats, order);
  }
  report.cider_d = cider_d(candidates, references);
  return report;
}

std::string report_to_json(const EvaluationReport& report) {
  nlohmann::json j;
  for (const auto& [order, score] : report.bleu) {
    j["bleu"]["@" + std::to_string(order)] = score;
  }
  j["cider_d"] = report.cider_d;
  j["candidates"] = report.candidate_count;
  j["references"] = report.reference_count;
  j["beam_size"] = report.beam_size;
  j["metrics_note"] = "METEOR is not reported; it needs external linguistic resources";
  nlohmann::json videos = nlohmann::json::array();
  for (const VideoScore& v : report.per_video) {
    nlohmann::json e;
    e["id"] = v.id;
    e["caption"] = v.caption;
    e["logprob"] = v.logprob;
    e["cider_d"] = v.cider_d;
    for (int order = 1; order <= kMaxNgramOrder; ++order) {
      e["bleu"]["@" + std::to_string(order)] = v.bleu[order - 1];
    }
    e["stats"]["candidate_len"] = v.stats.candidate_len;
    e["stats"]["effective_ref_len"] = v.stats.effective_ref_len;
    e["stats"]["matched"] = v.stats.matched;
    e["stats"]["total"] = v.stats.total;
    videos.push_back(std::move(e));
  }
  j["per_video"] = std::move(videos);
  return j.dump(2);
}

std::string report_to_table(const EvaluationReport& report) {
  std::ostringstream os;
  os << "metric    score\n";
  os << "--------  --------\n";
  char buf[64];
  for (const auto& [order, score] : report.bleu) {
    std::snprintf(buf, sizeof buf, "BLEU@%d    %.4f\n", order, score);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "CIDEr-D   %.4f\n", report.cider_d);
  os << buf;
  os << "\ncandidates: " << report.candidate_count
     << "  references: " << report.reference_count << "  beam: " << report.beam_size << "\n";
  return os.str();
}

std::string report_to_csv(const EvaluationReport& report) {
  std::ostringstream os;
  os << "id,caption,logprob,bleu1,bleu2,bleu3,bleu4,cider_d\n";
  for (const VideoScore& v : report.per_video) {
    os << v.id << ",\"" << v.caption << "\"," << v.logprob;
    for (int order = 0; order < kMaxNgramOrder; ++order) os << ',' << v.bleu[order];
    os << ',' << v.cider_d << '\n';
  }
  return os.str();
}

}  // namespace msan

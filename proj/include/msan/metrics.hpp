#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "msan/corpus.hpp"
#include "msan/training.hpp"

namespace msan {

constexpr int kMaxNgramOrder = 4;

// Per-segment modified-precision counts, enough to rebuild corpus BLEU.
struct BleuSegmentStats {
  std::array<std::size_t, kMaxNgramOrder> matched{};  // clipped matches per order
  std::array<std::size_t, kMaxNgramOrder> total{};    // candidate n-gram counts
  std::size_t candidate_len = 0;
  std::size_t effective_ref_len = 0;  // closest reference length, ties to shorter
};

BleuSegmentStats bleu_segment_stats(const TokenSeq& candidate,
                                    const std::vector<TokenSeq>& references);

// Corpus BLEU@N from summed segment stats: clipped n-gram precision,
// geometric mean over orders 1..N, brevity penalty exp(min(0, 1 - r/c)).
// No smoothing: a zero precision at any order zeroes the score.
double bleu_from_stats(const std::vector<BleuSegmentStats>& stats, int max_order);

double bleu(const std::vector<TokenSeq>& candidates,
            const std::vector<std::vector<TokenSeq>>& references, int max_order);

// CIDEr-D with n-grams up to 4, sigma 6, scale 10; document frequencies
// come from the reference sets (one document per video).
double cider_d(const std::vector<TokenSeq>& candidates,
               const std::vector<std::vector<TokenSeq>>& references);

// Per-video CIDEr-D values (the corpus score is their mean).
std::vector<double> cider_d_per_video(const std::vector<TokenSeq>& candidates,
                                      const std::vector<std::vector<TokenSeq>>& references);

struct VideoScore {
  std::string id;
  std::string caption;
  double logprob = 0.0;
  double cider_d = 0.0;
  std::array<double, kMaxNgramOrder> bleu{};  // this segment scored alone
  BleuSegmentStats stats;
};

struct EvaluationReport {
  std::map<int, double> bleu;  // order -> corpus score
  double cider_d = 0.0;
  std::size_t candidate_count = 0;
  std::size_t reference_count = 0;
  std::size_t beam_size = 0;
  std::vector<VideoScore> per_video;
};

// Beam-search a caption for every record, then score both metrics.
// MSAN_THREADS caps the per-video decoding parallelism.
EvaluationReport evaluate(const Checkpoint& checkpoint, const Corpus& corpus,
                          std::size_t beam_size);

std::string report_to_json(const EvaluationReport& report);
std::string report_to_table(const EvaluationReport& report);
std::string report_to_csv(const EvaluationReport& report);

}  // namespace msan

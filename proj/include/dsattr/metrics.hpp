#pragma once

// Reference generation metrics (BLEU-1/2, ROUGE-L, exact-stage METEOR,
// CIDEr) and the checkpoint evaluation harness.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dsattr/training.hpp"

namespace dsattr {

using TokenSeq = std::vector<std::string>;

/// Cumulative BLEU-n (n = 1 or 2): clipped n-gram precisions under a
/// geometric mean with brevity penalty. Empty candidates score 0 with a
/// warning; zero counts are floored at 1e-12 inside the mean.
Real bleu_n(const TokenSeq& candidate, const std::vector<TokenSeq>& references, int n);

/// Corpus-level BLEU: counts pooled over examples before the ratio.
class BleuAccumulator {
 public:
  void add(const TokenSeq& candidate, const std::vector<TokenSeq>& references);
  Real score(int n) const;

 private:
  std::vector<Real> clipped_{0, 0}, total_{0, 0};
  Real cand_len_ = 0, ref_len_ = 0;
};

/// LCS F-measure (beta = 1.2), max over references.
Real rouge_l(const TokenSeq& candidate, const std::vector<TokenSeq>& references);

/// Exact-match METEOR: harmonic mean (alpha = 0.9) of unigram precision and
/// recall times a fragmentation penalty (gamma = 0.5, theta = 3) from the
/// chunk-minimal alignment; max over references.
Real meteor(const TokenSeq& candidate, const std::vector<TokenSeq>& references);

/// CIDEr over an evaluation batch: mean tf-idf cosine over n = 1..4 between
/// each candidate and its references, scaled by 10. Document frequencies
/// come from the reference sets; single-item batches fall back to a floor
/// idf with a warning.
Real cider(const std::vector<TokenSeq>& candidates,
           const std::vector<std::vector<TokenSeq>>& references);

struct MetricReport {
  Real bleu1 = 0, bleu2 = 0, rouge_l = 0, meteor = 0, cider = 0;
  int n_examples = 0;
};

/// Aggregates a finished batch: corpus-level BLEU, mean ROUGE-L/METEOR,
/// batch CIDEr.
MetricReport evaluate_generations(const std::vector<TokenSeq>& candidates,
                                  const std::vector<std::vector<TokenSeq>>& references);

/// Greedy-decodes every split target and scores against the ground-truth
/// comments.
MetricReport evaluate_model(const AttributorModel& model, const Corpus& corpus,
                            const Vocabulary& vocab, const WordClassLexicon& lexicon,
                            const std::vector<TrainExample>& split, int max_len);

std::uint64_t model_content_hash(const AttributorModel& model);
std::string report_json(const MetricReport& report, std::uint64_t checkpoint_hash);

}  // namespace dsattr

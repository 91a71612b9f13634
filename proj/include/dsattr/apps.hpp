#pragma once

// Downstream applications: population aspect-opinion forecasting and
// reader-aware extractive summarization built on a gated TextRank.

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dsattr/model.hpp"

namespace dsattr {

// ---- aspect-opinion forecasting ----

struct UserForecast {
  std::string user_id;
  int aspect = 0;   // argmax of the predicted aspect distribution
  int opinion = 0;  // argmax of the predicted opinion distribution
  std::vector<int> tokens;  // generated comment
};

struct ForecastOptions {
  int max_len = 30;
  int top_keywords = 10;
  std::set<std::string> stopwords;
};

struct ForecastReport {
  std::vector<UserForecast> users;  // users with empty histories are skipped
  std::vector<int> aspect_histogram;  // length k_a, sums to users.size()
  // Row a holds the opinion argmax counts of the users whose dominant
  // aspect is a; entries sum to users.size().
  Mat opinion_by_aspect;
  int modal_aspect = 0;
  std::vector<std::pair<std::string, int>> keywords;  // frequency-ranked
};

/// Predicts, for every reader, the focused aspect/opinion pair and a
/// comment on the article, then aggregates the population view.
ForecastReport forecast(const AttributorModel& model, const NewsArticle& article,
                        const std::vector<const UserHistory*>& users, const Vocabulary& vocab,
                        const WordClassLexicon& lexicon, const ForecastOptions& opts);

std::string forecast_json(const ForecastReport& report, const Vocabulary& vocab);

// ---- reader-aware summarization ----

struct SimilarityMatrices {
  Mat w_s;     // affine-mapped cosine similarities
  Mat w_g;     // importance-gated rows
  Mat w_e;     // attention-gated rows
  Mat w;       // alpha-blended result
  Vec alphas;  // (alpha1, alpha2, alpha3)
};

/// w_s(i,j) = (1 + cos(s_i, s_j)) / 2 over matrix rows; zero vectors score 0
/// against the others and 1 on the diagonal.
Mat sentence_cosine_matrix(const Mat& sentence_vectors);

/// w_g(i,j) = scores(j)·w_s(i,j) / Σ_k scores(k)·w_s(i,k); rows with a
/// non-positive denominator fall back to uniform with a warning.
Mat reader_gate_matrix(const Vec& scores, const Mat& w_s);

Mat blend_matrices(const Mat& w_s, const Mat& w_g, const Mat& w_e, const Vec& alphas);

struct TextRankResult {
  Vec scores;
  bool converged = false;
  int iterations = 0;
};

/// Weighted PageRank on edge matrix w: score_i = (1-d) + d·Σ_j T(j,i)·score_j
/// with T the row-normalized w (zero rows become uniform). Stops when the
/// largest score change drops below tol.
TextRankResult textrank(const Mat& w, Real damping = 0.85, Real tol = 1e-8, int max_iter = 1000);

enum class SummaryStrategy { kStandard, kSingleUser, kMultiUser };

std::string strategy_name(SummaryStrategy strategy);
SummaryStrategy strategy_from_name(const std::string& name);

struct SummarizeOptions {
  int k = 3;
  SummaryStrategy strategy = SummaryStrategy::kStandard;
  Vec alphas;        // defaults to (1/3, 1/3, 1/3) when empty
  int single_user_reps = 10;  // score-averaging repetitions
  int multi_user_voters = 5;  // voters per committee
  std::uint64_t seed = 1;
  int max_len = 30;  // generation length behind the attention gate
  Real damping = 0.85;
  Real tol = 1e-8;
  int max_iter = 1000;
};

struct SummaryResult {
  // Body-sentence indices (the title never enters the pool), ordered by
  // score descending then index ascending.
  std::vector<int> indices;
  Vec scores;  // per body sentence; averaged over repetitions or voters
  SummaryStrategy strategy = SummaryStrategy::kStandard;
  bool converged = true;
};

/// Extracts a k-sentence summary of the article body. standard ranks by
/// sentence similarity alone; single_user averages TextRank scores over
/// blended matrices from sampled readers; multi_user lets each sampled
/// reader vote for a top-k set (ties break by mean score, then index).
SummaryResult summarize(const AttributorModel& model, const NewsArticle& article,
                        const std::vector<const UserHistory*>& users, const Vocabulary& vocab,
                        const WordClassLexicon& lexicon, const SummarizeOptions& opts);

struct SummaryEvalPoint {
  int k = 0;
  std::string strategy;
  Real rouge_l_mean = 0;
  Real rouge_l_std = 0;
};

/// Scores selected-sentence concatenations against article titles for each
/// strategy and summary length; same seed, same curves.
std::vector<SummaryEvalPoint> evaluate_summaries(
    const AttributorModel& model, const std::vector<const NewsArticle*>& articles,
    const std::vector<const UserHistory*>& users, const Vocabulary& vocab,
    const WordClassLexicon& lexicon, const std::vector<SummaryStrategy>& strategies,
    const std::vector<int>& k_range, const SummarizeOptions& base);

std::string summary_eval_jsonl(const std::vector<SummaryEvalPoint>& points);

}  // namespace dsattr

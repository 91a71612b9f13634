#pragma once

// Situational factor encoder: word-level BiLSTM + word attention builds
// sentence vectors, attentive pooling builds the news vector, and a
// preference-conditioned attention head scores sentence importance.

#include <utility>
#include <vector>

#include "dsattr/corpus.hpp"
#include "dsattr/nn.hpp"
#include "dsattr/topics.hpp"

namespace dsattr {

struct SituationConfig {
  int vocab_size = 0;
  int emb_dim = 300;
  int enc_hidden = 128;  // per direction
  int enc_layers = 2;
  int att_hidden = 256;
  int k_a = 40;
  int pf_dim = 64;    // aspect preference size
  int topic_d = 300;  // aspect topic vector dimension
  int max_sentence_words = 32;
  int max_sentences = 16;
  // Restores a free learned importance query instead of projecting v_a.
  bool static_importance_query = false;

  int d_s() const { return 2 * enc_hidden; }
};

struct NewsEncoding {
  Mat sentence_vectors;             // L x d_s
  Vec news_vector;                  // v_X
  std::vector<Vec> word_attentions; // α_i per encoded sentence
  Vec sentence_attentions;          // β
};

struct ImportanceScores {
  Vec g;
  Vec aspect_distribution;  // ẑ_a
  Vec aspect_vector;        // v_a
};

/// Taped counterpart of NewsEncoding for joint training.
struct NewsEncodingVars {
  std::vector<ad::Var> sentence_vectors;
  ad::Var news_vector;
  std::vector<ad::Var> word_attentions;
  ad::Var sentence_attentions;
};

class SituationEncoder {
 public:
  SituationEncoder() = default;
  SituationEncoder(SituationConfig cfg, Rng& rng);

  const SituationConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  /// Truncation applied everywhere articles enter the encoder.
  std::vector<std::vector<int>> clipped_sentences(const NewsArticle& article) const;

  std::pair<Vec, Vec> encode_sentence(const std::vector<int>& word_ids) const;
  NewsEncoding encode_news(const NewsArticle& article) const;
  Vec predict_aspect_distribution(const Vec& pf_a, const Vec& v_X) const;
  Vec importance_scores(const Mat& sentence_vectors, const Vec& v_a) const;

  // Taped forward (identical math) for training and gradient checks.
  NewsEncodingVars build_news(nn::Graph& g, const NewsArticle& article);
  ad::Var build_aspect_distribution(nn::Graph& g, ad::Var pf_a, ad::Var v_X);
  ad::Var build_importance(nn::Graph& g, const std::vector<ad::Var>& sentence_vectors,
                           ad::Var v_a);

 private:
  SituationConfig cfg_;
  nn::ParamStore params_;
};

/// v_a = Σ_j V_a(j)·ẑ_a(j) (and the opinion analogue with V_s).
Vec weighted_topic_vector(const Vec& z_hat, const Mat& topic_vectors);

/// D_KL(predicted ‖ target) with ε=1e-8 smoothing inside both logs,
/// floored at zero. Zero iff the distributions are equal.
Real kl_regularizer(const Vec& predicted, const Vec& target);

}  // namespace dsattr

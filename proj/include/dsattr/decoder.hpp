#pragma once

// Dynamic comment decoder: stacked LSTM over [context; prev-word embedding;
// opinion state], bilinear sentence attention gated by importance scores,
// and a multiplicatively decaying opinion state.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dsattr/history.hpp"
#include "dsattr/situation.hpp"
#include "dsattr/topics.hpp"

namespace dsattr {

struct DecoderConfig {
  int vocab_size = 0;
  int emb_dim = 300;
  int hidden = 512;
  int layers = 2;
  int d_s = 256;      // sentence vector dimension
  int topic_d = 300;  // opinion state dimension
  int k_s = 6;
  int pf_dim = 64;
  bool no_im = false;  // drop importance gating: α_t ≡ e_t
  bool no_ov = false;  // drop opinion state: M_0 = 0
};

struct DecoderState {
  nn::PlainCarry carry;  // per-layer (h, c)
  Vec M;                 // opinion state M_t
  int step = 0;
  Vec last_e, last_alpha;  // attention of the step that produced this state
  const Vec& top_h() const { return carry.back().first; }
};

struct GenerationTrace {
  std::vector<int> tokens;            // emitted ids, EOS excluded
  std::vector<Vec> context_attentions;  // α_t rows
  std::vector<Vec> raw_attentions;      // e_t rows
  std::vector<Real> opinion_norms;      // ‖M_t‖₂ after each step
  Vec mean_decoder_attention;           // mean over steps of e_t
  Vec zs_hat;                           // predicted opinion distribution
};

struct DecodeMode {
  enum Kind { kGreedy, kSample, kBeam } kind = kGreedy;
  std::uint64_t seed = 0;  // sample mode
  int width = 4;           // beam mode
  static DecodeMode greedy() { return {}; }
  static DecodeMode sample(std::uint64_t seed) { return {kSample, seed, 0}; }
  static DecodeMode beam(int width) { return {kBeam, 0, width}; }
};

class CommentDecoder {
 public:
  CommentDecoder() = default;
  CommentDecoder(DecoderConfig cfg, Rng& rng);

  const DecoderConfig& config() const { return cfg_; }
  DecoderConfig& config() { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  Vec predict_opinion_distribution(const Vec& pf_s, const Vec& g,
                                   const Mat& sentence_vectors) const;

  /// (c_t, e_t, α_t) from the previous top hidden state. Degenerate gated
  /// weights fall back to α = e with a warning.
  struct Context {
    Vec c, e, alpha;
  };
  Context context_vector(const Vec& prev_top_h, const Mat& sentence_vectors, const Vec& g) const;

  /// gate = sigmoid(W_o·state); M = gate ⊙ M_prev.
  std::pair<Vec, Vec> opinion_decay(const Vec& M_prev, const Vec& state_top_h) const;

  DecoderState initial_state(const Vec& news_vector, const Vec& v_s) const;
  std::pair<DecoderState, Vec> decode_step(const DecoderState& state, int prev_token,
                                           const NewsEncoding& encoding, const Vec& g) const;

  GenerationTrace generate(const NewsEncoding& encoding, const ImportanceScores& scores,
                           const PreferenceState& prefs, const TopicModel& model, int max_len,
                           const DecodeMode& mode) const;

  // ---- taped path (training / gradient checks) ----
  struct VarState {
    std::vector<nn::LstmState> layers;
    ad::Var M;
  };
  VarState build_init(nn::Graph& g, ad::Var news_vector, ad::Var M0);
  ad::Var build_opinion_distribution(nn::Graph& g, ad::Var pf_s,
                                     const std::vector<ad::Var>& sentence_vectors,
                                     ad::Var g_scores);
  /// Returns the step's logits; advances the state.
  ad::Var build_step(nn::Graph& g, VarState& state, int prev_token,
                     const std::vector<ad::Var>& sentence_vectors, ad::Var g_scores,
                     ad::Var* e_out = nullptr, ad::Var* alpha_out = nullptr);

 private:
  DecoderConfig cfg_;
  nn::ParamStore params_;
};

inline Vec opinion_vector(const Vec& z_hat_s, const TopicModel& model) {
  return weighted_topic_vector(z_hat_s, model.topic_vectors(Branch::kOpinion));
}

}  // namespace dsattr

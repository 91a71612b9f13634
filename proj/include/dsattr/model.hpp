#pragma once

// Full attribution model: a pretrained comment disentangler feeding the
// history, situation, and decoder components, plus featurization, importance
// assembly, end-to-end inference, trace export, and directory checkpoints.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dsattr/decoder.hpp"

namespace dsattr {

struct ModelConfig {
  int vocab_size = 0;
  // disentangler
  int topic_d = 300;
  int k_a = 40;
  int k_s = 6;
  int topic_enc_hidden = 64;
  // history encoders (pf_dim is the preference vector size)
  int pf_dim = 64;
  int history_layers = 2;
  int history_cap = 128;
  // news encoder; sentence vectors are 2 * enc_hidden wide
  int emb_dim = 300;
  int enc_hidden = 128;
  int enc_layers = 2;
  int att_hidden = 256;
  int max_sentence_words = 32;
  int max_sentences = 16;
  // decoder
  int dec_hidden = 512;
  int dec_layers = 2;
  // switches
  bool static_importance_query = false;
  bool no_im = false;
  bool no_ov = false;

  int d_s() const { return 2 * enc_hidden; }

  TopicConfig topic_config() const;
  HistoryConfig history_config() const;
  SituationConfig situation_config() const;
  DecoderConfig decoder_config() const;

  std::string to_json(std::uint64_t vocab_hash) const;
  /// Returns the config and the vocabulary hash it was saved with.
  static std::pair<ModelConfig, std::uint64_t> from_json(const std::string& text);
};

/// Mean-based aspect/opinion distributions for each of a user's comments,
/// in interaction order.
struct TopicSequences {
  std::vector<Vec> z_a, z_s;
  std::size_t size() const { return z_a.size(); }
};

TopicSequences featurize_user(const TopicModel& topics, const UserHistory& user,
                              const Vocabulary& vocab, const WordClassLexicon& lexicon);

class AttributorModel {
 public:
  AttributorModel() = default;
  /// Fresh history/situation/decoder components around an existing
  /// (typically pretrained) disentangler.
  AttributorModel(ModelConfig cfg, TopicModel disentangler, Rng& rng);

  const ModelConfig& config() const { return cfg_; }
  TopicModel& topics() { return topics_; }
  const TopicModel& topics() const { return topics_; }
  HistoryEncoder& history() { return history_; }
  const HistoryEncoder& history() const { return history_; }
  SituationEncoder& situation() { return situation_; }
  const SituationEncoder& situation() const { return situation_; }
  CommentDecoder& decoder() { return decoder_; }
  const CommentDecoder& decoder() const { return decoder_; }

  /// Joint-phase parameter stores (history, situation, decoder). The
  /// disentangler is excluded; freeze or optimize it explicitly.
  std::vector<nn::ParamStore*> joint_stores() {
    return {&history_.params(), &situation_.params(), &decoder_.params()};
  }

  /// Preference state over the first n interactions of a featurized user.
  PreferenceState preference_from(const TopicSequences& seqs, std::size_t n) const;

  /// Importance scores with their aspect distribution and aspect vector.
  ImportanceScores importance(const PreferenceState& prefs, const NewsEncoding& encoding) const;

  struct Inference {
    PreferenceState prefs;
    NewsEncoding encoding;
    ImportanceScores scores;
    GenerationTrace trace;
  };
  Inference infer(const TopicSequences& seqs, std::size_t history_len, const NewsArticle& article,
                  int max_len, const DecodeMode& mode) const;

  void save(const std::string& dir, const Vocabulary& vocab) const;
  static std::pair<AttributorModel, Vocabulary> load(const std::string& dir);

 private:
  ModelConfig cfg_;
  TopicModel topics_;
  HistoryEncoder history_;
  SituationEncoder situation_;
  CommentDecoder decoder_;
};

/// JSON payload consumed by the applications:
/// {tokens[], text, e_mean[], g[], z_a_hat[], z_s_hat[]}.
std::string trace_json(const AttributorModel::Inference& inf, const Vocabulary& vocab);

}  // namespace dsattr

#pragma once

// Historical aspect-opinion modeling: two stacked LSTMs consume a user's
// topic-distribution sequences and emit dispositional preference vectors
// pf_a, pf_s (top-layer final hidden states).

#include <string>
#include <utility>
#include <vector>

#include "dsattr/nn.hpp"

namespace dsattr {

struct HistoryConfig {
  int k_a = 40;  // aspect input size
  int k_s = 6;   // opinion input size
  int hidden = 64;
  int layers = 2;
  int history_cap = 128;  // keep only the most recent entries
};

struct PreferenceState {
  std::string user_id;
  int as_of = 0;  // history steps consumed
  Vec pf_a, pf_s;
  // Per-layer (h, c) pairs; present only on states built in-memory, and
  // required for incremental updates.
  std::vector<std::pair<Vec, Vec>> carry_a, carry_s;
  bool has_carry() const { return !carry_a.empty() && !carry_s.empty(); }
};

class HistoryEncoder {
 public:
  HistoryEncoder() = default;
  HistoryEncoder(HistoryConfig cfg, Rng& rng);

  const HistoryConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  /// Runs both stacks from zero state over equal-length sequences; caps to
  /// the most recent history_cap entries first.
  PreferenceState encode_history(const std::vector<Vec>& z_a_seq,
                                 const std::vector<Vec>& z_s_seq) const;

  /// One recurrent step per branch; composing T updates from an empty state
  /// reproduces encode_history of the full sequence.
  PreferenceState update_preference(const PreferenceState& state, const Vec& z_a,
                                    const Vec& z_s) const;

  /// Taped forward (same math) for joint training.
  std::pair<ad::Var, ad::Var> build_preference(nn::Graph& g, const std::vector<Vec>& z_a_seq,
                                               const std::vector<Vec>& z_s_seq);

 private:
  HistoryConfig cfg_;
  nn::ParamStore params_;
};

void save_preference_cache(const std::vector<PreferenceState>& states, const std::string& path);
std::vector<PreferenceState> load_preference_cache(const std::string& path);

}  // namespace dsattr

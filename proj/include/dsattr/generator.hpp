#pragma once

// Seeded synthetic corpus generator. Users carry a persistent entity
// cluster and opinion-word group; articles plant key entities in the title
// and one highlight body sentence among filler-themed distractors (the
// title keeps a configurable number of them); comments mix article/history
// entities so the measured overlap report approximates a configured
// four-bucket target.

#include <cstdint>
#include <string>
#include <vector>

#include "dsattr/corpus.hpp"

namespace dsattr {

struct GeneratorConfig {
  int n_users = 50;
  int history_len = 30;  // interactions per user
  int entity_clusters = 8;
  int entities_per_cluster = 15;
  int reserve_entities = 20;  // fresh-entity spillover pool
  int opinion_groups = 3;
  int opinions_per_group = 20;
  int filler_words = 96;
  int theme_fillers = 12;  // shared distractor vocabulary
  int comment_entity_count = 3;
  int comment_opinion_count = 3;
  int comment_filler_count = 1;
  int title_entity_count = 3;  // key entities repeated in the title
  int title_filler_count = 3;
  int distractor_sentences = 4;
  int distractor_len = 8;
  Real own_cluster_prob = 0.85;
  OverlapDistribution target{0.21, 0.55, 0.20, 0.14};

  std::string to_json() const;
  static GeneratorConfig from_json(const std::string& text);
};

struct UserTruth {
  std::string user_id;
  int aspect_cluster = 0;
  int opinion_group = 0;
  Vec aspect_mixture;   // sampling mixture over clusters
  Vec opinion_mixture;  // one-hot over opinion groups
};

struct GeneratorResult {
  Corpus corpus;
  WordClassLexicon lexicon;
  std::vector<UserTruth> truth;
  OverlapDistribution realized_target;  // after projection onto the simplex
};

/// Deterministic for a fixed (config, seed) pair.
GeneratorResult generate_synthetic_corpus(const GeneratorConfig& config, std::uint64_t seed);

void save_truth(const std::vector<UserTruth>& truth, const std::string& path);
std::vector<UserTruth> load_truth(const std::string& path);

}  // namespace dsattr

#pragma once

// Two-phase optimization: disentangler pretraining on masked bag-of-words
// targets, then joint training of history/situation/decoder with teacher
// forcing and KL regularizers toward the frozen disentangler.

#include <cstdint>
#include <string>
#include <vector>

#include "dsattr/model.hpp"

namespace dsattr {

enum class Ablation { kFull, kNoIm, kNoOv };
std::string ablation_name(Ablation a);
Ablation ablation_from_name(const std::string& name);

struct TrainConfig {
  Real lambda1 = 0.4;  // aspect KL weight
  Real lambda2 = 0.4;  // opinion KL weight
  int batch_size = 64;
  Real learning_rate = 1e-3;
  int epochs = 200;
  int lr_decay_every = 50;       // epochs between decays
  Real lr_decay_factor = 0.5;
  Ablation ablation = Ablation::kFull;
  std::uint64_t seed = 1;
  Real val_fraction = 0.1;
  Real test_fraction = 0.1;
  bool finetune_disentangler = false;
  std::string metrics_path;    // per-epoch JSONL log; empty disables
  std::string checkpoint_dir;  // best-validation checkpoint; empty disables
  bool quiet = false;          // suppress stderr progress lines

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct LossBreakdown {
  Real ce = 0, kl_aspect = 0, kl_opinion = 0, total = 0;
};

struct TrainExample {
  int user = 0;    // index into corpus.users
  int target = 0;  // interaction index being predicted
};

struct DataSplit {
  std::vector<TrainExample> train, val, test;
};

/// Latest interactions held out per user: roughly test_fraction of each
/// user's tail goes to test, the preceding val_fraction to validation.
/// Training targets start at interaction 1 (index 0 has no history).
DataSplit split_corpus(const Corpus& corpus, Real val_fraction, Real test_fraction);

/// Mean token cross-entropy under teacher forcing plus weighted KL terms
/// toward the disentangler's distributions for the ground-truth comment
/// (seqs entry `target`). History is the first `target` entries of seqs.
LossBreakdown teacher_forced_loss(const AttributorModel& model, const TopicSequences& seqs,
                                  std::size_t target, const NewsArticle& article,
                                  const Comment& comment, Real lambda1, Real lambda2);

/// Taped counterpart of teacher_forced_loss; returns the total-loss node
/// and optionally reports the component values.
ad::Var build_joint_loss(nn::Graph& g, AttributorModel& model, const TopicSequences& seqs,
                         std::size_t target, const NewsArticle& article, const Comment& comment,
                         Real lambda1, Real lambda2, LossBreakdown* breakdown = nullptr);

struct PretrainResult {
  TopicModel model;
  std::vector<Real> epoch_loss;  // mean per-example ELBO (both branches)
};

/// Optimizes both VAE branches on every training-region comment.
PretrainResult pretrain_disentangler(const Corpus& corpus, const Vocabulary& vocab,
                                     const WordClassLexicon& lexicon, const TopicConfig& topic_cfg,
                                     const TrainConfig& cfg);

struct JointResult {
  std::vector<LossBreakdown> epoch_train;  // per-epoch means
  std::vector<Real> epoch_val_ce;
  Real best_val_ce = 0;
  int best_epoch = 0;  // 1-based
};

/// Optimizes history/situation/decoder; the disentangler stays frozen
/// unless finetune_disentangler is set. Writes the best-validation
/// checkpoint and a per-epoch metrics log when paths are configured.
JointResult train_joint(AttributorModel& model, const Corpus& corpus, const Vocabulary& vocab,
                        const WordClassLexicon& lexicon, const TrainConfig& cfg);

}  // namespace dsattr

#pragma once

// Comment disentanglement: two parallel VAE topic models over comment
// bag-of-words vectors, sharing word embeddings. The aspect branch
// reconstructs entity-masked counts, the opinion branch adjective-masked
// counts; both expose explicit topic vectors (V_a, V_s).

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dsattr/corpus.hpp"
#include "dsattr/nn.hpp"

namespace dsattr {

enum class Branch { kAspect, kOpinion };

struct TopicConfig {
  int vocab_size = 0;
  int k_a = 40;
  int k_s = 6;
  int d = 300;          // topic/word embedding dimension
  int enc_hidden = 64;  // encoder MLP width
  bool normalize_input = true;

  int latent(Branch b) const { return b == Branch::kAspect ? k_a : k_s; }
};

struct LatentGaussian {
  Vec mean;
  Vec log_variance;  // clamped to [-10, 10]
};

class TopicModel {
 public:
  TopicModel() = default;
  TopicModel(TopicConfig cfg, Rng& rng);

  const TopicConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  /// Topic-vector matrix V (k x d) of a branch.
  const Mat& topic_vectors(Branch b) const {
    return params_.get(b == Branch::kAspect ? "Va" : "Vs");
  }
  const Mat& word_embeddings() const { return params_.get("emb"); }

  /// Per-topic word distributions: row-softmax of V · emb (k x |V|).
  Mat topic_word_matrix(Branch b) const;

  LatentGaussian encode_bow(const Vec& y, Branch b) const;
  Vec reconstruct(const Vec& theta, Branch b) const;
  Real elbo_loss(const Vec& y_target, const Vec& theta, const LatentGaussian& g, Branch b) const;

  /// Mean-based (noise = 0) aspect and opinion distributions of a comment.
  std::pair<Vec, Vec> infer_distributions(const Vec& y) const;

  std::vector<std::string> topic_top_words(const Vocabulary& vocab, Branch b, int topic_index,
                                           int n) const;

  /// Taped ELBO for one example (both encoders share the tape's params).
  ad::Var build_elbo(nn::Graph& g, const Vec& y, const Vec& y_target, Branch b, const Vec& noise);

  std::string config_json(std::uint64_t vocab_hash) const;
  static TopicModel from_checkpoint(const std::string& params_path, const std::string& config_path,
                                    std::uint64_t vocab_hash);
  void save_checkpoint(const std::string& params_path, const std::string& config_path,
                       std::uint64_t vocab_hash) const;

 private:
  TopicConfig cfg_;
  nn::ParamStore params_;

  std::string enc_prefix(Branch b) const { return b == Branch::kAspect ? "enc_a" : "enc_s"; }
};

Vec softmax_plain(const Vec& x);

/// Reparameterized sample pushed through softmax: softmax(mean + σ⊙noise).
Vec topic_mixture(const LatentGaussian& g, const Vec& noise);

/// Normalized mutual information between two label assignments.
Real normalized_mutual_information(const std::vector<int>& a, const std::vector<int>& b);

}  // namespace dsattr

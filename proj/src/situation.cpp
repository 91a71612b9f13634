#include "dsattr/situation.hpp"

#include <stdexcept>

namespace dsattr {

SituationEncoder::SituationEncoder(SituationConfig cfg, Rng& rng) : cfg_(cfg) {
  if (cfg_.vocab_size <= 0) throw std::invalid_argument("news encoder needs a vocabulary size");
  params_.add("wemb", nn::glorot(cfg_.emb_dim, cfg_.vocab_size, rng));
  nn::add_bilstm_stack(params_, "wrnn", cfg_.enc_layers, cfg_.emb_dim, cfg_.enc_hidden, rng);
  nn::add_linear(params_, "Ww", cfg_.att_hidden, cfg_.d_s(), rng);
  params_.add("uw", nn::glorot(cfg_.att_hidden, 1, rng));
  nn::add_linear(params_, "Wsenc", cfg_.att_hidden, cfg_.d_s(), rng);
  params_.add("us", nn::glorot(cfg_.att_hidden, 1, rng));
  nn::add_linear(params_, "Wg", cfg_.att_hidden, cfg_.d_s(), rng);
  // Both importance-query parameterizations are registered so checkpoints
  // stay loadable across the ablation flag.
  params_.add("ug", nn::glorot(cfg_.att_hidden, 1, rng));
  params_.add("Q", nn::glorot(cfg_.att_hidden, cfg_.topic_d, rng));
  nn::add_linear(params_, "Wz", cfg_.k_a, cfg_.pf_dim + cfg_.d_s(), rng, /*bias=*/false);
}

std::vector<std::vector<int>> SituationEncoder::clipped_sentences(
    const NewsArticle& article) const {
  std::vector<std::vector<int>> out;
  for (const Sentence* s : article.sentences()) {
    if (static_cast<int>(out.size()) == cfg_.max_sentences) break;
    if (s->ids.empty()) throw std::invalid_argument("empty sentence");
    std::vector<int> ids = s->ids;
    if (static_cast<int>(ids.size()) > cfg_.max_sentence_words)
      ids.resize(static_cast<std::size_t>(cfg_.max_sentence_words));
    out.push_back(std::move(ids));
  }
  if (out.empty()) throw std::invalid_argument("article has no sentences");
  return out;
}

std::pair<Vec, Vec> SituationEncoder::encode_sentence(const std::vector<int>& word_ids) const {
  if (word_ids.empty()) throw std::invalid_argument("empty sentence");
  const Mat& emb = params_.get("wemb");
  std::vector<Vec> xs;
  xs.reserve(word_ids.size());
  for (int id : word_ids) {
    if (id < 0 || id >= cfg_.vocab_size) throw std::out_of_range("token out of vocabulary");
    xs.push_back(emb.col(id));
  }
  std::vector<Vec> states =
      nn::plain_bilstm(params_, "wrnn", cfg_.enc_layers, cfg_.enc_hidden, xs);
  const Mat& Ww = params_.get("Ww.W");
  const Vec& bw = params_.get("Ww.b");
  const Vec& uw = params_.get("uw");
  Vec scores(static_cast<Eigen::Index>(states.size()));
  for (std::size_t t = 0; t < states.size(); ++t)
    scores(static_cast<Eigen::Index>(t)) = ((Ww * states[t] + bw).array().tanh().matrix()).dot(uw);
  Vec alpha = softmax_plain(scores);
  Vec s = Vec::Zero(cfg_.d_s());
  for (std::size_t t = 0; t < states.size(); ++t)
    s += alpha(static_cast<Eigen::Index>(t)) * states[t];
  return {s, alpha};
}

NewsEncoding SituationEncoder::encode_news(const NewsArticle& article) const {
  auto sentences = clipped_sentences(article);
  NewsEncoding enc;
  Eigen::Index L = static_cast<Eigen::Index>(sentences.size());
  enc.sentence_vectors = Mat(L, cfg_.d_s());
  for (Eigen::Index i = 0; i < L; ++i) {
    auto [s, alpha] = encode_sentence(sentences[static_cast<std::size_t>(i)]);
    enc.sentence_vectors.row(i) = s.transpose();
    enc.word_attentions.push_back(std::move(alpha));
  }
  const Mat& Ws = params_.get("Wsenc.W");
  const Vec& bs = params_.get("Wsenc.b");
  const Vec& us = params_.get("us");
  Vec scores(L);
  for (Eigen::Index i = 0; i < L; ++i)
    scores(i) =
        ((Ws * enc.sentence_vectors.row(i).transpose() + bs).array().tanh().matrix()).dot(us);
  enc.sentence_attentions = softmax_plain(scores);
  enc.news_vector = enc.sentence_vectors.transpose() * enc.sentence_attentions;
  return enc;
}

Vec SituationEncoder::predict_aspect_distribution(const Vec& pf_a, const Vec& v_X) const {
  if (pf_a.size() != cfg_.pf_dim || v_X.size() != cfg_.d_s())
    throw std::invalid_argument("preference/news vector size mismatch");
  Vec cat(pf_a.size() + v_X.size());
  cat << pf_a, v_X;
  return softmax_plain(params_.get("Wz.W") * cat);
}

Vec SituationEncoder::importance_scores(const Mat& sentence_vectors, const Vec& v_a) const {
  Eigen::Index L = sentence_vectors.rows();
  if (L < 1) throw std::invalid_argument("article has no sentences");
  const Mat& Wg = params_.get("Wg.W");
  const Vec& bg = params_.get("Wg.b");
  Vec query = cfg_.static_importance_query ? Vec(params_.get("ug"))
                                           : Vec(params_.get("Q") * v_a);
  Vec scores(L);
  for (Eigen::Index i = 0; i < L; ++i)
    scores(i) =
        ((Wg * sentence_vectors.row(i).transpose() + bg).array().tanh().matrix()).dot(query);
  return softmax_plain(scores);
}

NewsEncodingVars SituationEncoder::build_news(nn::Graph& g, const NewsArticle& article) {
  using namespace ad;
  auto sentences = clipped_sentences(article);
  NewsEncodingVars enc;
  Var emb = g.param(params_, "wemb");
  Var Ww = g.param(params_, "Ww.W"), bw = g.param(params_, "Ww.b"), uw = g.param(params_, "uw");
  for (const auto& ids : sentences) {
    std::vector<Var> xs;
    xs.reserve(ids.size());
    for (int id : ids) {
      if (id < 0 || id >= cfg_.vocab_size) throw std::out_of_range("token out of vocabulary");
      xs.push_back(col(emb, id));
    }
    auto states = nn::run_bilstm(g, params_, "wrnn", cfg_.enc_layers, cfg_.enc_hidden, xs);
    std::vector<Var> scores;
    scores.reserve(states.size());
    for (auto& st : states) scores.push_back(dot(tanh(add(matmul(Ww, st), bw)), uw));
    Var alpha = softmax(stack_scalars(scores));
    Var s = matmul(hstack(states), alpha);
    enc.word_attentions.push_back(alpha);
    enc.sentence_vectors.push_back(s);
  }
  Var Ws = g.param(params_, "Wsenc.W"), bs = g.param(params_, "Wsenc.b"),
      us = g.param(params_, "us");
  std::vector<Var> sscores;
  sscores.reserve(enc.sentence_vectors.size());
  for (auto& s : enc.sentence_vectors)
    sscores.push_back(dot(tanh(add(matmul(Ws, s), bs)), us));
  enc.sentence_attentions = softmax(stack_scalars(sscores));
  enc.news_vector = matmul(hstack(enc.sentence_vectors), enc.sentence_attentions);
  return enc;
}

ad::Var SituationEncoder::build_aspect_distribution(nn::Graph& g, ad::Var pf_a, ad::Var v_X) {
  using namespace ad;
  return softmax(matmul(g.param(params_, "Wz.W"), concat<Real>({pf_a, v_X})));
}

ad::Var SituationEncoder::build_importance(nn::Graph& g,
                                           const std::vector<ad::Var>& sentence_vectors,
                                           ad::Var v_a) {
  using namespace ad;
  Var Wg = g.param(params_, "Wg.W"), bg = g.param(params_, "Wg.b");
  Var query = cfg_.static_importance_query ? g.param(params_, "ug")
                                           : matmul(g.param(params_, "Q"), v_a);
  std::vector<Var> scores;
  scores.reserve(sentence_vectors.size());
  for (auto& s : sentence_vectors) scores.push_back(dot(tanh(add(matmul(Wg, s), bg)), query));
  return softmax(stack_scalars(scores));
}

Vec weighted_topic_vector(const Vec& z_hat, const Mat& topic_vectors) {
  if (z_hat.size() != topic_vectors.rows())
    throw std::invalid_argument("distribution/topic count mismatch");
  return topic_vectors.transpose() * z_hat;
}

Real kl_regularizer(const Vec& predicted, const Vec& target) {
  if (predicted.size() != target.size()) throw std::invalid_argument("distribution size mismatch");
  constexpr Real eps = 1e-8;
  Real kl = 0.0;
  for (Eigen::Index i = 0; i < predicted.size(); ++i)
    kl += predicted(i) * (std::log(predicted(i) + eps) - std::log(target(i) + eps));
  return std::max(0.0, kl);
}

}  // namespace dsattr

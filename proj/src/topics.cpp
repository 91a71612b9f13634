#include "dsattr/topics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace dsattr {

using nlohmann::json;

Vec softmax_plain(const Vec& x) {
  Vec y = (x.array() - x.maxCoeff()).exp().matrix();
  return y / y.sum();
}

TopicModel::TopicModel(TopicConfig cfg, Rng& rng) : cfg_(cfg) {
  if (cfg_.vocab_size <= 0) throw std::invalid_argument("topic model needs a vocabulary size");
  params_.add("emb", nn::glorot(cfg_.d, cfg_.vocab_size, rng));
  params_.add("Va", nn::glorot(cfg_.k_a, cfg_.d, rng));
  params_.add("Vs", nn::glorot(cfg_.k_s, cfg_.d, rng));
  for (Branch b : {Branch::kAspect, Branch::kOpinion}) {
    std::string p = enc_prefix(b);
    nn::add_linear(params_, p + ".h", cfg_.enc_hidden, cfg_.vocab_size, rng);
    nn::add_linear(params_, p + ".mu", cfg_.latent(b), cfg_.enc_hidden, rng);
    nn::add_linear(params_, p + ".lv", cfg_.latent(b), cfg_.enc_hidden, rng);
  }
}

Mat TopicModel::topic_word_matrix(Branch b) const {
  Mat logits = topic_vectors(b) * word_embeddings();  // k x |V|
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Vec row = logits.row(r).transpose();
    logits.row(r) = softmax_plain(row).transpose();
  }
  return logits;
}

namespace {
Vec normalize_bow(const Vec& y, bool enabled) {
  Real s = y.sum();
  if (!enabled || s <= 0.0) return y;
  return y / s;
}
}  // namespace

LatentGaussian TopicModel::encode_bow(const Vec& y, Branch b) const {
  if (y.size() != cfg_.vocab_size) throw std::invalid_argument("bow size mismatch");
  if ((y.array() < 0).any()) throw std::invalid_argument("bow counts must be non-negative");
  Vec x = normalize_bow(y, cfg_.normalize_input);
  std::string p = enc_prefix(b);
  Vec h = (params_.get(p + ".h.W") * x + params_.get(p + ".h.b")).array().tanh();
  LatentGaussian g;
  g.mean = params_.get(p + ".mu.W") * h + params_.get(p + ".mu.b");
  g.log_variance = (params_.get(p + ".lv.W") * h + params_.get(p + ".lv.b"))
                       .cwiseMax(-10.0)
                       .cwiseMin(10.0);
  return g;
}

Vec topic_mixture(const LatentGaussian& g, const Vec& noise) {
  if (noise.size() != g.mean.size()) throw std::invalid_argument("noise size mismatch");
  Vec z = g.mean + ((0.5 * g.log_variance).array().exp() * noise.array()).matrix();
  return softmax_plain(z);
}

Vec TopicModel::reconstruct(const Vec& theta, Branch b) const {
  return topic_word_matrix(b).transpose() * theta;
}

Real TopicModel::elbo_loss(const Vec& y_target, const Vec& theta, const LatentGaussian& g,
                           Branch b) const {
  Vec p = reconstruct(theta, b);
  Real rec = 0.0;
  for (Eigen::Index i = 0; i < y_target.size(); ++i)
    if (y_target(i) != 0.0) rec -= y_target(i) * std::log(p(i));
  Real kl = 0.5 * (g.log_variance.array().exp() + g.mean.array().square() - 1.0 -
                   g.log_variance.array())
                      .sum();
  return rec + kl;
}

std::pair<Vec, Vec> TopicModel::infer_distributions(const Vec& y) const {
  LatentGaussian ga = encode_bow(y, Branch::kAspect);
  LatentGaussian gs = encode_bow(y, Branch::kOpinion);
  return {softmax_plain(ga.mean), softmax_plain(gs.mean)};
}

std::vector<std::string> TopicModel::topic_top_words(const Vocabulary& vocab, Branch b,
                                                     int topic_index, int n) const {
  int k = cfg_.latent(b);
  if (topic_index < 0 || topic_index >= k) throw std::out_of_range("topic index out of range");
  if (n <= 0) return {};
  Mat beta = topic_word_matrix(b);
  std::vector<int> order(static_cast<std::size_t>(cfg_.vocab_size));
  for (int i = 0; i < cfg_.vocab_size; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int c) {
    if (beta(topic_index, a) != beta(topic_index, c)) return beta(topic_index, a) > beta(topic_index, c);
    return a < c;
  });
  int take = std::min(n, cfg_.vocab_size);
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(take));
  for (int i = 0; i < take; ++i) out.push_back(vocab.token(order[static_cast<std::size_t>(i)]));
  return out;
}

ad::Var TopicModel::build_elbo(nn::Graph& g, const Vec& y, const Vec& y_target, Branch b,
                               const Vec& noise) {
  using namespace ad;
  std::string p = enc_prefix(b);
  Var x = g.constant(Mat(normalize_bow(y, cfg_.normalize_input)));
  Var h = tanh(add(matmul(g.param(params_, p + ".h.W"), x), g.param(params_, p + ".h.b")));
  Var mu = add(matmul(g.param(params_, p + ".mu.W"), h), g.param(params_, p + ".mu.b"));
  Var lv = clamp(add(matmul(g.param(params_, p + ".lv.W"), h), g.param(params_, p + ".lv.b")),
                 -10.0, 10.0);
  Var eps = g.constant(Mat(noise));
  Var z = add(mu, cmul(exp(scale(0.5, lv)), eps));
  Var theta = softmax(z);

  Var V = g.param(params_, b == Branch::kAspect ? "Va" : "Vs");
  Var beta = softmax_rows(matmul(V, g.param(params_, "emb")));  // k x |V|
  Var prob = matmul(transpose(beta), theta);                    // |V| x 1
  Var rec = neg(dot(g.constant(Mat(y_target)), log(prob)));

  Var ones = g.constant(Mat(Mat::Ones(lv.rows(), 1)));
  Var kl = scale(0.5, sum(sub(add(exp(lv), cmul(mu, mu)), add(ones, lv))));
  return add(rec, kl);
}

std::string TopicModel::config_json(std::uint64_t vocab_hash) const {
  json j;
  j["k_a"] = cfg_.k_a;
  j["k_s"] = cfg_.k_s;
  j["d"] = cfg_.d;
  j["enc_hidden"] = cfg_.enc_hidden;
  j["vocab_size"] = cfg_.vocab_size;
  j["normalize_input"] = cfg_.normalize_input;
  j["vocab_hash"] = vocab_hash;
  return j.dump(2);
}

void TopicModel::save_checkpoint(const std::string& params_path, const std::string& config_path,
                                 std::uint64_t vocab_hash) const {
  params_.save(params_path);
  write_file_atomic(config_path, config_json(vocab_hash));
}

TopicModel TopicModel::from_checkpoint(const std::string& params_path,
                                       const std::string& config_path,
                                       std::uint64_t vocab_hash) {
  json j = json::parse(read_text_file(config_path));
  if (j.at("vocab_hash").get<std::uint64_t>() != vocab_hash)
    throw std::runtime_error("checkpoint vocabulary mismatch");
  TopicModel m;
  m.cfg_.k_a = j.at("k_a").get<int>();
  m.cfg_.k_s = j.at("k_s").get<int>();
  m.cfg_.d = j.at("d").get<int>();
  m.cfg_.enc_hidden = j.at("enc_hidden").get<int>();
  m.cfg_.vocab_size = j.at("vocab_size").get<int>();
  m.cfg_.normalize_input = j.at("normalize_input").get<bool>();
  m.params_.load(params_path);
  return m;
}

Real normalized_mutual_information(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("label vectors must be non-empty and equal length");
  auto n = static_cast<Real>(a.size());
  std::map<int, Real> pa, pb;
  std::map<std::pair<int, int>, Real> pab;
  for (std::size_t i = 0; i < a.size(); ++i) {
    pa[a[i]] += 1.0 / n;
    pb[b[i]] += 1.0 / n;
    pab[{a[i], b[i]}] += 1.0 / n;
  }
  auto entropy = [](const std::map<int, Real>& p) {
    Real h = 0.0;
    for (const auto& [k, v] : p)
      if (v > 0) h -= v * std::log(v);
    return h;
  };
  Real ha = entropy(pa), hb = entropy(pb);
  Real mi = 0.0;
  for (const auto& [kv, pxy] : pab) {
    Real px = pa[kv.first], py = pb[kv.second];
    if (pxy > 0) mi += pxy * std::log(pxy / (px * py));
  }
  if (ha <= 0.0 || hb <= 0.0) return ha == hb ? 1.0 : 0.0;
  return mi / std::sqrt(ha * hb);
}

}  // namespace dsattr

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "dsattr/common.hpp"
#include "dsattr/situation.hpp"

using namespace dsattr;

namespace {

SituationConfig toy_config() {
  SituationConfig cfg;
  cfg.vocab_size = 12;
  cfg.emb_dim = 4;
  cfg.enc_hidden = 3;
  cfg.enc_layers = 1;
  cfg.att_hidden = 5;
  cfg.k_a = 3;
  cfg.pf_dim = 2;
  cfg.topic_d = 4;
  cfg.max_sentence_words = 6;
  cfg.max_sentences = 4;
  return cfg;
}

NewsArticle article_from_ids(const std::vector<std::vector<int>>& sentences) {
  NewsArticle a;
  a.id = "a";
  a.title.ids = sentences.at(0);
  for (std::size_t i = 1; i < sentences.size(); ++i) {
    Sentence s;
    s.ids = sentences[i];
    a.body.push_back(s);
  }
  return a;
}

}  // namespace

TEST_CASE("sentence encoding normalizes word attention") {
  Rng rng(1);
  SituationEncoder enc(toy_config(), rng);

  auto [s1, a1] = enc.encode_sentence({5});
  CHECK(a1.size() == 1);
  CHECK(a1(0) == doctest::Approx(1.0).epsilon(1e-12));
  // single word: sentence vector equals that word's recurrent state
  auto states = nn::plain_bilstm(enc.params(), "wrnn", 1, 3,
                                 {Vec(enc.params().get("wemb").col(5))});
  CHECK((s1 - states[0]).cwiseAbs().maxCoeff() <= 1e-12);

  auto [s2, a2] = enc.encode_sentence({7, 7, 7, 7});
  CHECK(a2.minCoeff() >= 0.0);
  CHECK(a2.sum() == doctest::Approx(1.0).epsilon(1e-9));

  Rng r2(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> ids;
    int len = r2.uniform_range(1, 6);
    for (int i = 0; i < len; ++i) ids.push_back(r2.uniform_int(12));
    auto [s, a] = enc.encode_sentence(ids);
    CHECK(a.minCoeff() >= 0.0);
    CHECK(std::abs(a.sum() - 1.0) <= 1e-6);
    CHECK(s.allFinite());
  }
  CHECK_THROWS_WITH(enc.encode_sentence({}), "empty sentence");
  CHECK_THROWS(enc.encode_sentence({99}));
}

TEST_CASE("news encoding pools sentences convexly") {
  Rng rng(2);
  SituationEncoder enc(toy_config(), rng);

  NewsArticle single = article_from_ids({{1, 2, 3}});
  NewsEncoding e1 = enc.encode_news(single);
  CHECK(e1.sentence_attentions.size() == 1);
  CHECK(e1.sentence_attentions(0) == doctest::Approx(1.0));
  CHECK((e1.news_vector - e1.sentence_vectors.row(0).transpose()).cwiseAbs().maxCoeff() <= 1e-12);

  NewsArticle multi = article_from_ids({{1, 2}, {3, 4, 5}, {6}, {7, 8}});
  NewsEncoding em = enc.encode_news(multi);
  CHECK(em.sentence_vectors.rows() == 4);
  CHECK(em.sentence_attentions.minCoeff() >= 0.0);
  CHECK(em.sentence_attentions.sum() == doctest::Approx(1.0).epsilon(1e-9));
  for (Eigen::Index cIdx = 0; cIdx < em.sentence_vectors.cols(); ++cIdx) {
    Real lo = em.sentence_vectors.col(cIdx).minCoeff();
    Real hi = em.sentence_vectors.col(cIdx).maxCoeff();
    CHECK(em.news_vector(cIdx) >= lo - 1e-9);
    CHECK(em.news_vector(cIdx) <= hi + 1e-9);
  }
}

TEST_CASE("truncation caps words and sentences") {
  Rng rng(3);
  SituationEncoder enc(toy_config(), rng);  // caps: 6 words, 4 sentences
  std::vector<std::vector<int>> sents;
  for (int i = 0; i < 7; ++i) sents.push_back(std::vector<int>(10, i + 1));
  auto clipped = enc.clipped_sentences(article_from_ids(sents));
  CHECK(clipped.size() == 4);
  for (const auto& s : clipped) CHECK(s.size() == 6);
}

TEST_CASE("aspect distribution prediction") {
  Rng rng(4);
  SituationEncoder enc(toy_config(), rng);
  Vec pf = rng.normal_vec(2), vx = rng.normal_vec(6);

  enc.params().get("Wz.W").setZero();
  Vec uniform = enc.predict_aspect_distribution(pf, vx);
  for (int i = 0; i < 3; ++i) CHECK(uniform(i) == doctest::Approx(1.0 / 3));

  Rng r2(5);
  SituationEncoder enc2(toy_config(), r2);
  for (int trial = 0; trial < 25; ++trial) {
    Vec z = enc2.predict_aspect_distribution(r2.normal_vec(2), r2.normal_vec(6));
    CHECK(z.size() == 3);
    CHECK(z.minCoeff() >= 0.0);
    CHECK(std::abs(z.sum() - 1.0) <= 1e-6);
  }
  CHECK_THROWS(enc.predict_aspect_distribution(rng.normal_vec(3), vx));
}

TEST_CASE("weighted topic vector is the expected mixture") {
  Rng rng(6);
  Mat Va = rng.uniform_mat(3, 2, 1.0);
  Vec onehot = Vec::Zero(3);
  onehot(2) = 1.0;
  CHECK((weighted_topic_vector(onehot, Va) - Va.row(2).transpose()).norm() <= 1e-15);

  Vec uniform = Vec::Constant(3, 1.0 / 3);
  Vec mean = (Va.row(0) + Va.row(1) + Va.row(2)).transpose() / 3.0;
  CHECK((weighted_topic_vector(uniform, Va) - mean).norm() <= 1e-12);

  Vec z(3);
  z << 0.2, 0.5, 0.3;
  Vec hand(2);
  hand << 0.2 * Va(0, 0) + 0.5 * Va(1, 0) + 0.3 * Va(2, 0),
      0.2 * Va(0, 1) + 0.5 * Va(1, 1) + 0.3 * Va(2, 1);
  CHECK((weighted_topic_vector(z, Va) - hand).norm() <= 1e-12);
  CHECK_THROWS(weighted_topic_vector(Vec::Zero(4), Va));
}

TEST_CASE("importance scores form a distribution and respect symmetry") {
  Rng rng(7);
  SituationEncoder enc(toy_config(), rng);
  Vec va = rng.normal_vec(4);

  Mat one = rng.uniform_mat(1, 6, 1.0);
  Vec g1 = enc.importance_scores(one, va);
  CHECK(g1.size() == 1);
  CHECK(g1(0) == doctest::Approx(1.0));

  Mat same(3, 6);
  Vec row = rng.normal_vec(6);
  for (int i = 0; i < 3; ++i) same.row(i) = row.transpose();
  Vec gs = enc.importance_scores(same, va);
  for (int i = 0; i < 3; ++i) CHECK(gs(i) == doctest::Approx(1.0 / 3).epsilon(1e-9));

  for (bool stat : {false, true}) {
    SituationConfig cfg = toy_config();
    cfg.static_importance_query = stat;
    Rng r(8);
    SituationEncoder e(cfg, r);
    Mat sv = r.uniform_mat(4, 6, 1.0);
    Vec g = e.importance_scores(sv, va);
    CHECK(g.minCoeff() >= 0.0);
    CHECK(g.maxCoeff() <= 1.0);
    CHECK(std::abs(g.sum() - 1.0) <= 1e-6);

    // permuting sentences permutes g identically
    std::vector<int> perm = {2, 0, 3, 1};
    Mat sp(4, 6);
    for (int i = 0; i < 4; ++i) sp.row(i) = sv.row(perm[static_cast<std::size_t>(i)]);
    Vec gp = e.importance_scores(sp, va);
    for (int i = 0; i < 4; ++i)
      CHECK(gp(i) == doctest::Approx(g(perm[static_cast<std::size_t>(i)])).epsilon(1e-12));
  }
}

TEST_CASE("permuting body sentences permutes encodings and fixes v_X") {
  Rng rng(9);
  SituationEncoder enc(toy_config(), rng);
  NewsArticle art = article_from_ids({{1, 2}, {3, 4, 5}, {6, 7}, {8}});
  NewsEncoding base = enc.encode_news(art);

  NewsArticle shuffled = art;  // swap body order (title fixed at slot 0)
  std::swap(shuffled.body[0], shuffled.body[2]);
  NewsEncoding prm = enc.encode_news(shuffled);

  std::vector<int> perm = {0, 3, 2, 1};  // new index -> old index
  for (int i = 0; i < 4; ++i) {
    CHECK((prm.sentence_vectors.row(i) -
           base.sentence_vectors.row(perm[static_cast<std::size_t>(i)]))
              .cwiseAbs()
              .maxCoeff() <= 1e-9);
    CHECK(prm.sentence_attentions(i) ==
          doctest::Approx(base.sentence_attentions(perm[static_cast<std::size_t>(i)]))
              .epsilon(1e-9));
  }
  CHECK((prm.news_vector - base.news_vector).cwiseAbs().maxCoeff() <= 1e-6);

  Vec va = rng.normal_vec(4);
  Vec g0 = enc.importance_scores(base.sentence_vectors, va);
  Vec g1 = enc.importance_scores(prm.sentence_vectors, va);
  for (int i = 0; i < 4; ++i)
    CHECK(g1(i) == doctest::Approx(g0(perm[static_cast<std::size_t>(i)])).epsilon(1e-9));
}

TEST_CASE("kl regularizer is a smoothed forward KL") {
  Vec p(2), q(2);
  p << 0.5, 0.5;
  q << 0.9, 0.1;
  Real expect = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
  CHECK(kl_regularizer(p, q) == doctest::Approx(expect).epsilon(1e-6));
  CHECK(kl_regularizer(q, q) == 0.0);
  CHECK(kl_regularizer(p, p) == 0.0);

  Rng rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    int n = rng.uniform_range(2, 8);
    Vec a = softmax_plain(rng.normal_vec(n) * 2.0);
    Vec b = softmax_plain(rng.normal_vec(n) * 2.0);
    CHECK(kl_regularizer(a, b) >= 0.0);
    CHECK(kl_regularizer(a, a) == 0.0);
  }
  CHECK_THROWS(kl_regularizer(Vec::Zero(2), Vec::Zero(3)));
}

TEST_CASE("taped encoder equals the plain path") {
  Rng rng(11);
  SituationEncoder enc(toy_config(), rng);
  NewsArticle art = article_from_ids({{1, 2, 3}, {4, 5}, {6, 7, 8, 9}});
  Vec pf = rng.normal_vec(2);
  Mat Va = rng.uniform_mat(3, 4, 1.0);

  NewsEncoding plain = enc.encode_news(art);
  Vec zhat = enc.predict_aspect_distribution(pf, plain.news_vector);
  Vec va = weighted_topic_vector(zhat, Va);
  Vec gsc = enc.importance_scores(plain.sentence_vectors, va);

  nn::Graph g;
  NewsEncodingVars tv = enc.build_news(g, art);
  ad::Var zv = enc.build_aspect_distribution(g, g.constant(Mat(pf)), tv.news_vector);
  ad::Var vav = ad::matmul(ad::transpose(g.constant(Mat(Va))), zv);
  ad::Var gv = enc.build_importance(g, tv.sentence_vectors, vav);

  CHECK((Vec(tv.news_vector.value()) - plain.news_vector).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((Vec(tv.sentence_attentions.value()) - plain.sentence_attentions).cwiseAbs().maxCoeff() <=
        1e-12);
  CHECK((Vec(zv.value()) - zhat).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((Vec(gv.value()) - gsc).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("gradients through words, importance, and aspect head match finite differences") {
  SituationConfig cfg = toy_config();
  cfg.enc_layers = 1;
  Rng rng(12);
  SituationEncoder enc(cfg, rng);
  NewsArticle art = article_from_ids({{1, 2, 3}, {4, 5}});
  Vec pf = rng.normal_vec(2);
  Mat Va = rng.uniform_mat(3, 4, 1.0);
  Vec wg = rng.normal_vec(2), wz = rng.normal_vec(3);

  auto plain = [&]() {
    NewsEncoding e = enc.encode_news(art);
    Vec zhat = enc.predict_aspect_distribution(pf, e.news_vector);
    Vec va = weighted_topic_vector(zhat, Va);
    Vec g = enc.importance_scores(e.sentence_vectors, va);
    return wg.dot(g) + wz.dot(zhat);
  };

  enc.params().zero_grads();
  nn::Graph g;
  NewsEncodingVars tv = enc.build_news(g, art);
  ad::Var zv = enc.build_aspect_distribution(g, g.constant(Mat(pf)), tv.news_vector);
  ad::Var vav = ad::matmul(ad::transpose(g.constant(Mat(Va))), zv);
  ad::Var gv = enc.build_importance(g, tv.sentence_vectors, vav);
  ad::Var loss =
      ad::add(ad::dot(gv, g.constant(Mat(wg))), ad::dot(zv, g.constant(Mat(wz))));
  g.backward(loss);
  g.flush_grads();

  Real h = 1e-6;
  for (const auto& name : enc.params().names()) {
    if (name == "ug") continue;  // inactive query parameterization
    Mat& P = enc.params().get(name);
    for (Eigen::Index j = 0; j < P.cols(); ++j) {
      for (Eigen::Index i = 0; i < P.rows(); ++i) {
        Real keep = P(i, j);
        P(i, j) = keep + h;
        Real up = plain();
        P(i, j) = keep - h;
        Real dn = plain();
        P(i, j) = keep;
        Real num = (up - dn) / (2 * h);
        Real ana = enc.params().grad(name)(i, j);
        Real denom = std::max<Real>(1.0, std::max(std::abs(num), std::abs(ana)));
        CHECK(std::abs(num - ana) / denom < 1e-4);
      }
    }
  }
}

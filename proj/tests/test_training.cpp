#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dsattr/generator.hpp"
#include "dsattr/training.hpp"

using namespace dsattr;

namespace {

// Tiny hand corpus: one user, three interactions over two articles.
struct HandSetup {
  Corpus corpus;
  Vocabulary vocab;
  WordClassLexicon lexicon;
};

Sentence sent(std::initializer_list<const char*> words) {
  Sentence s;
  for (const char* w : words) s.words.emplace_back(w);
  return s;
}

HandSetup hand_setup() {
  HandSetup h;
  NewsArticle a1;
  a1.id = "a1";
  a1.title = sent({"w1", "w2"});
  a1.body = {sent({"w3", "w4"}), sent({"w5", "w1"})};
  NewsArticle a2;
  a2.id = "a2";
  a2.title = sent({"w6", "w3"});
  a2.body = {sent({"w2", "w5"})};
  h.corpus.add_article(a1);
  h.corpus.add_article(a2);

  UserHistory u;
  u.user_id = "u0";
  auto add = [&](const char* news, int t, std::initializer_list<const char*> words) {
    Interaction it;
    it.news_id = news;
    it.comment.user_id = "u0";
    it.comment.t = t;
    for (const char* w : words) it.comment.words.emplace_back(w);
    u.interactions.push_back(std::move(it));
  };
  add("a1", 0, {"w3", "w5"});
  add("a2", 1, {"w2", "w6"});
  add("a1", 2, {"w4", "w1", "w6"});
  h.corpus.users.push_back(std::move(u));

  h.vocab = build_vocab(h.corpus, 50);
  apply_vocab(h.corpus, h.vocab);
  h.lexicon.entity_words = {"w1", "w3"};
  h.lexicon.opinion_words = {"w4", "w6"};
  return h;
}

ModelConfig tiny_model_config(int vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.topic_d = 6;
  c.k_a = 3;
  c.k_s = 2;
  c.topic_enc_hidden = 5;
  c.pf_dim = 4;
  c.history_layers = 1;
  c.history_cap = 8;
  c.emb_dim = 5;
  c.enc_hidden = 3;
  c.enc_layers = 1;
  c.att_hidden = 4;
  c.max_sentence_words = 6;
  c.max_sentences = 4;
  c.dec_hidden = 7;
  c.dec_layers = 1;
  return c;
}

AttributorModel tiny_model(const ModelConfig& mc, std::uint64_t seed = 11) {
  Rng rng(seed);
  TopicModel topics(mc.topic_config(), rng);
  return AttributorModel(mc, std::move(topics), rng);
}

std::string fresh_dir(const std::string& stem) {
  auto dir = std::filesystem::temp_directory_path() / stem;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace

TEST_CASE("corpus split holds out the latest interactions per user") {
  Corpus c;
  auto user_with = [](const char* id, int T) {
    UserHistory u;
    u.user_id = id;
    for (int t = 0; t < T; ++t) {
      Interaction it;
      it.news_id = "a";
      it.comment.t = t;
      u.interactions.push_back(it);
    }
    return u;
  };
  c.users.push_back(user_with("u0", 30));
  c.users.push_back(user_with("u1", 2));
  c.users.push_back(user_with("u2", 1));

  DataSplit s = split_corpus(c, 0.1, 0.1);
  int u0_train = 0, u0_val = 0, u0_test = 0;
  for (const auto& e : s.train)
    if (e.user == 0) {
      ++u0_train;
      CHECK(e.target >= 1);
      CHECK(e.target <= 23);
    }
  for (const auto& e : s.val)
    if (e.user == 0) {
      ++u0_val;
      CHECK(e.target >= 24);
      CHECK(e.target <= 26);
    }
  for (const auto& e : s.test)
    if (e.user == 0) {
      ++u0_test;
      CHECK(e.target >= 27);
    }
  CHECK(u0_train == 23);
  CHECK(u0_val == 3);
  CHECK(u0_test == 3);

  int u1_any = 0, u2_any = 0;
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (const auto& e : *part) {
      if (e.user == 1) ++u1_any;
      if (e.user == 2) ++u2_any;
    }
  CHECK(u1_any == 1);  // only target 1, in train
  CHECK(u2_any == 0);  // a single interaction has no history
}

TEST_CASE("model assembles importance scores from preferences and encoding") {
  HandSetup h = hand_setup();
  ModelConfig mc = tiny_model_config(h.vocab.size());
  AttributorModel model = tiny_model(mc);
  TopicSequences seqs = featurize_user(model.topics(), h.corpus.users[0], h.vocab, h.lexicon);
  CHECK(seqs.size() == 3);
  for (const Vec& z : seqs.z_a) {
    CHECK(z.size() == 3);
    CHECK(std::abs(z.sum() - 1.0) <= 1e-9);
  }

  PreferenceState prefs = model.preference_from(seqs, 2);
  CHECK(prefs.as_of == 2);
  CHECK_THROWS_WITH(std::ignore = model.preference_from(seqs, 0), "history required");
  CHECK_THROWS(std::ignore = model.preference_from(seqs, 9));

  NewsEncoding enc = model.situation().encode_news(h.corpus.article("a1"));
  ImportanceScores sc = model.importance(prefs, enc);
  CHECK(sc.g.size() == enc.sentence_vectors.rows());
  CHECK(std::abs(sc.g.sum() - 1.0) <= 1e-9);
  CHECK(std::abs(sc.aspect_distribution.sum() - 1.0) <= 1e-9);
  Vec va_hand = model.topics().topic_vectors(Branch::kAspect).transpose() * sc.aspect_distribution;
  CHECK((sc.aspect_vector - va_hand).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("teacher-forced loss composes against a raw scalar oracle") {
  HandSetup h = hand_setup();
  ModelConfig mc = tiny_model_config(h.vocab.size());
  AttributorModel model = tiny_model(mc);
  TopicSequences seqs = featurize_user(model.topics(), h.corpus.users[0], h.vocab, h.lexicon);
  const Interaction& inter = h.corpus.users[0].interactions[2];
  const NewsArticle& art = h.corpus.article(inter.news_id);

  LossBreakdown b = teacher_forced_loss(model, seqs, 2, art, inter.comment, 0.4, 0.4);
  CHECK(std::isfinite(b.total));
  CHECK(b.kl_aspect >= 0.0);
  CHECK(b.kl_opinion >= 0.0);
  CHECK(std::abs(b.total - (b.ce + 0.4 * b.kl_aspect + 0.4 * b.kl_opinion)) <= 1e-9);

  // Scalar recomputation of every component from module outputs.
  PreferenceState prefs = model.preference_from(seqs, 2);
  NewsEncoding enc = model.situation().encode_news(art);
  ImportanceScores sc = model.importance(prefs, enc);
  Vec zs_hat = model.decoder().predict_opinion_distribution(prefs.pf_s, sc.g,
                                                            enc.sentence_vectors);
  DecoderState st = model.decoder().initial_state(enc.news_vector,
                                                  opinion_vector(zs_hat, model.topics()));
  std::vector<int> seq = inter.comment.tokens;
  seq.push_back(Vocabulary::kEos);
  double ce_hand = 0;
  int prev = Vocabulary::kBos;
  for (int tok : seq) {
    auto [next, logits] = model.decoder().decode_step(st, prev, enc, sc.g);
    double denom = 0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) denom += std::exp(logits(i));
    ce_hand += -std::log(std::exp(logits(tok)) / denom);
    st = std::move(next);
    prev = tok;
  }
  ce_hand /= static_cast<double>(seq.size());
  auto kl_hand = [](const Vec& p, const Vec& q) {
    double s = 0;
    for (Eigen::Index i = 0; i < p.size(); ++i)
      s += p(i) * (std::log(p(i) + 1e-8) - std::log(q(i) + 1e-8));
    return std::max(0.0, s);
  };
  double kla = kl_hand(sc.aspect_distribution, seqs.z_a[2]);
  double kls = kl_hand(zs_hat, seqs.z_s[2]);
  CHECK(b.ce == doctest::Approx(ce_hand).epsilon(1e-9));
  CHECK(b.kl_aspect == doctest::Approx(kla).epsilon(1e-9));
  CHECK(b.kl_opinion == doctest::Approx(kls).epsilon(1e-9));
  CHECK(b.total == doctest::Approx(ce_hand + 0.4 * kla + 0.4 * kls).epsilon(1e-9));

  // Weight annihilation and the history guard.
  LossBreakdown b0 = teacher_forced_loss(model, seqs, 2, art, inter.comment, 0.0, 0.0);
  CHECK(b0.total == b0.ce);
  CHECK_THROWS_WITH(
      std::ignore = teacher_forced_loss(model, seqs, 0, art, inter.comment, 0.4, 0.4),
      "history required");
}

TEST_CASE("one-topic branches make the KL terms vanish") {
  HandSetup h = hand_setup();
  ModelConfig mc = tiny_model_config(h.vocab.size());
  mc.k_a = 1;
  mc.k_s = 1;
  AttributorModel model = tiny_model(mc);
  TopicSequences seqs = featurize_user(model.topics(), h.corpus.users[0], h.vocab, h.lexicon);
  const Interaction& inter = h.corpus.users[0].interactions[1];
  LossBreakdown b = teacher_forced_loss(model, seqs, 1, h.corpus.article(inter.news_id),
                                        inter.comment, 0.4, 0.4);
  CHECK(b.kl_aspect == 0.0);
  CHECK(b.kl_opinion == 0.0);
  CHECK(b.total == b.ce);
}

TEST_CASE("taped joint loss equals the plain path") {
  HandSetup h = hand_setup();
  ModelConfig mc = tiny_model_config(h.vocab.size());
  AttributorModel model = tiny_model(mc);
  TopicSequences seqs = featurize_user(model.topics(), h.corpus.users[0], h.vocab, h.lexicon);
  const Interaction& inter = h.corpus.users[0].interactions[2];
  const NewsArticle& art = h.corpus.article(inter.news_id);

  LossBreakdown plain = teacher_forced_loss(model, seqs, 2, art, inter.comment, 0.4, 0.4);
  nn::Graph g;
  LossBreakdown taped;
  ad::Var loss = build_joint_loss(g, model, seqs, 2, art, inter.comment, 0.4, 0.4, &taped);
  CHECK(loss.value()(0, 0) == taped.total);
  CHECK(taped.ce == doctest::Approx(plain.ce).epsilon(1e-9));
  CHECK(taped.kl_aspect == doctest::Approx(plain.kl_aspect).epsilon(1e-9));
  CHECK(taped.kl_opinion == doctest::Approx(plain.kl_opinion).epsilon(1e-9));
  CHECK(taped.total == doctest::Approx(plain.total).epsilon(1e-9));
  CHECK(std::abs(taped.total -
                 (taped.ce + 0.4 * taped.kl_aspect + 0.4 * taped.kl_opinion)) <= 1e-9);
}

TEST_CASE("joint-loss gradients match finite differences across every store") {
  HandSetup h = hand_setup();
  ModelConfig mc = tiny_model_config(h.vocab.size());
  AttributorModel model = tiny_model(mc);
  model.topics().params().frozen = false;  // deliver adjoints for Va/Vs too
  TopicSequences seqs = featurize_user(model.topics(), h.corpus.users[0], h.vocab, h.lexicon);
  const Interaction& inter = h.corpus.users[0].interactions[2];
  const NewsArticle& art = h.corpus.article(inter.news_id);

  auto plain_total = [&]() {
    return teacher_forced_loss(model, seqs, 2, art, inter.comment, 0.4, 0.4).total;
  };

  nn::Graph g;
  ad::Var loss = build_joint_loss(g, model, seqs, 2, art, inter.comment, 0.4, 0.4);
  g.backward(loss);
  g.flush_grads();

  std::vector<nn::ParamStore*> stores = model.joint_stores();
  stores.push_back(&model.topics().params());
  const Real step = 1e-6;
  int checked = 0;
  for (auto* store : stores) {
    for (const auto& name : store->names()) {
      Mat& P = store->get(name);
      Eigen::Index stride = P.size() > 80 ? 11 : 1;
      for (Eigen::Index idx = 0; idx < P.size(); idx += stride) {
        Eigen::Index i = idx % P.rows(), j = idx / P.rows();
        Real keep = P(i, j);
        P(i, j) = keep + step;
        Real up = plain_total();
        P(i, j) = keep - step;
        Real dn = plain_total();
        P(i, j) = keep;
        Real num = (up - dn) / (2 * step);
        Real ana = store->grad(name)(i, j);
        Real denom = std::max<Real>(1.0, std::max(std::abs(num), std::abs(ana)));
        CHECK(std::abs(num - ana) / denom < 1e-4);
        ++checked;
      }
    }
    store->zero_grads();
  }
  CHECK(checked > 400);
}

TEST_CASE("inference traces are deterministic and export cleanly") {
  HandSetup h = hand_setup();
  ModelConfig mc = tiny_model_config(h.vocab.size());
  AttributorModel model = tiny_model(mc);
  TopicSequences seqs = featurize_user(model.topics(), h.corpus.users[0], h.vocab, h.lexicon);
  const NewsArticle& art = h.corpus.article("a2");

  auto inf = model.infer(seqs, 2, art, 6, DecodeMode::greedy());
  auto inf2 = model.infer(seqs, 2, art, 6, DecodeMode::greedy());
  CHECK(inf.trace.tokens == inf2.trace.tokens);
  CHECK(inf.prefs.as_of == 2);

  std::string payload = trace_json(inf, h.vocab);
  CHECK(payload == trace_json(inf2, h.vocab));
  auto j = nlohmann::json::parse(payload);
  CHECK(j.at("tokens").size() == inf.trace.tokens.size());
  CHECK(j.at("g").size() == static_cast<std::size_t>(inf.scores.g.size()));
  CHECK(j.at("z_a_hat").size() == 3);
  CHECK(j.at("z_s_hat").size() == 2);
  CHECK(j.at("e_mean").size() == static_cast<std::size_t>(inf.scores.g.size()));
  std::string text = j.at("text").get<std::string>();
  std::ostringstream joined;
  for (std::size_t i = 0; i < inf.trace.tokens.size(); ++i)
    joined << (i ? " " : "") << h.vocab.token(inf.trace.tokens[i]);
  CHECK(text == joined.str());
}

TEST_CASE("checkpoint directory round-trips and rejects mismatches") {
  HandSetup h = hand_setup();
  ModelConfig mc = tiny_model_config(h.vocab.size());
  mc.static_importance_query = true;  // exercise flag persistence
  AttributorModel model = tiny_model(mc);
  std::string dir = fresh_dir("dsattr_ckpt_test");
  model.save(dir, h.vocab);

  auto [back, vocab2] = AttributorModel::load(dir);
  CHECK(vocab2.content_hash() == h.vocab.content_hash());
  CHECK(back.config().static_importance_query);
  CHECK(back.config().k_a == mc.k_a);
  CHECK(back.topics().params().content_hash() == model.topics().params().content_hash());
  CHECK(back.history().params().content_hash() == model.history().params().content_hash());
  CHECK(back.situation().params().content_hash() == model.situation().params().content_hash());
  CHECK(back.decoder().params().content_hash() == model.decoder().params().content_hash());

  // Same inputs, same behavior after the round trip.
  TopicSequences seqs = featurize_user(model.topics(), h.corpus.users[0], h.vocab, h.lexicon);
  auto a = model.infer(seqs, 2, h.corpus.article("a1"), 5, DecodeMode::greedy());
  auto b = back.infer(seqs, 2, h.corpus.article("a1"), 5, DecodeMode::greedy());
  CHECK(a.trace.tokens == b.trace.tokens);

  // Foreign vocabulary → rejected.
  Vocabulary other = h.vocab;
  other.tokens.push_back("extra");
  other.token_to_id["extra"] = other.size() - 1;
  other.save(dir + "/vocab.json");
  CHECK_THROWS_WITH(std::ignore = AttributorModel::load(dir), "checkpoint vocabulary mismatch");
  h.vocab.save(dir + "/vocab.json");

  // Missing parameter in the main blob → rejected.
  nn::ParamStore combined;
  combined.load(dir + "/main.bin");
  nn::ParamStore pruned;
  bool dropped = false;
  for (const auto& name : combined.names()) {
    if (!dropped && name.rfind("dec/", 0) == 0) {
      dropped = true;
      continue;
    }
    pruned.add(name, combined.get(name));
  }
  pruned.save(dir + "/main.bin");
  CHECK_THROWS(std::ignore = AttributorModel::load(dir));
}

TEST_CASE("disentangler pretraining runs deterministically and improves") {
  GeneratorConfig gc;
  gc.n_users = 5;
  gc.history_len = 6;
  auto gen = generate_synthetic_corpus(gc, 21);
  Vocabulary vocab = build_vocab(gen.corpus, 400);
  apply_vocab(gen.corpus, vocab);

  TopicConfig tc;
  tc.vocab_size = vocab.size();
  tc.k_a = 3;
  tc.k_s = 2;
  tc.d = 6;
  tc.enc_hidden = 5;
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 8;
  cfg.seed = 3;
  cfg.quiet = true;

  PretrainResult a = pretrain_disentangler(gen.corpus, vocab, gen.lexicon, tc, cfg);
  CHECK(a.epoch_loss.size() == 4);
  for (Real v : a.epoch_loss) CHECK(std::isfinite(v));
  CHECK(a.epoch_loss.back() < a.epoch_loss.front());

  PretrainResult b = pretrain_disentangler(gen.corpus, vocab, gen.lexicon, tc, cfg);
  for (std::size_t i = 0; i < a.epoch_loss.size(); ++i)
    CHECK(a.epoch_loss[i] == b.epoch_loss[i]);
  CHECK(a.model.params().content_hash() == b.model.params().content_hash());
}

TEST_CASE("joint training logs the loss identity and freezes the disentangler") {
  GeneratorConfig gc;
  gc.n_users = 4;
  gc.history_len = 6;
  auto gen = generate_synthetic_corpus(gc, 22);
  Vocabulary vocab = build_vocab(gen.corpus, 400);
  apply_vocab(gen.corpus, vocab);

  ModelConfig mc = tiny_model_config(vocab.size());
  AttributorModel model = tiny_model(mc, 5);
  std::uint64_t topics_before = model.topics().params().content_hash();

  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = 9;
  cfg.quiet = true;
  std::string dir = fresh_dir("dsattr_joint_test");
  cfg.checkpoint_dir = dir + "/ckpt";
  cfg.metrics_path = dir + "/metrics.jsonl";
  std::filesystem::create_directories(cfg.checkpoint_dir);

  JointResult res = train_joint(model, gen.corpus, vocab, gen.lexicon, cfg);
  CHECK(res.epoch_train.size() == 2);
  for (const LossBreakdown& b : res.epoch_train) {
    CHECK(std::isfinite(b.total));
    CHECK(b.kl_aspect >= 0.0);
    CHECK(b.kl_opinion >= 0.0);
    CHECK(std::abs(b.total - (b.ce + 0.4 * b.kl_aspect + 0.4 * b.kl_opinion)) <= 1e-9);
  }
  CHECK(model.topics().params().content_hash() == topics_before);
  CHECK(res.best_epoch >= 1);
  CHECK(std::isfinite(res.best_val_ce));

  std::ifstream log(cfg.metrics_path);
  REQUIRE(log.is_open());
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    auto j = nlohmann::json::parse(line);
    Real total = j.at("total").get<Real>();
    Real ce = j.at("ce").get<Real>();
    Real ka = j.at("kl_a").get<Real>();
    Real ks = j.at("kl_s").get<Real>();
    CHECK(std::abs(total - (ce + 0.4 * ka + 0.4 * ks)) <= 1e-9);
    CHECK(j.contains("val_ce"));
    ++lines;
  }
  CHECK(lines == 2);

  auto [loaded, v2] = AttributorModel::load(cfg.checkpoint_dir);
  CHECK(v2.size() == vocab.size());

  // Same seed, fresh model → identical trajectory.
  AttributorModel model2 = tiny_model(mc, 5);
  TrainConfig cfg2 = cfg;
  cfg2.checkpoint_dir.clear();
  cfg2.metrics_path.clear();
  JointResult res2 = train_joint(model2, gen.corpus, vocab, gen.lexicon, cfg2);
  for (std::size_t i = 0; i < res.epoch_val_ce.size(); ++i)
    CHECK(res.epoch_val_ce[i] == res2.epoch_val_ce[i]);

  // Ablation flag must match the model's construction.
  TrainConfig bad = cfg2;
  bad.ablation = Ablation::kNoIm;
  CHECK_THROWS_WITH(std::ignore = train_joint(model2, gen.corpus, vocab, gen.lexicon, bad),
                    "ablation flag mismatch between train config and model");
}

TEST_CASE("train config round-trips through JSON") {
  TrainConfig c;
  c.lambda1 = 0.25;
  c.epochs = 7;
  c.ablation = Ablation::kNoOv;
  c.seed = 42;
  TrainConfig back = TrainConfig::from_json(c.to_json());
  CHECK(back.lambda1 == 0.25);
  CHECK(back.epochs == 7);
  CHECK(back.ablation == Ablation::kNoOv);
  CHECK(back.seed == 42);
  CHECK(ablation_name(Ablation::kNoIm) == "no_im");
  CHECK_THROWS(std::ignore = ablation_from_name("bogus"));
  TrainConfig invalid;
  invalid.batch_size = 0;
  CHECK_THROWS(invalid.validate());
}

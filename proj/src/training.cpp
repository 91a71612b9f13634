#include "dsattr/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace dsattr {

using nlohmann::json;

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kNoIm:
      return "no_im";
    case Ablation::kNoOv:
      return "no_ov";
    default:
      return "full";
  }
}

Ablation ablation_from_name(const std::string& name) {
  if (name == "full") return Ablation::kFull;
  if (name == "no_im") return Ablation::kNoIm;
  if (name == "no_ov") return Ablation::kNoOv;
  throw std::invalid_argument("unknown ablation: " + name);
}

void TrainConfig::validate() const {
  if (lambda1 < 0 || lambda2 < 0) throw std::invalid_argument("loss weights must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (learning_rate <= 0) throw std::invalid_argument("learning_rate must be > 0");
  if (lr_decay_every < 1) throw std::invalid_argument("lr_decay_every must be >= 1");
  if (lr_decay_factor <= 0 || lr_decay_factor > 1)
    throw std::invalid_argument("lr_decay_factor must be in (0, 1]");
  if (val_fraction < 0 || test_fraction < 0 || val_fraction + test_fraction >= 1)
    throw std::invalid_argument("holdout fractions must be >= 0 and sum below 1");
}

std::string TrainConfig::to_json() const {
  json j;
  j["lambda1"] = lambda1;
  j["lambda2"] = lambda2;
  j["batch_size"] = batch_size;
  j["learning_rate"] = learning_rate;
  j["epochs"] = epochs;
  j["lr_decay_every"] = lr_decay_every;
  j["lr_decay_factor"] = lr_decay_factor;
  j["ablation"] = ablation_name(ablation);
  j["seed"] = seed;
  j["val_fraction"] = val_fraction;
  j["test_fraction"] = test_fraction;
  j["finetune_disentangler"] = finetune_disentangler;
  j["metrics_path"] = metrics_path;
  j["checkpoint_dir"] = checkpoint_dir;
  return j.dump(2) + "\n";
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  TrainConfig c;
  c.lambda1 = j.value("lambda1", c.lambda1);
  c.lambda2 = j.value("lambda2", c.lambda2);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.lr_decay_every = j.value("lr_decay_every", c.lr_decay_every);
  c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
  if (j.contains("ablation")) c.ablation = ablation_from_name(j.at("ablation").get<std::string>());
  c.seed = j.value("seed", c.seed);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.test_fraction = j.value("test_fraction", c.test_fraction);
  c.finetune_disentangler = j.value("finetune_disentangler", c.finetune_disentangler);
  c.metrics_path = j.value("metrics_path", c.metrics_path);
  c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir);
  return c;
}

DataSplit split_corpus(const Corpus& corpus, Real val_fraction, Real test_fraction) {
  DataSplit out;
  for (int u = 0; u < static_cast<int>(corpus.users.size()); ++u) {
    int T = static_cast<int>(corpus.users[static_cast<std::size_t>(u)].interactions.size());
    int n_test = static_cast<int>(std::floor(test_fraction * T + 0.5));
    int n_val = static_cast<int>(std::floor(val_fraction * T + 0.5));
    // Keep at least two training-region interactions (one usable target).
    while (T - n_val - n_test < 2 && n_test > 0) --n_test;
    while (T - n_val - n_test < 2 && n_val > 0) --n_val;
    int train_end = T - n_val - n_test;
    for (int t = 1; t < train_end; ++t) out.train.push_back({u, t});
    for (int t = std::max(1, train_end); t < T - n_test; ++t) out.val.push_back({u, t});
    for (int t = std::max(1, T - n_test); t < T; ++t) out.test.push_back({u, t});
  }
  return out;
}

LossBreakdown teacher_forced_loss(const AttributorModel& model, const TopicSequences& seqs,
                                  std::size_t target, const NewsArticle& article,
                                  const Comment& comment, Real lambda1, Real lambda2) {
  if (target < 1) throw std::invalid_argument("history required");
  if (target >= seqs.size())
    throw std::invalid_argument("target outside the featurized sequence");

  PreferenceState prefs = model.preference_from(seqs, target);
  NewsEncoding enc = model.situation().encode_news(article);
  ImportanceScores scores = model.importance(prefs, enc);
  Vec zs_hat =
      model.decoder().predict_opinion_distribution(prefs.pf_s, scores.g, enc.sentence_vectors);
  Vec v_s = opinion_vector(zs_hat, model.topics());
  DecoderState st = model.decoder().initial_state(enc.news_vector, v_s);

  std::vector<int> seq = comment.tokens;
  seq.push_back(Vocabulary::kEos);
  Real ce = 0;
  int prev = Vocabulary::kBos;
  for (int tok : seq) {
    auto [next, logits] = model.decoder().decode_step(st, prev, enc, scores.g);
    Real m = logits.maxCoeff();
    ce -= logits(tok) - (m + std::log((logits.array() - m).exp().sum()));
    st = std::move(next);
    prev = tok;
  }
  LossBreakdown b;
  b.ce = ce / static_cast<Real>(seq.size());
  b.kl_aspect = kl_regularizer(scores.aspect_distribution, seqs.z_a[target]);
  b.kl_opinion = kl_regularizer(zs_hat, seqs.z_s[target]);
  b.total = b.ce + (lambda1 * b.kl_aspect + lambda2 * b.kl_opinion);
  return b;
}

ad::Var build_joint_loss(nn::Graph& g, AttributorModel& model, const TopicSequences& seqs,
                         std::size_t target, const NewsArticle& article, const Comment& comment,
                         Real lambda1, Real lambda2, LossBreakdown* breakdown) {
  using namespace ad;
  if (target < 1) throw std::invalid_argument("history required");
  if (target >= seqs.size())
    throw std::invalid_argument("target outside the featurized sequence");

  std::vector<Vec> za(seqs.z_a.begin(), seqs.z_a.begin() + static_cast<std::ptrdiff_t>(target));
  std::vector<Vec> zs(seqs.z_s.begin(), seqs.z_s.begin() + static_cast<std::ptrdiff_t>(target));
  auto [pf_a, pf_s] = model.history().build_preference(g, za, zs);
  NewsEncodingVars news = model.situation().build_news(g, article);
  Var za_hat = model.situation().build_aspect_distribution(g, pf_a, news.news_vector);
  Var v_a = matmul(transpose(g.param(model.topics().params(), "Va")), za_hat);
  Var g_scores = model.situation().build_importance(g, news.sentence_vectors, v_a);
  Var zs_hat =
      model.decoder().build_opinion_distribution(g, pf_s, news.sentence_vectors, g_scores);
  Var v_s = matmul(transpose(g.param(model.topics().params(), "Vs")), zs_hat);
  auto st = model.decoder().build_init(g, news.news_vector, v_s);

  std::vector<int> seq = comment.tokens;
  seq.push_back(Vocabulary::kEos);
  Var ce_sum = g.constant(0.0);
  int prev = Vocabulary::kBos;
  for (int tok : seq) {
    Var logits = model.decoder().build_step(g, st, prev, news.sentence_vectors, g_scores);
    ce_sum = add(ce_sum, cross_entropy_logits(logits, tok));
    prev = tok;
  }
  Var ce = scale(1.0 / static_cast<Real>(seq.size()), ce_sum);
  Var kl_a = kl_to_const(za_hat, seqs.z_a[target], 1e-8);
  Var kl_s = kl_to_const(zs_hat, seqs.z_s[target], 1e-8);
  Var total = add(ce, add(scale(lambda1, kl_a), scale(lambda2, kl_s)));
  if (breakdown) {
    breakdown->ce = ce.value()(0, 0);
    breakdown->kl_aspect = kl_a.value()(0, 0);
    breakdown->kl_opinion = kl_s.value()(0, 0);
    breakdown->total = total.value()(0, 0);
  }
  return total;
}

namespace {

Real decayed_lr(const TrainConfig& cfg, int epoch) {
  return cfg.learning_rate * std::pow(cfg.lr_decay_factor, epoch / cfg.lr_decay_every);
}

void scale_grads(const std::vector<nn::ParamStore*>& stores, Real inv) {
  for (auto* s : stores)
    for (const auto& name : s->names()) s->grad(name) *= inv;
}

}  // namespace

PretrainResult pretrain_disentangler(const Corpus& corpus, const Vocabulary& vocab,
                                     const WordClassLexicon& lexicon, const TopicConfig& topic_cfg,
                                     const TrainConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  PretrainResult res{TopicModel(topic_cfg, rng), {}};
  TopicModel& model = res.model;

  // Training-region comments only; held-out interactions stay unseen.
  DataSplit split = split_corpus(corpus, cfg.val_fraction, cfg.test_fraction);
  std::vector<char> is_heldout_start(corpus.users.size(), 0);
  std::vector<int> train_end(corpus.users.size(), 0);
  for (std::size_t u = 0; u < corpus.users.size(); ++u)
    train_end[u] = static_cast<int>(corpus.users[u].interactions.size());
  auto cap_end = [&](const std::vector<TrainExample>& exs) {
    for (const auto& e : exs)
      train_end[static_cast<std::size_t>(e.user)] =
          std::min(train_end[static_cast<std::size_t>(e.user)], e.target);
  };
  cap_end(split.val);
  cap_end(split.test);
  std::vector<BowTriple> bows;
  for (std::size_t u = 0; u < corpus.users.size(); ++u)
    for (int t = 0; t < train_end[u]; ++t)
      bows.push_back(featurize_comment(corpus.users[u].interactions[static_cast<std::size_t>(t)]
                                           .comment,
                                       vocab, lexicon));
  if (bows.empty()) throw std::invalid_argument("empty corpus");

  std::ofstream log;
  if (!cfg.metrics_path.empty()) log.open(cfg.metrics_path, std::ios::trunc);
  nn::Adam opt;
  std::vector<std::size_t> order(bows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.lr = decayed_lr(cfg, epoch);
    rng.shuffle(order);
    Real total = 0;
    int in_batch = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const BowTriple& b = bows[order[k]];
      nn::Graph g;
      Vec noise_a = rng.normal_vec(topic_cfg.k_a);
      Vec noise_s = rng.normal_vec(topic_cfg.k_s);
      ad::Var loss = ad::add(model.build_elbo(g, b.y, b.y_a, Branch::kAspect, noise_a),
                             model.build_elbo(g, b.y, b.y_s, Branch::kOpinion, noise_s));
      Real v = loss.value()(0, 0);
      if (!std::isfinite(v)) throw std::runtime_error("pretraining diverged: non-finite loss");
      total += v;
      g.backward(loss);
      g.flush_grads();
      if (++in_batch == cfg.batch_size || k + 1 == order.size()) {
        scale_grads({&model.params()}, 1.0 / static_cast<Real>(in_batch));
        opt.step({&model.params()});
        model.params().zero_grads();
        in_batch = 0;
      }
    }
    res.epoch_loss.push_back(total / static_cast<Real>(bows.size()));
    if (log.is_open()) {
      json j;
      j["epoch"] = epoch + 1;
      j["elbo"] = res.epoch_loss.back();
      log << j.dump() << '\n' << std::flush;
    }
    if (!cfg.quiet)
      std::cerr << "[dsattr] pretrain epoch " << (epoch + 1) << "/" << cfg.epochs
                << " elbo=" << res.epoch_loss.back() << "\n";
  }
  return res;
}

JointResult train_joint(AttributorModel& model, const Corpus& corpus, const Vocabulary& vocab,
                        const WordClassLexicon& lexicon, const TrainConfig& cfg) {
  cfg.validate();
  bool want_no_im = cfg.ablation == Ablation::kNoIm;
  bool want_no_ov = cfg.ablation == Ablation::kNoOv;
  if (model.config().no_im != want_no_im || model.config().no_ov != want_no_ov)
    throw std::invalid_argument("ablation flag mismatch between train config and model");

  model.topics().params().frozen = !cfg.finetune_disentangler;
  std::uint64_t frozen_hash = model.topics().params().content_hash();

  DataSplit split = split_corpus(corpus, cfg.val_fraction, cfg.test_fraction);
  if (split.train.empty()) throw std::invalid_argument("empty corpus");
  std::vector<TopicSequences> seqs;
  seqs.reserve(corpus.users.size());
  for (const auto& u : corpus.users)
    seqs.push_back(featurize_user(model.topics(), u, vocab, lexicon));

  std::vector<nn::ParamStore*> stores = model.joint_stores();
  if (cfg.finetune_disentangler) stores.push_back(&model.topics().params());

  std::ofstream log;
  if (!cfg.metrics_path.empty()) log.open(cfg.metrics_path, std::ios::trunc);
  nn::Adam opt;
  Rng rng(cfg.seed);
  JointResult res;
  res.best_val_ce = std::numeric_limits<Real>::infinity();

  std::vector<TrainExample> order = split.train;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.lr = decayed_lr(cfg, epoch);
    rng.shuffle(order);
    LossBreakdown mean;
    int counted = 0, in_batch = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const TrainExample& ex = order[k];
      if (ex.target < 1) {
        warn("skipping a target with no preceding history");
        continue;
      }
      const UserHistory& user = corpus.users[static_cast<std::size_t>(ex.user)];
      const Interaction& inter = user.interactions[static_cast<std::size_t>(ex.target)];
      nn::Graph g;
      LossBreakdown b;
      ad::Var loss =
          build_joint_loss(g, model, seqs[static_cast<std::size_t>(ex.user)],
                           static_cast<std::size_t>(ex.target), corpus.article(inter.news_id),
                           inter.comment, cfg.lambda1, cfg.lambda2, &b);
      if (!std::isfinite(b.total)) throw std::runtime_error("training diverged: non-finite loss");
      mean.ce += b.ce;
      mean.kl_aspect += b.kl_aspect;
      mean.kl_opinion += b.kl_opinion;
      mean.total += b.total;
      ++counted;
      g.backward(loss);
      g.flush_grads();
      if (++in_batch == cfg.batch_size || k + 1 == order.size()) {
        scale_grads(stores, 1.0 / static_cast<Real>(in_batch));
        opt.step(stores);
        for (auto* s : stores) s->zero_grads();
        in_batch = 0;
      }
    }
    if (counted == 0) throw std::invalid_argument("empty corpus");
    mean.ce /= counted;
    mean.kl_aspect /= counted;
    mean.kl_opinion /= counted;
    mean.total /= counted;

    Real val_ce = mean.ce;
    if (!split.val.empty()) {
      Real sum = 0;
      for (const TrainExample& ex : split.val) {
        const UserHistory& user = corpus.users[static_cast<std::size_t>(ex.user)];
        const Interaction& inter = user.interactions[static_cast<std::size_t>(ex.target)];
        sum += teacher_forced_loss(model, seqs[static_cast<std::size_t>(ex.user)],
                                   static_cast<std::size_t>(ex.target),
                                   corpus.article(inter.news_id), inter.comment, cfg.lambda1,
                                   cfg.lambda2)
                   .ce;
      }
      val_ce = sum / static_cast<Real>(split.val.size());
    }

    res.epoch_train.push_back(mean);
    res.epoch_val_ce.push_back(val_ce);
    if (log.is_open()) {
      json j;
      j["epoch"] = epoch + 1;
      j["ce"] = mean.ce;
      j["kl_a"] = mean.kl_aspect;
      j["kl_s"] = mean.kl_opinion;
      j["total"] = mean.total;
      j["val_ce"] = val_ce;
      log << j.dump() << '\n' << std::flush;
    }
    if (val_ce < res.best_val_ce) {
      res.best_val_ce = val_ce;
      res.best_epoch = epoch + 1;
      if (!cfg.checkpoint_dir.empty()) model.save(cfg.checkpoint_dir, vocab);
    }
    if (!cfg.quiet)
      std::cerr << "[dsattr] train epoch " << (epoch + 1) << "/" << cfg.epochs
                << " total=" << mean.total << " val_ce=" << val_ce << "\n";
  }

  if (!cfg.finetune_disentangler &&
      model.topics().params().content_hash() != frozen_hash)
    throw std::logic_error("frozen disentangler changed during joint training");
  return res;
}

}  // namespace dsattr

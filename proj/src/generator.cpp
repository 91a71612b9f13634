#include "dsattr/generator.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "dsattr/common.hpp"

namespace dsattr {

using nlohmann::json;

namespace {

enum Bucket { kOnlyNews = 0, kBoth = 1, kOnlyHistory = 2, kNeither = 3 };

/// Validates the four-bucket target and projects it onto the simplex by
/// uniform shift + clamp (tolerates mildly over/under-complete inputs).
OverlapDistribution project_target(const OverlapDistribution& t) {
  Real vals[4] = {t.only_news, t.news_and_history, t.only_history, t.neither};
  for (Real v : vals)
    if (v < 0.0) throw std::invalid_argument("config error: negative overlap proportion");
  Real sum = t.sum();
  if (std::abs(sum - 1.0) > 0.15)
    throw std::invalid_argument("config error: overlap proportions must sum to 1");
  Real shift = (sum - 1.0) / 4.0;
  Real adj[4];
  Real total = 0.0;
  for (int i = 0; i < 4; ++i) total += adj[i] = std::max(0.0, vals[i] - shift);
  for (int i = 0; i < 4; ++i) adj[i] /= total;
  return {adj[0], adj[1], adj[2], adj[3]};
}

/// Largest-remainder apportionment of n slots to the four buckets.
std::array<long long, 4> apportion(const OverlapDistribution& t, long long n) {
  Real q[4] = {t.only_news * n, t.news_and_history * n, t.only_history * n, t.neither * n};
  std::array<long long, 4> c{};
  Real rem[4];
  long long used = 0;
  for (int i = 0; i < 4; ++i) {
    c[i] = static_cast<long long>(std::floor(q[i]));
    rem[i] = q[i] - static_cast<Real>(c[i]);
    used += c[i];
  }
  std::array<int, 4> order = {0, 1, 2, 3};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (long long k = 0; k < n - used; ++k) ++c[order[static_cast<std::size_t>(k % 4)]];
  return c;
}

std::vector<std::string> sample_distinct(const std::vector<std::string>& pool, int k, Rng& rng) {
  std::vector<std::string> copy = pool;
  rng.shuffle(copy);
  if (static_cast<int>(copy.size()) > k) copy.resize(static_cast<std::size_t>(k));
  return copy;
}

}  // namespace

GeneratorResult generate_synthetic_corpus(const GeneratorConfig& cfg, std::uint64_t seed) {
  if (cfg.n_users <= 0 || cfg.history_len <= 0)
    throw std::invalid_argument("config error: users and history length must be positive");
  OverlapDistribution target = project_target(cfg.target);
  Rng rng(seed);

  // Vocabulary pools.
  std::vector<std::vector<std::string>> clusters(static_cast<std::size_t>(cfg.entity_clusters));
  for (int c = 0; c < cfg.entity_clusters; ++c)
    for (int i = 0; i < cfg.entities_per_cluster; ++i)
      clusters[static_cast<std::size_t>(c)].push_back("e" + std::to_string(c) + "w" +
                                                      std::to_string(i));
  std::vector<std::string> reserve;
  for (int i = 0; i < cfg.reserve_entities; ++i) reserve.push_back("erw" + std::to_string(i));
  std::vector<std::vector<std::string>> opinion_groups(
      static_cast<std::size_t>(cfg.opinion_groups));
  for (int g = 0; g < cfg.opinion_groups; ++g)
    for (int i = 0; i < cfg.opinions_per_group; ++i)
      opinion_groups[static_cast<std::size_t>(g)].push_back("o" + std::to_string(g) + "w" +
                                                            std::to_string(i));
  std::vector<std::string> theme, plain;
  for (int i = 0; i < cfg.filler_words; ++i) {
    std::string w = "fw" + std::to_string(i);
    (i < cfg.theme_fillers ? theme : plain).push_back(w);
  }
  if (plain.empty() || theme.empty())
    throw std::invalid_argument("config error: need both theme and plain fillers");

  GeneratorResult out;
  for (const auto& cl : clusters)
    for (const auto& e : cl) out.lexicon.entity_words.insert(e);
  for (const auto& e : reserve) out.lexicon.entity_words.insert(e);
  for (const auto& og : opinion_groups)
    for (const auto& o : og) out.lexicon.opinion_words.insert(o);
  out.realized_target = target;

  // Bucket plan: global largest-remainder quota, dealt round-robin so each
  // user receives a near-proportional multiset, then shuffled per user.
  long long slots = static_cast<long long>(cfg.n_users) * cfg.history_len;
  auto counts = apportion(target, slots);
  std::vector<int> deck;
  deck.reserve(static_cast<std::size_t>(slots));
  for (int b = 0; b < 4; ++b)
    for (long long i = 0; i < counts[static_cast<std::size_t>(b)]; ++i) deck.push_back(b);
  std::vector<std::vector<int>> plan(static_cast<std::size_t>(cfg.n_users));
  for (std::size_t i = 0; i < deck.size(); ++i)
    plan[i % static_cast<std::size_t>(cfg.n_users)].push_back(deck[i]);
  for (auto& seq : plan) {
    rng.shuffle(seq);
    // The first interaction has no history, so it cannot demand one.
    if (seq[0] == kBoth || seq[0] == kOnlyHistory) {
      auto it = std::find_if(seq.begin(), seq.end(),
                             [](int b) { return b == kOnlyNews || b == kNeither; });
      if (it != seq.end()) {
        std::iter_swap(seq.begin(), it);
      } else {
        warn("generator: forcing first interaction to the news-only bucket");
        seq[0] = kOnlyNews;
      }
    }
  }

  for (int u = 0; u < cfg.n_users; ++u) {
    int cluster = u % cfg.entity_clusters;
    int ogroup = u % cfg.opinion_groups;
    UserTruth truth;
    truth.user_id = "u" + std::to_string(u);
    truth.aspect_cluster = cluster;
    truth.opinion_group = ogroup;
    truth.aspect_mixture = Vec::Constant(cfg.entity_clusters,
                                         (1.0 - cfg.own_cluster_prob) /
                                             std::max(1, cfg.entity_clusters - 1));
    truth.aspect_mixture(cluster) = cfg.own_cluster_prob;
    if (cfg.entity_clusters == 1) truth.aspect_mixture(0) = 1.0;
    truth.opinion_mixture = Vec::Zero(cfg.opinion_groups);
    truth.opinion_mixture(ogroup) = 1.0;
    out.truth.push_back(truth);

    UserHistory user;
    user.user_id = truth.user_id;
    std::set<std::string> seen;  // entity types this user has encountered

    auto pick_cluster = [&]() {
      if (cfg.entity_clusters == 1 || rng.uniform(0.0, 1.0) < cfg.own_cluster_prob)
        return cluster;
      int c = rng.uniform_int(cfg.entity_clusters - 1);
      return c >= cluster ? c + 1 : c;
    };
    auto fresh_entities = [&](int want) {
      std::vector<std::string> got;
      std::vector<std::string> pool = clusters[static_cast<std::size_t>(pick_cluster())];
      pool.insert(pool.end(), reserve.begin(), reserve.end());
      rng.shuffle(pool);
      for (const auto& e : pool) {
        if (static_cast<int>(got.size()) == want) break;
        if (!seen.count(e)) got.push_back(e);
      }
      if (static_cast<int>(got.size()) < want)
        warn("generator: fresh entity pool exhausted for " + user.user_id);
      return got;
    };
    auto seen_entities = [&](int want, const std::set<std::string>& avoid) {
      std::vector<std::string> pool(seen.begin(), seen.end());
      std::erase_if(pool, [&](const std::string& e) { return avoid.count(e) > 0; });
      return sample_distinct(pool, want, rng);
    };

    for (int t = 1; t <= cfg.history_len; ++t) {
      int bucket = plan[static_cast<std::size_t>(u)][static_cast<std::size_t>(t - 1)];
      std::vector<std::string> comment_ents, keys;
      switch (bucket) {
        case kOnlyNews:
          comment_ents = fresh_entities(cfg.comment_entity_count);
          keys = comment_ents;
          break;
        case kBoth:
          comment_ents = seen_entities(cfg.comment_entity_count, {});
          if (comment_ents.empty()) {
            // No usable history; degrade to a fresh news-only pairing.
            warn("generator: no seen entities for " + user.user_id + ", degrading bucket");
            comment_ents = fresh_entities(cfg.comment_entity_count);
          }
          keys = comment_ents;
          break;
        case kOnlyHistory: {
          comment_ents = seen_entities(cfg.comment_entity_count, {});
          std::set<std::string> avoid(comment_ents.begin(), comment_ents.end());
          std::vector<std::string> pool = clusters[static_cast<std::size_t>(pick_cluster())];
          std::erase_if(pool, [&](const std::string& e) { return avoid.count(e) > 0; });
          keys = sample_distinct(pool, cfg.comment_entity_count, rng);
          break;
        }
        case kNeither:
        default:
          keys = sample_distinct(clusters[static_cast<std::size_t>(pick_cluster())],
                                 cfg.comment_entity_count, rng);
          break;
      }
      if (comment_ents.empty() && bucket == kOnlyHistory)
        warn("generator: no seen entities for " + user.user_id + ", comment left entity-free");

      NewsArticle art;
      art.id = "n" + std::to_string(u) + "_" + std::to_string(t);
      int lead = std::clamp(cfg.title_entity_count, 0, static_cast<int>(keys.size()));
      art.title.words.assign(keys.begin(), keys.begin() + lead);
      for (const auto& f : sample_distinct(plain, cfg.title_filler_count, rng))
        art.title.words.push_back(f);

      Sentence highlight;
      highlight.words = keys;
      while (static_cast<int>(highlight.words.size()) < cfg.distractor_len)
        highlight.words.push_back(plain[static_cast<std::size_t>(rng.uniform_int(
            static_cast<int>(plain.size())))]);
      std::vector<Sentence> body;
      for (int dIdx = 0; dIdx < cfg.distractor_sentences; ++dIdx) {
        Sentence s;
        for (int w = 0; w < cfg.distractor_len; ++w)
          s.words.push_back(theme[static_cast<std::size_t>(rng.uniform_int(
              static_cast<int>(theme.size())))]);
        body.push_back(std::move(s));
      }
      int pos = rng.uniform_int(static_cast<int>(body.size()) + 1);
      body.insert(body.begin() + pos, std::move(highlight));
      art.body = std::move(body);

      Comment cm;
      cm.user_id = user.user_id;
      cm.t = t;
      auto ops = sample_distinct(opinion_groups[static_cast<std::size_t>(ogroup)],
                                 cfg.comment_opinion_count, rng);
      for (std::size_t i = 0; i < std::max(ops.size(), comment_ents.size()); ++i) {
        if (i < ops.size()) cm.words.push_back(ops[i]);
        if (i < comment_ents.size()) cm.words.push_back(comment_ents[i]);
      }
      int fillers = cfg.comment_filler_count +
                    (static_cast<int>(comment_ents.size()) < cfg.comment_entity_count
                         ? cfg.comment_entity_count - static_cast<int>(comment_ents.size())
                         : 0);
      for (const auto& f : sample_distinct(plain, fillers, rng)) cm.words.push_back(f);
      if (cm.words.empty()) cm.words.push_back(plain[0]);

      for (const auto& e : keys) seen.insert(e);
      for (const auto& e : comment_ents) seen.insert(e);

      Interaction inter;
      inter.news_id = art.id;
      inter.comment = std::move(cm);
      out.corpus.add_article(std::move(art));
      user.interactions.push_back(std::move(inter));
    }
    out.corpus.users.push_back(std::move(user));
  }
  return out;
}

std::string GeneratorConfig::to_json() const {
  json j;
  j["n_users"] = n_users;
  j["history_len"] = history_len;
  j["entity_clusters"] = entity_clusters;
  j["entities_per_cluster"] = entities_per_cluster;
  j["reserve_entities"] = reserve_entities;
  j["opinion_groups"] = opinion_groups;
  j["opinions_per_group"] = opinions_per_group;
  j["filler_words"] = filler_words;
  j["theme_fillers"] = theme_fillers;
  j["comment_entity_count"] = comment_entity_count;
  j["comment_opinion_count"] = comment_opinion_count;
  j["comment_filler_count"] = comment_filler_count;
  j["title_entity_count"] = title_entity_count;
  j["title_filler_count"] = title_filler_count;
  j["distractor_sentences"] = distractor_sentences;
  j["distractor_len"] = distractor_len;
  j["own_cluster_prob"] = own_cluster_prob;
  j["target"] = {{"only_news", target.only_news},
                 {"news_and_history", target.news_and_history},
                 {"only_history", target.only_history},
                 {"neither", target.neither}};
  return j.dump(2);
}

GeneratorConfig GeneratorConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  GeneratorConfig c;
  auto opt = [&](const char* key, auto& slot) {
    if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
  };
  opt("n_users", c.n_users);
  opt("history_len", c.history_len);
  opt("entity_clusters", c.entity_clusters);
  opt("entities_per_cluster", c.entities_per_cluster);
  opt("reserve_entities", c.reserve_entities);
  opt("opinion_groups", c.opinion_groups);
  opt("opinions_per_group", c.opinions_per_group);
  opt("filler_words", c.filler_words);
  opt("theme_fillers", c.theme_fillers);
  opt("comment_entity_count", c.comment_entity_count);
  opt("comment_opinion_count", c.comment_opinion_count);
  opt("comment_filler_count", c.comment_filler_count);
  opt("title_entity_count", c.title_entity_count);
  opt("title_filler_count", c.title_filler_count);
  opt("distractor_sentences", c.distractor_sentences);
  opt("distractor_len", c.distractor_len);
  opt("own_cluster_prob", c.own_cluster_prob);
  if (j.contains("target")) {
    const json& t = j.at("target");
    c.target.only_news = t.at("only_news").get<Real>();
    c.target.news_and_history = t.at("news_and_history").get<Real>();
    c.target.only_history = t.at("only_history").get<Real>();
    c.target.neither = t.at("neither").get<Real>();
  }
  return c;
}

void save_truth(const std::vector<UserTruth>& truth, const std::string& path) {
  json arr = json::array();
  for (const auto& t : truth) {
    json j;
    j["user_id"] = t.user_id;
    j["aspect_cluster"] = t.aspect_cluster;
    j["opinion_group"] = t.opinion_group;
    j["aspect_mixture"] = std::vector<Real>(t.aspect_mixture.data(),
                                            t.aspect_mixture.data() + t.aspect_mixture.size());
    j["opinion_mixture"] = std::vector<Real>(t.opinion_mixture.data(),
                                             t.opinion_mixture.data() + t.opinion_mixture.size());
    arr.push_back(j);
  }
  write_file_atomic(path, arr.dump(2));
}

std::vector<UserTruth> load_truth(const std::string& path) {
  json arr = json::parse(read_text_file(path));
  std::vector<UserTruth> out;
  for (const auto& j : arr) {
    UserTruth t;
    t.user_id = j.at("user_id").get<std::string>();
    t.aspect_cluster = j.at("aspect_cluster").get<int>();
    t.opinion_group = j.at("opinion_group").get<int>();
    auto am = j.at("aspect_mixture").get<std::vector<Real>>();
    auto om = j.at("opinion_mixture").get<std::vector<Real>>();
    t.aspect_mixture = Eigen::Map<Vec>(am.data(), static_cast<Eigen::Index>(am.size()));
    t.opinion_mixture = Eigen::Map<Vec>(om.data(), static_cast<Eigen::Index>(om.size()));
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace dsattr

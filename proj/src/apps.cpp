#include "dsattr/apps.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "dsattr/metrics.hpp"

namespace dsattr {

namespace {

int argmax_index(const Vec& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return static_cast<int>(best);
}

std::vector<int> top_k_indices(const Vec& scores, int k) {
  std::vector<int> idx(static_cast<std::size_t>(scores.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (scores(a) != scores(b)) return scores(a) > scores(b);
    return a < b;
  });
  idx.resize(static_cast<std::size_t>(std::min<int>(k, static_cast<int>(idx.size()))));
  return idx;
}

Vec default_alphas(const Vec& alphas) {
  if (alphas.size() == 0) return Vec::Constant(3, 1.0 / 3.0);
  if (alphas.size() != 3) throw std::invalid_argument("three blend coefficients required");
  return alphas;
}

// Gate inputs one reader contributes to one article's graph.
struct ReaderSignals {
  Vec g_body;
  Vec e_body;
};

// Everything summarize needs once readers are reduced to their signals.
struct PoolContext {
  Mat w_s;  // over body sentences only
  int n_body = 0;
  int n_readers = 0;
  std::function<const ReaderSignals&(int)> signals;  // lazy per reader
};

SummaryResult summarize_core(const PoolContext& pool, const SummarizeOptions& opts) {
  if (opts.k < 1) throw std::invalid_argument("summary length must be positive");
  int k = opts.k;
  if (k > pool.n_body) {
    warn("summary length clamped to sentence count");
    k = pool.n_body;
  }
  SummaryResult res;
  res.strategy = opts.strategy;
  if (pool.n_body == 1) {
    res.scores = Vec::Ones(1);
    res.indices = {0};
    return res;
  }
  Vec alphas = default_alphas(opts.alphas);

  auto ranked = [&](const Mat& w) {
    TextRankResult tr = textrank(w, opts.damping, opts.tol, opts.max_iter);
    if (!tr.converged) res.converged = false;
    return tr.scores;
  };
  auto reader_scores = [&](int reader) {
    const ReaderSignals& sig = pool.signals(reader);
    Mat w_g = reader_gate_matrix(sig.g_body, pool.w_s);
    Mat w_e = reader_gate_matrix(sig.e_body, pool.w_s);
    return ranked(blend_matrices(pool.w_s, w_g, w_e, alphas));
  };
  auto sample_readers = [&](int count) {
    std::vector<int> order(static_cast<std::size_t>(pool.n_readers));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(opts.seed);
    rng.shuffle(order);
    order.resize(static_cast<std::size_t>(std::min<int>(count, pool.n_readers)));
    return order;
  };

  switch (opts.strategy) {
    case SummaryStrategy::kStandard: {
      res.scores = ranked(pool.w_s);
      break;
    }
    case SummaryStrategy::kSingleUser: {
      if (pool.n_readers < 1) throw std::invalid_argument("readers required");
      if (opts.single_user_reps < 1)
        throw std::invalid_argument("at least one repetition required");
      auto order = sample_readers(opts.single_user_reps);
      Vec sum = Vec::Zero(pool.n_body);
      for (int reader : order) sum += reader_scores(reader);
      res.scores = sum / static_cast<Real>(order.size());
      break;
    }
    case SummaryStrategy::kMultiUser: {
      if (pool.n_readers < 1) throw std::invalid_argument("readers required");
      if (opts.multi_user_voters < 1) throw std::invalid_argument("at least one voter required");
      auto order = sample_readers(opts.multi_user_voters);
      std::vector<int> votes(static_cast<std::size_t>(pool.n_body), 0);
      Vec sum = Vec::Zero(pool.n_body);
      for (int reader : order) {
        Vec s = reader_scores(reader);
        sum += s;
        for (int i : top_k_indices(s, k)) ++votes[static_cast<std::size_t>(i)];
      }
      res.scores = sum / static_cast<Real>(order.size());
      std::vector<int> idx(static_cast<std::size_t>(pool.n_body));
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        auto ua = static_cast<std::size_t>(a), ub = static_cast<std::size_t>(b);
        if (votes[ua] != votes[ub]) return votes[ua] > votes[ub];
        if (res.scores(a) != res.scores(b)) return res.scores(a) > res.scores(b);
        return a < b;
      });
      idx.resize(static_cast<std::size_t>(k));
      res.indices = idx;
      break;
    }
  }
  if (res.indices.empty()) res.indices = top_k_indices(res.scores, k);
  std::stable_sort(res.indices.begin(), res.indices.end(), [&](int a, int b) {
    if (res.scores(a) != res.scores(b)) return res.scores(a) > res.scores(b);
    return a < b;
  });
  return res;
}

// Builds the lazy per-reader signal cache for one article.
struct ArticleReaderPool {
  const AttributorModel* model = nullptr;
  const NewsArticle* article = nullptr;
  const Vocabulary* vocab = nullptr;
  const WordClassLexicon* lexicon = nullptr;
  int max_len = 30;
  std::vector<const UserHistory*> eligible;
  std::map<const UserHistory*, TopicSequences> features;
  std::map<int, ReaderSignals> cache;
  Mat w_s;
  int n_body = 0;

  ArticleReaderPool(const AttributorModel& m, const NewsArticle& a,
                    const std::vector<const UserHistory*>& users, const Vocabulary& v,
                    const WordClassLexicon& lex, int gen_len)
      : model(&m), article(&a), vocab(&v), lexicon(&lex), max_len(gen_len) {
    NewsEncoding enc = m.situation().encode_news(a);
    int L = static_cast<int>(enc.sentence_vectors.rows());
    n_body = L - 1;
    if (n_body < 1) throw std::invalid_argument("article has no body sentences");
    if (n_body >= 2)
      w_s = sentence_cosine_matrix(
          enc.sentence_vectors.bottomRows(n_body).eval());
    for (const UserHistory* u : users) {
      if (u->interactions.empty()) {
        warn("skipping reader with empty history");
        continue;
      }
      eligible.push_back(u);
    }
  }

  const ReaderSignals& signals(int reader) {
    auto it = cache.find(reader);
    if (it != cache.end()) return it->second;
    const UserHistory* user = eligible.at(static_cast<std::size_t>(reader));
    auto fit = features.find(user);
    if (fit == features.end())
      fit = features.emplace(user, featurize_user(model->topics(), *user, *vocab, *lexicon)).first;
    auto inf = model->infer(fit->second, fit->second.size(), *article, max_len,
                            DecodeMode::greedy());
    ReaderSignals sig;
    sig.g_body = inf.scores.g.segment(1, n_body);
    sig.e_body = inf.trace.mean_decoder_attention.segment(1, n_body);
    return cache.emplace(reader, std::move(sig)).first->second;
  }

  PoolContext context() {
    PoolContext ctx;
    ctx.w_s = w_s;
    ctx.n_body = n_body;
    ctx.n_readers = static_cast<int>(eligible.size());
    ctx.signals = [this](int reader) -> const ReaderSignals& { return signals(reader); };
    return ctx;
  }
};

}  // namespace

ForecastReport forecast(const AttributorModel& model, const NewsArticle& article,
                        const std::vector<const UserHistory*>& users, const Vocabulary& vocab,
                        const WordClassLexicon& lexicon, const ForecastOptions& opts) {
  ForecastReport report;
  int k_a = model.config().k_a;
  int k_s = model.config().k_s;
  report.aspect_histogram.assign(static_cast<std::size_t>(k_a), 0);
  report.opinion_by_aspect = Mat::Zero(k_a, k_s);
  for (const UserHistory* user : users) {
    if (user->interactions.empty()) {
      warn("skipping reader with empty history");
      continue;
    }
    TopicSequences seqs = featurize_user(model.topics(), *user, vocab, lexicon);
    auto inf = model.infer(seqs, seqs.size(), article, opts.max_len, DecodeMode::greedy());
    UserForecast uf;
    uf.user_id = user->user_id;
    uf.aspect = argmax_index(inf.scores.aspect_distribution);
    uf.opinion = argmax_index(inf.trace.zs_hat);
    uf.tokens = inf.trace.tokens;
    ++report.aspect_histogram[static_cast<std::size_t>(uf.aspect)];
    report.opinion_by_aspect(uf.aspect, uf.opinion) += 1.0;
    report.users.push_back(std::move(uf));
  }
  if (report.users.empty()) throw std::invalid_argument("at least one reader required");

  report.modal_aspect = 0;
  for (int a = 1; a < k_a; ++a)
    if (report.aspect_histogram[static_cast<std::size_t>(a)] >
        report.aspect_histogram[static_cast<std::size_t>(report.modal_aspect)])
      report.modal_aspect = a;

  std::map<std::string, int> freq;
  for (const UserForecast& uf : report.users) {
    if (uf.aspect != report.modal_aspect) continue;
    for (int id : uf.tokens) {
      if (id <= Vocabulary::kUnk) continue;
      const std::string& tok = vocab.token(id);
      if (opts.stopwords.count(tok)) continue;
      ++freq[tok];
    }
  }
  std::vector<std::pair<std::string, int>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (static_cast<int>(ranked.size()) > opts.top_keywords)
    ranked.resize(static_cast<std::size_t>(opts.top_keywords));
  report.keywords = std::move(ranked);
  return report;
}

std::string forecast_json(const ForecastReport& report, const Vocabulary& vocab) {
  nlohmann::json j;
  j["modal_aspect"] = report.modal_aspect;
  j["aspect_histogram"] = report.aspect_histogram;
  std::vector<std::vector<Real>> opinion;
  for (Eigen::Index a = 0; a < report.opinion_by_aspect.rows(); ++a) {
    std::vector<Real> row;
    for (Eigen::Index s = 0; s < report.opinion_by_aspect.cols(); ++s)
      row.push_back(report.opinion_by_aspect(a, s));
    opinion.push_back(std::move(row));
  }
  j["opinion_by_aspect"] = opinion;
  auto& users = j["users"] = nlohmann::json::array();
  for (const UserForecast& uf : report.users) {
    nlohmann::json u;
    u["user_id"] = uf.user_id;
    u["aspect"] = uf.aspect;
    u["opinion"] = uf.opinion;
    std::string text;
    for (int id : uf.tokens) {
      if (!text.empty()) text += ' ';
      text += vocab.token(id);
    }
    u["comment"] = text;
    users.push_back(std::move(u));
  }
  auto& kw = j["keywords"] = nlohmann::json::array();
  for (const auto& [tok, count] : report.keywords)
    kw.push_back(nlohmann::json{{"token", tok}, {"count", count}});
  return j.dump(2) + "\n";
}

Mat sentence_cosine_matrix(const Mat& sentence_vectors) {
  Eigen::Index L = sentence_vectors.rows();
  if (L < 2) throw std::invalid_argument("at least two sentences required");
  Vec norms(L);
  for (Eigen::Index i = 0; i < L; ++i) norms(i) = sentence_vectors.row(i).norm();
  Mat w = Mat::Zero(L, L);
  for (Eigen::Index i = 0; i < L; ++i) {
    w(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < L; ++j) {
      if (norms(i) <= 0 || norms(j) <= 0) continue;  // zero vectors stay dissimilar
      Real cos = sentence_vectors.row(i).dot(sentence_vectors.row(j)) / (norms(i) * norms(j));
      Real mapped = (1.0 + cos) / 2.0;
      w(i, j) = mapped;
      w(j, i) = mapped;
    }
  }
  return w;
}

Mat reader_gate_matrix(const Vec& scores, const Mat& w_s) {
  Eigen::Index L = w_s.rows();
  if (w_s.cols() != L) throw std::invalid_argument("similarity matrix must be square");
  if (scores.size() != L) throw std::invalid_argument("score length mismatch");
  Mat w_g(L, L);
  for (Eigen::Index i = 0; i < L; ++i) {
    Vec row = scores.array() * w_s.row(i).transpose().array();
    Real denom = row.sum();
    if (denom > 0) {
      w_g.row(i) = row.transpose() / denom;
    } else {
      warn("degenerate reader gate row; using uniform");
      w_g.row(i).setConstant(1.0 / static_cast<Real>(L));
    }
  }
  return w_g;
}

Mat blend_matrices(const Mat& w_s, const Mat& w_g, const Mat& w_e, const Vec& alphas) {
  if (alphas.size() != 3) throw std::invalid_argument("three blend coefficients required");
  if (alphas.minCoeff() < 0) throw std::invalid_argument("blend coefficients must be non-negative");
  if (w_g.rows() != w_s.rows() || w_g.cols() != w_s.cols() || w_e.rows() != w_s.rows() ||
      w_e.cols() != w_s.cols())
    throw std::invalid_argument("matrix shape mismatch");
  return alphas(0) * w_s + alphas(1) * w_g + alphas(2) * w_e;
}

TextRankResult textrank(const Mat& w, Real damping, Real tol, int max_iter) {
  Eigen::Index L = w.rows();
  if (w.cols() != L || L == 0) throw std::invalid_argument("edge matrix must be square");
  if (w.minCoeff() < 0) throw std::invalid_argument("edge weights must be non-negative");
  Mat T(L, L);
  for (Eigen::Index i = 0; i < L; ++i) {
    Real row_sum = w.row(i).sum();
    if (row_sum > 0)
      T.row(i) = w.row(i) / row_sum;
    else
      T.row(i).setConstant(1.0 / static_cast<Real>(L));
  }
  TextRankResult res;
  res.scores = Vec::Ones(L);
  for (res.iterations = 0; res.iterations < max_iter; ++res.iterations) {
    Vec next = Vec::Constant(L, 1.0 - damping) + damping * (T.transpose() * res.scores);
    Real delta = (next - res.scores).cwiseAbs().maxCoeff();
    res.scores = next;
    if (delta < tol) {
      res.converged = true;
      ++res.iterations;
      break;
    }
  }
  if (!res.converged) warn("textrank did not converge");
  return res;
}

std::string strategy_name(SummaryStrategy strategy) {
  switch (strategy) {
    case SummaryStrategy::kStandard: return "standard";
    case SummaryStrategy::kSingleUser: return "single_user";
    case SummaryStrategy::kMultiUser: return "multi_user";
  }
  return "standard";
}

SummaryStrategy strategy_from_name(const std::string& name) {
  if (name == "standard") return SummaryStrategy::kStandard;
  if (name == "single_user") return SummaryStrategy::kSingleUser;
  if (name == "multi_user") return SummaryStrategy::kMultiUser;
  throw std::invalid_argument("unknown summarization strategy: " + name);
}

SummaryResult summarize(const AttributorModel& model, const NewsArticle& article,
                        const std::vector<const UserHistory*>& users, const Vocabulary& vocab,
                        const WordClassLexicon& lexicon, const SummarizeOptions& opts) {
  ArticleReaderPool pool(model, article, users, vocab, lexicon, opts.max_len);
  return summarize_core(pool.context(), opts);
}

std::vector<SummaryEvalPoint> evaluate_summaries(
    const AttributorModel& model, const std::vector<const NewsArticle*>& articles,
    const std::vector<const UserHistory*>& users, const Vocabulary& vocab,
    const WordClassLexicon& lexicon, const std::vector<SummaryStrategy>& strategies,
    const std::vector<int>& k_range, const SummarizeOptions& base) {
  if (articles.empty()) throw std::invalid_argument("articles required");
  if (strategies.empty() || k_range.empty())
    throw std::invalid_argument("strategies and summary lengths required");

  // rouge[strategy][k] accumulated per article.
  std::map<std::string, std::map<int, std::vector<Real>>> rouge;
  for (std::size_t ai = 0; ai < articles.size(); ++ai) {
    const NewsArticle& article = *articles[ai];
    ArticleReaderPool pool(model, article, users, vocab, lexicon, base.max_len);
    std::uint64_t ai_key = static_cast<std::uint64_t>(ai);
    for (SummaryStrategy strategy : strategies) {
      for (int k : k_range) {
        SummarizeOptions opts = base;
        opts.k = k;
        opts.strategy = strategy;
        opts.seed = fnv1a(&ai_key, sizeof ai_key, base.seed);
        SummaryResult sum = summarize_core(pool.context(), opts);
        std::vector<int> order = sum.indices;
        std::sort(order.begin(), order.end());
        TokenSeq cand;
        for (int idx : order) {
          const auto& words = article.body.at(static_cast<std::size_t>(idx)).words;
          cand.insert(cand.end(), words.begin(), words.end());
        }
        rouge[strategy_name(strategy)][k].push_back(rouge_l(cand, {article.title.words}));
      }
    }
  }

  std::vector<SummaryEvalPoint> points;
  for (SummaryStrategy strategy : strategies) {
    for (int k : k_range) {
      const auto& vals = rouge[strategy_name(strategy)][k];
      Real mean = std::accumulate(vals.begin(), vals.end(), 0.0) /
                  static_cast<Real>(vals.size());
      Real var = 0;
      for (Real v : vals) var += (v - mean) * (v - mean);
      var /= static_cast<Real>(vals.size());
      SummaryEvalPoint p;
      p.k = k;
      p.strategy = strategy_name(strategy);
      p.rouge_l_mean = mean;
      p.rouge_l_std = std::sqrt(var);
      points.push_back(std::move(p));
    }
  }
  return points;
}

std::string summary_eval_jsonl(const std::vector<SummaryEvalPoint>& points) {
  std::string out;
  for (const SummaryEvalPoint& p : points) {
    nlohmann::json j;
    j["k"] = p.k;
    j["strategy"] = p.strategy;
    j["rouge_l_mean"] = p.rouge_l_mean;
    j["rouge_l_std"] = p.rouge_l_std;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace dsattr

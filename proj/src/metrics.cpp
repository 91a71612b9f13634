#include "dsattr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace dsattr {

namespace {

constexpr Real kEps = 1e-12;
constexpr Real kRougeBetaSq = 1.2 * 1.2;
constexpr Real kMeteorAlpha = 0.9;
constexpr Real kMeteorGamma = 0.5;
constexpr Real kMeteorTheta = 3.0;
// Above this many unigram matches the chunk search switches to a greedy
// longest-run builder.
constexpr int kMeteorExactLimit = 12;

using Ngram = std::vector<std::string>;

std::map<Ngram, int> ngram_counts(const TokenSeq& s, int n) {
  std::map<Ngram, int> out;
  if (static_cast<int>(s.size()) < n) return out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= s.size(); ++i)
    ++out[Ngram(s.begin() + static_cast<std::ptrdiff_t>(i),
                s.begin() + static_cast<std::ptrdiff_t>(i + static_cast<std::size_t>(n)))];
  return out;
}

struct GramStats {
  Real clipped = 0, total = 0;
};

GramStats clipped_counts(const TokenSeq& cand, const std::vector<TokenSeq>& refs, int n) {
  GramStats st;
  auto cc = ngram_counts(cand, n);
  std::vector<std::map<Ngram, int>> rc;
  rc.reserve(refs.size());
  for (const auto& r : refs) rc.push_back(ngram_counts(r, n));
  for (const auto& [g, c] : cc) {
    int best = 0;
    for (const auto& m : rc) {
      auto it = m.find(g);
      if (it != m.end()) best = std::max(best, it->second);
    }
    st.clipped += std::min(c, best);
    st.total += c;
  }
  return st;
}

Real closest_ref_len(std::size_t cand_len, const std::vector<TokenSeq>& refs) {
  Real best = 0;
  Real best_diff = -1;
  for (const auto& r : refs) {
    Real len = static_cast<Real>(r.size());
    Real diff = std::abs(len - static_cast<Real>(cand_len));
    if (best_diff < 0 || diff < best_diff || (diff == best_diff && len < best)) {
      best_diff = diff;
      best = len;
    }
  }
  return best;
}

Real compose_bleu(const std::vector<Real>& clipped, const std::vector<Real>& total, Real cand_len,
                  Real ref_len, int n) {
  if (cand_len <= 0) return 0.0;
  Real logsum = 0;
  for (int k = 0; k < n; ++k) {
    Real denom = total[static_cast<std::size_t>(k)] > 0 ? total[static_cast<std::size_t>(k)] : 1.0;
    logsum += std::log(std::max(clipped[static_cast<std::size_t>(k)], kEps) / denom) /
              static_cast<Real>(n);
  }
  Real bp = cand_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return bp * std::exp(logsum);
}

int lcs_length(const TokenSeq& a, const TokenSeq& b) {
  std::vector<int> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// ---- METEOR chunk-minimal alignment ----

struct AlignProblem {
  const TokenSeq& cand;
  const TokenSeq& ref;
  std::map<std::string, int> need;       // pairs still required per word
  std::map<std::string, int> cand_left;  // candidate occurrences not yet passed
  std::vector<char> ref_used;
  int best_chunks;
  int last_i = -2, last_j = -2;  // previously matched pair

  explicit AlignProblem(const TokenSeq& c, const TokenSeq& r)
      : cand(c), ref(r), ref_used(r.size(), 0), best_chunks(0) {}
};

void search_chunks(AlignProblem& p, std::size_t i, int remaining, int chunks) {
  if (chunks >= p.best_chunks) return;  // cannot improve
  if (remaining == 0) {
    p.best_chunks = chunks;
    return;
  }
  if (i >= p.cand.size()) return;
  const std::string& w = p.cand[i];
  auto need_it = p.need.find(w);
  int need = need_it == p.need.end() ? 0 : need_it->second;
  int avail = p.cand_left.at(w);
  --p.cand_left[w];

  if (need > 0) {
    int keep_i = p.last_i, keep_j = p.last_j;
    for (std::size_t j = 0; j < p.ref.size(); ++j) {
      if (p.ref_used[j] || p.ref[j] != w) continue;
      bool extends = static_cast<int>(i) == p.last_i + 1 && static_cast<int>(j) == p.last_j + 1;
      p.ref_used[j] = 1;
      --need_it->second;
      p.last_i = static_cast<int>(i);
      p.last_j = static_cast<int>(j);
      search_chunks(p, i + 1, remaining - 1, chunks + (extends ? 0 : 1));
      p.last_i = keep_i;
      p.last_j = keep_j;
      ++need_it->second;
      p.ref_used[j] = 0;
    }
  }
  // Leaving this occurrence unmatched is allowed only when enough later
  // occurrences remain to satisfy the word's quota.
  if (avail - 1 >= need) search_chunks(p, i + 1, remaining, chunks);
  ++p.cand_left[w];
}

int greedy_chunks(const TokenSeq& cand, const TokenSeq& ref, int matches) {
  std::vector<char> cused(cand.size(), 0), rused(ref.size(), 0);
  int remaining = matches, chunks = 0;
  while (remaining > 0) {
    std::size_t best_i = 0, best_j = 0, best_len = 0;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      for (std::size_t j = 0; j < ref.size(); ++j) {
        std::size_t len = 0;
        while (i + len < cand.size() && j + len < ref.size() && !cused[i + len] &&
               !rused[j + len] && cand[i + len] == ref[j + len])
          ++len;
        if (len > best_len) {
          best_len = len;
          best_i = i;
          best_j = j;
        }
      }
    }
    if (best_len == 0) break;
    for (std::size_t k = 0; k < best_len; ++k) {
      cused[best_i + k] = 1;
      rused[best_j + k] = 1;
    }
    remaining -= static_cast<int>(best_len);
    ++chunks;
  }
  return chunks;
}

Real meteor_single(const TokenSeq& cand, const TokenSeq& ref) {
  auto cc = ngram_counts(cand, 1);
  auto rc = ngram_counts(ref, 1);
  int matches = 0;
  std::map<std::string, int> need, cand_count;
  for (const auto& [g, c] : cc) {
    cand_count[g[0]] = c;
    auto it = rc.find(g);
    if (it == rc.end()) continue;
    int m = std::min(c, it->second);
    matches += m;
    need[g[0]] = m;
  }
  if (matches == 0) return 0.0;

  int chunks;
  if (matches > kMeteorExactLimit) {
    warn("meteor alignment approximated for a long comment");
    chunks = greedy_chunks(cand, ref, matches);
  } else {
    AlignProblem p(cand, ref);
    p.need = need;
    p.cand_left = cand_count;
    p.best_chunks = matches + 1;
    search_chunks(p, 0, matches, 0);
    chunks = p.best_chunks;
  }

  Real m = static_cast<Real>(matches);
  Real prec = m / static_cast<Real>(cand.size());
  Real rec = m / static_cast<Real>(ref.size());
  Real fmean = prec * rec / (kMeteorAlpha * prec + (1.0 - kMeteorAlpha) * rec);
  Real penalty = kMeteorGamma * std::pow(static_cast<Real>(chunks) / m, kMeteorTheta);
  return fmean * (1.0 - penalty);
}

// ---- CIDEr ----

using TfIdf = std::map<Ngram, Real>;

// `missing_idf` applies to grams absent from every reference set (df = 0);
// they still weigh down the candidate norm.
TfIdf tfidf_vector(const TokenSeq& s, int n, const std::map<Ngram, Real>& idf, Real missing_idf) {
  TfIdf v;
  auto counts = ngram_counts(s, n);
  Real total = 0;
  for (const auto& [g, c] : counts) total += c;
  if (total == 0) return v;
  for (const auto& [g, c] : counts) {
    auto it = idf.find(g);
    Real w = it == idf.end() ? missing_idf : it->second;
    v[g] = (static_cast<Real>(c) / total) * w;
  }
  return v;
}

Real cosine(const TfIdf& a, const TfIdf& b) {
  Real dot = 0, na = 0, nb = 0;
  for (const auto& [g, x] : a) {
    na += x * x;
    auto it = b.find(g);
    if (it != b.end()) dot += x * it->second;
  }
  for (const auto& [g, x] : b) nb += x * x;
  if (na <= 0 || nb <= 0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

Real bleu_n(const TokenSeq& candidate, const std::vector<TokenSeq>& references, int n) {
  if (n < 1 || n > 2) throw std::invalid_argument("bleu order must be 1 or 2");
  if (references.empty()) throw std::invalid_argument("references required");
  if (candidate.empty()) {
    warn("empty candidate scores 0");
    return 0.0;
  }
  std::vector<Real> clipped, total;
  for (int k = 1; k <= n; ++k) {
    GramStats st = clipped_counts(candidate, references, k);
    clipped.push_back(st.clipped);
    total.push_back(st.total);
  }
  return compose_bleu(clipped, total, static_cast<Real>(candidate.size()),
                      closest_ref_len(candidate.size(), references), n);
}

void BleuAccumulator::add(const TokenSeq& candidate, const std::vector<TokenSeq>& references) {
  if (references.empty()) throw std::invalid_argument("references required");
  for (int k = 1; k <= 2; ++k) {
    GramStats st = clipped_counts(candidate, references, k);
    clipped_[static_cast<std::size_t>(k - 1)] += st.clipped;
    total_[static_cast<std::size_t>(k - 1)] += st.total;
  }
  cand_len_ += static_cast<Real>(candidate.size());
  ref_len_ += closest_ref_len(candidate.size(), references);
}

Real BleuAccumulator::score(int n) const {
  if (n < 1 || n > 2) throw std::invalid_argument("bleu order must be 1 or 2");
  return compose_bleu(clipped_, total_, cand_len_, ref_len_, n);
}

Real rouge_l(const TokenSeq& candidate, const std::vector<TokenSeq>& references) {
  if (candidate.empty()) return 0.0;
  Real best = 0;
  for (const auto& ref : references) {
    if (ref.empty()) continue;
    int L = lcs_length(candidate, ref);
    if (L == 0) continue;
    Real prec = static_cast<Real>(L) / static_cast<Real>(candidate.size());
    Real rec = static_cast<Real>(L) / static_cast<Real>(ref.size());
    Real f = (1.0 + kRougeBetaSq) * prec * rec / (rec + kRougeBetaSq * prec);
    best = std::max(best, f);
  }
  return best;
}

Real meteor(const TokenSeq& candidate, const std::vector<TokenSeq>& references) {
  if (candidate.empty()) return 0.0;
  Real best = 0;
  for (const auto& ref : references) {
    if (ref.empty()) continue;
    best = std::max(best, meteor_single(candidate, ref));
  }
  return best;
}

Real cider(const std::vector<TokenSeq>& candidates,
           const std::vector<std::vector<TokenSeq>>& references) {
  if (candidates.size() != references.size())
    throw std::invalid_argument("candidate/reference count mismatch");
  if (candidates.empty()) throw std::invalid_argument("empty evaluation split");
  std::size_t N = candidates.size();
  Real n_eff = static_cast<Real>(std::max<std::size_t>(N, 2));
  if (N < 2) warn("single-document batch; idf floored");

  Real score = 0;
  for (int n = 1; n <= 4; ++n) {
    // Document frequency of each n-gram over the reference sets.
    std::map<Ngram, Real> idf;
    for (const auto& refs : references) {
      std::map<Ngram, char> seen;
      for (const auto& r : refs)
        for (const auto& [g, c] : ngram_counts(r, n)) seen[g] = 1;
      for (const auto& [g, one] : seen) idf[g] += 1.0;
    }
    for (auto& [g, df] : idf) df = std::log(n_eff) - std::log(std::max<Real>(1.0, df));

    Real order_sum = 0;
    Real missing_idf = std::log(n_eff);
    for (std::size_t i = 0; i < N; ++i) {
      TfIdf cv = tfidf_vector(candidates[i], n, idf, missing_idf);
      Real item = 0;
      for (const auto& r : references[i]) item += cosine(cv, tfidf_vector(r, n, idf, missing_idf));
      order_sum += item / static_cast<Real>(references[i].size());
    }
    score += order_sum / static_cast<Real>(N);
  }
  return 10.0 * score / 4.0;
}

MetricReport evaluate_generations(const std::vector<TokenSeq>& candidates,
                                  const std::vector<std::vector<TokenSeq>>& references) {
  if (candidates.empty()) throw std::invalid_argument("empty evaluation split");
  if (candidates.size() != references.size())
    throw std::invalid_argument("candidate/reference count mismatch");
  BleuAccumulator acc;
  Real rsum = 0, msum = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    acc.add(candidates[i], references[i]);
    rsum += rouge_l(candidates[i], references[i]);
    msum += meteor(candidates[i], references[i]);
  }
  MetricReport r;
  r.n_examples = static_cast<int>(candidates.size());
  r.bleu1 = acc.score(1);
  r.bleu2 = acc.score(2);
  r.rouge_l = rsum / static_cast<Real>(candidates.size());
  r.meteor = msum / static_cast<Real>(candidates.size());
  r.cider = cider(candidates, references);
  return r;
}

MetricReport evaluate_model(const AttributorModel& model, const Corpus& corpus,
                            const Vocabulary& vocab, const WordClassLexicon& lexicon,
                            const std::vector<TrainExample>& split, int max_len) {
  if (split.empty()) throw std::invalid_argument("empty evaluation split");
  std::map<int, TopicSequences> cache;
  std::vector<TokenSeq> cands;
  std::vector<std::vector<TokenSeq>> refs;
  for (const TrainExample& ex : split) {
    const UserHistory& user = corpus.users.at(static_cast<std::size_t>(ex.user));
    auto it = cache.find(ex.user);
    if (it == cache.end())
      it = cache.emplace(ex.user, featurize_user(model.topics(), user, vocab, lexicon)).first;
    const Interaction& inter = user.interactions.at(static_cast<std::size_t>(ex.target));
    auto inf = model.infer(it->second, static_cast<std::size_t>(ex.target),
                           corpus.article(inter.news_id), max_len, DecodeMode::greedy());
    TokenSeq cand;
    cand.reserve(inf.trace.tokens.size());
    for (int id : inf.trace.tokens) cand.push_back(vocab.token(id));
    cands.push_back(std::move(cand));
    refs.push_back({inter.comment.words});
  }
  return evaluate_generations(cands, refs);
}

std::uint64_t model_content_hash(const AttributorModel& model) {
  std::uint64_t hs[4] = {
      model.topics().params().content_hash(), model.history().params().content_hash(),
      model.situation().params().content_hash(), model.decoder().params().content_hash()};
  return fnv1a(hs, sizeof hs);
}

std::string report_json(const MetricReport& report, std::uint64_t checkpoint_hash) {
  nlohmann::json j;
  j["bleu1"] = report.bleu1;
  j["bleu2"] = report.bleu2;
  j["rouge_l"] = report.rouge_l;
  j["meteor"] = report.meteor;
  j["cider"] = report.cider;
  j["n_examples"] = report.n_examples;
  j["checkpoint_hash"] = checkpoint_hash;
  return j.dump(2) + "\n";
}

}  // namespace dsattr

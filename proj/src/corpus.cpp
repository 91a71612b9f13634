#include "dsattr/corpus.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "dsattr/common.hpp"

namespace dsattr {

using nlohmann::json;

namespace {
const std::vector<std::string> kSpecials = {"<pad>", "<bos>", "<eos>", "<unk>"};
}

std::string Comment::text() const {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

const NewsArticle& Corpus::article(const std::string& id) const {
  auto it = article_index.find(id);
  if (it == article_index.end()) throw std::out_of_range("unknown article: " + id);
  return articles[static_cast<std::size_t>(it->second)];
}

void Corpus::add_article(NewsArticle a) {
  if (article_index.count(a.id)) return;
  article_index[a.id] = static_cast<int>(articles.size());
  articles.push_back(std::move(a));
}

std::size_t Corpus::interaction_count() const {
  std::size_t n = 0;
  for (const auto& u : users) n += u.interactions.size();
  return n;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

Vocabulary build_vocab(const Corpus& corpus, int max_size) {
  std::map<std::string, long long> freq;
  auto count_sentence = [&](const Sentence& s) {
    for (const auto& w : s.words) ++freq[w];
  };
  for (const auto& a : corpus.articles) {
    count_sentence(a.title);
    for (const auto& s : a.body) count_sentence(s);
  }
  for (const auto& u : corpus.users)
    for (const auto& it : u.interactions)
      for (const auto& w : it.comment.words) ++freq[w];
  if (freq.empty()) throw std::runtime_error("empty corpus");

  std::vector<std::pair<std::string, long long>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (static_cast<int>(ranked.size()) > max_size) ranked.resize(static_cast<std::size_t>(max_size));

  Vocabulary v;
  v.tokens = kSpecials;
  for (const auto& [tok, n] : ranked) v.tokens.push_back(tok);
  for (int i = 0; i < v.size(); ++i) v.token_to_id[v.tokens[static_cast<std::size_t>(i)]] = i;
  if (static_cast<int>(v.token_to_id.size()) != v.size())
    throw std::runtime_error("vocabulary collides with special tokens");
  return v;
}

void apply_vocab(Corpus& corpus, const Vocabulary& vocab) {
  auto index_sentence = [&](Sentence& s) {
    s.ids.clear();
    s.ids.reserve(s.words.size());
    for (const auto& w : s.words) s.ids.push_back(vocab.id(w));
  };
  for (auto& a : corpus.articles) {
    index_sentence(a.title);
    for (auto& s : a.body) index_sentence(s);
  }
  for (auto& u : corpus.users) {
    for (auto& it : u.interactions) {
      auto& c = it.comment;
      c.tokens.clear();
      c.tokens.reserve(c.words.size());
      for (const auto& w : c.words) c.tokens.push_back(vocab.id(w));
    }
  }
}

BowTriple featurize_comment(const Comment& comment, const Vocabulary& vocab,
                            const WordClassLexicon& lexicon) {
  BowTriple out;
  out.y = Vec::Zero(vocab.size());
  out.y_a = Vec::Zero(vocab.size());
  out.y_s = Vec::Zero(vocab.size());
  for (int id : comment.tokens) {
    if (id < 0 || id >= vocab.size()) throw std::out_of_range("token out of vocabulary");
    out.y(id) += 1.0;
    const std::string& tok = vocab.token(id);
    if (lexicon.is_entity(tok)) out.y_a(id) += 1.0;
    if (lexicon.is_opinion(tok)) out.y_s(id) += 1.0;
  }
  return out;
}

std::set<std::string> history_entity_set(const Corpus& corpus, const UserHistory& user, int t,
                                         const WordClassLexicon& lexicon) {
  std::set<std::string> out;
  auto add_sentence = [&](const Sentence& s) {
    for (const auto& w : s.words)
      if (lexicon.is_entity(w)) out.insert(w);
  };
  for (const auto& it : user.interactions) {
    if (it.comment.t >= t) continue;
    const NewsArticle& a = corpus.article(it.news_id);
    add_sentence(a.title);
    for (const auto& s : a.body) add_sentence(s);
    for (const auto& w : it.comment.words)
      if (lexicon.is_entity(w)) out.insert(w);
  }
  return out;
}

OverlapDistribution entity_overlap_report(const Corpus& corpus, const WordClassLexicon& lexicon) {
  OverlapDistribution d;
  long long total = 0, a = 0, b = 0, c = 0, n = 0;
  for (const auto& u : corpus.users) {
    for (const auto& it : u.interactions) {
      ++total;
      std::set<std::string> ents;
      for (const auto& w : it.comment.words)
        if (lexicon.is_entity(w)) ents.insert(w);
      if (ents.empty()) {
        ++n;
        continue;
      }
      std::set<std::string> news_ents;
      const NewsArticle& art = corpus.article(it.news_id);
      for (const Sentence* s : art.sentences())
        for (const auto& w : s->words)
          if (lexicon.is_entity(w)) news_ents.insert(w);
      std::set<std::string> hist = history_entity_set(corpus, u, it.comment.t, lexicon);
      bool in_news = std::any_of(ents.begin(), ents.end(),
                                 [&](const std::string& e) { return news_ents.count(e) > 0; });
      bool in_hist = std::any_of(ents.begin(), ents.end(),
                                 [&](const std::string& e) { return hist.count(e) > 0; });
      if (in_news && in_hist)
        ++b;
      else if (in_news)
        ++a;
      else if (in_hist)
        ++c;
      else
        ++n;
    }
  }
  if (total == 0) {
    warn("entity_overlap_report: empty corpus, returning zeros");
    return d;
  }
  Real tt = static_cast<Real>(total);
  d.only_news = static_cast<Real>(a) / tt;
  d.news_and_history = static_cast<Real>(b) / tt;
  d.only_history = static_cast<Real>(c) / tt;
  d.neither = static_cast<Real>(n) / tt;
  return d;
}

// ---- serialization ----

std::string Vocabulary::to_json() const {
  json j;
  j["tokens"] = tokens;
  return j.dump();
}

Vocabulary Vocabulary::from_json(const std::string& text) {
  json j = json::parse(text);
  Vocabulary v;
  v.tokens = j.at("tokens").get<std::vector<std::string>>();
  for (int i = 0; i < v.size(); ++i) v.token_to_id[v.tokens[static_cast<std::size_t>(i)]] = i;
  if (v.size() < 4 || v.tokens[0] != kSpecials[0] || v.tokens[1] != kSpecials[1] ||
      v.tokens[2] != kSpecials[2] || v.tokens[3] != kSpecials[3])
    throw std::runtime_error("vocabulary missing special tokens");
  if (static_cast<int>(v.token_to_id.size()) != v.size())
    throw std::runtime_error("vocabulary has duplicate tokens");
  return v;
}

void Vocabulary::save(const std::string& path) const { write_file_atomic(path, to_json()); }

std::uint64_t Vocabulary::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tokens) {
    h = fnv1a(t.data(), t.size(), h);
    h = fnv1a("\n", 1, h);
  }
  return h;
}

Vocabulary Vocabulary::load(const std::string& path) { return from_json(read_text_file(path)); }

void WordClassLexicon::save(const std::string& path) const {
  json j;
  j["entities"] = entity_words;
  j["opinions"] = opinion_words;
  write_file_atomic(path, j.dump(2));
}

WordClassLexicon WordClassLexicon::load(const std::string& path) {
  json j = json::parse(read_text_file(path));
  WordClassLexicon lex;
  for (const auto& e : j.at("entities")) lex.entity_words.insert(e.get<std::string>());
  for (const auto& o : j.at("opinions")) lex.opinion_words.insert(o.get<std::string>());
  return lex;
}

namespace {

json sentence_to_json(const Sentence& s) { return json(s.words); }

Sentence sentence_from_json(const json& j) {
  Sentence s;
  s.words = j.get<std::vector<std::string>>();
  return s;
}

}  // namespace

void save_corpus_jsonl(const Corpus& corpus, const std::string& path) {
  std::string out;
  for (const auto& u : corpus.users) {
    json rec;
    rec["user_id"] = u.user_id;
    json inters = json::array();
    for (const auto& it : u.interactions) {
      const NewsArticle& a = corpus.article(it.news_id);
      json news;
      news["id"] = a.id;
      news["title"] = sentence_to_json(a.title);
      json body = json::array();
      for (const auto& s : a.body) body.push_back(sentence_to_json(s));
      news["sentences"] = body;
      json cm;
      cm["text"] = it.comment.text();
      cm["tokens"] = it.comment.words;
      cm["t"] = it.comment.t;
      inters.push_back({{"news", news}, {"comment", cm}});
    }
    rec["interactions"] = inters;
    out += rec.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

Corpus load_corpus_jsonl(const std::string& path) {
  Corpus corpus;
  std::istringstream in(read_text_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    UserHistory u;
    u.user_id = rec.at("user_id").get<std::string>();
    for (const auto& ij : rec.at("interactions")) {
      const json& nj = ij.at("news");
      NewsArticle a;
      a.id = nj.at("id").get<std::string>();
      a.title = sentence_from_json(nj.at("title"));
      for (const auto& sj : nj.at("sentences")) a.body.push_back(sentence_from_json(sj));
      corpus.add_article(std::move(a));

      Interaction it;
      it.news_id = nj.at("id").get<std::string>();
      it.comment.user_id = u.user_id;
      it.comment.t = ij.at("comment").at("t").get<int>();
      it.comment.words = ij.at("comment").at("tokens").get<std::vector<std::string>>();
      u.interactions.push_back(std::move(it));
    }
    corpus.users.push_back(std::move(u));
  }
  return corpus;
}

}  // namespace dsattr

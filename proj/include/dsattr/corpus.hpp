#pragma once

// Data model: vocabulary, word-class lexicon, users/news/comments, masked
// bag-of-words featurization, and the entity-overlap report.

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dsattr/types.hpp"

namespace dsattr {

struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  std::vector<std::string> tokens;
  std::map<std::string, int> token_to_id;

  int size() const { return static_cast<int>(tokens.size()); }
  const std::string& token(int id) const { return tokens.at(static_cast<std::size_t>(id)); }
  /// Id of a token, UNK when absent.
  int id(const std::string& tok) const {
    auto it = token_to_id.find(tok);
    return it == token_to_id.end() ? kUnk : it->second;
  }
  bool contains(const std::string& tok) const { return token_to_id.count(tok) > 0; }

  std::string to_json() const;
  static Vocabulary from_json(const std::string& text);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);
  /// Stable hash of the token list; checkpoints store it to reject loads
  /// against a different vocabulary.
  std::uint64_t content_hash() const;
};

struct WordClassLexicon {
  std::set<std::string> entity_words;
  std::set<std::string> opinion_words;

  bool is_entity(const std::string& tok) const { return entity_words.count(tok) > 0; }
  bool is_opinion(const std::string& tok) const { return opinion_words.count(tok) > 0; }

  void save(const std::string& path) const;
  static WordClassLexicon load(const std::string& path);
};

struct Sentence {
  std::vector<std::string> words;
  std::vector<int> ids;  // filled by apply_vocab
};

struct NewsArticle {
  std::string id;
  Sentence title;
  std::vector<Sentence> body;

  /// Title plus body, title at index 0.
  std::vector<const Sentence*> sentences() const {
    std::vector<const Sentence*> out;
    out.reserve(body.size() + 1);
    out.push_back(&title);
    for (const auto& s : body) out.push_back(&s);
    return out;
  }
};

struct Comment {
  std::string user_id;
  int t = 0;  // order index within the user's history
  std::vector<std::string> words;
  std::vector<int> tokens;  // filled by apply_vocab
  std::string text() const;
};

struct Interaction {
  std::string news_id;
  Comment comment;
};

struct UserHistory {
  std::string user_id;
  std::vector<Interaction> interactions;  // strictly increasing comment.t
};

struct Corpus {
  std::vector<NewsArticle> articles;
  std::map<std::string, int> article_index;  // id -> position in articles
  std::vector<UserHistory> users;

  const NewsArticle& article(const std::string& id) const;
  void add_article(NewsArticle a);
  std::size_t interaction_count() const;
};

struct BowTriple {
  Vec y;       // all token counts
  Vec y_a;     // entity-masked counts
  Vec y_s;     // opinion-masked counts
};

struct OverlapDistribution {
  Real only_news = 0, news_and_history = 0, only_history = 0, neither = 0;
  Real sum() const { return only_news + news_and_history + only_history + neither; }
};

std::vector<std::string> tokenize(const std::string& text);

/// Ranks tokens from every comment and news sentence by frequency (ties
/// lexicographic) and keeps the top max_size after the four specials.
Vocabulary build_vocab(const Corpus& corpus, int max_size);

/// Fills token ids throughout the corpus (unknown words map to UNK).
void apply_vocab(Corpus& corpus, const Vocabulary& vocab);

BowTriple featurize_comment(const Comment& comment, const Vocabulary& vocab,
                            const WordClassLexicon& lexicon);

/// Buckets every comment by where its entity types appear: only the paired
/// news, both news and the user's earlier interactions, only earlier
/// interactions, or neither (also the bucket for entity-free comments).
OverlapDistribution entity_overlap_report(const Corpus& corpus, const WordClassLexicon& lexicon);

/// Distinct entity words in text seen by the user strictly before order
/// index t (earlier news titles, bodies, and the user's own comments).
std::set<std::string> history_entity_set(const Corpus& corpus, const UserHistory& user, int t,
                                         const WordClassLexicon& lexicon);

void save_corpus_jsonl(const Corpus& corpus, const std::string& path);
Corpus load_corpus_jsonl(const std::string& path);

}  // namespace dsattr

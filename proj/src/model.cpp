#include "dsattr/model.hpp"

#include <stdexcept>

#include <json.hpp>

namespace dsattr {

using nlohmann::json;

TopicConfig ModelConfig::topic_config() const {
  TopicConfig c;
  c.vocab_size = vocab_size;
  c.k_a = k_a;
  c.k_s = k_s;
  c.d = topic_d;
  c.enc_hidden = topic_enc_hidden;
  return c;
}

HistoryConfig ModelConfig::history_config() const {
  HistoryConfig c;
  c.k_a = k_a;
  c.k_s = k_s;
  c.hidden = pf_dim;
  c.layers = history_layers;
  c.history_cap = history_cap;
  return c;
}

SituationConfig ModelConfig::situation_config() const {
  SituationConfig c;
  c.vocab_size = vocab_size;
  c.emb_dim = emb_dim;
  c.enc_hidden = enc_hidden;
  c.enc_layers = enc_layers;
  c.att_hidden = att_hidden;
  c.k_a = k_a;
  c.pf_dim = pf_dim;
  c.topic_d = topic_d;
  c.max_sentence_words = max_sentence_words;
  c.max_sentences = max_sentences;
  c.static_importance_query = static_importance_query;
  return c;
}

DecoderConfig ModelConfig::decoder_config() const {
  DecoderConfig c;
  c.vocab_size = vocab_size;
  c.emb_dim = emb_dim;
  c.hidden = dec_hidden;
  c.layers = dec_layers;
  c.d_s = d_s();
  c.topic_d = topic_d;
  c.k_s = k_s;
  c.pf_dim = pf_dim;
  c.no_im = no_im;
  c.no_ov = no_ov;
  return c;
}

std::string ModelConfig::to_json(std::uint64_t vocab_hash) const {
  json j;
  j["vocab_size"] = vocab_size;
  j["topic_d"] = topic_d;
  j["k_a"] = k_a;
  j["k_s"] = k_s;
  j["topic_enc_hidden"] = topic_enc_hidden;
  j["pf_dim"] = pf_dim;
  j["history_layers"] = history_layers;
  j["history_cap"] = history_cap;
  j["emb_dim"] = emb_dim;
  j["enc_hidden"] = enc_hidden;
  j["enc_layers"] = enc_layers;
  j["att_hidden"] = att_hidden;
  j["max_sentence_words"] = max_sentence_words;
  j["max_sentences"] = max_sentences;
  j["dec_hidden"] = dec_hidden;
  j["dec_layers"] = dec_layers;
  j["static_importance_query"] = static_importance_query;
  j["no_im"] = no_im;
  j["no_ov"] = no_ov;
  j["vocab_hash"] = vocab_hash;
  return j.dump(2) + "\n";
}

std::pair<ModelConfig, std::uint64_t> ModelConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.topic_d = j.value("topic_d", c.topic_d);
  c.k_a = j.value("k_a", c.k_a);
  c.k_s = j.value("k_s", c.k_s);
  c.topic_enc_hidden = j.value("topic_enc_hidden", c.topic_enc_hidden);
  c.pf_dim = j.value("pf_dim", c.pf_dim);
  c.history_layers = j.value("history_layers", c.history_layers);
  c.history_cap = j.value("history_cap", c.history_cap);
  c.emb_dim = j.value("emb_dim", c.emb_dim);
  c.enc_hidden = j.value("enc_hidden", c.enc_hidden);
  c.enc_layers = j.value("enc_layers", c.enc_layers);
  c.att_hidden = j.value("att_hidden", c.att_hidden);
  c.max_sentence_words = j.value("max_sentence_words", c.max_sentence_words);
  c.max_sentences = j.value("max_sentences", c.max_sentences);
  c.dec_hidden = j.value("dec_hidden", c.dec_hidden);
  c.dec_layers = j.value("dec_layers", c.dec_layers);
  c.static_importance_query = j.value("static_importance_query", c.static_importance_query);
  c.no_im = j.value("no_im", c.no_im);
  c.no_ov = j.value("no_ov", c.no_ov);
  return {c, j.value("vocab_hash", std::uint64_t{0})};
}

TopicSequences featurize_user(const TopicModel& topics, const UserHistory& user,
                              const Vocabulary& vocab, const WordClassLexicon& lexicon) {
  TopicSequences out;
  out.z_a.reserve(user.interactions.size());
  out.z_s.reserve(user.interactions.size());
  for (const auto& inter : user.interactions) {
    BowTriple bow = featurize_comment(inter.comment, vocab, lexicon);
    auto [za, zs] = topics.infer_distributions(bow.y);
    out.z_a.push_back(std::move(za));
    out.z_s.push_back(std::move(zs));
  }
  return out;
}

AttributorModel::AttributorModel(ModelConfig cfg, TopicModel disentangler, Rng& rng)
    : cfg_(cfg),
      topics_(std::move(disentangler)),
      history_(cfg.history_config(), rng),
      situation_(cfg.situation_config(), rng),
      decoder_(cfg.decoder_config(), rng) {
  const TopicConfig& tc = topics_.config();
  if (tc.vocab_size != cfg_.vocab_size || tc.k_a != cfg_.k_a || tc.k_s != cfg_.k_s ||
      tc.d != cfg_.topic_d)
    throw std::invalid_argument("disentangler configuration mismatch");
}

PreferenceState AttributorModel::preference_from(const TopicSequences& seqs,
                                                 std::size_t n) const {
  if (n > seqs.size()) throw std::invalid_argument("history length exceeds featurized sequence");
  std::vector<Vec> za(seqs.z_a.begin(), seqs.z_a.begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<Vec> zs(seqs.z_s.begin(), seqs.z_s.begin() + static_cast<std::ptrdiff_t>(n));
  return history_.encode_history(za, zs);
}

ImportanceScores AttributorModel::importance(const PreferenceState& prefs,
                                             const NewsEncoding& encoding) const {
  ImportanceScores s;
  s.aspect_distribution = situation_.predict_aspect_distribution(prefs.pf_a, encoding.news_vector);
  s.aspect_vector = weighted_topic_vector(s.aspect_distribution,
                                          topics_.topic_vectors(Branch::kAspect));
  s.g = situation_.importance_scores(encoding.sentence_vectors, s.aspect_vector);
  return s;
}

AttributorModel::Inference AttributorModel::infer(const TopicSequences& seqs,
                                                  std::size_t history_len,
                                                  const NewsArticle& article, int max_len,
                                                  const DecodeMode& mode) const {
  Inference out;
  out.prefs = preference_from(seqs, history_len);
  out.encoding = situation_.encode_news(article);
  out.scores = importance(out.prefs, out.encoding);
  out.trace = decoder_.generate(out.encoding, out.scores, out.prefs, topics_, max_len, mode);
  return out;
}

namespace {

constexpr const char* kStorePrefix[] = {"hist/", "sit/", "dec/"};

void copy_validated(nn::ParamStore& dst, const nn::ParamStore& src, const std::string& prefix) {
  for (const auto& name : dst.names()) {
    const std::string key = prefix + name;
    if (!src.has(key)) throw std::runtime_error("checkpoint missing parameter: " + key);
    const Mat& v = src.get(key);
    Mat& slot = dst.get(name);
    if (v.rows() != slot.rows() || v.cols() != slot.cols())
      throw std::runtime_error("checkpoint parameter shape mismatch: " + key);
    slot = v;
  }
}

}  // namespace

void AttributorModel::save(const std::string& dir, const Vocabulary& vocab) const {
  write_file_atomic(dir + "/config.json", cfg_.to_json(vocab.content_hash()));
  topics_.params().save(dir + "/disentangler.bin");
  nn::ParamStore combined;
  const nn::ParamStore* stores[] = {&history_.params(), &situation_.params(), &decoder_.params()};
  for (int i = 0; i < 3; ++i)
    for (const auto& name : stores[i]->names())
      combined.add(kStorePrefix[i] + name, stores[i]->get(name));
  combined.save(dir + "/main.bin");
  vocab.save(dir + "/vocab.json");
}

std::pair<AttributorModel, Vocabulary> AttributorModel::load(const std::string& dir) {
  Vocabulary vocab = Vocabulary::load(dir + "/vocab.json");
  auto [cfg, expected_hash] = ModelConfig::from_json(read_text_file(dir + "/config.json"));
  if (expected_hash != vocab.content_hash())
    throw std::runtime_error("checkpoint vocabulary mismatch");

  Rng scaffold_rng(0);
  TopicModel topics(cfg.topic_config(), scaffold_rng);
  nn::ParamStore topic_blob;
  topic_blob.load(dir + "/disentangler.bin");
  copy_validated(topics.params(), topic_blob, "");

  AttributorModel model(cfg, std::move(topics), scaffold_rng);
  nn::ParamStore combined;
  combined.load(dir + "/main.bin");
  nn::ParamStore* stores[] = {&model.history_.params(), &model.situation_.params(),
                              &model.decoder_.params()};
  std::size_t expected = 0;
  for (int i = 0; i < 3; ++i) {
    copy_validated(*stores[i], combined, kStorePrefix[i]);
    expected += stores[i]->count();
  }
  if (combined.count() != expected)
    throw std::runtime_error("checkpoint holds unexpected parameters");
  return {std::move(model), std::move(vocab)};
}

std::string trace_json(const AttributorModel::Inference& inf, const Vocabulary& vocab) {
  auto to_array = [](const Vec& v) {
    std::vector<Real> out(v.data(), v.data() + v.size());
    return out;
  };
  json j;
  std::vector<std::string> tokens;
  tokens.reserve(inf.trace.tokens.size());
  std::string text;
  for (int id : inf.trace.tokens) {
    tokens.push_back(vocab.token(id));
    if (!text.empty()) text += ' ';
    text += tokens.back();
  }
  j["tokens"] = tokens;
  j["text"] = text;
  j["e_mean"] = to_array(inf.trace.mean_decoder_attention);
  j["g"] = to_array(inf.scores.g);
  j["z_a_hat"] = to_array(inf.scores.aspect_distribution);
  j["z_s_hat"] = to_array(inf.trace.zs_hat);
  return j.dump();
}

}  // namespace dsattr

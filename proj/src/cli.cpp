#include "dsattr/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dsattr/apps.hpp"
#include "dsattr/generator.hpp"
#include "dsattr/metrics.hpp"
#include "dsattr/training.hpp"

namespace dsattr {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kVersion = "0.1.0";

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Every invocation records what it did next to its primary output.
struct Manifest {
  std::string command;
  json config = json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::uint64_t checkpoint_hash = 0;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  void write(const std::string& path) {
    auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - started)
                       .count();
    json j;
    j["command"] = command;
    j["config"] = config;
    j["seed"] = seed;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["checkpoint_hash"] = checkpoint_hash;
    j["wall_clock_ms"] = elapsed;
    j["version"] = kVersion;
    write_file_atomic(path, j.dump(2) + "\n");
  }
};

/// dir outputs keep the manifest inside; file outputs put it alongside.
std::string manifest_path(const std::string& override_path, const std::string& out,
                          bool out_is_dir, const std::string& command) {
  if (!override_path.empty()) return override_path;
  if (!out.empty()) return out_is_dir ? out + "/manifest.json" : out + ".manifest.json";
  return command + ".manifest.json";
}

void emit(const std::string& text, bool as_json, const std::string& out_path,
          std::vector<std::string>& outputs) {
  if (!out_path.empty()) {
    write_file_atomic(out_path, text);
    outputs.push_back(out_path);
  }
  if (as_json)
    std::cout << text;
  else if (!out_path.empty())
    std::cerr << "wrote " << out_path << "\n";
}

std::string default_lexicon_path(const std::string& corpus_path) {
  return corpus_path + ".lexicon.json";
}

struct CorpusBundle {
  Corpus corpus;
  WordClassLexicon lexicon;
};

CorpusBundle load_bundle(const std::string& corpus_path, std::string lexicon_path) {
  if (lexicon_path.empty()) lexicon_path = default_lexicon_path(corpus_path);
  CorpusBundle b;
  b.corpus = load_corpus_jsonl(corpus_path);
  b.lexicon = WordClassLexicon::load(lexicon_path);
  return b;
}

std::vector<const UserHistory*> sample_users(const Corpus& corpus, int n, std::uint64_t seed) {
  std::vector<const UserHistory*> pool;
  pool.reserve(corpus.users.size());
  for (const UserHistory& u : corpus.users) pool.push_back(&u);
  if (n > 0 && n < static_cast<int>(pool.size())) {
    Rng rng(seed);
    rng.shuffle(pool);
    pool.resize(static_cast<std::size_t>(n));
  }
  return pool;
}

const UserHistory& find_user(const Corpus& corpus, const std::string& user_id) {
  for (const UserHistory& u : corpus.users)
    if (u.user_id == user_id) return u;
  throw std::runtime_error("unknown user: " + user_id);
}

std::vector<SummaryStrategy> parse_strategies(const std::vector<std::string>& names) {
  std::vector<SummaryStrategy> out;
  for (const std::string& n : names) out.push_back(strategy_from_name(n));
  if (out.empty())
    out = {SummaryStrategy::kStandard, SummaryStrategy::kSingleUser, SummaryStrategy::kMultiUser};
  return out;
}

// ---- shared option blocks ----

struct GenParams {
  std::string config_path, out = "corpus.jsonl", manifest;
  std::uint64_t seed = 1;
  bool json = false;
  GeneratorConfig cfg;
  // flag mirrors; applied only when the option was passed
  int n_users = 0, history_len = 0, entity_clusters = 0, entities_per_cluster = 0,
      reserve_entities = 0, opinion_groups = 0, opinions_per_group = 0, filler_words = 0,
      theme_fillers = 0, comment_entity_count = 0, comment_opinion_count = 0,
      comment_filler_count = 0, title_entity_count = 0, title_filler_count = 0,
      distractor_sentences = 0, distractor_len = 0;
  Real own_cluster_prob = 0;
};

struct ModelFlags {
  std::string config_path;
  int topic_d = 0, k_a = 0, k_s = 0, topic_enc_hidden = 0, pf_dim = 0, history_layers = 0,
      history_cap = 0, emb_dim = 0, enc_hidden = 0, enc_layers = 0, att_hidden = 0,
      max_sentence_words = 0, max_sentences = 0, dec_hidden = 0, dec_layers = 0;
  bool static_importance_query = false;

  // option handles for presence checks
  CLI::Option *o_topic_d = nullptr, *o_k_a = nullptr, *o_k_s = nullptr, *o_teh = nullptr,
              *o_pf = nullptr, *o_hl = nullptr, *o_hc = nullptr, *o_emb = nullptr,
              *o_enc = nullptr, *o_encl = nullptr, *o_att = nullptr, *o_msw = nullptr,
              *o_ms = nullptr, *o_dec = nullptr, *o_decl = nullptr, *o_siq = nullptr;

  void wire(CLI::App* cmd) {
    cmd->add_option("--model-config", config_path, "model config JSON file");
    o_topic_d = cmd->add_option("--topic-d", topic_d, "topic vector dimension");
    o_k_a = cmd->add_option("--k-a", k_a, "aspect topic count");
    o_k_s = cmd->add_option("--k-s", k_s, "opinion topic count");
    o_teh = cmd->add_option("--topic-enc-hidden", topic_enc_hidden, "topic encoder width");
    o_pf = cmd->add_option("--pf-dim", pf_dim, "preference vector size");
    o_hl = cmd->add_option("--history-layers", history_layers, "history LSTM layers");
    o_hc = cmd->add_option("--history-cap", history_cap, "max history interactions");
    o_emb = cmd->add_option("--emb-dim", emb_dim, "word embedding size");
    o_enc = cmd->add_option("--enc-hidden", enc_hidden, "sentence encoder hidden size");
    o_encl = cmd->add_option("--enc-layers", enc_layers, "sentence encoder layers");
    o_att = cmd->add_option("--att-hidden", att_hidden, "attention hidden size");
    o_msw = cmd->add_option("--max-sentence-words", max_sentence_words, "word clip per sentence");
    o_ms = cmd->add_option("--max-sentences", max_sentences, "sentence clip per article");
    o_dec = cmd->add_option("--dec-hidden", dec_hidden, "decoder hidden size");
    o_decl = cmd->add_option("--dec-layers", dec_layers, "decoder layers");
    o_siq = cmd->add_flag("--static-importance-query", static_importance_query,
                          "use a free importance query");
  }

  ModelConfig resolve() const {
    ModelConfig mc;
    if (!config_path.empty()) mc = ModelConfig::from_json(read_file(config_path)).first;
    if (o_topic_d->count()) mc.topic_d = topic_d;
    if (o_k_a->count()) mc.k_a = k_a;
    if (o_k_s->count()) mc.k_s = k_s;
    if (o_teh->count()) mc.topic_enc_hidden = topic_enc_hidden;
    if (o_pf->count()) mc.pf_dim = pf_dim;
    if (o_hl->count()) mc.history_layers = history_layers;
    if (o_hc->count()) mc.history_cap = history_cap;
    if (o_emb->count()) mc.emb_dim = emb_dim;
    if (o_enc->count()) mc.enc_hidden = enc_hidden;
    if (o_encl->count()) mc.enc_layers = enc_layers;
    if (o_att->count()) mc.att_hidden = att_hidden;
    if (o_msw->count()) mc.max_sentence_words = max_sentence_words;
    if (o_ms->count()) mc.max_sentences = max_sentences;
    if (o_dec->count()) mc.dec_hidden = dec_hidden;
    if (o_decl->count()) mc.dec_layers = dec_layers;
    if (o_siq->count()) mc.static_importance_query = static_importance_query;
    return mc;
  }
};

struct TrainFlags {
  std::string config_path;
  Real lambda1 = 0, lambda2 = 0, learning_rate = 0, lr_decay_factor = 0, val_fraction = 0,
       test_fraction = 0;
  int batch_size = 0, epochs = 0, lr_decay_every = 0;
  bool finetune = false, quiet = false;

  CLI::Option *o_l1 = nullptr, *o_l2 = nullptr, *o_lr = nullptr, *o_ldf = nullptr,
              *o_vf = nullptr, *o_tf = nullptr, *o_bs = nullptr, *o_ep = nullptr,
              *o_lde = nullptr, *o_ft = nullptr, *o_q = nullptr;

  void wire(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "training config JSON file");
    o_l1 = cmd->add_option("--lambda1", lambda1, "aspect KL weight");
    o_l2 = cmd->add_option("--lambda2", lambda2, "opinion KL weight");
    o_lr = cmd->add_option("--lr", learning_rate, "learning rate");
    o_ldf = cmd->add_option("--lr-decay-factor", lr_decay_factor, "decay multiplier");
    o_vf = cmd->add_option("--val-fraction", val_fraction, "validation share per user");
    o_tf = cmd->add_option("--test-fraction", test_fraction, "test share per user");
    o_bs = cmd->add_option("--batch-size", batch_size, "examples per update");
    o_ep = cmd->add_option("--epochs", epochs, "training epochs");
    o_lde = cmd->add_option("--lr-decay-every", lr_decay_every, "epochs between decays");
    o_ft = cmd->add_flag("--finetune-disentangler", finetune,
                         "unfreeze the disentangler during joint training");
    o_q = cmd->add_flag("--quiet", quiet, "suppress progress lines");
  }

  TrainConfig resolve() const {
    TrainConfig cfg;
    if (!config_path.empty()) cfg = TrainConfig::from_json(read_file(config_path));
    if (o_l1->count()) cfg.lambda1 = lambda1;
    if (o_l2->count()) cfg.lambda2 = lambda2;
    if (o_lr->count()) cfg.learning_rate = learning_rate;
    if (o_ldf->count()) cfg.lr_decay_factor = lr_decay_factor;
    if (o_vf->count()) cfg.val_fraction = val_fraction;
    if (o_tf->count()) cfg.test_fraction = test_fraction;
    if (o_bs->count()) cfg.batch_size = batch_size;
    if (o_ep->count()) cfg.epochs = epochs;
    if (o_lde->count()) cfg.lr_decay_every = lr_decay_every;
    if (o_ft->count()) cfg.finetune_disentangler = finetune;
    if (o_q->count()) cfg.quiet = quiet;
    return cfg;
  }
};

struct CheckpointBundle {
  AttributorModel model;
  Vocabulary vocab;
};

CheckpointBundle load_checkpoint(const std::string& dir) {
  auto [model, vocab] = AttributorModel::load(dir);
  return CheckpointBundle{std::move(model), std::move(vocab)};
}

// ---- subcommand runners ----

int run_gen_corpus(GenParams& p) {
  Manifest man;
  man.command = "gen-corpus";
  man.seed = p.seed;
  GeneratorConfig cfg = p.cfg;
  auto result = generate_synthetic_corpus(cfg, p.seed);
  save_corpus_jsonl(result.corpus, p.out);
  std::string lexicon_path = default_lexicon_path(p.out);
  std::string truth_path = p.out + ".truth.json";
  result.lexicon.save(lexicon_path);
  save_truth(result.truth, truth_path);
  man.config = json::parse(cfg.to_json());
  if (!p.config_path.empty()) man.inputs.push_back(p.config_path);
  man.outputs = {p.out, lexicon_path, truth_path};

  json summary;
  summary["users"] = result.corpus.users.size();
  summary["articles"] = result.corpus.articles.size();
  summary["interactions"] = result.corpus.interaction_count();
  summary["realized_target"] = {{"only_news", result.realized_target.only_news},
                                {"news_and_history", result.realized_target.news_and_history},
                                {"only_history", result.realized_target.only_history},
                                {"neither", result.realized_target.neither}};
  if (p.json)
    std::cout << summary.dump(2) + "\n";
  else
    std::cerr << "wrote " << p.out << " (" << result.corpus.users.size() << " users, "
              << result.corpus.articles.size() << " articles)\n";
  man.write(manifest_path(p.manifest, p.out, false, "gen-corpus"));
  return 0;
}

struct OverlapParams {
  std::string corpus, lexicon, out, manifest;
  std::uint64_t seed = 1;
  bool json = false;
};

int run_analyze_overlap(OverlapParams& p) {
  Manifest man;
  man.command = "analyze-overlap";
  man.seed = p.seed;
  auto bundle = load_bundle(p.corpus, p.lexicon);
  OverlapDistribution d = entity_overlap_report(bundle.corpus, bundle.lexicon);
  json j;
  j["only_news"] = d.only_news;
  j["news_and_history"] = d.news_and_history;
  j["only_history"] = d.only_history;
  j["neither"] = d.neither;
  man.inputs = {p.corpus};
  man.config = json::object();
  std::string text = j.dump(2) + "\n";
  emit(text, p.json, p.out, man.outputs);
  if (!p.json && p.out.empty()) std::cerr << text;
  man.write(manifest_path(p.manifest, p.out, false, "analyze-overlap"));
  return 0;
}

struct PretrainParams {
  std::string corpus, lexicon, out = "pretrain_ckpt", manifest;
  std::uint64_t seed = 1;
  int vocab_size = 10000;
  bool json = false;
  ModelFlags model;
  TrainFlags train;
};

int run_pretrain(PretrainParams& p) {
  Manifest man;
  man.command = "pretrain";
  man.seed = p.seed;
  auto bundle = load_bundle(p.corpus, p.lexicon);
  Vocabulary vocab = build_vocab(bundle.corpus, p.vocab_size);
  apply_vocab(bundle.corpus, vocab);
  ModelConfig mc = p.model.resolve();
  mc.vocab_size = vocab.size();
  TrainConfig cfg = p.train.resolve();
  cfg.seed = p.seed;
  if (cfg.metrics_path.empty()) cfg.metrics_path = p.out + "/metrics.jsonl";
  cfg.validate();

  PretrainResult result =
      pretrain_disentangler(bundle.corpus, vocab, bundle.lexicon, mc.topic_config(), cfg);
  fs::create_directories(p.out);
  result.model.save_checkpoint(p.out + "/disentangler.bin", p.out + "/config.json",
                               vocab.content_hash());
  write_file_atomic(p.out + "/vocab.json", vocab.to_json());

  man.inputs = {p.corpus};
  man.config = json::parse(cfg.to_json());
  man.config["model"] = json::parse(mc.to_json(vocab.content_hash()));
  man.outputs = {p.out + "/disentangler.bin", p.out + "/config.json", p.out + "/vocab.json",
                 cfg.metrics_path};
  man.checkpoint_hash = result.model.params().content_hash();

  json summary;
  summary["epochs"] = result.epoch_loss.size();
  summary["final_elbo"] = result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back();
  summary["checkpoint"] = p.out;
  if (p.json)
    std::cout << summary.dump(2) + "\n";
  else
    std::cerr << "pretrained disentangler -> " << p.out << "\n";
  man.write(manifest_path(p.manifest, p.out, true, "pretrain"));
  return 0;
}

struct TrainParams {
  std::string corpus, lexicon, out = "ckpt", manifest, disentangler, ablation = "full";
  std::uint64_t seed = 1;
  int vocab_size = 10000;
  int pretrain_epochs = 50;
  bool json = false;
  ModelFlags model;
  TrainFlags train;
};

int run_train(TrainParams& p) {
  Manifest man;
  man.command = "train";
  man.seed = p.seed;
  auto bundle = load_bundle(p.corpus, p.lexicon);
  TrainConfig cfg = p.train.resolve();
  cfg.seed = p.seed;
  cfg.ablation = ablation_from_name(p.ablation);
  cfg.checkpoint_dir = p.out;
  if (cfg.metrics_path.empty()) cfg.metrics_path = p.out + "/metrics.jsonl";
  cfg.validate();

  ModelConfig mc = p.model.resolve();
  mc.no_im = cfg.ablation == Ablation::kNoIm;
  mc.no_ov = cfg.ablation == Ablation::kNoOv;

  Vocabulary vocab;
  TopicModel topics;
  if (!p.disentangler.empty()) {
    vocab = Vocabulary::from_json(read_file(p.disentangler + "/vocab.json"));
    apply_vocab(bundle.corpus, vocab);
    topics = TopicModel::from_checkpoint(p.disentangler + "/disentangler.bin",
                                         p.disentangler + "/config.json", vocab.content_hash());
    man.inputs.push_back(p.disentangler);
  } else {
    vocab = build_vocab(bundle.corpus, p.vocab_size);
    apply_vocab(bundle.corpus, vocab);
    TrainConfig pre_cfg = cfg;
    pre_cfg.epochs = p.pretrain_epochs;
    pre_cfg.metrics_path = p.out + "/pretrain_metrics.jsonl";
    mc.vocab_size = vocab.size();
    topics = pretrain_disentangler(bundle.corpus, vocab, bundle.lexicon, mc.topic_config(),
                                   pre_cfg)
                 .model;
  }
  // The disentangler fixes the topic geometry; keep the model config honest.
  mc.vocab_size = vocab.size();
  mc.k_a = topics.config().k_a;
  mc.k_s = topics.config().k_s;
  mc.topic_d = topics.config().d;
  mc.topic_enc_hidden = topics.config().enc_hidden;

  Rng rng(cfg.seed);
  AttributorModel model(mc, std::move(topics), rng);
  JointResult result = train_joint(model, bundle.corpus, vocab, bundle.lexicon, cfg);

  write_file_atomic(p.out + "/train_config.json", cfg.to_json());
  man.inputs.push_back(p.corpus);
  man.config = json::parse(cfg.to_json());
  man.config["model"] = json::parse(mc.to_json(vocab.content_hash()));
  man.outputs = {p.out + "/config.json", p.out + "/disentangler.bin", p.out + "/main.bin",
                 p.out + "/vocab.json", cfg.metrics_path, p.out + "/train_config.json"};
  man.checkpoint_hash = model_content_hash(load_checkpoint(p.out).model);

  json summary;
  summary["best_epoch"] = result.best_epoch;
  summary["best_val_ce"] = result.best_val_ce;
  summary["checkpoint"] = p.out;
  if (p.json)
    std::cout << summary.dump(2) + "\n";
  else
    std::cerr << "trained model -> " << p.out << " (best val ce " << result.best_val_ce << ")\n";
  man.write(manifest_path(p.manifest, p.out, true, "train"));
  return 0;
}

struct GenerateParams {
  std::string checkpoint, corpus, lexicon, user, news, mode = "greedy", out, manifest;
  std::uint64_t seed = 1;
  int t = -1, max_len = 30, width = 4;
  bool json = false;
};

int run_generate(GenerateParams& p) {
  Manifest man;
  man.command = "generate";
  man.seed = p.seed;
  auto ckpt = load_checkpoint(p.checkpoint);
  auto bundle = load_bundle(p.corpus, p.lexicon);
  apply_vocab(bundle.corpus, ckpt.vocab);
  const UserHistory& user = find_user(bundle.corpus, p.user);
  TopicSequences seqs = featurize_user(ckpt.model.topics(), user, ckpt.vocab, bundle.lexicon);

  DecodeMode mode = DecodeMode::greedy();
  if (p.mode == "sample")
    mode = DecodeMode::sample(p.seed);
  else if (p.mode == "beam")
    mode = DecodeMode::beam(p.width);
  else if (p.mode != "greedy")
    throw std::runtime_error("unknown decode mode: " + p.mode);

  std::size_t history_len;
  const NewsArticle* article;
  if (!p.news.empty()) {
    article = &bundle.corpus.article(p.news);
    history_len = seqs.size();
  } else {
    int t = p.t >= 0 ? p.t : static_cast<int>(seqs.size()) - 1;
    if (t < 1 || t >= static_cast<int>(seqs.size()))
      throw std::runtime_error("history required");
    history_len = static_cast<std::size_t>(t);
    article = &bundle.corpus.article(
        user.interactions[static_cast<std::size_t>(t)].news_id);
  }
  auto inf = ckpt.model.infer(seqs, history_len, *article, p.max_len, mode);
  std::string payload = trace_json(inf, ckpt.vocab);
  if (payload.empty() || payload.back() != '\n') payload += '\n';

  man.inputs = {p.checkpoint, p.corpus};
  man.checkpoint_hash = model_content_hash(ckpt.model);
  man.config = {{"user", p.user},       {"news", article->id}, {"mode", p.mode},
                {"max_len", p.max_len}, {"width", p.width},    {"history_len", history_len}};
  emit(payload, p.json, p.out, man.outputs);
  if (!p.json) {
    auto j = json::parse(payload);
    std::cout << j.at("text").get<std::string>() << "\n";
  }
  man.write(manifest_path(p.manifest, p.out, false, "generate"));
  return 0;
}

struct EvaluateParams {
  std::string checkpoint, corpus, lexicon, split = "test", out, manifest;
  std::uint64_t seed = 1;
  Real val_fraction = 0.1, test_fraction = 0.1;
  int max_len = 30;
  bool json = false;
};

int run_evaluate(EvaluateParams& p) {
  Manifest man;
  man.command = "evaluate";
  man.seed = p.seed;
  auto ckpt = load_checkpoint(p.checkpoint);
  auto bundle = load_bundle(p.corpus, p.lexicon);
  apply_vocab(bundle.corpus, ckpt.vocab);
  DataSplit split = split_corpus(bundle.corpus, p.val_fraction, p.test_fraction);
  const std::vector<TrainExample>* chosen = &split.test;
  if (p.split == "train")
    chosen = &split.train;
  else if (p.split == "val")
    chosen = &split.val;
  else if (p.split != "test")
    throw std::runtime_error("unknown split: " + p.split);

  MetricReport report =
      evaluate_model(ckpt.model, bundle.corpus, ckpt.vocab, bundle.lexicon, *chosen, p.max_len);
  std::string text = report_json(report, model_content_hash(ckpt.model));

  man.inputs = {p.checkpoint, p.corpus};
  man.checkpoint_hash = model_content_hash(ckpt.model);
  man.config = {{"split", p.split},
                {"max_len", p.max_len},
                {"val_fraction", p.val_fraction},
                {"test_fraction", p.test_fraction}};
  emit(text, p.json, p.out, man.outputs);
  if (!p.json && p.out.empty()) std::cerr << text;
  man.write(manifest_path(p.manifest, p.out, false, "evaluate"));
  return 0;
}

struct ForecastParams {
  std::string checkpoint, corpus, lexicon, news, out, manifest;
  std::uint64_t seed = 1;
  int users = 0, max_len = 30, top_keywords = 10;
  std::vector<std::string> stopwords;
  bool json = false;
};

int run_forecast(ForecastParams& p) {
  Manifest man;
  man.command = "forecast";
  man.seed = p.seed;
  auto ckpt = load_checkpoint(p.checkpoint);
  auto bundle = load_bundle(p.corpus, p.lexicon);
  apply_vocab(bundle.corpus, ckpt.vocab);
  const NewsArticle& article = bundle.corpus.article(p.news);
  auto pool = sample_users(bundle.corpus, p.users, p.seed);

  ForecastOptions opts;
  opts.max_len = p.max_len;
  opts.top_keywords = p.top_keywords;
  opts.stopwords.insert(p.stopwords.begin(), p.stopwords.end());
  ForecastReport report = forecast(ckpt.model, article, pool, ckpt.vocab, bundle.lexicon, opts);
  std::string text = forecast_json(report, ckpt.vocab);

  man.inputs = {p.checkpoint, p.corpus};
  man.checkpoint_hash = model_content_hash(ckpt.model);
  man.config = {{"news", p.news}, {"users", p.users}, {"max_len", p.max_len}};
  emit(text, p.json, p.out, man.outputs);
  if (!p.json && p.out.empty()) std::cerr << text;
  man.write(manifest_path(p.manifest, p.out, false, "forecast"));
  return 0;
}

struct SummarizeParams {
  std::string checkpoint, corpus, lexicon, news, strategy = "standard", out, manifest;
  std::uint64_t seed = 1;
  int users = 0, k = 3, reps = 10, voters = 5, max_len = 30;
  std::vector<Real> alphas;
  bool json = false;
};

SummarizeOptions build_summarize_options(const SummarizeParams& p) {
  SummarizeOptions opts;
  opts.k = p.k;
  opts.strategy = strategy_from_name(p.strategy);
  if (!p.alphas.empty()) {
    opts.alphas = Vec(static_cast<Eigen::Index>(p.alphas.size()));
    for (std::size_t i = 0; i < p.alphas.size(); ++i)
      opts.alphas(static_cast<Eigen::Index>(i)) = p.alphas[i];
  }
  opts.single_user_reps = p.reps;
  opts.multi_user_voters = p.voters;
  opts.seed = p.seed;
  opts.max_len = p.max_len;
  return opts;
}

int run_summarize(SummarizeParams& p) {
  Manifest man;
  man.command = "summarize";
  man.seed = p.seed;
  auto ckpt = load_checkpoint(p.checkpoint);
  auto bundle = load_bundle(p.corpus, p.lexicon);
  apply_vocab(bundle.corpus, ckpt.vocab);
  const NewsArticle& article = bundle.corpus.article(p.news);
  auto pool = sample_users(bundle.corpus, p.users, p.seed);
  SummarizeOptions opts = build_summarize_options(p);

  SummaryResult res = summarize(ckpt.model, article, pool, ckpt.vocab, bundle.lexicon, opts);
  json j;
  j["news"] = article.id;
  j["strategy"] = strategy_name(res.strategy);
  j["k"] = static_cast<int>(res.indices.size());
  j["indices"] = res.indices;
  std::vector<Real> scores(res.scores.data(), res.scores.data() + res.scores.size());
  j["scores"] = scores;
  j["converged"] = res.converged;
  auto& sentences = j["sentences"] = json::array();
  for (int idx : res.indices) {
    const auto& words = article.body.at(static_cast<std::size_t>(idx)).words;
    std::string s;
    for (const auto& w : words) {
      if (!s.empty()) s += ' ';
      s += w;
    }
    sentences.push_back(s);
  }
  std::string text = j.dump(2) + "\n";

  man.inputs = {p.checkpoint, p.corpus};
  man.checkpoint_hash = model_content_hash(ckpt.model);
  man.config = {{"news", p.news},     {"strategy", p.strategy}, {"k", p.k},
                {"users", p.users},   {"reps", p.reps},         {"voters", p.voters},
                {"max_len", p.max_len}};
  emit(text, p.json, p.out, man.outputs);
  if (!p.json && p.out.empty()) std::cerr << text;
  man.write(manifest_path(p.manifest, p.out, false, "summarize"));
  return 0;
}

struct EvalSummariesParams {
  std::string checkpoint, corpus, lexicon, out, manifest;
  std::uint64_t seed = 1;
  int articles = 0, users = 0, reps = 10, voters = 5, max_len = 30;
  std::vector<std::string> strategies;
  std::vector<int> k_range = {1, 2, 3};
  std::vector<Real> alphas;
  bool json = false;
};

int run_eval_summaries(EvalSummariesParams& p) {
  Manifest man;
  man.command = "eval-summaries";
  man.seed = p.seed;
  auto ckpt = load_checkpoint(p.checkpoint);
  auto bundle = load_bundle(p.corpus, p.lexicon);
  apply_vocab(bundle.corpus, ckpt.vocab);

  std::vector<const NewsArticle*> articles;
  std::size_t n_articles = p.articles > 0
                               ? std::min<std::size_t>(static_cast<std::size_t>(p.articles),
                                                       bundle.corpus.articles.size())
                               : bundle.corpus.articles.size();
  for (std::size_t i = 0; i < n_articles; ++i) articles.push_back(&bundle.corpus.articles[i]);
  auto pool = sample_users(bundle.corpus, p.users, p.seed);

  SummarizeOptions base;
  base.single_user_reps = p.reps;
  base.multi_user_voters = p.voters;
  base.seed = p.seed;
  base.max_len = p.max_len;
  if (!p.alphas.empty()) {
    base.alphas = Vec(static_cast<Eigen::Index>(p.alphas.size()));
    for (std::size_t i = 0; i < p.alphas.size(); ++i)
      base.alphas(static_cast<Eigen::Index>(i)) = p.alphas[i];
  }
  auto points = evaluate_summaries(ckpt.model, articles, pool, ckpt.vocab, bundle.lexicon,
                                   parse_strategies(p.strategies), p.k_range, base);
  std::string text = summary_eval_jsonl(points);

  man.inputs = {p.checkpoint, p.corpus};
  man.checkpoint_hash = model_content_hash(ckpt.model);
  man.config = {{"articles", p.articles}, {"users", p.users},   {"reps", p.reps},
                {"voters", p.voters},     {"max_len", p.max_len}};
  emit(text, p.json, p.out, man.outputs);
  if (!p.json && p.out.empty()) std::cerr << text;
  man.write(manifest_path(p.manifest, p.out, false, "eval-summaries"));
  return 0;
}

struct TopicsParams {
  std::string checkpoint, out, manifest;
  std::uint64_t seed = 1;
  int top = 10;
  bool json = false;
};

int run_topics(TopicsParams& p) {
  Manifest man;
  man.command = "topics";
  man.seed = p.seed;
  Vocabulary vocab = Vocabulary::from_json(read_file(p.checkpoint + "/vocab.json"));
  TopicModel topics;
  if (fs::exists(p.checkpoint + "/main.bin")) {
    auto ckpt = load_checkpoint(p.checkpoint);
    topics = ckpt.model.topics();
    vocab = std::move(ckpt.vocab);
  } else {
    topics = TopicModel::from_checkpoint(p.checkpoint + "/disentangler.bin",
                                         p.checkpoint + "/config.json", vocab.content_hash());
  }
  json j;
  auto dump_branch = [&](Branch b, const char* key) {
    auto& arr = j[key] = json::array();
    for (int topic = 0; topic < topics.config().latent(b); ++topic)
      arr.push_back(topics.topic_top_words(vocab, b, topic, p.top));
  };
  dump_branch(Branch::kAspect, "aspect");
  dump_branch(Branch::kOpinion, "opinion");
  std::string text = j.dump(2) + "\n";

  man.inputs = {p.checkpoint};
  man.checkpoint_hash = topics.params().content_hash();
  man.config = {{"top", p.top}};
  emit(text, p.json, p.out, man.outputs);
  if (!p.json && p.out.empty()) std::cerr << text;
  man.write(manifest_path(p.manifest, p.out, false, "topics"));
  return 0;
}

void add_common(CLI::App* cmd, std::string& out, std::string& manifest, std::uint64_t& seed,
                bool& as_json) {
  cmd->add_option("--out", out, "output path");
  cmd->add_option("--manifest", manifest, "manifest path override");
  cmd->add_option("--seed", seed, "random seed");
  cmd->add_flag("--json", as_json, "machine-readable stdout");
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"behavior attribution for news comments: corpus, training, and applications"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  GenParams gen;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "generate a synthetic corpus");
  gen_cmd->add_option("--config", gen.config_path, "generator config JSON");
  add_common(gen_cmd, gen.out, gen.manifest, gen.seed, gen.json);
  auto* o_nu = gen_cmd->add_option("--n-users", gen.n_users, "user count");
  auto* o_hl = gen_cmd->add_option("--history-len", gen.history_len, "interactions per user");
  auto* o_ec = gen_cmd->add_option("--entity-clusters", gen.entity_clusters, "aspect clusters");
  auto* o_epc =
      gen_cmd->add_option("--entities-per-cluster", gen.entities_per_cluster, "cluster size");
  auto* o_re = gen_cmd->add_option("--reserve-entities", gen.reserve_entities, "fresh entities");
  auto* o_og = gen_cmd->add_option("--opinion-groups", gen.opinion_groups, "opinion groups");
  auto* o_opg =
      gen_cmd->add_option("--opinions-per-group", gen.opinions_per_group, "group size");
  auto* o_fw = gen_cmd->add_option("--filler-words", gen.filler_words, "filler vocabulary");
  auto* o_tf = gen_cmd->add_option("--theme-fillers", gen.theme_fillers, "distractor vocabulary");
  auto* o_cec = gen_cmd->add_option("--comment-entity-count", gen.comment_entity_count,
                                    "entities per comment");
  auto* o_coc = gen_cmd->add_option("--comment-opinion-count", gen.comment_opinion_count,
                                    "opinion words per comment");
  auto* o_cfc = gen_cmd->add_option("--comment-filler-count", gen.comment_filler_count,
                                    "fillers per comment");
  auto* o_tec = gen_cmd->add_option("--title-entity-count", gen.title_entity_count,
                                    "lead key entities repeated in the title");
  auto* o_tfc =
      gen_cmd->add_option("--title-filler-count", gen.title_filler_count, "fillers per title");
  auto* o_ds = gen_cmd->add_option("--distractor-sentences", gen.distractor_sentences,
                                   "distractors per article");
  auto* o_dl = gen_cmd->add_option("--distractor-len", gen.distractor_len, "distractor length");
  auto* o_ocp =
      gen_cmd->add_option("--own-cluster-prob", gen.own_cluster_prob, "own-cluster probability");

  OverlapParams overlap;
  auto* overlap_cmd =
      app.add_subcommand("analyze-overlap", "report entity-overlap buckets of a corpus");
  overlap_cmd->add_option("--corpus", overlap.corpus, "corpus JSONL")->required();
  overlap_cmd->add_option("--lexicon", overlap.lexicon, "lexicon JSON");
  add_common(overlap_cmd, overlap.out, overlap.manifest, overlap.seed, overlap.json);

  PretrainParams pre;
  auto* pre_cmd = app.add_subcommand("pretrain", "pretrain the comment disentangler");
  pre_cmd->add_option("--corpus", pre.corpus, "corpus JSONL")->required();
  pre_cmd->add_option("--lexicon", pre.lexicon, "lexicon JSON");
  pre_cmd->add_option("--vocab-size", pre.vocab_size, "vocabulary cap");
  add_common(pre_cmd, pre.out, pre.manifest, pre.seed, pre.json);
  pre.model.wire(pre_cmd);
  pre.train.wire(pre_cmd);

  TrainParams tr;
  auto* tr_cmd = app.add_subcommand("train", "joint training on a pretrained disentangler");
  tr_cmd->add_option("--corpus", tr.corpus, "corpus JSONL")->required();
  tr_cmd->add_option("--lexicon", tr.lexicon, "lexicon JSON");
  tr_cmd->add_option("--disentangler", tr.disentangler, "pretrained disentangler dir");
  tr_cmd->add_option("--ablation", tr.ablation, "full | no_im | no_ov");
  tr_cmd->add_option("--vocab-size", tr.vocab_size, "vocabulary cap");
  tr_cmd->add_option("--pretrain-epochs", tr.pretrain_epochs,
                     "epochs for the built-in pretraining phase");
  add_common(tr_cmd, tr.out, tr.manifest, tr.seed, tr.json);
  tr.model.wire(tr_cmd);
  tr.train.wire(tr_cmd);

  GenerateParams ge;
  auto* ge_cmd = app.add_subcommand("generate", "generate a comment for a user");
  ge_cmd->add_option("--checkpoint", ge.checkpoint, "model checkpoint dir")->required();
  ge_cmd->add_option("--corpus", ge.corpus, "corpus JSONL")->required();
  ge_cmd->add_option("--lexicon", ge.lexicon, "lexicon JSON");
  ge_cmd->add_option("--user", ge.user, "user id")->required();
  ge_cmd->add_option("--t", ge.t, "target interaction index (default: last)");
  ge_cmd->add_option("--news", ge.news, "generate for this article with full history");
  ge_cmd->add_option("--mode", ge.mode, "greedy | sample | beam");
  ge_cmd->add_option("--width", ge.width, "beam width");
  ge_cmd->add_option("--max-len", ge.max_len, "generation cap");
  add_common(ge_cmd, ge.out, ge.manifest, ge.seed, ge.json);

  EvaluateParams ev;
  auto* ev_cmd = app.add_subcommand("evaluate", "reference metrics on a held-out split");
  ev_cmd->add_option("--checkpoint", ev.checkpoint, "model checkpoint dir")->required();
  ev_cmd->add_option("--corpus", ev.corpus, "corpus JSONL")->required();
  ev_cmd->add_option("--lexicon", ev.lexicon, "lexicon JSON");
  ev_cmd->add_option("--split", ev.split, "train | val | test");
  ev_cmd->add_option("--val-fraction", ev.val_fraction, "validation share");
  ev_cmd->add_option("--test-fraction", ev.test_fraction, "test share");
  ev_cmd->add_option("--max-len", ev.max_len, "generation cap");
  add_common(ev_cmd, ev.out, ev.manifest, ev.seed, ev.json);

  ForecastParams fc;
  auto* fc_cmd = app.add_subcommand("forecast", "population aspect/opinion forecast");
  fc_cmd->add_option("--checkpoint", fc.checkpoint, "model checkpoint dir")->required();
  fc_cmd->add_option("--corpus", fc.corpus, "corpus JSONL")->required();
  fc_cmd->add_option("--lexicon", fc.lexicon, "lexicon JSON");
  fc_cmd->add_option("--news", fc.news, "article id")->required();
  fc_cmd->add_option("--users", fc.users, "reader sample size (0 = all)");
  fc_cmd->add_option("--max-len", fc.max_len, "generation cap");
  fc_cmd->add_option("--top-keywords", fc.top_keywords, "keywords to report");
  fc_cmd->add_option("--stopwords", fc.stopwords, "tokens excluded from keywords")
      ->delimiter(',');
  add_common(fc_cmd, fc.out, fc.manifest, fc.seed, fc.json);

  SummarizeParams su;
  auto* su_cmd = app.add_subcommand("summarize", "reader-aware extractive summary");
  su_cmd->add_option("--checkpoint", su.checkpoint, "model checkpoint dir")->required();
  su_cmd->add_option("--corpus", su.corpus, "corpus JSONL")->required();
  su_cmd->add_option("--lexicon", su.lexicon, "lexicon JSON");
  su_cmd->add_option("--news", su.news, "article id")->required();
  su_cmd->add_option("--users", su.users, "reader pool size (0 = all)");
  su_cmd->add_option("--k", su.k, "summary sentence count");
  su_cmd->add_option("--strategy", su.strategy, "standard | single_user | multi_user");
  su_cmd->add_option("--alphas", su.alphas, "blend coefficients")->delimiter(',')->expected(3);
  su_cmd->add_option("--reps", su.reps, "single-user repetitions");
  su_cmd->add_option("--voters", su.voters, "multi-user committee size");
  su_cmd->add_option("--max-len", su.max_len, "generation cap");
  add_common(su_cmd, su.out, su.manifest, su.seed, su.json);

  EvalSummariesParams es;
  auto* es_cmd = app.add_subcommand("eval-summaries", "ROUGE-vs-title curves per strategy");
  es_cmd->add_option("--checkpoint", es.checkpoint, "model checkpoint dir")->required();
  es_cmd->add_option("--corpus", es.corpus, "corpus JSONL")->required();
  es_cmd->add_option("--lexicon", es.lexicon, "lexicon JSON");
  es_cmd->add_option("--articles", es.articles, "article cap (0 = all)");
  es_cmd->add_option("--users", es.users, "reader pool size (0 = all)");
  es_cmd->add_option("--strategies", es.strategies, "strategy list")->delimiter(',');
  es_cmd->add_option("--k-range", es.k_range, "summary lengths")->delimiter(',');
  es_cmd->add_option("--alphas", es.alphas, "blend coefficients")->delimiter(',')->expected(3);
  es_cmd->add_option("--reps", es.reps, "single-user repetitions");
  es_cmd->add_option("--voters", es.voters, "multi-user committee size");
  es_cmd->add_option("--max-len", es.max_len, "generation cap");
  add_common(es_cmd, es.out, es.manifest, es.seed, es.json);

  TopicsParams tp;
  auto* tp_cmd = app.add_subcommand("topics", "dump top words per topic");
  tp_cmd->add_option("--checkpoint", tp.checkpoint, "model or disentangler checkpoint dir")
      ->required();
  tp_cmd->add_option("--top", tp.top, "words per topic");
  add_common(tp_cmd, tp.out, tp.manifest, tp.seed, tp.json);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (app.got_subcommand(gen_cmd)) {
      if (!gen.config_path.empty())
        gen.cfg = GeneratorConfig::from_json(read_file(gen.config_path));
      if (o_nu->count()) gen.cfg.n_users = gen.n_users;
      if (o_hl->count()) gen.cfg.history_len = gen.history_len;
      if (o_ec->count()) gen.cfg.entity_clusters = gen.entity_clusters;
      if (o_epc->count()) gen.cfg.entities_per_cluster = gen.entities_per_cluster;
      if (o_re->count()) gen.cfg.reserve_entities = gen.reserve_entities;
      if (o_og->count()) gen.cfg.opinion_groups = gen.opinion_groups;
      if (o_opg->count()) gen.cfg.opinions_per_group = gen.opinions_per_group;
      if (o_fw->count()) gen.cfg.filler_words = gen.filler_words;
      if (o_tf->count()) gen.cfg.theme_fillers = gen.theme_fillers;
      if (o_cec->count()) gen.cfg.comment_entity_count = gen.comment_entity_count;
      if (o_coc->count()) gen.cfg.comment_opinion_count = gen.comment_opinion_count;
      if (o_cfc->count()) gen.cfg.comment_filler_count = gen.comment_filler_count;
      if (o_tec->count()) gen.cfg.title_entity_count = gen.title_entity_count;
      if (o_tfc->count()) gen.cfg.title_filler_count = gen.title_filler_count;
      if (o_ds->count()) gen.cfg.distractor_sentences = gen.distractor_sentences;
      if (o_dl->count()) gen.cfg.distractor_len = gen.distractor_len;
      if (o_ocp->count()) gen.cfg.own_cluster_prob = gen.own_cluster_prob;
      return run_gen_corpus(gen);
    }
    if (app.got_subcommand(overlap_cmd)) return run_analyze_overlap(overlap);
    if (app.got_subcommand(pre_cmd)) return run_pretrain(pre);
    if (app.got_subcommand(tr_cmd)) return run_train(tr);
    if (app.got_subcommand(ge_cmd)) return run_generate(ge);
    if (app.got_subcommand(ev_cmd)) return run_evaluate(ev);
    if (app.got_subcommand(fc_cmd)) return run_forecast(fc);
    if (app.got_subcommand(su_cmd)) return run_summarize(su);
    if (app.got_subcommand(es_cmd)) return run_eval_summaries(es);
    if (app.got_subcommand(tp_cmd)) return run_topics(tp);
  } catch (const std::exception& e) {
    std::cerr << "[dsattr] error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace dsattr

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsattr/cli.hpp"

namespace fs = std::filesystem;

namespace {

int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> store;
  store.emplace_back("dsattr");
  store.insert(store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  argv.reserve(store.size());
  for (const auto& s : store) argv.push_back(s.c_str());
  return dsattr::cli_main(static_cast<int>(argv.size()), argv.data());
}

std::string capture_stdout(const std::function<void()>& fn) {
  std::ostringstream ss;
  auto* old = std::cout.rdbuf(ss.rdbuf());
  fn();
  std::cout.rdbuf(old);
  return ss.str();
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("dsattr_cli_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

// One tiny end-to-end workspace shared by the pipeline cases.
struct Workspace {
  TempDir dir;
  std::string corpus, pre, ckpt;

  Workspace() {
    corpus = dir.file("corpus.jsonl");
    pre = dir.file("pre");
    ckpt = dir.file("ckpt");
    REQUIRE(run_cli({"gen-corpus", "--n-users", "6", "--history-len", "5",
                     "--distractor-sentences", "3", "--distractor-len", "5", "--seed", "7",
                     "--out", corpus}) == 0);
    REQUIRE(run_cli({"pretrain", "--corpus", corpus, "--out", pre, "--seed", "3", "--epochs",
                     "2", "--batch-size", "8", "--vocab-size", "400", "--topic-d", "6", "--k-a",
                     "3", "--k-s", "2", "--topic-enc-hidden", "5", "--quiet"}) == 0);
    REQUIRE(run_cli({"train",          "--corpus",     corpus, "--disentangler",
                     pre,              "--out",        ckpt,   "--seed",
                     "3",              "--epochs",     "1",    "--batch-size",
                     "8",              "--quiet",      "--pf-dim", "4",
                     "--history-layers", "1",          "--emb-dim", "5",
                     "--enc-hidden",   "3",            "--enc-layers", "1",
                     "--att-hidden",   "4",            "--dec-hidden", "7",
                     "--dec-layers",   "1"}) == 0);
  }
};

}  // namespace

TEST_CASE("usage errors exit 1 and runtime failures exit 2") {
  CHECK(run_cli({}) == 1);
  CHECK(run_cli({"gen-corpus", "--no-such-flag"}) == 1);
  CHECK(run_cli({"no-such-command"}) == 1);
  TempDir dir;
  CHECK(run_cli({"analyze-overlap", "--corpus", dir.file("missing.jsonl")}) == 2);
  CHECK(run_cli({"topics", "--checkpoint", dir.file("missing_ckpt")}) == 2);
}

TEST_CASE("gen-corpus writes corpus, sidecars, and a manifest") {
  TempDir dir;
  std::string out = dir.file("c.jsonl");
  CHECK(run_cli({"gen-corpus", "--n-users", "4", "--history-len", "4", "--seed", "11", "--out",
                 out}) == 0);
  CHECK(fs::exists(out));
  CHECK(fs::exists(out + ".lexicon.json"));
  CHECK(fs::exists(out + ".truth.json"));
  auto man = nlohmann::json::parse(slurp(out + ".manifest.json"));
  CHECK(man.at("command").get<std::string>() == "gen-corpus");
  CHECK(man.at("seed").get<std::uint64_t>() == 11);
  CHECK(man.at("config").at("n_users").get<int>() == 4);
  CHECK(man.at("outputs").size() == 3);
  CHECK(man.contains("wall_clock_ms"));

  // Same seed, different path: byte-identical corpus.
  std::string out2 = dir.file("c2.jsonl");
  CHECK(run_cli({"gen-corpus", "--n-users", "4", "--history-len", "4", "--seed", "11", "--out",
                 out2}) == 0);
  CHECK(slurp(out) == slurp(out2));
  // Different seed: different corpus.
  std::string out3 = dir.file("c3.jsonl");
  CHECK(run_cli({"gen-corpus", "--n-users", "4", "--history-len", "4", "--seed", "12", "--out",
                 out3}) == 0);
  CHECK(slurp(out) != slurp(out3));
}

TEST_CASE("config file plus flag overrides, flags win") {
  TempDir dir;
  std::string cfg_path = dir.file("gen.json");
  {
    std::ofstream cfg(cfg_path);
    cfg << R"({"n_users": 3, "history_len": 4, "distractor_sentences": 2})";
  }
  std::string out = dir.file("c.jsonl");
  CHECK(run_cli({"gen-corpus", "--config", cfg_path, "--n-users", "5", "--seed", "2", "--out",
                 out}) == 0);
  auto man = nlohmann::json::parse(slurp(out + ".manifest.json"));
  CHECK(man.at("config").at("n_users").get<int>() == 5);        // flag wins
  CHECK(man.at("config").at("history_len").get<int>() == 4);    // file survives
  CHECK(man.at("config").at("distractor_sentences").get<int>() == 2);
}

TEST_CASE("pipeline subcommands produce deterministic json") {
  Workspace ws;
  CHECK(fs::exists(ws.ckpt + "/main.bin"));
  CHECK(fs::exists(ws.ckpt + "/disentangler.bin"));
  CHECK(fs::exists(ws.ckpt + "/vocab.json"));
  CHECK(fs::exists(ws.ckpt + "/manifest.json"));

  auto run_json = [&](const std::vector<std::string>& args) {
    int rc = -1;
    std::string text = capture_stdout([&] { rc = run_cli(args); });
    CHECK(rc == 0);
    return text;
  };

  std::vector<std::string> overlap = {"analyze-overlap", "--corpus", ws.corpus, "--json"};
  CHECK(run_json(overlap) == run_json(overlap));

  std::vector<std::string> gen = {"generate", "--checkpoint", ws.ckpt,   "--corpus", ws.corpus,
                                  "--user",   "u1",           "--max-len", "6",      "--json"};
  std::string g1 = run_json(gen);
  CHECK(g1 == run_json(gen));
  auto trace = nlohmann::json::parse(g1);
  CHECK(trace.contains("text"));
  CHECK(trace.contains("g"));

  std::vector<std::string> ev = {"evaluate", "--checkpoint", ws.ckpt,    "--corpus", ws.corpus,
                                 "--split",  "test",         "--max-len", "6",       "--json"};
  std::string e1 = run_json(ev);
  CHECK(e1 == run_json(ev));
  auto report = nlohmann::json::parse(e1);
  CHECK(report.at("n_examples").get<int>() > 0);

  // The article of u0's second interaction exists in the corpus.
  auto corpus_line = slurp(ws.corpus);
  std::string news_id = "n0_1";
  std::vector<std::string> fc = {"forecast", "--checkpoint", ws.ckpt, "--corpus",  ws.corpus,
                                 "--news",   news_id,        "--users", "3",       "--max-len",
                                 "5",        "--seed",       "9",     "--json"};
  std::string f1 = run_json(fc);
  CHECK(f1 == run_json(fc));
  auto fj = nlohmann::json::parse(f1);
  CHECK(fj.at("users").size() == 3);

  std::vector<std::string> su = {"summarize", "--checkpoint", ws.ckpt, "--corpus", ws.corpus,
                                 "--news",    news_id,        "--k",   "2",        "--strategy",
                                 "multi_user", "--voters",    "2",     "--max-len", "5",
                                 "--seed",    "9",            "--json"};
  std::string s1 = run_json(su);
  CHECK(s1 == run_json(su));
  auto sj = nlohmann::json::parse(s1);
  CHECK(sj.at("indices").size() == 2);

  std::vector<std::string> es = {"eval-summaries", "--checkpoint", ws.ckpt,   "--corpus",
                                 ws.corpus,        "--articles",   "2",       "--users",
                                 "3",              "--k-range",    "1,2",     "--strategies",
                                 "standard,multi_user", "--voters", "2",      "--reps",
                                 "2",              "--max-len",    "5",       "--seed",
                                 "9",              "--json"};
  std::string es1 = run_json(es);
  CHECK(es1 == run_json(es));

  std::vector<std::string> tp = {"topics", "--checkpoint", ws.ckpt, "--top", "3", "--json"};
  std::string t1 = run_json(tp);
  CHECK(t1 == run_json(tp));
  auto tj = nlohmann::json::parse(t1);
  CHECK(tj.at("aspect").size() == 3);
  CHECK(tj.at("opinion").size() == 2);

  // Another seed still samples a full pool deterministically.
  std::vector<std::string> fc2 = {"forecast", "--checkpoint", ws.ckpt, "--corpus", ws.corpus,
                                  "--news",   news_id,        "--users", "3",      "--max-len",
                                  "5",        "--seed",       "10",    "--json"};
  std::string f2 = run_json(fc2);
  CHECK(nlohmann::json::parse(f2).at("users").size() == 3);
}

TEST_CASE("generate validates history and decode mode") {
  Workspace ws;
  CHECK(run_cli({"generate", "--checkpoint", ws.ckpt, "--corpus", ws.corpus, "--user", "u1",
                 "--t", "0", "--max-len", "4"}) == 2);
  CHECK(run_cli({"generate", "--checkpoint", ws.ckpt, "--corpus", ws.corpus, "--user", "nope",
                 "--max-len", "4"}) == 2);
  CHECK(run_cli({"generate", "--checkpoint", ws.ckpt, "--corpus", ws.corpus, "--user", "u1",
                 "--mode", "psychic", "--max-len", "4"}) == 2);
}

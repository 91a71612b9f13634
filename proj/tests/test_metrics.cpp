#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include <json.hpp>

#include "dsattr/generator.hpp"
#include "dsattr/metrics.hpp"

#include "support/oracles.hpp"

using namespace dsattr;

using namespace oracles;

TEST_CASE("bleu hand values and edge behavior") {
  auto refs = std::vector<TokenSeq>{toks({"a", "c", "d"})};
  CHECK(bleu_n(toks({"a", "b", "c"}), refs, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(bleu_n(toks({"a", "c", "d"}), refs, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(bleu_n(toks({"a", "c", "d"}), refs, 2) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(bleu_n(toks({"x", "y", "z"}), refs, 1) <= 1e-9);
  CHECK(bleu_n({}, refs, 1) == 0.0);
  CHECK_THROWS(std::ignore = bleu_n(toks({"a"}), refs, 3));
  CHECK_THROWS(std::ignore = bleu_n(toks({"a"}), {}, 1));

  // Brevity penalty: shorter candidate is discounted.
  Real shorter = bleu_n(toks({"a", "c"}), refs, 1);
  CHECK(shorter == doctest::Approx(std::exp(1.0 - 1.5) * 1.0).epsilon(1e-12));

  // Single example accumulator equals the one-shot score.
  BleuAccumulator acc;
  acc.add(toks({"a", "b", "c"}), refs);
  CHECK(acc.score(1) == doctest::Approx(bleu_n(toks({"a", "b", "c"}), refs, 1)).epsilon(1e-12));
}

TEST_CASE("rouge-l hand values") {
  auto ref = std::vector<TokenSeq>{toks({"a", "c", "d"})};
  CHECK(rouge_l(toks({"a", "c", "d"}), ref) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rouge_l(toks({"x", "y"}), ref) == 0.0);
  Real p = 0.75, r = 1.0;
  Real expect = (1 + 1.44) * p * r / (r + 1.44 * p);
  CHECK(rouge_l(toks({"a", "b", "c", "d"}), ref) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(rouge_l({}, ref) == 0.0);
  // Max over references.
  auto two = std::vector<TokenSeq>{toks({"x", "y"}), toks({"a", "b", "c", "d"})};
  CHECK(rouge_l(toks({"a", "b", "c", "d"}), two) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("meteor hand values") {
  auto ref = std::vector<TokenSeq>{toks({"a", "c", "d"})};
  // Identical: single chunk over three matches.
  Real ident = meteor(toks({"a", "c", "d"}), ref);
  CHECK(ident == doctest::Approx(1.0 - 0.5 / 27.0).epsilon(1e-12));
  CHECK(meteor(toks({"x", "y"}), ref) == 0.0);
  CHECK(meteor({}, ref) == 0.0);
  // Two matches split into two chunks: F = 2/3, penalty = 1/2.
  CHECK(meteor(toks({"a", "b", "c"}), ref) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  // Repeated words still align into one chunk.
  auto rep = std::vector<TokenSeq>{toks({"a", "b", "a", "b"})};
  CHECK(meteor(toks({"a", "b", "a", "b"}), rep) ==
        doctest::Approx(1.0 - 0.5 / 64.0).epsilon(1e-12));
}

TEST_CASE("cider toy corpus matches the dense-vector computation") {
  std::vector<TokenSeq> cands = {toks({"a", "b", "c"}), toks({"b", "b", "d"}),
                                 toks({"c", "d", "a", "b"})};
  std::vector<std::vector<TokenSeq>> refs = {{toks({"a", "b", "d"})},
                                             {toks({"b", "b", "d"}), toks({"b", "d"})},
                                             {toks({"c", "a", "a", "b"})}};
  CHECK(cider(cands, refs) == doctest::Approx(oracle_cider(cands, refs)).epsilon(1e-12));

  // Identical candidate maximizes its own batch entry.
  std::vector<TokenSeq> c2 = {toks({"a", "b", "c"}), toks({"d", "d", "a"})};
  std::vector<std::vector<TokenSeq>> r2 = {{toks({"a", "b", "c"})}, {toks({"b", "c", "a"})}};
  CHECK(cider({c2[0]}, {r2[0]}) >= cider({c2[1]}, {r2[0]}));

  // Disjoint n-grams score zero.
  CHECK(cider({toks({"x", "y"})}, {{toks({"a", "b"})}}) == 0.0);
  CHECK_THROWS(std::ignore = cider({}, {}));
}

TEST_CASE("metrics agree with brute-force oracles on randomized cases") {
  Rng rng(77);
  int meteor_checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    TokenSeq cand = random_seq(rng, 1, 6);
    std::vector<TokenSeq> refs;
    int nrefs = rng.uniform_range(1, 2);
    for (int r = 0; r < nrefs; ++r) refs.push_back(random_seq(rng, 1, 6));

    CHECK(bleu_n(cand, refs, 1) == doctest::Approx(oracle_bleu(cand, refs, 1)).epsilon(1e-9));
    CHECK(bleu_n(cand, refs, 2) == doctest::Approx(oracle_bleu(cand, refs, 2)).epsilon(1e-9));
    CHECK(rouge_l(cand, refs) == doctest::Approx(oracle_rouge(cand, refs)).epsilon(1e-9));
    Real m = meteor(cand, refs);
    Real om = oracle_meteor(cand, refs);
    if (om == 0.0) {
      CHECK(m == 0.0);
    } else {
      CHECK(m == doctest::Approx(om).epsilon(1e-9));
    }
    ++meteor_checked;

    std::vector<TokenSeq> cands;
    std::vector<std::vector<TokenSeq>> crefs;
    int items = rng.uniform_range(2, 4);
    for (int i = 0; i < items; ++i) {
      cands.push_back(random_seq(rng, 1, 5));
      std::vector<TokenSeq> rs;
      for (int r = 0; r <= rng.uniform_int(2); ++r) rs.push_back(random_seq(rng, 1, 5));
      crefs.push_back(rs);
    }
    CHECK(cider(cands, crefs) == doctest::Approx(oracle_cider(cands, crefs)).epsilon(1e-9));
  }
  CHECK(meteor_checked == 100);
}

TEST_CASE("batch aggregation is permutation invariant and in range") {
  Rng rng(5);
  std::vector<TokenSeq> cands;
  std::vector<std::vector<TokenSeq>> refs;
  for (int i = 0; i < 12; ++i) {
    cands.push_back(random_seq(rng, 1, 7));
    refs.push_back({random_seq(rng, 2, 7), random_seq(rng, 2, 7)});
  }
  MetricReport a = evaluate_generations(cands, refs);

  std::vector<std::size_t> order(cands.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<TokenSeq> c2;
  std::vector<std::vector<TokenSeq>> r2;
  for (std::size_t i : order) {
    c2.push_back(cands[i]);
    r2.push_back(refs[i]);
  }
  MetricReport b = evaluate_generations(c2, r2);
  CHECK(a.bleu1 == doctest::Approx(b.bleu1).epsilon(1e-9));
  CHECK(a.bleu2 == doctest::Approx(b.bleu2).epsilon(1e-9));
  CHECK(a.rouge_l == doctest::Approx(b.rouge_l).epsilon(1e-9));
  CHECK(a.meteor == doctest::Approx(b.meteor).epsilon(1e-9));
  CHECK(a.cider == doctest::Approx(b.cider).epsilon(1e-9));

  for (Real v : {a.bleu1, a.bleu2, a.rouge_l, a.meteor}) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(a.cider >= 0.0);
  CHECK(a.n_examples == 12);
  CHECK_THROWS_WITH(std::ignore = evaluate_generations({}, {}), "empty evaluation split");
}

TEST_CASE("model evaluation produces a bounded deterministic report") {
  GeneratorConfig gc;
  gc.n_users = 4;
  gc.history_len = 6;
  auto gen = generate_synthetic_corpus(gc, 31);
  Vocabulary vocab = build_vocab(gen.corpus, 400);
  apply_vocab(gen.corpus, vocab);

  ModelConfig mc;
  mc.vocab_size = vocab.size();
  mc.topic_d = 6;
  mc.k_a = 3;
  mc.k_s = 2;
  mc.topic_enc_hidden = 5;
  mc.pf_dim = 4;
  mc.history_layers = 1;
  mc.emb_dim = 5;
  mc.enc_hidden = 3;
  mc.enc_layers = 1;
  mc.att_hidden = 4;
  mc.dec_hidden = 7;
  mc.dec_layers = 1;
  Rng rng(13);
  TopicModel topics(mc.topic_config(), rng);
  AttributorModel model(mc, std::move(topics), rng);

  DataSplit split = split_corpus(gen.corpus, 0.1, 0.1);
  REQUIRE(!split.test.empty());
  MetricReport r = evaluate_model(model, gen.corpus, vocab, gen.lexicon, split.test, 10);
  CHECK(r.n_examples == static_cast<int>(split.test.size()));
  for (Real v : {r.bleu1, r.bleu2, r.rouge_l, r.meteor}) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(std::isfinite(r.cider));
  MetricReport r2 = evaluate_model(model, gen.corpus, vocab, gen.lexicon, split.test, 10);
  CHECK(r.bleu1 == r2.bleu1);
  CHECK(r.cider == r2.cider);
  CHECK_THROWS_WITH(std::ignore = evaluate_model(model, gen.corpus, vocab, gen.lexicon, {}, 10),
                    "empty evaluation split");

  std::string js = report_json(r, model_content_hash(model));
  auto j = nlohmann::json::parse(js);
  CHECK(j.at("n_examples").get<int>() == r.n_examples);
  CHECK(j.at("checkpoint_hash").get<std::uint64_t>() == model_content_hash(model));
  CHECK(j.at("bleu1").get<Real>() == r.bleu1);
}

#include "dsattr/decoder.hpp"

#include <algorithm>
#include <stdexcept>

namespace dsattr {

CommentDecoder::CommentDecoder(DecoderConfig cfg, Rng& rng) : cfg_(cfg) {
  if (cfg_.vocab_size <= 0) throw std::invalid_argument("decoder needs a vocabulary size");
  params_.add("demb", nn::glorot(cfg_.emb_dim, cfg_.vocab_size, rng));
  int input = cfg_.d_s + cfg_.emb_dim + cfg_.topic_d;
  nn::add_lstm_stack(params_, "dec", cfg_.layers, input, cfg_.hidden, rng);
  params_.add("Walpha", nn::glorot(cfg_.hidden, cfg_.d_s, rng));
  nn::add_linear(params_, "Wy", cfg_.vocab_size, cfg_.hidden, rng, /*bias=*/false);
  nn::add_linear(params_, "Wo", cfg_.topic_d, cfg_.hidden, rng, /*bias=*/false);
  nn::add_linear(params_, "Wsop", cfg_.k_s, cfg_.pf_dim + cfg_.d_s, rng, /*bias=*/false);
  nn::add_linear(params_, "Winit", cfg_.hidden, cfg_.d_s, rng, /*bias=*/false);
}

Vec CommentDecoder::predict_opinion_distribution(const Vec& pf_s, const Vec& g,
                                                 const Mat& sentence_vectors) const {
  if (pf_s.size() != cfg_.pf_dim || g.size() != sentence_vectors.rows() ||
      sentence_vectors.cols() != cfg_.d_s)
    throw std::invalid_argument("opinion prediction input size mismatch");
  Vec summary = sentence_vectors.transpose() * g;
  Vec cat(pf_s.size() + summary.size());
  cat << pf_s, summary;
  return softmax_plain(params_.get("Wsop.W") * cat);
}

CommentDecoder::Context CommentDecoder::context_vector(const Vec& prev_top_h,
                                                       const Mat& sentence_vectors,
                                                       const Vec& g) const {
  Eigen::Index L = sentence_vectors.rows();
  if (L < 1) throw std::invalid_argument("article has no sentences");
  Context out;
  Vec scores = sentence_vectors * (params_.get("Walpha").transpose() * prev_top_h);
  out.e = softmax_plain(scores);
  if (cfg_.no_im) {
    out.alpha = out.e;
  } else {
    Vec num = g.cwiseProduct(out.e);
    Real denom = num.sum();
    if (denom <= 0.0) {
      warn("context attention degenerate; falling back to ungated weights");
      out.alpha = out.e;
    } else {
      out.alpha = num / denom;
    }
  }
  out.c = sentence_vectors.transpose() * out.alpha;
  return out;
}

std::pair<Vec, Vec> CommentDecoder::opinion_decay(const Vec& M_prev, const Vec& state_top_h) const {
  Vec gate = (1.0 / (1.0 + (-(params_.get("Wo.W") * state_top_h)).array().exp())).matrix();
  return {gate.cwiseProduct(M_prev), gate};
}

DecoderState CommentDecoder::initial_state(const Vec& news_vector, const Vec& v_s) const {
  if (news_vector.size() != cfg_.d_s) throw std::invalid_argument("news vector size mismatch");
  DecoderState st;
  Vec h0 = (params_.get("Winit.W") * news_vector).array().tanh().matrix();
  st.carry.assign(static_cast<std::size_t>(cfg_.layers), {h0, Vec::Zero(cfg_.hidden)});
  st.M = cfg_.no_ov ? Vec(Vec::Zero(cfg_.topic_d)) : v_s;
  return st;
}

std::pair<DecoderState, Vec> CommentDecoder::decode_step(const DecoderState& state, int prev_token,
                                                         const NewsEncoding& encoding,
                                                         const Vec& g) const {
  if (prev_token < 0 || prev_token >= cfg_.vocab_size)
    throw std::out_of_range("token out of vocabulary");
  DecoderState next = state;
  Context ctx = context_vector(state.top_h(), encoding.sentence_vectors, g);
  Vec x(cfg_.d_s + cfg_.emb_dim + cfg_.topic_d);
  x << ctx.c, params_.get("demb").col(prev_token), state.M;
  nn::plain_lstm_step(params_, "dec", cfg_.layers, x, next.carry);
  Vec logits = params_.get("Wy.W") * next.top_h();
  auto [M, gate] = opinion_decay(state.M, next.top_h());
  next.M = std::move(M);
  next.step = state.step + 1;
  next.last_e = std::move(ctx.e);
  next.last_alpha = std::move(ctx.alpha);
  return {std::move(next), std::move(logits)};
}

namespace {

int argmax_token(const Vec& logits) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i)
    if (logits(i) > logits(best)) best = i;
  return static_cast<int>(best);
}

Vec log_softmax_plain(const Vec& x) {
  Real m = x.maxCoeff();
  Real lse = m + std::log((x.array() - m).exp().sum());
  return (x.array() - lse).matrix();
}

}  // namespace

GenerationTrace CommentDecoder::generate(const NewsEncoding& encoding,
                                         const ImportanceScores& scores,
                                         const PreferenceState& prefs, const TopicModel& model,
                                         int max_len, const DecodeMode& mode) const {
  if (max_len < 1) throw std::invalid_argument("max_len must be at least 1");
  GenerationTrace trace;
  trace.zs_hat = predict_opinion_distribution(prefs.pf_s, scores.g, encoding.sentence_vectors);
  Vec v_s = opinion_vector(trace.zs_hat, model);
  DecoderState init = initial_state(encoding.news_vector, v_s);

  auto run_sequence = [&](const std::vector<int>& forced) {
    // Re-runs a fixed token sequence to record its trace.
    DecoderState st = init;
    int prev = Vocabulary::kBos;
    for (int tok : forced) {
      auto [next, logits] = decode_step(st, prev, encoding, scores.g);
      st = std::move(next);
      trace.tokens.push_back(tok);
      trace.raw_attentions.push_back(st.last_e);
      trace.context_attentions.push_back(st.last_alpha);
      trace.opinion_norms.push_back(st.M.norm());
      prev = tok;
    }
  };

  if (mode.kind == DecodeMode::kBeam) {
    if (mode.width < 1) throw std::invalid_argument("beam width must be at least 1");
    struct Beam {
      std::vector<int> tokens;
      Real logp = 0.0;
      DecoderState state;
      int prev = Vocabulary::kBos;
      bool done = false;
    };
    std::vector<Beam> beams{{{}, 0.0, init, Vocabulary::kBos, false}};
    for (int t = 0; t < max_len; ++t) {
      std::vector<Beam> cand;
      bool any_open = false;
      for (const Beam& b : beams) {
        if (b.done) {
          cand.push_back(b);
          continue;
        }
        any_open = true;
        auto [next, logits] = decode_step(b.state, b.prev, encoding, scores.g);
        Vec lp = log_softmax_plain(logits);
        // Expanding the top width tokens per beam is sufficient to fill
        // the next beam set.
        std::vector<int> order(static_cast<std::size_t>(lp.size()));
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        std::partial_sort(order.begin(),
                          order.begin() + std::min<std::size_t>(order.size(),
                                                                static_cast<std::size_t>(mode.width)),
                          order.end(), [&](int a, int c) {
                            if (lp(a) != lp(c)) return lp(a) > lp(c);
                            return a < c;
                          });
        for (int k = 0; k < mode.width && k < static_cast<int>(order.size()); ++k) {
          int tok = order[static_cast<std::size_t>(k)];
          Beam nb;
          nb.tokens = b.tokens;
          nb.logp = b.logp + lp(tok);
          if (tok == Vocabulary::kEos) {
            nb.state = b.state;  // final state irrelevant once closed
            nb.prev = b.prev;
            nb.done = true;
          } else {
            nb.tokens.push_back(tok);
            nb.state = next;
            nb.prev = tok;
          }
          cand.push_back(std::move(nb));
        }
      }
      if (!any_open) break;
      std::stable_sort(cand.begin(), cand.end(), [](const Beam& a, const Beam& b) {
        return a.logp > b.logp;
      });
      if (static_cast<int>(cand.size()) > mode.width)
        cand.resize(static_cast<std::size_t>(mode.width));
      beams = std::move(cand);
    }
    const Beam* best = &beams[0];
    for (const Beam& b : beams)
      if (b.logp > best->logp) best = &b;
    run_sequence(best->tokens);
  } else {
    Rng rng(mode.seed);
    DecoderState st = init;
    int prev = Vocabulary::kBos;
    for (int t = 0; t < max_len; ++t) {
      auto [next, logits] = decode_step(st, prev, encoding, scores.g);
      int tok;
      if (mode.kind == DecodeMode::kGreedy) {
        tok = argmax_token(logits);
      } else {
        tok = rng.categorical(softmax_plain(logits));
      }
      if (tok == Vocabulary::kEos) break;
      st = std::move(next);
      trace.tokens.push_back(tok);
      trace.raw_attentions.push_back(st.last_e);
      trace.context_attentions.push_back(st.last_alpha);
      trace.opinion_norms.push_back(st.M.norm());
      prev = tok;
    }
  }

  Eigen::Index L = encoding.sentence_vectors.rows();
  if (trace.raw_attentions.empty()) {
    warn("empty generation; mean decoder attention set to uniform");
    trace.mean_decoder_attention = Vec::Constant(L, 1.0 / static_cast<Real>(L));
  } else {
    Vec sum = Vec::Zero(L);
    for (const Vec& e : trace.raw_attentions) sum += e;
    trace.mean_decoder_attention = sum / static_cast<Real>(trace.raw_attentions.size());
  }
  return trace;
}

// ---- taped path ----

CommentDecoder::VarState CommentDecoder::build_init(nn::Graph& g, ad::Var news_vector,
                                                    ad::Var M0) {
  using namespace ad;
  VarState st;
  Var h0 = tanh(matmul(g.param(params_, "Winit.W"), news_vector));
  Var c0 = g.constant(Mat(Mat::Zero(cfg_.hidden, 1)));
  for (int l = 0; l < cfg_.layers; ++l) st.layers.push_back({h0, c0});
  st.M = cfg_.no_ov ? g.constant(Mat(Mat::Zero(cfg_.topic_d, 1))) : M0;
  return st;
}

ad::Var CommentDecoder::build_opinion_distribution(nn::Graph& g, ad::Var pf_s,
                                                   const std::vector<ad::Var>& sentence_vectors,
                                                   ad::Var g_scores) {
  using namespace ad;
  Var summary = matmul(hstack(sentence_vectors), g_scores);
  return softmax(matmul(g.param(params_, "Wsop.W"), concat<Real>({pf_s, summary})));
}

ad::Var CommentDecoder::build_step(nn::Graph& g, VarState& state, int prev_token,
                                   const std::vector<ad::Var>& sentence_vectors, ad::Var g_scores,
                                   ad::Var* e_out, ad::Var* alpha_out) {
  using namespace ad;
  if (prev_token < 0 || prev_token >= cfg_.vocab_size)
    throw std::out_of_range("token out of vocabulary");
  Var prev_h = state.layers.back().h;
  std::vector<Var> escore;
  escore.reserve(sentence_vectors.size());
  Var Wa = g.param(params_, "Walpha");
  Var query = matmul(transpose(Wa), prev_h);
  for (const auto& s : sentence_vectors) escore.push_back(dot(s, query));
  Var e = softmax(stack_scalars(escore));
  Var alpha;
  if (cfg_.no_im) {
    alpha = e;
  } else {
    Var num = cmul(g_scores, e);
    Var denom = sum(num);
    if (denom.value()(0, 0) <= 0.0) {
      warn("context attention degenerate; falling back to ungated weights");
      alpha = e;
    } else {
      alpha = div_scalar(num, denom);
    }
  }
  Var c = matmul(hstack(sentence_vectors), alpha);
  Var x = concat<Real>({c, col(g.param(params_, "demb"), prev_token), state.M});
  Var cur = x;
  for (int l = 0; l < cfg_.layers; ++l) {
    std::string p = "dec.l" + std::to_string(l);
    state.layers[static_cast<std::size_t>(l)] =
        nn::lstm_step(g, g.param(params_, p + ".W"), g.param(params_, p + ".b"), cur,
                      state.layers[static_cast<std::size_t>(l)]);
    cur = state.layers[static_cast<std::size_t>(l)].h;
  }
  Var logits = matmul(g.param(params_, "Wy.W"), cur);
  Var gate = sigmoid(matmul(g.param(params_, "Wo.W"), cur));
  state.M = cmul(gate, state.M);
  if (e_out) *e_out = e;
  if (alpha_out) *alpha_out = alpha;
  return logits;
}

}  // namespace dsattr

#pragma once

// Parameter storage, graph context for taped forward passes, Adam, and
// LSTM building blocks shared by the encoders and the decoder.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dsattr/ad.hpp"
#include "dsattr/common.hpp"
#include "dsattr/types.hpp"

namespace dsattr::nn {

/// Named dense parameters with matching gradient slots.
class ParamStore {
 public:
  Mat& add(const std::string& name, Mat init) {
    if (params_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    grads_[name] = Mat::Zero(init.rows(), init.cols());
    return params_[name] = std::move(init);
  }

  bool has(const std::string& name) const { return params_.count(name) > 0; }

  Mat& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }
  const Mat& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }
  Mat& grad(const std::string& name) { return grads_.at(name); }

  void zero_grads() {
    for (auto& [k, g] : grads_) g.setZero();
  }

  /// Keys in lexicographic order (std::map order), the canonical ordering
  /// used by serialization and the optimizer.
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [k, v] : params_) out.push_back(k);
    return out;
  }

  std::size_t count() const { return params_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [k, v] : params_) n += static_cast<std::size_t>(v.size());
    return n;
  }

  bool frozen = false;

  std::vector<std::uint8_t> serialize() const;
  void deserialize(const std::vector<std::uint8_t>& bytes);
  void save(const std::string& path) const;
  void load(const std::string& path);
  /// FNV-1a over the serialized bytes; stable across runs and platforms
  /// with identical IEEE doubles.
  std::uint64_t content_hash() const;

 private:
  std::map<std::string, Mat> params_;
  std::map<std::string, Mat> grads_;
};

/// One taped forward pass over any number of stores. Parameters enter the
/// tape once each; flush_grads() moves their accumulated adjoints back.
class Graph {
 public:
  ad::Tape tape;

  ad::Var param(ParamStore& store, const std::string& name) {
    auto key = std::make_pair(&store, name);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    ad::Var v = ad::leaf(tape, store.get(name));
    cache_.emplace(key, v);
    return v;
  }

  ad::Var constant(Mat m) { return ad::leaf(tape, std::move(m)); }
  ad::Var constant(Real x) {
    Mat m(1, 1);
    m(0, 0) = x;
    return ad::leaf(tape, std::move(m));
  }

  void backward(ad::Var loss) { tape.backward(loss.id); }

  /// Adds tape adjoints of every touched parameter into its store slot.
  /// Frozen stores are skipped.
  void flush_grads() {
    for (auto& [key, var] : cache_) {
      ParamStore* store = key.first;
      if (store->frozen) continue;
      store->grad(key.second) += var.grad();
    }
  }

 private:
  std::map<std::pair<ParamStore*, std::string>, ad::Var> cache_;
};

/// Adam with global-norm gradient clipping and stepwise bias correction.
class Adam {
 public:
  Real lr = 1e-3;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
  Real clip_norm = 5.0;  // <= 0 disables clipping

  void step(std::vector<ParamStore*> stores);
  void reset() {
    m_.clear();
    v_.clear();
    t_ = 0;
  }
  std::int64_t steps() const { return t_; }

 private:
  std::map<std::pair<ParamStore*, std::string>, Mat> m_, v_;
  std::int64_t t_ = 0;
};

// ---- initialization ----

inline Mat glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Real limit = std::sqrt(6.0 / static_cast<Real>(rows + cols));
  return rng.uniform_mat(rows, cols, limit);
}

// ---- LSTM ----

/// Registers one LSTM layer: W is 4H x (I+H) with gate blocks ordered
/// input, forget, output, candidate; forget-gate bias starts at 1.
inline void add_lstm_layer(ParamStore& ps, const std::string& prefix, Eigen::Index input,
                           Eigen::Index hidden, Rng& rng) {
  ps.add(prefix + ".W", glorot(4 * hidden, input + hidden, rng));
  Mat b = Mat::Zero(4 * hidden, 1);
  b.middleRows(hidden, hidden).setOnes();
  ps.add(prefix + ".b", std::move(b));
}

struct LstmState {
  ad::Var h, c;
};

inline LstmState lstm_step(Graph& g, ad::Var W, ad::Var b, ad::Var x, const LstmState& prev) {
  using namespace ad;
  Eigen::Index H = prev.h.rows();
  Var z = add(matmul(W, concat<Real>({x, prev.h})), b);
  Var i = sigmoid(segment(z, 0, H));
  Var f = sigmoid(segment(z, H, H));
  Var o = sigmoid(segment(z, 2 * H, H));
  Var u = tanh(segment(z, 3 * H, H));
  Var c = add(cmul(f, prev.c), cmul(i, u));
  Var h = cmul(o, tanh(c));
  return {h, c};
}

/// Multi-layer LSTM over a sequence; returns the top layer's hidden state at
/// every step plus the final (h, c) per layer.
struct LstmRun {
  std::vector<ad::Var> top;        // top-layer h_t for each step
  std::vector<LstmState> final_;   // per-layer final states
};

inline LstmRun run_lstm(Graph& g, ParamStore& ps, const std::string& prefix, int layers,
                        Eigen::Index hidden, const std::vector<ad::Var>& inputs,
                        const std::vector<LstmState>* init = nullptr) {
  LstmRun out;
  std::vector<LstmState> state(layers);
  for (int l = 0; l < layers; ++l) {
    if (init) {
      state[l] = (*init)[l];
    } else {
      state[l] = {g.constant(Mat::Zero(hidden, 1)), g.constant(Mat::Zero(hidden, 1))};
    }
  }
  std::vector<ad::Var> Ws(layers), bs(layers);
  for (int l = 0; l < layers; ++l) {
    std::string p = prefix + ".l" + std::to_string(l);
    Ws[l] = g.param(ps, p + ".W");
    bs[l] = g.param(ps, p + ".b");
  }
  out.top.reserve(inputs.size());
  for (const auto& x : inputs) {
    ad::Var cur = x;
    for (int l = 0; l < layers; ++l) {
      state[l] = lstm_step(g, Ws[l], bs[l], cur, state[l]);
      cur = state[l].h;
    }
    out.top.push_back(cur);
  }
  out.final_ = std::move(state);
  return out;
}

/// Bidirectional single-layer-stack runner: per position, [fwd_h; bwd_h].
inline std::vector<ad::Var> run_bilstm(Graph& g, ParamStore& ps, const std::string& prefix,
                                       int layers, Eigen::Index hidden,
                                       const std::vector<ad::Var>& inputs) {
  LstmRun fwd = run_lstm(g, ps, prefix + ".fwd", layers, hidden, inputs);
  std::vector<ad::Var> rev(inputs.rbegin(), inputs.rend());
  LstmRun bwd = run_lstm(g, ps, prefix + ".bwd", layers, hidden, rev);
  std::vector<ad::Var> out;
  out.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i)
    out.push_back(ad::concat<Real>({fwd.top[i], bwd.top[bwd.top.size() - 1 - i]}));
  return out;
}

inline void add_lstm_stack(ParamStore& ps, const std::string& prefix, int layers,
                           Eigen::Index input, Eigen::Index hidden, Rng& rng) {
  for (int l = 0; l < layers; ++l)
    add_lstm_layer(ps, prefix + ".l" + std::to_string(l), l == 0 ? input : hidden, hidden, rng);
}

// ---- plain (untaped) LSTM evaluation, matching the taped math exactly ----

using PlainCarry = std::vector<std::pair<Vec, Vec>>;  // per-layer (h, c)

inline PlainCarry plain_carry(int layers, Eigen::Index hidden) {
  return PlainCarry(static_cast<std::size_t>(layers), {Vec::Zero(hidden), Vec::Zero(hidden)});
}

/// One stacked step; mutates the carry and returns the top-layer hidden state.
inline Vec plain_lstm_step(const ParamStore& ps, const std::string& prefix, int layers,
                           const Vec& x, PlainCarry& carry) {
  Vec cur = x;
  for (int l = 0; l < layers; ++l) {
    const std::string p = prefix + ".l" + std::to_string(l);
    const Mat& W = ps.get(p + ".W");
    const Mat& b = ps.get(p + ".b");
    auto& [h, c] = carry[static_cast<std::size_t>(l)];
    Eigen::Index H = h.size();
    Vec xin(cur.size() + H);
    xin << cur, h;
    Vec z = W * xin + b;
    auto sig = [](Real v) { return 1.0 / (1.0 + std::exp(-v)); };
    Vec i = z.segment(0, H).unaryExpr(sig);
    Vec f = z.segment(H, H).unaryExpr(sig);
    Vec o = z.segment(2 * H, H).unaryExpr(sig);
    Vec u = z.segment(3 * H, H).array().tanh();
    c = (f.array() * c.array() + i.array() * u.array()).matrix();
    h = (o.array() * c.array().tanh()).matrix();
    cur = h;
  }
  return cur;
}

/// Per-position [fwd_h; bwd_h] over a sequence.
inline std::vector<Vec> plain_bilstm(const ParamStore& ps, const std::string& prefix, int layers,
                                     Eigen::Index hidden, const std::vector<Vec>& inputs) {
  PlainCarry fc = plain_carry(layers, hidden), bc = plain_carry(layers, hidden);
  std::vector<Vec> fwd, bwd;
  fwd.reserve(inputs.size());
  bwd.reserve(inputs.size());
  for (const auto& x : inputs) fwd.push_back(plain_lstm_step(ps, prefix + ".fwd", layers, x, fc));
  for (auto it = inputs.rbegin(); it != inputs.rend(); ++it)
    bwd.push_back(plain_lstm_step(ps, prefix + ".bwd", layers, *it, bc));
  std::vector<Vec> out;
  out.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Vec v(2 * hidden);
    v << fwd[i], bwd[inputs.size() - 1 - i];
    out.push_back(std::move(v));
  }
  return out;
}

inline void add_bilstm_stack(ParamStore& ps, const std::string& prefix, int layers,
                             Eigen::Index input, Eigen::Index hidden, Rng& rng) {
  add_lstm_stack(ps, prefix + ".fwd", layers, input, hidden, rng);
  add_lstm_stack(ps, prefix + ".bwd", layers, input, hidden, rng);
}

// ---- small MLP helpers ----

inline void add_linear(ParamStore& ps, const std::string& prefix, Eigen::Index out,
                       Eigen::Index in, Rng& rng, bool bias = true) {
  ps.add(prefix + ".W", glorot(out, in, rng));
  if (bias) ps.add(prefix + ".b", Mat::Zero(out, 1));
}

inline ad::Var linear(Graph& g, ParamStore& ps, const std::string& prefix, ad::Var x) {
  ad::Var y = ad::matmul(g.param(ps, prefix + ".W"), x);
  if (ps.has(prefix + ".b")) y = ad::add(y, g.param(ps, prefix + ".b"));
  return y;
}

}  // namespace dsattr::nn

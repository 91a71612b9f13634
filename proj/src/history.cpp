#include "dsattr/history.hpp"

#include <stdexcept>

#include <json.hpp>

#include "dsattr/common.hpp"

namespace dsattr {

using nlohmann::json;

HistoryEncoder::HistoryEncoder(HistoryConfig cfg, Rng& rng) : cfg_(cfg) {
  nn::add_lstm_stack(params_, "hist_a", cfg_.layers, cfg_.k_a, cfg_.hidden, rng);
  nn::add_lstm_stack(params_, "hist_s", cfg_.layers, cfg_.k_s, cfg_.hidden, rng);
}

PreferenceState HistoryEncoder::encode_history(const std::vector<Vec>& z_a_seq,
                                               const std::vector<Vec>& z_s_seq) const {
  if (z_a_seq.empty() || z_s_seq.empty()) throw std::invalid_argument("history required");
  if (z_a_seq.size() != z_s_seq.size())
    throw std::invalid_argument("history sequences differ in length");
  std::size_t start = 0;
  if (static_cast<int>(z_a_seq.size()) > cfg_.history_cap)
    start = z_a_seq.size() - static_cast<std::size_t>(cfg_.history_cap);

  PreferenceState st;
  st.carry_a = nn::plain_carry(cfg_.layers, cfg_.hidden);
  st.carry_s = nn::plain_carry(cfg_.layers, cfg_.hidden);
  for (std::size_t t = start; t < z_a_seq.size(); ++t) {
    if (z_a_seq[t].size() != cfg_.k_a || z_s_seq[t].size() != cfg_.k_s)
      throw std::invalid_argument("topic distribution size mismatch");
    nn::plain_lstm_step(params_, "hist_a", cfg_.layers, z_a_seq[t], st.carry_a);
    nn::plain_lstm_step(params_, "hist_s", cfg_.layers, z_s_seq[t], st.carry_s);
    ++st.as_of;
  }
  st.pf_a = st.carry_a.back().first;
  st.pf_s = st.carry_s.back().first;
  return st;
}

PreferenceState HistoryEncoder::update_preference(const PreferenceState& state, const Vec& z_a,
                                                  const Vec& z_s) const {
  if (!state.has_carry())
    throw std::invalid_argument("state missing recurrent carry; re-encode the history");
  if (z_a.size() != cfg_.k_a || z_s.size() != cfg_.k_s)
    throw std::invalid_argument("topic distribution size mismatch");
  PreferenceState st = state;
  nn::plain_lstm_step(params_, "hist_a", cfg_.layers, z_a, st.carry_a);
  nn::plain_lstm_step(params_, "hist_s", cfg_.layers, z_s, st.carry_s);
  st.pf_a = st.carry_a.back().first;
  st.pf_s = st.carry_s.back().first;
  ++st.as_of;
  return st;
}

std::pair<ad::Var, ad::Var> HistoryEncoder::build_preference(nn::Graph& g,
                                                             const std::vector<Vec>& z_a_seq,
                                                             const std::vector<Vec>& z_s_seq) {
  if (z_a_seq.empty() || z_s_seq.empty()) throw std::invalid_argument("history required");
  if (z_a_seq.size() != z_s_seq.size())
    throw std::invalid_argument("history sequences differ in length");
  std::size_t start = 0;
  if (static_cast<int>(z_a_seq.size()) > cfg_.history_cap)
    start = z_a_seq.size() - static_cast<std::size_t>(cfg_.history_cap);
  std::vector<ad::Var> xa, xs;
  for (std::size_t t = start; t < z_a_seq.size(); ++t) {
    xa.push_back(g.constant(Mat(z_a_seq[t])));
    xs.push_back(g.constant(Mat(z_s_seq[t])));
  }
  auto ra = nn::run_lstm(g, params_, "hist_a", cfg_.layers, cfg_.hidden, xa);
  auto rs = nn::run_lstm(g, params_, "hist_s", cfg_.layers, cfg_.hidden, xs);
  return {ra.top.back(), rs.top.back()};
}

void save_preference_cache(const std::vector<PreferenceState>& states, const std::string& path) {
  json arr = json::array();
  for (const auto& s : states) {
    json j;
    j["user_id"] = s.user_id;
    j["as_of"] = s.as_of;
    j["pf_a"] = std::vector<Real>(s.pf_a.data(), s.pf_a.data() + s.pf_a.size());
    j["pf_s"] = std::vector<Real>(s.pf_s.data(), s.pf_s.data() + s.pf_s.size());
    arr.push_back(j);
  }
  write_file_atomic(path, arr.dump(2));
}

std::vector<PreferenceState> load_preference_cache(const std::string& path) {
  json arr = json::parse(read_text_file(path));
  std::vector<PreferenceState> out;
  for (const auto& j : arr) {
    PreferenceState s;
    s.user_id = j.at("user_id").get<std::string>();
    s.as_of = j.at("as_of").get<int>();
    auto a = j.at("pf_a").get<std::vector<Real>>();
    auto o = j.at("pf_s").get<std::vector<Real>>();
    s.pf_a = Eigen::Map<Vec>(a.data(), static_cast<Eigen::Index>(a.size()));
    s.pf_s = Eigen::Map<Vec>(o.data(), static_cast<Eigen::Index>(o.size()));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace dsattr

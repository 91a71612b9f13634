#include "dsattr/nn.hpp"

#include <cstring>

namespace dsattr::nn {

namespace {

constexpr char kMagic[8] = {'D', 'S', 'A', 'T', 'T', 'R', '1', '\0'};

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::vector<std::uint8_t>& in, std::size_t& off) {
  if (off + 8 > in.size()) throw std::runtime_error("parameter blob truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[off + i]) << (8 * i);
  off += 8;
  return v;
}

}  // namespace

std::vector<std::uint8_t> ParamStore::serialize() const {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 8);
  put_u64(out, params_.size());
  for (const auto& [name, m] : params_) {
    put_u64(out, name.size());
    out.insert(out.end(), name.begin(), name.end());
    put_u64(out, static_cast<std::uint64_t>(m.rows()));
    put_u64(out, static_cast<std::uint64_t>(m.cols()));
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(m.data());
    out.insert(out.end(), bytes, bytes + sizeof(Real) * static_cast<std::size_t>(m.size()));
  }
  return out;
}

void ParamStore::deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw std::runtime_error("bad parameter blob header");
  std::size_t off = 8;
  std::uint64_t count = get_u64(bytes, off);
  std::map<std::string, Mat> params;
  std::map<std::string, Mat> grads;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint64_t len = get_u64(bytes, off);
    if (off + len > bytes.size()) throw std::runtime_error("parameter blob truncated");
    std::string name(reinterpret_cast<const char*>(bytes.data() + off), len);
    off += len;
    auto rows = static_cast<Eigen::Index>(get_u64(bytes, off));
    auto cols = static_cast<Eigen::Index>(get_u64(bytes, off));
    std::size_t n = sizeof(Real) * static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    if (off + n > bytes.size()) throw std::runtime_error("parameter blob truncated");
    Mat m(rows, cols);
    std::memcpy(m.data(), bytes.data() + off, n);
    off += n;
    grads[name] = Mat::Zero(rows, cols);
    params[name] = std::move(m);
  }
  params_ = std::move(params);
  grads_ = std::move(grads);
}

void ParamStore::save(const std::string& path) const {
  auto bytes = serialize();
  write_file_atomic(path, bytes.data(), bytes.size());
}

void ParamStore::load(const std::string& path) { deserialize(read_binary_file(path)); }

std::uint64_t ParamStore::content_hash() const {
  auto bytes = serialize();
  return fnv1a(bytes.data(), bytes.size());
}

void Adam::step(std::vector<ParamStore*> stores) {
  // Global gradient norm across every trainable store.
  Real sq = 0.0;
  for (ParamStore* ps : stores) {
    if (ps->frozen) continue;
    for (const auto& name : ps->names()) sq += ps->grad(name).squaredNorm();
  }
  Real scale = 1.0;
  Real norm = std::sqrt(sq);
  if (clip_norm > 0.0 && norm > clip_norm) scale = clip_norm / norm;

  ++t_;
  Real bc1 = 1.0 - std::pow(beta1, static_cast<Real>(t_));
  Real bc2 = 1.0 - std::pow(beta2, static_cast<Real>(t_));
  for (ParamStore* ps : stores) {
    if (ps->frozen) continue;
    for (const auto& name : ps->names()) {
      auto key = std::make_pair(ps, name);
      Mat g = ps->grad(name) * scale;
      auto itm = m_.find(key);
      if (itm == m_.end()) {
        m_[key] = Mat::Zero(g.rows(), g.cols());
        v_[key] = Mat::Zero(g.rows(), g.cols());
        itm = m_.find(key);
      }
      Mat& m = itm->second;
      Mat& v = v_[key];
      m = beta1 * m + (1.0 - beta1) * g;
      v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
      Mat mhat = m / bc1;
      Mat vhat = v / bc2;
      ps->get(name).array() -= lr * mhat.array() / (vhat.array().sqrt() + eps);
    }
  }
}

}  // namespace dsattr::nn

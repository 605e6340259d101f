#include "assist/nn.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace assist {

Mlp::Mlp(std::vector<int> sizes, bool linear_skip)
    : sizes_(std::move(sizes)), linear_skip_(linear_skip) {
  if (sizes_.size() < 2) throw std::invalid_argument("mlp needs >= 2 sizes");
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    if (sizes_[l] < 1 || sizes_[l + 1] < 1) {
      throw std::invalid_argument("mlp layer sizes must be positive");
    }
    Block b{offset, offset + static_cast<Eigen::Index>(sizes_[l + 1]) * sizes_[l],
            sizes_[l + 1], sizes_[l]};
    offset = b.b_offset + sizes_[l + 1];
    blocks_.push_back(b);
  }
  skip_offset_ = offset;
  if (linear_skip_) offset += static_cast<Eigen::Index>(sizes_.back()) * sizes_.front();
  params_ = Eigen::VectorXd::Zero(offset);
}

void Mlp::initialize(Rng& rng, double output_scale) {
  params_.setZero();
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const Block& b = blocks_[l];
    const bool last = l + 1 == blocks_.size();
    const double limit = std::sqrt(6.0 / (b.rows + b.cols)) *
                         (last ? output_scale : 1.0);
    if (limit == 0.0) continue;
    std::uniform_real_distribution<double> u(-limit, limit);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(b.rows) * b.cols; ++i) {
      params_[b.w_offset + i] = u(rng);
    }
  }
}

Eigen::Map<const Eigen::MatrixXd> Mlp::weight(std::size_t l) const {
  const Block& b = blocks_[l];
  return {params_.data() + b.w_offset, b.rows, b.cols};
}

Eigen::Map<const Eigen::VectorXd> Mlp::bias(std::size_t l) const {
  const Block& b = blocks_[l];
  return {params_.data() + b.b_offset, b.rows};
}

Eigen::Map<const Eigen::MatrixXd> Mlp::skip() const {
  return {params_.data() + skip_offset_, sizes_.back(), sizes_.front()};
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x) const {
  Cache cache;
  return forward(x, cache);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Cache& cache) const {
  if (x.rows() != input_dim()) {
    throw std::invalid_argument("mlp input dimension mismatch");
  }
  cache.input = x;
  cache.activations.clear();
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    cache.activations.push_back(a);
    Eigen::MatrixXd z = weight(l) * a;
    z.colwise() += bias(l);
    if (l + 1 < blocks_.size()) {
      a = z.array().tanh().matrix();
    } else {
      a = std::move(z);
    }
  }
  if (linear_skip_) a.noalias() += skip() * x;
  cache.output = a;
  return a;
}

void Mlp::backward(const Cache& cache, const Eigen::MatrixXd& d_output,
                   Eigen::Ref<Eigen::VectorXd> grad) const {
  if (grad.size() != params_.size()) {
    throw std::invalid_argument("gradient buffer size mismatch");
  }
  if (linear_skip_) {
    Eigen::Map<Eigen::MatrixXd> g(grad.data() + skip_offset_, sizes_.back(),
                                  sizes_.front());
    g.noalias() += d_output * cache.input.transpose();
  }
  Eigen::MatrixXd delta = d_output;
  for (std::size_t l = blocks_.size(); l-- > 0;) {
    const Block& b = blocks_[l];
    const Eigen::MatrixXd& a_in = cache.activations[l];
    Eigen::Map<Eigen::MatrixXd> gw(grad.data() + b.w_offset, b.rows, b.cols);
    gw.noalias() += delta * a_in.transpose();
    grad.segment(b.b_offset, b.rows) += delta.rowwise().sum();
    if (l == 0) break;
    // a_in = tanh(z_prev): d tanh = 1 - a^2.
    Eigen::MatrixXd back = weight(l).transpose() * delta;
    delta = back.array() * (1.0 - a_in.array().square());
  }
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> Mlp::shapes() const {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  for (const Block& b : blocks_) {
    out.emplace_back(b.rows, b.cols);
    out.emplace_back(b.rows, 1u);
  }
  if (linear_skip_) out.emplace_back(sizes_.back(), sizes_.front());
  return out;
}

Mlp Mlp::from_shapes(
    const std::vector<std::pair<std::uint32_t, std::uint32_t>>& shapes,
    bool linear_skip) {
  const std::size_t layer_blocks = shapes.size() - (linear_skip ? 1 : 0);
  if (shapes.size() < 2 || layer_blocks % 2 != 0) {
    throw std::invalid_argument("malformed network shape manifest");
  }
  std::vector<int> sizes{static_cast<int>(shapes[0].second)};
  for (std::size_t i = 0; i < layer_blocks; i += 2) {
    if (shapes[i].second != static_cast<std::uint32_t>(sizes.back()) ||
        shapes[i + 1].first != shapes[i].first || shapes[i + 1].second != 1) {
      throw std::invalid_argument("inconsistent network shape manifest");
    }
    sizes.push_back(static_cast<int>(shapes[i].first));
  }
  if (linear_skip && (shapes.back().first != static_cast<std::uint32_t>(sizes.back()) ||
                      shapes.back().second != static_cast<std::uint32_t>(sizes.front()))) {
    throw std::invalid_argument("inconsistent skip shape in manifest");
  }
  return Mlp(sizes, linear_skip);
}

Adam::Adam(Eigen::Index n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
      m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {}

void Adam::step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grad) {
  if (grad.size() != m_.size() || params.size() != m_.size()) {
    throw std::invalid_argument("adam size mismatch");
  }
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.array().square().matrix();
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -=
      lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

double clip_grad_norm(Eigen::Ref<Eigen::VectorXd> grad, double max_norm) {
  const double n = grad.norm();
  if (n > max_norm && n > 0.0) grad *= max_norm / n;
  return n;
}

namespace {

constexpr char kMagic[8] = {'A', 'S', 'S', 'I', 'S', 'T', 'C', 'K'};

template <typename U>
void put_le(std::ostream& out, U v) {
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  out.write(buf, sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
  unsigned char buf[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw std::runtime_error("truncated checkpoint");
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  std::size_t expected = 0;
  for (const auto& [r, c] : ckpt.shapes) expected += static_cast<std::size_t>(r) * c;
  if (expected != ckpt.values.size()) {
    throw std::invalid_argument("checkpoint shapes do not cover values");
  }
  out.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, Checkpoint::kFormatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.kind));
  put_le<std::uint32_t>(out, ckpt.flags);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.shapes.size()));
  for (const auto& [r, c] : ckpt.shapes) {
    put_le<std::uint32_t>(out, r);
    put_le<std::uint32_t>(out, c);
  }
  put_le<std::uint64_t>(out, ckpt.values.size());
  for (double v : ckpt.values) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw std::runtime_error("checkpoint write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) ||
      !std::equal(std::begin(magic), std::end(magic), std::begin(kMagic))) {
    throw std::runtime_error("not a checkpoint file");
  }
  if (get_le<std::uint32_t>(in) != Checkpoint::kFormatVersion) {
    throw std::runtime_error("unsupported checkpoint version");
  }
  Checkpoint ckpt;
  const auto kind = get_le<std::uint32_t>(in);
  if (kind != 1 && kind != 2) throw std::runtime_error("unknown checkpoint kind");
  ckpt.kind = static_cast<CheckpointKind>(kind);
  ckpt.flags = get_le<std::uint32_t>(in);
  const auto n_shapes = get_le<std::uint32_t>(in);
  std::size_t expected = 0;
  for (std::uint32_t i = 0; i < n_shapes; ++i) {
    const auto r = get_le<std::uint32_t>(in);
    const auto c = get_le<std::uint32_t>(in);
    ckpt.shapes.emplace_back(r, c);
    expected += static_cast<std::size_t>(r) * c;
  }
  const auto n_values = get_le<std::uint64_t>(in);
  if (n_values != expected) throw std::runtime_error("checkpoint size mismatch");
  ckpt.values.resize(n_values);
  for (auto& v : ckpt.values) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_checkpoint(in);
}

}  // namespace assist

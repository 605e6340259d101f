#include "assist/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace assist {

namespace {

const double kLogSqrt2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

}  // namespace

PolicyParams PolicyParams::create(int input_dim, int action_dim, Rng& rng,
                                  int hidden, double init_log_std) {
  PolicyParams p;
  p.actor = Mlp({input_dim, hidden, hidden, action_dim});
  p.actor.initialize(rng, 0.0);
  p.log_std = Eigen::VectorXd::Constant(action_dim, init_log_std);
  p.critic = Mlp({input_dim, hidden, hidden, 1});
  p.critic.initialize(rng, 1.0);
  return p;
}

Eigen::Index PolicyParams::num_params() const {
  return actor.num_params() + log_std.size() + critic.num_params();
}

Eigen::VectorXd PolicyParams::flat() const {
  Eigen::VectorXd f(num_params());
  f << actor.params(), log_std, critic.params();
  return f;
}

void PolicyParams::set_flat(const Eigen::VectorXd& f) {
  if (f.size() != num_params()) throw std::invalid_argument("flat size mismatch");
  const Eigen::Index a = actor.num_params();
  const Eigen::Index s = log_std.size();
  actor.params() = f.head(a);
  log_std = f.segment(a, s);
  critic.params() = f.tail(critic.num_params());
}

Checkpoint PolicyParams::to_checkpoint() const {
  Checkpoint c;
  c.kind = CheckpointKind::kPolicy;
  c.shapes = actor.shapes();
  c.flags = static_cast<std::uint32_t>(c.shapes.size());
  c.shapes.emplace_back(static_cast<std::uint32_t>(log_std.size()), 1u);
  for (const auto& s : critic.shapes()) c.shapes.push_back(s);
  const Eigen::VectorXd f = flat();
  c.values.assign(f.data(), f.data() + f.size());
  return c;
}

PolicyParams PolicyParams::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != CheckpointKind::kPolicy) {
    throw std::runtime_error("checkpoint is not a policy");
  }
  const std::size_t n_actor = ckpt.flags;
  if (n_actor + 1 >= ckpt.shapes.size()) {
    throw std::runtime_error("malformed policy checkpoint");
  }
  PolicyParams p;
  p.actor = Mlp::from_shapes({ckpt.shapes.begin(),
                              ckpt.shapes.begin() + static_cast<long>(n_actor)},
                             false);
  p.log_std = Eigen::VectorXd::Zero(ckpt.shapes[n_actor].first);
  p.critic = Mlp::from_shapes(
      {ckpt.shapes.begin() + static_cast<long>(n_actor) + 1, ckpt.shapes.end()},
      false);
  if (p.critic.input_dim() != p.actor.input_dim() ||
      p.log_std.size() != p.actor.output_dim()) {
    throw std::runtime_error("inconsistent policy checkpoint");
  }
  p.set_flat(Eigen::Map<const Eigen::VectorXd>(
      ckpt.values.data(), static_cast<Eigen::Index>(ckpt.values.size())));
  return p;
}

double gaussian_log_prob(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                         const Eigen::VectorXd& log_std) {
  double lp = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double z = (x[i] - mean[i]) * std::exp(-log_std[i]);
    lp += -0.5 * z * z - log_std[i] - kLogSqrt2Pi;
  }
  return lp;
}

ActResult act(const PolicyParams& params, const Eigen::VectorXd& input, Rng& rng) {
  if (input.size() != params.input_dim()) {
    throw std::invalid_argument("policy input dimension mismatch");
  }
  const Eigen::VectorXd mean = params.actor.forward(input);
  std::normal_distribution<double> normal(0.0, 1.0);
  ActResult r;
  r.pre_squash.resize(mean.size());
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    r.pre_squash[i] = mean[i] + std::exp(params.log_std[i]) * normal(rng);
  }
  r.action = r.pre_squash.array().tanh().matrix();
  r.log_prob = gaussian_log_prob(r.pre_squash, mean, params.log_std);
  r.value = params.critic.forward(input)(0, 0);
  return r;
}

ActResult act(const PolicyParams& params, const Eigen::VectorXd& input,
              std::uint64_t seed) {
  Rng rng(seed);
  return act(params, input, rng);
}

Eigen::VectorXd act_deterministic(const PolicyParams& params,
                                  const Eigen::VectorXd& input) {
  if (input.size() != params.input_dim()) {
    throw std::invalid_argument("policy input dimension mismatch");
  }
  return params.actor.forward(input).array().tanh().matrix();
}

double value_of(const PolicyParams& params, const Eigen::VectorXd& input) {
  return params.critic.forward(input)(0, 0);
}

std::vector<double> gae(std::span<const double> rewards,
                        std::span<const double> values, double bootstrap,
                        double discount, double lambda) {
  if (rewards.size() != values.size()) {
    throw std::invalid_argument("gae length mismatch");
  }
  if (rewards.empty()) throw std::invalid_argument("gae needs >= 1 step");
  if (discount < 0.0 || discount > 1.0 || lambda < 0.0 || lambda > 1.0) {
    throw std::invalid_argument("gae discount and lambda must lie in [0, 1]");
  }
  std::vector<double> adv(rewards.size());
  double next_value = bootstrap;
  double running = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    const double delta = rewards[i] + discount * next_value - values[i];
    running = delta + discount * lambda * running;
    adv[i] = running;
    next_value = values[i];
  }
  return adv;
}

std::size_t RolloutBuffer::num_steps() const {
  std::size_t n = 0;
  for (const auto& e : episodes) n += e.size();
  return n;
}

PpoBatch make_batch(const RolloutBuffer& buffer, const PpoHyper& hyper,
                    bool normalize_advantages) {
  const std::size_t n = buffer.num_steps();
  if (n == 0) throw std::invalid_argument("empty rollout buffer");
  const auto& first = buffer.episodes.front();
  const Eigen::Index in_dim = first.inputs.front().size();
  const Eigen::Index act_dim = first.pre_squash.front().size();
  PpoBatch b;
  b.inputs.resize(in_dim, static_cast<Eigen::Index>(n));
  b.pre_squash.resize(act_dim, static_cast<Eigen::Index>(n));
  b.old_log_probs.resize(static_cast<Eigen::Index>(n));
  b.advantages.resize(static_cast<Eigen::Index>(n));
  b.returns.resize(static_cast<Eigen::Index>(n));
  Eigen::Index col = 0;
  for (const auto& ep : buffer.episodes) {
    if (ep.size() == 0) continue;
    const double bootstrap = ep.terminal ? 0.0 : ep.bootstrap;
    const auto adv = gae(ep.rewards, ep.values, bootstrap, hyper.discount,
                         hyper.gae_lambda);
    for (std::size_t i = 0; i < ep.size(); ++i, ++col) {
      b.inputs.col(col) = ep.inputs[i];
      b.pre_squash.col(col) = ep.pre_squash[i];
      b.old_log_probs[col] = ep.log_probs[i];
      b.advantages[col] = adv[i];
      b.returns[col] = adv[i] + ep.values[i];
    }
  }
  if (normalize_advantages && n > 1) {
    const double mean = b.advantages.mean();
    const double var = (b.advantages.array() - mean).square().mean();
    b.advantages = (b.advantages.array() - mean) / (std::sqrt(var) + hyper.adv_eps);
  }
  return b;
}

PpoLoss ppo_loss(const PolicyParams& params, const PpoBatch& batch,
                 const PpoHyper& hyper, bool with_grad) {
  const Eigen::Index n = batch.inputs.cols();
  const Eigen::Index act_dim = params.action_dim();
  if (n == 0) throw std::invalid_argument("empty ppo batch");
  const double inv_n = 1.0 / static_cast<double>(n);

  Mlp::Cache actor_cache;
  Mlp::Cache critic_cache;
  const Eigen::MatrixXd mean = params.actor.forward(batch.inputs, actor_cache);
  const Eigen::MatrixXd value = params.critic.forward(batch.inputs, critic_cache);
  const Eigen::VectorXd inv_std = (-params.log_std).array().exp();

  PpoLoss out;
  Eigen::MatrixXd d_mean = Eigen::MatrixXd::Zero(act_dim, n);
  Eigen::VectorXd d_log_std = Eigen::VectorXd::Zero(act_dim);
  Eigen::MatrixXd d_value(1, n);
  const double lo = 1.0 - hyper.clip;
  const double hi = 1.0 + hyper.clip;
  int clipped = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    double log_prob = 0.0;
    for (Eigen::Index i = 0; i < act_dim; ++i) {
      const double z = (batch.pre_squash(i, j) - mean(i, j)) * inv_std[i];
      log_prob += -0.5 * z * z - params.log_std[i] - kLogSqrt2Pi;
    }
    const double log_ratio = log_prob - batch.old_log_probs[j];
    const double ratio = std::exp(log_ratio);
    const double a = batch.advantages[j];
    const double unclipped = ratio * a;
    const double clipped_term = std::clamp(ratio, lo, hi) * a;
    const bool use_unclipped = unclipped <= clipped_term;
    out.policy += -std::min(unclipped, clipped_term) * inv_n;
    out.approx_kl += ((ratio - 1.0) - log_ratio) * inv_n;
    if (ratio < lo || ratio > hi) ++clipped;

    // Gradient flows only through the active, unclamped branch.
    const bool active = use_unclipped || (ratio >= lo && ratio <= hi);
    const double d_logp = active ? -ratio * a * inv_n : 0.0;
    if (with_grad && d_logp != 0.0) {
      for (Eigen::Index i = 0; i < act_dim; ++i) {
        const double z = (batch.pre_squash(i, j) - mean(i, j)) * inv_std[i];
        d_mean(i, j) += d_logp * z * inv_std[i];
        d_log_std[i] += d_logp * (z * z - 1.0);
      }
    }
    const double err = value(0, j) - batch.returns[j];
    out.value += 0.5 * err * err * inv_n;
    d_value(0, j) = hyper.value_coef * err * inv_n;
  }
  out.entropy = params.log_std.sum() +
                static_cast<double>(act_dim) * (0.5 + kLogSqrt2Pi);
  out.clip_fraction = static_cast<double>(clipped) * inv_n;
  out.total = out.policy + hyper.value_coef * out.value -
              hyper.entropy_coef * out.entropy;

  if (with_grad) {
    d_log_std.array() -= hyper.entropy_coef;
    out.grad = Eigen::VectorXd::Zero(params.num_params());
    const Eigen::Index na = params.actor.num_params();
    params.actor.backward(actor_cache, d_mean, out.grad.head(na));
    out.grad.segment(na, act_dim) = d_log_std;
    params.critic.backward(critic_cache, d_value,
                           out.grad.tail(params.critic.num_params()));
  }
  return out;
}

PpoTrainer::PpoTrainer(const PolicyParams& params, PpoHyper hyper)
    : hyper_(hyper), adam_(params.num_params(), hyper.lr) {}

PpoStats PpoTrainer::update(PolicyParams& params, const RolloutBuffer& buffer,
                            Rng& rng) {
  const PpoBatch full = make_batch(buffer, hyper_);
  const Eigen::Index n = full.inputs.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const Eigen::Index mb = std::max<Eigen::Index>(1, hyper_.minibatch);

  PpoStats stats;
  stats.samples = static_cast<std::size_t>(n);
  int batches = 0;
  Eigen::VectorXd flat = params.flat();
  for (int epoch = 0; epoch < hyper_.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += mb) {
      const Eigen::Index len = std::min(mb, n - start);
      PpoBatch sub;
      sub.inputs.resize(full.inputs.rows(), len);
      sub.pre_squash.resize(full.pre_squash.rows(), len);
      sub.old_log_probs.resize(len);
      sub.advantages.resize(len);
      sub.returns.resize(len);
      for (Eigen::Index k = 0; k < len; ++k) {
        const Eigen::Index c = order[static_cast<std::size_t>(start + k)];
        sub.inputs.col(k) = full.inputs.col(c);
        sub.pre_squash.col(k) = full.pre_squash.col(c);
        sub.old_log_probs[k] = full.old_log_probs[c];
        sub.advantages[k] = full.advantages[c];
        sub.returns[k] = full.returns[c];
      }
      PpoLoss loss = ppo_loss(params, sub, hyper_, true);
      if (!loss.grad.allFinite() || !std::isfinite(loss.total)) {
        throw std::runtime_error("non-finite gradient in ppo update");
      }
      clip_grad_norm(loss.grad, hyper_.max_grad_norm);
      adam_.step(flat, loss.grad);
      params.set_flat(flat);
      stats.policy_loss += loss.policy;
      stats.value_loss += loss.value;
      stats.entropy += loss.entropy;
      stats.approx_kl += loss.approx_kl;
      stats.clip_fraction += loss.clip_fraction;
      ++batches;
    }
  }
  if (batches > 0) {
    const double inv = 1.0 / batches;
    stats.policy_loss *= inv;
    stats.value_loss *= inv;
    stats.entropy *= inv;
    stats.approx_kl *= inv;
    stats.clip_fraction *= inv;
  }
  return stats;
}

}  // namespace assist

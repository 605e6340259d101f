#include "support.hpp"

#include <doctest.h>

#include <sstream>

using namespace assist;
using namespace assist::testing;

namespace {

// Closed-form diagonal Gaussian density, multiplied out then logged.
double density_oracle(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                      const Eigen::VectorXd& log_std) {
  double p = 1.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double sd = std::exp(log_std[i]);
    const double z = (x[i] - mean[i]) / sd;
    p *= std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
  }
  return std::log(p);
}

// A_t = sum_l (gamma*lambda)^l delta_{t+l}, evaluated term by term.
std::vector<double> gae_nested_sum(const std::vector<double>& r, const std::vector<double>& v,
                                   double bootstrap, double gamma, double lambda) {
  const std::size_t n = r.size();
  std::vector<double> out(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t l = t; l < n; ++l) {
      const double next = l + 1 < n ? v[l + 1] : bootstrap;
      const double delta = r[l] + gamma * next - v[l];
      out[t] += std::pow(gamma * lambda, static_cast<double>(l - t)) * delta;
    }
  }
  return out;
}

PolicyParams random_policy(Rng& rng, int in, int act, int hidden) {
  PolicyParams p = PolicyParams::create(in, act, rng, hidden, -0.3);
  std::normal_distribution<double> n(0.0, 0.3);
  for (Eigen::Index i = 0; i < p.actor.num_params(); ++i) p.actor.params()[i] += n(rng);
  for (Eigen::Index i = 0; i < p.log_std.size(); ++i) p.log_std[i] += n(rng);
  return p;
}

// Batch whose old log-probs put each ratio in a chosen band. Bands sit well
// away from the clip kinks at 1 +- clip so finite differences stay smooth.
PpoBatch random_batch(const PolicyParams& p, Rng& rng, int n, bool include_clipped) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> inner(-0.1, 0.1);
  PpoBatch b;
  b.inputs.resize(p.input_dim(), n);
  b.pre_squash.resize(p.action_dim(), n);
  b.old_log_probs.resize(n);
  b.advantages.resize(n);
  b.returns.resize(n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < p.input_dim(); ++i) b.inputs(i, j) = nd(rng);
    const Eigen::VectorXd mean = p.actor.forward(Eigen::VectorXd(b.inputs.col(j)));
    for (int i = 0; i < p.action_dim(); ++i) {
      b.pre_squash(i, j) = mean[i] + std::exp(p.log_std[i]) * nd(rng);
    }
    const double lp = gaussian_log_prob(b.pre_squash.col(j), mean, p.log_std);
    double shift = inner(rng);
    if (include_clipped && j % 3 == 1) shift = 0.5;   // ratio ~ 1.65
    if (include_clipped && j % 3 == 2) shift = -0.6;  // ratio ~ 0.55
    b.old_log_probs[j] = lp - shift;
    b.advantages[j] = nd(rng);
    b.returns[j] = nd(rng);
  }
  return b;
}

}  // namespace

TEST_CASE("zero-initialized mean head") {
  Rng rng(1);
  const auto p = PolicyParams::create(5, 2, rng, 16);
  Eigen::VectorXd x = Eigen::VectorXd::Random(5);
  CHECK(p.actor.forward(x).cwiseAbs().maxCoeff() == 0.0);
  CHECK(act_deterministic(p, x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("act is deterministic given seed and log_prob matches density oracle") {
  Rng rng(2);
  const auto p = random_policy(rng, 4, 3, 8);
  const Eigen::VectorXd x = Eigen::VectorXd::Random(4);
  const auto a = act(p, x, std::uint64_t{99});
  const auto b = act(p, x, std::uint64_t{99});
  CHECK(a.action == b.action);
  CHECK(a.pre_squash == b.pre_squash);
  CHECK(a.log_prob == b.log_prob);
  CHECK(a.action.cwiseAbs().maxCoeff() <= 1.0);
  const Eigen::VectorXd mean = p.actor.forward(x);
  CHECK(a.log_prob == doctest::Approx(density_oracle(a.pre_squash, mean, p.log_std)).epsilon(1e-12));
  CHECK(a.value == value_of(p, x));
  CHECK_THROWS_AS(act(p, Eigen::VectorXd::Zero(3), std::uint64_t{1}), std::invalid_argument);
}

TEST_CASE("gae") {
  SUBCASE("single step") {
    const std::vector<double> r{1.0}, v{0.0};
    CHECK(gae(r, v, 0.0, 1.0, 1.0)[0] == 1.0);
  }
  SUBCASE("all zero") {
    const std::vector<double> z(7, 0.0);
    for (double a : gae(z, z, 0.0, 0.99, 0.95)) CHECK(a == 0.0);
  }
  SUBCASE("nested-sum oracle") {
    Rng rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> r(5), v(5);
      for (int i = 0; i < 5; ++i) {
        r[static_cast<std::size_t>(i)] = n(rng);
        v[static_cast<std::size_t>(i)] = n(rng);
      }
      const double boot = trial % 2 ? n(rng) : 0.0;
      const auto got = gae(r, v, boot, 0.97, 0.9);
      const auto want = gae_nested_sum(r, v, boot, 0.97, 0.9);
      for (std::size_t i = 0; i < 5; ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
  }
  const std::vector<double> one{1.0}, two{1.0, 2.0};
  CHECK_THROWS_AS(gae(one, two, 0.0, 0.9, 0.9), std::invalid_argument);
  CHECK_THROWS_AS(gae(one, one, 0.0, 1.1, 0.9), std::invalid_argument);
}

TEST_CASE("ppo_loss gradient matches central differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    PolicyParams p = random_policy(rng, 3, 2, 6);
    const PpoBatch batch = random_batch(p, rng, 12, true);
    PpoHyper h;
    const PpoLoss l = ppo_loss(p, batch, h, true);
    const auto f = [&](const Eigen::VectorXd& flat) {
      PolicyParams q = p;
      q.set_flat(flat);
      return ppo_loss(q, batch, h, false).total;
    };
    const auto check = compare_gradients(l.grad, numeric_gradient(f, p.flat()), 1e-4);
    CHECK_MESSAGE(check.ok, "worst relative error " << check.worst_relative << " at "
                                                    << check.worst_index);
  }
}

TEST_CASE("ratio one gives the vanilla policy gradient") {
  Rng rng(5);
  const PolicyParams p = random_policy(rng, 3, 2, 6);
  PpoBatch batch = random_batch(p, rng, 10, false);
  for (Eigen::Index j = 0; j < batch.inputs.cols(); ++j) {
    const Eigen::VectorXd mean = p.actor.forward(Eigen::VectorXd(batch.inputs.col(j)));
    batch.old_log_probs[j] = gaussian_log_prob(batch.pre_squash.col(j), mean, p.log_std);
  }
  PpoHyper h;
  h.value_coef = 0.0;
  h.entropy_coef = 0.0;
  const PpoLoss l = ppo_loss(p, batch, h, true);
  CHECK(l.clip_fraction == 0.0);
  // d/dtheta of -mean(A * log pi), by finite differences.
  const auto vanilla = [&](const Eigen::VectorXd& flat) {
    PolicyParams q = p;
    q.set_flat(flat);
    double s = 0.0;
    for (Eigen::Index j = 0; j < batch.inputs.cols(); ++j) {
      const Eigen::VectorXd mean = q.actor.forward(Eigen::VectorXd(batch.inputs.col(j)));
      s -= batch.advantages[j] * gaussian_log_prob(batch.pre_squash.col(j), mean, q.log_std);
    }
    return s / static_cast<double>(batch.inputs.cols());
  };
  const auto check = compare_gradients(l.grad, numeric_gradient(vanilla, p.flat()), 1e-5);
  CHECK(check.ok);
}

TEST_CASE("zero advantages leave the policy gradient at zero") {
  Rng rng(6);
  const PolicyParams p = random_policy(rng, 3, 2, 6);
  PpoBatch batch = random_batch(p, rng, 10, true);
  batch.advantages.setZero();
  PpoHyper h;
  h.entropy_coef = 0.0;
  const PpoLoss l = ppo_loss(p, batch, h, true);
  const Eigen::Index na = p.actor.num_params() + p.log_std.size();
  CHECK(l.grad.head(na).cwiseAbs().maxCoeff() == 0.0);
  CHECK(l.grad.tail(p.critic.num_params()).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("advantage normalization preserves ordering") {
  Rng rng(7);
  std::normal_distribution<double> n(0.0, 3.0);
  RolloutBuffer buf;
  RolloutEpisode ep;
  for (int i = 0; i < 20; ++i) {
    ep.inputs.push_back(Eigen::VectorXd::Constant(2, i));
    ep.pre_squash.push_back(Eigen::VectorXd::Zero(1));
    ep.log_probs.push_back(0.0);
    ep.rewards.push_back(n(rng));
    ep.values.push_back(n(rng));
  }
  ep.terminal = true;
  buf.episodes.push_back(ep);
  PpoHyper h;
  const PpoBatch raw = make_batch(buf, h, false);
  const PpoBatch norm = make_batch(buf, h, true);
  Eigen::Index amax_raw = 0, amax_norm = 0;
  raw.advantages.maxCoeff(&amax_raw);
  norm.advantages.maxCoeff(&amax_norm);
  CHECK(amax_raw == amax_norm);
  CHECK(norm.advantages.mean() == doctest::Approx(0.0).epsilon(1e-12).scale(1.0));
  for (Eigen::Index i = 0; i + 1 < raw.advantages.size(); ++i) {
    CHECK((raw.advantages[i] < raw.advantages[i + 1]) ==
          (norm.advantages[i] < norm.advantages[i + 1]));
  }
  // Returns are computed from raw advantages either way.
  CHECK(raw.returns == norm.returns);

  RolloutBuffer flat = buf;
  for (auto& r : flat.episodes[0].rewards) r = 0.0;
  for (auto& v : flat.episodes[0].values) v = 0.0;
  CHECK(make_batch(flat, h, true).advantages.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("make_batch ignores joint snapshots") {
  RolloutBuffer a;
  RolloutEpisode ep;
  for (int i = 0; i < 5; ++i) {
    ep.inputs.push_back(Eigen::VectorXd::Constant(3, 0.1 * i));
    ep.pre_squash.push_back(Eigen::VectorXd::Constant(2, -0.2 * i));
    ep.log_probs.push_back(-1.0 - i);
    ep.rewards.push_back(i);
    ep.values.push_back(0.5);
  }
  ep.bootstrap = 0.7;
  a.episodes.push_back(ep);
  RolloutBuffer b = a;
  JointSnapshotEpisode snap;
  for (int i = 0; i < 6; ++i) {
    snap.human.push_back(Eigen::VectorXd::Constant(4, 1e6));
    snap.robot.push_back(Eigen::VectorXd::Constant(4, -1e6));
  }
  b.snapshots.push_back(snap);
  PpoHyper h;
  const PpoBatch x = make_batch(a, h);
  const PpoBatch y = make_batch(b, h);
  CHECK(x.inputs == y.inputs);
  CHECK(x.pre_squash == y.pre_squash);
  CHECK(x.old_log_probs == y.old_log_probs);
  CHECK(x.advantages == y.advantages);
  CHECK(x.returns == y.returns);
  // Truncated episode bootstraps from the stored value; terminal does not.
  RolloutBuffer t = a;
  t.episodes[0].terminal = true;
  CHECK(make_batch(t, h, false).returns[4] == doctest::Approx(4.0));
  CHECK(make_batch(a, h, false).returns[4] == doctest::Approx(4.0 + 0.99 * 0.7));
}

TEST_CASE("ppo update improves the surrogate on its own batch") {
  Rng rng(8);
  PolicyParams p = random_policy(rng, 3, 2, 8);
  RolloutBuffer buf;
  RolloutEpisode ep;
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 64; ++i) {
    Eigen::VectorXd x(3);
    x << n(rng), n(rng), n(rng);
    const auto a = act(p, x, rng);
    ep.inputs.push_back(x);
    ep.pre_squash.push_back(a.pre_squash);
    ep.log_probs.push_back(a.log_prob);
    ep.rewards.push_back(a.action[0]);
    ep.values.push_back(a.value);
  }
  ep.terminal = true;
  buf.episodes.push_back(ep);
  PpoHyper h;
  h.minibatch = 16;
  h.lr = 1e-3;
  const PpoBatch batch = make_batch(buf, h);
  const double before = ppo_loss(p, batch, h, false).policy;
  PpoTrainer trainer(p, h);
  Rng shuffle(1);
  const PpoStats stats = trainer.update(p, buf, shuffle);
  CHECK(stats.samples == 64);
  CHECK(ppo_loss(p, batch, h, false).policy < before);
}

TEST_CASE("policy checkpoint round trip") {
  Rng rng(9);
  const PolicyParams p = random_policy(rng, 6, 3, 5);
  std::stringstream ss;
  write_checkpoint(ss, p.to_checkpoint());
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 8) == "ASSISTCK");
  std::stringstream in(bytes);
  const PolicyParams q = PolicyParams::from_checkpoint(read_checkpoint(in));
  CHECK(q.flat() == p.flat());
  CHECK(q.input_dim() == 6);
  CHECK(q.action_dim() == 3);
  std::stringstream truncated(bytes.substr(0, bytes.size() - 4));
  CHECK_THROWS(read_checkpoint(truncated));
  std::string bad = bytes;
  bad[0] = 'X';
  std::stringstream bad_magic(bad);
  CHECK_THROWS(read_checkpoint(bad_magic));
}

TEST_CASE("clip_grad_norm") {
  Eigen::VectorXd g(2);
  g << 3.0, 4.0;
  clip_grad_norm(g, 1.0);
  CHECK(g.norm() == doctest::Approx(1.0));
  g << 0.3, 0.4;
  clip_grad_norm(g, 1.0);
  CHECK(g[0] == 0.3);
}

#pragma once

// Oracles and fixtures shared by the unit and acceptance tests.

#include "assist/harness.hpp"

#include <cmath>
#include <functional>
#include <numbers>

namespace assist::testing {

// Analytic 2-link inverse kinematics, elbow-up branch (matches the home pose).
inline Eigen::Vector2d ik_2link(const Eigen::Vector2d& goal, double l1, double l2) {
  const double r2 = goal.squaredNorm();
  double c2 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
  c2 = std::clamp(c2, -1.0, 1.0);
  const double q2 = std::acos(c2);
  const double q1 = std::atan2(goal.y(), goal.x()) -
                    std::atan2(l2 * std::sin(q2), l1 + l2 * std::cos(q2));
  return {q1, q2};
}

// Joint goal for a tool point half a tolerance out from the mouth along the
// facing direction (wrist aligned with the head for drinking).
inline Eigen::VectorXd ik_goal(const Environment& env, double head_angle,
                               const Eigen::Vector2d& mouth) {
  const EnvParams& p = env.params();
  const Eigen::Vector2d facing(-std::cos(head_angle), -std::sin(head_angle));
  const Eigen::Vector2d goal = mouth + 0.5 * env.spec().target_tolerance * facing;
  const Eigen::Vector2d q = ik_2link(goal, p.link1, p.link2);
  Eigen::VectorXd q_goal(env.robot_joint_dim());
  q_goal.head<2>() = q;
  if (q_goal.size() == 3) q_goal[2] = head_angle - q[0] - q[1];
  return q_goal;
}

// Robot controller servoing to ik_goal. The head angle and mouth come from
// the shared joint history, so it tracks a moving head and works with any
// episode seed.
inline Controller ik_robot(const Environment& env) {
  const int nq = env.robot_joint_dim();
  const double step = env.params().max_joint_speed * env.params().dt;
  Controller c;
  c.input = [&env, nq](const Eigen::VectorXd& obs, const JointSnapshotEpisode& history, int t) {
    const Eigen::VectorXd& h = history.human[static_cast<std::size_t>(t)];
    Eigen::VectorXd in(2 * nq);
    in << obs.head(nq), ik_goal(env, h[0], h.tail<2>());
    return in;
  };
  c.act = [nq, step](const Eigen::VectorXd& in, Rng*) {
    ActResult r;
    r.action.resize(nq);
    for (int i = 0; i < nq; ++i) r.action[i] = std::clamp((in[nq + i] - in[i]) / step, -1.0, 1.0);
    return r;
  };
  return c;
}

inline Controller zero_controller(int dim) {
  return scripted_controller([dim](const Eigen::VectorXd&) { return Eigen::VectorXd::Zero(dim); });
}

// Environment params for a motionless human head.
inline EnvParams static_human_params() {
  EnvParams p;
  p.head_sway_amplitude = 0.0;
  return p;
}

// Central-difference gradient of f at x.
inline Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                        Eigen::VectorXd x, double eps = 1e-6) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double up = f(x);
    x[i] = orig - eps;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

struct GradientCheck {
  double worst_relative = 0.0;
  Eigen::Index worst_index = -1;
  bool ok = true;
};

// Relative error |a - n| / max(|a|, |n|), with an absolute floor for entries
// that are zero up to round-off.
inline GradientCheck compare_gradients(const Eigen::VectorXd& analytic,
                                       const Eigen::VectorXd& numeric, double rel_tol,
                                       double abs_floor = 1e-9) {
  GradientCheck r;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    const double diff = std::abs(a - n);
    if (diff <= abs_floor) continue;
    const double rel = diff / std::max(std::abs(a), std::abs(n));
    if (rel > r.worst_relative) {
      r.worst_relative = rel;
      r.worst_index = i;
    }
  }
  r.ok = r.worst_relative <= rel_tol;
  return r;
}

// Feature row with non-positive integer-valued penalty counts scaled by `scale`.
inline FeatureRow random_feature_row(Rng& rng, double scale, int max_count = 6) {
  std::uniform_int_distribution<int> count(0, max_count);
  return {-scale * count(rng), -scale * count(rng), -scale * count(rng)};
}

// Boltzmann-rational demonstrations: each demo is picked from K + 1 random
// candidates with probability proportional to exp(w* . phi); the other K
// become its alternatives.
inline DemoSet boltzmann_demos(const Eigen::VectorXd& w_star, int n, int k, Rng& rng,
                               double scale) {
  const Eigen::Index m = w_star.size();
  DemoSet d;
  d.features.resize(n, m);
  std::uniform_int_distribution<int> count(0, 6);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int j = 0; j < n; ++j) {
    Eigen::MatrixXd cand(k + 1, m);
    for (int c = 0; c <= k; ++c) {
      for (Eigen::Index i = 0; i < m; ++i) cand(c, i) = -scale * count(rng);
    }
    const Eigen::VectorXd score = cand * w_star;
    const Eigen::VectorXd p = (score.array() - score.maxCoeff()).exp();
    double u = unif(rng) * p.sum();
    int pick = 0;
    for (; pick < k; ++pick) {
      u -= p[pick];
      if (u <= 0.0) break;
    }
    d.features.row(j) = cand.row(pick);
    Eigen::MatrixXd alt(k, m);
    for (int c = 0, a = 0; c <= k; ++c) {
      if (c != pick) alt.row(a++) = cand.row(c);
    }
    d.alternatives.push_back(std::move(alt));
  }
  return d;
}

// Small, fast training config for harness tests.
inline ExperimentConfig tiny_config(RewardMode mode) {
  ExperimentConfig c;
  c.reward_mode = mode;
  c.epochs = 4;
  c.episodes_per_epoch = 2;
  c.eval_every = 2;
  c.eval_episodes = 2;
  c.e_k = 2;
  c.hidden = 8;
  c.task.horizon = 30;
  c.anticipation.hidden = 8;
  c.anticipation_train_steps = 5;
  c.utility.n_demos = 3;
  c.utility.n_alternatives = 2;
  c.utility.mcmc.steps = 2000;
  c.utility.mcmc.burn_in = 500;
  c.utility.mcmc.adaptation_window = 250;
  return c;
}

}  // namespace assist::testing

#include "assist/core.hpp"

#include <cmath>
#include <stdexcept>

namespace assist {

namespace {

// Rows are (force, high_force, hit) as tabulated for the five user settings.
constexpr std::array<std::array<double, 3>, kNumPreferenceSettings>
    kSettingTable = {{
        {0.01, 0.05, 1.00},
        {0.01, 0.50, 10.0},
        {0.10, 5.00, 1.00},
        {0.001, 0.005, 0.10},
        {0.10, 0.005, 10.0},
    }};

}  // namespace

PreferenceWeights PreferenceWeights::from_setting(int id) {
  if (id < 0 || id >= kNumPreferenceSettings) {
    throw std::invalid_argument("unknown preference setting " +
                                std::to_string(id));
  }
  const auto& row = kSettingTable[static_cast<std::size_t>(id)];
  PreferenceWeights w;
  w.force = row[0];
  w.high_force = row[1];
  w.hit = row[2];
  w.setting_id = id;
  return w;
}

PreferenceWeights PreferenceWeights::explicit_weights(double hit, double force,
                                                      double high_force) {
  for (double v : {hit, force, high_force}) {
    if (!std::isfinite(v) || v < 0.0) {
      throw std::invalid_argument("preference weights must be finite and >= 0");
    }
  }
  PreferenceWeights w;
  w.hit = hit;
  w.force = force;
  w.high_force = high_force;
  return w;
}

WeightEstimate::WeightEstimate(const FeatureRow& w) : w_(w) {
  if (!w.allFinite()) throw std::invalid_argument("non-finite weight estimate");
  if (w.norm() > 1.0 + kBallTolerance) {
    throw std::invalid_argument("weight estimate outside unit ball");
  }
}

WeightEstimate WeightEstimate::clamped_to_ball(const FeatureRow& w) {
  const double n = w.norm();
  if (n > 1.0) return WeightEstimate(w / n);
  return WeightEstimate(w);
}

FeatureVector episode_features(const Trajectory& traj) {
  if (traj.steps.empty()) throw std::invalid_argument("empty trajectory");
  FeatureVector f;
  for (const auto& s : traj.steps) {
    f.hit += s.penalties.hit;
    f.force += s.penalties.force;
    f.high_force += s.penalties.high_force;
  }
  return f;
}

double preference_reward(const FeatureVector& f, const PreferenceWeights& w) {
  return w.hit * f.hit + w.force * f.force + w.high_force * f.high_force;
}

double weighted_features(const FeatureVector& f, const FeatureRow& w) {
  return w[0] * f.hit + w[1] * f.force + w[2] * f.high_force;
}

double human_reward(double task, double pref) { return task + pref; }

double robot_reward(double task, double est_pref, double gate) {
  if (!(gate >= 0.0 && gate <= 1.0)) throw std::invalid_argument("invalid gate");
  return task + gate * est_pref;
}

double episode_task_reward(const Trajectory& traj) {
  double total = 0.0;
  for (const auto& s : traj.steps) total += s.task_reward;
  return total;
}

RewardBreakdown episode_breakdown(const Trajectory& traj,
                                  const PreferenceWeights& truth,
                                  const WeightEstimate& estimate, double gate,
                                  bool shared_rewards) {
  const FeatureVector f = episode_features(traj);
  RewardBreakdown b;
  b.task = episode_task_reward(traj);
  b.pref_true = preference_reward(f, truth);
  b.pref_estimated = weighted_features(f, estimate.w());
  b.gate = gate;
  b.human_total = human_reward(b.task, b.pref_true);
  b.robot_total = shared_rewards ? b.human_total
                                 : robot_reward(b.task, b.pref_estimated, gate);
  return b;
}

}  // namespace assist

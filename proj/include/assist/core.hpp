#pragma once

// Shared domain types and the reward algebra that splits the human's reward
// into a task part and a weighted preference part.

#include <Eigen/Dense>

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace assist {

constexpr int kFeatureDim = 3;
using FeatureRow = Eigen::Matrix<double, kFeatureDim, 1>;

// Per-step penalty events. Values are non-positive; all zero without contact.
struct PenaltyEvents {
  double hit = 0.0;
  double force = 0.0;
  double high_force = 0.0;
};

// Summed penalty events of one episode, in (hit, force, high_force) order.
struct FeatureVector {
  double hit = 0.0;
  double force = 0.0;
  double high_force = 0.0;

  FeatureRow as_row() const { return {hit, force, high_force}; }
};

// True (hidden) human weights. Raw and non-negative, not normalized.
struct PreferenceWeights {
  double hit = 0.0;
  double force = 0.0;
  double high_force = 0.0;
  std::optional<int> setting_id;

  static PreferenceWeights from_setting(int id);
  static PreferenceWeights explicit_weights(double hit, double force,
                                            double high_force);
  FeatureRow as_row() const { return {hit, force, high_force}; }
};

constexpr int kNumPreferenceSettings = 5;

// Inferred weight vector constrained to the closed unit ball.
class WeightEstimate {
 public:
  WeightEstimate() : w_(FeatureRow::Zero()) {}
  explicit WeightEstimate(const FeatureRow& w);

  // Projects radially onto the ball when the norm exceeds one.
  static WeightEstimate clamped_to_ball(const FeatureRow& w);

  const FeatureRow& w() const { return w_; }
  double operator[](int i) const { return w_[i]; }

 private:
  FeatureRow w_;
};

constexpr double kBallTolerance = 1e-12;

// Simulator state. Derived quantities (tool tip, mouth) are stored so a step
// record is self-describing.
struct EnvState {
  Eigen::VectorXd robot_joints;
  Eigen::Vector2d tool_tip = Eigen::Vector2d::Zero();
  Eigen::VectorXd human_joints;
  Eigen::Vector2d mouth_pos = Eigen::Vector2d::Zero();
  std::pair<Eigen::Vector2d, Eigen::Vector2d> body_segment{
      Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero()};
  int t = 0;
  bool carried_payload = false;

  int hold_count = 0;
  bool in_contact = false;
  bool succeeded = false;
  double sway_phase = 0.0;
  std::vector<bool> wiped;
};

struct Step {
  EnvState state;
  Eigen::VectorXd obs_h;
  Eigen::VectorXd obs_r;
  Eigen::VectorXd action_h;
  Eigen::VectorXd action_r;
  PenaltyEvents penalties;
  double task_reward = 0.0;
};

struct Trajectory {
  std::vector<Step> steps;
  EnvState final_state;
  bool success = false;

  std::size_t length() const { return steps.size(); }
};

struct RewardBreakdown {
  double task = 0.0;
  double pref_true = 0.0;
  double pref_estimated = 0.0;
  double gate = 0.0;
  double human_total = 0.0;
  double robot_total = 0.0;
};

FeatureVector episode_features(const Trajectory& traj);

double preference_reward(const FeatureVector& f, const PreferenceWeights& w);
double weighted_features(const FeatureVector& f, const FeatureRow& w);

double human_reward(double task, double pref);

// task + gate * est_pref; gate must lie in [0, 1].
double robot_reward(double task, double est_pref, double gate);

double episode_task_reward(const Trajectory& traj);

// Episode-level composition. With `shared_rewards` the robot receives the
// human's reward (co-optimization baseline).
RewardBreakdown episode_breakdown(const Trajectory& traj,
                                  const PreferenceWeights& truth,
                                  const WeightEstimate& estimate, double gate,
                                  bool shared_rewards = false);

}  // namespace assist

#pragma once

// Planar kinematic analogue of the assistive tasks: a 2-link robot arm (plus
// a wrist for drinking) serves a human whose head is a disc on a neck segment.
// Forces are proxied by contact speed and penetration depth.

#include "assist/core.hpp"

#include <cstdint>
#include <string>

namespace assist {

enum class TaskKind { kFeed, kDrink, kBathe };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& name);

struct TaskSpec {
  TaskKind task_kind = TaskKind::kFeed;
  double target_tolerance = 0.05;
  int hold_steps = 10;
  int horizon = 200;

  void validate() const;
};

// Geometry and contact model. Defaults are the documented analogue values.
struct EnvParams {
  double link1 = 0.5;
  double link2 = 0.4;
  double dt = 0.05;
  double max_joint_speed = 1.5;
  double home_shoulder = -1.0;
  double home_elbow = 2.0;
  double home_wrist = 0.0;

  Eigen::Vector2d neck_base{0.7, -0.2};
  double neck_length = 0.5;
  double neck_radius = 0.05;
  double head_radius = 0.1;
  double mouth_inset = 0.065;
  // Head contact this close to the mouth is target contact, not a hit.
  double mouth_zone_radius = 0.08;
  double head_angle_limit = 0.5;
  double initial_head_spread = 0.2;
  double max_mouth_offset = 0.02;
  double human_head_speed = 1.0;
  double human_mouth_speed = 0.2;
  double head_sway_amplitude = 0.1;
  int head_sway_period = 60;

  double high_force_depth = 0.02;
  // Deeper than this into the head or neck the human flinches away.
  double flinch_depth = 0.06;
  double force_floor = 0.1;
  double tissue_resistance = 0.5;
  double flinch_angle = 0.05;

  double distance_weight = 1.0;
  double delivery_bonus = 10.0;
  double orientation_tolerance = 0.2;

  Eigen::Vector2d arm_start{0.35, -0.3};
  Eigen::Vector2d arm_end{0.75, -0.3};
  double arm_radius = 0.04;
  int wipe_bins = 20;
  double wipe_success_fraction = 0.8;
  double wipe_bonus = 1.0;
};

struct StepResult {
  EnvState state;
  Eigen::VectorXd obs_h;
  Eigen::VectorXd obs_r;
  double task_reward = 0.0;
  PenaltyEvents events;
  bool done = false;
};

struct ResetResult {
  EnvState state;
  Eigen::VectorXd obs_h;
  Eigen::VectorXd obs_r;
};

class Environment {
 public:
  static constexpr const char* kVersion = "planar-assist-env/1";

  explicit Environment(TaskSpec spec, EnvParams params = {});

  const TaskSpec& spec() const { return spec_; }
  const EnvParams& params() const { return params_; }

  int robot_action_dim() const;
  int human_action_dim() const { return 2; }
  int robot_obs_dim() const;
  int human_obs_dim() const { return 8; }
  int robot_joint_dim() const { return robot_action_dim(); }
  int human_joint_dim() const { return 2; }

  // Versioned description recorded in output artifacts.
  std::string spec_string() const;

  ResetResult reset(std::uint64_t seed) const;
  StepResult step(const EnvState& state, const Eigen::VectorXd& a_h,
                  const Eigen::VectorXd& a_r) const;

  Eigen::VectorXd observe_robot(const EnvState& s) const;
  Eigen::VectorXd observe_human(const EnvState& s) const;

  Eigen::Vector2d forward_kinematics(const Eigen::VectorXd& q) const;
  Eigen::Vector2d head_center(const Eigen::VectorXd& human_joints) const;
  Eigen::Vector2d mouth_position(const Eigen::VectorXd& human_joints) const;
  // Current goal point: the mouth, or the next unwiped arm point for bathing.
  Eigen::Vector2d target_point(const EnvState& s) const;
  double tool_orientation(const EnvState& s) const;

  // Deepest penetration of `p` into the head, neck, or (bathing) arm region;
  // negative when outside all regions.
  double body_depth(const EnvState& s, const Eigen::Vector2d& p) const;
  double head_neck_depth(const EnvState& s, const Eigen::Vector2d& p) const;

 private:
  void refresh_derived(EnvState& s) const;
  bool at_target(const EnvState& s) const;
  bool non_target_contact(const EnvState& s, const Eigen::Vector2d& p) const;

  TaskSpec spec_;
  EnvParams params_;
};

bool success(const Trajectory& traj);

double point_segment_distance(const Eigen::Vector2d& p,
                              const Eigen::Vector2d& a,
                              const Eigen::Vector2d& b);

}  // namespace assist

#include "assist/env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace assist {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void check_action(const Eigen::VectorXd& a, int dim, const char* who) {
  if (a.size() != dim) {
    throw std::invalid_argument(std::string(who) + " action dimension mismatch");
  }
  if (!a.allFinite()) {
    throw std::invalid_argument(std::string(who) + " action contains NaN");
  }
}

double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

}  // namespace

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kFeed:
      return "feed";
    case TaskKind::kDrink:
      return "drink";
    case TaskKind::kBathe:
      return "bathe";
  }
  return "unknown";
}

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "feed") return TaskKind::kFeed;
  if (name == "drink") return TaskKind::kDrink;
  if (name == "bathe") return TaskKind::kBathe;
  throw std::invalid_argument("unknown task kind '" + name + "'");
}

void TaskSpec::validate() const {
  if (!(target_tolerance > 0.0)) {
    throw std::invalid_argument("target_tolerance must be > 0");
  }
  if (hold_steps < 1) throw std::invalid_argument("hold_steps must be >= 1");
  if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
}

double point_segment_distance(const Eigen::Vector2d& p,
                              const Eigen::Vector2d& a,
                              const Eigen::Vector2d& b) {
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  double u = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
  u = std::clamp(u, 0.0, 1.0);
  return (p - (a + u * ab)).norm();
}

Environment::Environment(TaskSpec spec, EnvParams params)
    : spec_(spec), params_(std::move(params)) {
  spec_.validate();
  if (params_.dt <= 0.0 || params_.max_joint_speed <= 0.0) {
    throw std::invalid_argument("dt and max_joint_speed must be > 0");
  }
  if (params_.head_sway_period < 1 || params_.wipe_bins < 1 ||
      params_.flinch_depth < params_.high_force_depth) {
    throw std::invalid_argument("invalid environment parameters");
  }
}

int Environment::robot_action_dim() const {
  return spec_.task_kind == TaskKind::kDrink ? 3 : 2;
}

int Environment::robot_obs_dim() const { return robot_action_dim() + 6; }

std::string Environment::spec_string() const {
  std::ostringstream os;
  os.precision(15);
  os << kVersion << " task=" << to_string(spec_.task_kind)
     << " tol=" << spec_.target_tolerance << " hold=" << spec_.hold_steps
     << " horizon=" << spec_.horizon << " dt=" << params_.dt
     << " sway=" << params_.head_sway_amplitude << "/"
     << params_.head_sway_period << " hf_depth=" << params_.high_force_depth
     << " flinch_depth=" << params_.flinch_depth;
  return os.str();
}

Eigen::Vector2d Environment::forward_kinematics(const Eigen::VectorXd& q) const {
  const double a1 = q[0];
  const double a2 = q[0] + q[1];
  return {params_.link1 * std::cos(a1) + params_.link2 * std::cos(a2),
          params_.link1 * std::sin(a1) + params_.link2 * std::sin(a2)};
}

Eigen::Vector2d Environment::head_center(
    const Eigen::VectorXd& human_joints) const {
  const double th = human_joints[0];
  return params_.neck_base +
         params_.neck_length * Eigen::Vector2d(-std::sin(th), std::cos(th));
}

Eigen::Vector2d Environment::mouth_position(
    const Eigen::VectorXd& human_joints) const {
  const double th = human_joints[0];
  const Eigen::Vector2d facing(-std::cos(th), -std::sin(th));
  const double reach =
      params_.head_radius - params_.mouth_inset + human_joints[1];
  return head_center(human_joints) + reach * facing;
}

Eigen::Vector2d Environment::target_point(const EnvState& s) const {
  if (spec_.task_kind != TaskKind::kBathe) return s.mouth_pos;
  const Eigen::Vector2d a = params_.arm_start;
  const Eigen::Vector2d b = params_.arm_end;
  Eigen::Vector2d normal(-(b - a).y(), (b - a).x());
  normal.normalize();
  if (normal.dot(-a) < 0.0) normal = -normal;
  const double inset = params_.arm_radius - 0.5 * params_.high_force_depth;
  const int bins = params_.wipe_bins;
  double best = std::numeric_limits<double>::infinity();
  Eigen::Vector2d best_pt = b + inset * normal;
  for (int i = 0; i < bins; ++i) {
    if (static_cast<std::size_t>(i) < s.wiped.size() &&
        s.wiped[static_cast<std::size_t>(i)]) {
      continue;
    }
    const double u = (i + 0.5) / bins;
    const Eigen::Vector2d pt = a + u * (b - a) + inset * normal;
    const double d = (pt - s.tool_tip).norm();
    if (d < best) {
      best = d;
      best_pt = pt;
    }
  }
  return best_pt;
}

double Environment::tool_orientation(const EnvState& s) const {
  return s.robot_joints.sum();
}

double Environment::head_neck_depth(const EnvState& s,
                                    const Eigen::Vector2d& p) const {
  const Eigen::Vector2d c = head_center(s.human_joints);
  const double head = params_.head_radius - (p - c).norm();
  const double neck = params_.neck_radius -
                      point_segment_distance(p, params_.neck_base, c);
  return std::max(head, neck);
}

double Environment::body_depth(const EnvState& s,
                               const Eigen::Vector2d& p) const {
  double d = head_neck_depth(s, p);
  if (spec_.task_kind == TaskKind::kBathe) {
    const double arm = params_.arm_radius -
        point_segment_distance(p, params_.arm_start, params_.arm_end);
    d = std::max(d, arm);
  }
  return d;
}

void Environment::refresh_derived(EnvState& s) const {
  s.tool_tip = forward_kinematics(s.robot_joints);
  s.mouth_pos = mouth_position(s.human_joints);
  if (spec_.task_kind == TaskKind::kBathe) {
    s.body_segment = {params_.arm_start, params_.arm_end};
  } else {
    s.body_segment = {params_.neck_base, head_center(s.human_joints)};
  }
}

bool Environment::at_target(const EnvState& s) const {
  if (spec_.task_kind == TaskKind::kBathe) return false;
  return (s.tool_tip - s.mouth_pos).norm() <= spec_.target_tolerance;
}

bool Environment::non_target_contact(const EnvState& s, const Eigen::Vector2d& p) const {
  if (head_neck_depth(s, p) <= 0.0) return false;
  if (spec_.task_kind == TaskKind::kBathe) return true;
  return (p - s.mouth_pos).norm() > params_.mouth_zone_radius;
}

Eigen::VectorXd Environment::observe_robot(const EnvState& s) const {
  const int nq = robot_joint_dim();
  Eigen::VectorXd o(robot_obs_dim());
  o.head(nq) = s.robot_joints;
  o.segment<2>(nq) = s.tool_tip;
  o.segment<2>(nq + 2) = s.mouth_pos;
  o.segment<2>(nq + 4) = target_point(s) - s.tool_tip;
  return o;
}

Eigen::VectorXd Environment::observe_human(const EnvState& s) const {
  Eigen::VectorXd o(human_obs_dim());
  o.head<2>() = s.human_joints;
  o.segment<2>(2) = s.mouth_pos;
  o.segment<2>(4) = s.tool_tip;
  o.segment<2>(6) = s.tool_tip - s.mouth_pos;
  return o;
}

ResetResult Environment::reset(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> head(-params_.initial_head_spread,
                                              params_.initial_head_spread);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);

  EnvState s;
  s.robot_joints = Eigen::VectorXd::Zero(robot_joint_dim());
  s.robot_joints[0] = params_.home_shoulder;
  s.robot_joints[1] = params_.home_elbow;
  if (robot_joint_dim() == 3) s.robot_joints[2] = params_.home_wrist;
  s.human_joints = Eigen::VectorXd::Zero(2);
  s.human_joints[0] = head(rng);
  s.sway_phase = phase(rng);
  s.t = 0;
  s.carried_payload = spec_.task_kind != TaskKind::kBathe;
  if (spec_.task_kind == TaskKind::kBathe) {
    s.wiped.assign(static_cast<std::size_t>(params_.wipe_bins), false);
  }
  refresh_derived(s);
  return {s, observe_human(s), observe_robot(s)};
}

StepResult Environment::step(const EnvState& state, const Eigen::VectorXd& a_h,
                             const Eigen::VectorXd& a_r) const {
  check_action(a_h, human_action_dim(), "human");
  check_action(a_r, robot_action_dim(), "robot");
  if (state.succeeded || state.t >= spec_.horizon) {
    throw std::logic_error("step called on a terminal state");
  }
  const EnvParams& p = params_;
  EnvState s = state;
  const Eigen::Vector2d old_tip = state.tool_tip;

  // Human: controlled head and mouth motion plus involuntary sway.
  const double w = kTwoPi / p.head_sway_period;
  const double sway = p.head_sway_amplitude *
                      (std::sin(w * (s.t + 1) + s.sway_phase) -
                       std::sin(w * s.t + s.sway_phase));
  s.human_joints[0] = std::clamp(
      s.human_joints[0] + clamp_unit(a_h[0]) * p.human_head_speed * p.dt + sway,
      -p.head_angle_limit, p.head_angle_limit);
  s.human_joints[1] = std::clamp(
      s.human_joints[1] + clamp_unit(a_h[1]) * p.human_mouth_speed * p.dt, 0.0,
      p.max_mouth_offset);
  refresh_derived(s);

  // Robot: bounded joint velocities; soft tissue resists motion into the body.
  Eigen::VectorXd dq(a_r.size());
  for (Eigen::Index i = 0; i < a_r.size(); ++i) {
    dq[i] = clamp_unit(a_r[i]) * p.max_joint_speed * p.dt;
  }
  auto move = [&](double scale) {
    Eigen::VectorXd q = state.robot_joints + scale * dq;
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      q[i] = std::clamp(q[i], -std::numbers::pi, std::numbers::pi);
    }
    return q;
  };
  s.robot_joints = move(1.0);
  refresh_derived(s);
  {
    const double before = body_depth(s, old_tip);
    const double after = body_depth(s, s.tool_tip);
    const bool penalized_zone =
        non_target_contact(s, s.tool_tip) ||
        after > p.high_force_depth;
    if (after > 0.0 && after > before && penalized_zone) {
      s.robot_joints = move(p.tissue_resistance);
      refresh_derived(s);
    }
  }

  // Contact events.
  StepResult out;
  const double depth = body_depth(s, s.tool_tip);
  const bool non_target = non_target_contact(s, s.tool_tip);
  const bool excessive = depth > p.high_force_depth;
  const double speed = (s.tool_tip - old_tip).norm() / p.dt;
  if (non_target && !state.in_contact &&
      (s.carried_payload || spec_.task_kind == TaskKind::kBathe)) {
    out.events.hit = -1.0;
  }
  if (non_target || excessive) out.events.force = -(p.force_floor + speed);
  if (excessive) {
    out.events.high_force = -1.0;
    if (head_neck_depth(s, s.tool_tip) > p.flinch_depth) {
      // Flinch: the head rotates away from the tool.
      const double th = s.human_joints[0];
      const Eigen::Vector2d dc(-std::cos(th), -std::sin(th));
      const double dir =
          (head_center(s.human_joints) - s.tool_tip).dot(dc) >= 0.0 ? 1.0 : -1.0;
      s.human_joints[0] = std::clamp(th + dir * p.flinch_angle,
                                     -p.head_angle_limit, p.head_angle_limit);
      refresh_derived(s);
      s.hold_count = 0;
    }
  }
  s.in_contact = non_target;
  s.t += 1;

  // Task progress.
  double r = 0.0;
  if (spec_.task_kind == TaskKind::kBathe) {
    const Eigen::Vector2d a = p.arm_start;
    const Eigen::Vector2d b = p.arm_end;
    const double arm_depth =
        p.arm_radius - point_segment_distance(s.tool_tip, a, b);
    int newly = 0;
    if (arm_depth > 0.0 && arm_depth <= p.high_force_depth) {
      const double u = std::clamp((s.tool_tip - a).dot(b - a) /
                                      (b - a).squaredNorm(),
                                  0.0, 1.0 - 1e-12);
      const auto bin = static_cast<std::size_t>(u * p.wipe_bins);
      if (!s.wiped[bin]) {
        s.wiped[bin] = true;
        ++newly;
      }
    }
    r = -p.distance_weight * (target_point(s) - s.tool_tip).norm() +
        p.wipe_bonus * newly;
    const auto wiped = std::count(s.wiped.begin(), s.wiped.end(), true);
    if (static_cast<double>(wiped) >=
        p.wipe_success_fraction * static_cast<double>(p.wipe_bins)) {
      s.succeeded = true;
      r += p.delivery_bonus;
    }
  } else {
    bool holding = at_target(s);
    if (spec_.task_kind == TaskKind::kDrink) {
      const double err = std::remainder(tool_orientation(s) - s.human_joints[0],
                                        kTwoPi);
      holding = holding && std::abs(err) <= p.orientation_tolerance;
    }
    s.hold_count = holding ? s.hold_count + 1 : 0;
    r = -p.distance_weight * (s.mouth_pos - s.tool_tip).norm();
    if (s.hold_count >= spec_.hold_steps) {
      s.succeeded = true;
      s.carried_payload = false;
      r += p.delivery_bonus;
    }
  }

  out.task_reward = r;
  out.done = s.succeeded || s.t >= spec_.horizon;
  out.obs_h = observe_human(s);
  out.obs_r = observe_robot(s);
  out.state = std::move(s);
  return out;
}

bool success(const Trajectory& traj) {
  if (traj.steps.empty()) return false;
  return traj.final_state.succeeded;
}

}  // namespace assist

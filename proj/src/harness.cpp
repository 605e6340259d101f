#include "assist/harness.hpp"

#include <cmath>
#include <deque>
#include <filesystem>

namespace assist {

namespace {

// Seed streams.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kTrainStream = 2;
constexpr std::uint64_t kEpisodeStream = 3;
constexpr std::uint64_t kUtilityStream = 4;
constexpr std::uint64_t kEvalStream = 5;

constexpr int kHumanInfoDim = 4;

FeatureVector as_features(const PenaltyEvents& e) { return {e.hit, e.force, e.high_force}; }

[[noreturn]] void numerical_abort(const Agents& agents,
                                  const std::optional<std::filesystem::path>& dir,
                                  const std::string& what) {
  std::string msg = what;
  if (dir) {
    try {
      save_agents(agents, *dir, "abort_");
      msg += " (abort checkpoints written to " + dir->string() + ")";
    } catch (const std::exception& e) {
      msg += std::string(" (abort checkpoint failed: ") + e.what() + ")";
    }
  }
  throw RunError(ErrorCategory::kNumerical, msg);
}

bool finite_stats(const PpoStats& s) {
  return std::isfinite(s.policy_loss) && std::isfinite(s.value_loss) &&
         std::isfinite(s.entropy) && std::isfinite(s.approx_kl);
}

}  // namespace

Eigen::VectorXd human_joint_info(const EnvState& s) {
  Eigen::VectorXd v(kHumanInfoDim);
  v << s.human_joints[0], s.human_joints[1], s.mouth_pos.x(), s.mouth_pos.y();
  return v;
}

Eigen::VectorXd robot_joint_info(const EnvState& s) {
  Eigen::VectorXd v(s.robot_joints.size() + 2);
  v << s.robot_joints, s.tool_tip;
  return v;
}

Controller policy_controller(const PolicyParams& params,
                             const AnticipationModel* anticipation) {
  Controller c;
  if (anticipation) {
    c.input = [anticipation](const Eigen::VectorXd& obs, const JointSnapshotEpisode& history,
                             int t) {
      const JointWindow w = make_window(history, t, anticipation->config().k_in);
      // Fed as displacement from the current frame.
      Eigen::MatrixXd pred = anticipation->predict(w);
      pred.rowwise() -= history.human[static_cast<std::size_t>(t)].transpose();
      return augment_observation(obs, pred, anticipation->config().k_max);
    };
  } else {
    c.input = [](const Eigen::VectorXd& obs, const JointSnapshotEpisode&, int) { return obs; };
  }
  c.act = [&params](const Eigen::VectorXd& input, Rng* rng) {
    if (rng) return act(params, input, *rng);
    ActResult r;
    r.action = act_deterministic(params, input);
    r.value = value_of(params, input);
    return r;
  };
  return c;
}

Controller scripted_controller(std::function<Eigen::VectorXd(const Eigen::VectorXd& obs)> fn) {
  Controller c;
  c.input = [](const Eigen::VectorXd& obs, const JointSnapshotEpisode&, int) { return obs; };
  c.act = [fn = std::move(fn)](const Eigen::VectorXd& input, Rng*) {
    ActResult r;
    r.action = fn(input);
    return r;
  };
  return c;
}

double human_step_reward(const Step& step, const PreferenceWeights& truth) {
  return human_reward(step.task_reward, preference_reward(as_features(step.penalties), truth));
}

double robot_step_reward(const Step& step, const RewardRouting& routing) {
  switch (routing.mode) {
    case RewardMode::kMisaligned:
    case RewardMode::kOursNoUtility:
      return step.task_reward;
    case RewardMode::kCoOpt:
      return human_step_reward(step, routing.truth);
    case RewardMode::kOursFull:
      return robot_reward(step.task_reward,
                          weighted_features(as_features(step.penalties),
                                            routing.estimate.w_hat.w()),
                          routing.estimate.gate);
  }
  throw std::logic_error("unhandled reward mode");
}

EpisodeRollout run_episode(const Environment& env, std::uint64_t env_seed,
                           const Controller& robot, const Controller& human,
                           const RewardRouting& routing, Rng* rng) {
  ResetResult r = env.reset(env_seed);
  EnvState state = std::move(r.state);
  Eigen::VectorXd obs_h = std::move(r.obs_h);
  Eigen::VectorXd obs_r = std::move(r.obs_r);

  EpisodeRollout out;
  out.snapshots.human.push_back(human_joint_info(state));
  out.snapshots.robot.push_back(robot_joint_info(state));
  const auto horizon = static_cast<std::size_t>(env.spec().horizon);
  out.trajectory.steps.reserve(horizon);

  while (true) {
    const int t = state.t;
    const Eigen::VectorXd in_r = robot.input(obs_r, out.snapshots, t);
    const Eigen::VectorXd in_h = human.input(obs_h, out.snapshots, t);
    ActResult ar = robot.act(in_r, rng);
    ActResult ah = human.act(in_h, rng);
    StepResult sr = env.step(state, ah.action, ar.action);

    Step step;
    step.state = std::move(state);
    step.obs_h = obs_h;
    step.obs_r = obs_r;
    step.action_h = ah.action;
    step.action_r = ar.action;
    step.penalties = sr.events;
    step.task_reward = sr.task_reward;

    out.robot.inputs.push_back(in_r);
    out.robot.pre_squash.push_back(std::move(ar.pre_squash));
    out.robot.log_probs.push_back(ar.log_prob);
    out.robot.values.push_back(ar.value);
    out.robot.rewards.push_back(robot_step_reward(step, routing));
    out.human.inputs.push_back(in_h);
    out.human.pre_squash.push_back(std::move(ah.pre_squash));
    out.human.log_probs.push_back(ah.log_prob);
    out.human.values.push_back(ah.value);
    out.human.rewards.push_back(human_step_reward(step, routing.truth));
    out.trajectory.steps.push_back(std::move(step));

    state = std::move(sr.state);
    obs_h = std::move(sr.obs_h);
    obs_r = std::move(sr.obs_r);
    out.snapshots.human.push_back(human_joint_info(state));
    out.snapshots.robot.push_back(robot_joint_info(state));
    if (sr.done) break;
  }

  const bool terminal = state.succeeded;
  out.robot.terminal = out.human.terminal = terminal;
  // Time-limit truncation bootstraps from the critic.
  if (!terminal && rng) {
    out.robot.bootstrap = robot.act(robot.input(obs_r, out.snapshots, state.t), nullptr).value;
    out.human.bootstrap = human.act(human.input(obs_h, out.snapshots, state.t), nullptr).value;
  }
  out.trajectory.final_state = std::move(state);
  out.trajectory.success = success(out.trajectory);
  return out;
}

Metrics aggregate_metrics(std::vector<EpisodeLog> logs, int epoch, double gate) {
  Metrics m;
  m.epoch = epoch;
  m.gate = gate;
  m.episodes = static_cast<int>(logs.size());
  if (logs.empty()) return m;
  for (const auto& l : logs) {
    m.human_reward += l.breakdown.human_total;
    m.task_reward += l.breakdown.task;
    m.robot_reward += l.breakdown.robot_total;
    m.hit += l.features.hit;
    m.force += l.features.force;
    m.high_force += l.features.high_force;
    m.success_rate += l.success ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(logs.size());
  m.human_reward /= n;
  m.task_reward /= n;
  m.robot_reward /= n;
  m.hit /= n;
  m.force /= n;
  m.high_force /= n;
  m.success_rate /= n;
  m.logs = std::move(logs);
  return m;
}

namespace {

EpisodeLog log_episode(const Trajectory& traj, const RewardRouting& routing) {
  EpisodeLog l;
  const bool shared = routing.mode == RewardMode::kCoOpt;
  const bool estimated = routing.mode == RewardMode::kOursFull;
  l.breakdown = episode_breakdown(traj, routing.truth,
                                  estimated ? routing.estimate.w_hat : WeightEstimate(),
                                  estimated ? routing.estimate.gate : 0.0, shared);
  l.features = episode_features(traj);
  l.success = traj.success;
  l.length = static_cast<int>(traj.length());
  return l;
}

}  // namespace

Metrics evaluate(const Environment& env, const Controller& robot, const Controller& human,
                 const RewardRouting& routing, int n_episodes, std::uint64_t seed,
                 int epoch) {
  if (n_episodes < 1) throw std::invalid_argument("n_episodes must be >= 1");
  std::vector<EpisodeLog> logs;
  logs.reserve(static_cast<std::size_t>(n_episodes));
  for (int i = 0; i < n_episodes; ++i) {
    const EpisodeRollout ro = run_episode(env, derive_seed(seed, kEvalStream, i), robot,
                                          human, routing, nullptr);
    logs.push_back(log_episode(ro.trajectory, routing));
  }
  const double gate = routing.mode == RewardMode::kOursFull ? routing.estimate.gate : 0.0;
  return aggregate_metrics(std::move(logs), epoch, gate);
}

Environment make_environment(const ExperimentConfig& config) {
  return Environment(config.task, config.env);
}

Agents initial_agents(const ExperimentConfig& config, std::uint64_t seed) {
  const Environment env = make_environment(config);
  Rng rng(derive_seed(seed, kInitStream));
  Agents a;
  int robot_in = env.robot_obs_dim();
  if (config.uses_anticipation()) {
    a.anticipation.emplace(kHumanInfoDim, env.robot_joint_dim() + 2, config.anticipation, rng);
    robot_in = augmented_dim(robot_in, kHumanInfoDim, config.anticipation.k_max);
  }
  a.robot = PolicyParams::create(robot_in, env.robot_action_dim(), rng, config.hidden,
                                 config.init_log_std);
  a.human = PolicyParams::create(env.human_obs_dim(), env.human_action_dim(), rng,
                                 config.hidden, config.init_log_std);
  return a;
}

Controller robot_controller(const Agents& agents, const ExperimentConfig& config) {
  const AnticipationModel* model =
      config.uses_anticipation() && agents.anticipation ? &*agents.anticipation : nullptr;
  return policy_controller(agents.robot, model);
}

RunResult run_training(const ExperimentConfig& config, std::uint64_t seed,
                       const RunObserver* observer,
                       const std::optional<std::filesystem::path>& checkpoint_dir) {
  config.validate();
  const Environment env = make_environment(config);

  RunResult result;
  result.config = config;
  result.seed = seed;
  result.env_spec = env.spec_string();
  result.agents = initial_agents(config, seed);
  Agents& agents = result.agents;

  PpoTrainer robot_trainer(agents.robot, config.ppo);
  PpoTrainer human_trainer(agents.human, config.ppo);
  std::optional<AnticipationTrainer> anticipation_trainer;
  if (agents.anticipation) {
    anticipation_trainer.emplace(*agents.anticipation, config.anticipation_lr);
  }

  Rng rng(derive_seed(seed, kTrainStream));
  RewardRouting routing;
  routing.mode = config.reward_mode;
  routing.truth = config.preference;
  double latest_success = 0.0;

  // Rolling windows covering the last e_k epochs.
  std::deque<std::vector<EpisodeSummary>> summary_window;
  std::deque<std::vector<JointSnapshotEpisode>> snapshot_window;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    RolloutBuffer robot_buf;
    RolloutBuffer human_buf;
    std::vector<EpisodeSummary> summaries;
    std::vector<JointSnapshotEpisode> snapshots;
    CurvePoint curve;
    curve.epoch = epoch;
    {
      const Controller rc = robot_controller(agents, config);
      const Controller hc = policy_controller(agents.human);
      for (int i = 0; i < config.episodes_per_epoch; ++i) {
        EpisodeRollout ro = run_episode(env, derive_seed(seed, kEpisodeStream, epoch, i), rc,
                                        hc, routing, &rng);
        for (std::size_t k = 0; k < ro.robot.rewards.size(); ++k) {
          if (!std::isfinite(ro.robot.rewards[k]) || !std::isfinite(ro.human.rewards[k])) {
            numerical_abort(agents, checkpoint_dir,
                            "non-finite reward at epoch " + std::to_string(epoch));
          }
        }
        if (observer && observer->on_episode) observer->on_episode(epoch, ro);
        const FeatureVector f = episode_features(ro.trajectory);
        const double task = episode_task_reward(ro.trajectory);
        summaries.push_back({f, task});
        for (double v : ro.robot.rewards) curve.robot_return += v;
        for (double v : ro.human.rewards) curve.human_return += v;
        curve.task_return += task;
        curve.success_rate += ro.trajectory.success ? 1.0 : 0.0;
        robot_buf.episodes.push_back(std::move(ro.robot));
        human_buf.episodes.push_back(std::move(ro.human));
        snapshots.push_back(std::move(ro.snapshots));
      }
    }
    const double n = static_cast<double>(config.episodes_per_epoch);
    curve.robot_return /= n;
    curve.human_return /= n;
    curve.task_return /= n;
    curve.success_rate /= n;

    summary_window.push_back(std::move(summaries));
    snapshot_window.push_back(std::move(snapshots));
    while (static_cast<int>(summary_window.size()) > config.e_k) {
      summary_window.pop_front();
      snapshot_window.pop_front();
    }

    if (epoch % config.e_k == 0) {
      if (anticipation_trainer) {
        RolloutBuffer joint;
        for (const auto& batch : snapshot_window) {
          joint.snapshots.insert(joint.snapshots.end(), batch.begin(), batch.end());
        }
        const TrainingWindows windows = extract_windows(*agents.anticipation, joint);
        if (windows.count() > 0) {
          TrainResult tr;
          try {
            tr = anticipation_trainer->train(*agents.anticipation, windows,
                                             config.anticipation_train_steps, rng);
          } catch (const std::runtime_error& e) {
            numerical_abort(agents, checkpoint_dir, e.what());
          }
          if (!std::isfinite(tr.loss)) {
            numerical_abort(agents, checkpoint_dir, "non-finite anticipation loss");
          }
          curve.anticipation_loss = tr.loss;
        }
        if (observer && observer->on_update) observer->on_update(epoch, "anticipation");
      }
      if (config.uses_utility()) {
        std::vector<EpisodeSummary> pool;
        for (const auto& batch : summary_window) pool.insert(pool.end(), batch.begin(), batch.end());
        UtilityCycle cycle = update_cycle(pool, routing.estimate, config.utility, latest_success,
                                          epoch, derive_seed(seed, kUtilityStream, epoch));
        PosteriorRecord rec;
        rec.epoch = epoch;
        rec.updated = cycle.updated;
        rec.diagnostic = cycle.diagnostic;
        if (cycle.posterior) {
          rec.chain_mean = cycle.posterior->mean();
          rec.acceptance_rate = cycle.posterior->acceptance_rate;
          rec.effective_samples = cycle.posterior->effective_samples;
          rec.particles = static_cast<int>(cycle.posterior->size());
          result.last_particles = cycle.posterior->particles;
        }
        routing.estimate = cycle.estimate;
        rec.w_hat = routing.estimate.w_hat.w();
        rec.gate = routing.estimate.gate;
        result.posterior.push_back(std::move(rec));
        if (observer && observer->on_update) observer->on_update(epoch, "utility");
      }
    }

    try {
      curve.robot_ppo = robot_trainer.update(agents.robot, robot_buf, rng);
      curve.human_ppo = human_trainer.update(agents.human, human_buf, rng);
    } catch (const std::runtime_error& e) {
      numerical_abort(agents, checkpoint_dir, e.what());
    }
    if (!finite_stats(curve.robot_ppo) || !finite_stats(curve.human_ppo) ||
        !agents.robot.flat().allFinite() || !agents.human.flat().allFinite()) {
      numerical_abort(agents, checkpoint_dir,
                      "non-finite ppo loss at epoch " + std::to_string(epoch));
    }

    if (epoch % config.eval_every == 0) {
      Metrics m = evaluate(env, robot_controller(agents, config), policy_controller(agents.human),
                           routing, config.eval_episodes, seed, epoch);
      latest_success = m.success_rate;
      if (config.uses_utility()) {
        routing.estimate.gate =
            gate_from_success_rate(latest_success, config.utility.gate_threshold);
      }
      result.evaluations.push_back(std::move(m));
    }
    curve.gate = config.uses_utility() ? routing.estimate.gate : 0.0;
    result.curves.push_back(std::move(curve));
  }
  result.estimate = routing.estimate;
  return result;
}

void save_agents(const Agents& agents, const std::filesystem::path& dir,
                 const std::string& prefix) {
  try {
    std::filesystem::create_directories(dir);
    save_checkpoint((dir / (prefix + "robot.ckpt")).string(), agents.robot.to_checkpoint());
    save_checkpoint((dir / (prefix + "human.ckpt")).string(), agents.human.to_checkpoint());
    if (agents.anticipation) {
      save_checkpoint((dir / (prefix + "anticipation.ckpt")).string(),
                      agents.anticipation->to_checkpoint());
    }
  } catch (const RunError&) {
    throw;
  } catch (const std::exception& e) {
    throw RunError(ErrorCategory::kIo, e.what());
  }
}

Agents load_agents(const ExperimentConfig& config, const std::filesystem::path& dir,
                   std::uint64_t seed) {
  Agents a = initial_agents(config, seed);
  try {
    if (std::filesystem::exists(dir / "robot.ckpt")) {
      a.robot = PolicyParams::from_checkpoint(load_checkpoint((dir / "robot.ckpt").string()));
    }
    if (std::filesystem::exists(dir / "human.ckpt")) {
      a.human = PolicyParams::from_checkpoint(load_checkpoint((dir / "human.ckpt").string()));
    }
    if (a.anticipation && std::filesystem::exists(dir / "anticipation.ckpt")) {
      a.anticipation = AnticipationModel::from_checkpoint(load_checkpoint((dir / "anticipation.ckpt").string()));
    }
  } catch (const std::exception& e) {
    throw RunError(ErrorCategory::kIo, e.what());
  }
  const Agents fresh = initial_agents(config, seed);
  if (a.robot.input_dim() != fresh.robot.input_dim() ||
      a.human.input_dim() != fresh.human.input_dim()) {
    throw RunError(ErrorCategory::kConfig, "checkpoint does not match config");
  }
  return a;
}

}  // namespace assist

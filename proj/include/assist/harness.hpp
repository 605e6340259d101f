#pragma once

// Two-agent training loop, evaluation, sweeps and report files.

#include "assist/anticipation.hpp"
#include "assist/core.hpp"
#include "assist/env.hpp"
#include "assist/nn.hpp"
#include "assist/policy.hpp"
#include "assist/utility.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace assist {

enum class RewardMode { kMisaligned, kCoOpt, kOursFull, kOursNoUtility };

std::string to_string(RewardMode mode);
RewardMode reward_mode_from_string(const std::string& name);

// Abort categories double as process exit codes.
enum class ErrorCategory : int {
  kConfig = 2,
  kNumerical = 3,
  kIo = 4,
  kInternal = 5,
};

class RunError : public std::runtime_error {
 public:
  RunError(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

struct ExperimentConfig {
  TaskSpec task;
  EnvParams env;
  PreferenceWeights preference = PreferenceWeights::from_setting(1);
  RewardMode reward_mode = RewardMode::kOursFull;
  std::vector<std::uint64_t> seeds{0};

  PpoHyper ppo;
  int hidden = 64;
  double init_log_std = -0.5;

  AnticipationConfig anticipation;
  bool anticipation_enabled = true;  // only consulted by the ours_* modes
  int e_k = 10;
  int anticipation_train_steps = 200;
  double anticipation_lr = 1e-3;

  UtilityConfig utility;

  int epochs = 300;
  int episodes_per_epoch = 8;
  int eval_every = 10;
  int eval_episodes = 20;

  bool uses_anticipation() const;
  bool uses_utility() const;

  void validate() const;

  // Sectioned `key = value` text. Unknown sections or keys are errors.
  std::string serialize() const;
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
};

// Joint information shared with the anticipation module.
Eigen::VectorXd human_joint_info(const EnvState& s);  // head angle, mouth offset, mouth xy
Eigen::VectorXd robot_joint_info(const EnvState& s);  // joint angles, tool tip xy

// A controller turns an observation (plus the shared joint history) into a
// network input and an action. A null rng asks for the deterministic action.
struct Controller {
  std::function<Eigen::VectorXd(const Eigen::VectorXd& obs,
                                const JointSnapshotEpisode& history, int t)>
      input;
  std::function<ActResult(const Eigen::VectorXd& input, Rng* rng)> act;
};

Controller policy_controller(const PolicyParams& params,
                             const AnticipationModel* anticipation = nullptr);
Controller scripted_controller(std::function<Eigen::VectorXd(const Eigen::VectorXd& obs)> fn);

struct EpisodeRollout {
  Trajectory trajectory;
  RolloutEpisode robot;
  RolloutEpisode human;
  JointSnapshotEpisode snapshots;  // L + 1 frames
};

struct RewardRouting {
  RewardMode mode = RewardMode::kMisaligned;
  PreferenceWeights truth;
  UtilityEstimate estimate;
};

double human_step_reward(const Step& step, const PreferenceWeights& truth);
double robot_step_reward(const Step& step, const RewardRouting& routing);

// Runs one episode. Rewards in the rollout lanes follow `routing`.
EpisodeRollout run_episode(const Environment& env, std::uint64_t env_seed,
                           const Controller& robot, const Controller& human,
                           const RewardRouting& routing, Rng* rng);

struct EpisodeLog {
  RewardBreakdown breakdown;
  FeatureVector features;
  bool success = false;
  int length = 0;
};

struct Metrics {
  int epoch = 0;
  int episodes = 0;
  double human_reward = 0.0;
  double task_reward = 0.0;
  double robot_reward = 0.0;
  double hit = 0.0;
  double force = 0.0;
  double high_force = 0.0;
  double success_rate = 0.0;
  double gate = 0.0;  // gate in force during this evaluation
  std::vector<EpisodeLog> logs;
};

Metrics aggregate_metrics(std::vector<EpisodeLog> logs, int epoch, double gate);

// Deterministic-mean rollouts. The caller refreshes the gate from the result.
Metrics evaluate(const Environment& env, const Controller& robot, const Controller& human,
                 const RewardRouting& routing, int n_episodes, std::uint64_t seed,
                 int epoch = 0);

struct CurvePoint {
  int epoch = 0;
  double robot_return = 0.0;
  double human_return = 0.0;
  double task_return = 0.0;
  double success_rate = 0.0;
  PpoStats robot_ppo;
  PpoStats human_ppo;
  std::optional<double> anticipation_loss;
  double gate = 0.0;
};

struct PosteriorRecord {
  int epoch = 0;
  bool updated = false;
  FeatureRow chain_mean = FeatureRow::Zero();
  FeatureRow w_hat = FeatureRow::Zero();
  double gate = 0.0;
  double acceptance_rate = 0.0;
  double effective_samples = 0.0;
  int particles = 0;
  std::string diagnostic;
};

struct Agents {
  PolicyParams robot;
  PolicyParams human;
  std::optional<AnticipationModel> anticipation;
};

struct RunResult {
  ExperimentConfig config;
  std::uint64_t seed = 0;
  std::string env_spec;
  std::vector<Metrics> evaluations;
  std::vector<CurvePoint> curves;
  std::vector<PosteriorRecord> posterior;
  Eigen::MatrixXd last_particles;
  UtilityEstimate estimate;
  Agents agents;
};

// Test and tooling hooks; all optional.
struct RunObserver {
  // "anticipation" or "utility" with the epoch it fired on.
  std::function<void(int epoch, const std::string& module)> on_update;
  std::function<void(int epoch, const EpisodeRollout& rollout)> on_episode;
};

Environment make_environment(const ExperimentConfig& config);
Agents initial_agents(const ExperimentConfig& config, std::uint64_t seed);
Controller robot_controller(const Agents& agents, const ExperimentConfig& config);

// Epochs are numbered from 1. When `checkpoint_dir` is set, a non-finite
// reward or loss writes abort checkpoints there before throwing.
RunResult run_training(const ExperimentConfig& config, std::uint64_t seed,
                       const RunObserver* observer = nullptr,
                       const std::optional<std::filesystem::path>& checkpoint_dir = {});

void save_agents(const Agents& agents, const std::filesystem::path& dir,
                 const std::string& prefix = "");
Agents load_agents(const ExperimentConfig& config, const std::filesystem::path& dir,
                   std::uint64_t seed);

// Writes metrics.csv, episodes.csv, curves.csv, posterior.csv,
// posterior_particles.csv, config.ini and summary.txt.
void emit_report(const RunResult& result, const std::filesystem::path& dir);
void write_metrics_csv(const std::vector<Metrics>& metrics, const std::filesystem::path& file);

// Shortest round-trip decimal form.
std::string format_double(double v);

// splitmix64-style stream derivation so every random draw traces to the run seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0);

enum class SweepAxis { kPreferenceSetting, kMergeRatio, kRewardMode, kModuleAblation };
SweepAxis sweep_axis_from_string(const std::string& name);
std::string to_string(SweepAxis axis);

// Applies one axis value to a copy of the template.
ExperimentConfig apply_axis(const ExperimentConfig& base, SweepAxis axis,
                            const std::string& value);

struct SweepCell {
  std::string value;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  Metrics final_metrics;
};

struct SweepRow {
  std::string value;
  int runs_ok = 0;
  int runs_failed = 0;
  double human_reward = 0.0;
  double hit = 0.0;
  double force = 0.0;
  double high_force = 0.0;
  double success_rate = 0.0;
};

struct SweepReport {
  SweepAxis axis;
  std::vector<SweepCell> cells;
  std::vector<SweepRow> rows;
};

using RunFn = std::function<RunResult(const ExperimentConfig&, std::uint64_t)>;

// `run` defaults to run_training; per-cell failures are recorded, not thrown.
SweepReport sweep(const ExperimentConfig& base, SweepAxis axis,
                  const std::vector<std::string>& values, const RunFn& run = {});
void write_sweep(const SweepReport& report, const std::filesystem::path& dir);

// Minimal CSV reader for the files above ('#' lines skipped).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::string version;

  int column(const std::string& name) const;
};
CsvTable read_csv(const std::filesystem::path& file);

inline constexpr const char* kMetricsSchema = "assist-metrics/1";
inline constexpr const char* kEpisodesSchema = "assist-episodes/1";
inline constexpr const char* kCurvesSchema = "assist-curves/1";
inline constexpr const char* kPosteriorSchema = "assist-posterior/1";
inline constexpr const char* kParticlesSchema = "assist-particles/1";
inline constexpr const char* kSweepSchema = "assist-sweep/1";

}  // namespace assist

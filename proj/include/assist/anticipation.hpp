#pragma once

// Windowed predictor of the human's upcoming joint information from the
// recent joint history of both agents.

#include "assist/nn.hpp"
#include "assist/policy.hpp"

#include <Eigen/Dense>

namespace assist {

// Stage-dependent foresight: 10 steps early, 8 mid-episode, 5 late.
int horizon_for(int t);

struct JointWindow {
  Eigen::MatrixXd human;  // k_in x d_H, oldest row first
  Eigen::MatrixXd robot;  // k_in x d_R
  int t = 0;
};

// Window ending at frame `t` (inclusive). Early frames are front-padded by
// repeating frame 0.
JointWindow make_window(const JointSnapshotEpisode& episode, int t, int k_in);

struct AnticipationConfig {
  int k_in = 10;
  int k_max = 10;
  int hidden = 64;
};

class AnticipationModel {
 public:
  AnticipationModel() = default;
  // Zero-initialized output layers: a fresh model predicts all zeros.
  AnticipationModel(int human_dim, int robot_dim, AnticipationConfig config, Rng& rng);

  int human_dim() const { return human_dim_; }
  int robot_dim() const { return robot_dim_; }
  const AnticipationConfig& config() const { return config_; }
  Mlp& network() { return net_; }
  const Mlp& network() const { return net_; }

  // k_max x d_H block.
  Eigen::MatrixXd predict_full(const JointWindow& window) const;
  // First horizon_for(window.t) rows of predict_full.
  Eigen::MatrixXd predict(const JointWindow& window) const;

  Eigen::VectorXd flatten_input(const JointWindow& window) const;

  Checkpoint to_checkpoint() const;
  static AnticipationModel from_checkpoint(const Checkpoint& ckpt);

 private:
  int human_dim_ = 0;
  int robot_dim_ = 0;
  AnticipationConfig config_;
  Mlp net_;
};

// Supervised pairs: each column is one window (inputs) and its realized
// k_max-step human future (targets, row-major by step).
struct TrainingWindows {
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd targets;
  Eigen::Index count() const { return inputs.cols(); }
};

// Only windows with full history and full future inside one episode.
TrainingWindows extract_windows(const AnticipationModel& model,
                                const RolloutBuffer& buffer);

double prediction_mse(const AnticipationModel& model, const TrainingWindows& windows);

struct TrainResult {
  double loss = 0.0;  // MSE of the updated model over all extracted windows
  Eigen::Index windows = 0;
};

class AnticipationTrainer {
 public:
  AnticipationTrainer(const AnticipationModel& model, double lr, int minibatch = 256);

  TrainResult train(AnticipationModel& model, const RolloutBuffer& buffer, int steps,
                    Rng& rng);
  TrainResult train(AnticipationModel& model, const TrainingWindows& windows, int steps,
                    Rng& rng);

 private:
  Adam adam_;
  int minibatch_;
};

TrainResult train(AnticipationModel& model, const RolloutBuffer& buffer, int steps,
                  double lr, Rng& rng);

// obs_R, then the prediction zero-padded to k_max rows, then k(t) / k_max.
Eigen::VectorXd augment_observation(const Eigen::VectorXd& obs_r,
                                    const Eigen::MatrixXd& prediction, int k_max);

int augmented_dim(int obs_dim, int human_dim, int k_max);

}  // namespace assist

#pragma once

// Gaussian actor-critic and PPO (clipped surrogate + GAE), shared by the
// robot and human agents.

#include "assist/nn.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace assist {

struct PolicyParams {
  Mlp actor;                // input -> 64 -> 64 -> action mean
  Eigen::VectorXd log_std;  // one per action dimension
  Mlp critic;               // input -> 64 -> 64 -> 1

  static PolicyParams create(int input_dim, int action_dim, Rng& rng,
                             int hidden = 64, double init_log_std = -0.5);

  int input_dim() const { return actor.input_dim(); }
  int action_dim() const { return actor.output_dim(); }

  // Flat layout: actor | log_std | critic.
  Eigen::Index num_params() const;
  Eigen::VectorXd flat() const;
  void set_flat(const Eigen::VectorXd& flat);

  Checkpoint to_checkpoint() const;
  static PolicyParams from_checkpoint(const Checkpoint& ckpt);
};

struct ActResult {
  Eigen::VectorXd action;      // tanh-squashed, in [-1, 1]
  Eigen::VectorXd pre_squash;  // Gaussian sample
  double log_prob = 0.0;       // density of pre_squash under N(mean, std)
  double value = 0.0;
};

ActResult act(const PolicyParams& params, const Eigen::VectorXd& input, Rng& rng);
ActResult act(const PolicyParams& params, const Eigen::VectorXd& input,
              std::uint64_t seed);
// Squashed mean, no exploration noise.
Eigen::VectorXd act_deterministic(const PolicyParams& params,
                                  const Eigen::VectorXd& input);
double value_of(const PolicyParams& params, const Eigen::VectorXd& input);

double gaussian_log_prob(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                         const Eigen::VectorXd& log_std);

// Backward GAE recursion over one episode; `bootstrap` is V(s_T) for a
// truncated episode and 0 for a terminal one.
std::vector<double> gae(std::span<const double> rewards,
                        std::span<const double> values, double bootstrap,
                        double discount, double lambda);

struct RolloutEpisode {
  std::vector<Eigen::VectorXd> inputs;
  std::vector<Eigen::VectorXd> pre_squash;
  std::vector<double> log_probs;
  std::vector<double> rewards;
  std::vector<double> values;
  double bootstrap = 0.0;
  bool terminal = false;

  std::size_t size() const { return inputs.size(); }
};

// Joint-information snapshots kept beside the PPO lane; ppo_update never
// reads them.
struct JointSnapshotEpisode {
  std::vector<Eigen::VectorXd> human;
  std::vector<Eigen::VectorXd> robot;
};

struct RolloutBuffer {
  std::vector<RolloutEpisode> episodes;
  std::vector<JointSnapshotEpisode> snapshots;

  std::size_t num_steps() const;
  bool empty() const { return num_steps() == 0; }
};

struct PpoHyper {
  double discount = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double lr = 3e-4;
  int epochs = 4;
  int minibatch = 256;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  double adv_eps = 1e-8;
};

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  std::size_t samples = 0;
};

// Flattened batch: inputs as columns.
struct PpoBatch {
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd pre_squash;
  Eigen::VectorXd old_log_probs;
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
};

PpoBatch make_batch(const RolloutBuffer& buffer, const PpoHyper& hyper,
                    bool normalize_advantages = true);

struct PpoLoss {
  double total = 0.0;
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  Eigen::VectorXd grad;  // flat, PolicyParams layout; empty if not requested
};

// Mean loss over the columns of `batch`; exposed for gradient checks.
PpoLoss ppo_loss(const PolicyParams& params, const PpoBatch& batch,
                 const PpoHyper& hyper, bool with_grad);

class PpoTrainer {
 public:
  PpoTrainer(const PolicyParams& params, PpoHyper hyper);

  PpoStats update(PolicyParams& params, const RolloutBuffer& buffer, Rng& rng);
  const PpoHyper& hyper() const { return hyper_; }

 private:
  PpoHyper hyper_;
  Adam adam_;
};

}  // namespace assist

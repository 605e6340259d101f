#pragma once

// Preference-weight inference from buffered episodes: a per-demonstration
// softmax likelihood over buffer-drawn alternatives, Metropolis-Hastings on
// the unit ball, and progressive merging of chain means.

#include "assist/core.hpp"
#include "assist/nn.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace assist {

// Row j of `features` is one demonstration; alternatives[j] holds K rows of
// competing feature vectors for that demonstration.
struct DemoSet {
  Eigen::MatrixXd features;
  std::vector<Eigen::MatrixXd> alternatives;

  Eigen::Index num_demos() const { return features.rows(); }
  Eigen::Index feature_dim() const { return features.cols(); }
  void validate() const;
};

struct EpisodeSummary {
  FeatureVector features;
  double task_return = 0.0;
};

// Top-n episodes by task return become demonstrations; each draws K
// alternatives uniformly (without replacement) from the other episodes.
DemoSet select_demos(std::span<const EpisodeSummary> episodes, int n_demos,
                     int n_alternatives, Rng& rng);

// Sum over demos of  w.phi_j - log sum_{phi in {phi_j} u alt_j} exp(w.phi).
// Throws if |w| > 1.
double log_posterior(const Eigen::VectorXd& w, const DemoSet& demos);
double log_posterior(const WeightEstimate& w, const DemoSet& demos);

struct McmcConfig {
  int steps = 20000;
  int burn_in = 5000;
  int thin = 10;
  double proposal_std = 0.05;
  double target_acceptance = 0.3;
  // Steps at the start of burn-in used for the single proposal rescale.
  int adaptation_window = 2500;
  int min_particles = 100;
};

struct WeightPosterior {
  Eigen::MatrixXd particles;  // P x m
  double acceptance_rate = 0.0;
  double adapted_proposal_std = 0.0;
  double effective_samples = 0.0;
  bool low_acceptance = false;

  Eigen::Index size() const { return particles.rows(); }
  Eigen::VectorXd mean() const;
};

WeightPosterior mcmc_sample(const DemoSet& demos, const McmcConfig& config,
                            std::uint64_t seed);

// norm-preserving interpolation: direction of (1-r)*new + r*prev, norm
// (1-r)|new| + r|prev|. r weights the previous estimate.
WeightEstimate merge_estimate(const WeightEstimate& new_mean, const WeightEstimate& prev,
                              double merge_ratio);

struct UtilityEstimate {
  WeightEstimate w_hat;
  int epoch = 0;
  double gate = 0.0;
};

double estimated_pref_reward(const FeatureVector& f, const UtilityEstimate& est);

struct UtilityConfig {
  int n_demos = 10;
  int n_alternatives = 8;
  double merge_ratio = 0.3;
  // Gate is zero below this success rate, the success rate itself above.
  double gate_threshold = 0.0;
  McmcConfig mcmc;
};

double gate_from_success_rate(double success_rate, double threshold);

struct UtilityCycle {
  UtilityEstimate estimate;
  std::optional<WeightPosterior> posterior;
  std::string diagnostic;
  bool updated = false;
};

// Runs MCMC on the given demonstrations and merges into `prev`.
UtilityCycle update_from_demos(const DemoSet& demos, const UtilityEstimate& prev,
                               const UtilityConfig& config, double latest_success_rate,
                               int epoch, std::uint64_t seed);

// Selects demonstrations from the buffer first; with fewer than n episodes
// `prev` is returned unchanged and a diagnostic is set.
UtilityCycle update_cycle(std::span<const EpisodeSummary> episodes,
                          const UtilityEstimate& prev, const UtilityConfig& config,
                          double latest_success_rate, int epoch, std::uint64_t seed);

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace assist

#include "assist/utility.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace assist {

void DemoSet::validate() const {
  if (features.rows() < 1) throw std::invalid_argument("demo set needs >= 1 demo");
  if (static_cast<Eigen::Index>(alternatives.size()) != features.rows()) {
    throw std::invalid_argument("one alternative block per demo required");
  }
  if (!features.allFinite()) throw std::invalid_argument("non-finite demo features");
  for (const auto& alt : alternatives) {
    if (alt.cols() != features.cols() || !alt.allFinite()) {
      throw std::invalid_argument("malformed alternative block");
    }
  }
}

DemoSet select_demos(std::span<const EpisodeSummary> episodes, int n_demos,
                     int n_alternatives, Rng& rng) {
  const int total = static_cast<int>(episodes.size());
  if (n_demos < 1 || total < n_demos) {
    throw std::invalid_argument("insufficient episodes for demo selection");
  }
  std::vector<int> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  // Stable so ties resolve by buffer position.
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return episodes[static_cast<std::size_t>(a)].task_return >
           episodes[static_cast<std::size_t>(b)].task_return;
  });

  const int k = std::min(n_alternatives, total - 1);
  DemoSet d;
  d.features.resize(n_demos, kFeatureDim);
  for (int j = 0; j < n_demos; ++j) {
    const int own = order[static_cast<std::size_t>(j)];
    d.features.row(j) = episodes[static_cast<std::size_t>(own)].features.as_row().transpose();
    std::vector<int> pool;
    pool.reserve(static_cast<std::size_t>(total - 1));
    for (int i = 0; i < total; ++i) {
      if (i != own) pool.push_back(i);
    }
    // Partial Fisher-Yates.
    Eigen::MatrixXd alt(k, kFeatureDim);
    for (int a = 0; a < k; ++a) {
      std::uniform_int_distribution<int> pick(a, static_cast<int>(pool.size()) - 1);
      std::swap(pool[static_cast<std::size_t>(a)],
                pool[static_cast<std::size_t>(pick(rng))]);
      alt.row(a) = episodes[static_cast<std::size_t>(pool[static_cast<std::size_t>(a)])]
                       .features.as_row()
                       .transpose();
    }
    d.alternatives.push_back(std::move(alt));
  }
  return d;
}

namespace {

double log_posterior_unchecked(const Eigen::VectorXd& w, const DemoSet& demos) {
  double total = 0.0;
  for (Eigen::Index j = 0; j < demos.num_demos(); ++j) {
    const double own = demos.features.row(j).dot(w);
    const Eigen::VectorXd alt = demos.alternatives[static_cast<std::size_t>(j)] * w;
    const double hi = std::max(own, alt.size() > 0 ? alt.maxCoeff() : own);
    const double sum = std::exp(own - hi) + (alt.array() - hi).exp().sum();
    total += own - (hi + std::log(sum));
  }
  return total;
}

double effective_sample_size(const Eigen::MatrixXd& x) {
  const Eigen::Index n = x.rows();
  if (n < 4) return static_cast<double>(n);
  double worst = static_cast<double>(n);
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const Eigen::VectorXd v = x.col(c).array() - x.col(c).mean();
    const double var = v.squaredNorm() / static_cast<double>(n);
    if (var <= 0.0) continue;
    double tau = 1.0;
    for (Eigen::Index lag = 1; lag < n / 2; ++lag) {
      const double rho = v.head(n - lag).dot(v.tail(n - lag)) /
                         (static_cast<double>(n) * var);
      if (rho < 0.05) break;
      tau += 2.0 * rho;
    }
    worst = std::min(worst, static_cast<double>(n) / tau);
  }
  return worst;
}

}  // namespace

double log_posterior(const Eigen::VectorXd& w, const DemoSet& demos) {
  if (w.size() != demos.feature_dim()) {
    throw std::invalid_argument("weight dimension mismatch");
  }
  if (w.norm() > 1.0 + kBallTolerance) {
    throw std::invalid_argument("weight outside unit ball");
  }
  return log_posterior_unchecked(w, demos);
}

double log_posterior(const WeightEstimate& w, const DemoSet& demos) {
  return log_posterior(Eigen::VectorXd(w.w()), demos);
}

Eigen::VectorXd WeightPosterior::mean() const {
  if (particles.rows() == 0) throw std::logic_error("empty posterior");
  return particles.colwise().mean().transpose();
}

WeightPosterior mcmc_sample(const DemoSet& demos, const McmcConfig& config,
                            std::uint64_t seed) {
  demos.validate();
  if (config.thin < 1 || config.burn_in < 0 || config.steps <= config.burn_in) {
    throw std::invalid_argument("invalid mcmc schedule");
  }
  const int kept = (config.steps - config.burn_in) / config.thin;
  if (kept < config.min_particles) {
    throw std::invalid_argument("mcmc schedule yields fewer than the minimum particles");
  }
  if (!(config.proposal_std > 0.0)) throw std::invalid_argument("proposal_std must be > 0");

  const Eigen::Index m = demos.feature_dim();
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Eigen::VectorXd w = Eigen::VectorXd::Zero(m);
  double lp = log_posterior_unchecked(w, demos);
  double step_size = config.proposal_std;
  const int adapt_end = std::min(config.adaptation_window, config.burn_in);
  int adapt_accepted = 0;
  long accepted_after = 0;
  long proposed_after = 0;

  WeightPosterior post;
  post.particles.resize(kept, m);
  int stored = 0;
  Eigen::VectorXd proposal(m);
  for (int i = 0; i < config.steps; ++i) {
    for (Eigen::Index d = 0; d < m; ++d) proposal[d] = w[d] + step_size * normal(rng);
    bool accept = false;
    double lp_new = 0.0;
    // Zero prior density outside the ball.
    if (proposal.norm() <= 1.0) {
      lp_new = log_posterior_unchecked(proposal, demos);
      accept = std::log(unif(rng)) < lp_new - lp;
    }
    if (accept) {
      w = proposal;
      lp = lp_new;
    }
    if (i < adapt_end) {
      adapt_accepted += accept ? 1 : 0;
      if (i + 1 == adapt_end) {
        const double rate = static_cast<double>(adapt_accepted) / adapt_end;
        const double scale = std::clamp(std::max(rate, 1e-3) / config.target_acceptance,
                                        0.1, 10.0);
        step_size *= scale;
      }
    } else {
      ++proposed_after;
      accepted_after += accept ? 1 : 0;
    }
    if (i >= config.burn_in && (i - config.burn_in) % config.thin == config.thin - 1 &&
        stored < kept) {
      post.particles.row(stored++) = w.transpose();
    }
  }
  post.acceptance_rate =
      proposed_after > 0 ? static_cast<double>(accepted_after) / proposed_after : 0.0;
  post.adapted_proposal_std = step_size;
  post.low_acceptance = post.acceptance_rate < 0.01;
  post.effective_samples = effective_sample_size(post.particles);
  return post;
}

WeightEstimate merge_estimate(const WeightEstimate& new_mean, const WeightEstimate& prev,
                              double merge_ratio) {
  if (!(merge_ratio >= 0.0 && merge_ratio <= 1.0)) {
    throw std::invalid_argument("merge_ratio must lie in [0, 1]");
  }
  if (merge_ratio == 0.0) return new_mean;
  if (merge_ratio == 1.0) return prev;
  const FeatureRow combo = (1.0 - merge_ratio) * new_mean.w() + merge_ratio * prev.w();
  const double n = combo.norm();
  if (n == 0.0) return WeightEstimate();
  const double target = (1.0 - merge_ratio) * new_mean.w().norm() +
                        merge_ratio * prev.w().norm();
  return WeightEstimate::clamped_to_ball(combo * (target / n));
}

double estimated_pref_reward(const FeatureVector& f, const UtilityEstimate& est) {
  return est.gate * weighted_features(f, est.w_hat.w());
}

double gate_from_success_rate(double success_rate, double threshold) {
  if (!(success_rate >= 0.0 && success_rate <= 1.0)) {
    throw std::invalid_argument("success rate must lie in [0, 1]");
  }
  return success_rate >= threshold ? success_rate : 0.0;
}

UtilityCycle update_from_demos(const DemoSet& demos, const UtilityEstimate& prev,
                               const UtilityConfig& config, double latest_success_rate,
                               int epoch, std::uint64_t seed) {
  if (demos.feature_dim() != kFeatureDim) {
    throw std::invalid_argument("reward-path estimates need 3 features");
  }
  UtilityCycle out;
  WeightPosterior post = mcmc_sample(demos, config.mcmc, seed);
  const WeightEstimate chain_mean = WeightEstimate::clamped_to_ball(post.mean());
  out.estimate.w_hat = merge_estimate(chain_mean, prev.w_hat, config.merge_ratio);
  out.estimate.epoch = epoch;
  out.estimate.gate = gate_from_success_rate(latest_success_rate, config.gate_threshold);
  if (post.low_acceptance) out.diagnostic = "warning: mcmc acceptance rate below 0.01";
  out.posterior = std::move(post);
  out.updated = true;
  return out;
}

UtilityCycle update_cycle(std::span<const EpisodeSummary> episodes,
                          const UtilityEstimate& prev, const UtilityConfig& config,
                          double latest_success_rate, int epoch, std::uint64_t seed) {
  if (static_cast<int>(episodes.size()) < std::max(1, config.n_demos)) {
    UtilityCycle out;
    out.estimate = prev;
    out.diagnostic = "insufficient episodes: have " + std::to_string(episodes.size()) +
                     ", need " + std::to_string(config.n_demos);
    return out;
  }
  Rng rng(seed);
  const DemoSet demos = select_demos(episodes, config.n_demos, config.n_alternatives, rng);
  return update_from_demos(demos, prev, config, latest_success_rate, epoch, rng());
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

}  // namespace assist

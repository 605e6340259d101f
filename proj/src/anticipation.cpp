#include "assist/anticipation.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace assist {

int horizon_for(int t) {
  if (t < 0) throw std::invalid_argument("negative step index");
  if (t < 50) return 10;
  if (t < 100) return 8;
  return 5;
}

JointWindow make_window(const JointSnapshotEpisode& episode, int t, int k_in) {
  if (episode.human.empty() || episode.human.size() != episode.robot.size()) {
    throw std::invalid_argument("malformed joint snapshot episode");
  }
  if (t < 0 || static_cast<std::size_t>(t) >= episode.human.size()) {
    throw std::out_of_range("window end outside episode");
  }
  const auto dh = episode.human.front().size();
  const auto dr = episode.robot.front().size();
  JointWindow w;
  w.human.resize(k_in, dh);
  w.robot.resize(k_in, dr);
  w.t = t;
  for (int row = 0; row < k_in; ++row) {
    const int frame = std::max(0, t - (k_in - 1) + row);
    w.human.row(row) = episode.human[static_cast<std::size_t>(frame)].transpose();
    w.robot.row(row) = episode.robot[static_cast<std::size_t>(frame)].transpose();
  }
  return w;
}

AnticipationModel::AnticipationModel(int human_dim, int robot_dim,
                                     AnticipationConfig config, Rng& rng)
    : human_dim_(human_dim), robot_dim_(robot_dim), config_(config) {
  if (human_dim < 1 || robot_dim < 1 || config.k_in < 1 || config.k_max < 1) {
    throw std::invalid_argument("invalid anticipation dimensions");
  }
  net_ = Mlp({config.k_in * (human_dim + robot_dim), config.hidden,
              config.k_max * human_dim},
             true);
  net_.initialize(rng, 0.0);
}

Eigen::VectorXd AnticipationModel::flatten_input(const JointWindow& window) const {
  if (window.human.rows() != config_.k_in || window.robot.rows() != config_.k_in ||
      window.human.cols() != human_dim_ || window.robot.cols() != robot_dim_) {
    throw std::invalid_argument("joint window dimension mismatch");
  }
  const int stride = human_dim_ + robot_dim_;
  Eigen::VectorXd x(config_.k_in * stride);
  for (int row = 0; row < config_.k_in; ++row) {
    x.segment(row * stride, human_dim_) = window.human.row(row).transpose();
    x.segment(row * stride + human_dim_, robot_dim_) = window.robot.row(row).transpose();
  }
  return x;
}

Eigen::MatrixXd AnticipationModel::predict_full(const JointWindow& window) const {
  const Eigen::VectorXd y = net_.forward(flatten_input(window));
  Eigen::MatrixXd out(config_.k_max, human_dim_);
  for (int k = 0; k < config_.k_max; ++k) {
    out.row(k) = y.segment(k * human_dim_, human_dim_).transpose();
  }
  return out;
}

Eigen::MatrixXd AnticipationModel::predict(const JointWindow& window) const {
  const int k = std::min(horizon_for(window.t), config_.k_max);
  return predict_full(window).topRows(k);
}

Checkpoint AnticipationModel::to_checkpoint() const {
  Checkpoint c;
  c.kind = CheckpointKind::kAnticipation;
  // Leading 1x4 block: k_in, k_max, d_H, d_R.
  c.shapes.emplace_back(1u, 4u);
  c.values = {static_cast<double>(config_.k_in), static_cast<double>(config_.k_max),
              static_cast<double>(human_dim_), static_cast<double>(robot_dim_)};
  for (const auto& s : net_.shapes()) c.shapes.push_back(s);
  c.values.insert(c.values.end(), net_.params().data(),
                  net_.params().data() + net_.num_params());
  return c;
}

AnticipationModel AnticipationModel::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != CheckpointKind::kAnticipation || ckpt.shapes.size() < 3 ||
      ckpt.shapes[0] != std::pair<std::uint32_t, std::uint32_t>{1u, 4u}) {
    throw std::runtime_error("checkpoint is not an anticipation model");
  }
  AnticipationModel m;
  m.config_.k_in = static_cast<int>(ckpt.values[0]);
  m.config_.k_max = static_cast<int>(ckpt.values[1]);
  m.human_dim_ = static_cast<int>(ckpt.values[2]);
  m.robot_dim_ = static_cast<int>(ckpt.values[3]);
  m.net_ = Mlp::from_shapes({ckpt.shapes.begin() + 1, ckpt.shapes.end()}, true);
  m.config_.hidden = m.net_.sizes()[1];
  if (m.net_.input_dim() != m.config_.k_in * (m.human_dim_ + m.robot_dim_) ||
      m.net_.output_dim() != m.config_.k_max * m.human_dim_) {
    throw std::runtime_error("inconsistent anticipation checkpoint");
  }
  m.net_.params() =
      Eigen::Map<const Eigen::VectorXd>(ckpt.values.data() + 4, m.net_.num_params());
  return m;
}

TrainingWindows extract_windows(const AnticipationModel& model,
                                const RolloutBuffer& buffer) {
  const int k_in = model.config().k_in;
  const int k_max = model.config().k_max;
  const int dh = model.human_dim();
  std::vector<Eigen::VectorXd> xs;
  std::vector<Eigen::VectorXd> ys;
  for (const auto& ep : buffer.snapshots) {
    const int frames = static_cast<int>(ep.human.size());
    for (int t = k_in - 1; t + k_max < frames; ++t) {
      xs.push_back(model.flatten_input(make_window(ep, t, k_in)));
      Eigen::VectorXd y(k_max * dh);
      for (int k = 0; k < k_max; ++k) {
        y.segment(k * dh, dh) = ep.human[static_cast<std::size_t>(t + 1 + k)];
      }
      ys.push_back(std::move(y));
    }
  }
  TrainingWindows w;
  if (xs.empty()) return w;
  w.inputs.resize(xs.front().size(), static_cast<Eigen::Index>(xs.size()));
  w.targets.resize(ys.front().size(), static_cast<Eigen::Index>(ys.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    w.inputs.col(static_cast<Eigen::Index>(i)) = xs[i];
    w.targets.col(static_cast<Eigen::Index>(i)) = ys[i];
  }
  return w;
}

double prediction_mse(const AnticipationModel& model, const TrainingWindows& windows) {
  if (windows.count() == 0) throw std::invalid_argument("insufficient data");
  const Eigen::MatrixXd pred = model.network().forward(windows.inputs);
  return (pred - windows.targets).squaredNorm() /
         static_cast<double>(windows.targets.size());
}

AnticipationTrainer::AnticipationTrainer(const AnticipationModel& model, double lr,
                                         int minibatch)
    : adam_(model.network().num_params(), lr), minibatch_(minibatch) {}

TrainResult AnticipationTrainer::train(AnticipationModel& model,
                                       const RolloutBuffer& buffer, int steps, Rng& rng) {
  return train(model, extract_windows(model, buffer), steps, rng);
}

TrainResult AnticipationTrainer::train(AnticipationModel& model,
                                       const TrainingWindows& windows, int steps,
                                       Rng& rng) {
  if (windows.count() == 0) throw std::invalid_argument("insufficient data");
  Mlp& net = model.network();
  const Eigen::Index n = windows.count();
  const Eigen::Index mb = std::min<Eigen::Index>(n, std::max(1, minibatch_));
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  Eigen::MatrixXd x(windows.inputs.rows(), mb);
  Eigen::MatrixXd y(windows.targets.rows(), mb);
  Eigen::VectorXd grad(net.num_params());
  for (int step = 0; step < steps; ++step) {
    if (mb == n) {
      x = windows.inputs;
      y = windows.targets;
    } else {
      for (Eigen::Index k = 0; k < mb; ++k) {
        const Eigen::Index c = pick(rng);
        x.col(k) = windows.inputs.col(c);
        y.col(k) = windows.targets.col(c);
      }
    }
    Mlp::Cache cache;
    const Eigen::MatrixXd pred = net.forward(x, cache);
    const Eigen::MatrixXd d = 2.0 * (pred - y) / static_cast<double>(y.size());
    grad.setZero();
    net.backward(cache, d, grad);
    if (!grad.allFinite()) throw std::runtime_error("non-finite anticipation gradient");
    adam_.step(net.params(), grad);
  }
  return {prediction_mse(model, windows), n};
}

TrainResult train(AnticipationModel& model, const RolloutBuffer& buffer, int steps,
                  double lr, Rng& rng) {
  AnticipationTrainer trainer(model, lr);
  return trainer.train(model, buffer, steps, rng);
}

Eigen::VectorXd augment_observation(const Eigen::VectorXd& obs_r,
                                    const Eigen::MatrixXd& prediction, int k_max) {
  const auto rows = prediction.rows();
  const auto dh = prediction.cols();
  if (rows > k_max) throw std::invalid_argument("prediction longer than k_max");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(obs_r.size() + k_max * dh + 1);
  out.head(obs_r.size()) = obs_r;
  for (Eigen::Index k = 0; k < rows; ++k) {
    out.segment(obs_r.size() + k * dh, dh) = prediction.row(k).transpose();
  }
  out[out.size() - 1] = static_cast<double>(rows) / k_max;
  return out;
}

int augmented_dim(int obs_dim, int human_dim, int k_max) {
  return obs_dim + k_max * human_dim + 1;
}

}  // namespace assist

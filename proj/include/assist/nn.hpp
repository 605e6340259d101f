#pragma once

// Minimal dense networks with hand-written backward passes, an Adam
// optimizer, and the versioned flat binary checkpoint format.

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace assist {

using Rng = std::mt19937_64;

// Fully connected tanh network with a linear output layer. All parameters
// live in one flat vector; layer l stores W_l (out x in, column-major) then
// b_l. With `linear_skip` an extra input->output matrix is appended.
class Mlp {
 public:
  struct Cache {
    std::vector<Eigen::MatrixXd> activations;  // inputs of each layer
    Eigen::MatrixXd input;
    Eigen::MatrixXd output;
  };

  Mlp() = default;
  Mlp(std::vector<int> sizes, bool linear_skip = false);

  // Xavier-uniform hidden layers; output layer scaled by `output_scale`
  // (zero gives a zero-output network).
  void initialize(Rng& rng, double output_scale);

  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }
  bool has_linear_skip() const { return linear_skip_; }
  Eigen::Index num_params() const { return params_.size(); }

  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

  // Columns of `x` are samples.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache& cache) const;

  // Accumulates dLoss/dparams into `grad` given dLoss/doutput.
  void backward(const Cache& cache, const Eigen::MatrixXd& d_output,
                Eigen::Ref<Eigen::VectorXd> grad) const;

  // (rows, cols) of every parameter block in storage order.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes() const;
  static Mlp from_shapes(
      const std::vector<std::pair<std::uint32_t, std::uint32_t>>& shapes,
      bool linear_skip);

 private:
  struct Block {
    Eigen::Index w_offset;
    Eigen::Index b_offset;
    int rows;
    int cols;
  };

  Eigen::Map<const Eigen::MatrixXd> weight(std::size_t l) const;
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t l) const;
  Eigen::Map<const Eigen::MatrixXd> skip() const;

  std::vector<int> sizes_;
  bool linear_skip_ = false;
  std::vector<Block> blocks_;
  Eigen::Index skip_offset_ = 0;
  Eigen::VectorXd params_;
};

class Adam {
 public:
  Adam() = default;
  Adam(Eigen::Index n, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grad);
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_ = 1e-3;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long t_ = 0;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
};

// Rescales `grad` in place so its Euclidean norm is at most `max_norm`.
double clip_grad_norm(Eigen::Ref<Eigen::VectorXd> grad, double max_norm);

enum class CheckpointKind : std::uint32_t {
  kPolicy = 1,
  kAnticipation = 2,
};

// Layout (all little-endian): 8-byte magic "ASSISTCK", u32 format version,
// u32 kind tag, u32 flags, u32 shape count, shape count x (u32 rows, u32
// cols), u64 value count, value count x f64.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  CheckpointKind kind = CheckpointKind::kPolicy;
  std::uint32_t flags = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes;
  std::vector<double> values;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace assist

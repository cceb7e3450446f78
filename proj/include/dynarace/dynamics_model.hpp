#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "dynarace/bytes.hpp"
#include "dynarace/mlp.hpp"
#include "dynarace/plant.hpp"

namespace dynarace {

struct ModelConfig {
  int state_dim = kStateDim;
  int action_dim = kActionDim;
  int history = 4;
  int ensemble = 5;
  std::vector<int> hidden{128, 128};
  double lv_min = -10.0;
  double lv_max = 0.5;
  AdamConfig adam{.lr = 1e-3};
  int batch = 256;
  // Express (x, y, yaw) = state[0..2] relative to the newest state in the
  // window. Only meaningful for the 9-dim robot state.
  bool egocentric = true;
  int threads = 0;  // 0 = hardware concurrency

  int step_dim() const { return state_dim + action_dim; }
  int input_dim() const { return history * step_dim(); }
  std::vector<int> layer_sizes() const {
    std::vector<int> s{input_dim()};
    s.insert(s.end(), hidden.begin(), hidden.end());
    s.push_back(2 * state_dim);
    return s;
  }
  void validate() const;
};

// A sequence of states and the actions applied at each of them.
struct StateSequence {
  std::vector<std::vector<double>> states;
  std::vector<std::vector<double>> actions;
  std::size_t size() const { return states.size(); }
};

StateSequence to_sequence(const Trajectory& traj);

// Per-dimension statistics used to normalize inputs and delta targets.
struct NormStats {
  std::vector<double> in_mean, in_std;
  std::vector<double> delta_mean, delta_std;
  static constexpr double kStdFloor = 1e-6;
};

// Raw (unnormalized) windows: inputs are input_dim x N, deltas state_dim x N.
struct RawWindows {
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd deltas;
  std::size_t size() const { return static_cast<std::size_t>(inputs.cols()); }
};

// Normalized windows ready for training.
struct Windows {
  Eigen::MatrixXf inputs;
  Eigen::MatrixXf targets;
  std::size_t size() const { return static_cast<std::size_t>(inputs.cols()); }
};

// Writes the model features of one window of `history` steps ending at
// states[last]; `out` has size input_dim.
void window_features(const ModelConfig& cfg, std::span<const double* const> states,
                     std::span<const double* const> actions, std::span<double> out);
// Delta target from `last` to `next` in the model's (possibly egocentric) frame.
void state_delta(const ModelConfig& cfg, std::span<const double> last, std::span<const double> next,
                 std::span<double> out);
// Inverse of state_delta.
void apply_delta(const ModelConfig& cfg, std::span<const double> last, std::span<const double> delta,
                 std::span<double> next);

// For each sequence of length T, emits max(0, T - H) windows.
RawWindows build_raw_windows(std::span<const StateSequence> seqs, const ModelConfig& cfg);
NormStats fit_norm_stats(const RawWindows& raw);
Windows normalize_windows(const RawWindows& raw, const NormStats& stats);
Windows build_windows(std::span<const StateSequence> seqs, const ModelConfig& cfg,
                      const NormStats& stats);

struct GaussianPrediction {
  std::vector<double> mean;     // normalized delta
  std::vector<double> log_var;  // within (lv_min, lv_max)
};

// Smooth symmetric clamp: midpoint + half-range * tanh(raw).
template <typename Scalar>
Scalar bound_log_var(Scalar raw, double lv_min, double lv_max) {
  const Scalar mid = static_cast<Scalar>(0.5 * (lv_min + lv_max));
  const Scalar half = static_cast<Scalar>(0.5 * (lv_max - lv_min));
  return mid + half * std::tanh(raw);
}

template <typename Scalar>
GaussianPrediction predict_member(const Mlp<Scalar>& member, std::span<const double> input,
                                  double lv_min, double lv_max) {
  if (static_cast<int>(input.size()) != member.input_dim()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "model input has " + std::to_string(input.size()) + " entries, expected " +
                    std::to_string(member.input_dim()));
  }
  typename Mlp<Scalar>::Matrix x(member.input_dim(), 1);
  for (std::size_t i = 0; i < input.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = static_cast<Scalar>(input[i]);
  const auto out = member.forward(x);
  const int s = member.output_dim() / 2;
  GaussianPrediction p;
  p.mean.resize(static_cast<std::size_t>(s));
  p.log_var.resize(static_cast<std::size_t>(s));
  for (int i = 0; i < s; ++i) {
    p.mean[static_cast<std::size_t>(i)] = static_cast<double>(out(i, 0));
    p.log_var[static_cast<std::size_t>(i)] =
        static_cast<double>(bound_log_var<Scalar>(out(s + i, 0), lv_min, lv_max));
  }
  return p;
}

inline double nll_loss(const GaussianPrediction& pred, std::span<const double> target) {
  if (pred.mean.size() != target.size() || pred.log_var.size() != target.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "prediction/target dimension mismatch");
  }
  const double ln2pi = std::log(2.0 * std::numbers::pi);
  double total = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double r = target[i] - pred.mean[i];
    total += r * r * std::exp(-pred.log_var[i]) + pred.log_var[i] + ln2pi;
  }
  return 0.5 * total;
}

// Mean Gaussian NLL of a batch and its gradient w.r.t. member parameters.
template <typename Scalar>
double nll_batch_grad(const Mlp<Scalar>& member, const typename Mlp<Scalar>::Matrix& inputs,
                      const typename Mlp<Scalar>::Matrix& targets, double lv_min, double lv_max,
                      std::vector<Scalar>* grad) {
  using Matrix = typename Mlp<Scalar>::Matrix;
  typename Mlp<Scalar>::Cache cache;
  const Matrix out = member.forward(inputs, grad ? &cache : nullptr);
  const Eigen::Index s = targets.rows();
  const Eigen::Index b = targets.cols();
  const Scalar inv_b = Scalar(1) / static_cast<Scalar>(b);
  const Scalar mid = static_cast<Scalar>(0.5 * (lv_min + lv_max));
  const Scalar half = static_cast<Scalar>(0.5 * (lv_max - lv_min));
  const Scalar ln2pi = static_cast<Scalar>(std::log(2.0 * std::numbers::pi));
  Matrix d_out;
  if (grad) d_out.resize(out.rows(), out.cols());
  double total = 0.0;
  for (Eigen::Index j = 0; j < b; ++j) {
    for (Eigen::Index i = 0; i < s; ++i) {
      const Scalar th = std::tanh(out(s + i, j));
      const Scalar lv = mid + half * th;
      const Scalar inv_var = std::exp(-lv);
      const Scalar r = targets(i, j) - out(i, j);
      total += 0.5 * static_cast<double>(r * r * inv_var + lv + ln2pi);
      if (grad) {
        d_out(i, j) = -r * inv_var * inv_b;
        d_out(s + i, j) = Scalar(0.5) * (Scalar(1) - r * r * inv_var) * half * (Scalar(1) - th * th) * inv_b;
      }
    }
  }
  if (grad) {
    grad->assign(member.num_params(), Scalar(0));
    member.backward(cache, d_out, *grad);
  }
  return total / static_cast<double>(b);
}

// Probabilistic ensemble over normalized delta targets.
class Ensemble {
 public:
  Ensemble() = default;
  Ensemble(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }
  const NormStats& stats() const { return stats_; }
  void set_stats(NormStats stats) { stats_ = std::move(stats); }
  int size() const { return static_cast<int>(members_.size()); }
  const Mlp<float>& member(int i) const { return members_[static_cast<std::size_t>(i)]; }
  Mlp<float>& member(int i) { return members_[static_cast<std::size_t>(i)]; }

  GaussianPrediction predict(int member_index, std::span<const double> normalized_input) const;

  // Batched: inputs are normalized, input_dim x N. Returns (mean, log_var), each state_dim x N.
  void predict_batch(int member_index, const Eigen::MatrixXf& inputs, Eigen::MatrixXf& mean,
                     Eigen::MatrixXf& log_var) const;

  // Mean NLL of each member on the given windows.
  std::vector<double> evaluate(const Windows& windows) const;

  Bytes serialize() const;
  static Ensemble deserialize(std::span<const std::uint8_t> bytes);

 private:
  friend std::vector<double> train_epoch(Ensemble&, const Windows&, const AdamConfig&, Rng&);

  ModelConfig cfg_;
  NormStats stats_;
  std::vector<Mlp<float>> members_;
  std::vector<Adam<float>> optimizers_;
  AdamConfig optimizer_cfg_{};
};

// One bootstrap-resampled pass per member; returns post-epoch mean NLL per member.
std::vector<double> train_epoch(Ensemble& ensemble, const Windows& windows,
                                const AdamConfig& optimizer, Rng& rng);

// Per-dimension variance of normalized targets (floored at 1e-6).
std::vector<double> target_variance(const Windows& windows);

}  // namespace dynarace

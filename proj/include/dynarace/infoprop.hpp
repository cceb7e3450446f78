#pragma once

#include <functional>
#include <span>
#include <vector>

#include "dynarace/dynamics_model.hpp"
#include "dynarace/observation.hpp"
#include "dynarace/plant.hpp"
#include "dynarace/track.hpp"

namespace dynarace {

// Ensemble predictions treated as noisy observations of the true next delta.
struct FusedPrediction {
  std::vector<double> mean;
  std::vector<double> fused_var;      // (sum_i 1/var_i)^-1
  std::vector<double> epistemic_var;  // population variance of member means
  std::vector<double> step_var;       // fused_var + epistemic_var
};

FusedPrediction fuse(std::span<const GaussianPrediction> predictions);

// c_k + 0.5 * ln(1 + step_var_k / data_var_k), in nats.
std::vector<double> accumulate_corruption(std::span<const double> corruption, std::span<const double> step_var,
                               std::span<const double> data_var);

// Anything that maps normalized window features to per-member Gaussian
// deltas. Ensemble is the production implementation; tests plug in oracles.
class DeltaModel {
 public:
  virtual ~DeltaModel() = default;
  virtual const ModelConfig& config() const = 0;
  virtual const NormStats& stats() const = 0;
  virtual int size() const = 0;
  virtual void predict_batch(int member, const Eigen::MatrixXf& inputs, Eigen::MatrixXf& mean,
                             Eigen::MatrixXf& log_var) const = 0;
};

class EnsembleDeltaModel : public DeltaModel {
 public:
  explicit EnsembleDeltaModel(const Ensemble& e) : e_(&e) {}
  const ModelConfig& config() const override { return e_->config(); }
  const NormStats& stats() const override { return e_->stats(); }
  int size() const override { return e_->size(); }
  void predict_batch(int member, const Eigen::MatrixXf& inputs, Eigen::MatrixXf& mean,
                     Eigen::MatrixXf& log_var) const override {
    e_->predict_batch(member, inputs, mean, log_var);
  }

 private:
  const Ensemble* e_;
};

// Maps raw observations (kObsDim x N) and per-column standard-normal noise
// (kActionDim x N) to torque actions (kActionDim x N).
using BatchPolicy =
    std::function<void(const Eigen::MatrixXf& obs, const Eigen::MatrixXf& noise, Eigen::MatrixXf& actions)>;

struct RolloutConfig {
  double kappa = 1.0;
  int t_max = 200;
  int streams = 1024;
  std::vector<double> data_var;
  double lookahead_spacing = 0.1;
  int chunk = 256;   // streams per batched chunk
  int threads = 0;

  void validate(int state_dim) const;
};

struct RolloutState {
  std::vector<std::vector<double>> states;   // last H estimated states, oldest first
  std::vector<std::vector<double>> actions;  // actions applied at states[0..H-2]
  std::vector<double> corruption;
  std::vector<float> obs;  // raw observation of states.back()
  TrackFrame frame;        // track frame of states.back()
  int age = 0;       // emitted steps
  int attempts = 0;  // model steps taken, including one rejected by the budget
  bool alive = true;
  Rng rng{0};

  const std::vector<double>& current() const { return states.back(); }
};

// Synthetic transitions in struct-of-arrays form, with raw observations.
struct RolloutBatch {
  std::vector<Transition> transitions;
  std::vector<float> obs;       // n x kObsDim
  std::vector<float> next_obs;  // n x kObsDim
  std::vector<int> stream;      // emitting stream per transition
  std::size_t size() const { return transitions.size(); }
  void append(const RolloutBatch& other);
};

struct RolloutContext {
  const DeltaModel* model = nullptr;
  const BatchPolicy* policy = nullptr;
  const Track* track = nullptr;
  const PlantParams* params = nullptr;
};

RolloutState make_rollout_state(const RolloutContext& ctx, std::span<const std::vector<double>> states,
                                std::span<const std::vector<double>> actions,
                                double lookahead_spacing, Rng rng);

// Advances every alive stream by one step and appends what survives to `out`.
void step_rollout(const RolloutContext& ctx, std::vector<RolloutState>& states,
                  const RolloutConfig& cfg, RolloutBatch& out);

struct GenerateStats {
  std::vector<int> lengths;  // model steps taken per stream, in [1, T_max]
  std::vector<int> emitted;  // transitions emitted per stream
  double median_length = 0.0;
};

// Seeds cfg.streams rollouts at uniformly drawn real windows and runs them to
// completion.
RolloutBatch generate(const RolloutContext& ctx, std::span<const StateSequence> real,
                      const RolloutConfig& cfg, Rng& rng, GenerateStats* stats = nullptr);

}  // namespace dynarace

#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "dynarace/bytes.hpp"
#include "dynarace/infoprop.hpp"
#include "dynarace/mlp.hpp"
#include "dynarace/observation.hpp"

namespace dynarace {

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

struct SacConfig {
  std::vector<int> hidden{64, 64};
  AdamConfig actor_adam{};
  AdamConfig critic_adam{};
  AdamConfig alpha_adam{};
  double gamma = 0.99;
  double polyak = 0.005;
  double target_entropy = -2.0;
  double init_alpha = 0.1;
  int batch = 128;
  double ratio_real = 0.1;

  void validate() const;
};

// Per-dimension observation normalization, frozen per training round.
struct ObsNormalizer {
  std::vector<float> mean = std::vector<float>(kObsDim, 0.0f);
  std::vector<float> std = std::vector<float>(kObsDim, 1.0f);

  static ObsNormalizer fit(std::span<const float> obs_rows);  // n x kObsDim
  template <typename Scalar>
  void apply(Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& m) const {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < kObsDim; ++i) {
        m(i, j) = (m(i, j) - static_cast<Scalar>(mean[static_cast<std::size_t>(i)])) /
                  static_cast<Scalar>(std[static_cast<std::size_t>(i)]);
      }
    }
  }
  friend bool operator==(const ObsNormalizer&, const ObsNormalizer&) = default;
};

// Maps the actor's raw log-std output smoothly into (kLogStdMin, kLogStdMax).
template <typename Scalar>
Scalar bound_log_std(Scalar raw) {
  return static_cast<Scalar>(kLogStdMin) +
         static_cast<Scalar>(0.5 * (kLogStdMax - kLogStdMin)) * (std::tanh(raw) + Scalar(1));
}

// log(1 - tanh(u)^2), computed stably.
template <typename Scalar>
Scalar log1m_tanh2(Scalar u) {
  const Scalar x = Scalar(-2) * u;
  const Scalar softplus = x > Scalar(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return Scalar(2) * (static_cast<Scalar>(std::numbers::ln2) - u - softplus);
}

// Squashed-Gaussian sample for a batch. Actions are in [-1, 1]; log_prob is
// the density of that unit-scaled action.
template <typename Scalar>
struct PolicySample {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Matrix mean, log_std, raw_log_std, u, action;
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> log_prob;
};

template <typename Scalar>
PolicySample<Scalar> sample_policy(const Mlp<Scalar>& actor,
                                   const typename Mlp<Scalar>::Matrix& obs_norm,
                                   const typename Mlp<Scalar>::Matrix& noise,
                                   typename Mlp<Scalar>::Cache* cache = nullptr) {
  PolicySample<Scalar> s;
  const auto out = actor.forward(obs_norm, cache);
  const Eigen::Index a = kActionDim, b = out.cols();
  s.mean = out.topRows(a);
  s.raw_log_std = out.bottomRows(a);
  s.log_std = s.raw_log_std.unaryExpr([](Scalar r) { return bound_log_std<Scalar>(r); });
  s.u = s.mean + (s.log_std.array().exp() * noise.array()).matrix();
  s.action = s.u.array().tanh().matrix();
  s.log_prob.resize(b);
  const Scalar half_ln2pi = static_cast<Scalar>(0.5 * std::log(2.0 * std::numbers::pi));
  for (Eigen::Index j = 0; j < b; ++j) {
    Scalar lp = 0;
    for (Eigen::Index i = 0; i < a; ++i) {
      lp += Scalar(-0.5) * noise(i, j) * noise(i, j) - s.log_std(i, j) - half_ln2pi -
            log1m_tanh2<Scalar>(s.u(i, j));
    }
    s.log_prob(j) = lp;
  }
  return s;
}

// Log-density of a unit-scaled squashed-Gaussian action given the
// pre-squash mean and log-std (scalar case).
inline double squashed_log_prob(double action, double mean, double log_std) {
  const double u = std::atanh(action);
  const double z = (u - mean) / std::exp(log_std);
  return -0.5 * z * z - log_std - 0.5 * std::log(2.0 * std::numbers::pi) - log1m_tanh2(u);
}

template <typename Scalar>
typename Mlp<Scalar>::Matrix critic_input(const typename Mlp<Scalar>::Matrix& obs_norm,
                                          const typename Mlp<Scalar>::Matrix& unit_action) {
  typename Mlp<Scalar>::Matrix x(obs_norm.rows() + unit_action.rows(), obs_norm.cols());
  x.topRows(obs_norm.rows()) = obs_norm;
  x.bottomRows(unit_action.rows()) = unit_action;
  return x;
}

// 0.5 * mean((Q(s,a) - y)^2) and its parameter gradient.
template <typename Scalar>
double critic_loss_grad(const Mlp<Scalar>& critic, const typename Mlp<Scalar>::Matrix& input,
                        const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>& targets,
                        std::vector<Scalar>* grad) {
  typename Mlp<Scalar>::Cache cache;
  const auto q = critic.forward(input, grad ? &cache : nullptr);
  const Eigen::Index b = q.cols();
  typename Mlp<Scalar>::Matrix d(1, b);
  double loss = 0.0;
  for (Eigen::Index j = 0; j < b; ++j) {
    const Scalar err = q(0, j) - targets(j);
    loss += 0.5 * static_cast<double>(err * err);
    d(0, j) = err / static_cast<Scalar>(b);
  }
  if (grad) {
    grad->assign(critic.num_params(), Scalar(0));
    critic.backward(cache, d, *grad);
  }
  return loss / static_cast<double>(b);
}

// Reparameterized actor objective mean(alpha * log_prob - min(Q1, Q2)) and its
// gradient w.r.t. actor parameters (critics held fixed).
template <typename Scalar>
double actor_loss_grad(const Mlp<Scalar>& actor, const Mlp<Scalar>& q1, const Mlp<Scalar>& q2,
                       const typename Mlp<Scalar>::Matrix& obs_norm,
                       const typename Mlp<Scalar>::Matrix& noise, Scalar alpha,
                       std::vector<Scalar>* grad, double* mean_log_prob = nullptr) {
  using Matrix = typename Mlp<Scalar>::Matrix;
  typename Mlp<Scalar>::Cache acache, c1, c2;
  const PolicySample<Scalar> s = sample_policy(actor, obs_norm, noise, grad ? &acache : nullptr);
  const Matrix x = critic_input<Scalar>(obs_norm, s.action);
  const Matrix v1 = q1.forward(x, grad ? &c1 : nullptr);
  const Matrix v2 = q2.forward(x, grad ? &c2 : nullptr);
  const Eigen::Index b = obs_norm.cols();
  const Scalar inv_b = Scalar(1) / static_cast<Scalar>(b);
  double loss = 0.0, lp_sum = 0.0;
  Matrix d1 = Matrix::Zero(1, b), d2 = Matrix::Zero(1, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const bool first = v1(0, j) <= v2(0, j);
    const Scalar qmin = first ? v1(0, j) : v2(0, j);
    loss += static_cast<double>(alpha * s.log_prob(j) - qmin);
    lp_sum += static_cast<double>(s.log_prob(j));
    (first ? d1 : d2)(0, j) = -inv_b;
  }
  if (mean_log_prob) *mean_log_prob = lp_sum / static_cast<double>(b);
  if (grad) {
    std::vector<Scalar> scratch1, scratch2;
    Matrix dx1, dx2;
    q1.backward(c1, d1, scratch1, &dx1);
    q2.backward(c2, d2, scratch2, &dx2);
    const Eigen::Index a = kActionDim;
    Matrix d_out(2 * a, b);
    for (Eigen::Index j = 0; j < b; ++j) {
      for (Eigen::Index i = 0; i < a; ++i) {
        const Scalar act = s.action(i, j);
        const Scalar dq_da = dx1(obs_norm.rows() + i, j) + dx2(obs_norm.rows() + i, j);
        // d/du of alpha*log_prob is alpha * 2 tanh(u); tanh' = 1 - a^2.
        const Scalar du = alpha * Scalar(2) * act * inv_b + dq_da * (Scalar(1) - act * act);
        const Scalar sigma = std::exp(s.log_std(i, j));
        const Scalar dlog_std = du * sigma * noise(i, j) - alpha * inv_b;
        const Scalar th = std::tanh(s.raw_log_std(i, j));
        d_out(i, j) = du;
        d_out(a + i, j) = dlog_std * static_cast<Scalar>(0.5 * (kLogStdMax - kLogStdMin)) * (Scalar(1) - th * th);
      }
    }
    grad->assign(actor.num_params(), Scalar(0));
    actor.backward(acache, d_out, *grad);
  }
  return loss / static_cast<double>(b);
}

// Soft TD targets r + gamma * (1 - terminated) * (min(Q1', Q2') - alpha * log_prob)
// evaluated at a reparameterized next action drawn with `noise`.
template <typename Scalar>
Eigen::Matrix<Scalar, 1, Eigen::Dynamic> soft_td_targets(
    const Mlp<Scalar>& actor, const Mlp<Scalar>& q1_target, const Mlp<Scalar>& q2_target,
    const typename Mlp<Scalar>::Matrix& next_obs_norm, const typename Mlp<Scalar>::Matrix& noise,
    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>& reward,
    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>& terminated, Scalar alpha, Scalar gamma) {
  const PolicySample<Scalar> s = sample_policy(actor, next_obs_norm, noise);
  const auto x = critic_input<Scalar>(next_obs_norm, s.action);
  const auto v1 = q1_target.forward(x);
  const auto v2 = q2_target.forward(x);
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> y(next_obs_norm.cols());
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    const Scalar soft_v = std::min(v1(0, j), v2(0, j)) - alpha * s.log_prob(j);
    y(j) = reward(j) + gamma * (Scalar(1) - terminated(j)) * soft_v;
  }
  return y;
}

// A mixed training batch; observations are raw, actions are torques.
struct Batch {
  Eigen::MatrixXf obs, next_obs;  // kObsDim x B
  Eigen::MatrixXf action;         // kActionDim x B
  Eigen::RowVectorXf reward, terminated;
  std::size_t real_count = 0;
  std::size_t size() const { return static_cast<std::size_t>(obs.cols()); }
};

// Append-only ring buffer of transitions with raw observations.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 1'000'000) : capacity_(capacity) {}

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  void clear() { size_ = 0; head_ = 0; obs_.clear(); next_obs_.clear(); action_.clear(); reward_.clear(); done_.clear(); }

  void add(std::span<const float> obs, const Action& action, double reward,
           std::span<const float> next_obs, bool terminated);
  void add_batch(const RolloutBatch& batch);
  void copy_to(std::size_t index, Batch& out, Eigen::Index col) const;

  // Raw observations of every stored transition (n x kObsDim).
  std::span<const float> observations() const { return {obs_.data(), size_ * kObsDim}; }

 private:
  std::size_t capacity_;
  std::size_t size_ = 0, head_ = 0;
  std::vector<float> obs_, next_obs_, action_, reward_;
  std::vector<std::uint8_t> done_;
};

struct ReplayBuffers {
  ReplayBuffer real;
  ReplayBuffer synthetic;
};

Batch mix_sample(const ReplayBuffers& buffers, double ratio_real, int batch_size, Rng& rng);

// Appends one logged real trajectory. The final step is kept only when it
// terminated (its successor state is not logged and is never bootstrapped).
void add_trajectory(ReplayBuffer& buffer, const Trajectory& traj, const Track& track,
                    double lookahead_spacing);

struct SacLosses {
  double critic = 0.0;
  double actor = 0.0;
  double alpha = 0.0;
  double alpha_loss = 0.0;
  double entropy = 0.0;
};

// Actor, twin critics, their Polyak targets, temperature, and optimizer state.
class SacAgent {
 public:
  SacAgent() = default;
  SacAgent(const SacConfig& cfg, double torque_max, Rng& rng);

  const SacConfig& config() const { return cfg_; }
  double torque_max() const { return torque_max_; }
  double alpha() const { return std::exp(static_cast<double>(log_alpha_)); }
  float log_alpha() const { return log_alpha_; }

  const Mlp<float>& actor() const { return actor_; }
  const Mlp<float>& q1() const { return q1_; }
  const Mlp<float>& q2() const { return q2_; }
  const Mlp<float>& q1_target() const { return q1_target_; }
  const Mlp<float>& q2_target() const { return q2_target_; }
  Mlp<float>& mutable_actor() { return actor_; }
  Mlp<float>& mutable_q1() { return q1_; }
  Mlp<float>& mutable_q2() { return q2_; }
  Mlp<float>& mutable_q1_target() { return q1_target_; }
  Mlp<float>& mutable_q2_target() { return q2_target_; }

  const ObsNormalizer& normalizer() const { return norm_; }
  void set_normalizer(ObsNormalizer n) { norm_ = std::move(n); }
  // Switches to `n` and rewrites the observation columns of every network's
  // first layer so each network computes the same function of the raw
  // observation as before.
  void renormalize(const ObsNormalizer& n);

  // Raw observation -> torque action.
  Action act(std::span<const float> obs, Rng& rng, bool deterministic) const;
  // Batched: raw obs (kObsDim x N), standard-normal noise (kActionDim x N).
  void act_batch(const Eigen::MatrixXf& obs, const Eigen::MatrixXf& noise, bool deterministic,
                 Eigen::MatrixXf& actions) const;

  Eigen::RowVectorXf critic_target(const Batch& batch, Rng& rng) const;
  SacLosses update_step(const Batch& batch, Rng& rng);

  void set_learning_rates(double actor_lr, double critic_lr, double alpha_lr);

 private:
  friend Bytes serialize_policy(const SacAgent&, std::uint64_t);
  friend SacAgent deserialize_policy(std::span<const std::uint8_t>, std::uint64_t*);

  SacConfig cfg_;
  double torque_max_ = 0.2;
  Mlp<float> actor_, q1_, q2_, q1_target_, q2_target_;
  float log_alpha_ = 0.0f;
  Adam<float> actor_opt_, q1_opt_, q2_opt_, alpha_opt_;
  ObsNormalizer norm_;
};

// Policy checkpoint ("WPOL", version 1), little-endian:
//   char[4] "WPOL" | u32 version | u64 checkpoint_id
//   u16 n_blocks (5) | per block: u8 activation | u16 n_sizes | u16 sizes[n_sizes]
//   f32 torque_max | f32 log_alpha
//   f32 params of actor, q1, q2, q1_target, q2_target (Mlp layout)
//   f32 obs_mean[69] | f32 obs_std[69]
Bytes serialize_policy(const SacAgent& agent, std::uint64_t checkpoint_id);
SacAgent deserialize_policy(std::span<const std::uint8_t> bytes, std::uint64_t* checkpoint_id = nullptr);
std::uint64_t policy_checkpoint_id(std::span<const std::uint8_t> bytes);

}  // namespace dynarace

#include "dynarace/sac.hpp"

#include <algorithm>
#include <cstring>

namespace dynarace {

void SacConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw Error(ErrorCode::kBadConfig, "sac.gamma must lie in [0, 1)");
  if (!(polyak >= 0.0 && polyak <= 1.0)) throw Error(ErrorCode::kBadConfig, "sac.polyak must lie in [0, 1]");
  if (!(init_alpha > 0.0)) throw Error(ErrorCode::kBadConfig, "sac.init_alpha must be > 0");
  if (batch < 1) throw Error(ErrorCode::kBadConfig, "sac.batch must be >= 1");
  if (!(ratio_real >= 0.0 && ratio_real <= 1.0)) {
    throw Error(ErrorCode::kBadConfig, "sac.ratio_real must lie in [0, 1]");
  }
  for (int h : hidden) {
    if (h < 1) throw Error(ErrorCode::kBadConfig, "sac hidden sizes must be >= 1");
  }
}

ObsNormalizer ObsNormalizer::fit(std::span<const float> rows) {
  ObsNormalizer n;
  const std::size_t count = rows.size() / kObsDim;
  if (count == 0) return n;
  for (std::size_t i = 0; i < kObsDim; ++i) {
    double sum = 0.0;
    for (std::size_t r = 0; r < count; ++r) sum += rows[r * kObsDim + i];
    const double mu = sum / static_cast<double>(count);
    double var = 0.0;
    for (std::size_t r = 0; r < count; ++r) {
      const double d = rows[r * kObsDim + i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(count);
    n.mean[i] = static_cast<float>(mu);
    n.std[i] = static_cast<float>(std::max(std::sqrt(var), 1e-3));
  }
  return n;
}

void ReplayBuffer::add(std::span<const float> obs, const Action& action, double reward,
                       std::span<const float> next_obs, bool terminated) {
  if (obs.size() != kObsDim || next_obs.size() != kObsDim) {
    throw Error(ErrorCode::kDimensionMismatch, "replay observations must have 69 entries");
  }
  if (capacity_ == 0) return;
  std::size_t slot;
  if (size_ < capacity_) {
    slot = size_++;
    obs_.resize(size_ * kObsDim);
    next_obs_.resize(size_ * kObsDim);
    action_.resize(size_ * kActionDim);
    reward_.resize(size_);
    done_.resize(size_);
  } else {
    slot = head_;
    head_ = (head_ + 1) % capacity_;
  }
  std::copy(obs.begin(), obs.end(), obs_.begin() + static_cast<std::ptrdiff_t>(slot * kObsDim));
  std::copy(next_obs.begin(), next_obs.end(), next_obs_.begin() + static_cast<std::ptrdiff_t>(slot * kObsDim));
  action_[slot * kActionDim] = static_cast<float>(action.drive);
  action_[slot * kActionDim + 1] = static_cast<float>(action.reaction);
  reward_[slot] = static_cast<float>(reward);
  done_[slot] = terminated ? 1 : 0;
}

void ReplayBuffer::add_batch(const RolloutBatch& batch) {
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& t = batch.transitions[i];
    add(std::span<const float>(batch.obs.data() + i * kObsDim, kObsDim), t.action, t.reward,
        std::span<const float>(batch.next_obs.data() + i * kObsDim, kObsDim), t.terminated);
  }
}

void ReplayBuffer::copy_to(std::size_t index, Batch& out, Eigen::Index col) const {
  for (int i = 0; i < kObsDim; ++i) {
    out.obs(i, col) = obs_[index * kObsDim + static_cast<std::size_t>(i)];
    out.next_obs(i, col) = next_obs_[index * kObsDim + static_cast<std::size_t>(i)];
  }
  out.action(0, col) = action_[index * kActionDim];
  out.action(1, col) = action_[index * kActionDim + 1];
  out.reward(col) = reward_[index];
  out.terminated(col) = done_[index];
}

Batch mix_sample(const ReplayBuffers& buffers, double ratio_real, int batch_size, Rng& rng) {
  const std::size_t nr = buffers.real.size(), ns = buffers.synthetic.size();
  if (nr == 0 && ns == 0) throw Error(ErrorCode::kAllBuffersEmpty, "both replay buffers are empty");
  const auto b = static_cast<std::size_t>(batch_size);
  std::size_t want_real = static_cast<std::size_t>(std::ceil(ratio_real * static_cast<double>(b) - 1e-9));
  want_real = std::min(want_real, b);
  if (nr == 0) want_real = 0;
  if (ns == 0) want_real = b;
  Batch out;
  out.obs.resize(kObsDim, static_cast<Eigen::Index>(b));
  out.next_obs.resize(kObsDim, static_cast<Eigen::Index>(b));
  out.action.resize(kActionDim, static_cast<Eigen::Index>(b));
  out.reward.resize(static_cast<Eigen::Index>(b));
  out.terminated.resize(static_cast<Eigen::Index>(b));
  for (std::size_t j = 0; j < b; ++j) {
    if (j < want_real) {
      buffers.real.copy_to(rng.index(nr), out, static_cast<Eigen::Index>(j));
    } else {
      buffers.synthetic.copy_to(rng.index(ns), out, static_cast<Eigen::Index>(j));
    }
  }
  out.real_count = want_real;
  return out;
}

void add_trajectory(ReplayBuffer& buffer, const Trajectory& traj, const Track& track,
                    double lookahead_spacing) {
  const std::size_t t = traj.steps.size();
  if (t == 0) return;
  std::vector<float> cur(kObsDim), next(kObsDim);
  make_observation(track, traj.steps[0].est_state, lookahead_spacing, cur);
  for (std::size_t k = 0; k < t; ++k) {
    const auto& step = traj.steps[k];
    if (k + 1 < t) {
      make_observation(track, traj.steps[k + 1].est_state, lookahead_spacing, next);
      buffer.add(cur, step.action, step.reward, next, step.terminated);
      std::swap(cur, next);
    } else if (step.terminated) {
      buffer.add(cur, step.action, step.reward, cur, true);
    }
  }
}

SacAgent::SacAgent(const SacConfig& cfg, double torque_max, Rng& rng)
    : cfg_(cfg), torque_max_(torque_max) {
  cfg_.validate();
  std::vector<int> actor_sizes{kObsDim};
  actor_sizes.insert(actor_sizes.end(), cfg_.hidden.begin(), cfg_.hidden.end());
  actor_sizes.push_back(2 * kActionDim);
  std::vector<int> critic_sizes{kObsDim + kActionDim};
  critic_sizes.insert(critic_sizes.end(), cfg_.hidden.begin(), cfg_.hidden.end());
  critic_sizes.push_back(1);

  actor_ = Mlp<float>(actor_sizes, Activation::kRelu);
  q1_ = Mlp<float>(critic_sizes, Activation::kRelu);
  q2_ = Mlp<float>(critic_sizes, Activation::kRelu);
  Rng ra = rng.split(1), r1 = rng.split(2), r2 = rng.split(3);
  actor_.init(ra, /*zero_output_layer=*/true);
  q1_.init(r1, false);
  q2_.init(r2, false);
  q1_target_ = q1_;
  q2_target_ = q2_;
  log_alpha_ = static_cast<float>(std::log(cfg_.init_alpha));
  actor_opt_ = Adam<float>(actor_.num_params(), cfg_.actor_adam);
  q1_opt_ = Adam<float>(q1_.num_params(), cfg_.critic_adam);
  q2_opt_ = Adam<float>(q2_.num_params(), cfg_.critic_adam);
  alpha_opt_ = Adam<float>(1, cfg_.alpha_adam);
}

void SacAgent::set_learning_rates(double actor_lr, double critic_lr, double alpha_lr) {
  cfg_.actor_adam.lr = actor_lr;
  cfg_.critic_adam.lr = critic_lr;
  cfg_.alpha_adam.lr = alpha_lr;
  actor_opt_.set_config(cfg_.actor_adam);
  q1_opt_.set_config(cfg_.critic_adam);
  q2_opt_.set_config(cfg_.critic_adam);
  alpha_opt_.set_config(cfg_.alpha_adam);
}

void SacAgent::act_batch(const Eigen::MatrixXf& obs, const Eigen::MatrixXf& noise,
                         bool deterministic, Eigen::MatrixXf& actions) const {
  if (obs.rows() != kObsDim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "observation has " + std::to_string(obs.rows()) + " entries, expected 69");
  }
  Eigen::MatrixXf x = obs;
  norm_.apply(x);
  const float scale = static_cast<float>(torque_max_);
  if (deterministic) {
    const Eigen::MatrixXf out = actor_.forward(x);
    actions = (out.topRows(kActionDim).array().tanh() * scale).matrix();
    return;
  }
  const PolicySample<float> s = sample_policy(actor_, x, noise);
  actions = (s.action.array() * scale).matrix();
}

namespace {

// x_old = (o - m0) / s0 and x_new = (o - m1) / s1, so x_old = x_new * s1/s0 + (m1 - m0)/s0.
void fold_normalizer(Mlp<float>& net, const ObsNormalizer& from, const ObsNormalizer& to) {
  auto w = net.mutable_weight(0);
  auto b = net.mutable_bias(0);
  for (int i = 0; i < kObsDim; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const float scale = to.std[k] / from.std[k];
    const float shift = (to.mean[k] - from.mean[k]) / from.std[k];
    b += w.col(i) * shift;
    w.col(i) *= scale;
  }
}

}  // namespace

void SacAgent::renormalize(const ObsNormalizer& n) {
  for (Mlp<float>* net : {&actor_, &q1_, &q2_, &q1_target_, &q2_target_}) fold_normalizer(*net, norm_, n);
  norm_ = n;
}

Action SacAgent::act(std::span<const float> obs, Rng& rng, bool deterministic) const {
  if (obs.size() != kObsDim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "observation has " + std::to_string(obs.size()) + " entries, expected 69");
  }
  Eigen::MatrixXf x(kObsDim, 1), noise(kActionDim, 1), a;
  for (int i = 0; i < kObsDim; ++i) x(i, 0) = obs[static_cast<std::size_t>(i)];
  if (!deterministic) {
    for (int i = 0; i < kActionDim; ++i) noise(i, 0) = static_cast<float>(rng.normal());
  } else {
    noise.setZero();
  }
  act_batch(x, noise, deterministic, a);
  // Clamp guards the float rounding of tanh * scale.
  const double tm = torque_max_;
  return Action{std::clamp(static_cast<double>(a(0, 0)), -tm, tm),
                std::clamp(static_cast<double>(a(1, 0)), -tm, tm)};
}

Eigen::RowVectorXf SacAgent::critic_target(const Batch& batch, Rng& rng) const {
  const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
  Eigen::MatrixXf next = batch.next_obs;
  norm_.apply(next);
  Eigen::MatrixXf noise(kActionDim, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    for (int i = 0; i < kActionDim; ++i) noise(i, j) = static_cast<float>(rng.normal());
  }
  return soft_td_targets<float>(actor_, q1_target_, q2_target_, next, noise, batch.reward,
                                batch.terminated, std::exp(log_alpha_), static_cast<float>(cfg_.gamma));
}

namespace {

void polyak_update(Mlp<float>& target, const Mlp<float>& online, double tau) {
  auto& t = target.params();
  const auto& o = online.params();
  if (tau >= 1.0) {
    t = o;
    return;
  }
  const float tf = static_cast<float>(tau);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] += tf * (o[i] - t[i]);
}

}  // namespace

SacLosses SacAgent::update_step(const Batch& batch, Rng& rng) {
  if (batch.size() == 0) throw Error(ErrorCode::kEmptyBatch, "empty SAC batch");
  const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
  SacLosses losses;

  const Eigen::RowVectorXf y = critic_target(batch, rng);
  Eigen::MatrixXf obs = batch.obs;
  norm_.apply(obs);
  const Eigen::MatrixXf unit_action = batch.action / static_cast<float>(torque_max_);
  const Eigen::MatrixXf x = critic_input<float>(obs, unit_action);
  std::vector<float> g1, g2, ga;
  losses.critic = critic_loss_grad<float>(q1_, x, y, &g1) + critic_loss_grad<float>(q2_, x, y, &g2);
  q1_opt_.step(q1_.params(), g1);
  q2_opt_.step(q2_.params(), g2);

  Eigen::MatrixXf noise(kActionDim, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    for (int i = 0; i < kActionDim; ++i) noise(i, j) = static_cast<float>(rng.normal());
  }
  const float alpha = std::exp(log_alpha_);
  double mean_log_prob = 0.0;
  losses.actor = actor_loss_grad<float>(actor_, q1_, q2_, obs, noise, alpha, &ga, &mean_log_prob);
  actor_opt_.step(actor_.params(), ga);

  // Temperature: minimize -log_alpha * (log_prob + target_entropy).
  std::vector<float> la{log_alpha_};
  const std::vector<float> gla{static_cast<float>(-(mean_log_prob + cfg_.target_entropy))};
  losses.alpha_loss = -static_cast<double>(log_alpha_) * (mean_log_prob + cfg_.target_entropy);
  alpha_opt_.step(la, gla);
  log_alpha_ = la[0];

  polyak_update(q1_target_, q1_, cfg_.polyak);
  polyak_update(q2_target_, q2_, cfg_.polyak);

  losses.alpha = std::exp(static_cast<double>(log_alpha_));
  losses.entropy = -mean_log_prob;
  return losses;
}

Bytes serialize_policy(const SacAgent& agent, std::uint64_t checkpoint_id) {
  Bytes out;
  ByteWriter w(out);
  w.raw(std::string_view("WPOL"));
  w.put<std::uint32_t>(1);
  w.put<std::uint64_t>(checkpoint_id);
  const Mlp<float>* blocks[] = {&agent.actor_, &agent.q1_, &agent.q2_, &agent.q1_target_, &agent.q2_target_};
  w.put<std::uint16_t>(5);
  for (const auto* b : blocks) {
    w.put<std::uint8_t>(b->activation() == Activation::kRelu ? 0 : 1);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(b->sizes().size()));
    for (int s : b->sizes()) w.put<std::uint16_t>(static_cast<std::uint16_t>(s));
  }
  w.put_f32(agent.torque_max_);
  w.put(agent.log_alpha_);
  for (const auto* b : blocks) {
    for (float p : b->params()) w.put(p);
  }
  for (float m : agent.norm_.mean) w.put(m);
  for (float s : agent.norm_.std) w.put(s);
  return out;
}

SacAgent deserialize_policy(std::span<const std::uint8_t> bytes, std::uint64_t* checkpoint_id) {
  ByteReader r(bytes, ErrorCode::kBadCheckpoint);
  const auto magic = r.raw(4);
  if (std::memcmp(magic.data(), "WPOL", 4) != 0) throw Error(ErrorCode::kBadCheckpoint, "not a WPOL file");
  if (r.get<std::uint32_t>() != 1) throw Error(ErrorCode::kBadCheckpoint, "unsupported WPOL version");
  const std::uint64_t id = r.get<std::uint64_t>();
  if (checkpoint_id) *checkpoint_id = id;
  if (r.get<std::uint16_t>() != 5) throw Error(ErrorCode::kBadCheckpoint, "WPOL expects 5 parameter blocks");
  std::vector<Mlp<float>> nets;
  for (int k = 0; k < 5; ++k) {
    const auto act = r.get<std::uint8_t>();
    const int n = r.get<std::uint16_t>();
    std::vector<int> sizes;
    for (int i = 0; i < n; ++i) sizes.push_back(r.get<std::uint16_t>());
    if (n < 2) throw Error(ErrorCode::kBadCheckpoint, "WPOL block needs >= 2 layer sizes");
    nets.emplace_back(sizes, act == 0 ? Activation::kRelu : Activation::kSwish);
  }
  if (nets[0].input_dim() != kObsDim || nets[0].output_dim() != 2 * kActionDim ||
      nets[1].input_dim() != kObsDim + kActionDim || nets[1].output_dim() != 1) {
    throw Error(ErrorCode::kBadCheckpoint, "WPOL architecture does not match 69-dim observations");
  }
  SacAgent a;
  a.torque_max_ = r.get<float>();
  a.log_alpha_ = r.get<float>();
  for (auto& net : nets) {
    for (float& p : net.params()) p = r.get<float>();
  }
  for (float& m : a.norm_.mean) m = r.get<float>();
  for (float& s : a.norm_.std) s = r.get<float>();
  r.expect_end("WPOL");
  a.actor_ = std::move(nets[0]);
  a.q1_ = std::move(nets[1]);
  a.q2_ = std::move(nets[2]);
  a.q1_target_ = std::move(nets[3]);
  a.q2_target_ = std::move(nets[4]);
  a.cfg_.hidden.assign(a.actor_.sizes().begin() + 1, a.actor_.sizes().end() - 1);
  a.actor_opt_ = Adam<float>(a.actor_.num_params(), a.cfg_.actor_adam);
  a.q1_opt_ = Adam<float>(a.q1_.num_params(), a.cfg_.critic_adam);
  a.q2_opt_ = Adam<float>(a.q2_.num_params(), a.cfg_.critic_adam);
  a.alpha_opt_ = Adam<float>(1, a.cfg_.alpha_adam);
  return a;
}

std::uint64_t policy_checkpoint_id(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, ErrorCode::kBadCheckpoint);
  const auto magic = r.raw(4);
  if (std::memcmp(magic.data(), "WPOL", 4) != 0) throw Error(ErrorCode::kBadCheckpoint, "not a WPOL file");
  r.get<std::uint32_t>();
  return r.get<std::uint64_t>();
}

}  // namespace dynarace

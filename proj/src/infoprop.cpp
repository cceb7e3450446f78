#include "dynarace/infoprop.hpp"

#include <algorithm>
#include <cmath>

#include "dynarace/parallel.hpp"

namespace dynarace {

FusedPrediction fuse(std::span<const GaussianPrediction> preds) {
  if (preds.empty()) throw Error(ErrorCode::kEmptyEnsemble, "cannot fuse zero predictions");
  const std::size_t d = preds.front().mean.size();
  FusedPrediction f;
  f.mean.assign(d, 0.0);
  f.fused_var.assign(d, 0.0);
  f.epistemic_var.assign(d, 0.0);
  f.step_var.assign(d, 0.0);
  const double e = static_cast<double>(preds.size());
  for (std::size_t i = 0; i < d; ++i) {
    double precision = 0.0, weighted = 0.0, mu_sum = 0.0;
    for (const auto& p : preds) {
      if (p.mean.size() != d || p.log_var.size() != d) {
        throw Error(ErrorCode::kDimensionMismatch, "ensemble members disagree on dimension");
      }
      const double inv = std::exp(-p.log_var[i]);
      precision += inv;
      weighted += p.mean[i] * inv;
      mu_sum += p.mean[i];
    }
    const double mu_bar = mu_sum / e;
    double spread = 0.0;
    for (const auto& p : preds) spread += (p.mean[i] - mu_bar) * (p.mean[i] - mu_bar);
    f.fused_var[i] = 1.0 / precision;
    f.mean[i] = f.fused_var[i] * weighted;
    f.epistemic_var[i] = spread / e;
    f.step_var[i] = f.fused_var[i] + f.epistemic_var[i];
  }
  return f;
}

std::vector<double> accumulate_corruption(std::span<const double> corruption, std::span<const double> step_var,
                               std::span<const double> data_var) {
  std::vector<double> out(corruption.begin(), corruption.end());
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] += 0.5 * std::log1p(step_var[k] / data_var[k]);
  }
  return out;
}

void RolloutConfig::validate(int state_dim) const {
  if (!(kappa > 0.0)) throw Error(ErrorCode::kBadConfig, "rollout.kappa must be > 0");
  if (t_max < 1) throw Error(ErrorCode::kBadConfig, "rollout.t_max must be >= 1");
  if (streams < 1) throw Error(ErrorCode::kBadConfig, "rollout.streams must be >= 1");
  if (chunk < 1) throw Error(ErrorCode::kBadConfig, "rollout.chunk must be >= 1");
  if (static_cast<int>(data_var.size()) != state_dim) {
    throw Error(ErrorCode::kDimensionMismatch, "rollout data_var has wrong dimension");
  }
  for (double v : data_var) {
    if (!(v > 0.0)) throw Error(ErrorCode::kBadConfig, "rollout data_var must be > 0");
  }
}

void RolloutBatch::append(const RolloutBatch& o) {
  transitions.insert(transitions.end(), o.transitions.begin(), o.transitions.end());
  obs.insert(obs.end(), o.obs.begin(), o.obs.end());
  next_obs.insert(next_obs.end(), o.next_obs.begin(), o.next_obs.end());
  stream.insert(stream.end(), o.stream.begin(), o.stream.end());
}

namespace {

EstimatedState to_est(const std::vector<double>& v) {
  EstimatedState e;
  for (int i = 0; i < kStateDim && i < static_cast<int>(v.size()); ++i) e[i] = v[static_cast<std::size_t>(i)];
  return e;
}

// Advances the streams listed in `idx` (all alive) by one step.
void step_chunk(const RolloutContext& ctx, std::vector<RolloutState>& states,
                std::span<const int> idx, const RolloutConfig& cfg, RolloutBatch& out) {
  const DeltaModel& model = *ctx.model;
  const ModelConfig& mc = model.config();
  const NormStats& ns = model.stats();
  const auto n = static_cast<Eigen::Index>(idx.size());
  const int sd = mc.state_dim;
  const int h = mc.history;

  Eigen::MatrixXf obs(kObsDim, n), noise(kActionDim, n), actions(kActionDim, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    RolloutState& st = states[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])];
    for (int i = 0; i < kObsDim; ++i) obs(i, j) = st.obs[static_cast<std::size_t>(i)];
    for (int i = 0; i < kActionDim; ++i) noise(i, j) = static_cast<float>(st.rng.normal());
  }
  (*ctx.policy)(obs, noise, actions);

  Eigen::MatrixXf inputs(mc.input_dim(), n);
  std::vector<double> feat(static_cast<std::size_t>(mc.input_dim()));
  std::vector<const double*> sp(static_cast<std::size_t>(h)), ap(static_cast<std::size_t>(h));
  std::vector<std::vector<double>> new_action(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) {
    RolloutState& st = states[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])];
    auto& a = new_action[static_cast<std::size_t>(j)];
    a.resize(static_cast<std::size_t>(mc.action_dim));
    for (int i = 0; i < mc.action_dim; ++i) a[static_cast<std::size_t>(i)] = actions(i, j);
    for (int k = 0; k < h; ++k) {
      sp[static_cast<std::size_t>(k)] = st.states[static_cast<std::size_t>(k)].data();
      ap[static_cast<std::size_t>(k)] = k + 1 < h ? st.actions[static_cast<std::size_t>(k)].data() : a.data();
    }
    window_features(mc, sp, ap, feat);
    for (int i = 0; i < mc.input_dim(); ++i) {
      inputs(i, j) = static_cast<float>((feat[static_cast<std::size_t>(i)] - ns.in_mean[static_cast<std::size_t>(i)]) /
                                        ns.in_std[static_cast<std::size_t>(i)]);
    }
  }

  const int e = model.size();
  std::vector<Eigen::MatrixXf> means(static_cast<std::size_t>(e)), lvs(static_cast<std::size_t>(e));
  for (int m = 0; m < e; ++m) model.predict_batch(m, inputs, means[static_cast<std::size_t>(m)], lvs[static_cast<std::size_t>(m)]);

  std::vector<double> delta(static_cast<std::size_t>(sd)), step_var(static_cast<std::size_t>(sd));
  std::vector<double> next(static_cast<std::size_t>(sd));
  std::vector<float> next_obs(kObsDim);
  for (Eigen::Index j = 0; j < n; ++j) {
    const int stream_id = idx[static_cast<std::size_t>(j)];
    RolloutState& st = states[static_cast<std::size_t>(stream_id)];
    for (int i = 0; i < sd; ++i) {
      double precision = 0.0, weighted = 0.0, mu_sum = 0.0;
      for (int m = 0; m < e; ++m) {
        const double mu = means[static_cast<std::size_t>(m)](i, j);
        const double inv = std::exp(-static_cast<double>(lvs[static_cast<std::size_t>(m)](i, j)));
        precision += inv;
        weighted += mu * inv;
        mu_sum += mu;
      }
      const double mu_bar = mu_sum / e;
      double spread = 0.0;
      for (int m = 0; m < e; ++m) {
        const double dm = means[static_cast<std::size_t>(m)](i, j) - mu_bar;
        spread += dm * dm;
      }
      const double fused_var = 1.0 / precision;
      const double fused_mean = fused_var * weighted;
      step_var[static_cast<std::size_t>(i)] = fused_var + spread / e;
      const double z = fused_mean + std::sqrt(step_var[static_cast<std::size_t>(i)]) * st.rng.normal();
      delta[static_cast<std::size_t>(i)] = z * ns.delta_std[static_cast<std::size_t>(i)] + ns.delta_mean[static_cast<std::size_t>(i)];
    }
    st.attempts += 1;
    st.corruption = accumulate_corruption(st.corruption, step_var, cfg.data_var);
    double mean_c = 0.0;
    for (double c : st.corruption) mean_c += c;
    mean_c /= static_cast<double>(st.corruption.size());
    if (mean_c > cfg.kappa) {
      st.alive = false;
      continue;
    }

    apply_delta(mc, st.current(), delta, next);
    const EstimatedState cur_est = to_est(st.current());
    const EstimatedState next_est = to_est(next);
    const TrackFrame next_frame = make_observation(*ctx.track, next_est, cfg.lookahead_spacing, next_obs);
    const bool crashed = is_crashed(next_est.roll(), *ctx.params);
    const bool off = is_off_track(*ctx.track, next_frame);
    const double r = reward_from_frames(*ctx.track, st.frame, next_frame, off, crashed, *ctx.params);

    st.age += 1;
    Transition t;
    t.est_state = cur_est;
    t.action = Action{new_action[static_cast<std::size_t>(j)][0], new_action[static_cast<std::size_t>(j)][1]};
    t.next_est_state = next_est;
    t.reward = r;
    t.terminated = crashed || off;
    t.truncated = !t.terminated && st.age >= cfg.t_max;
    out.transitions.push_back(t);
    out.obs.insert(out.obs.end(), st.obs.begin(), st.obs.end());
    out.next_obs.insert(out.next_obs.end(), next_obs.begin(), next_obs.end());
    out.stream.push_back(stream_id);

    // Shift the history window.
    st.states.erase(st.states.begin());
    st.states.push_back(next);
    if (h > 1) {
      st.actions.erase(st.actions.begin());
      st.actions.push_back(new_action[static_cast<std::size_t>(j)]);
    }
    st.obs = next_obs;
    st.frame = next_frame;
    if (t.terminated || t.truncated) st.alive = false;
  }
}

}  // namespace

RolloutState make_rollout_state(const RolloutContext& ctx, std::span<const std::vector<double>> states,
                                std::span<const std::vector<double>> actions,
                                double lookahead_spacing, Rng rng) {
  const ModelConfig& mc = ctx.model->config();
  if (static_cast<int>(states.size()) != mc.history ||
      static_cast<int>(actions.size()) != mc.history - 1) {
    throw Error(ErrorCode::kDimensionMismatch, "rollout seed needs H states and H-1 actions");
  }
  RolloutState st;
  st.states.assign(states.begin(), states.end());
  st.actions.assign(actions.begin(), actions.end());
  st.corruption.assign(static_cast<std::size_t>(mc.state_dim), 0.0);
  st.obs.resize(kObsDim);
  st.frame = make_observation(*ctx.track, to_est(st.current()), lookahead_spacing, st.obs);
  st.rng = rng;
  return st;
}

void step_rollout(const RolloutContext& ctx, std::vector<RolloutState>& states,
                  const RolloutConfig& cfg, RolloutBatch& out) {
  std::vector<int> alive;
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (states[i].alive) alive.push_back(static_cast<int>(i));
  }
  if (alive.empty()) return;
  const int chunk = std::max(1, cfg.chunk);
  const int n_chunks = static_cast<int>((alive.size() + static_cast<std::size_t>(chunk) - 1) / static_cast<std::size_t>(chunk));
  std::vector<RolloutBatch> parts(static_cast<std::size_t>(n_chunks));
  parallel_for(n_chunks, cfg.threads, [&](int c) {
    const std::size_t b = static_cast<std::size_t>(c) * static_cast<std::size_t>(chunk);
    const std::size_t len = std::min(static_cast<std::size_t>(chunk), alive.size() - b);
    step_chunk(ctx, states, std::span<const int>(alive.data() + b, len), cfg, parts[static_cast<std::size_t>(c)]);
  });
  for (const auto& p : parts) out.append(p);
}

RolloutBatch generate(const RolloutContext& ctx, std::span<const StateSequence> real,
                      const RolloutConfig& cfg, Rng& rng, GenerateStats* stats) {
  const ModelConfig& mc = ctx.model->config();
  cfg.validate(mc.state_dim);
  const auto h = static_cast<std::size_t>(mc.history);
  // Seeds: (sequence, index of newest state) with a full history behind it.
  std::vector<std::pair<std::size_t, std::size_t>> seeds;
  for (std::size_t q = 0; q < real.size(); ++q) {
    for (std::size_t k = h - 1; k < real[q].size(); ++k) seeds.emplace_back(q, k);
  }
  if (seeds.size() < static_cast<std::size_t>(cfg.streams)) {
    throw Error(ErrorCode::kInsufficientRealData,
                "need " + std::to_string(cfg.streams) + " seed windows, have " + std::to_string(seeds.size()));
  }
  std::vector<RolloutState> states;
  states.reserve(static_cast<std::size_t>(cfg.streams));
  const Rng base = rng.split(0x5eed);
  for (int i = 0; i < cfg.streams; ++i) {
    const auto [q, k] = seeds[rng.index(seeds.size())];
    const auto& seq = real[q];
    std::vector<std::vector<double>> st(seq.states.begin() + static_cast<std::ptrdiff_t>(k + 1 - h),
                                        seq.states.begin() + static_cast<std::ptrdiff_t>(k + 1));
    std::vector<std::vector<double>> ac(seq.actions.begin() + static_cast<std::ptrdiff_t>(k + 1 - h),
                                        seq.actions.begin() + static_cast<std::ptrdiff_t>(k));
    states.push_back(make_rollout_state(ctx, st, ac, cfg.lookahead_spacing,
                                        base.split(static_cast<std::uint64_t>(i))));
  }
  RolloutBatch out;
  for (int t = 0; t < cfg.t_max; ++t) {
    const std::size_t before = out.size();
    step_rollout(ctx, states, cfg, out);
    if (out.size() == before && std::none_of(states.begin(), states.end(), [](const auto& s) { return s.alive; })) break;
  }
  if (stats) {
    stats->lengths.assign(static_cast<std::size_t>(cfg.streams), 0);
    stats->emitted.assign(static_cast<std::size_t>(cfg.streams), 0);
    for (int s : out.stream) stats->emitted[static_cast<std::size_t>(s)] += 1;
    for (std::size_t i = 0; i < states.size(); ++i) stats->lengths[i] = states[i].attempts;
    std::vector<int> sorted = stats->lengths;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t m = sorted.size();
    stats->median_length = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  }
  return out;
}

}  // namespace dynarace

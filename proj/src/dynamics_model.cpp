#include "dynarace/dynamics_model.hpp"

#include <algorithm>
#include <cstring>

#include "dynarace/parallel.hpp"

namespace dynarace {

void ModelConfig::validate() const {
  if (history < 1) throw Error(ErrorCode::kBadConfig, "model.history must be >= 1");
  if (ensemble < 1) throw Error(ErrorCode::kBadConfig, "model.ensemble must be >= 1");
  if (state_dim < 1 || action_dim < 0) throw Error(ErrorCode::kBadConfig, "bad model dimensions");
  if (!(lv_min < lv_max)) throw Error(ErrorCode::kBadConfig, "model.lv_min must be < lv_max");
  if (batch < 1) throw Error(ErrorCode::kBadConfig, "model.batch must be >= 1");
  if (!(adam.lr >= 0.0)) throw Error(ErrorCode::kBadConfig, "model.lr must be >= 0");
  for (int h : hidden) {
    if (h < 1) throw Error(ErrorCode::kBadConfig, "model hidden sizes must be >= 1");
  }
  if (egocentric && state_dim < 3) {
    throw Error(ErrorCode::kBadConfig, "egocentric features need x, y, yaw in the state");
  }
}

StateSequence to_sequence(const Trajectory& traj) {
  StateSequence seq;
  seq.states.reserve(traj.steps.size());
  seq.actions.reserve(traj.steps.size());
  for (const auto& s : traj.steps) {
    seq.states.emplace_back(s.est_state.v.begin(), s.est_state.v.end());
    seq.actions.push_back({s.action.drive, s.action.reaction});
  }
  return seq;
}

void window_features(const ModelConfig& cfg, std::span<const double* const> states,
                     std::span<const double* const> actions, std::span<double> out) {
  const int h = cfg.history, sd = cfg.state_dim, ad = cfg.action_dim;
  const double* last = states[static_cast<std::size_t>(h - 1)];
  const double c = cfg.egocentric ? std::cos(last[kYaw]) : 1.0;
  const double sn = cfg.egocentric ? std::sin(last[kYaw]) : 0.0;
  std::size_t o = 0;
  for (int j = 0; j < h; ++j) {
    const double* st = states[static_cast<std::size_t>(j)];
    const double* ac = actions[static_cast<std::size_t>(j)];
    for (int i = 0; i < sd; ++i) out[o + static_cast<std::size_t>(i)] = st[i];
    if (cfg.egocentric) {
      const double dx = st[kX] - last[kX], dy = st[kY] - last[kY];
      out[o + kX] = c * dx + sn * dy;
      out[o + kY] = -sn * dx + c * dy;
      out[o + kYaw] = wrap_angle(st[kYaw] - last[kYaw]);
    }
    o += static_cast<std::size_t>(sd);
    for (int i = 0; i < ad; ++i) out[o + static_cast<std::size_t>(i)] = ac[i];
    o += static_cast<std::size_t>(ad);
  }
}

void state_delta(const ModelConfig& cfg, std::span<const double> last, std::span<const double> next,
                 std::span<double> out) {
  for (int i = 0; i < cfg.state_dim; ++i) out[static_cast<std::size_t>(i)] = next[static_cast<std::size_t>(i)] - last[static_cast<std::size_t>(i)];
  if (cfg.egocentric) {
    const double c = std::cos(last[kYaw]), sn = std::sin(last[kYaw]);
    const double dx = next[kX] - last[kX], dy = next[kY] - last[kY];
    out[kX] = c * dx + sn * dy;
    out[kY] = -sn * dx + c * dy;
    out[kYaw] = wrap_angle(next[kYaw] - last[kYaw]);
  }
}

void apply_delta(const ModelConfig& cfg, std::span<const double> last, std::span<const double> delta,
                 std::span<double> next) {
  for (int i = 0; i < cfg.state_dim; ++i) next[static_cast<std::size_t>(i)] = last[static_cast<std::size_t>(i)] + delta[static_cast<std::size_t>(i)];
  if (cfg.egocentric) {
    const double c = std::cos(last[kYaw]), sn = std::sin(last[kYaw]);
    next[kX] = last[kX] + c * delta[kX] - sn * delta[kY];
    next[kY] = last[kY] + sn * delta[kX] + c * delta[kY];
    next[kYaw] = last[kYaw] + delta[kYaw];
  }
}

RawWindows build_raw_windows(std::span<const StateSequence> seqs, const ModelConfig& cfg) {
  if (cfg.history < 1) throw Error(ErrorCode::kBadConfig, "history must be >= 1");
  const auto h = static_cast<std::size_t>(cfg.history);
  std::size_t total = 0;
  for (const auto& s : seqs) total += s.size() > h ? s.size() - h : 0;
  RawWindows raw;
  raw.inputs.resize(cfg.input_dim(), static_cast<Eigen::Index>(total));
  raw.deltas.resize(cfg.state_dim, static_cast<Eigen::Index>(total));
  std::vector<const double*> st(h), ac(h);
  Eigen::Index col = 0;
  for (const auto& seq : seqs) {
    for (std::size_t k = 0; k + h < seq.size(); ++k) {
      for (std::size_t j = 0; j < h; ++j) {
        st[j] = seq.states[k + j].data();
        ac[j] = seq.actions[k + j].data();
      }
      window_features(cfg, st, ac, std::span<double>(raw.inputs.col(col).data(), static_cast<std::size_t>(cfg.input_dim())));
      state_delta(cfg, seq.states[k + h - 1], seq.states[k + h],
                  std::span<double>(raw.deltas.col(col).data(), static_cast<std::size_t>(cfg.state_dim)));
      ++col;
    }
  }
  return raw;
}

namespace {

void mean_std(const Eigen::MatrixXd& m, std::vector<double>& mean, std::vector<double>& std_dev) {
  const auto rows = static_cast<std::size_t>(m.rows());
  mean.assign(rows, 0.0);
  std_dev.assign(rows, 1.0);
  if (m.cols() == 0) return;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mu = m.row(r).mean();
    const double var = (m.row(r).array() - mu).square().mean();
    mean[static_cast<std::size_t>(r)] = mu;
    std_dev[static_cast<std::size_t>(r)] = std::max(std::sqrt(var), NormStats::kStdFloor);
  }
}

}  // namespace

NormStats fit_norm_stats(const RawWindows& raw) {
  NormStats s;
  mean_std(raw.inputs, s.in_mean, s.in_std);
  mean_std(raw.deltas, s.delta_mean, s.delta_std);
  return s;
}

Windows normalize_windows(const RawWindows& raw, const NormStats& stats) {
  Windows w;
  w.inputs.resize(raw.inputs.rows(), raw.inputs.cols());
  w.targets.resize(raw.deltas.rows(), raw.deltas.cols());
  for (Eigen::Index j = 0; j < raw.inputs.cols(); ++j) {
    for (Eigen::Index i = 0; i < raw.inputs.rows(); ++i) {
      w.inputs(i, j) = static_cast<float>((raw.inputs(i, j) - stats.in_mean[static_cast<std::size_t>(i)]) /
                                          stats.in_std[static_cast<std::size_t>(i)]);
    }
    for (Eigen::Index i = 0; i < raw.deltas.rows(); ++i) {
      w.targets(i, j) = static_cast<float>((raw.deltas(i, j) - stats.delta_mean[static_cast<std::size_t>(i)]) /
                                           stats.delta_std[static_cast<std::size_t>(i)]);
    }
  }
  return w;
}

Windows build_windows(std::span<const StateSequence> seqs, const ModelConfig& cfg,
                      const NormStats& stats) {
  return normalize_windows(build_raw_windows(seqs, cfg), stats);
}

std::vector<double> target_variance(const Windows& windows) {
  std::vector<double> var(static_cast<std::size_t>(windows.targets.rows()), 1.0);
  if (windows.size() == 0) return var;
  for (Eigen::Index r = 0; r < windows.targets.rows(); ++r) {
    const Eigen::ArrayXd row = windows.targets.row(r).cast<double>().transpose().array();
    const double mu = row.mean();
    var[static_cast<std::size_t>(r)] = std::max((row - mu).square().mean(), 1e-6);
  }
  return var;
}

Ensemble::Ensemble(const ModelConfig& cfg, Rng& rng) : cfg_(cfg), optimizer_cfg_(cfg.adam) {
  cfg_.validate();
  for (int m = 0; m < cfg_.ensemble; ++m) {
    Mlp<float> net(cfg_.layer_sizes(), Activation::kSwish);
    Rng member_rng = rng.split(static_cast<std::uint64_t>(m));
    net.init(member_rng, /*zero_output_layer=*/true);
    // Start at unit predicted variance on normalized targets when 0 is in range.
    const double mid = 0.5 * (cfg_.lv_min + cfg_.lv_max), half = 0.5 * (cfg_.lv_max - cfg_.lv_min);
    const double raw0 = std::atanh(std::clamp(-mid / half, -0.999, 0.999));
    auto bias = net.mutable_bias(net.num_layers() - 1);
    for (int i = 0; i < cfg_.state_dim; ++i) bias(cfg_.state_dim + i) = static_cast<float>(raw0);
    optimizers_.emplace_back(net.num_params(), cfg_.adam);
    members_.push_back(std::move(net));
  }
  const auto in = static_cast<std::size_t>(cfg_.input_dim());
  const auto sd = static_cast<std::size_t>(cfg_.state_dim);
  stats_.in_mean.assign(in, 0.0);
  stats_.in_std.assign(in, 1.0);
  stats_.delta_mean.assign(sd, 0.0);
  stats_.delta_std.assign(sd, 1.0);
}

GaussianPrediction Ensemble::predict(int member_index, std::span<const double> input) const {
  return predict_member(member(member_index), input, cfg_.lv_min, cfg_.lv_max);
}

void Ensemble::predict_batch(int member_index, const Eigen::MatrixXf& inputs,
                             Eigen::MatrixXf& mean, Eigen::MatrixXf& log_var) const {
  const Eigen::MatrixXf out = member(member_index).forward(inputs);
  const Eigen::Index s = cfg_.state_dim;
  mean = out.topRows(s);
  const float mid = static_cast<float>(0.5 * (cfg_.lv_min + cfg_.lv_max));
  const float half = static_cast<float>(0.5 * (cfg_.lv_max - cfg_.lv_min));
  log_var = (out.bottomRows(s).array().tanh() * half + mid).matrix();
}

std::vector<double> Ensemble::evaluate(const Windows& windows) const {
  std::vector<double> nll(members_.size(), 0.0);
  const Eigen::Index n = windows.inputs.cols();
  if (n == 0) return nll;
  constexpr Eigen::Index kChunk = 4096;
  parallel_for(size(), cfg_.threads, [&](int m) {
    double total = 0.0;
    for (Eigen::Index c0 = 0; c0 < n; c0 += kChunk) {
      const Eigen::Index len = std::min(kChunk, n - c0);
      const Eigen::MatrixXf x = windows.inputs.middleCols(c0, len);
      const Eigen::MatrixXf t = windows.targets.middleCols(c0, len);
      total += nll_batch_grad<float>(member(m), x, t, cfg_.lv_min, cfg_.lv_max, nullptr) *
               static_cast<double>(len);
    }
    nll[static_cast<std::size_t>(m)] = total / static_cast<double>(n);
  });
  return nll;
}

std::vector<double> train_epoch(Ensemble& ens, const Windows& windows, const AdamConfig& opt,
                                Rng& rng) {
  const auto n = windows.size();
  if (n == 0) throw Error(ErrorCode::kEmptyDataset, "no training windows");
  if (windows.inputs.rows() != ens.cfg_.input_dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "window dimension does not match model input");
  }
  const auto batch = static_cast<std::size_t>(ens.cfg_.batch);
  // Draw every member's bootstrap sample up front so results do not depend on
  // how members are scheduled.
  std::vector<std::vector<std::size_t>> samples(static_cast<std::size_t>(ens.size()));
  std::vector<Rng> member_rngs;
  for (int m = 0; m < ens.size(); ++m) member_rngs.push_back(rng.split(static_cast<std::uint64_t>(m)));
  rng.next_u64();
  parallel_for(ens.size(), ens.cfg_.threads, [&](int m) {
    auto& idx = samples[static_cast<std::size_t>(m)];
    Rng& r = member_rngs[static_cast<std::size_t>(m)];
    idx.resize(n);
    for (auto& i : idx) i = r.index(n);

    auto& net = ens.members_[static_cast<std::size_t>(m)];
    auto& adam = ens.optimizers_[static_cast<std::size_t>(m)];
    adam.set_config(opt);
    std::vector<float> grad;
    Eigen::MatrixXf x, t;
    for (std::size_t b0 = 0; b0 < n; b0 += batch) {
      const std::size_t len = std::min(batch, n - b0);
      x.resize(windows.inputs.rows(), static_cast<Eigen::Index>(len));
      t.resize(windows.targets.rows(), static_cast<Eigen::Index>(len));
      for (std::size_t j = 0; j < len; ++j) {
        x.col(static_cast<Eigen::Index>(j)) = windows.inputs.col(static_cast<Eigen::Index>(idx[b0 + j]));
        t.col(static_cast<Eigen::Index>(j)) = windows.targets.col(static_cast<Eigen::Index>(idx[b0 + j]));
      }
      nll_batch_grad<float>(net, x, t, ens.cfg_.lv_min, ens.cfg_.lv_max, &grad);
      adam.step(net.params(), grad);
    }
  });
  return ens.evaluate(windows);
}

// Model checkpoint ("WMDL", version 1), little-endian:
//   char[4] "WMDL" | u32 version | u16 E | u16 n_sizes | u16 sizes[n_sizes]
//   u16 state_dim | u16 action_dim | u16 history | u8 flags (bit0 egocentric)
//   f32 lv_min | f32 lv_max
//   f32 in_mean[in] | f32 in_std[in] | f32 delta_mean[S] | f32 delta_std[S]
//   E x f32 params[P]   (per member, Mlp layout: W_l column-major then b_l)
Bytes Ensemble::serialize() const {
  Bytes out;
  ByteWriter w(out);
  w.raw(std::string_view("WMDL"));
  w.put<std::uint32_t>(1);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(members_.size()));
  const auto sizes = cfg_.layer_sizes();
  w.put<std::uint16_t>(static_cast<std::uint16_t>(sizes.size()));
  for (int s : sizes) w.put<std::uint16_t>(static_cast<std::uint16_t>(s));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(cfg_.state_dim));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(cfg_.action_dim));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(cfg_.history));
  w.put<std::uint8_t>(cfg_.egocentric ? 1 : 0);
  w.put_f32(cfg_.lv_min);
  w.put_f32(cfg_.lv_max);
  for (const auto* v : {&stats_.in_mean, &stats_.in_std, &stats_.delta_mean, &stats_.delta_std}) {
    for (double x : *v) w.put_f32(x);
  }
  for (const auto& m : members_) {
    for (float p : m.params()) w.put(p);
  }
  return out;
}

Ensemble Ensemble::deserialize(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, ErrorCode::kBadCheckpoint);
  const auto magic = r.raw(4);
  if (std::memcmp(magic.data(), "WMDL", 4) != 0) throw Error(ErrorCode::kBadCheckpoint, "not a WMDL file");
  if (r.get<std::uint32_t>() != 1) throw Error(ErrorCode::kBadCheckpoint, "unsupported WMDL version");
  Ensemble e;
  const int n_members = r.get<std::uint16_t>();
  const int n_sizes = r.get<std::uint16_t>();
  std::vector<int> sizes;
  for (int i = 0; i < n_sizes; ++i) sizes.push_back(r.get<std::uint16_t>());
  e.cfg_.state_dim = r.get<std::uint16_t>();
  e.cfg_.action_dim = r.get<std::uint16_t>();
  e.cfg_.history = r.get<std::uint16_t>();
  e.cfg_.egocentric = (r.get<std::uint8_t>() & 1) != 0;
  e.cfg_.lv_min = r.get<float>();
  e.cfg_.lv_max = r.get<float>();
  e.cfg_.ensemble = n_members;
  if (n_sizes < 2 || sizes.front() != e.cfg_.input_dim() || sizes.back() != 2 * e.cfg_.state_dim) {
    throw Error(ErrorCode::kBadCheckpoint, "WMDL architecture inconsistent with dimensions");
  }
  e.cfg_.hidden.assign(sizes.begin() + 1, sizes.end() - 1);
  const auto in = static_cast<std::size_t>(e.cfg_.input_dim());
  const auto sd = static_cast<std::size_t>(e.cfg_.state_dim);
  auto read_vec = [&](std::vector<double>& v, std::size_t n) {
    v.resize(n);
    for (auto& x : v) x = r.get<float>();
  };
  read_vec(e.stats_.in_mean, in);
  read_vec(e.stats_.in_std, in);
  read_vec(e.stats_.delta_mean, sd);
  read_vec(e.stats_.delta_std, sd);
  for (int m = 0; m < n_members; ++m) {
    Mlp<float> net(sizes, Activation::kSwish);
    for (float& p : net.params()) p = r.get<float>();
    e.optimizers_.emplace_back(net.num_params(), e.cfg_.adam);
    e.members_.push_back(std::move(net));
  }
  r.expect_end("WMDL");
  return e;
}

}  // namespace dynarace

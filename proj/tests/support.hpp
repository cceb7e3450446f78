#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dynarace/infoprop.hpp"
#include "dynarace/rng.hpp"
#include "dynarace/track.hpp"

// Independent references shared by the unit suites and the acceptance binary.
namespace dynarace::testing {

// Exact plant delta for every member with a fixed predicted log-variance.
class OracleModel : public DeltaModel {
 public:
  OracleModel(ModelConfig cfg, NormStats stats, PlantParams params, int members, std::vector<double> log_var)
      : cfg_(std::move(cfg)), stats_(std::move(stats)), params_(params), members_(members), log_var_(std::move(log_var)) {
    params_.process_noise = 0.0;
  }
  const ModelConfig& config() const override { return cfg_; }
  const NormStats& stats() const override { return stats_; }
  int size() const override { return members_; }
  void predict_batch(int, const Eigen::MatrixXf& inputs, Eigen::MatrixXf& mean, Eigen::MatrixXf& log_var) const override {
    const int sd = cfg_.state_dim, ad = cfg_.action_dim;
    const int o = (cfg_.history - 1) * (sd + ad);
    mean.resize(sd, inputs.cols());
    log_var.resize(sd, inputs.cols());
    Rng unused(0);
    for (Eigen::Index j = 0; j < inputs.cols(); ++j) {
      const auto feat = [&](int i) {
        return static_cast<double>(inputs(i, j)) * stats_.in_std[static_cast<std::size_t>(i)] +
               stats_.in_mean[static_cast<std::size_t>(i)];
      };
      PlantState last;
      for (int i = 0; i < sd; ++i) last[i] = feat(o + i);
      const Action a{feat(o + sd), feat(o + sd + 1)};
      const PlantState next = step_plant(last, a, params_, unused);
      std::vector<double> d(static_cast<std::size_t>(sd));
      state_delta(cfg_, last.v, next.v, d);
      for (int i = 0; i < sd; ++i) {
        mean(i, j) = static_cast<float>((d[static_cast<std::size_t>(i)] - stats_.delta_mean[static_cast<std::size_t>(i)]) /
                                        stats_.delta_std[static_cast<std::size_t>(i)]);
        log_var(i, j) = static_cast<float>(log_var_[static_cast<std::size_t>(i)]);
      }
    }
  }

 private:
  ModelConfig cfg_;
  NormStats stats_;
  PlantParams params_;
  int members_;
  std::vector<double> log_var_;
};

struct Fixture {
  Track track = default_arena();
  PlantParams params;
  ModelConfig mc;
  std::vector<StateSequence> real;
  NormStats stats;
  std::vector<double> data_var;
  BatchPolicy policy;

  Fixture() {
    Rng rng(21);
    const ScriptedDriver driver(track, params, 0.15);
    for (int ep = 0; ep < 4; ++ep) {
      AssistController ctrl(params);
      const Actor actor = [&](const EstimatedState& e) {
        const DriverRefs r = driver(e);
        return ctrl(e, r.speed_ref, r.steer_ref);
      };
      real.push_back(to_sequence(run_episode(actor, track, params, 600, rng).first));
    }
    const RawWindows raw = build_raw_windows(real, mc);
    stats = fit_norm_stats(raw);
    data_var = target_variance(normalize_windows(raw, stats));
    // Stateless assist policy read off the observation.
    policy = [this](const Eigen::MatrixXf& obs, const Eigen::MatrixXf&, Eigen::MatrixXf& actions) {
      actions.resize(kActionDim, obs.cols());
      for (Eigen::Index j = 0; j < obs.cols(); ++j) {
        std::vector<float> col(obs.col(j).data(), obs.col(j).data() + kObsDim);
        const EstimatedState e = state_from_observation(col);
        AssistController ctrl(params);
        const DriverRefs r = ScriptedDriver(track, params, 0.15)(e);
        const Action a = ctrl(e, r.speed_ref, r.steer_ref);
        actions(0, j) = static_cast<float>(a.drive);
        actions(1, j) = static_cast<float>(a.reaction);
      }
    };
  }

  RolloutConfig rollout(int streams, int t_max, double kappa = 1.0) const {
    RolloutConfig c;
    c.streams = streams;
    c.t_max = t_max;
    c.kappa = kappa;
    c.data_var = data_var;
    c.threads = 1;
    return c;
  }
  RolloutContext ctx(const DeltaModel& m) const { return RolloutContext{&m, &policy, &track, &params}; }

  OracleModel oracle(int members = 3) const {
    return OracleModel(mc, stats, params, members, std::vector<double>(kStateDim, std::log(1e-8)));
  }
  OracleModel inflated() const {
    std::vector<double> lv;
    for (double v : data_var) lv.push_back(std::log(10.0 * v));
    return OracleModel(mc, stats, params, 1, lv);
  }
  std::vector<RolloutState> seeds(const DeltaModel& m, int n, Rng& rng) const {
    std::vector<RolloutState> out;
    for (int i = 0; i < n; ++i) {
      const auto& seq = real[rng.index(real.size())];
      const std::size_t k = 3 + rng.index(seq.size() - 3);
      std::vector<std::vector<double>> st(seq.states.begin() + static_cast<long>(k) - 3, seq.states.begin() + static_cast<long>(k) + 1);
      std::vector<std::vector<double>> ac(seq.actions.begin() + static_cast<long>(k) - 3, seq.actions.begin() + static_cast<long>(k));
      out.push_back(make_rollout_state(ctx(m), st, ac, 0.1, rng.split(static_cast<std::uint64_t>(i))));
    }
    return out;
  }
};

inline const Fixture& fixture() {
  static const Fixture f;
  return f;
}


// Nearest point of the centerline sampled every `step` metres, by exhaustive search.
class DenseCenterline {
 public:
  explicit DenseCenterline(const Track& t, double step = 1e-4) {
    const std::size_t n = static_cast<std::size_t>(t.length() / step);
    pts_.resize(n);
    s_.resize(n);
    h_.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      s_[k] = step * static_cast<double>(k);
      pts_[k] = t.point_at(s_[k]);
      h_[k] = t.heading_at(s_[k]);
    }
  }

  // (s, signed d) of the nearest sample; d > 0 left of the direction of travel.
  std::pair<double, double> frame(const Vec2& p) const {
    std::size_t best = 0;
    double best_d2 = 1e300;
    for (std::size_t k = 0; k < pts_.size(); ++k) {
      const double dx = p.x - pts_[k].x, dy = p.y - pts_[k].y;
      const double d2 = dx * dx + dy * dy;
      if (d2 < best_d2) {
        best_d2 = d2;
        best = k;
      }
    }
    const double side = -(p.x - pts_[best].x) * std::sin(h_[best]) + (p.y - pts_[best].y) * std::cos(h_[best]);
    return {s_[best], std::copysign(std::sqrt(best_d2), side)};
  }

 private:
  std::vector<Vec2> pts_;
  std::vector<double> s_, h_;
};

inline double max_rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-6});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
  }
  return worst;
}

template <typename Params, typename Loss>
std::vector<double> central_differences(Params& params, Loss&& loss, double h = 1e-5) {
  std::vector<double> fd(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = loss();
    params[i] = keep - h;
    const double down = loss();
    params[i] = keep;
    fd[i] = (up - down) / (2 * h);
  }
  return fd;
}

}  // namespace dynarace::testing

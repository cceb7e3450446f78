#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <vector>

#include "dynarace/error.hpp"
#include "dynarace/rng.hpp"

namespace dynarace {

enum class Activation { kRelu, kSwish };

// Fully-connected network with a flat parameter vector and hand-written
// reverse-mode backward pass. Samples are columns.
// Parameter layout per layer l (in order): W_l (out x in, column-major), b_l (out).
// Parameter storage on Eigen's maximal alignment. Kernel paths depend on the
// address of mapped operands, so fixed alignment keeps results bit-exact
// across allocations and processes.
template <typename Scalar>
using ParamVector = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

template <typename Scalar>
class Mlp {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;
  using ConstVectorMap = Eigen::Map<const Vector>;

  struct Cache {
    std::vector<Matrix> pre;  // pre-activations of hidden layers
    std::vector<Matrix> act;  // act[0] = input, act[l+1] = output of layer l
  };

  Mlp() = default;
  Mlp(std::vector<int> sizes, Activation activation)
      : sizes_(std::move(sizes)), activation_(activation) {
    if (sizes_.size() < 2) throw Error(ErrorCode::kDimensionMismatch, "mlp needs >= 2 layer sizes");
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      offsets_.push_back(n);
      n += static_cast<std::size_t>(sizes_[l]) * static_cast<std::size_t>(sizes_[l + 1]) +
           static_cast<std::size_t>(sizes_[l + 1]);
    }
    params_.assign(n, Scalar(0));
  }

  // Uniform fan-in initialization; the output layer is zeroed when requested.
  void init(Rng& rng, bool zero_output_layer) {
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const bool last = l + 1 == num_layers();
      const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
      Scalar* w = params_.data() + offsets_[l];
      const std::size_t nw = static_cast<std::size_t>(sizes_[l]) * sizes_[l + 1];
      for (std::size_t i = 0; i < nw; ++i) {
        w[i] = (last && zero_output_layer) ? Scalar(0) : static_cast<Scalar>(rng.uniform(-bound, bound));
      }
      Scalar* b = w + nw;
      for (int i = 0; i < sizes_[l + 1]; ++i) b[i] = Scalar(0);
    }
  }

  const std::vector<int>& sizes() const { return sizes_; }
  Activation activation() const { return activation_; }
  std::size_t num_layers() const { return sizes_.size() - 1; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  std::size_t num_params() const { return params_.size(); }
  ParamVector<Scalar>& params() { return params_; }
  const ParamVector<Scalar>& params() const { return params_; }

  ConstMatrixMap weight(std::size_t l) const {
    return ConstMatrixMap(params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]);
  }
  ConstVectorMap bias(std::size_t l) const {
    return ConstVectorMap(params_.data() + offsets_[l] +
                              static_cast<std::size_t>(sizes_[l]) * sizes_[l + 1],
                          sizes_[l + 1]);
  }
  MatrixMap mutable_weight(std::size_t l) {
    return MatrixMap(params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]);
  }
  Eigen::Map<Vector> mutable_bias(std::size_t l) {
    return Eigen::Map<Vector>(params_.data() + offsets_[l] +
                                  static_cast<std::size_t>(sizes_[l]) * sizes_[l + 1],
                              sizes_[l + 1]);
  }

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const {
    if (x.rows() != input_dim()) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "mlp input has " + std::to_string(x.rows()) + " rows, expected " +
                      std::to_string(input_dim()));
    }
    if (cache) {
      cache->pre.resize(num_layers() - 1);
      cache->act.resize(num_layers() + 1);
      cache->act[0] = x;
    }
    Matrix a = x;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      Matrix z = weight(l) * a;
      z.colwise() += bias(l);
      if (l + 1 < num_layers()) {
        if (cache) cache->pre[l] = z;
        a = activate(z);
      } else {
        a = std::move(z);
      }
      if (cache) cache->act[l + 1] = a;
    }
    return a;
  }

  // Accumulates dLoss/dparams into `grad` (same layout as params()). When
  // `d_input` is non-null it receives dLoss/dinput.
  void backward(const Cache& cache, const Matrix& d_out, std::vector<Scalar>& grad,
                Matrix* d_input = nullptr) const {
    if (grad.size() != params_.size()) grad.assign(params_.size(), Scalar(0));
    Matrix delta = d_out;
    for (std::size_t l = num_layers(); l-- > 0;) {
      const Matrix& a_in = cache.act[l];
      Eigen::Map<Matrix> gw(grad.data() + offsets_[l], sizes_[l + 1], sizes_[l]);
      Eigen::Map<Vector> gb(grad.data() + offsets_[l] +
                                static_cast<std::size_t>(sizes_[l]) * sizes_[l + 1],
                            sizes_[l + 1]);
      // Products land in aligned temporaries first; the caller's buffer may
      // sit at any address.
      const Matrix dw = delta * a_in.transpose();
      const Vector db = delta.rowwise().sum();
      gw += dw;
      gb += db;
      if (l == 0 && d_input == nullptr) break;
      Matrix back = weight(l).transpose() * delta;
      if (l == 0) {
        *d_input = std::move(back);
        break;
      }
      delta = back.cwiseProduct(activate_grad(cache.pre[l - 1]));
    }
  }

 private:
  Matrix activate(const Matrix& z) const {
    if (activation_ == Activation::kRelu) return z.cwiseMax(Scalar(0));
    return z.unaryExpr([](Scalar v) { return v / (Scalar(1) + std::exp(-v)); });
  }
  Matrix activate_grad(const Matrix& z) const {
    if (activation_ == Activation::kRelu) {
      return z.unaryExpr([](Scalar v) { return v > Scalar(0) ? Scalar(1) : Scalar(0); });
    }
    return z.unaryExpr([](Scalar v) {
      const Scalar s = Scalar(1) / (Scalar(1) + std::exp(-v));
      return s * (Scalar(1) + v * (Scalar(1) - s));
    });
  }

  std::vector<int> sizes_;
  Activation activation_ = Activation::kRelu;
  std::vector<std::size_t> offsets_;
  ParamVector<Scalar> params_;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, Scalar(0)), v_(n, Scalar(0)) {}

  void step(std::span<Scalar> params, std::span<const Scalar> grad) {
    ++t_;
    const double b1t = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double b2t = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const Scalar lr = static_cast<Scalar>(cfg_.lr * std::sqrt(b2t) / b1t);
    const Scalar b1 = static_cast<Scalar>(cfg_.beta1), b2 = static_cast<Scalar>(cfg_.beta2);
    const Scalar eps = static_cast<Scalar>(cfg_.eps * std::sqrt(b2t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * grad[i];
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * grad[i] * grad[i];
      params[i] -= lr * m_[i] / (std::sqrt(v_[i]) + eps);
    }
  }

  long steps() const { return t_; }
  void set_config(const AdamConfig& cfg) { cfg_ = cfg; }

 private:
  AdamConfig cfg_;
  std::vector<Scalar> m_, v_;
  long t_ = 0;
};

}  // namespace dynarace

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ltgan/nn.hpp"

namespace ltgan {

/// Raised when training produces a non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

/// Bias-corrected Adam moments for one parameter set.
class AdamState {
 public:
  AdamState() = default;
  AdamState(const ParamSet& params, AdamConfig config) : config_(config) {
    for (const auto& e : params) {
      m_.emplace_back(e.value.shape());
      v_.emplace_back(e.value.shape());
    }
  }

  const AdamConfig& config() const noexcept { return config_; }
  std::uint64_t step() const noexcept { return step_; }
  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }

  void restore(std::uint64_t step, std::vector<Tensor> m, std::vector<Tensor> v) {
    if (m.size() != m_.size() || v.size() != v_.size()) throw std::invalid_argument("adam: moment count mismatch");
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i].shape() != m_[i].shape() || v[i].shape() != v_[i].shape()) throw ShapeError("adam: moment shape mismatch");
    }
    step_ = step;
    m_ = std::move(m);
    v_ = std::move(v);
  }

  void reset() {
    step_ = 0;
    for (auto& t : m_) std::fill(t.data().begin(), t.data().end(), 0.0);
    for (auto& t : v_) std::fill(t.data().begin(), t.data().end(), 0.0);
  }

  /// One update. Gradients are checked for finiteness before anything moves,
  /// so a rejected step leaves parameters and moments untouched.
  void apply(ParamSet& params, std::span<const Tensor> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
      throw std::invalid_argument("adam: expected " + std::to_string(m_.size()) + " tensors, got " +
                                  std::to_string(params.size()) + " params / " + std::to_string(grads.size()) + " grads");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (grads[i].shape() != params[i].value.shape()) {
        throw ShapeError("adam: gradient for '" + params.name() + "." + params[i].name + "' is " +
                         shape_string(grads[i].shape()) + ", parameter is " + shape_string(params[i].value.shape()));
      }
      if (!grads[i].all_finite()) {
        throw NumericError("adam: non-finite gradient in parameter '" + params.name() + "." + params[i].name + "'");
      }
    }
    ++step_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t i = 0; i < grads.size(); ++i) {
      auto p = params[i].value.data();
      auto g = grads[i].data();
      auto m = m_[i].data();
      auto v = v_[i].data();
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = b1 * m[j] + (1.0 - b1) * g[j];
        v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
        p[j] -= config_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
      }
    }
  }

 private:
  AdamConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t step_ = 0;
};

/// Convenience: gradient values of bound parameters, zero where absent.
inline std::vector<Tensor> gradient_values(const GradientMap& grads, const BoundMlp& bound) {
  std::vector<Tensor> out;
  out.reserve(bound.params.size());
  for (const Var& p : bound.params) {
    out.push_back(grads.contains(p) ? grads.value(p) : Tensor(p.shape(), 0.0));
  }
  return out;
}

}  // namespace ltgan

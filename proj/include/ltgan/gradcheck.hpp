#pragma once

// Central-difference checks of tape gradients, first and second order.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "ltgan/autodiff.hpp"

namespace ltgan {

/// Builds a scalar loss from leaf variables placed on a fresh tape.
using GraphBuilder = std::function<Var(Tape&, std::span<const Var>)>;

/// Relative error |a - b| / max(|a|, |b|, floor). The floor keeps entries
/// whose true gradient is ~0 from dividing finite-difference noise by ~0.
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-6) {
  if (a.shape() != b.shape()) throw ShapeError("max_relative_error: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i], floor));
  return worst;
}

inline double evaluate(const GraphBuilder& f, std::span<const Tensor> inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.variable(t));
  return f(tape, vars).value().item();
}

inline std::vector<Tensor> autodiff_gradients(const GraphBuilder& f, std::span<const Tensor> inputs) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.variable(t));
  const Var loss = f(tape, vars);
  const GradientMap grads = tape.backward(loss);
  std::vector<Tensor> out;
  for (const Var& v : vars) out.push_back(grads[v].value());
  return out;
}

inline std::vector<Tensor> finite_difference_gradients(const GraphBuilder& f, std::span<const Tensor> inputs, double h = 1e-5) {
  std::vector<Tensor> probe(inputs.begin(), inputs.end());
  std::vector<Tensor> out;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    Tensor g(probe[k].shape());
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double saved = probe[k][i];
      probe[k][i] = saved + h;
      const double up = evaluate(f, probe);
      probe[k][i] = saved - h;
      const double down = evaluate(f, probe);
      probe[k][i] = saved;
      g[i] = (up - down) / (2 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

/// Worst relative error between autodiff and central differences over all inputs.
inline double gradient_check(const GraphBuilder& f, std::span<const Tensor> inputs, double h = 1e-5, double floor = 1e-6) {
  const auto ad = autodiff_gradients(f, inputs);
  const auto fd = finite_difference_gradients(f, inputs, h);
  double worst = 0;
  for (std::size_t k = 0; k < ad.size(); ++k) worst = std::max(worst, max_relative_error(ad[k], fd[k], floor));
  return worst;
}

/// Second-order check: `f` must itself call Tape::backward and build its
/// loss from the resulting gradient nodes. Differentiating that loss exercises
/// the gradient rules of the gradient graph; the reference is central
/// differences of the loss value, which only needs first-order autodiff.
inline double grad_of_grad_check(const GraphBuilder& f, std::span<const Tensor> inputs, double h = 1e-5, double floor = 1e-6) {
  return gradient_check(f, inputs, h, floor);
}

}  // namespace ltgan

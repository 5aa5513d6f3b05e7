#pragma once

// Training objectives: Wasserstein critic loss with gradient penalty, the
// twin objective for the joint first task, the distillation objective for
// later tasks, and the (beta-weighted) ELBO of the student.

#include <functional>
#include <span>
#include <stdexcept>
#include <string>

#include "ltgan/autodiff.hpp"
#include "ltgan/nn.hpp"
#include "ltgan/roles.hpp"

namespace ltgan {

/// Scores a batch on the tape; any callable returning batch x 1.
using CriticFn = std::function<Var(Var)>;

struct GpConfig {
  double lambda = 10.0;

  void validate() const {
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0, got " + std::to_string(lambda));
  }
};

struct BetaConfig {
  double beta = 4.0;

  void validate() const {
    if (!(beta > 0.0)) throw std::invalid_argument("beta must be > 0, got " + std::to_string(beta));
  }
};

namespace detail {

inline void require_batches(const char* what, const Tensor& real, const Tensor& fake) {
  if (real.rank() != 2 || fake.rank() != 2) throw ShapeError(std::string(what) + ": batches must be rank 2");
  if (real.rows() == 0 || fake.rows() == 0) throw std::invalid_argument(std::string(what) + ": empty batch");
  if (real.cols() != fake.cols()) {
    throw ShapeError(std::string(what) + ": batch widths differ, " + shape_string(real.shape()) + " vs " + shape_string(fake.shape()));
  }
}

}  // namespace detail

/// E[D(fake)] - E[D(real)], the quantity the critic minimizes.
inline Var critic_loss_wgan(const CriticFn& critic, Var real, Var fake) {
  detail::require_batches("critic_loss_wgan", real.value(), fake.value());
  return sub(mean(critic(fake)), mean(critic(real)));
}

/// -E[D(fake)], minimized by a generator.
inline Var generator_loss(const CriticFn& critic, Var fake) {
  if (fake.value().rank() != 2 || fake.rows() == 0) throw std::invalid_argument("generator_loss: empty batch");
  return negate(mean(critic(fake)));
}

/// Row-wise interpolates u*real + (1-u)*fake.
inline Tensor interpolate_rows(const Tensor& real, const Tensor& fake, std::span<const double> u) {
  detail::require_batches("interpolate_rows", real, fake);
  if (real.rows() != fake.rows() || u.size() != real.rows()) {
    throw ShapeError("interpolate_rows: need one draw per row pair, got " + std::to_string(u.size()) + " draws for " +
                     std::to_string(real.rows()) + " / " + std::to_string(fake.rows()) + " rows");
  }
  Tensor out(real.shape());
  for (std::size_t i = 0; i < real.rows(); ++i) {
    if (!(u[i] >= 0.0 && u[i] <= 1.0)) throw std::invalid_argument("interpolate_rows: draw outside [0,1]");
    for (std::size_t j = 0; j < real.cols(); ++j) out(i, j) = u[i] * real(i, j) + (1.0 - u[i]) * fake(i, j);
  }
  return out;
}

/// lambda * E[(|grad_x D(x~)|_2 - 1)^2] on interpolates x~. The input
/// gradient is taken on the tape, so the result differentiates w.r.t. the
/// critic's parameters through a second backward pass.
inline Var gradient_penalty(const CriticFn& critic, Tape& tape, const Tensor& real, const Tensor& fake, double lambda,
                            std::span<const double> u) {
  GpConfig{lambda}.validate();
  const Var x = tape.variable(interpolate_rows(real, fake, u));
  const Var scores = critic(x);
  const std::array<Var, 1> wrt{x};
  const Var grad_x = tape.backward(sum(scores), wrt)[x];
  const Var deviation = add_scalar(l2_norm_rows(grad_x), -1.0);
  return scalar_mul(mean(square(deviation)), lambda);
}

struct TwinTerms {
  Var critic;
  Var teacher;
  Var assistant;
  Var penalty;  // both penalties, already inside `critic`
};

/// Joint objective of the first task. The critic term holds both twins'
/// real/fake terms and both penalties; each generator term sees only its own
/// fake batch. The real-data term appears once per twin.
inline TwinTerms twin_objective(const CriticFn& critic, Tape& tape, Var real, Var fake_teacher, Var fake_assistant,
                                double lambda, std::span<const double> u_teacher, std::span<const double> u_assistant,
                                const RoleState& roles) {
  if (roles.phase != Phase::joint) throw std::invalid_argument("twin_objective: role state is not Joint (task " + std::to_string(roles.task) + ")");
  detail::require_batches("twin_objective", real.value(), fake_teacher.value());
  detail::require_batches("twin_objective", real.value(), fake_assistant.value());

  const Var real_score = mean(critic(real));
  const Var fake_t = mean(critic(fake_teacher));
  const Var fake_a = mean(critic(fake_assistant));
  const Var gp_t = gradient_penalty(critic, tape, real.value(), fake_teacher.value(), lambda, u_teacher);
  const Var gp_a = gradient_penalty(critic, tape, real.value(), fake_assistant.value(), lambda, u_assistant);

  const Var critic_loss = add(add(sub(fake_t, real_score), gp_t), add(sub(fake_a, real_score), gp_a));
  return {critic_loss, negate(fake_t), negate(fake_a), add(gp_t, gp_a)};
}

struct LakdTerms {
  Var critic;
  Var generator;
  Var penalty;
  Tensor positives;
};

/// Positive batch of the distillation objective: row i comes from current
/// task data when take_data[i] is nonzero, otherwise from the frozen samples.
inline Tensor mix_positives(const Tensor& data, const Tensor& frozen_samples, std::span<const int> take_data) {
  detail::require_batches("mix_positives", data, frozen_samples);
  if (data.rows() != frozen_samples.rows() || take_data.size() != data.rows()) {
    throw ShapeError("mix_positives: need equal row counts and one draw per row");
  }
  Tensor out(data.shape());
  for (std::size_t i = 0; i < data.rows(); ++i) {
    auto src = take_data[i] ? data.row(i) : frozen_samples.row(i);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

/// Distillation objective for task k >= 2. The frozen generator only supplies
/// sample values, so no gradient can reach its parameters.
inline LakdTerms lakd_objective(const CriticFn& critic, Tape& tape, const Generator& trainable, Var trainable_fake,
                                const Generator& frozen, const Tensor& frozen_z, const Tensor& real_k, double lambda,
                                std::span<const int> take_data, std::span<const double> u, int task_index) {
  if (&trainable == &frozen) throw std::invalid_argument("lakd_objective: frozen and trainable generators are the same object");
  if (task_index < 2) throw std::invalid_argument("lakd_objective: task index must be >= 2, got " + std::to_string(task_index));
  Tensor positives = mix_positives(real_k, generate(frozen, frozen_z), take_data);
  detail::require_batches("lakd_objective", positives, trainable_fake.value());

  const Var fake_score = mean(critic(trainable_fake));
  const Var pos_score = mean(critic(tape.constant(positives)));
  const Var gp = gradient_penalty(critic, tape, positives, trainable_fake.value(), lambda, u);
  return {add(sub(fake_score, pos_score), gp), negate(fake_score), gp, std::move(positives)};
}

/// KL(N(mu, sigma^2) || N(0, I)) = 1/2 sum(mu^2 + sigma^2 - 1 - 2 log sigma), batch-meaned.
inline Var kl_diag_gaussian(Var mu, Var log_sigma) {
  if (mu.shape() != log_sigma.shape()) {
    throw ShapeError("kl_diag_gaussian: " + shape_string(mu.shape()) + " vs " + shape_string(log_sigma.shape()));
  }
  const double rows = static_cast<double>(mu.rows());
  const Var terms = add_scalar(sub(add(square(mu), exp(scalar_mul(log_sigma, 2.0))), scalar_mul(log_sigma, 2.0)), -1.0);
  return scalar_mul(sum(terms), 0.5 / rows);
}

/// z = mu + gamma * sigma.
inline Var reparameterize(Var mu, Var log_sigma, const Tensor& gamma) {
  if (mu.shape() != log_sigma.shape() || mu.shape() != gamma.shape()) {
    throw ShapeError("reparameterize: " + shape_string(mu.shape()) + ", " + shape_string(log_sigma.shape()) + ", " +
                     shape_string(gamma.shape()));
  }
  return add(mu, mul(mu.tape().constant(gamma), exp(log_sigma)));
}

struct ElboTerms {
  Var total;           // reconstruction + beta * kl
  Var reconstruction;  // 1/2 sum of squared error, batch-meaned
  Var kl;
};

/// Negated ELBO with a unit-variance Gaussian likelihood, additive constants dropped.
inline ElboTerms elbo_loss(const BoundMlp& encoder, const BoundMlp& decoder, Var x, const Tensor& gamma, double beta) {
  BetaConfig{beta}.validate();
  const Posterior post = encode(encoder, x);
  const Var z = reparameterize(post.mu, post.log_sigma, gamma);
  const Var x_hat = decode(decoder, z);
  if (x_hat.shape() != x.shape()) {
    throw ShapeError("elbo_loss: reconstruction " + shape_string(x_hat.shape()) + " vs data " + shape_string(x.shape()));
  }
  const Var recon = scalar_mul(sum(square(sub(x, x_hat))), 0.5 / static_cast<double>(x.rows()));
  const Var kl = kl_diag_gaussian(post.mu, post.log_sigma);
  return {add(recon, scalar_mul(kl, beta)), recon, kl};
}

/// Student loss: ELBO on current data plus ELBO on samples from the more
/// knowledgeable generator. An empty distill batch drops the second term.
inline Var student_distill_loss(const BoundMlp& encoder, const BoundMlp& decoder, Var x_real, const Tensor& x_distill,
                                const Tensor& gamma_real, const Tensor& gamma_distill, double beta, int task_index) {
  const Var own = elbo_loss(encoder, decoder, x_real, gamma_real, beta).total;
  if (x_distill.empty() || x_distill.rows() == 0) return own;
  if (task_index < 2) throw std::invalid_argument("student_distill_loss: task 1 has no prior knowledge to distill");
  const Var distilled = elbo_loss(encoder, decoder, x_real.tape().constant(x_distill), gamma_distill, beta).total;
  return add(own, distilled);
}

}  // namespace ltgan

#pragma once

// Lifelong training over a task stream.
//
// Task 1 trains both twins jointly against one critic. From task 2 on, one
// twin is frozen as Teacher and the other (the Assistant) learns from a
// critic whose positive batch mixes current-task data with Teacher samples.
// Roles swap at every task boundary. A VAE student is trained alongside,
// one step per generator step, distilling from the frozen twin.

#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ltgan/adam.hpp"
#include "ltgan/checkpoint.hpp"
#include "ltgan/data.hpp"
#include "ltgan/losses.hpp"
#include "ltgan/metrics.hpp"
#include "ltgan/nn.hpp"
#include "ltgan/rng.hpp"
#include "ltgan/roles.hpp"

namespace ltgan {

struct ModelConfig {
  std::size_t data_dim = 2;
  std::size_t latent_dim = 8;
  std::vector<std::size_t> generator_hidden{64, 64};
  std::vector<std::size_t> critic_hidden{64, 64};
  std::size_t student_latent_dim = 4;
  std::vector<std::size_t> student_hidden{64, 64};
  Activation hidden = Activation::leaky_relu;
  Activation data_output = Activation::identity;  // generator and decoder outputs

  static std::vector<std::size_t> chain(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
    std::vector<std::size_t> w{in};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(out);
    return w;
  }
  MlpSpec generator_spec() const { return {chain(latent_dim, generator_hidden, data_dim), hidden, data_output}; }
  MlpSpec critic_spec() const { return {chain(data_dim, critic_hidden, 1), hidden, Activation::identity}; }
  MlpSpec encoder_spec() const { return {chain(data_dim, student_hidden, 2 * student_latent_dim), hidden, Activation::identity}; }
  MlpSpec decoder_spec() const { return {chain(student_latent_dim, student_hidden, data_dim), hidden, data_output}; }
};

/// Coordinates the Fréchet distance is measured in.
enum class FrechetFeatures { raw, encoder };

struct TrainConfig {
  double lambda = 10.0;
  double beta = 4.0;
  double mix_ratio = 0.5;
  int critic_steps = 5;
  AdamConfig gan_adam{1e-4, 0.5, 0.9, 1e-8};
  AdamConfig student_adam{1e-3, 0.9, 0.999, 1e-8};
  bool no_distill = false;        // Teacher samples never reach critic or student
  bool joint_every_task = false;  // both twins trained jointly on every task
  bool critic_reset = false;      // fresh critic at every task boundary
  bool shared_joint_noise = false;
  std::size_t eval_samples = 500;
  FrechetFeatures frechet_features = FrechetFeatures::raw;

  void validate() const {
    GpConfig{lambda}.validate();
    BetaConfig{beta}.validate();
    if (!(mix_ratio >= 0.0 && mix_ratio <= 1.0)) throw std::invalid_argument("mix_ratio must lie in [0, 1]");
    if (critic_steps < 1) throw std::invalid_argument("critic_steps must be >= 1");
    if (eval_samples < 2) throw std::invalid_argument("eval_samples must be >= 2");
  }
};

struct FuzzyBoundary {
  int swapped_class = -1;
  std::string partner;  // task the class was exchanged with
};

struct TaskSpec {
  std::string name;
  std::shared_ptr<const Dataset> train;
  std::shared_ptr<const Dataset> eval;
  int epochs = 1;
  std::size_t batch_size = 64;
  std::size_t steps_per_epoch = 0;  // 0: one pass over the training set
  std::optional<FuzzyBoundary> fuzzy;

  std::size_t steps() const {
    if (steps_per_epoch > 0) return steps_per_epoch;
    return std::max<std::size_t>(1, train->size() / batch_size);
  }

  void validate() const {
    if (!train || train->size() == 0) throw std::invalid_argument("task '" + name + "': training set is empty");
    if (!eval || eval->size() < 2) throw std::invalid_argument("task '" + name + "': evaluation set needs at least 2 rows");
    if (epochs < 0) throw std::invalid_argument("task '" + name + "': epochs must be >= 0");
    if (batch_size < 2) throw std::invalid_argument("task '" + name + "': batch size must be >= 2");
  }
};

/// Running sums for the epoch in progress plus the last finished epoch's
/// generator losses (used to pick the first Teacher).
struct TaskProgress {
  std::uint64_t steps_done = 0;
  std::uint32_t epoch = 0;
  std::uint64_t epoch_steps = 0;
  double critic_sum = 0, gen_sum = 0, penalty_sum = 0, student_sum = 0;
  double loss_a_sum = 0, loss_b_sum = 0;
  double final_loss_a = 0, final_loss_b = 0;

  friend bool operator==(const TaskProgress&, const TaskProgress&) = default;
};

struct EngineState {
  Generator twin_a;
  Generator twin_b;
  Critic critic;
  Encoder encoder;
  Decoder decoder;
  AdamState opt_a, opt_b, opt_critic, opt_encoder, opt_decoder;
  RoleState roles;
  Rng rng;
  std::uint64_t seed = 0;
  TaskProgress progress;

  Generator& twin(TwinSlot s) { return s == TwinSlot::a ? twin_a : twin_b; }
  const Generator& twin(TwinSlot s) const { return s == TwinSlot::a ? twin_a : twin_b; }
  AdamState& optimizer(TwinSlot s) { return s == TwinSlot::a ? opt_a : opt_b; }

  /// Twins are built from one initialization stream copy, so they start identical.
  static EngineState initialize(const ModelConfig& model, const TrainConfig& train, std::uint64_t seed) {
    Rng init(seed);
    Rng twin_init(init.next_u64());
    Rng twin_copy = twin_init;
    Generator a("twin_a", model.generator_spec(), twin_init);
    Generator b("twin_b", model.generator_spec(), twin_copy);
    Critic critic("critic", model.critic_spec(), init);
    Encoder enc("encoder", model.encoder_spec(), init);
    Decoder dec("decoder", model.decoder_spec(), init);
    EngineState s{std::move(a),
                  std::move(b),
                  std::move(critic),
                  std::move(enc),
                  std::move(dec),
                  {},
                  {},
                  {},
                  {},
                  {},
                  RoleState{},
                  Rng(init.next_u64()),
                  seed,
                  {}};
    s.opt_a = AdamState(s.twin_a.net().params(), train.gan_adam);
    s.opt_b = AdamState(s.twin_b.net().params(), train.gan_adam);
    s.opt_critic = AdamState(s.critic.net().params(), train.gan_adam);
    s.opt_encoder = AdamState(s.encoder.net().params(), train.student_adam);
    s.opt_decoder = AdamState(s.decoder.net().params(), train.student_adam);
    return s;
  }
};

struct StepLosses {
  double critic = 0;
  double generator = 0;
  double penalty = 0;
  double student = 0;
  double twin_a = 0;  // per-twin generator losses in the Joint phase
  double twin_b = 0;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  return x;
}

inline void require_finite(double v, const std::string& what, const RoleState& roles, std::uint64_t step) {
  if (!std::isfinite(v)) {
    throw NumericError(what + " became non-finite at task " + std::to_string(roles.task) + ", step " + std::to_string(step));
  }
}

}  // namespace detail

class Engine {
 public:
  Engine(ModelConfig model, TrainConfig train, std::uint64_t seed)
      : model_(std::move(model)), train_(train), state_(EngineState::initialize(model_, train_, seed)) {
    train_.validate();
  }

  Engine(ModelConfig model, TrainConfig train, EngineState state)
      : model_(std::move(model)), train_(train), state_(std::move(state)) {
    train_.validate();
  }

  EngineState& state() noexcept { return state_; }
  const EngineState& state() const noexcept { return state_; }
  const TrainConfig& config() const noexcept { return train_; }
  const ModelConfig& model() const noexcept { return model_; }
  const RoleState& roles() const noexcept { return state_.roles; }

  bool joint_phase() const { return state_.roles.phase == Phase::joint || train_.joint_every_task; }

  /// The twin whose samples represent what has been learned so far: the
  /// trainable twin while distilling; in the Joint phase the twin with the
  /// lower generator loss over the running (or last) epoch, ties to A.
  const Generator& learner() const {
    if (!joint_phase()) return state_.twin(state_.roles.trainable());
    const auto& p = state_.progress;
    const bool running = p.epoch_steps > 0;
    const double a = running ? p.loss_a_sum : p.final_loss_a;
    const double b = running ? p.loss_b_sum : p.final_loss_b;
    return b < a ? state_.twin_b : state_.twin_a;
  }

  /// Positive batch for the critic while distilling: each row independently
  /// from current-task data (probability mix_ratio) or from the frozen twin.
  struct Mixture {
    Tensor rows;
    std::vector<int> from_data;
  };

  Mixture sample_mixture(const TaskSpec& task, std::size_t n) {
    if (joint_phase()) throw std::logic_error("sample_mixture: no frozen twin in the Joint phase");
    MixtureDraws d = draw_mixture(task, n);
    const Generator& frozen = state_.twin(state_.roles.teacher);
    return {mix_positives(d.real, generate(frozen, d.z_frozen), d.take_data), std::move(d.take_data)};
  }

  /// One generator iteration: critic_steps critic updates, one generator
  /// update (both twins in the Joint phase), one student update.
  StepLosses step(const TaskSpec& task) {
    StepLosses out = joint_phase() ? joint_step(task) : distill_step(task);
    out.student = student_step(task);
    detail::require_finite(out.student, "student loss", state_.roles, state_.progress.steps_done);
    auto& p = state_.progress;
    ++p.steps_done;
    ++p.epoch_steps;
    p.critic_sum += out.critic;
    p.gen_sum += out.generator;
    p.penalty_sum += out.penalty;
    p.student_sum += out.student;
    p.loss_a_sum += out.twin_a;
    p.loss_b_sum += out.twin_b;
    return out;
  }

  /// Trains the current task to completion, resuming mid-task if progress
  /// exists. `previous` holds the earlier tasks of the stream, for evaluation.
  std::vector<MetricRecord> train_task(const TaskSpec& task, std::span<const TaskSpec> previous = {}) {
    task.validate();
    if (task.train->dim() != model_.data_dim) {
      throw ShapeError("task '" + task.name + "': data width " + std::to_string(task.train->dim()) + " but model expects " +
                       std::to_string(model_.data_dim));
    }
    std::vector<MetricRecord> records;
    const std::uint64_t per_epoch = task.steps();
    const std::uint64_t total = per_epoch * static_cast<std::uint64_t>(task.epochs);
    while (state_.progress.steps_done < total) {
      try {
        step(task);
      } catch (const NumericError& e) {
        const std::string what = e.what();
        if (what.find(" at task ") != std::string::npos) throw;
        throw NumericError(what + " at task " + std::to_string(state_.roles.task) + ", step " + std::to_string(state_.progress.steps_done));
      }
      if (state_.progress.epoch_steps == per_epoch) records.push_back(finish_epoch(task, previous));
    }
    return records;
  }

  /// Closes task k and sets up task k + 1: role swap, fresh optimizer for the
  /// newly trainable twin, optional critic reset.
  void advance_task() {
    auto& s = state_;
    if (train_.joint_every_task) {
      s.roles = {Phase::joint, TwinSlot::a, s.roles.task + 1};
    } else {
      if (s.roles.task == 1 && s.progress.final_loss_b < s.progress.final_loss_a) {
        // Slot A always holds the first Teacher.
        for (std::size_t i = 0; i < s.twin_a.net().params().size(); ++i) {
          std::swap(s.twin_a.net().params()[i].value, s.twin_b.net().params()[i].value);
        }
        std::swap(s.opt_a, s.opt_b);
      }
      s.roles = s.roles.next();
      s.optimizer(s.roles.trainable()).reset();
    }
    if (train_.critic_reset) {
      Rng reinit(detail::mix_seed(s.seed, static_cast<std::uint64_t>(s.roles.task)));
      s.critic.net().initialize(reinit);
      s.opt_critic.reset();
    }
    s.progress = {};
  }

  /// Per-epoch evaluation on held-out data of every task seen so far. Uses
  /// its own stream so evaluation never perturbs training randomness.
  MetricRecord evaluate(const TaskSpec& current, std::span<const TaskSpec> previous, int epoch) const {
    const auto& s = state_;
    Rng rng(detail::mix_seed(detail::mix_seed(s.seed, static_cast<std::uint64_t>(s.roles.task)), static_cast<std::uint64_t>(epoch)));
    std::vector<const Tensor*> evals;
    for (const auto& t : previous) evals.push_back(&t.eval->x);
    evals.push_back(&current.eval->x);

    std::vector<Tensor> capped;
    for (const Tensor* e : evals) {
      const std::size_t n = std::min(e->rows(), train_.eval_samples);
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      capped.push_back(gather_rows(*e, idx));
    }
    const Tensor pooled = stack_rows(capped);
    const Tensor gamma = rng.normal_matrix(pooled.rows(), model_.student_latent_dim);
    const NlogTerms n = nlog(s.encoder, s.decoder, pooled, gamma);

    Tensor samples = generate(learner(), rng.normal_matrix(train_.eval_samples, model_.latent_dim));
    if (train_.frechet_features == FrechetFeatures::encoder) {
      samples = encode(s.encoder, samples).first;
      for (Tensor& e : capped) e = encode(s.encoder, e).first;
      evals.clear();
      for (const Tensor& e : capped) evals.push_back(&e);
    }
    MetricRecord r;
    r.task = s.roles.task;
    r.epoch = epoch;
    r.nlog = n.nlog;
    r.mse = n.mse;
    r.kl = n.kl;
    r.frechet = frechet_to_each(samples, evals);
    return r;
  }

  // -- checkpoints --------------------------------------------------------

  std::vector<unsigned char> checkpoint_bytes() const;
  void checkpoint(const std::string& path) const { write_bytes(path, checkpoint_bytes()); }
  static EngineState restore_bytes(std::span<const unsigned char> bytes);
  static EngineState restore(const std::string& path) { return restore_bytes(read_bytes(path)); }

 private:
  struct MixtureDraws {
    Tensor real;
    std::vector<int> take_data;
    Tensor z_frozen;
  };

  Tensor minibatch(const Dataset& d, std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = state_.rng.below(d.size());
    return gather_rows(d.x, idx);
  }

  std::vector<double> uniforms(std::size_t n) {
    std::vector<double> u(n);
    for (double& v : u) v = state_.rng.uniform();
    return u;
  }

  MixtureDraws draw_mixture(const TaskSpec& task, std::size_t n) {
    MixtureDraws d;
    d.real = minibatch(*task.train, n);
    d.take_data.resize(n);
    const double ratio = train_.no_distill ? 1.0 : train_.mix_ratio;
    for (int& t : d.take_data) t = state_.rng.bernoulli(ratio) ? 1 : 0;
    d.z_frozen = state_.rng.normal_matrix(n, model_.latent_dim);
    return d;
  }

  StepLosses joint_step(const TaskSpec& task) {
    auto& s = state_;
    const std::size_t B = task.batch_size, L = model_.latent_dim;
    const RoleState joint{Phase::joint, TwinSlot::a, s.roles.task};
    StepLosses out;
    for (int c = 0; c < train_.critic_steps; ++c) {
      const Tensor real = minibatch(*task.train, B);
      const Tensor z_a = s.rng.normal_matrix(B, L);
      const Tensor z_b = train_.shared_joint_noise ? z_a : s.rng.normal_matrix(B, L);
      const auto u_a = uniforms(B);
      const auto u_b = uniforms(B);
      Tape tape;
      const BoundMlp critic = s.critic.net().bind(tape, true);
      const TwinTerms t = twin_objective(critic, tape, tape.constant(real), tape.constant(generate(s.twin_a, z_a)),
                                         tape.constant(generate(s.twin_b, z_b)), train_.lambda, u_a, u_b, joint);
      detail::require_finite(t.critic.value().item(), "critic loss", s.roles, s.progress.steps_done);
      const GradientMap g = tape.backward(t.critic, critic.params);
      s.opt_critic.apply(s.critic.net().params(), gradient_values(g, critic));
      out.critic += t.critic.value().item() / train_.critic_steps;
      out.penalty += t.penalty.value().item() / train_.critic_steps;
    }
    const Tensor z_a = s.rng.normal_matrix(B, L);
    const Tensor z_b = train_.shared_joint_noise ? z_a : s.rng.normal_matrix(B, L);
    Tape tape;
    const BoundMlp critic = s.critic.net().bind(tape, false);
    const BoundMlp ga = s.twin_a.net().bind(tape, true);
    const BoundMlp gb = s.twin_b.net().bind(tape, true);
    const Var loss_a = generator_loss(critic, generate(ga, tape.constant(z_a)));
    const Var loss_b = generator_loss(critic, generate(gb, tape.constant(z_b)));
    out.twin_a = loss_a.value().item();
    out.twin_b = loss_b.value().item();
    out.generator = 0.5 * (out.twin_a + out.twin_b);
    detail::require_finite(out.generator, "generator loss", s.roles, s.progress.steps_done);
    std::vector<Var> wrt(ga.params);
    wrt.insert(wrt.end(), gb.params.begin(), gb.params.end());
    const GradientMap g = tape.backward(add(loss_a, loss_b), wrt);
    s.opt_a.apply(s.twin_a.net().params(), gradient_values(g, ga));
    s.opt_b.apply(s.twin_b.net().params(), gradient_values(g, gb));
    return out;
  }

  StepLosses distill_step(const TaskSpec& task) {
    auto& s = state_;
    const std::size_t B = task.batch_size, L = model_.latent_dim;
    Generator& trainable = s.twin(s.roles.trainable());
    const Generator& frozen = s.twin(s.roles.teacher);
    StepLosses out;
    for (int c = 0; c < train_.critic_steps; ++c) {
      const MixtureDraws d = draw_mixture(task, B);
      const Tensor z = s.rng.normal_matrix(B, L);
      const auto u = uniforms(B);
      Tape tape;
      const BoundMlp critic = s.critic.net().bind(tape, true);
      const LakdTerms t = lakd_objective(critic, tape, trainable, tape.constant(generate(trainable, z)), frozen, d.z_frozen, d.real,
                                         train_.lambda, d.take_data, u, s.roles.task);
      detail::require_finite(t.critic.value().item(), "critic loss", s.roles, s.progress.steps_done);
      const GradientMap g = tape.backward(t.critic, critic.params);
      s.opt_critic.apply(s.critic.net().params(), gradient_values(g, critic));
      out.critic += t.critic.value().item() / train_.critic_steps;
      out.penalty += t.penalty.value().item() / train_.critic_steps;
    }
    const Tensor z = s.rng.normal_matrix(B, L);
    Tape tape;
    const BoundMlp critic = s.critic.net().bind(tape, false);
    const BoundMlp gen = trainable.net().bind(tape, true);
    const Var loss = generator_loss(critic, generate(gen, tape.constant(z)));
    out.generator = loss.value().item();
    detail::require_finite(out.generator, "generator loss", s.roles, s.progress.steps_done);
    const GradientMap g = tape.backward(loss, gen.params);
    s.optimizer(s.roles.trainable()).apply(trainable.net().params(), gradient_values(g, gen));
    return out;
  }

  double student_step(const TaskSpec& task) {
    auto& s = state_;
    const std::size_t B = task.batch_size;
    const Tensor x_real = minibatch(*task.train, B);
    const Tensor gamma_real = s.rng.normal_matrix(B, model_.student_latent_dim);
    Tensor x_distill = Tensor::matrix(0, model_.data_dim);
    Tensor gamma_distill = Tensor::matrix(0, model_.student_latent_dim);
    if (!joint_phase() && !train_.no_distill) {
      x_distill = generate(s.twin(s.roles.teacher), s.rng.normal_matrix(B, model_.latent_dim));
      gamma_distill = s.rng.normal_matrix(B, model_.student_latent_dim);
    }
    Tape tape;
    const BoundMlp enc = s.encoder.net().bind(tape, true);
    const BoundMlp dec = s.decoder.net().bind(tape, true);
    const Var loss = student_distill_loss(enc, dec, tape.constant(x_real), x_distill, gamma_real, gamma_distill, train_.beta, s.roles.task);
    std::vector<Var> wrt(enc.params);
    wrt.insert(wrt.end(), dec.params.begin(), dec.params.end());
    const GradientMap g = tape.backward(loss, wrt);
    s.opt_encoder.apply(s.encoder.net().params(), gradient_values(g, enc));
    s.opt_decoder.apply(s.decoder.net().params(), gradient_values(g, dec));
    return loss.value().item();
  }

  MetricRecord finish_epoch(const TaskSpec& task, std::span<const TaskSpec> previous) {
    auto& p = state_.progress;
    const double n = static_cast<double>(p.epoch_steps);
    MetricRecord r = evaluate(task, previous, static_cast<int>(p.epoch) + 1);
    r.critic_loss = p.critic_sum / n;
    r.gen_loss = p.gen_sum / n;
    r.penalty = p.penalty_sum / n;
    r.student_loss = p.student_sum / n;
    p.final_loss_a = p.loss_a_sum / n;
    p.final_loss_b = p.loss_b_sum / n;
    p.critic_sum = p.gen_sum = p.penalty_sum = p.student_sum = p.loss_a_sum = p.loss_b_sum = 0;
    p.epoch_steps = 0;
    ++p.epoch;
    return r;
  }

  ModelConfig model_;
  TrainConfig train_;
  EngineState state_;
};

// ---------------------------------------------------------------------------
// Engine checkpoints: the network blocks, Adam moments as tensor groups, and
// an "ENG1" trailer with role state, progress, optimizer settings and the
// random-stream state.

inline constexpr std::array<char, 4> kEngineMagic{'E', 'N', 'G', '1'};

namespace detail {

struct OptimizerSlot {
  const char* name;
  const Mlp* net;
  const AdamState* opt;
};

inline std::array<OptimizerSlot, 5> optimizer_slots(const EngineState& s) {
  return {{{"twin_a", &s.twin_a.net(), &s.opt_a},
           {"twin_b", &s.twin_b.net(), &s.opt_b},
           {"critic", &s.critic.net(), &s.opt_critic},
           {"encoder", &s.encoder.net(), &s.opt_encoder},
           {"decoder", &s.decoder.net(), &s.opt_decoder}}};
}

}  // namespace detail

inline std::vector<unsigned char> Engine::checkpoint_bytes() const {
  const auto& s = state_;
  const auto slots = detail::optimizer_slots(s);
  std::vector<BlockRef> blocks;
  for (const auto& slot : slots) blocks.push_back(block_of(*slot.net));
  for (const auto& slot : slots) {
    for (int which = 0; which < 2; ++which) {
      BlockRef b{std::string(slot.name) + (which == 0 ? ".adam_m" : ".adam_v"), BlockKind::tensor_group, Activation::identity,
                 Activation::identity, {}, {}};
      const auto& moments = which == 0 ? slot.opt->first_moments() : slot.opt->second_moments();
      for (std::size_t i = 0; i < moments.size(); ++i) {
        b.tensors.push_back(&moments[i]);
        b.tensor_names.push_back(slot.net->params()[i].name);
      }
      blocks.push_back(std::move(b));
    }
  }

  ByteWriter body;
  body.u64(s.seed);
  body.u32(static_cast<std::uint32_t>(s.roles.task));
  body.u8(static_cast<std::uint8_t>(s.roles.phase));
  body.u8(static_cast<std::uint8_t>(s.roles.teacher));
  const auto& p = s.progress;
  body.u64(p.steps_done);
  body.u32(p.epoch);
  body.u64(p.epoch_steps);
  for (double v : {p.critic_sum, p.gen_sum, p.penalty_sum, p.student_sum, p.loss_a_sum, p.loss_b_sum, p.final_loss_a, p.final_loss_b}) {
    body.f64(v);
  }
  body.u32(static_cast<std::uint32_t>(slots.size()));
  for (const auto& slot : slots) {
    const AdamConfig& c = slot.opt->config();
    body.str(slot.name);
    body.f64(c.lr);
    body.f64(c.beta1);
    body.f64(c.beta2);
    body.f64(c.eps);
    body.u64(slot.opt->step());
  }
  body.str(s.rng.state());

  ByteWriter trailer;
  trailer.raw(kEngineMagic.data(), kEngineMagic.size());
  trailer.u32(static_cast<std::uint32_t>(body.bytes().size()));
  trailer.raw(body.bytes().data(), body.bytes().size());
  return encode_checkpoint(blocks, trailer.bytes());
}

inline EngineState Engine::restore_bytes(std::span<const unsigned char> bytes) {
  const CheckpointFile file = decode_checkpoint(bytes);
  ByteReader r(file.trailer);
  r.section("engine");
  auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), kEngineMagic.begin())) throw CheckpointError("checkpoint: engine section has wrong magic bytes");
  const std::uint32_t length = r.u32();
  auto body_bytes = r.take(length);
  if (r.remaining() != 0) throw CheckpointError("checkpoint: " + std::to_string(r.remaining()) + " unexpected bytes after engine section");
  ByteReader body(body_bytes);
  body.section("engine");

  EngineState s{Generator(file.block("twin_a").to_mlp()),
                Generator(file.block("twin_b").to_mlp()),
                Critic(file.block("critic").to_mlp()),
                Encoder(file.block("encoder").to_mlp()),
                Decoder(file.block("decoder").to_mlp()),
                {},
                {},
                {},
                {},
                {},
                RoleState{},
                Rng{},
                0,
                {}};
  s.seed = body.u64();
  s.roles.task = static_cast<int>(body.u32());
  const std::uint8_t phase = body.u8(), teacher = body.u8();
  if (phase > 1 || teacher > 1) throw CheckpointError("checkpoint: engine section has invalid role state");
  s.roles.phase = static_cast<Phase>(phase);
  s.roles.teacher = static_cast<TwinSlot>(teacher);
  auto& p = s.progress;
  p.steps_done = body.u64();
  p.epoch = body.u32();
  p.epoch_steps = body.u64();
  for (double* v : {&p.critic_sum, &p.gen_sum, &p.penalty_sum, &p.student_sum, &p.loss_a_sum, &p.loss_b_sum, &p.final_loss_a, &p.final_loss_b}) {
    *v = body.f64();
  }
  const std::uint32_t n_opt = body.u32();
  if (n_opt != 5) throw CheckpointError("checkpoint: expected 5 optimizers, found " + std::to_string(n_opt));
  std::array<std::pair<Mlp*, AdamState*>, 5> targets{{{&s.twin_a.net(), &s.opt_a},
                                                     {&s.twin_b.net(), &s.opt_b},
                                                     {&s.critic.net(), &s.opt_critic},
                                                     {&s.encoder.net(), &s.opt_encoder},
                                                     {&s.decoder.net(), &s.opt_decoder}}};
  for (auto& [net, opt] : targets) {
    const std::string name = body.str();
    if (name != net->name()) throw CheckpointError("checkpoint: optimizer '" + name + "' out of order, expected '" + net->name() + "'");
    AdamConfig c;
    c.lr = body.f64();
    c.beta1 = body.f64();
    c.beta2 = body.f64();
    c.eps = body.f64();
    const std::uint64_t step = body.u64();
    *opt = AdamState(net->params(), c);
    std::vector<Tensor> m, v;
    for (const auto& e : file.block(name + ".adam_m").tensors) m.push_back(e.value);
    for (const auto& e : file.block(name + ".adam_v").tensors) v.push_back(e.value);
    opt->restore(step, std::move(m), std::move(v));
  }
  s.rng.set_state(body.str());
  if (body.remaining() != 0) throw CheckpointError("checkpoint: trailing bytes inside engine section");
  return s;
}

}  // namespace ltgan

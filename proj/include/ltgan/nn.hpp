#pragma once

// Multilayer perceptrons for the twin generators, the critic and the
// student encoder/decoder.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "ltgan/autodiff.hpp"
#include "ltgan/rng.hpp"

namespace ltgan {

enum class Activation : std::uint8_t { identity, tanh, sigmoid, leaky_relu };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
    case Activation::leaky_relu: return "leaky_relu";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "identity" || s == "linear") return Activation::identity;
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "leaky_relu") return Activation::leaky_relu;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

inline Var activate(Var x, Activation a) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::tanh: return tanh(x);
    case Activation::sigmoid: return sigmoid(x);
    case Activation::leaky_relu: return leaky_relu(x);
  }
  return x;
}

struct MlpSpec {
  std::vector<std::size_t> widths;  // input, hidden..., output
  Activation hidden = Activation::leaky_relu;
  Activation output = Activation::identity;

  std::size_t input_dim() const { return widths.front(); }
  std::size_t output_dim() const { return widths.back(); }
  std::size_t layers() const { return widths.size() - 1; }

  void validate() const {
    if (widths.size() < 2) throw std::invalid_argument("mlp: need at least 2 layer widths");
    for (std::size_t w : widths) {
      if (w == 0) throw std::invalid_argument("mlp: layer widths must be positive");
    }
  }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// Named, ordered collection of parameter tensors. Instances are counted so
/// callers can check how many parameter sets are alive at once.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  explicit ParamSet(std::string name = {}) : name_(std::move(name)) { track(+1); }
  ParamSet(const ParamSet& o) : name_(o.name_), entries_(o.entries_) { track(+1); }
  ParamSet(ParamSet&& o) noexcept : name_(std::move(o.name_)), entries_(std::move(o.entries_)) { track(+1); }
  ParamSet& operator=(const ParamSet&) = default;
  ParamSet& operator=(ParamSet&&) noexcept = default;
  ~ParamSet() { track(-1); }

  const std::string& name() const noexcept { return name_; }
  void rename(std::string n) { name_ = std::move(n); }

  void add(std::string name, Tensor value) { entries_.push_back({std::move(name), std::move(value)}); }
  void clear() noexcept { entries_.clear(); }

  std::size_t size() const noexcept { return entries_.size(); }
  Entry& operator[](std::size_t i) { return entries_[i]; }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  /// FNV-1a over names, shapes and the raw bytes of every value.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& e : entries_) {
      mix(e.name.data(), e.name.size());
      for (std::size_t d : e.value.shape()) mix(&d, sizeof d);
      mix(e.value.data().data(), e.value.size() * sizeof(double));
    }
    return h;
  }

  /// Values only; names are part of the schema, not the state.
  friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.entries_ == b.entries_; }

  static std::size_t live_count() { return live_.load(); }
  static std::size_t peak_count() { return peak_.load(); }
  static void reset_peak() { peak_.store(live_.load()); }

 private:
  static void track(int delta) {
    const auto step = static_cast<std::size_t>(delta);  // wraps for -1
    const std::size_t now = live_.fetch_add(step) + step;
    std::size_t prev = peak_.load();
    while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
    }
  }

  inline static std::atomic<std::size_t> live_{0};
  inline static std::atomic<std::size_t> peak_{0};

  std::string name_;
  std::vector<Entry> entries_;
};

class Mlp;

/// An Mlp whose parameters have been placed on a tape.
struct BoundMlp {
  const Mlp* net = nullptr;
  std::vector<Var> params;

  Var operator()(Var x) const;
};

/// Fully connected network, y = act(x W + b) per layer, W stored in x out.
class Mlp {
 public:
  /// He-normal initialization for leaky-ReLU layers, Xavier-uniform otherwise; zero biases.
  Mlp(std::string name, MlpSpec spec, Rng& rng) : spec_(std::move(spec)), params_(std::move(name)) {
    spec_.validate();
    initialize(rng);
  }

  /// Redraws every parameter in place.
  void initialize(Rng& rng) {
    params_.clear();
    for (std::size_t l = 0; l < spec_.layers(); ++l) {
      const std::size_t in = spec_.widths[l], out = spec_.widths[l + 1];
      const Activation act = layer_activation(l);
      Tensor w = Tensor::matrix(in, out);
      if (act == Activation::leaky_relu) {
        const double std_dev = std::sqrt(2.0 / ((1.0 + kLeakySlope * kLeakySlope) * static_cast<double>(in)));
        for (double& v : w.data()) v = std_dev * rng.normal();
      } else {
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        for (double& v : w.data()) v = limit * (2.0 * rng.uniform() - 1.0);
      }
      params_.add("l" + std::to_string(l) + ".weight", std::move(w));
      params_.add("l" + std::to_string(l) + ".bias", Tensor::matrix(1, out));
    }
  }

  Mlp(MlpSpec spec, ParamSet params) : spec_(std::move(spec)), params_(std::move(params)) {
    spec_.validate();
    if (params_.size() != 2 * spec_.layers()) {
      throw ShapeError("mlp '" + params_.name() + "': expected " + std::to_string(2 * spec_.layers()) + " tensors, got " +
                       std::to_string(params_.size()));
    }
    for (std::size_t l = 0; l < spec_.layers(); ++l) {
      const Shape w{spec_.widths[l], spec_.widths[l + 1]}, b{1, spec_.widths[l + 1]};
      if (params_[2 * l].value.shape() != w || params_[2 * l + 1].value.shape() != b) {
        throw ShapeError("mlp '" + params_.name() + "': layer " + std::to_string(l) + " has shapes " +
                         shape_string(params_[2 * l].value.shape()) + ", " + shape_string(params_[2 * l + 1].value.shape()));
      }
    }
  }

  const MlpSpec& spec() const noexcept { return spec_; }
  const ParamSet& params() const noexcept { return params_; }
  ParamSet& params() noexcept { return params_; }
  const std::string& name() const noexcept { return params_.name(); }

  Activation layer_activation(std::size_t l) const { return l + 1 == spec_.layers() ? spec_.output : spec_.hidden; }

  /// Places the parameters on `tape`, as variables when `trainable`.
  BoundMlp bind(Tape& tape, bool trainable) const {
    BoundMlp b{this, {}};
    b.params.reserve(params_.size());
    for (const auto& e : params_) b.params.push_back(trainable ? tape.variable(e.value) : tape.constant(e.value));
    return b;
  }

  Var forward(std::span<const Var> bound, Var x) const {
    if (x.value().rank() != 2 || x.cols() != spec_.input_dim()) {
      throw ShapeError(name() + ": input " + shape_string(x.shape()) + " but network expects " +
                       std::to_string(spec_.input_dim()));
    }
    Var h = x;
    for (std::size_t l = 0; l < spec_.layers(); ++l) {
      h = activate(add(matmul(h, bound[2 * l]), bound[2 * l + 1]), layer_activation(l));
    }
    return h;
  }

  /// Tape-free evaluation.
  Tensor forward(const Tensor& x) const {
    Tape tape;
    BoundMlp b = bind(tape, false);
    return b(tape.constant(x)).value();
  }

 private:
  MlpSpec spec_;
  ParamSet params_;
};

inline Var BoundMlp::operator()(Var x) const { return net->forward(params, x); }

/// Latent noise -> data. Teacher and Assistant are two instances with equal specs.
class Generator {
 public:
  Generator(std::string name, MlpSpec spec, Rng& rng) : net_(std::move(name), std::move(spec), rng) {}
  explicit Generator(Mlp net) : net_(std::move(net)) {}

  std::size_t latent_dim() const { return net_.spec().input_dim(); }
  std::size_t data_dim() const { return net_.spec().output_dim(); }
  const Mlp& net() const noexcept { return net_; }
  Mlp& net() noexcept { return net_; }

 private:
  Mlp net_;
};

/// Wasserstein critic: scalar output, no output squashing.
class Critic {
 public:
  Critic(std::string name, MlpSpec spec, Rng& rng) : net_(std::move(name), checked(std::move(spec)), rng) {}
  explicit Critic(Mlp net) : net_(std::move(net)) { checked(net_.spec()); }

  std::size_t data_dim() const { return net_.spec().input_dim(); }
  const Mlp& net() const noexcept { return net_; }
  Mlp& net() noexcept { return net_; }

 private:
  static MlpSpec checked(MlpSpec spec) {
    if (spec.widths.empty() || spec.output_dim() != 1) throw std::invalid_argument("critic: final layer width must be 1");
    if (spec.output != Activation::identity) throw std::invalid_argument("critic: output activation must be identity");
    return spec;
  }

  Mlp net_;
};

/// Outputs (mu, log sigma) side by side; final width is 2 x latent-dim.
class Encoder {
 public:
  Encoder(std::string name, MlpSpec spec, Rng& rng) : net_(std::move(name), checked(std::move(spec)), rng) {}
  explicit Encoder(Mlp net) : net_(std::move(net)) { checked(net_.spec()); }

  std::size_t latent_dim() const { return net_.spec().output_dim() / 2; }
  std::size_t data_dim() const { return net_.spec().input_dim(); }
  const Mlp& net() const noexcept { return net_; }
  Mlp& net() noexcept { return net_; }

 private:
  static MlpSpec checked(MlpSpec spec) {
    if (spec.widths.empty() || spec.output_dim() % 2 != 0) throw std::invalid_argument("encoder: final layer width must be even");
    if (spec.output != Activation::identity) throw std::invalid_argument("encoder: output activation must be identity");
    return spec;
  }

  Mlp net_;
};

class Decoder {
 public:
  Decoder(std::string name, MlpSpec spec, Rng& rng) : net_(std::move(name), std::move(spec), rng) {}
  explicit Decoder(Mlp net) : net_(std::move(net)) {}

  std::size_t latent_dim() const { return net_.spec().input_dim(); }
  std::size_t data_dim() const { return net_.spec().output_dim(); }
  const Mlp& net() const noexcept { return net_; }
  Mlp& net() noexcept { return net_; }

 private:
  Mlp net_;
};

inline void require_width(const char* what, const Tensor& x, std::size_t width) {
  if (x.rank() != 2 || x.cols() != width) {
    throw ShapeError(std::string(what) + ": expected width " + std::to_string(width) + ", got " + shape_string(x.shape()));
  }
}

inline Var generate(const BoundMlp& gen, Var z) {
  require_width("generate", z.value(), gen.net->spec().input_dim());
  return gen(z);
}

inline Tensor generate(const Generator& gen, const Tensor& z) {
  require_width("generate", z, gen.latent_dim());
  return gen.net().forward(z);
}

inline Var criticize(const BoundMlp& critic, Var x) {
  require_width("criticize", x.value(), critic.net->spec().input_dim());
  return critic(x);
}

inline Tensor criticize(const Critic& critic, const Tensor& x) {
  require_width("criticize", x, critic.data_dim());
  return critic.net().forward(x);
}

struct Posterior {
  Var mu;
  Var log_sigma;
};

inline Posterior encode(const BoundMlp& enc, Var x) {
  require_width("encode", x.value(), enc.net->spec().input_dim());
  const Var out = enc(x);
  const std::size_t latent = out.cols() / 2;
  return {slice_cols(out, 0, latent), slice_cols(out, latent, latent)};
}

inline Var decode(const BoundMlp& dec, Var z) {
  require_width("decode", z.value(), dec.net->spec().input_dim());
  return dec(z);
}

inline std::pair<Tensor, Tensor> encode(const Encoder& enc, const Tensor& x) {
  Tape tape;
  const BoundMlp b = enc.net().bind(tape, false);
  const Posterior p = encode(b, tape.constant(x));
  return {p.mu.value(), p.log_sigma.value()};
}

inline Tensor decode(const Decoder& dec, const Tensor& z) {
  require_width("decode", z, dec.latent_dim());
  return dec.net().forward(z);
}

}  // namespace ltgan

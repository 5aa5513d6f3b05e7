#pragma once

// Evaluation: student NLOG, Gaussian Frechet distance, forgetting curves,
// latent interpolation/traversal, and the per-epoch metric log.

#include <algorithm>
#include <charconv>
#include <cstring>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "ltgan/losses.hpp"
#include "ltgan/nn.hpp"
#include "ltgan/rng.hpp"

namespace ltgan {

// ---------------------------------------------------------------------------
// Student likelihood

struct NlogTerms {
  double nlog = 0;            // reconstruction + kl
  double reconstruction = 0;  // 1/2 sum of squared error per datum
  double mse = 0;             // mean over batch and dimensions
  double kl = 0;
};

/// Batch-mean negative ELBO at beta = 1, constants dropped. Same convention
/// as elbo_loss, so nlog == elbo_loss(beta = 1) on identical batch and noise.
inline NlogTerms nlog(const Encoder& enc, const Decoder& dec, const Tensor& x, const Tensor& gamma) {
  if (x.rank() != 2 || x.rows() == 0) throw std::invalid_argument("nlog: empty batch");
  Tape tape;
  const BoundMlp be = enc.net().bind(tape, false);
  const BoundMlp bd = dec.net().bind(tape, false);
  const ElboTerms t = elbo_loss(be, bd, tape.constant(x), gamma, 1.0);
  NlogTerms out;
  out.reconstruction = t.reconstruction.value().item();
  out.kl = t.kl.value().item();
  out.nlog = t.total.value().item();
  out.mse = 2.0 * out.reconstruction / static_cast<double>(x.cols());
  return out;
}

// ---------------------------------------------------------------------------
// Frechet distance between Gaussians

struct GaussianSummary {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Sample mean and unbiased (n - 1) covariance of the rows of `x`.
inline GaussianSummary fit_gaussian(const Tensor& x) {
  if (x.rank() != 2 || x.rows() < 2) throw std::invalid_argument("fit_gaussian: need at least 2 rows");
  const auto n = static_cast<Eigen::Index>(x.rows()), d = static_cast<Eigen::Index>(x.cols());
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(x.data().data(), n, d);
  GaussianSummary g;
  g.mean = m.colwise().mean().transpose();
  const Eigen::MatrixXd centered = m.rowwise() - g.mean.transpose();
  g.cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  return g;
}

namespace detail {

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& s, const char* which) {
  const Eigen::MatrixXd sym = 0.5 * (s + s.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  const Eigen::VectorXd ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (ev.minCoeff() < -1e-9 * scale) {
    throw std::invalid_argument(std::string("frechet_gaussian: covariance ") + which + " is not positive semi-definite (eigenvalue " +
                                std::to_string(ev.minCoeff()) + ")");
  }
  return es.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// d^2 = |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}). The trace of
/// the product root is taken from the eigenvalues of S_a^{1/2} S_b S_a^{1/2},
/// clamped at zero.
inline double frechet_gaussian(const GaussianSummary& a, const GaussianSummary& b) {
  const auto d = a.mean.size();
  if (b.mean.size() != d || a.cov.rows() != d || a.cov.cols() != d || b.cov.rows() != d || b.cov.cols() != d) {
    throw ShapeError("frechet_gaussian: dimension mismatch " + std::to_string(a.mean.size()) + " vs " + std::to_string(b.mean.size()));
  }
  for (const auto* g : {&a, &b}) {
    const double tol = 1e-9 * std::max(1.0, g->cov.cwiseAbs().maxCoeff());
    if (!((g->cov - g->cov.transpose()).cwiseAbs().maxCoeff() <= tol)) {
      throw std::invalid_argument("frechet_gaussian: covariance is not symmetric");
    }
  }
  const Eigen::MatrixXd root_a = detail::psd_sqrt(a.cov, "a");
  detail::psd_sqrt(b.cov, "b");
  const Eigen::MatrixXd inner = root_a * b.cov * root_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double tr_root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d2 = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_root;
  return std::max(0.0, d2);
}

inline double frechet_distance(const Tensor& samples_a, const Tensor& samples_b) {
  return frechet_gaussian(fit_gaussian(samples_a), fit_gaussian(samples_b));
}

// ---------------------------------------------------------------------------
// Worker threads

/// Worker cap from LTGAN_THREADS (default: hardware concurrency, at least 1).
inline std::size_t worker_threads() {
  if (const char* env = std::getenv("LTGAN_THREADS")) {
    std::size_t n = 0;
    const auto [p, ec] = std::from_chars(env, env + std::strlen(env), n);
    if (ec == std::errc() && n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) on up to worker_threads() threads.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(n, worker_threads());
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Distance from one sample set to each reference set, computed in parallel.
inline std::vector<double> frechet_to_each(const Tensor& samples, std::span<const Tensor* const> references) {
  std::vector<double> out(references.size());
  const GaussianSummary s = fit_gaussian(samples);
  parallel_for(references.size(), [&](std::size_t j) { out[j] = frechet_gaussian(s, fit_gaussian(*references[j])); });
  return out;
}

// ---------------------------------------------------------------------------
// Forgetting curves

/// Maps latent noise to samples; a generator snapshot after some task.
using SampleFn = std::function<Tensor(const Tensor& z)>;

/// Entry (i, j), j <= i: distance between samples of generator i (the
/// learner after task i) and held-out data of task j. Row i has i + 1 entries.
inline std::vector<std::vector<double>> forgetting_curve(std::span<const SampleFn> after_task, std::span<const Tensor> eval_sets,
                                                         std::size_t latent_dim, std::size_t samples, std::uint64_t seed) {
  if (after_task.empty()) throw std::invalid_argument("forgetting_curve: need at least one completed task");
  if (eval_sets.size() < after_task.size()) throw std::invalid_argument("forgetting_curve: missing evaluation sets");
  std::vector<std::vector<double>> curve;
  Rng rng(seed);
  for (std::size_t i = 0; i < after_task.size(); ++i) {
    const Tensor x = after_task[i](rng.normal_matrix(samples, latent_dim));
    std::vector<const Tensor*> refs;
    for (std::size_t j = 0; j <= i; ++j) refs.push_back(&eval_sets[j]);
    curve.push_back(frechet_to_each(x, refs));
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Latent-space walks

/// Maps z(t) = (1 - t) z0 + t z1 at equally spaced t in [0, 1] through `map`.
inline std::vector<Tensor> interpolate_latents(const SampleFn& map, const Tensor& z0, const Tensor& z1, std::size_t steps) {
  if (steps < 2) throw std::invalid_argument("interpolate_latents: steps must be >= 2");
  if (z0.shape() != z1.shape()) throw ShapeError("interpolate_latents: " + shape_string(z0.shape()) + " vs " + shape_string(z1.shape()));
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < steps; ++s) {
    const double t = static_cast<double>(s) / static_cast<double>(steps - 1);
    Tensor z(z0.shape());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = s == 0 ? z0[i] : s + 1 == steps ? z1[i] : (1.0 - t) * z0[i] + t * z1[i];
    out.push_back(map(z));
  }
  return out;
}

struct Traversal {
  std::vector<Tensor> latents;
  std::vector<Tensor> outputs;
};

/// Sweeps coordinate `dim` of a 1 x L latent over [lo, hi]; other coordinates
/// are copied unchanged.
inline Traversal traverse_latent(const SampleFn& map, const Tensor& z, std::size_t dim, double lo, double hi, std::size_t steps) {
  if (z.rank() != 2 || z.rows() != 1) throw ShapeError("traverse_latent: expected a 1 x L latent, got " + shape_string(z.shape()));
  if (dim >= z.cols()) {
    throw std::out_of_range("traverse_latent: dim " + std::to_string(dim) + " outside latent-dim " + std::to_string(z.cols()));
  }
  if (steps < 1) throw std::invalid_argument("traverse_latent: steps must be >= 1");
  Traversal out;
  for (std::size_t s = 0; s < steps; ++s) {
    const double t = steps == 1 ? 0.5 : static_cast<double>(s) / static_cast<double>(steps - 1);
    Tensor zz = z;
    zz[dim] = lo + t * (hi - lo);
    out.outputs.push_back(map(zz));
    out.latents.push_back(std::move(zz));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metric log

struct MetricRecord {
  int task = 0;
  int epoch = 0;
  double nlog = 0;
  double mse = 0;
  double kl = 0;
  double critic_loss = 0;
  double gen_loss = 0;
  double penalty = 0;
  double student_loss = 0;
  std::vector<double> frechet;  // per past task, j = 1..task

  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::string metrics_csv_header(std::size_t task_count) {
  std::string h = "task,epoch,nlog,mse,kl,critic_loss,gen_loss,penalty,student_loss";
  for (std::size_t j = 1; j <= task_count; ++j) h += ",frechet_t" + std::to_string(j);
  return h;
}

/// One CSV line, LF-terminated; frechet columns past the record's task are empty.
inline std::string metrics_csv_row(const MetricRecord& r, std::size_t task_count) {
  std::string s = std::to_string(r.task) + "," + std::to_string(r.epoch);
  for (double v : {r.nlog, r.mse, r.kl, r.critic_loss, r.gen_loss, r.penalty, r.student_loss}) s += "," + format_double(v);
  for (std::size_t j = 0; j < task_count; ++j) {
    s += ",";
    if (j < r.frechet.size()) s += format_double(r.frechet[j]);
  }
  return s + "\n";
}

struct MetricTable {
  std::size_t task_count = 0;
  std::vector<MetricRecord> rows;
};

inline MetricTable parse_metrics_csv(std::istream& in) {
  MetricTable table;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("metrics csv: missing header");
  const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (columns < 9 || line != metrics_csv_header(columns - 9)) throw std::runtime_error("metrics csv: unexpected header '" + line + "'");
  table.task_count = columns - 9;
  auto parse = [](const std::string& f) {
    if (f == "nan") return std::nan("");
    if (f == "inf") return HUGE_VAL;
    if (f == "-inf") return -HUGE_VAL;
    double v = 0;
    const auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (ec != std::errc() || p != f.data() + f.size()) throw std::runtime_error("metrics csv: bad number '" + f + "'");
    return v;
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() != 9 + table.task_count) throw std::runtime_error("metrics csv: row has " + std::to_string(fields.size()) + " fields");
    MetricRecord r;
    r.task = std::stoi(fields[0]);
    r.epoch = std::stoi(fields[1]);
    double* dst[] = {&r.nlog, &r.mse, &r.kl, &r.critic_loss, &r.gen_loss, &r.penalty, &r.student_loss};
    for (std::size_t i = 0; i < 7; ++i) *dst[i] = parse(fields[2 + i]);
    for (std::size_t j = 0; j < table.task_count; ++j) {
      if (!fields[9 + j].empty()) r.frechet.push_back(parse(fields[9 + j]));
    }
    table.rows.push_back(std::move(r));
  }
  return table;
}

/// Forgetting matrix read off a metric log: the last epoch of each task.
inline std::vector<std::vector<double>> forgetting_curve(const MetricTable& table) {
  std::vector<std::vector<double>> curve;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const bool last_of_task = i + 1 == table.rows.size() || table.rows[i + 1].task != table.rows[i].task;
    if (last_of_task) curve.push_back(table.rows[i].frechet);
  }
  return curve;
}

}  // namespace ltgan

#pragma once

// The four command-line actions: run, compare, render and inspect.
// Each returns a process exit code; see ExitCode.

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltgan/checkpoint.hpp"
#include "ltgan/config.hpp"
#include "ltgan/engine.hpp"
#include "ltgan/metrics.hpp"
#include "ltgan/svg.hpp"

namespace ltgan {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_config = 2, exit_numeric = 3, exit_io = 4 };

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Exclusive claim on an output directory, released on destruction.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir) : path_(dir / ".ltgan.lock") {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) throw IoError("output directory '" + dir.string() + "' is locked by another run (" + path_.string() + ")");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;
  ~DirectoryLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }

 private:
  std::filesystem::path path_;
};

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  bool quiet = false;
};

struct RunSummary {
  std::filesystem::path out_dir;
  std::vector<MetricRecord> records;
  std::vector<std::string> files;
  std::string status;
};

namespace detail {

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

/// Image side length for flattened square images, 0 otherwise.
inline std::size_t square_side(std::size_t dim) {
  const auto s = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(dim))));
  return s * s == dim && dim > 2 ? s : 0;
}

struct ImageShape {
  std::size_t rows = 0, cols = 0;
};

inline ImageShape image_shape(const TaskSpec& t) { return {t.train->image_rows, t.train->image_cols}; }

inline ImageShape image_shape(std::size_t dim) {
  const std::size_t s = square_side(dim);
  return {s, s};
}

inline std::string samples_svg(const Tensor& samples, std::span<const Tensor* const> references, std::span<const std::string> names,
                               ImageShape shape, const std::string& title) {
  SvgData d;
  d.title = title;
  if (shape.rows > 0) {
    std::vector<std::size_t> idx(std::min<std::size_t>(samples.rows(), 64));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    d.images = gather_rows(samples, idx);
    d.image_rows = shape.rows;
    d.image_cols = shape.cols;
    d.columns = 8;
    return render_svg(SvgKind::image_grid, d);
  }
  if (samples.cols() != 2) {
    // Wider non-image data: scatter the first two coordinates.
    auto first_two = [](const Tensor& t) {
      Tensor o = Tensor::matrix(t.rows(), 2);
      for (std::size_t i = 0; i < t.rows(); ++i) {
        o(i, 0) = t(i, 0);
        o(i, 1) = t.cols() > 1 ? t(i, 1) : 0.0;
      }
      return o;
    };
    d.point_sets.push_back(first_two(samples));
    for (const Tensor* r : references) d.point_sets.push_back(first_two(*r));
  } else {
    d.point_sets.push_back(samples);
    for (const Tensor* r : references) d.point_sets.push_back(*r);
  }
  d.point_labels.push_back("generated");
  for (const auto& n : names) d.point_labels.push_back(n);
  d.x_label = "x1";
  d.y_label = "x2";
  return render_svg(SvgKind::scatter, d);
}

inline std::string forgetting_svg(const std::vector<std::vector<double>>& curve) {
  SvgData d;
  d.title = "Frechet distance to each task after every task";
  d.x_label = "tasks trained";
  d.y_label = "Frechet distance";
  const std::size_t K = curve.size();
  for (std::size_t j = 0; j < K; ++j) {
    CurveSeries s;
    s.label = "task " + std::to_string(j + 1);
    for (std::size_t i = 0; i < K; ++i) {
      s.x.push_back(static_cast<double>(i + 1));
      s.y.push_back(j < curve[i].size() ? curve[i][j] : std::nan(""));
    }
    d.curves.push_back(std::move(s));
  }
  return render_svg(SvgKind::curve, d);
}

/// Interpolation between the student encodings of two held-out rows, and
/// per-dimension traversals around the first one.
struct LatentExports {
  std::string interpolation_svg;
  std::string traversal_svg;
  std::string traversal_csv;
};

inline LatentExports latent_exports(const Encoder& enc, const Decoder& dec, const Tensor& eval, ImageShape shape) {
  constexpr std::size_t kSteps = 9;
  const SampleFn map = [&dec](const Tensor& z) { return decode(dec, z); };
  const std::size_t last = eval.rows() > 1 ? eval.rows() - 1 : 0;
  const std::vector<std::size_t> pick{0, last};
  const Tensor mu = encode(enc, gather_rows(eval, pick)).first;
  const std::vector<std::size_t> r0{0}, r1{1};
  const Tensor z0 = gather_rows(mu, r0), z1 = gather_rows(mu, r1);

  LatentExports out;
  const auto path = interpolate_latents(map, z0, z1, kSteps);
  SvgData d;
  d.title = "Latent interpolation";
  d.images = stack_rows(path);
  d.image_rows = shape.rows;
  d.image_cols = shape.cols;
  d.x_label = "x1";
  d.y_label = "x2";
  out.interpolation_svg = render_svg(SvgKind::strip, d);

  SvgData t;
  t.title = "Latent traversal per dimension";
  out.traversal_csv = "dim,output_variance\n";
  std::vector<Tensor> rows;
  for (std::size_t dim = 0; dim < enc.latent_dim(); ++dim) {
    const Traversal tr = traverse_latent(map, z0, dim, -3.0, 3.0, kSteps);
    const Tensor outputs = stack_rows(tr.outputs);
    double var = 0;
    for (std::size_t c = 0; c < outputs.cols(); ++c) {
      double m = 0, s = 0;
      for (std::size_t i = 0; i < outputs.rows(); ++i) m += outputs(i, c);
      m /= static_cast<double>(outputs.rows());
      for (std::size_t i = 0; i < outputs.rows(); ++i) s += (outputs(i, c) - m) * (outputs(i, c) - m);
      var += s / static_cast<double>(outputs.rows() - 1);
    }
    out.traversal_csv += std::to_string(dim) + "," + format_double(var / static_cast<double>(outputs.cols())) + "\n";
    if (shape.rows > 0) {
      rows.push_back(outputs);
    } else {
      t.point_sets.push_back(outputs.cols() == 2 ? outputs : Tensor::matrix(0, 2));
      t.point_labels.push_back("z" + std::to_string(dim));
    }
  }
  if (shape.rows > 0) {
    t.images = stack_rows(rows);
    t.image_rows = shape.rows;
    t.image_cols = shape.cols;
    t.columns = kSteps;
    out.traversal_svg = render_svg(SvgKind::image_grid, t);
  } else {
    t.x_label = "x1";
    t.y_label = "x2";
    out.traversal_svg = render_svg(SvgKind::scatter, t);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// run

/// Trains the configured stream, writing metrics.csv, per-task checkpoints,
/// SVGs and manifest.json into the output directory. Numeric aborts keep all
/// outputs written so far and are rethrown after the manifest is written.
inline RunSummary run_experiment(ExperimentConfig cfg, const RunOptions& opt, std::ostream& log) {
  namespace fs = std::filesystem;
  if (opt.seed) {
    cfg.seed = *opt.seed;
    cfg.document["seed"] = *opt.seed;
  }
  std::vector<TaskSpec> tasks = build_tasks(cfg);
  cfg.train.validate();

  RunSummary summary;
  summary.out_dir = opt.out ? *opt.out : cfg.output_dir;
  const fs::path out = summary.out_dir;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory '" + out.string() + "': " + ec.message());
  DirectoryLock lock(out);

  const std::string started = detail::utc_now();
  auto& files = summary.files;
  auto emit = [&](const std::string& name, const std::string& text) {
    detail::write_text(out / name, text);
    if (std::find(files.begin(), files.end(), name) == files.end()) files.push_back(name);
  };
  auto write_manifest = [&](const std::string& status) {
    nlohmann::json m;
    m["config_hash"] = config_hash(cfg);
    m["config"] = cfg.source.string();
    m["code_version"] = kVersion;
    m["seed"] = cfg.seed;
    m["started"] = started;
    m["finished"] = detail::utc_now();
    m["status"] = status;
    m["tasks"] = nlohmann::json::array();
    for (const auto& t : tasks) m["tasks"].push_back(t.name);
    std::vector<std::string> listed = files;
    listed.push_back("manifest.json");
    m["files"] = listed;
    detail::write_text(out / "manifest.json", m.dump(2) + "\n");
    summary.status = status;
  };

  const std::size_t K = tasks.size();
  std::ofstream csv(out / "metrics.csv", std::ios::binary | std::ios::trunc);
  if (!csv) throw IoError("cannot open '" + (out / "metrics.csv").string() + "' for writing");
  files.push_back("metrics.csv");
  csv << metrics_csv_header(K) << "\n";
  csv.flush();

  Engine engine(cfg.model, cfg.train, cfg.seed);
  try {
    for (std::size_t k = 0; k < K; ++k) {
      if (k > 0) engine.advance_task();
      const auto previous = std::span<const TaskSpec>(tasks).first(k);
      const std::vector<MetricRecord> recs = engine.train_task(tasks[k], previous);
      for (const auto& r : recs) {
        csv << metrics_csv_row(r, K);
        summary.records.push_back(r);
        if (!opt.quiet) {
          log << "task " << r.task << "/" << K << " (" << tasks[k].name << ", " << engine.roles().label() << ") epoch " << r.epoch << "/"
              << tasks[k].epochs << ": nlog " << format_double(r.nlog) << ", gen " << format_double(r.gen_loss) << ", frechet";
          for (double f : r.frechet) log << " " << format_double(f);
          log << "\n";
        }
      }
      csv.flush();
      if (!csv) throw IoError("write to metrics.csv failed");

      const std::string ckpt = "checkpoint_task" + std::to_string(k + 1) + ".ltg";
      engine.checkpoint((out / ckpt).string());
      files.push_back(ckpt);

      Rng render_rng(detail::mix_seed(cfg.seed, 0x737667ULL + k));
      const Tensor samples = generate(engine.learner(), render_rng.normal_matrix(cfg.train.eval_samples, cfg.model.latent_dim));
      std::vector<const Tensor*> refs;
      std::vector<std::string> names;
      for (std::size_t j = 0; j <= k; ++j) {
        refs.push_back(&tasks[j].eval->x);
        names.push_back(tasks[j].name);
      }
      emit("samples_task" + std::to_string(k + 1) + ".svg",
           detail::samples_svg(samples, refs, names, detail::image_shape(tasks[k]),
                               "Samples after task " + std::to_string(k + 1) + " (" + tasks[k].name + ")"));
    }
  } catch (const NumericError& e) {
    csv.close();
    log << "numeric abort: " << e.what() << "\n";
    write_manifest("numeric-abort");
    throw;
  }
  csv.close();

  if (!summary.records.empty()) {
    std::vector<std::vector<double>> curve;
    for (std::size_t i = 0; i < summary.records.size(); ++i) {
      if (i + 1 == summary.records.size() || summary.records[i + 1].task != summary.records[i].task) curve.push_back(summary.records[i].frechet);
    }
    emit("forgetting.svg", detail::forgetting_svg(curve));
  }
  const auto ex = detail::latent_exports(engine.state().encoder, engine.state().decoder, tasks.front().eval->x, detail::image_shape(tasks.front()));
  emit("interpolation.svg", ex.interpolation_svg);
  emit("traversal.svg", ex.traversal_svg);
  emit("traversal.csv", ex.traversal_csv);
  write_manifest("ok");
  return summary;
}

/// Maps failures to the exit-code contract and prints one diagnostic.
template <class Fn>
int guarded(Fn&& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return exit_config;
  } catch (const NumericError& e) {
    err << "error: numeric abort: " << e.what() << "\n";
    return exit_numeric;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return exit_io;
  } catch (const IdxError& e) {
    err << "error: " << e.what() << "\n";
    return exit_io;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return exit_io;
  } catch (const std::ios_base::failure& e) {
    err << "error: " << e.what() << "\n";
    return exit_io;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return exit_io;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_usage;
  }
}

inline int run_command(const std::filesystem::path& config, const RunOptions& opt, std::ostream& log, std::ostream& err) {
  return guarded(
      [&] {
        if (!std::filesystem::exists(config)) throw IoError("config file not found: " + config.string());
        ExperimentConfig cfg = load_config(config);
        const RunSummary s = run_experiment(std::move(cfg), opt, log);
        if (!opt.quiet) log << "wrote " << s.files.size() + 1 << " files to " << s.out_dir.string() << "\n";
        return static_cast<int>(exit_ok);
      },
      err);
}

// ---------------------------------------------------------------------------
// compare

struct RunRecord {
  std::filesystem::path dir;
  std::vector<std::string> task_names;
  MetricTable table;
};

inline RunRecord load_run(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("run directory not found: " + dir.string());
  RunRecord r{dir, {}, {}};
  const fs::path csv = dir / "metrics.csv";
  std::ifstream in(csv);
  if (!in) throw IoError("missing metrics file: " + csv.string());
  try {
    r.table = parse_metrics_csv(in);
  } catch (const std::runtime_error& e) {
    throw IoError(csv.string() + ": " + e.what());
  }
  std::ifstream mf(dir / "manifest.json");
  if (mf) {
    try {
      const auto m = nlohmann::json::parse(mf);
      if (m.contains("tasks")) r.task_names = m.at("tasks").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError((dir / "manifest.json").string() + ": " + e.what());
    }
  }
  return r;
}

struct CompareRow {
  std::size_t other = 0;  // index into the run list, >= 1
  int task = 0;
  std::string metric;
  double subject = 0;
  double reference = 0;
  double delta = 0;  // subject - reference
};

/// Per-task deltas of the final nlog, mse and Frechet values: the first run
/// is the subject, every further run a reference.
inline std::vector<CompareRow> compare_runs(const std::vector<RunRecord>& runs) {
  if (runs.size() < 2) throw std::invalid_argument("compare needs at least two run directories");
  auto finals = [](const MetricTable& t) {
    std::map<int, MetricRecord> last;
    for (const auto& r : t.rows) last[r.task] = r;
    return last;
  };
  const auto base = finals(runs[0].table);
  std::vector<CompareRow> rows;
  for (std::size_t o = 1; o < runs.size(); ++o) {
    const bool names_differ = !runs[0].task_names.empty() && !runs[o].task_names.empty() && runs[0].task_names != runs[o].task_names;
    if (runs[o].table.task_count != runs[0].table.task_count || names_differ) {
      throw ConfigError({"incompatible task lists: " + runs[0].dir.string() + " vs " + runs[o].dir.string()});
    }
    const auto other = finals(runs[o].table);
    for (const auto& [task, a] : base) {
      const auto it = other.find(task);
      if (it == other.end()) throw ConfigError({"incompatible task lists: task " + std::to_string(task) + " missing in " + runs[o].dir.string()});
      const MetricRecord& b = it->second;
      auto push = [&](const std::string& name, double x, double y) { rows.push_back({o, task, name, x, y, x - y}); };
      push("nlog", a.nlog, b.nlog);
      push("mse", a.mse, b.mse);
      for (std::size_t j = 0; j < std::min(a.frechet.size(), b.frechet.size()); ++j) push("frechet_t" + std::to_string(j + 1), a.frechet[j], b.frechet[j]);
    }
  }
  return rows;
}

inline std::string compare_csv(const std::vector<RunRecord>& runs, const std::vector<CompareRow>& rows) {
  std::string s = "subject,reference,task,metric,subject_value,reference_value,delta\n";
  for (const auto& r : rows) {
    s += runs[0].dir.string() + "," + runs[r.other].dir.string() + "," + std::to_string(r.task) + "," + r.metric + "," + format_double(r.subject) + "," +
         format_double(r.reference) + "," + format_double(r.delta) + "\n";
  }
  return s;
}

inline std::string compare_text(const std::vector<RunRecord>& runs, const std::vector<CompareRow>& rows) {
  std::ostringstream os;
  os << "subject: " << runs[0].dir.string() << "\n";
  std::size_t current = 0;
  for (const auto& r : rows) {
    if (r.other != current) {
      current = r.other;
      os << "reference: " << runs[r.other].dir.string() << "\n";
      os << std::left << std::setw(6) << "task" << std::setw(14) << "metric" << std::right << std::setw(14) << "subject" << std::setw(14) << "reference"
         << std::setw(14) << "delta" << "\n";
    }
    os << std::left << std::setw(6) << r.task << std::setw(14) << r.metric << std::right << std::setprecision(6) << std::setw(14) << r.subject
       << std::setw(14) << r.reference << std::setw(14) << r.delta << "\n";
  }
  return os.str();
}

inline int compare_command(const std::vector<std::filesystem::path>& dirs, const std::optional<std::filesystem::path>& out, std::ostream& log,
                           std::ostream& err) {
  return guarded(
      [&] {
        if (dirs.size() < 2) throw std::invalid_argument("compare needs at least two run directories");
        std::vector<RunRecord> runs;
        for (const auto& d : dirs) runs.push_back(load_run(d));
        const auto rows = compare_runs(runs);
        log << compare_text(runs, rows);
        if (out) {
          std::filesystem::create_directories(*out);
          detail::write_text(*out / "compare.csv", compare_csv(runs, rows));
        }
        return static_cast<int>(exit_ok);
      },
      err);
}

// ---------------------------------------------------------------------------
// render / inspect

/// Re-renders the SVG set of an existing run from its metrics.csv and last checkpoint.
inline int render_command(const std::filesystem::path& run_dir, const std::optional<std::filesystem::path>& out, std::optional<std::uint64_t> seed,
                          std::ostream& log, std::ostream& err) {
  namespace fs = std::filesystem;
  return guarded(
      [&] {
        const RunRecord run = load_run(run_dir);
        const fs::path dst = out ? *out : run_dir;
        fs::create_directories(dst);
        std::vector<std::string> written;
        if (!run.table.rows.empty()) {
          detail::write_text(dst / "forgetting.svg", detail::forgetting_svg(forgetting_curve(run.table)));
          written.push_back("forgetting.svg");
        }
        fs::path last;
        for (std::size_t k = 1;; ++k) {
          const fs::path p = run_dir / ("checkpoint_task" + std::to_string(k) + ".ltg");
          if (!fs::exists(p)) break;
          last = p;
        }
        if (!last.empty()) {
          const EngineState s = Engine::restore(last.string());
          const std::size_t dim = s.twin_a.data_dim();
          const auto shape = detail::image_shape(dim);
          Rng rng(seed.value_or(s.seed));
          // Without the roles' training losses at hand, draw from the twin that was trainable last.
          const Generator& g = s.roles.phase == Phase::distill ? s.twin(other(s.roles.teacher)) : s.twin_a;
          const Tensor samples = generate(g, rng.normal_matrix(500, g.latent_dim()));
          detail::write_text(dst / "samples_final.svg", detail::samples_svg(samples, {}, {}, shape, "Samples from " + last.filename().string()));
          written.push_back("samples_final.svg");
          const Tensor seeds = generate(g, rng.normal_matrix(2, g.latent_dim()));
          const auto ex = detail::latent_exports(s.encoder, s.decoder, seeds, shape);
          detail::write_text(dst / "interpolation.svg", ex.interpolation_svg);
          detail::write_text(dst / "traversal.svg", ex.traversal_svg);
          written.push_back("interpolation.svg");
          written.push_back("traversal.svg");
        }
        if (written.empty()) throw IoError("nothing to render in " + run_dir.string());
        for (const auto& w : written) log << (dst / w).string() << "\n";
        return static_cast<int>(exit_ok);
      },
      err);
}

inline std::string describe_checkpoint(std::span<const unsigned char> bytes) {
  const CheckpointFile file = decode_checkpoint(bytes);
  std::ostringstream os;
  os << "format LTG1 v" << kCheckpointVersion << ", " << bytes.size() << " bytes, " << file.blocks.size() << " blocks\n";
  for (const auto& b : file.blocks) {
    os << b.name << " [" << (b.kind == BlockKind::network ? "network" : "tensor-group");
    if (b.kind == BlockKind::network) os << ", hidden " << activation_name(b.hidden) << ", output " << activation_name(b.output);
    os << "]\n";
    for (const auto& t : b.tensors) os << "  " << t.name << " " << shape_string(t.value.shape()) << "\n";
  }
  if (!file.trailer.empty()) {
    const EngineState s = Engine::restore_bytes(bytes);
    os << "engine: task " << s.roles.task << ", phase " << (s.roles.phase == Phase::joint ? "joint" : "distill") << ", teacher "
       << (s.roles.phase == Phase::joint ? "-" : slot_name(s.roles.teacher)) << ", steps " << s.progress.steps_done << ", seed " << s.seed << "\n";
    for (auto [name, opt] : {std::pair{"twin_a", &s.opt_a}, std::pair{"twin_b", &s.opt_b}, std::pair{"critic", &s.opt_critic},
                             std::pair{"encoder", &s.opt_encoder}, std::pair{"decoder", &s.opt_decoder}}) {
      os << "  adam " << name << ": step " << opt->step() << ", lr " << format_double(opt->config().lr) << "\n";
    }
  }
  return os.str();
}

inline int inspect_command(const std::filesystem::path& checkpoint, std::ostream& log, std::ostream& err) {
  return guarded(
      [&] {
        if (!std::filesystem::exists(checkpoint)) throw IoError("checkpoint not found: " + checkpoint.string());
        log << describe_checkpoint(read_bytes(checkpoint.string()));
        return static_cast<int>(exit_ok);
      },
      err);
}

}  // namespace ltgan

#pragma once

// Experiment configuration: a JSON document describing the model, training
// settings and task stream. Parsing collects every field-level problem before
// reporting, and nothing is computed until the whole document validates.
// docs/config.md lists every key.

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltgan/data.hpp"
#include "ltgan/engine.hpp"

namespace ltgan {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems) : std::runtime_error(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& p) {
    std::string s = "invalid config:";
    for (const auto& line : p) s += "\n  " + line;
    return s;
  }
  std::vector<std::string> problems_;
};

struct GaussianSource {
  std::vector<std::vector<double>> means;
  std::vector<Tensor> covs;
  std::vector<double> weights;
};

struct IdxSource {
  std::filesystem::path images;
  std::filesystem::path labels;
  std::vector<int> classes;  // empty: all
  std::size_t downsample_rows = 0, downsample_cols = 0;
  ImageTransform transform = ImageTransform::none;
  std::size_t pool_index = 0, pool_count = 1;
  std::size_t limit = 0;  // 0: no cap on rows after filtering
};

struct TaskConfig {
  std::string name;
  std::string kind;  // gaussian_mixture | ring | checkerboard | idx
  GaussianSource gaussian;
  Ring ring;
  Checkerboard checkerboard;
  IdxSource idx;
  std::size_t train_size = 2000;  // synthetic sources
  std::size_t eval_size = 500;
  double train_fraction = 0.8;  // idx sources
  int epochs = 1;
  std::size_t batch_size = 64;
  std::size_t steps_per_epoch = 0;
  std::optional<FuzzyBoundary> fuzzy;
};

struct ExperimentConfig {
  std::filesystem::path source;  // config file, empty when parsed from a string
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> data_seed;
  std::filesystem::path output_dir = "out";
  ModelConfig model;
  std::string output_activation = "auto";
  TrainConfig train;
  std::vector<TaskConfig> tasks;
  nlohmann::json document;

  std::uint64_t effective_data_seed() const { return data_seed.value_or(seed); }
};

namespace detail {

/// Walks a JSON object and records problems against dotted field paths.
class FieldReader {
 public:
  FieldReader(const nlohmann::json& j, std::string path, std::vector<std::string>& problems)
      : j_(j), path_(std::move(path)), problems_(problems) {
    if (!j_.is_object()) fail("", "must be an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  void fail(const std::string& key, const std::string& msg) const {
    const std::string where = key.empty() ? (path_.empty() ? "<root>" : path_) : field(key);
    problems_.push_back(where + ": " + msg);
  }
  bool has(const std::string& key) const { return j_.is_object() && j_.contains(key); }
  const nlohmann::json& at(const std::string& key) const { return j_.at(key); }

  void allow_only(std::initializer_list<const char*> keys) const {
    if (!j_.is_object()) return;
    for (const auto& [k, v] : j_.items()) {
      if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; })) fail(k, "unknown key");
    }
  }

  template <class T>
  void read(const std::string& key, T& out) const {
    if (!has(key)) return;
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!j_.at(key).is_number_integer()) {
        fail(key, "expected " + type_name<T>() + ", got " + j_.at(key).dump());
        return;
      }
    }
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      fail(key, "expected " + type_name<T>() + ", got " + j_.at(key).dump());
    }
  }

  void read_size(const std::string& key, std::size_t& out) const {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      fail(key, "expected a non-negative integer, got " + v.dump());
      return;
    }
    out = v.get<std::size_t>();
  }

  void read_sizes(const std::string& key, std::vector<std::size_t>& out) const {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    bool ok = v.is_array();
    if (ok) {
      for (const auto& e : v) ok = ok && e.is_number_integer() && e.get<long long>() > 0;
    }
    if (!ok) {
      fail(key, "expected an array of positive integers, got " + v.dump());
      return;
    }
    out = v.get<std::vector<std::size_t>>();
  }

 private:
  template <class T>
  static std::string type_name() {
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_same_v<T, std::string>) return "a string";
    else if constexpr (std::is_integral_v<T>) return "an integer";
    else if constexpr (std::is_floating_point_v<T>) return "a number";
    else return "an array";
  }

  const nlohmann::json& j_;
  std::string path_;
  std::vector<std::string>& problems_;
};

inline void read_adam(const FieldReader& parent, const std::string& key, AdamConfig& out, std::vector<std::string>& problems) {
  if (!parent.has(key)) return;
  FieldReader r(parent.at(key), parent.field(key), problems);
  r.allow_only({"lr", "beta1", "beta2", "eps"});
  r.read("lr", out.lr);
  r.read("beta1", out.beta1);
  r.read("beta2", out.beta2);
  r.read("eps", out.eps);
  if (!(out.lr > 0)) r.fail("lr", "must be > 0");
  if (!(out.beta1 >= 0 && out.beta1 < 1)) r.fail("beta1", "must lie in [0, 1)");
  if (!(out.beta2 >= 0 && out.beta2 < 1)) r.fail("beta2", "must lie in [0, 1)");
  if (!(out.eps > 0)) r.fail("eps", "must be > 0");
}

inline void read_source(const FieldReader& t, TaskConfig& task, const std::filesystem::path& base, std::vector<std::string>& problems) {
  if (!t.has("source")) {
    t.fail("source", "missing");
    return;
  }
  FieldReader s(t.at("source"), t.field("source"), problems);
  s.read("kind", task.kind);
  if (task.kind == "gaussian_mixture") {
    s.allow_only({"kind", "means", "covs", "variances", "weights"});
    s.read("means", task.gaussian.means);
    const std::size_t k = task.gaussian.means.size();
    if (k == 0) {
      s.fail("means", "need at least one component");
      return;
    }
    const std::size_t d = task.gaussian.means.front().size();
    for (const auto& m : task.gaussian.means) {
      if (m.size() != d || d == 0) s.fail("means", "all means need the same nonzero dimension");
    }
    if (s.has("variances")) {
      std::vector<double> var;
      s.read("variances", var);
      if (var.size() != k) s.fail("variances", "need one variance per component");
      for (double v : var) task.gaussian.covs.push_back(isotropic_cov(d, v));
    } else if (s.has("covs")) {
      std::vector<std::vector<std::vector<double>>> covs;
      s.read("covs", covs);
      if (covs.size() != k) s.fail("covs", "need one covariance per component");
      for (const auto& c : covs) {
        Tensor m = Tensor::matrix(d, d);
        if (c.size() != d) {
          s.fail("covs", "each covariance must be " + std::to_string(d) + "x" + std::to_string(d));
          continue;
        }
        for (std::size_t i = 0; i < d; ++i) {
          if (c[i].size() != d) {
            s.fail("covs", "each covariance must be " + std::to_string(d) + "x" + std::to_string(d));
            break;
          }
          for (std::size_t j = 0; j < d; ++j) m(i, j) = c[i][j];
        }
        task.gaussian.covs.push_back(std::move(m));
      }
    } else {
      s.fail("variances", "missing (give variances or covs)");
    }
    task.gaussian.weights.assign(k, 1.0 / static_cast<double>(k));
    s.read("weights", task.gaussian.weights);
    if (task.gaussian.weights.size() != k) s.fail("weights", "need one weight per component");
  } else if (task.kind == "ring") {
    s.allow_only({"kind", "radius", "noise"});
    s.read("radius", task.ring.radius);
    s.read("noise", task.ring.noise);
  } else if (task.kind == "checkerboard") {
    s.allow_only({"kind", "cells", "extent"});
    s.read("cells", task.checkerboard.cells);
    s.read("extent", task.checkerboard.extent);
  } else if (task.kind == "idx") {
    s.allow_only({"kind", "images", "labels", "classes", "downsample", "transform", "pool", "limit"});
    std::string images, labels;
    s.read("images", images);
    s.read("labels", labels);
    for (auto [key, rel, dst] : {std::tuple{"images", &images, &task.idx.images}, std::tuple{"labels", &labels, &task.idx.labels}}) {
      if (rel->empty()) {
        s.fail(key, "missing");
        continue;
      }
      *dst = base / *rel;
      if (!std::filesystem::exists(*dst)) s.fail(key, "file not found: " + dst->string());
    }
    s.read("classes", task.idx.classes);
    for (int c : task.idx.classes) {
      if (c < 0 || c > 9) s.fail("classes", "class ids must lie in 0..9");
    }
    if (s.has("downsample")) {
      std::vector<std::size_t> ds;
      s.read_sizes("downsample", ds);
      if (ds.size() != 2) {
        s.fail("downsample", "expected [rows, cols]");
      } else {
        task.idx.downsample_rows = ds[0];
        task.idx.downsample_cols = ds[1];
      }
    }
    if (s.has("transform")) {
      std::string tr;
      s.read("transform", tr);
      try {
        task.idx.transform = parse_transform(tr);
      } catch (const std::exception& e) {
        s.fail("transform", e.what());
      }
    }
    if (s.has("pool")) {
      FieldReader p(s.at("pool"), s.field("pool"), problems);
      p.allow_only({"index", "count"});
      p.read_size("index", task.idx.pool_index);
      p.read_size("count", task.idx.pool_count);
      if (task.idx.pool_count < 1) p.fail("count", "must be >= 1");
      if (task.idx.pool_index >= task.idx.pool_count) p.fail("index", "must be below count");
    }
    s.read_size("limit", task.idx.limit);
  } else {
    s.fail("kind", "expected one of gaussian_mixture, ring, checkerboard, idx; got '" + task.kind + "'");
  }
}

}  // namespace detail

/// Parses and validates a whole document. Relative paths resolve against `base`.
inline ExperimentConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base = ".") {
  std::vector<std::string> problems;
  ExperimentConfig cfg;
  cfg.document = doc;
  detail::FieldReader root(doc, "", problems);
  if (!problems.empty()) throw ConfigError(problems);
  root.allow_only({"seed", "data_seed", "output_dir", "model", "training", "ablation", "defaults", "tasks"});

  root.read("seed", cfg.seed);
  if (root.has("data_seed")) {
    std::uint64_t ds = 0;
    root.read("data_seed", ds);
    cfg.data_seed = ds;
  }
  if (root.has("output_dir")) {
    std::string out;
    root.read("output_dir", out);
    cfg.output_dir = base / out;
  } else {
    cfg.output_dir = base / "out";
  }

  if (root.has("model")) {
    detail::FieldReader m(root.at("model"), "model", problems);
    m.allow_only({"latent_dim", "generator_hidden", "critic_hidden", "student_latent_dim", "student_hidden", "hidden_activation",
                  "output_activation"});
    m.read_size("latent_dim", cfg.model.latent_dim);
    m.read_sizes("generator_hidden", cfg.model.generator_hidden);
    m.read_sizes("critic_hidden", cfg.model.critic_hidden);
    m.read_size("student_latent_dim", cfg.model.student_latent_dim);
    m.read_sizes("student_hidden", cfg.model.student_hidden);
    if (cfg.model.latent_dim < 1) m.fail("latent_dim", "must be >= 1");
    if (cfg.model.student_latent_dim < 1) m.fail("student_latent_dim", "must be >= 1");
    if (m.has("hidden_activation")) {
      std::string a;
      m.read("hidden_activation", a);
      try {
        cfg.model.hidden = parse_activation(a);
      } catch (const std::exception& e) {
        m.fail("hidden_activation", e.what());
      }
    }
    m.read("output_activation", cfg.output_activation);
    if (cfg.output_activation != "auto") {
      try {
        cfg.model.data_output = parse_activation(cfg.output_activation);
      } catch (const std::exception& e) {
        m.fail("output_activation", e.what());
      }
    }
  }

  if (root.has("training")) {
    detail::FieldReader t(root.at("training"), "training", problems);
    t.allow_only({"lambda", "beta", "mix_ratio", "critic_steps", "eval_samples", "frechet_features", "shared_joint_noise", "gan_optimizer",
                  "student_optimizer"});
    auto& tr = cfg.train;
    t.read("lambda", tr.lambda);
    t.read("beta", tr.beta);
    t.read("mix_ratio", tr.mix_ratio);
    t.read("critic_steps", tr.critic_steps);
    t.read_size("eval_samples", tr.eval_samples);
    t.read("shared_joint_noise", tr.shared_joint_noise);
    if (!(tr.lambda >= 0)) t.fail("lambda", "must be >= 0, got " + std::to_string(tr.lambda));
    if (!(tr.beta > 0)) t.fail("beta", "must be > 0, got " + std::to_string(tr.beta));
    if (!(tr.mix_ratio >= 0 && tr.mix_ratio <= 1)) t.fail("mix_ratio", "must lie in [0, 1], got " + std::to_string(tr.mix_ratio));
    if (tr.critic_steps < 1) t.fail("critic_steps", "must be >= 1");
    if (tr.eval_samples < 2) t.fail("eval_samples", "must be >= 2");
    if (t.has("frechet_features")) {
      std::string f;
      t.read("frechet_features", f);
      if (f == "raw") tr.frechet_features = FrechetFeatures::raw;
      else if (f == "encoder") tr.frechet_features = FrechetFeatures::encoder;
      else t.fail("frechet_features", "expected 'raw' or 'encoder', got '" + f + "'");
    }
    detail::read_adam(t, "gan_optimizer", tr.gan_adam, problems);
    detail::read_adam(t, "student_optimizer", tr.student_adam, problems);
  }

  if (root.has("ablation")) {
    detail::FieldReader a(root.at("ablation"), "ablation", problems);
    a.allow_only({"no_distill", "joint_every_task", "critic_reset"});
    a.read("no_distill", cfg.train.no_distill);
    a.read("joint_every_task", cfg.train.joint_every_task);
    a.read("critic_reset", cfg.train.critic_reset);
  }

  TaskConfig defaults;
  auto read_task_settings = [&](const detail::FieldReader& r, TaskConfig& t) {
    r.read("epochs", t.epochs);
    r.read_size("batch_size", t.batch_size);
    r.read_size("steps_per_epoch", t.steps_per_epoch);
    r.read_size("train_size", t.train_size);
    r.read_size("eval_size", t.eval_size);
    r.read("train_fraction", t.train_fraction);
  };
  if (root.has("defaults")) {
    detail::FieldReader d(root.at("defaults"), "defaults", problems);
    d.allow_only({"epochs", "batch_size", "steps_per_epoch", "train_size", "eval_size", "train_fraction"});
    read_task_settings(d, defaults);
  }

  if (!root.has("tasks") || !doc.at("tasks").is_array() || doc.at("tasks").empty()) {
    root.fail("tasks", "need a non-empty array of tasks");
  } else {
    const auto& tasks = doc.at("tasks");
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      detail::FieldReader t(tasks[i], "tasks[" + std::to_string(i) + "]", problems);
      if (!tasks[i].is_object()) continue;
      t.allow_only({"name", "source", "epochs", "batch_size", "steps_per_epoch", "train_size", "eval_size", "train_fraction", "fuzzy"});
      TaskConfig task = defaults;
      task.name = "t" + std::to_string(i + 1);
      t.read("name", task.name);
      read_task_settings(t, task);
      if (task.epochs < 1) t.fail("epochs", "must be >= 1, got " + std::to_string(task.epochs));
      if (task.batch_size < 2) t.fail("batch_size", "must be >= 2, got " + std::to_string(task.batch_size));
      if (task.train_size < 1) t.fail("train_size", "must be >= 1");
      if (task.eval_size < 2) t.fail("eval_size", "must be >= 2");
      if (!(task.train_fraction > 0 && task.train_fraction < 1)) t.fail("train_fraction", "must lie in (0, 1)");
      detail::read_source(t, task, base, problems);
      if (t.has("fuzzy")) {
        detail::FieldReader f(t.at("fuzzy"), t.field("fuzzy"), problems);
        f.allow_only({"class", "with"});
        FuzzyBoundary fb;
        f.read("class", fb.swapped_class);
        f.read("with", fb.partner);
        if (fb.swapped_class < 0 || fb.swapped_class > 9) f.fail("class", "must lie in 0..9");
        if (fb.partner.empty()) f.fail("with", "missing partner task name");
        if (task.kind != "idx") f.fail("", "fuzzy boundaries need labelled (idx) tasks");
        task.fuzzy = fb;
      }
      cfg.tasks.push_back(std::move(task));
    }
    std::map<std::string, std::size_t> names;
    for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
      if (!names.emplace(cfg.tasks[i].name, i).second) problems.push_back("tasks[" + std::to_string(i) + "].name: duplicate '" + cfg.tasks[i].name + "'");
    }
    for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
      const auto& f = cfg.tasks[i].fuzzy;
      if (!f) continue;
      const auto it = names.find(f->partner);
      const std::string where = "tasks[" + std::to_string(i) + "].fuzzy.with";
      if (it == names.end()) problems.push_back(where + ": no task named '" + f->partner + "'");
      else if (it->second == i) problems.push_back(where + ": a task cannot swap with itself");
      else if (cfg.tasks[it->second].kind != "idx") problems.push_back(where + ": partner '" + f->partner + "' is not an idx task");
    }
  }

  if (!problems.empty()) throw ConfigError(problems);
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open config '" + path.string() + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError({path.string() + ": " + e.what()});
  }
  ExperimentConfig cfg = parse_config(doc, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
  cfg.source = path;
  return cfg;
}

// ---------------------------------------------------------------------------
// Materializing the task stream

namespace detail {

inline Dataset with_transform(Dataset d, const IdxSource& src, std::uint64_t data_seed) {
  if (src.downsample_rows > 0) d = downsample(d, src.downsample_rows, src.downsample_cols);
  if (src.pool_count > 1) {
    std::vector<std::size_t> order(d.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(data_seed, 0x706f6f6cULL));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    std::vector<std::size_t> keep;
    for (std::size_t i = src.pool_index; i < order.size(); i += src.pool_count) keep.push_back(order[i]);
    std::sort(keep.begin(), keep.end());
    d = subset(d, keep, d.name);
  }
  if (!src.classes.empty()) d = filter_classes(d, src.classes);
  if (src.limit > 0 && d.size() > src.limit) {
    std::vector<std::size_t> first(src.limit);
    std::iota(first.begin(), first.end(), std::size_t{0});
    d = subset(d, first, d.name);
  }
  return transform_images(d, src.transform);
}

}  // namespace detail

/// Builds every task's train/eval split, applies fuzzy boundaries and fixes
/// the model's data width and output activation.
inline std::vector<TaskSpec> build_tasks(ExperimentConfig& cfg) {
  const std::uint64_t data_seed = cfg.effective_data_seed();
  std::map<std::pair<std::string, std::string>, Dataset> loaded;
  std::vector<std::pair<Dataset, Dataset>> splits;
  for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
    const TaskConfig& t = cfg.tasks[i];
    const std::uint64_t task_seed = detail::mix_seed(data_seed, i + 1);
    if (t.kind == "idx") {
      const auto key = std::pair{t.idx.images.string(), t.idx.labels.string()};
      auto it = loaded.find(key);
      if (it == loaded.end()) it = loaded.emplace(key, load_idx(key.first, key.second)).first;
      Dataset d = detail::with_transform(it->second, t.idx, data_seed);
      if (d.size() < 4) throw ConfigError({"tasks[" + std::to_string(i) + "].source: only " + std::to_string(d.size()) + " images after filtering"});
      d.name = t.name;
      auto [train, eval] = train_test_split(d, t.train_fraction, task_seed);
      train.name = t.name + "/train";
      eval.name = t.name + "/eval";
      splits.emplace_back(std::move(train), std::move(eval));
    } else {
      SyntheticKind kind = Ring{};
      if (t.kind == "gaussian_mixture") kind = GaussianMixture{t.gaussian.means, t.gaussian.covs, t.gaussian.weights};
      else if (t.kind == "ring") kind = t.ring;
      else kind = t.checkerboard;
      std::optional<SyntheticTask> task;
      try {
        task.emplace(std::move(kind));
      } catch (const std::exception& e) {
        throw ConfigError({"tasks[" + std::to_string(i) + "].source: " + std::string(e.what())});
      }
      Rng rng(task_seed);
      Dataset train{t.name + "/train", task->sample(t.train_size, rng), {}, 0, 0};
      Dataset eval{t.name + "/eval", task->sample(t.eval_size, rng), {}, 0, 0};
      splits.emplace_back(std::move(train), std::move(eval));
    }
  }

  for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
    const auto& f = cfg.tasks[i].fuzzy;
    if (!f) continue;
    std::size_t j = 0;
    while (cfg.tasks[j].name != f->partner) ++j;
    try {
      FuzzyPair train = make_fuzzy(splits[i].first, splits[j].first, f->swapped_class);
      FuzzyPair eval = make_fuzzy(splits[i].second, splits[j].second, f->swapped_class);
      splits[i] = {std::move(train.a), std::move(eval.a)};
      splits[j] = {std::move(train.b), std::move(eval.b)};
    } catch (const std::exception& e) {
      throw ConfigError({"tasks[" + std::to_string(i) + "].fuzzy: " + std::string(e.what())});
    }
  }

  const std::size_t dim = splits.front().first.dim();
  for (std::size_t i = 0; i < splits.size(); ++i) {
    if (splits[i].first.dim() != dim) {
      throw ConfigError({"tasks[" + std::to_string(i) + "].source: data width " + std::to_string(splits[i].first.dim()) + " differs from task 1's " +
                         std::to_string(dim)});
    }
  }
  cfg.model.data_dim = dim;
  if (cfg.output_activation == "auto") cfg.model.data_output = splits.front().first.is_image() ? Activation::sigmoid : Activation::identity;

  std::vector<TaskSpec> specs;
  for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
    const TaskConfig& t = cfg.tasks[i];
    TaskSpec s;
    s.name = t.name;
    s.train = std::make_shared<const Dataset>(std::move(splits[i].first));
    s.eval = std::make_shared<const Dataset>(std::move(splits[i].second));
    s.epochs = t.epochs;
    s.batch_size = t.batch_size;
    s.steps_per_epoch = t.steps_per_epoch;
    s.fuzzy = t.fuzzy;
    s.validate();
    specs.push_back(std::move(s));
  }
  return specs;
}

/// FNV-1a over the canonical (sorted-key, compact) JSON text.
inline std::string config_hash(const ExperimentConfig& cfg) {
  const std::string text = cfg.document.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

}  // namespace ltgan

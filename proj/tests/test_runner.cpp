#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ltgan/runner.hpp"
#include "xml_check.hpp"

using namespace ltgan;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = LTGAN_SOURCE_DIR;

class Scratch {
 public:
  explicit Scratch(const std::string& name) : dir_(fs::temp_directory_path() / ("ltgan_runner_" + name)) {
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  ~Scratch() {
    std::error_code ec;
    fs::permissions(dir_ / "ro", fs::perms::owner_all, ec);
    fs::remove_all(dir_, ec);
  }
  const fs::path& dir() const { return dir_; }
  fs::path write(const std::string& file, const json& doc) const {
    std::ofstream(dir_ / file) << doc.dump(2) << "\n";
    return dir_ / file;
  }

 private:
  fs::path dir_;
};

json blob_doc() {
  return json::parse(R"({
    "seed": 7,
    "defaults": { "epochs": 1, "batch_size": 16, "steps_per_epoch": 8, "train_size": 128, "eval_size": 64 },
    "model": { "latent_dim": 4, "generator_hidden": [16], "critic_hidden": [16], "student_hidden": [16], "student_latent_dim": 2 },
    "training": { "eval_samples": 64, "critic_steps": 2 },
    "tasks": [ { "name": "blob", "source": { "kind": "gaussian_mixture", "means": [[1.0, -1.0]], "variances": [0.05] } } ]
  })");
}

json stream_doc(bool no_distill) {
  json d = blob_doc();
  d["defaults"] = {{"epochs", 2}, {"batch_size", 32}, {"steps_per_epoch", 120}, {"train_size", 1000}, {"eval_size", 400}};
  d["training"] = {{"eval_samples", 400}, {"gan_optimizer", {{"lr", 1e-3}, {"beta1", 0.5}, {"beta2", 0.9}}}};
  d["ablation"] = {{"no_distill", no_distill}};
  d.erase("model");
  d["tasks"] = json::array();
  for (auto [name, x] : {std::pair{"left", -3.0}, std::pair{"centre", 0.0}, std::pair{"right", 3.0}}) {
    d["tasks"].push_back({{"name", name}, {"source", {{"kind", "gaussian_mixture"}, {"means", {{x, 0.0}}}, {"variances", {0.1}}}}});
  }
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

struct Outcome {
  int code;
  std::string log, err;
};

Outcome run_cfg(const fs::path& config, const fs::path& out, std::optional<std::uint64_t> seed = std::nullopt) {
  RunOptions opt;
  opt.out = out;
  opt.seed = seed;
  opt.quiet = true;
  std::ostringstream log, err;
  const int code = run_command(config, opt, log, err);
  return {code, log.str(), err.str()};
}

}  // namespace

TEST(Run, MinimalConfigWritesOneRow) {
  Scratch s("minimal");
  const auto r = run_cfg(kSource / "configs" / "minimal.json", s.dir() / "out");
  ASSERT_EQ(r.code, exit_ok) << r.err;
  const std::string csv = slurp(s.dir() / "out" / "metrics.csv");
  EXPECT_EQ(line_count(csv), 2u) << csv;
  EXPECT_TRUE(fs::exists(s.dir() / "out" / "checkpoint_task1.ltg"));
  EXPECT_FALSE(fs::exists(s.dir() / "out" / ".ltgan.lock"));
}

TEST(Run, TwoRunsAreByteIdentical) {
  Scratch s("twice");
  const fs::path cfg = s.write("blob.json", blob_doc());
  ASSERT_EQ(run_cfg(cfg, s.dir() / "a").code, exit_ok);
  ASSERT_EQ(run_cfg(cfg, s.dir() / "b").code, exit_ok);
  EXPECT_EQ(slurp(s.dir() / "a" / "metrics.csv"), slurp(s.dir() / "b" / "metrics.csv"));
  EXPECT_EQ(slurp(s.dir() / "a" / "checkpoint_task1.ltg"), slurp(s.dir() / "b" / "checkpoint_task1.ltg"));
  ASSERT_EQ(run_cfg(cfg, s.dir() / "c", 8).code, exit_ok);
  EXPECT_NE(slurp(s.dir() / "a" / "metrics.csv"), slurp(s.dir() / "c" / "metrics.csv"));
}

TEST(Run, ManifestListsExactlyTheWrittenFiles) {
  Scratch s("manifest");
  const fs::path cfg = s.write("blob.json", blob_doc());
  ASSERT_EQ(run_cfg(cfg, s.dir() / "out").code, exit_ok);
  const json m = json::parse(slurp(s.dir() / "out" / "manifest.json"));
  for (const char* key : {"config_hash", "config", "code_version", "seed", "started", "finished", "status", "tasks", "files"})
    EXPECT_TRUE(m.contains(key)) << key;
  EXPECT_EQ(m["status"], "ok");
  EXPECT_EQ(m["seed"], 7);
  EXPECT_EQ(m["tasks"], json::array({"blob"}));

  std::set<std::string> listed, present;
  for (const auto& f : m["files"]) listed.insert(f.get<std::string>());
  for (const auto& e : fs::directory_iterator(s.dir() / "out")) present.insert(e.path().filename().string());
  EXPECT_EQ(listed, present);
  for (const auto& f : listed) {
    if (f.size() > 4 && f.substr(f.size() - 4) == ".svg") {
      EXPECT_EQ(xmlcheck::well_formed(slurp(s.dir() / "out" / f)), std::nullopt) << f;
    }
  }
}

TEST(Run, ZeroBetaIsAConfigError) {
  Scratch s("beta");
  json d = blob_doc();
  d["training"]["beta"] = 0;
  const auto r = run_cfg(s.write("bad.json", d), s.dir() / "out");
  EXPECT_EQ(r.code, exit_config);
  EXPECT_NE(r.err.find("training.beta"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(s.dir() / "out"));
}

TEST(Run, MissingConfigIsAnIoError) {
  Scratch s("noconfig");
  const auto r = run_cfg(s.dir() / "absent.json", s.dir() / "out");
  EXPECT_EQ(r.code, exit_io);
  EXPECT_NE(r.err.find("absent.json"), std::string::npos);
}

TEST(Run, NumericAbortKeepsPartialOutputs) {
  Scratch s("nan");
  json d = blob_doc();
  d["tasks"].push_back({{"name", "far"}, {"source", {{"kind", "gaussian_mixture"}, {"means", {{1e200, 0.0}}}, {"variances", {1.0}}}}});
  const auto r = run_cfg(s.write("nan.json", d), s.dir() / "out");
  EXPECT_EQ(r.code, exit_numeric) << r.err;
  EXPECT_NE(r.err.find("task 2"), std::string::npos) << r.err;
  const fs::path out = s.dir() / "out";
  EXPECT_TRUE(fs::exists(out / "checkpoint_task1.ltg"));
  EXPECT_FALSE(fs::exists(out / "checkpoint_task2.ltg"));
  EXPECT_EQ(line_count(slurp(out / "metrics.csv")), 2u);
  const json m = json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(m["status"], "numeric-abort");
  for (const auto& f : m["files"]) EXPECT_TRUE(fs::exists(out / f.get<std::string>())) << f;
  EXPECT_FALSE(fs::exists(out / ".ltgan.lock"));
}

TEST(Run, LockedDirectoryIsAnIoError) {
  Scratch s("lock");
  const fs::path cfg = s.write("blob.json", blob_doc());
  fs::create_directories(s.dir() / "out");
  {
    DirectoryLock held(s.dir() / "out");
    const auto r = run_cfg(cfg, s.dir() / "out");
    EXPECT_EQ(r.code, exit_io);
    EXPECT_NE(r.err.find("locked"), std::string::npos) << r.err;
    EXPECT_THROW(DirectoryLock(s.dir() / "out"), IoError);
  }
  EXPECT_EQ(run_cfg(cfg, s.dir() / "out").code, exit_ok);
}

TEST(Run, UnwritableDirectoryIsAnIoError) {
  if (::geteuid() == 0) GTEST_SKIP() << "permission bits do not bind root";
  Scratch s("readonly");
  const fs::path cfg = s.write("blob.json", blob_doc());
  fs::create_directories(s.dir() / "ro");
  fs::permissions(s.dir() / "ro", fs::perms::owner_read | fs::perms::owner_exec);
  EXPECT_EQ(run_cfg(cfg, s.dir() / "ro" / "out").code, exit_io);
}

TEST(Run, OutputPathThatIsAFileIsAnIoError) {
  Scratch s("fileout");
  const fs::path cfg = s.write("blob.json", blob_doc());
  std::ofstream(s.dir() / "plain") << "x";
  const auto r = run_cfg(cfg, s.dir() / "plain" / "out");
  EXPECT_EQ(r.code, exit_io) << r.err;
}

TEST(Compare, SelfComparisonHasZeroDeltas) {
  Scratch s("self");
  const fs::path cfg = s.write("blob.json", blob_doc());
  ASSERT_EQ(run_cfg(cfg, s.dir() / "a").code, exit_ok);
  const RunRecord r = load_run(s.dir() / "a");
  const auto rows = compare_runs({r, r});
  ASSERT_FALSE(rows.empty());
  for (const auto& row : rows) EXPECT_EQ(row.delta, 0.0) << row.metric;

  std::ostringstream log, err;
  EXPECT_EQ(compare_command({s.dir() / "a", s.dir() / "a"}, s.dir() / "cmp", log, err), exit_ok);
  const std::string csv = slurp(s.dir() / "cmp" / "compare.csv");
  EXPECT_EQ(line_count(csv), rows.size() + 1);
}

TEST(Compare, MissingDirectoryIsNamed) {
  Scratch s("cmpmissing");
  const fs::path cfg = s.write("blob.json", blob_doc());
  ASSERT_EQ(run_cfg(cfg, s.dir() / "a").code, exit_ok);
  std::ostringstream log, err;
  EXPECT_EQ(compare_command({s.dir() / "a", s.dir() / "nowhere"}, std::nullopt, log, err), exit_io);
  EXPECT_NE(err.str().find("nowhere"), std::string::npos) << err.str();
}

TEST(Compare, IncompatibleTaskListsAreRejected) {
  Scratch s("cmpincompat");
  ASSERT_EQ(run_cfg(s.write("one.json", blob_doc()), s.dir() / "a").code, exit_ok);
  json d = blob_doc();
  d["tasks"].push_back({{"name", "other"}, {"source", {{"kind", "gaussian_mixture"}, {"means", {{0.0, 0.0}}}, {"variances", {0.05}}}}});
  ASSERT_EQ(run_cfg(s.write("two.json", d), s.dir() / "b").code, exit_ok);
  EXPECT_THROW(compare_runs({load_run(s.dir() / "a"), load_run(s.dir() / "b")}), ConfigError);
  std::ostringstream log, err;
  EXPECT_EQ(compare_command({s.dir() / "a", s.dir() / "b"}, std::nullopt, log, err), exit_config);
}

TEST(Compare, LakdBeatsNoDistillOnTheFirstTask) {
  Scratch s("lakd");
  ASSERT_EQ(run_cfg(s.write("lakd.json", stream_doc(false)), s.dir() / "lakd").code, exit_ok);
  ASSERT_EQ(run_cfg(s.write("plain.json", stream_doc(true)), s.dir() / "plain").code, exit_ok);
  const auto rows = compare_runs({load_run(s.dir() / "lakd"), load_run(s.dir() / "plain")});
  bool seen = false;
  for (const auto& r : rows) {
    if (r.task == 3 && r.metric == "frechet_t1") {
      seen = true;
      EXPECT_LT(r.delta, 0.0) << "lakd " << r.subject << " vs no-distill " << r.reference;
    }
  }
  EXPECT_TRUE(seen);
}

TEST(Render, RedrawsFromAnExistingRun) {
  Scratch s("render");
  ASSERT_EQ(run_cfg(s.write("blob.json", blob_doc()), s.dir() / "a").code, exit_ok);
  std::ostringstream log, err;
  ASSERT_EQ(render_command(s.dir() / "a", s.dir() / "r", std::nullopt, log, err), exit_ok) << err.str();
  for (const char* f : {"forgetting.svg", "samples_final.svg", "interpolation.svg", "traversal.svg"}) {
    ASSERT_TRUE(fs::exists(s.dir() / "r" / f)) << f;
    EXPECT_EQ(xmlcheck::well_formed(slurp(s.dir() / "r" / f)), std::nullopt) << f;
  }
  EXPECT_EQ(render_command(s.dir() / "nowhere", std::nullopt, std::nullopt, log, err), exit_io);
}

TEST(Inspect, DescribesBlocksAndEngineState) {
  Scratch s("inspect");
  ASSERT_EQ(run_cfg(s.write("blob.json", blob_doc()), s.dir() / "a").code, exit_ok);
  std::ostringstream log, err;
  ASSERT_EQ(inspect_command(s.dir() / "a" / "checkpoint_task1.ltg", log, err), exit_ok) << err.str();
  const std::string text = log.str();
  EXPECT_EQ(text.rfind("format LTG1", 0), 0u) << text;
  EXPECT_NE(text.find("engine: task 1, phase joint"), std::string::npos) << text;
  EXPECT_NE(text.find("adam critic"), std::string::npos);

  EXPECT_EQ(inspect_command(s.dir() / "absent.ltg", log, err), exit_io);
  std::ofstream(s.dir() / "junk.ltg") << "NOPE";
  EXPECT_EQ(inspect_command(s.dir() / "junk.ltg", log, err), exit_io);
}

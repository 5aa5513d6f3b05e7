// ltgan: command-line front end.
//
//   ltgan run --config exp.json [--seed N] [--out DIR] [--quiet]
//   ltgan compare RUN_DIR RUN_DIR... [--out DIR]
//   ltgan render RUN_DIR [--out DIR] [--seed N]
//   ltgan inspect CHECKPOINT

#include <iostream>

#include "CLI11.hpp"
#include "ltgan/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Lifelong twin-generator GAN lab"};
  app.require_subcommand(1);

  ltgan::RunOptions run_opts;
  std::string config, out;
  std::uint64_t seed = 0;

  auto* run = app.add_subcommand("run", "train a task stream from a config file");
  run->add_option("--config", config, "experiment config (JSON)")->required();
  auto* run_seed = run->add_option("--seed", seed, "overrides the config seed");
  auto* run_out = run->add_option("--out", out, "output directory (overrides output_dir)");
  run->add_flag("--quiet", run_opts.quiet, "no progress output");

  std::vector<std::string> dirs;
  std::string compare_out;
  auto* compare = app.add_subcommand("compare", "per-task deltas of final metrics between runs");
  compare->add_option("runs", dirs, "run directories; the first is compared against each other")->required()->expected(2, -1);
  auto* compare_out_opt = compare->add_option("--out", compare_out, "also write compare.csv here");
  compare->add_flag("--quiet", run_opts.quiet, "ignored");

  std::string render_dir, render_out;
  auto* render = app.add_subcommand("render", "re-render SVGs from a run's metrics and last checkpoint");
  render->add_option("run", render_dir, "run directory")->required();
  auto* render_out_opt = render->add_option("--out", render_out, "destination directory (default: the run directory)");
  auto* render_seed = render->add_option("--seed", seed, "seed for sample draws");

  std::string checkpoint;
  auto* inspect = app.add_subcommand("inspect", "dump a checkpoint's manifest");
  inspect->add_option("checkpoint", checkpoint, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : ltgan::exit_usage;
  }

  if (*run) {
    if (*run_seed) run_opts.seed = seed;
    if (*run_out) run_opts.out = out;
    return ltgan::run_command(config, run_opts, std::cerr, std::cerr);
  }
  if (*compare) {
    std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
    std::optional<std::filesystem::path> dst;
    if (*compare_out_opt) dst = compare_out;
    return ltgan::compare_command(paths, dst, std::cout, std::cerr);
  }
  if (*render) {
    std::optional<std::filesystem::path> dst;
    if (*render_out_opt) dst = render_out;
    std::optional<std::uint64_t> s;
    if (*render_seed) s = seed;
    return ltgan::render_command(render_dir, dst, s, std::cout, std::cerr);
  }
  return ltgan::inspect_command(checkpoint, std::cout, std::cerr);
}

#include <iostream>

#include <CLI11.hpp>

#include "grassflow/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Block eigensolver driven by the quasi-Grassmannian gradient flow"};
  app.require_subcommand(1);
  app.set_version_flag("--version", grassflow::kVersion);

  grassflow::CommandOptions opts;
  std::string out_dir = ".";
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", out_dir, "Output directory")->capture_default_str();
    sub->add_flag("--quiet", opts.quiet, "Do not echo the JSON result to stdout");
  };
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Override init and solver seeds");
    add_common(sub);
  };

  auto* solve = app.add_subcommand("solve", "Run the flow and write the trajectory and a summary");
  add_config(solve);
  auto* validate = app.add_subcommand("validate", "Run the configured diagnostic checks");
  add_config(validate);
  auto* compare = app.add_subcommand("compare-oracle", "Compare final Ritz values with a Jacobi reference");
  add_config(compare);
  auto* plot = app.add_subcommand("export-plotdata", "Split a trajectory CSV into plot-ready files");
  plot->add_option("trajectory", opts.trajectory, "Trajectory CSV")->required()->check(CLI::ExistingFile);
  add_common(plot);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  opts.out_dir = out_dir;
  for (auto* sub : {solve, validate, compare}) {
    if (*sub && sub->count("--seed") > 0) opts.seed = seed;
  }

  if (*solve) return grassflow::run_solve(opts, std::cout, std::cerr);
  if (*validate) return grassflow::run_validate(opts, std::cout, std::cerr);
  if (*compare) return grassflow::run_compare_oracle(opts, std::cout, std::cerr);
  return grassflow::run_export_plotdata(opts, std::cout, std::cerr);
}

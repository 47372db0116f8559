#include <cstdlib>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include <baryimp/baryimp.hpp>

namespace {

struct CliArgs {
  std::string config_path;
  std::string out_dir;
  int sim = 0;
  int jobs = 1;
  bool full = false;
};

void emit_error(const std::string& type, const std::string& message) {
  const baryimp::Json record{
      {"error", baryimp::Json{{"type", type}, {"message", message}}}};
  std::cerr << record.dump() << "\n";
}

// Precedence: --out flag, then the config, then $BARYIMP_OUT, then ./out.
std::string resolve_out(const CliArgs& args,
                        const baryimp::ExperimentConfig& cfg) {
  if (!args.out_dir.empty()) return args.out_dir;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  if (const char* env = std::getenv("BARYIMP_OUT");
      env != nullptr && *env != '\0')
    return env;
  return "out";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Consensus-posterior imputation experiments"};
  app.require_subcommand(1);

  CliArgs args;
  const auto add_common = [&args](CLI::App* cmd) {
    cmd->add_option("--config", args.config_path, "Experiment config (JSON)")
        ->required();
    cmd->add_option("--out", args.out_dir,
                    "Output directory (default: config output_dir, then "
                    "$BARYIMP_OUT, then ./out)");
  };

  CLI::App* simulate =
      app.add_subcommand("simulate", "Write the truth panel for one simulation");
  CLI::App* mask = app.add_subcommand("mask", "Mask the stored truth panel");
  CLI::App* posteriors = app.add_subcommand(
      "posteriors", "Build the truncated posteriors from the masked panel");
  CLI::App* solve = app.add_subcommand(
      "solve", "Solve every configured mechanism over the budget grid");
  CLI::App* impute =
      app.add_subcommand("impute", "Draw imputed panels from stored solutions");
  CLI::App* evaluate = app.add_subcommand(
      "evaluate", "Score the imputed panels and write the report");
  CLI::App* sweep =
      app.add_subcommand("sweep", "Run the full pipeline in one process");
  CLI::App* report =
      app.add_subcommand("report", "Render plot-data files from the report");
  for (CLI::App* cmd :
       {simulate, mask, posteriors, solve, impute, evaluate, sweep, report})
    add_common(cmd);
  for (CLI::App* cmd : {simulate, mask, impute, evaluate})
    cmd->add_option("--sim", args.sim, "Simulation index")
        ->check(CLI::NonNegativeNumber);
  double delta_value = 0.0;
  CLI::Option* delta_opt =
      solve
          ->add_option("--delta", delta_value,
                       "Solve at this single budget instead of the grid")
          ->check(CLI::NonNegativeNumber);
  sweep->add_option("--jobs", args.jobs, "Worker threads")
      ->check(CLI::PositiveNumber);
  sweep->add_flag("--full", args.full,
                  "Run the full 500-simulation protocol");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    emit_error("usage", e.what());
    return 1;
  }

  try {
    baryimp::ExperimentConfig cfg =
        baryimp::parse_config(baryimp::read_json_file(args.config_path));
    if (args.full) cfg.simulations = 500;
    const std::string dir = resolve_out(args, cfg);

    if (simulate->parsed()) {
      baryimp::stage_simulate(cfg, dir, args.sim);
    } else if (mask->parsed()) {
      baryimp::stage_mask(cfg, dir, args.sim);
    } else if (posteriors->parsed()) {
      baryimp::stage_posteriors(cfg, dir);
    } else if (solve->parsed()) {
      std::optional<double> fixed;
      if (delta_opt->count() > 0) fixed = delta_value;
      baryimp::stage_solve(cfg, dir, fixed);
    } else if (impute->parsed()) {
      baryimp::stage_impute(cfg, dir, args.sim);
    } else if (evaluate->parsed()) {
      baryimp::stage_evaluate(cfg, dir, args.sim);
    } else if (report->parsed()) {
      baryimp::stage_report(cfg, dir);
    } else if (sweep->parsed()) {
      const baryimp::SweepResult result =
          baryimp::run_sweep_to_dir(cfg, dir, args.jobs);
      const int total = cfg.simulations *
                        static_cast<int>(cfg.mechanisms.size()) *
                        cfg.delta_count;
      for (const auto& r : result.reports) {
        std::cout << "mechanism=" << r.mechanism;
        const int best = r.argmin_index();
        if (best >= 0) {
          const auto& c = r.cells[static_cast<std::size_t>(best)];
          std::cout << " argmin_delta=" << c.delta
                    << " min_ecmse=" << c.ecmse;
        }
        std::cout << "\n";
      }
      const int failed = result.failed_count();
      std::cout << "cells=" << total << " failed=" << failed << "\n";
      if (static_cast<double>(failed) >
          cfg.failure_budget * static_cast<double>(total)) {
        emit_error("solver",
                   "failed cell fraction exceeds the failure budget");
        return 3;
      }
    }
    std::cout << "wrote " << dir << "\n";
    return 0;
  } catch (const baryimp::ConfigError& e) {
    emit_error("config", e.what());
    return 1;
  } catch (const baryimp::DataError& e) {
    emit_error("data", e.what());
    return 2;
  } catch (const baryimp::NumericError& e) {
    emit_error("solver", e.what());
    return 3;
  } catch (const std::exception& e) {
    emit_error("internal", e.what());
    return 2;
  }
}

// qsd: command-line driver for the killed-diffusion toolkit.
//
//   qsd <classify|spectrum|simulate|converge|thm22|qergodic|all> --config FILE
//       [--out DIR] [--plot] [--threads N]
//
// Any config key can be overridden through the environment: model.params.r
// becomes QSD_MODEL_PARAMS_R.

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qsd/qsd.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Quasi-stationary analysis of killed one-dimensional diffusions"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string out_dir;
  bool plot = false;
  unsigned threads = 0;
  app.add_option("--config", config_path, "experiment config (key=value lines)")->required()->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory (overrides output.dir)");
  app.add_flag("--plot", plot, "also write SVG charts");
  app.add_option("--threads", threads, "simulation worker threads (0: all cores)");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"classify", "Feller classification of both endpoints"},
      {"spectrum", "eigenpairs, QSD, quasi-ergodic law, Q-process drift"},
      {"simulate", "Euler-Maruyama ensemble of the killed process"},
      {"converge", "decay of the conditioned law towards the QSD"},
      {"thm22", "weighted-norm convergence bound"},
      {"qergodic", "1/t rate of time-averaged conditional expectations"},
      {"all", "every stage"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    std::vector<qsd::Stage> stages;
    if (cmd == "all") {
      stages.assign(qsd::all_stages().begin(), qsd::all_stages().end());
    } else {
      stages.push_back(qsd::parse_stage(cmd));
    }
    const auto cfg = qsd::parse_config(config_path);
    qsd::PipelineOptions opt;
    opt.out_dir = out_dir;
    opt.plot = plot;
    opt.threads = threads;
    const int status = qsd::run_pipeline(cfg, stages, opt);
    if (status != 0) std::cerr << "qsd: one or more stage contracts failed (see manifest.txt)\n";
    return status;
  } catch (const qsd::ConfigError& e) {
    std::cerr << "qsd: config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "qsd: " << e.what() << '\n';
    return 1;
  }
}

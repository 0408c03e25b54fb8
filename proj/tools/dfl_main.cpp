#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dfl/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"dfl - deep multi-factor research toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file (defaults apply when omitted)");
    sub->add_option("--set", overrides, "override a config key, e.g. --set train.max_epochs=10");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic market and write the CSVs");
  CLI::App* train = app.add_subcommand("train", "train one checkpoint per walk-forward group");
  CLI::App* backtest = app.add_subcommand("backtest", "run the comparison backtest");
  CLI::App* interpret = app.add_subcommand("interpret", "export factor-attention weights");
  CLI::App* graph_stats = app.add_subcommand("graph-stats", "export edge and industry statistics");
  for (CLI::App* sub : {synth, train, backtest, interpret, graph_stats}) add_common(sub);

  CLI11_PARSE(app, argc, argv);

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return dfl::cli::run_command(command, config_path, overrides);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

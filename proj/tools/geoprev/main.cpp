#include "config.hpp"
#include "pipeline.hpp"

#include "geoprev/error.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kNumerical = 4 };

int run(const std::function<void()>& body) {
  try {
    body();
    return kOk;
  } catch (const geoprev::ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfig;
  } catch (const geoprev::DataError& e) {
    spdlog::error("data error: {}", e.what());
    return kData;
  } catch (const geoprev::GeometryError& e) {
    spdlog::error("geometry error: {}", e.what());
    return kData;
  } catch (const geoprev::RefinementError& e) {
    spdlog::error("mesh refinement failed: {}", e.what());
    return kNumerical;
  } catch (const geoprev::NumericalError& e) {
    spdlog::error("numerical failure: {}", e.what());
    return kNumerical;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kOther;
  }
}

}  // namespace

int main(int argc, char** argv) {
  namespace gp = geoprev::pipeline;

  CLI::App app{"Geostatistical prevalence mapping: simulate, fit, areas, excursions, report"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_dir;
  std::string log_level = "info";
  app.add_option("-c,--config", config_path, "INI configuration file (defaults apply when omitted)");
  app.add_option("-o,--output-dir", output_dir, "Override paths.output_dir");
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  const std::map<std::string, std::function<void(const gp::PipelineConfig&)>> commands{
      {"simulate", gp::cmd_simulate},
      {"fit", gp::cmd_fit},
      {"areas", gp::cmd_areas},
      {"excursions", gp::cmd_excursions},
      {"report", gp::cmd_report},
  };
  const std::map<std::string, std::string> help{
      {"simulate", "Simulate a two-stage survey and the true prevalence surface"},
      {"fit", "Fit the SPDE and/or smoothed direct (BYM) models"},
      {"areas", "Area-level prevalence averages from SPDE joint samples"},
      {"excursions", "Pointwise and simultaneous exceedance regions"},
      {"report", "SVG and PGM maps of the fitted outputs"},
  };
  for (const auto& [name, _] : commands) app.add_subcommand(name, help.at(name))->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  spdlog::set_level(spdlog::level::from_str(log_level));

  const std::string name = app.get_subcommands().front()->get_name();
  return run([&] {
    gp::PipelineConfig config = config_path.empty() ? gp::PipelineConfig{} : gp::load_config(config_path);
    if (!output_dir.empty()) config.paths.output_dir = output_dir;
    config.validate();
    commands.at(name)(config);
  });
}

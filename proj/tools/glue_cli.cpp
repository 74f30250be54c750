#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "glue/app.hpp"

int main(int argc, char** argv) {
  CLI::App cli{"Gluing solver for Maxwell fields, scalar curvature and constraint diagnostics"};
  cli.set_version_flag("--version", std::string(GLUE_VERSION));

  std::string command, config_path, out_dir;
  std::vector<std::string> overrides;
  bool quiet = false;
  cli.add_option("command", command, "glue-maxwell, glue-scalar, constraints, kids, mass or constants "
                                     "(defaults to the config's `command` key)")
      ->check(CLI::IsMember(glue::app::commands()));
  cli.add_option("--config", config_path, "key = value settings file")->check(CLI::ExistingFile);
  cli.add_option("--set", overrides, "override one setting, key=value (repeatable)");
  cli.add_option("--out", out_dir, "output directory (overrides output.dir)");
  cli.add_flag("--quiet", quiet, "only errors and the reason line");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return cli.exit(e);
  } catch (const CLI::ParseError& e) {
    cli.exit(e);
    return 1;
  }

  glue::Config cfg;
  try {
    if (!config_path.empty()) cfg = glue::Config::load(config_path);
    for (const auto& s : overrides) cfg.set(s);
  } catch (const glue::GlueError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  glue::app::RunOptions opt;
  opt.out_dir = out_dir;
  opt.quiet = quiet;
  return glue::app::run(command, cfg, opt).exit_code;
}

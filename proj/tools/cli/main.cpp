#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "commands.hpp"

using namespace reasonlens::cli;

int main(int argc, char** argv) {
  CLI::App app{"Memory injection and per-head vocabulary lenses for GPT-2 style models"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file;
  app.add_option("--config", config_file, "JSON config; flags override its values")->check(CLI::ExistingFile);

  std::map<std::string, std::string> flags;
  std::map<std::string, CLI::Option*> options;
  for (const auto& k : known_keys()) {
    std::string help = k.help;
    if (k.default_value) help += std::string(" [") + k.default_value + "]";
    options[k.key] = app.add_option(std::string("--") + k.key, flags[k.key], help);
  }

  for (const auto& c : commands()) app.add_subcommand(c.name, c.summary);

  CLI11_PARSE(app, argc, argv);

  RunConfig config;
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (!config_file.empty()) config.merge_json_file(config_file);
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) config.set(key, flags[key]);
    }
  } catch (const ConfigError& e) {
    std::cerr << "reasonlens " << command << ": config error: " << e.what() << "\n";
    return 2;
  }
  return run(command, config, std::cout, std::cerr);
}

#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace reasonlens::cli {

struct CommandInfo {
  const char* name;
  const char* summary;
};

const std::vector<CommandInfo>& commands();

// Runs one command. Results go to `out` (and files named by the config),
// progress and diagnostics to `err`. Returns the process exit status:
// 0 success, 2 configuration error, 1 any other failure.
int run(const std::string& command, const RunConfig& config, std::ostream& out, std::ostream& err);

// Archive path for `model`: an existing path, else <REASONLENS_CACHE>/<model>.safetensors
// or <REASONLENS_CACHE>/<model>/model.safetensors.
std::filesystem::path resolve_model_path(const std::string& model);

}  // namespace reasonlens::cli

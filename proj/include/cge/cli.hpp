#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace cge::cli {

// Defaults for every block; also the schema unknown keys are checked against.
nlohmann::json default_config();

// Load + merge config file over defaults, then apply "a.b.c=value" overrides.
// Unknown keys anywhere are errors.
nlohmann::json resolve_config(const std::optional<std::string>& config_path,
                              const std::vector<std::string>& overrides);

// Executes one command, writing all outputs (and a resolved_config.json
// snapshot) under outdir. Throws ValidationError for bad input.
void run_command(const std::string& command, const nlohmann::json& config,
                 const std::string& outdir);

const std::vector<std::string>& command_names();

} // namespace cge::cli

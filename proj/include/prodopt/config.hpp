#pragma once

#include <string>

#include "prodopt/experiments.hpp"

namespace prodopt {

// Parses the JSON run description.  Every key is optional and falls back to
// the struct defaults; unknown keys are rejected so typos fail loudly.  The
// top-level "seed" is forwarded to the model and optimizer seeds unless
// those blocks set their own.  ConfigError on malformed input.
ExperimentConfig parse_config_json(const std::string& text);

ExperimentConfig load_config_file(const std::string& path);

// Effective configuration echoed back as JSON (defaults filled in), the
// form embedded in run manifests.  parse_config_json inverts it.
std::string config_to_json(const ExperimentConfig& config);

}  // namespace prodopt

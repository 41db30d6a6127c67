#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

namespace mlmgen {

/// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Sets a dotted key ("train.lr") in a JSON object. The value is parsed as
/// JSON when possible, otherwise stored as a string.
void apply_override(nlohmann::json& config, const std::string& assignment);

}  // namespace mlmgen

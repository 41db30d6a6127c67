#pragma once

#include <map>
#include <string>
#include <vector>

namespace mlmgen {

using PromptVars = std::map<std::string, std::string>;

/// Template with `{$name}` placeholders. Rendering is plain substitution.
struct PromptTemplate {
  std::string body;
  /// Placeholder that receives the answer/candidate (empty: none).
  std::string candidate_slot = "answer";
  /// Joins few-shot demonstrations.
  std::string shot_separator = "\n\n";
};

/// Names of the placeholders in `body`, in order of appearance.
std::vector<std::string> placeholders(const std::string& body);

/// Substitutes every `{$name}`. Throws ConfigError naming the first unbound
/// placeholder.
std::string render_prompt(const std::string& body, const PromptVars& vars);

}  // namespace mlmgen

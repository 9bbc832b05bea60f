#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lrpgraph/image.hpp"
#include "lrpgraph/lrp.hpp"
#include "lrpgraph/network.hpp"

namespace lrp {

// Parsed architecture document (the *.arch.json schema in the README).
struct ModelConfig {
  ArchitectureSpec architecture;
  Normalization normalization;
  // Optional "rules" section; absent means RuleAssignment::composite.
  std::vector<RuleRange> rules;
  // Optional label file, resolved relative to the JSON document.
  std::optional<std::filesystem::path> labels_path;
};

// Throws ConfigError.
ModelConfig parse_model_config(const std::string& json_text,
                               const std::filesystem::path& base_dir = {});
ModelConfig load_model_config(const std::filesystem::path& path);
std::string model_config_to_json(const ModelConfig& config);

// One label per line; blank trailing lines are ignored.
std::vector<std::string> load_labels(const std::filesystem::path& path);

// Config rules if present, else the composite default.
RuleAssignment rules_for(const ModelConfig& config, const Network& net,
                         CompositeDefaults defaults = {});

// z^B bounds derived from the normalization constants.
PixelBounds pixel_bounds_for(const ModelConfig& config);

}  // namespace lrp

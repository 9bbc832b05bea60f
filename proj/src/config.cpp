#include "lrpgraph/config.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "lrpgraph/errors.hpp"

namespace lrp {

using nlohmann::json;

namespace {

std::size_t get_size(const json& j, const char* key, std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_unsigned()) {
    throw ConfigError(std::string("\"") + key + "\" must be a non-negative integer");
  }
  return j.at(key).get<std::size_t>();
}

std::string get_string(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return {};
  return j.at(key).get<std::string>();
}

LayerSpec parse_layer(const json& j, std::size_t index) {
  const auto kind = j.value("kind", std::string());
  LayerSpec s;
  if (kind == "conv") {
    s.kind = LayerKind::Conv;
    s.in_channels = get_size(j, "in_channels", 0);
    s.out_channels = get_size(j, "out_channels", 0);
    if (j.contains("kernel")) {
      const auto& k = j.at("kernel");
      if (k.is_array() && k.size() == 2) {
        s.kernel_h = k[0].get<std::size_t>();
        s.kernel_w = k[1].get<std::size_t>();
      } else {
        s.kernel_h = s.kernel_w = k.get<std::size_t>();
      }
    }
    s.stride = get_size(j, "stride", 1);
    s.padding = get_size(j, "padding", 0);
  } else if (kind == "relu") {
    s.kind = LayerKind::ReLU;
  } else if (kind == "maxpool") {
    s.kind = LayerKind::MaxPool;
    s.pool_size = get_size(j, "size", 2);
    s.pool_stride = get_size(j, "stride", s.pool_size);
  } else if (kind == "flatten") {
    s.kind = LayerKind::Flatten;
  } else if (kind == "linear") {
    s.kind = LayerKind::Linear;
    s.in_features = get_size(j, "in_features", 0);
    s.out_features = get_size(j, "out_features", 0);
  } else {
    throw ConfigError("layer " + std::to_string(index) + ": unknown kind \"" + kind + "\"");
  }
  if (s.has_weights()) {
    s.weight = get_string(j, "weight");
    s.bias = get_string(j, "bias");
    if (s.weight.empty()) {
      throw ConfigError("layer " + std::to_string(index) + ": missing \"weight\" name");
    }
  }
  return s;
}

json layer_to_json(const LayerSpec& s) {
  json j;
  j["kind"] = layer_kind_name(s.kind);
  switch (s.kind) {
    case LayerKind::Conv:
      if (s.in_channels) j["in_channels"] = s.in_channels;
      if (s.out_channels) j["out_channels"] = s.out_channels;
      if (s.kernel_h) j["kernel"] = json::array({s.kernel_h, s.kernel_w});
      j["stride"] = s.stride;
      j["padding"] = s.padding;
      break;
    case LayerKind::MaxPool:
      j["size"] = s.pool_size;
      j["stride"] = s.pool_stride;
      break;
    case LayerKind::Linear:
      if (s.in_features) j["in_features"] = s.in_features;
      if (s.out_features) j["out_features"] = s.out_features;
      break;
    default:
      break;
  }
  if (s.has_weights()) {
    j["weight"] = s.weight;
    j["bias"] = s.bias.empty() ? json(nullptr) : json(s.bias);
  }
  return j;
}

RuleRange parse_rule_range(const json& j) {
  RuleRange r;
  r.first = get_size(j, "from", 0);
  r.last = get_size(j, "to", r.first);
  const auto name = j.value("rule", std::string());
  if (name == "lrp0") {
    r.rule = Rule::lrp0();
  } else if (name == "epsilon") {
    r.rule = Rule::eps(j.value("epsilon", 1e-6));
  } else if (name == "gamma") {
    const auto form = j.value("gamma_form", std::string("generalized"));
    if (form != "generalized" && form != "positive") {
      throw ConfigError("gamma_form must be \"generalized\" or \"positive\"");
    }
    r.rule = Rule::gamma_rule(j.value("gamma", 0.25),
                              form == "positive" ? GammaForm::PositiveOnly : GammaForm::Generalized);
  } else if (name == "zb") {
    r.rule = Rule::zb();
  } else {
    throw ConfigError("unknown rule \"" + name + "\"");
  }
  return r;
}

json rule_range_to_json(const RuleRange& r) {
  json j{{"from", r.first}, {"to", r.last}};
  switch (r.rule.kind) {
    case RuleKind::LRP0: j["rule"] = "lrp0"; break;
    case RuleKind::Epsilon:
      j["rule"] = "epsilon";
      j["epsilon"] = r.rule.epsilon;
      break;
    case RuleKind::Gamma:
      j["rule"] = "gamma";
      j["gamma"] = r.rule.gamma;
      j["gamma_form"] = r.rule.gamma_form == GammaForm::PositiveOnly ? "positive" : "generalized";
      break;
    case RuleKind::ZB: j["rule"] = "zb"; break;
  }
  return j;
}

}  // namespace

ModelConfig parse_model_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("architecture JSON: ") + e.what());
  }
  try {
    ModelConfig cfg;
    cfg.architecture.name = doc.value("name", std::string("network"));
    if (!doc.contains("input_shape") || !doc.at("input_shape").is_array()) {
      throw ConfigError("architecture needs an \"input_shape\" array");
    }
    cfg.architecture.input_shape = doc.at("input_shape").get<Shape>();
    if (!doc.contains("layers") || !doc.at("layers").is_array()) {
      throw ConfigError("architecture needs a \"layers\" array");
    }
    const auto& layers = doc.at("layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      cfg.architecture.layers.push_back(parse_layer(layers[i], i));
    }
    if (doc.contains("normalization")) {
      const auto& n = doc.at("normalization");
      cfg.normalization.mean = n.at("mean").get<std::vector<float>>();
      cfg.normalization.stddev = n.at("std").get<std::vector<float>>();
      for (float s : cfg.normalization.stddev) {
        if (!(s > 0.0f)) throw ConfigError("normalization std must be positive");
      }
    }
    if (doc.contains("rules")) {
      for (const auto& r : doc.at("rules")) cfg.rules.push_back(parse_rule_range(r));
    }
    if (doc.contains("labels") && !doc.at("labels").is_null()) {
      cfg.labels_path = base_dir / doc.at("labels").get<std::string>();
    }
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("architecture JSON: ") + e.what());
  }
}

ModelConfig load_model_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open architecture file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_model_config(buffer.str(), path.parent_path());
}

std::string model_config_to_json(const ModelConfig& config) {
  json doc;
  doc["name"] = config.architecture.name;
  doc["input_shape"] = config.architecture.input_shape;
  doc["normalization"] = {{"mean", config.normalization.mean}, {"std", config.normalization.stddev}};
  if (config.labels_path) doc["labels"] = config.labels_path->filename().string();
  doc["layers"] = json::array();
  for (const auto& l : config.architecture.layers) doc["layers"].push_back(layer_to_json(l));
  if (!config.rules.empty()) {
    doc["rules"] = json::array();
    for (const auto& r : config.rules) doc["rules"].push_back(rule_range_to_json(r));
  }
  return doc.dump(2) + "\n";
}

std::vector<std::string> load_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open label file " + path.string());
  std::vector<std::string> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    labels.push_back(line);
  }
  while (!labels.empty() && labels.back().empty()) labels.pop_back();
  return labels;
}

RuleAssignment rules_for(const ModelConfig& config, const Network& net, CompositeDefaults defaults) {
  auto rules = config.rules.empty() ? RuleAssignment::composite(net, defaults)
                                    : RuleAssignment::from_ranges(net.layer_count(), config.rules);
  rules.validate(net);
  return rules;
}

PixelBounds pixel_bounds_for(const ModelConfig& config) {
  return PixelBounds::from_normalization(config.architecture.input_shape, config.normalization.mean,
                                         config.normalization.stddev);
}

}  // namespace lrp

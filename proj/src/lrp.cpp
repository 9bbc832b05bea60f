#include "lrpgraph/lrp.hpp"

#include <cmath>
#include <sstream>

#include "lrp_internal.hpp"
#include "lrpgraph/errors.hpp"
#include "lrpgraph/kernels.hpp"

namespace lrp {

std::string rule_to_string(const Rule& rule) {
  std::ostringstream os;
  switch (rule.kind) {
    case RuleKind::LRP0: os << "lrp0"; break;
    case RuleKind::Epsilon: os << "epsilon:" << rule.epsilon; break;
    case RuleKind::Gamma:
      if (rule.gamma_form == GammaForm::PositiveOnly) {
        os << "gamma+:" << rule.gamma;
      } else {
        os << "gamma:" << rule.gamma;
      }
      break;
    case RuleKind::ZB: os << "zb"; break;
  }
  return os.str();
}

Rule parse_rule(const std::string& text, double default_epsilon, double default_gamma) {
  const auto colon = text.find(':');
  const std::string name = text.substr(0, colon);
  std::optional<double> value;
  if (colon != std::string::npos) {
    try {
      std::size_t used = 0;
      value = std::stod(text.substr(colon + 1), &used);
      if (used != text.size() - colon - 1) throw std::invalid_argument(text);
    } catch (const std::exception&) {
      throw RuleError("bad rule parameter in \"" + text + "\"");
    }
  }
  if (name == "lrp0" || name == "0") return Rule::lrp0();
  if (name == "epsilon" || name == "eps") return Rule::eps(value.value_or(default_epsilon));
  if (name == "gamma") return Rule::gamma_rule(value.value_or(default_gamma));
  if (name == "gamma+") {
    return Rule::gamma_rule(value.value_or(default_gamma), GammaForm::PositiveOnly);
  }
  if (name == "zb") return Rule::zb();
  throw RuleError("unknown rule \"" + text + "\"");
}

RuleAssignment RuleAssignment::uniform(std::size_t layer_count, Rule rule) {
  RuleAssignment a;
  a.rules_.assign(layer_count, rule);
  return a;
}

RuleAssignment RuleAssignment::from_ranges(std::size_t layer_count,
                                           const std::vector<RuleRange>& ranges) {
  std::vector<std::optional<Rule>> slots(layer_count);
  for (const auto& r : ranges) {
    if (r.first > r.last || r.last >= layer_count) {
      throw RuleError("rule range " + std::to_string(r.first) + "-" + std::to_string(r.last) +
                      " invalid for " + std::to_string(layer_count) + " layers");
    }
    for (std::size_t i = r.first; i <= r.last; ++i) {
      if (slots[i]) throw RuleError("layer " + std::to_string(i) + " covered by two rule ranges");
      slots[i] = r.rule;
    }
  }
  RuleAssignment a;
  for (std::size_t i = 0; i < layer_count; ++i) {
    if (!slots[i]) throw RuleError("layer " + std::to_string(i) + " has no rule");
    a.rules_.push_back(*slots[i]);
  }
  return a;
}

RuleAssignment RuleAssignment::composite(const Network& net, CompositeDefaults defaults) {
  const std::size_t n = net.layer_count();
  std::optional<std::size_t> first_weighted, last_weighted;
  for (std::size_t i = 0; i < n; ++i) {
    if (net.layer(i).has_weights()) {
      if (!first_weighted) first_weighted = i;
      last_weighted = i;
    }
  }
  std::vector<std::optional<Rule>> slots(n);
  std::size_t block = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& layer = net.layer(i);
    if (layer.kind == LayerKind::MaxPool) ++block;
    if (!layer.has_weights()) continue;
    if (i == first_weighted && layer.kind == LayerKind::Conv) {
      slots[i] = Rule::zb();
    } else if (i == last_weighted && layer.kind == LayerKind::Linear) {
      slots[i] = Rule::lrp0();
    } else if (layer.kind == LayerKind::Conv && block < defaults.lower_blocks) {
      slots[i] = Rule::gamma_rule(defaults.gamma);
    } else {
      slots[i] = Rule::eps(defaults.epsilon);
    }
  }
  // Non-weighted layers inherit the rule of the closest weighted layer
  // below them so ranges come out contiguous.
  std::optional<Rule> current;
  for (std::size_t i = 0; i < n; ++i) {
    if (slots[i]) {
      current = slots[i];
    } else if (current && *current != Rule::zb()) {
      slots[i] = current;
    }
  }
  for (std::size_t i = n; i-- > 0;) {
    if (!slots[i]) {
      std::optional<Rule> next;
      for (std::size_t j = i + 1; j < n && !next; ++j) next = slots[j];
      slots[i] = next.value_or(Rule::lrp0());
    }
  }
  RuleAssignment a;
  for (auto& s : slots) a.rules_.push_back(*s);
  return a;
}

void RuleAssignment::override_range(const RuleRange& range) {
  if (range.first > range.last || range.last >= rules_.size()) {
    throw RuleError("override range " + std::to_string(range.first) + "-" +
                    std::to_string(range.last) + " invalid for " +
                    std::to_string(rules_.size()) + " layers");
  }
  for (std::size_t i = range.first; i <= range.last; ++i) rules_[i] = range.rule;
}

std::vector<RuleRange> RuleAssignment::ranges() const {
  std::vector<RuleRange> out;
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    if (!out.empty() && out.back().rule == rules_[i]) {
      out.back().last = i;
    } else {
      out.push_back({i, i, rules_[i]});
    }
  }
  return out;
}

void RuleAssignment::validate(const Network& net) const {
  if (rules_.size() != net.layer_count()) {
    throw RuleError("rule assignment covers " + std::to_string(rules_.size()) +
                    " layers, network has " + std::to_string(net.layer_count()));
  }
  std::optional<std::size_t> first_weighted;
  for (std::size_t i = 0; i < net.layer_count() && !first_weighted; ++i) {
    if (net.layer(i).has_weights()) first_weighted = i;
  }
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    if (rules_[i].kind != RuleKind::ZB || !net.layer(i).has_weights()) continue;
    if (i != first_weighted || net.layer(i).kind != LayerKind::Conv) {
      throw RuleError("zb rule assigned to layer " + std::to_string(i) +
                      ", only the input-adjacent convolution may use it");
    }
  }
}

PixelBounds PixelBounds::uniform(const Shape& shape, float low, float high) {
  if (low > high) throw ConfigError("pixel bounds need low <= high");
  return {Tensor::full(shape, low), Tensor::full(shape, high)};
}

PixelBounds PixelBounds::from_normalization(const Shape& shape, const std::vector<float>& mean,
                                            const std::vector<float>& stddev) {
  if (shape.size() != 3) throw ShapeError("pixel bounds need a [C,H,W] shape");
  const std::size_t channels = shape[0];
  auto pick = [&](const std::vector<float>& v, std::size_t c) {
    if (v.size() == 1) return v[0];
    if (v.size() != channels) {
      throw ConfigError("normalization has " + std::to_string(v.size()) +
                        " entries for " + std::to_string(channels) + " channels");
    }
    return v[c];
  };
  PixelBounds b{Tensor(shape), Tensor(shape)};
  const std::size_t plane = shape[1] * shape[2];
  for (std::size_t c = 0; c < channels; ++c) {
    const float m = pick(mean, c), s = pick(stddev, c);
    if (!(s > 0.0f)) throw ConfigError("normalization std must be positive");
    const float lo = (0.0f - m) / s, hi = (1.0f - m) / s;
    if (lo > hi) throw ConfigError("derived pixel bounds have low > high");
    for (std::size_t i = 0; i < plane; ++i) {
      b.low[c * plane + i] = lo;
      b.high[c * plane + i] = hi;
    }
  }
  return b;
}

Tensor init_output_relevance(const Tensor& scores, std::size_t c) {
  if (c >= scores.size()) {
    throw IndexError("class index " + std::to_string(c) + " out of range for " +
                     std::to_string(scores.size()) + " outputs");
  }
  Tensor r(scores.shape());
  r[c] = scores[c];
  return r;
}

namespace detail {

double transform_weight(WeightTransform t, double gamma, double w) {
  switch (t) {
    case WeightTransform::Identity: return w;
    case WeightTransform::GammaGeneralized: return w + gamma * std::max(w, 0.0);
    case WeightTransform::Positive: return std::max(w, 0.0);
    case WeightTransform::Negative: return std::min(w, 0.0);
  }
  return w;
}

namespace {

std::vector<double> to_double(std::span<const float> v) {
  return std::vector<double>(v.begin(), v.end());
}

ConvGeometry geometry_for(const Network& net, std::size_t layer) {
  const auto& spec = net.layer(layer);
  const auto& in = net.boundary_shape(layer);
  const auto& out = net.boundary_shape(layer + 1);
  ConvGeometry g;
  g.in_c = in[0];
  g.in_h = in[1];
  g.in_w = in[2];
  g.out_c = out[0];
  g.out_h = out[1];
  g.out_w = out[2];
  g.k_h = spec.kernel_h;
  g.k_w = spec.kernel_w;
  g.stride = spec.stride;
  g.pad = spec.padding;
  return g;
}

void check_step_shapes(const Network& net, std::size_t layer, const Tensor& a,
                       const Tensor& r_above) {
  if (layer >= net.layer_count()) {
    throw IndexError("layer " + std::to_string(layer) + " out of range");
  }
  if (a.shape() != net.boundary_shape(layer)) {
    throw ShapeError("layer " + std::to_string(layer) + " activation shape " +
                     shape_to_string(a.shape()) + ", expected " +
                     shape_to_string(net.boundary_shape(layer)));
  }
  if (r_above.shape() != net.boundary_shape(layer + 1)) {
    throw ShapeError("layer " + std::to_string(layer) + " relevance shape " +
                     shape_to_string(r_above.shape()) + ", expected " +
                     shape_to_string(net.boundary_shape(layer + 1)));
  }
}

}  // namespace

PreparedStep prepare_weighted_step(const Network& net, std::size_t layer, const Tensor& a,
                                   const Tensor& r_above, const Rule& rule,
                                   const LrpOptions& options) {
  check_step_shapes(net, layer, a, r_above);
  const auto& spec = net.layer(layer);
  if (!spec.has_weights()) {
    throw LayerError("layer " + std::to_string(layer) + " (" + layer_kind_name(spec.kind) +
                     ") has no weights");
  }
  PreparedStep step;
  step.kind = spec.kind;
  step.weight = &net.weight(layer);
  step.in_size = a.size();
  step.out_size = r_above.size();
  step.gamma = rule.gamma;
  if (spec.kind == LayerKind::Conv) step.geometry = geometry_for(net, layer);

  WeightTransform main = WeightTransform::Identity;
  if (rule.kind == RuleKind::Gamma) {
    main = rule.gamma_form == GammaForm::Generalized ? WeightTransform::GammaGeneralized
                                                     : WeightTransform::Positive;
  }
  if (rule.kind == RuleKind::ZB) {
    if (!options.bounds) throw RuleError("zb rule needs pixel bounds");
    if (spec.kind != LayerKind::Conv) throw RuleError("zb rule applies to convolutions only");
    if (options.bounds->low.shape() != a.shape() || options.bounds->high.shape() != a.shape()) {
      throw ShapeError("pixel bounds shape does not match input " + shape_to_string(a.shape()));
    }
    step.terms.push_back({to_double(a.data()), WeightTransform::Identity, 1.0, {}});
    step.terms.push_back({to_double(options.bounds->low.data()), WeightTransform::Positive, -1.0, {}});
    step.terms.push_back({to_double(options.bounds->high.data()), WeightTransform::Negative, -1.0, {}});
  } else {
    step.terms.push_back({to_double(a.data()), main, 1.0, {}});
  }

  const auto w = step.weight->data();
  std::vector<double> z(step.out_size, 0.0);
  if (spec.kind == LayerKind::Conv) {
    std::vector<double> partial(step.out_size);
    for (auto& term : step.terms) {
      term.conv_weight.resize(w.size());
      for (std::size_t i = 0; i < w.size(); ++i) {
        term.conv_weight[i] = transform_weight(term.transform, rule.gamma, w[i]);
      }
      conv_forward<double>(step.geometry, term.input.data(), term.conv_weight.data(), nullptr,
                           partial.data());
      for (std::size_t k = 0; k < z.size(); ++k) z[k] += term.sign * partial[k];
    }
  } else {
    const std::size_t n_in = step.in_size;
    for (const auto& term : step.terms) {
      for (std::size_t k = 0; k < step.out_size; ++k) {
        const float* row = w.data() + k * n_in;
        double acc = 0.0;
        for (std::size_t i = 0; i < n_in; ++i) {
          acc += term.input[i] * transform_weight(term.transform, rule.gamma, row[i]);
        }
        z[k] += term.sign * acc;
      }
    }
  }

  if (rule.kind != RuleKind::ZB) {
    const Tensor& bias = net.bias(layer);
    if (!bias.empty()) {
      const std::size_t per_channel = step.out_size / bias.size();
      for (std::size_t k = 0; k < step.out_size; ++k) {
        z[k] += transform_weight(main, rule.gamma, bias[k / per_channel]);
      }
    }
  }
  if (rule.kind == RuleKind::Epsilon) {
    for (auto& v : z) v += rule.epsilon;
  }

  step.s.resize(step.out_size);
  const auto r = r_above.data();
  for (std::size_t k = 0; k < step.out_size; ++k) {
    if (std::fabs(z[k]) < kDenominatorGuard) {
      step.s[k] = 0.0;
      if (r[k] != 0.0f) {
        ++step.dropped;
        if (options.strict) {
          throw DivisionGuardError("layer " + std::to_string(layer) + ": zero denominator at output " +
                                   std::to_string(k) + " carrying relevance " + std::to_string(r[k]));
        }
      }
    } else {
      step.s[k] = r[k] / z[k];
    }
  }
  return step;
}

std::vector<double> backward_step(const PreparedStep& step) {
  std::vector<double> out(step.in_size, 0.0);
  std::vector<double> c(step.in_size);
  for (const auto& term : step.terms) {
    if (step.kind == LayerKind::Conv) {
      conv_adjoint<double>(step.geometry, step.s.data(), term.conv_weight.data(), c.data());
    } else {
      std::fill(c.begin(), c.end(), 0.0);
      const auto w = step.weight->data();
      for (std::size_t k = 0; k < step.out_size; ++k) {
        const double sk = step.s[k];
        if (sk == 0.0) continue;
        const float* row = w.data() + k * step.in_size;
        for (std::size_t i = 0; i < step.in_size; ++i) {
          c[i] += transform_weight(term.transform, step.gamma, row[i]) * sk;
        }
      }
    }
    for (std::size_t i = 0; i < step.in_size; ++i) out[i] += term.sign * term.input[i] * c[i];
  }
  return out;
}

std::vector<double> channel_flow(const PreparedStep& step, std::size_t in_groups,
                                 std::size_t out_channels) {
  std::vector<double> flow(in_groups * out_channels, 0.0);
  if (step.kind == LayerKind::Conv) {
    const auto& g = step.geometry;
    if (in_groups != g.in_c || out_channels != g.out_c) {
      throw ConsistencyError("conv channel flow expects " + std::to_string(g.in_c) + "x" +
                             std::to_string(g.out_c) + " groups");
    }
    const std::size_t taps = g.k_h * g.k_w;
    std::vector<double> corr(g.out_c * g.patch());
    for (const auto& term : step.terms) {
      conv_correlation<double>(g, term.input.data(), step.s.data(), corr.data());
      for (std::size_t k = 0; k < g.out_c; ++k) {
        const double* ck = corr.data() + k * g.patch();
        const double* wk = term.conv_weight.data() + k * g.patch();
        for (std::size_t j = 0; j < g.in_c; ++j) {
          double acc = 0.0;
          for (std::size_t t = 0; t < taps; ++t) acc += wk[j * taps + t] * ck[j * taps + t];
          flow[j * out_channels + k] += term.sign * acc;
        }
      }
    }
    return flow;
  }
  if (out_channels != step.out_size || in_groups == 0 || step.in_size % in_groups != 0) {
    throw ConsistencyError("linear channel flow group sizes do not divide the layer");
  }
  const std::size_t group = step.in_size / in_groups;
  const auto w = step.weight->data();
  std::vector<double> acc(in_groups);
  for (const auto& term : step.terms) {
    for (std::size_t k = 0; k < step.out_size; ++k) {
      const double sk = step.s[k];
      if (sk == 0.0) continue;
      std::fill(acc.begin(), acc.end(), 0.0);
      const float* row = w.data() + k * step.in_size;
      for (std::size_t i = 0; i < step.in_size; ++i) {
        acc[i / group] += term.input[i] * transform_weight(term.transform, step.gamma, row[i]);
      }
      for (std::size_t j = 0; j < in_groups; ++j) {
        flow[j * out_channels + k] += term.sign * acc[j] * sk;
      }
    }
  }
  return flow;
}

}  // namespace detail

namespace {

Tensor to_tensor(const Shape& shape, const std::vector<double>& v) {
  return Tensor(shape, std::vector<float>(v.begin(), v.end()));
}

Tensor route_through_switches(const Tensor& r_above, const SwitchMap& sw) {
  Tensor out(sw.input_shape);
  for (std::size_t i = 0; i < r_above.size(); ++i) out[sw.indices[i]] += r_above[i];
  return out;
}

}  // namespace

StepResult lrp_zb_input(const Network& net, std::size_t layer, const Tensor& x,
                        const Tensor& r_above, const PixelBounds& bounds,
                        const LrpOptions& options) {
  if (layer >= net.layer_count() || net.layer(layer).kind != LayerKind::Conv) {
    throw RuleError("zb rule applies to convolutions only");
  }
  LrpOptions with_bounds = options;
  with_bounds.bounds = bounds;
  auto step = detail::prepare_weighted_step(net, layer, x, r_above, Rule::zb(), with_bounds);
  return {to_tensor(x.shape(), detail::backward_step(step)), step.dropped};
}

StepResult lrp_step(const Network& net, std::size_t layer, const Tensor& a,
                    const Tensor& r_above, const Rule& rule, const LrpOptions& options) {
  if (layer >= net.layer_count()) throw IndexError("layer " + std::to_string(layer) + " out of range");
  const auto& spec = net.layer(layer);
  switch (spec.kind) {
    case LayerKind::ReLU:
    case LayerKind::Flatten:
      if (a.shape() != net.boundary_shape(layer) ||
          r_above.shape() != net.boundary_shape(layer + 1)) {
        throw ShapeError("layer " + std::to_string(layer) + " step shapes do not match network");
      }
      return {r_above.reshaped(a.shape()), 0};
    case LayerKind::MaxPool: {
      if (a.shape() != net.boundary_shape(layer) ||
          r_above.shape() != net.boundary_shape(layer + 1)) {
        throw ShapeError("layer " + std::to_string(layer) + " step shapes do not match network");
      }
      auto pooled = maxpool2d_with_switches(a, spec.pool_size, spec.pool_stride);
      return {route_through_switches(r_above, pooled.switches), 0};
    }
    case LayerKind::Conv:
    case LayerKind::Linear: {
      if (rule.kind == RuleKind::ZB) {
        if (!options.bounds) throw RuleError("zb rule needs pixel bounds");
        return lrp_zb_input(net, layer, a, r_above, *options.bounds, options);
      }
      auto step = detail::prepare_weighted_step(net, layer, a, r_above, rule, options);
      return {to_tensor(a.shape(), detail::backward_step(step)), step.dropped};
    }
  }
  throw LayerError("unknown layer kind");
}

RelevanceMap lrp_explain(const Network& net, const ForwardTrace& trace, std::size_t c,
                         const RuleAssignment& rules, const LrpOptions& options) {
  rules.validate(net);
  if (trace.layer_count() != net.layer_count()) {
    throw ConsistencyError("trace has " + std::to_string(trace.layer_count()) +
                           " layers, network has " + std::to_string(net.layer_count()));
  }
  const std::size_t n = net.layer_count();
  RelevanceMap map;
  map.class_index = c;
  map.rules = rules;
  map.boundaries.resize(n + 1);
  map.boundaries[n] = init_output_relevance(trace.scores(), c);
  for (std::size_t i = n; i-- > 0;) {
    if (net.layer(i).kind == LayerKind::MaxPool) {
      auto it = trace.switches.find(i);
      if (it == trace.switches.end()) {
        throw ConsistencyError("trace has no switches for pool layer " + std::to_string(i));
      }
      map.boundaries[i] = route_through_switches(map.boundaries[i + 1], it->second);
      continue;
    }
    auto step = lrp_step(net, i, trace.input(i), map.boundaries[i + 1], rules.rule(i), options);
    map.boundaries[i] = std::move(step.relevance);
    map.dropped += step.dropped;
  }
  return map;
}

}  // namespace lrp

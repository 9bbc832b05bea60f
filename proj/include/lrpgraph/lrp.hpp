#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "lrpgraph/network.hpp"
#include "lrpgraph/tensor.hpp"

namespace lrp {

enum class RuleKind { LRP0, Epsilon, Gamma, ZB };

// How LRP-gamma transforms weights: w + gamma*w+ (reduces to LRP-0 at
// gamma = 0), or the positive part w+ alone.
enum class GammaForm { Generalized, PositiveOnly };

struct Rule {
  RuleKind kind = RuleKind::LRP0;
  double epsilon = 1e-6;
  double gamma = 0.25;
  GammaForm gamma_form = GammaForm::Generalized;

  static Rule lrp0() { return {}; }
  static Rule eps(double epsilon = 1e-6) { return {RuleKind::Epsilon, epsilon}; }
  static Rule gamma_rule(double gamma = 0.25, GammaForm form = GammaForm::Generalized) {
    return {RuleKind::Gamma, 1e-6, gamma, form};
  }
  static Rule zb() { return {RuleKind::ZB}; }

  friend bool operator==(const Rule&, const Rule&) = default;
};

std::string rule_to_string(const Rule& rule);

// Parses "lrp0", "epsilon[:E]", "gamma[:G]", "gamma+[:G]" (positive-only
// form) or "zb". Throws RuleError.
Rule parse_rule(const std::string& text, double default_epsilon = 1e-6,
                double default_gamma = 0.25);

struct RuleRange {
  std::size_t first = 0;
  std::size_t last = 0;  // inclusive
  Rule rule;
};

struct CompositeDefaults {
  double epsilon = 1e-6;
  double gamma = 0.25;
  // Conv layers inside the first `lower_blocks` pooling blocks use LRP-gamma,
  // later conv layers use LRP-epsilon.
  std::size_t lower_blocks = 3;
};

// One rule per layer. Rules on ReLU/MaxPool/Flatten layers have no effect
// but ranges must still cover every layer exactly once.
class RuleAssignment {
 public:
  RuleAssignment() = default;

  static RuleAssignment uniform(std::size_t layer_count, Rule rule);
  // Throws RuleError on gaps, overlaps or out-of-range layers.
  static RuleAssignment from_ranges(std::size_t layer_count, const std::vector<RuleRange>& ranges);
  // z^B on the first conv, gamma on lower conv blocks, epsilon above and on
  // hidden linear layers, LRP-0 on the final linear layer.
  static RuleAssignment composite(const Network& net, CompositeDefaults defaults = {});

  void override_range(const RuleRange& range);

  std::size_t layer_count() const { return rules_.size(); }
  const Rule& rule(std::size_t layer) const { return rules_.at(layer); }
  // Maximal runs of equal rules.
  std::vector<RuleRange> ranges() const;

  // Throws RuleError if the assignment does not fit the network or z^B is
  // placed anywhere but the input-adjacent convolution.
  void validate(const Network& net) const;

 private:
  std::vector<Rule> rules_;
};

// Admissible input range per element, used by the z^B rule.
struct PixelBounds {
  Tensor low;
  Tensor high;

  static PixelBounds uniform(const Shape& shape, float low, float high);
  // Bounds of [0,1] pixels after (v - mean[c]) / std[c].
  static PixelBounds from_normalization(const Shape& shape, const std::vector<float>& mean,
                                        const std::vector<float>& stddev);
};

struct LrpOptions {
  // Throw DivisionGuardError instead of dropping nonzero relevance at
  // near-zero denominators.
  bool strict = false;
  std::optional<PixelBounds> bounds;
};

inline constexpr double kDenominatorGuard = 1e-12;

struct StepResult {
  Tensor relevance;
  // Output neurons with nonzero relevance whose denominator was guarded.
  std::size_t dropped = 0;
};

struct RelevanceMap {
  // Same indexing as ForwardTrace::boundaries.
  std::vector<Tensor> boundaries;
  std::size_t class_index = 0;
  RuleAssignment rules;
  std::size_t dropped = 0;

  const Tensor& pixels() const { return boundaries.front(); }
  const Tensor& output() const { return boundaries.back(); }
};

// Zero everywhere except scores[c].
Tensor init_output_relevance(const Tensor& scores, std::size_t c);

// One backward step through `layer` given its input activations. Conv and
// Linear layers run forward, divide, adjoint, multiply with the rule's
// weight transform; biases enter the denominator but receive no share.
// ReLU passes relevance through, MaxPool routes it to the argmax, Flatten
// reshapes. Rule ZB dispatches to lrp_zb_input and needs options.bounds.
StepResult lrp_step(const Network& net, std::size_t layer, const Tensor& a,
                    const Tensor& r_above, const Rule& rule, const LrpOptions& options = {});

// Deep-Taylor z^B rule for the input-adjacent convolution:
// R_i = sum_j (x_i w_ij - l_i w+_ij - h_i w-_ij) / z_j * R_j.
StepResult lrp_zb_input(const Network& net, std::size_t layer, const Tensor& x,
                        const Tensor& r_above, const PixelBounds& bounds,
                        const LrpOptions& options = {});

RelevanceMap lrp_explain(const Network& net, const ForwardTrace& trace, std::size_t c,
                         const RuleAssignment& rules, const LrpOptions& options = {});

}  // namespace lrp

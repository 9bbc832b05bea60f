#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lrpgraph/errors.hpp"
#include "lrpgraph/kernels.hpp"
#include "lrpgraph/lrp.hpp"
#include "support/oracles.hpp"
#include "support/toy_nets.hpp"

namespace {

using lrp::LayerSpec;
using lrp::Rule;
using lrp::Tensor;

double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-30);
}

TEST(InitOutputRelevance, KeepsOnlyClassEntry) {
  EXPECT_EQ(lrp::init_output_relevance(Tensor({3}, {1.0f, 3.5f, -0.2f}), 1),
            Tensor({3}, {0, 3.5f, 0}));
  EXPECT_EQ(lrp::init_output_relevance(Tensor({1}, {2.0f}), 0), Tensor({1}, {2.0f}));
  EXPECT_EQ(lrp::init_output_relevance(Tensor({2}, {0.0f, 1.0f}), 0), Tensor({2}));
  EXPECT_THROW(lrp::init_output_relevance(Tensor({2}), 2), lrp::IndexError);
}

TEST(LrpStep, BasicRuleHandExample) {
  const auto net = toy::linear_net(2, 1, {1, 1});
  const Tensor a({2}, {1, 2});
  const auto r = lrp::lrp_step(net, 0, a, Tensor({1}, {3}), Rule::lrp0());
  EXPECT_EQ(r.relevance, Tensor({2}, {1, 2}));
  EXPECT_EQ(lrp::lrp_step(net, 0, a, Tensor({1}, {0}), Rule::lrp0()).relevance, Tensor({2}));
}

TEST(LrpStep, ZeroDenominatorGuard) {
  const auto net = toy::linear_net(2, 1, {1, -1});
  const Tensor a({2}, {1, 1});
  const auto r = lrp::lrp_step(net, 0, a, Tensor({1}, {5}), Rule::lrp0());
  EXPECT_EQ(r.relevance, Tensor({2}));
  EXPECT_EQ(r.dropped, 1u);
  EXPECT_THROW(lrp::lrp_step(net, 0, a, Tensor({1}, {5}), Rule::lrp0(), {.strict = true, .bounds = {}}),
               lrp::DivisionGuardError);
  // Nothing to drop when the relevance above is zero.
  EXPECT_EQ(lrp::lrp_step(net, 0, a, Tensor({1}, {0}), Rule::lrp0(), {.strict = true, .bounds = {}}).dropped, 0u);
}

TEST(LrpStep, GammaZeroEqualsLrp0) {
  std::mt19937 rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    const auto net = toy::random_conv_net(rng, {.bias = true});
    const auto trace = lrp::forward_trace(net, toy::random_tensor(rng, net.input_shape(), 0, 1));
    for (std::size_t i = 0; i < net.layer_count(); ++i) {
      if (!net.layer(i).has_weights()) continue;
      const auto r_above = toy::random_tensor(rng, trace.output(i).shape());
      const auto r0 = lrp::lrp_step(net, i, trace.input(i), r_above, Rule::lrp0());
      const auto rg = lrp::lrp_step(net, i, trace.input(i), r_above, Rule::gamma_rule(0.0));
      for (std::size_t j = 0; j < r0.relevance.size(); ++j) {
        EXPECT_NEAR(r0.relevance[j], rg.relevance[j], 1e-7);
      }
    }
  }
}

TEST(LrpStep, GammaFormsDiffer) {
  // a = [1, 1], w = [2, -1]: generalized rho(w) = w + g*w+ = [2.5, -1], z = 1.5;
  // positive-only rho(w) = [2, 0], z = 2.
  const auto net = toy::linear_net(2, 1, {2, -1});
  const Tensor a({2}, {1, 1});
  const auto gen = lrp::lrp_step(net, 0, a, Tensor({1}, {3}), Rule::gamma_rule(0.25));
  EXPECT_NEAR(gen.relevance[0], 2.5 / 1.5 * 3, 1e-6);
  EXPECT_NEAR(gen.relevance[1], -1.0 / 1.5 * 3, 1e-6);
  const auto pos = lrp::lrp_step(net, 0, a, Tensor({1}, {3}),
                                 Rule::gamma_rule(0.25, lrp::GammaForm::PositiveOnly));
  EXPECT_EQ(pos.relevance, Tensor({2}, {3, 0}));
}

TEST(LrpStep, EpsilonDeficitIsEpsilonTimesS) {
  std::mt19937 rng(23);
  const auto net = toy::random_conv_net(rng, {});
  const auto trace = lrp::forward_trace(net, toy::random_tensor(rng, net.input_shape(), 0, 1));
  const double eps = 0.05;
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    if (!net.layer(i).has_weights()) continue;
    const auto& z = trace.output(i);
    const auto r_above = toy::random_tensor(rng, z.shape(), 0, 1);
    const auto r = lrp::lrp_step(net, i, trace.input(i), r_above, Rule::eps(eps));
    double expected = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) {
      expected += eps * r_above[k] / (static_cast<double>(z[k]) + eps);
    }
    const double deficit = r_above.sum() - r.relevance.sum();
    EXPECT_NEAR(deficit, expected, 1e-4 * std::max(1.0, std::abs(expected)));
    if (std::abs(expected) > 1e-3) {
      EXPECT_EQ(deficit > 0, expected > 0);
    }
    const auto r0 = lrp::lrp_step(net, i, trace.input(i), r_above, Rule::eps(0.0));
    EXPECT_LE(rel_err(r0.relevance.sum(), r_above.sum()), 1e-5);
  }
}

TEST(LrpStep, Lrp0ConservesOnBiasFreeNets) {
  std::mt19937 rng(29);
  for (int trial = 0; trial < 10; ++trial) {
    const auto net = toy::random_conv_net(rng, {.conv_layers = 1 + static_cast<std::size_t>(trial % 3)});
    const auto trace = lrp::forward_trace(net, toy::random_tensor(rng, net.input_shape(), 0, 1));
    const auto rmap = lrp::lrp_explain(net, trace, 0, lrp::RuleAssignment::uniform(
                                                          net.layer_count(), Rule::lrp0()));
    for (std::size_t b = 0; b < net.layer_count(); ++b) {
      EXPECT_LE(rel_err(rmap.boundaries[b].sum(), rmap.boundaries[b + 1].sum()), 1e-5)
          << "boundary " << b;
    }
  }
}

TEST(LrpStep, MaxPoolRoutesToSwitches) {
  std::mt19937 rng(31);
  lrp::ParameterStore params;
  const auto net = toy::build({2, 4, 4}, {LayerSpec::maxpool(2, 2)}, params);
  const auto x = toy::random_tensor(rng, {2, 4, 4});
  const auto pooled = lrp::maxpool2d_with_switches(x, 2, 2);
  const auto r_above = toy::random_tensor(rng, {2, 2, 2});
  const auto r = lrp::lrp_step(net, 0, x, r_above, Rule::lrp0()).relevance;
  std::vector<bool> is_switch(x.size(), false);
  for (auto idx : pooled.switches.indices) is_switch[idx] = true;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (!is_switch[i]) {
      EXPECT_EQ(r[i], 0.0f);
    }
  }
  EXPECT_EQ(r.sum(), r_above.sum());
}

TEST(LrpStep, ReluAndFlattenPassThrough) {
  lrp::ParameterStore params;
  const auto net = toy::build({1, 2, 2}, {LayerSpec::relu(), LayerSpec::flatten()}, params);
  const Tensor a({1, 2, 2}, {-1, 2, 0, 3});
  const Tensor r({1, 2, 2}, {0.5f, 1, 2, 3});
  EXPECT_EQ(lrp::lrp_step(net, 0, a, r, Rule::lrp0()).relevance, r);
  EXPECT_EQ(lrp::lrp_step(net, 1, a, r.reshaped({4}), Rule::lrp0()).relevance, r);
}

lrp::Network one_conv(const Tensor& w, std::size_t padding = 0) {
  lrp::ParameterStore params;
  toy::put(params, "w", w);
  return toy::build({w.dim(1), 1 + w.dim(2) - 1, 1 + w.dim(3) - 1},
                    {LayerSpec::conv("w", "", 1, padding)}, params);
}

TEST(ZbRule, SinglePixelHandAlgebra) {
  const auto bounds = lrp::PixelBounds::uniform({1, 1, 1}, 0.0f, 1.0f);
  const Tensor x({1, 1, 1}, {0.5f});
  // w = 2: x*w - l*w+ - h*w- = 1 - 0 - 0; w = -2: -1 - 0 + 2 = 1.
  for (float w : {2.0f, -2.0f}) {
    const auto net = one_conv(Tensor({1, 1, 1, 1}, {w}));
    EXPECT_NEAR(lrp::lrp_zb_input(net, 0, x, Tensor({1, 1, 1}, {4}), bounds).relevance[0], 4.0, 1e-6);
  }
  // Pinned at both bounds the numerator vanishes: x(w - w+ - w-) = 0.
  const auto pinned = lrp::PixelBounds::uniform({1, 1, 1}, 0.5f, 0.5f);
  const auto net = one_conv(Tensor({1, 1, 1, 1}, {3.0f}));
  const auto r = lrp::lrp_zb_input(net, 0, x, Tensor({1, 1, 1}, {4}), pinned);
  EXPECT_EQ(r.relevance[0], 0.0f);
  EXPECT_EQ(r.dropped, 1u);
}

TEST(ZbRule, TwoPixelHandAlgebra) {
  // Terms: 0.5*2 = 1 and 0.25*(-1) - 1*(-1) = 0.75, z = 1.75.
  const auto net = one_conv(Tensor({1, 2, 1, 1}, {2, -1}));
  const Tensor x({2, 1, 1}, {0.5f, 0.25f});
  const auto r = lrp::lrp_zb_input(net, 0, x, Tensor({1, 1, 1}, {7}),
                                   lrp::PixelBounds::uniform({2, 1, 1}, 0, 1));
  EXPECT_NEAR(r.relevance[0], 4.0, 1e-6);
  EXPECT_NEAR(r.relevance[1], 3.0, 1e-6);
}

TEST(ZbRule, MatchesDirectDoubleLoop) {
  std::mt19937 rng(37);
  for (int trial = 0; trial < 10; ++trial) {
    lrp::ParameterStore params;
    toy::put(params, "w", toy::random_tensor(rng, {3, 1, 3, 3}));
    const auto net = toy::build({1, 4, 4}, {LayerSpec::conv("w", "", 1, trial % 2)}, params);
    const auto x = toy::random_tensor(rng, {1, 4, 4}, -0.4f, 2.2f);
    const auto bounds = lrp::PixelBounds::from_normalization({1, 4, 4}, {0.45f}, {0.25f});
    const auto r_above = toy::random_tensor(rng, net.output_shape(), 0, 1);
    const auto got = lrp::lrp_zb_input(net, 0, x, r_above, bounds).relevance;
    const auto want = oracle::direct_zb(net, 0, x, r_above, bounds);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-5);
  }
}

TEST(ZbRule, ConservesAndHandlesZeroRelevance) {
  std::mt19937 rng(41);
  lrp::ParameterStore params;
  toy::put(params, "w", toy::random_tensor(rng, {4, 3, 3, 3}));
  const auto net = toy::build({3, 6, 6}, {LayerSpec::conv("w", "", 1, 0)}, params);
  const auto bounds = lrp::PixelBounds::from_normalization(
      {3, 6, 6}, {0.485f, 0.456f, 0.406f}, {0.229f, 0.224f, 0.225f});
  const auto x = toy::random_tensor(rng, {3, 6, 6}, -2.0f, 2.2f);
  const auto r_above = toy::random_tensor(rng, net.output_shape(), 0, 1);
  const auto r = lrp::lrp_zb_input(net, 0, x, r_above, bounds);
  EXPECT_EQ(r.dropped, 0u);
  EXPECT_LE(rel_err(r.relevance.sum(), r_above.sum()), 1e-4);
  EXPECT_EQ(lrp::lrp_zb_input(net, 0, x, Tensor(net.output_shape()), bounds).relevance,
            Tensor({3, 6, 6}));
}

TEST(PixelBounds, FromNormalization) {
  const auto b = lrp::PixelBounds::from_normalization({2, 1, 1}, {0.5f, 0.25f}, {0.5f, 0.25f});
  EXPECT_FLOAT_EQ(b.low[0], -1.0f);
  EXPECT_FLOAT_EQ(b.high[0], 1.0f);
  EXPECT_FLOAT_EQ(b.low[1], -1.0f);
  EXPECT_FLOAT_EQ(b.high[1], 3.0f);
}

TEST(LrpExplain, IdentityLinearNet) {
  const auto net = toy::linear_net(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor x({3}, {0.5f, 2.0f, 1.0f});
  const auto trace = lrp::forward_trace(net, x);
  const auto rmap =
      lrp::lrp_explain(net, trace, 1, lrp::RuleAssignment::uniform(1, Rule::lrp0()));
  EXPECT_EQ(rmap.pixels(), lrp::init_output_relevance(trace.scores(), 1));
  EXPECT_EQ(rmap.class_index, 1u);
}

TEST(LrpExplain, Lrp0EqualsGradientTimesInput) {
  std::mt19937 rng(43);
  for (int trial = 0; trial < 4; ++trial) {
    const auto net = toy::random_conv_net(rng, {.in_channels = 1, .size = 6, .conv_layers = 2});
    const auto x = toy::random_tensor(rng, net.input_shape(), 0, 1);
    const auto trace = lrp::forward_trace(net, x);
    const auto rmap = lrp::lrp_explain(
        net, trace, 1, lrp::RuleAssignment::uniform(net.layer_count(), Rule::lrp0()));
    const auto grad = oracle::fd_gradient(net, x, 1, 1e-5);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double want = grad[i] * x[i];
      num += (rmap.pixels()[i] - want) * (rmap.pixels()[i] - want);
      den += want * want;
    }
    EXPECT_LE(std::sqrt(num / std::max(den, 1e-30)), 1e-2);
  }
}

TEST(LrpExplain, OutputBoundaryIsClassOnly) {
  std::mt19937 rng(47);
  const auto net = toy::random_conv_net(rng, {.bias = true});
  const auto trace = lrp::forward_trace(net, toy::random_tensor(rng, net.input_shape()));
  const auto rmap = lrp::lrp_explain(net, trace, 2, lrp::RuleAssignment::uniform(
                                                        net.layer_count(), Rule::eps()));
  EXPECT_EQ(rmap.output(), lrp::init_output_relevance(trace.scores(), 2));
  ASSERT_EQ(rmap.boundaries.size(), trace.boundaries.size());
  for (std::size_t b = 0; b < rmap.boundaries.size(); ++b) {
    EXPECT_EQ(rmap.boundaries[b].shape(), trace.boundaries[b].shape());
  }
}

TEST(LrpExplain, ZbWithoutBoundsIsRuleError) {
  std::mt19937 rng(53);
  const auto net = toy::random_conv_net(rng, {});
  const auto trace = lrp::forward_trace(net, toy::random_tensor(rng, net.input_shape()));
  auto rules = lrp::RuleAssignment::uniform(net.layer_count(), Rule::lrp0());
  rules.override_range({0, 0, Rule::zb()});
  EXPECT_THROW(lrp::lrp_explain(net, trace, 0, rules), lrp::RuleError);
  lrp::LrpOptions opts;
  opts.bounds = lrp::PixelBounds::uniform(net.input_shape(), -1, 1);
  EXPECT_NO_THROW(lrp::lrp_explain(net, trace, 0, rules, opts));
}

TEST(Rules, ParseAndPrint) {
  EXPECT_EQ(lrp::parse_rule("lrp0"), Rule::lrp0());
  EXPECT_EQ(lrp::parse_rule("epsilon:0.01"), Rule::eps(0.01));
  EXPECT_EQ(lrp::parse_rule("gamma"), Rule::gamma_rule(0.25));
  EXPECT_EQ(lrp::parse_rule("gamma+:0.5"), Rule::gamma_rule(0.5, lrp::GammaForm::PositiveOnly));
  EXPECT_EQ(lrp::parse_rule("zb"), Rule::zb());
  EXPECT_THROW(lrp::parse_rule("alpha-beta"), lrp::RuleError);
  for (const auto& r : {Rule::lrp0(), Rule::eps(0.5), Rule::gamma_rule(0.1), Rule::zb(),
                        Rule::gamma_rule(0.3, lrp::GammaForm::PositiveOnly)}) {
    EXPECT_EQ(lrp::parse_rule(lrp::rule_to_string(r)), r) << lrp::rule_to_string(r);
  }
}

TEST(Rules, RangesMustTileLayers) {
  EXPECT_THROW(lrp::RuleAssignment::from_ranges(4, {{0, 1, Rule::lrp0()}, {3, 3, Rule::lrp0()}}),
               lrp::RuleError);
  EXPECT_THROW(lrp::RuleAssignment::from_ranges(4, {{0, 2, Rule::lrp0()}, {2, 3, Rule::eps()}}),
               lrp::RuleError);
  EXPECT_THROW(lrp::RuleAssignment::from_ranges(2, {{0, 2, Rule::lrp0()}}), lrp::RuleError);
  const auto ok = lrp::RuleAssignment::from_ranges(4, {{0, 1, Rule::eps()}, {2, 3, Rule::lrp0()}});
  EXPECT_EQ(ok.rule(1), Rule::eps());
  EXPECT_EQ(ok.ranges().size(), 2u);
}

TEST(Rules, ZbOnlyOnFirstConv) {
  std::mt19937 rng(59);
  const auto net = toy::random_conv_net(rng, {.conv_layers = 2});
  auto rules = lrp::RuleAssignment::uniform(net.layer_count(), Rule::lrp0());
  const auto second_conv = net.conv_layers()[1];
  rules.override_range({second_conv, second_conv, Rule::zb()});
  EXPECT_THROW(rules.validate(net), lrp::RuleError);
}

TEST(Rules, CompositeOnVggLayout) {
  std::mt19937 rng(61);
  const auto net = toy::mini_vgg(rng);
  ASSERT_EQ(net.layer_count(), 37u);
  const auto rules = lrp::RuleAssignment::composite(net);
  EXPECT_EQ(rules.rule(0).kind, lrp::RuleKind::ZB);
  for (std::size_t i = 1; i <= 16; ++i) EXPECT_EQ(rules.rule(i).kind, lrp::RuleKind::Gamma) << i;
  for (std::size_t i = 17; i <= 35; ++i) EXPECT_EQ(rules.rule(i).kind, lrp::RuleKind::Epsilon) << i;
  EXPECT_EQ(rules.rule(36).kind, lrp::RuleKind::LRP0);
  EXPECT_NO_THROW(rules.validate(net));
}

}  // namespace

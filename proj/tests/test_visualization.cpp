#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "lrpgraph/errors.hpp"
#include "lrpgraph/visualization.hpp"
#include "support/toy_nets.hpp"

#ifndef LRPGRAPH_TEST_DATA_DIR
#error "LRPGRAPH_TEST_DATA_DIR must be defined"
#endif

namespace {

using lrp::Heatmap;
using lrp::HeatmapKind;
using lrp::Tensor;

Heatmap grid(std::size_t w, std::size_t h, std::vector<float> v) {
  Heatmap hm;
  hm.width = w;
  hm.height = h;
  hm.values = std::move(v);
  for (float x : hm.values) hm.scale = std::max(hm.scale, std::abs(x));
  return hm;
}

std::array<std::uint8_t, 3> pixel(const lrp::RgbImage& img, std::size_t i) {
  return {img.pixels[3 * i], img.pixels[3 * i + 1], img.pixels[3 * i + 2]};
}

TEST(ChannelHeatmap, SingleAndPairedChannels) {
  std::mt19937 rng(1);
  const auto t = toy::random_tensor(rng, {3, 2, 4});
  const std::size_t one[] = {1};
  const auto hm = lrp::channel_heatmap(t, one, HeatmapKind::Relevance);
  ASSERT_EQ(hm.width, 4u);
  ASSERT_EQ(hm.height, 2u);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(hm.values[i], t[8 + i]);
  const std::size_t two[] = {0, 2};
  const auto sum = lrp::channel_heatmap(t, two, HeatmapKind::Relevance);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(sum.values[i], t[i] + t[16 + i]);
}

TEST(ChannelHeatmap, ZeroTensorAndErrors) {
  const std::size_t all[] = {0, 1};
  const auto hm = lrp::channel_heatmap(Tensor({2, 3, 3}), all, HeatmapKind::Relevance);
  EXPECT_TRUE(hm.all_zero());
  EXPECT_EQ(hm.values, std::vector<float>(9, 0.0f));
  EXPECT_THROW(lrp::channel_heatmap(Tensor({4}), all, HeatmapKind::Relevance), lrp::LayerError);
  const std::size_t bad[] = {2};
  EXPECT_THROW(lrp::channel_heatmap(Tensor({2, 3, 3}), bad, HeatmapKind::Relevance),
               lrp::IndexError);
}

TEST(ChannelHeatmap, AdditiveOverDisjointChannels) {
  std::mt19937 rng(2);
  const auto t = toy::random_tensor(rng, {6, 5, 5});
  const std::size_t set[] = {0, 2, 3, 5};
  const auto joint = lrp::channel_heatmap(t, set, HeatmapKind::Activation);
  std::vector<float> acc(25, 0.0f);
  for (auto c : set) {
    const std::size_t one[] = {c};
    const auto single = lrp::channel_heatmap(t, one, HeatmapKind::Activation);
    for (std::size_t i = 0; i < 25; ++i) acc[i] += single.values[i];
  }
  EXPECT_EQ(joint.values, acc);
}

struct Pipeline {
  lrp::Network net;
  lrp::ForwardTrace trace;
  lrp::RelevanceMap rmap;
  lrp::RelevanceGraph graph;
};

Pipeline run(lrp::Network net, const Tensor& x) {
  Pipeline p{std::move(net), {}, {}, {}};
  p.trace = lrp::forward_trace(p.net, x);
  p.rmap = lrp::lrp_explain(p.net, p.trace, 0,
                            lrp::RuleAssignment::uniform(p.net.layer_count(), lrp::Rule::lrp0()));
  p.graph = lrp::build_relevance_graph(p.net, p.trace, p.rmap);
  return p;
}

TEST(RelevanceHeatmap, InputAndHiddenBoundaries) {
  std::mt19937 rng(3);
  auto net = toy::random_conv_net(rng, {.conv_layers = 2});
  const auto x = toy::random_tensor(rng, net.input_shape(), 0, 1);
  const auto p = run(std::move(net), x);
  const auto paths = lrp::top_k_paths(p.graph, 3).paths;

  const auto pixels = lrp::relevance_heatmap(p.net, p.graph, p.rmap, paths, 0);
  const std::size_t rgb[] = {0, 1};
  EXPECT_EQ(pixels.values, lrp::channel_heatmap(p.rmap.pixels(), rgb, HeatmapKind::Relevance).values);

  // Boundary 2 is the first ReLU output, indexed by graph layer 1.
  ASSERT_EQ(p.graph.layer_for_boundary(p.net, 2), std::optional<std::size_t>(1));
  const auto channels = lrp::path_channels(p.graph, paths, 1);
  const auto hidden = lrp::relevance_heatmap(p.net, p.graph, p.rmap, paths, 2);
  EXPECT_EQ(hidden.values,
            lrp::channel_heatmap(p.rmap.boundaries[2], channels, HeatmapKind::Relevance).values);
  const auto act = lrp::activation_heatmap(p.net, p.graph, p.trace, paths, 2);
  EXPECT_EQ(act.values,
            lrp::channel_heatmap(p.trace.boundaries[2], channels, HeatmapKind::Activation).values);
  EXPECT_EQ(act.kind, HeatmapKind::Activation);

  const std::size_t flat = p.net.layer_count();
  EXPECT_THROW(lrp::relevance_heatmap(p.net, p.graph, p.rmap, paths, flat), lrp::LayerError);
}

TEST(ActivationHeatmap, ZeroImageThroughBiasFreeNet) {
  std::mt19937 rng(4);
  auto net = toy::random_conv_net(rng, {.conv_layers = 2});
  const auto p = run(std::move(net), Tensor(net.input_shape()));
  std::vector<lrp::Path> paths;
  lrp::Path path;
  path.nodes.assign(p.graph.layers.size(), 0);
  paths.push_back(path);
  EXPECT_TRUE(lrp::activation_heatmap(p.net, p.graph, p.trace, paths, 2).all_zero());
  EXPECT_TRUE(lrp::relevance_heatmap(p.net, p.graph, p.rmap, paths, 0).all_zero());
}

TEST(ActivationHeatmap, IdentityLayerReproducesInput) {
  lrp::ParameterStore params;
  toy::put(params, "id", Tensor({2, 2, 1, 1}, {1, 0, 0, 1}));
  toy::put(params, "fc", Tensor({1, 18}, std::vector<float>(18, 1.0f)));
  auto net = toy::build({2, 3, 3},
                        {lrp::LayerSpec::conv("id", "", 1, 0), lrp::LayerSpec::flatten(),
                         lrp::LayerSpec::linear("fc", "")},
                        params);
  std::mt19937 rng(5);
  const auto x = toy::random_tensor(rng, {2, 3, 3}, 0, 1);
  const auto p = run(std::move(net), x);
  lrp::Path path;
  path.nodes = {0, 1, 0};
  const std::vector<lrp::Path> paths{path};
  const auto hm = lrp::activation_heatmap(p.net, p.graph, p.trace, paths, 1);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(hm.values[i], x[9 + i]);
}

TEST(Colormap, TableShape) {
  const auto& t = lrp::seismic_table();
  EXPECT_EQ(t[128], (std::array<std::uint8_t, 3>{255, 255, 255}));
  EXPECT_EQ(t[255], (std::array<std::uint8_t, 3>{128, 0, 0}));
  EXPECT_EQ(t[0], (std::array<std::uint8_t, 3>{0, 0, 77}));
  EXPECT_EQ(t[64], (std::array<std::uint8_t, 3>{0, 0, 255}));
  for (int i = 0; i < 256; ++i) {
    if (i > 128) {
      EXPECT_GT(t[i][0], t[i][2]) << i;
    } else if (i < 128) {
      EXPECT_GT(t[i][2], t[i][0]) << i;
    }
  }
}

TEST(Colormap, IndexIsSignPreserving) {
  EXPECT_EQ(lrp::colormap_index(0.0f), 128);
  EXPECT_EQ(lrp::colormap_index(-0.0f), 128);
  EXPECT_EQ(lrp::colormap_index(1.0f), 255);
  EXPECT_EQ(lrp::colormap_index(-1.0f), 0);
  EXPECT_EQ(lrp::colormap_index(1e-9f), 129);
  EXPECT_EQ(lrp::colormap_index(-1e-9f), 127);
  std::mt19937 rng(6);
  std::uniform_real_distribution<float> d(-1, 1);
  for (int i = 0; i < 10000; ++i) {
    const float v = d(rng);
    const int idx = lrp::colormap_index(v);
    EXPECT_EQ(v > 0, idx > 128);
    EXPECT_EQ(v < 0, idx < 128);
  }
}

TEST(Render, ConstantPositiveIsUniformTopColor) {
  const auto img = lrp::render(grid(3, 2, std::vector<float>(6, 2.5f)));
  ASSERT_EQ(img.pixels.size(), 18u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(pixel(img, i), lrp::seismic_table()[255]);
}

TEST(Render, ZeroMapsToMidpoint) {
  const auto img = lrp::render(grid(3, 1, {-1.0f, 0.0f, 1.0f}));
  EXPECT_EQ(pixel(img, 0), lrp::seismic_table()[0]);
  EXPECT_EQ(pixel(img, 1), lrp::seismic_table()[128]);
  EXPECT_EQ(pixel(img, 2), lrp::seismic_table()[255]);
}

TEST(Render, AllZeroWarnsAndRendersMidpoint) {
  std::ostringstream warn;
  lrp::RenderOptions opts;
  opts.warnings = &warn;
  opts.width = 4;
  opts.height = 4;
  const auto img = lrp::render(grid(2, 2, std::vector<float>(4, 0.0f)), opts);
  ASSERT_EQ(img.pixels.size(), 48u);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(pixel(img, i), lrp::seismic_table()[128]);
  EXPECT_NE(warn.str().find("all zero"), std::string::npos);
}

TEST(Render, UpscaleModes) {
  const auto hm = grid(2, 2, {1.0f, -1.0f, 0.5f, 0.0f});
  lrp::RenderOptions nearest;
  nearest.width = 4;
  nearest.height = 4;
  nearest.upscale = lrp::Upscale::Nearest;
  const auto img = lrp::render(hm, nearest);
  EXPECT_EQ(pixel(img, 0), pixel(img, 5));
  EXPECT_EQ(pixel(img, 2), lrp::seismic_table()[0]);
  EXPECT_EQ(pixel(img, 15), lrp::seismic_table()[128]);
  lrp::RenderOptions bilinear = nearest;
  bilinear.upscale = lrp::Upscale::Bilinear;
  const auto smooth = lrp::render(hm, bilinear);
  EXPECT_EQ(smooth.width, 4u);
  // Corners sit on source pixel centers after clamping.
  EXPECT_EQ(pixel(smooth, 0), lrp::seismic_table()[255]);
  EXPECT_EQ(pixel(smooth, 3), lrp::seismic_table()[0]);
  lrp::RenderOptions shrink;
  shrink.width = 1;
  shrink.height = 2;
  EXPECT_THROW(lrp::render(hm, shrink), lrp::ShapeError);
}

TEST(Render, IsPure) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<float> d(-3, 3);
  std::vector<float> v(64);
  for (auto& x : v) x = d(rng);
  lrp::RenderOptions opts;
  opts.width = 20;
  opts.height = 20;
  EXPECT_EQ(lrp::encode_ppm(lrp::render(grid(8, 8, v), opts)),
            lrp::encode_ppm(lrp::render(grid(8, 8, v), opts)));
}

// Fixed 4x4 map covering both signs, zero and the extremes.
Heatmap golden_map() {
  return grid(4, 4, {-2.0f, -1.0f, -0.5f, 0.0f, 0.25f, 0.5f, 1.0f, 2.0f, -0.125f, 0.125f, 1.5f,
                     -1.5f, 0.0f, 0.75f, -0.75f, 0.01f});
}

TEST(Render, GoldenFourByFour) {
  const auto path = std::filesystem::path(LRPGRAPH_TEST_DATA_DIR) / "golden_heatmap_4x4.ppm";
  const auto bytes = lrp::encode_ppm(lrp::render(golden_map()));
  if (std::getenv("LRPGRAPH_UPDATE_GOLDEN")) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  std::ifstream in(path, std::ios::binary);
  ASSERT_TRUE(in) << "missing " << path;
  const std::vector<std::uint8_t> pinned{std::istreambuf_iterator<char>(in),
                                         std::istreambuf_iterator<char>()};
  EXPECT_EQ(bytes, pinned);
}

TEST(Overlay, BlendsHalfAndHalf) {
  lrp::RgbImage a{1, 1, {200, 0, 100}};
  lrp::RgbImage b{1, 1, {100, 50, 101}};
  EXPECT_EQ(lrp::overlay(a, b).pixels, (std::vector<std::uint8_t>{150, 25, 101}));
  lrp::RgbImage c{2, 1, {0, 0, 0, 0, 0, 0}};
  EXPECT_THROW(lrp::overlay(a, c), lrp::ShapeError);
}

TEST(Filenames, Pattern) {
  EXPECT_EQ(lrp::heatmap_filename("castle", HeatmapKind::Relevance, "29", 5, "png"),
            "castle_relevance_L29_k5.png");
  EXPECT_EQ(lrp::heatmap_filename("zebra", HeatmapKind::Activation, "input", 1, "ppm"),
            "zebra_activation_Linput_k1.ppm");
}

}  // namespace

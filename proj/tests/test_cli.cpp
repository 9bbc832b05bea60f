#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include "lrpgraph/image.hpp"
#include "lrpgraph/weights.hpp"
#include "support/toy_nets.hpp"

#ifndef LRPGRAPH_CLI
#error "LRPGRAPH_CLI must point at the lrpgraph executable"
#endif

namespace {

namespace fs = std::filesystem;

const char* kArch = R"({
  "name": "toy",
  "input_shape": [3, 12, 12],
  "normalization": {"mean": [0.5, 0.5, 0.5], "std": [0.25, 0.25, 0.25]},
  "labels": "labels.txt",
  "layers": [
    {"kind": "conv", "in_channels": 3, "out_channels": 8, "kernel": 3, "padding": 1,
     "weight": "c0.weight", "bias": "c0.bias"},
    {"kind": "relu"},
    {"kind": "maxpool", "size": 2},
    {"kind": "conv", "in_channels": 8, "out_channels": 8, "kernel": 3, "padding": 1,
     "weight": "c1.weight", "bias": "c1.bias"},
    {"kind": "relu"},
    {"kind": "flatten"},
    {"kind": "linear", "in_features": 288, "out_features": 3, "weight": "fc.weight",
     "bias": "fc.bias"}
  ]
})";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "lrpgraph_cli_fixture";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "arch.json") << kArch;
    std::ofstream(dir_ / "labels.txt") << "castle\nbarn\nzebra\n";
    std::mt19937 rng(11);
    lrp::ParameterStore params;
    toy::put(params, "c0.weight", toy::random_tensor(rng, {8, 3, 3, 3}, -0.5f, 0.5f));
    toy::put(params, "c0.bias", toy::random_tensor(rng, {8}, -0.05f, 0.05f));
    toy::put(params, "c1.weight", toy::random_tensor(rng, {8, 8, 3, 3}, -0.3f, 0.3f));
    toy::put(params, "c1.bias", toy::random_tensor(rng, {8}, -0.05f, 0.05f));
    toy::put(params, "fc.weight", toy::random_tensor(rng, {3, 288}, -0.2f, 0.2f));
    toy::put(params, "fc.bias", toy::random_tensor(rng, {3}, -0.05f, 0.05f));
    lrp::save_weights(dir_ / "toy.lrpw", params);
    for (const char* name : {"photo", "other"}) {
      lrp::RgbImage img{12, 12, std::vector<std::uint8_t>(12 * 12 * 3)};
      for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() & 0xFF);
      lrp::write_ppm(dir_ / (std::string(name) + ".ppm"), img);
    }
  }

  static void TearDownTestSuite() { fs::remove_all(dir_); }

  void SetUp() override {
    out_ = dir_ / ("out_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(out_);
  }

  // Runs the tool with the fixture model; returns the exit status and
  // captures stdout/stderr.
  int run(const std::string& args, std::string env = "") {
    const auto log = out_.string() + ".log";
    const std::string cmd = env + " '" + std::string(LRPGRAPH_CLI) + "' " + args + " --model '" +
                            (dir_ / "toy.lrpw").string() + "' > '" + log + "' 2>&1";
    const int status = std::system(cmd.c_str());
    output_ = slurp(log);
    return status;
  }

  std::string image(const char* name = "photo") const {
    return " --image '" + (dir_ / (std::string(name) + ".ppm")).string() + "'";
  }
  std::string out() const { return " --out '" + out_.string() + "'"; }

  static inline fs::path dir_;
  fs::path out_;
  std::string output_;
};

TEST_F(Cli, ClassifyListsLabels) {
  ASSERT_EQ(run("classify" + image() + out()), 0) << output_;
  for (const char* label : {"castle", "barn", "zebra"}) {
    EXPECT_NE(output_.find(label), std::string::npos) << output_;
  }
  EXPECT_TRUE(fs::exists(out_ / "photo_classify.csv"));
}

TEST_F(Cli, PathsWritesExactlyKRedPaths) {
  ASSERT_EQ(run("paths --k 5 --class barn" + image() + out()), 0) << output_;
  const auto dot = slurp(out_ / "photo_paths_k5.dot");
  std::set<std::string> ids;
  std::size_t red_edges = 0;
  const std::regex red(R"(color=red[^\]]*tooltip="path (\d+)\")");
  for (std::sregex_iterator it(dot.begin(), dot.end(), red), end; it != end; ++it) {
    ids.insert((*it)[1]);
    ++red_edges;
  }
  EXPECT_EQ(ids.size(), 5u);
  // input, two conv layers and the linear layer: three edges per path
  EXPECT_EQ(red_edges, 15u);
}

TEST_F(Cli, MetricsWritesKMaxRows) {
  ASSERT_EQ(run("metrics --k-max 10" + image() + out()), 0) << output_;
  std::istringstream csv(slurp(out_ / "photo_metrics.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "k,mse,smape");
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 10u);
  EXPECT_NE(output_.find("chosen k"), std::string::npos);
}

TEST_F(Cli, HeatmapIsIdempotent) {
  const std::string args = "heatmap --k 5 --layer 1 --class 0" + image() + out();
  ASSERT_EQ(run(args), 0) << output_;
  const auto rel = out_ / "photo_relevance_L1_k5.png";
  const auto act = out_ / "photo_activation_L1_k5.png";
  ASSERT_TRUE(fs::exists(rel));
  ASSERT_TRUE(fs::exists(act));
  const auto first = slurp(rel) + slurp(act);
  ASSERT_EQ(run(args), 0) << output_;
  EXPECT_EQ(slurp(rel) + slurp(act), first);
  const auto img = lrp::decode_image(rel);
  EXPECT_EQ(img.width, 12u);
  EXPECT_EQ(img.height, 12u);
}

TEST_F(Cli, HeatmapRejectsNonSpatialLayer) {
  EXPECT_NE(run("heatmap --layer 5" + image() + out()), 0);
  EXPECT_NE(output_.find("error"), std::string::npos);
}

TEST_F(Cli, ExplainWithOverridesAndOverlay) {
  ASSERT_EQ(run("explain --rule 0-0=zb --rule 3-6=epsilon:0.01 --overlay --format ppm" + image() +
                out()),
            0)
      << output_;
  EXPECT_TRUE(fs::exists(out_ / "photo_relevance_Linput_k0.ppm"));
  EXPECT_NE(output_.find("epsilon:0.01"), std::string::npos) << output_;
  EXPECT_NE(run("explain --rule 3-3=zb" + image() + out()), 0);
}

TEST_F(Cli, DeconvProjectsChannels) {
  ASSERT_EQ(run("deconv --layer 4 --channel 2 --channel 5" + image() + out()), 0) << output_;
  EXPECT_TRUE(fs::exists(out_ / "photo_reconstruction_L4_k2.png"));
  ASSERT_EQ(run("deconv --layer 2 --no-deconv-relu" + image() + out()), 0) << output_;
  EXPECT_TRUE(fs::exists(out_ / "photo_reconstruction_L2_k5.png"));
  EXPECT_NE(run("deconv --layer 6" + image() + out()), 0);
}

TEST_F(Cli, GraphExports) {
  ASSERT_EQ(run("graph --getopt-literal" + image() + out()), 0) << output_;
  EXPECT_NE(slurp(out_ / "photo_graph.dot").find("digraph"), std::string::npos);
  EXPECT_NE(slurp(out_ / "photo_graph.json").find("\"layers\""), std::string::npos);
}

TEST_F(Cli, OutputDirFromEnvironment) {
  ASSERT_EQ(run("classify" + image(), "LRP_OUT_DIR='" + out_.string() + "'"), 0) << output_;
  EXPECT_TRUE(fs::exists(out_ / "photo_classify.csv"));
}

TEST_F(Cli, SeveralImagesConcurrently) {
  ASSERT_EQ(run("metrics --k-max 4 --jobs 2" + image() + image("other") + out()), 0) << output_;
  EXPECT_TRUE(fs::exists(out_ / "photo_metrics.csv"));
  EXPECT_TRUE(fs::exists(out_ / "other_metrics.csv"));
  EXPECT_LT(output_.find("photo.ppm"), output_.find("other.ppm"));
}

TEST_F(Cli, ErrorsExitNonzero) {
  EXPECT_NE(run("classify --image /nonexistent.png" + out()), 0);
  EXPECT_NE(run("classify --class ostrich" + image() + out()), 0);
  EXPECT_NE(output_.find("ostrich"), std::string::npos);
  EXPECT_NE(run("paths --k 0" + image() + out()), 0);
  EXPECT_NE(run("frobnicate"), 0);
}

}  // namespace

#include <CLI11.hpp>
#include <fmt/core.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>

#include "lrpgraph/config.hpp"
#include "lrpgraph/deconv.hpp"
#include "lrpgraph/errors.hpp"
#include "lrpgraph/graph.hpp"
#include "lrpgraph/image.hpp"
#include "lrpgraph/kernels.hpp"
#include "lrpgraph/lrp.hpp"
#include "lrpgraph/metrics.hpp"
#include "lrpgraph/network.hpp"
#include "lrpgraph/visualization.hpp"
#include "lrpgraph/weights.hpp"

namespace fs = std::filesystem;

namespace {

struct RunConfig {
  fs::path model;
  fs::path arch;
  std::vector<fs::path> images;
  std::string class_spec = "top";
  fs::path labels;
  std::vector<std::string> rule_overrides;
  double epsilon = 1e-6;
  double gamma = 0.25;
  std::size_t k = 5;
  std::size_t k_max = 10;
  std::string layer;
  std::vector<std::size_t> channels;
  fs::path out;
  std::string colormap = "seismic";
  bool overlay = false;
  bool getopt = true;
  bool getopt_literal = false;
  bool deconv_relu = true;
  std::string k_rule = "mean";
  std::string aggregate = "sum";
  std::string upscale = "bilinear";
  std::string format = "png";
  std::string kind = "both";
  bool strict = false;
  std::size_t jobs = 1;
};

// Everything loaded once per invocation and shared read-only by workers.
struct Model {
  lrp::ModelConfig config;
  lrp::Network net;
  lrp::RuleAssignment rules;
  lrp::PixelBounds bounds;
};

std::string lower(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

std::size_t parse_index(const std::string& text, const char* what) {
  std::size_t used = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) {
    throw lrp::ConfigError(fmt::format("{} \"{}\" is not a non-negative integer", what, text));
  }
  return v;
}

// "A-B=rule" or "A=rule".
lrp::RuleRange parse_rule_override(const std::string& text, const RunConfig& rc) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) {
    throw lrp::ConfigError("rule override \"" + text + "\" must look like FROM-TO=RULE");
  }
  const std::string range = text.substr(0, eq);
  const auto dash = range.find('-');
  lrp::RuleRange r;
  r.first = parse_index(range.substr(0, dash), "rule range start");
  r.last = dash == std::string::npos ? r.first : parse_index(range.substr(dash + 1), "rule range end");
  r.rule = lrp::parse_rule(text.substr(eq + 1), rc.epsilon, rc.gamma);
  return r;
}

Model load_model(const RunConfig& rc) {
  fs::path arch = rc.arch;
  if (arch.empty()) {
    arch = rc.model.parent_path() / "arch.json";
    if (!fs::exists(arch)) {
      throw lrp::ConfigError("no --arch given and no arch.json next to " + rc.model.string());
    }
  }
  auto config = lrp::load_model_config(arch);
  auto net = lrp::build_network(config.architecture, lrp::load_weights(rc.model));
  if (!rc.labels.empty()) {
    net.set_class_labels(lrp::load_labels(rc.labels));
  } else if (config.labels_path && fs::exists(*config.labels_path)) {
    net.set_class_labels(lrp::load_labels(*config.labels_path));
  }
  lrp::CompositeDefaults defaults;
  defaults.epsilon = rc.epsilon;
  defaults.gamma = rc.gamma;
  auto rules = lrp::rules_for(config, net, defaults);
  for (const auto& text : rc.rule_overrides) rules.override_range(parse_rule_override(text, rc));
  rules.validate(net);
  auto bounds = lrp::pixel_bounds_for(config);
  return {std::move(config), std::move(net), std::move(rules), std::move(bounds)};
}

std::size_t resolve_class(const lrp::Network& net, const std::string& spec, const lrp::Tensor& scores) {
  if (spec == "top") {
    return static_cast<std::size_t>(
        std::max_element(scores.data().begin(), scores.data().end()) - scores.data().begin());
  }
  if (!spec.empty() && std::all_of(spec.begin(), spec.end(), ::isdigit)) {
    const auto c = parse_index(spec, "class");
    if (c >= scores.size()) {
      throw lrp::IndexError(fmt::format("class {} out of range (network has {} classes)", c,
                                        scores.size()));
    }
    return c;
  }
  const auto& labels = net.class_labels();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (lower(labels[i]) == lower(spec)) return i;
  }
  throw lrp::ConfigError("class \"" + spec + "\" matches no index or label");
}

// Heatmap layer argument: "input" or a forward layer index N, meaning the
// output of layer N (boundary N + 1).
std::size_t resolve_boundary(const lrp::Network& net, const std::string& layer) {
  if (layer.empty()) throw lrp::ConfigError("--layer is required for this subcommand");
  if (layer == "input") return 0;
  const auto n = parse_index(layer, "layer");
  if (n >= net.layer_count()) {
    throw lrp::IndexError(fmt::format("layer {} out of range (network has {} layers)", n,
                                      net.layer_count()));
  }
  return n + 1;
}

std::size_t resolve_feature_layer(const lrp::Network& net, const std::string& layer) {
  if (layer.empty() || layer == "input") {
    throw lrp::ConfigError("deconv needs --layer set to a feature layer index");
  }
  const auto n = parse_index(layer, "layer");
  if (n >= net.feature_extractor_length()) {
    throw lrp::IndexError(fmt::format("layer {} is not a feature layer (feature extractor has {})",
                                      n, net.feature_extractor_length()));
  }
  return n;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw lrp::Error("cannot write " + path.string());
  out << text;
}

// Per-image state built lazily by the subcommands.
struct ImageRun {
  const RunConfig& rc;
  const Model& m;
  fs::path path;
  std::string stem;
  lrp::Tensor x;
  lrp::ForwardTrace trace;
  std::size_t c = 0;
  mutable std::ostringstream log;

  ImageRun(const RunConfig& r, const Model& model, fs::path p)
      : rc(r), m(model), path(std::move(p)), stem(path.stem().string()) {
    x = lrp::load_image(path, m.net.input_shape(), m.config.normalization);
    trace = lrp::forward_trace(m.net, x);
    c = resolve_class(m.net, rc.class_spec, trace.scores());
  }

  fs::path out(const std::string& name) const { return rc.out / name; }

  lrp::LrpOptions lrp_options() const {
    lrp::LrpOptions opts;
    opts.strict = rc.strict;
    opts.bounds = m.bounds;
    return opts;
  }

  lrp::RelevanceMap explain() const { return lrp::lrp_explain(m.net, trace, c, m.rules, lrp_options()); }

  lrp::RelevanceGraph graph(const lrp::RelevanceMap& rmap) const {
    auto g = lrp::build_relevance_graph(m.net, trace, rmap, lrp_options());
    if (rc.getopt) {
      lrp::apply_get_optimizer(g, trace, rmap,
                               rc.getopt_literal ? lrp::GetOptimizerMode::Literal
                                                 : lrp::GetOptimizerMode::Prose);
    }
    return g;
  }

  lrp::PathSearchOptions search() const {
    lrp::PathSearchOptions s;
    if (rc.aggregate == "sum") {
      s.aggregation = lrp::PathAggregation::Sum;
    } else if (rc.aggregate == "min") {
      s.aggregation = lrp::PathAggregation::Min;
    } else {
      throw lrp::ConfigError("unknown --aggregate \"" + rc.aggregate + "\" (expected sum or min)");
    }
    return s;
  }

  lrp::RenderOptions render_options() const {
    lrp::RenderOptions o;
    o.colormap = lrp::parse_colormap(rc.colormap);
    o.width = m.net.input_shape()[2];
    o.height = m.net.input_shape()[1];
    if (rc.upscale == "bilinear") {
      o.upscale = lrp::Upscale::Bilinear;
    } else if (rc.upscale == "nearest") {
      o.upscale = lrp::Upscale::Nearest;
    } else {
      throw lrp::ConfigError("unknown --upscale \"" + rc.upscale + "\"");
    }
    o.warnings = &log;
    return o;
  }

  void save(const lrp::Heatmap& hm, const std::string& layer, std::size_t k) {
    auto img = lrp::render(hm, render_options());
    if (rc.overlay) img = lrp::overlay(img, lrp::tensor_to_rgb(x, m.config.normalization));
    const auto file = out(lrp::heatmap_filename(stem, hm.kind, layer, k, rc.format));
    lrp::write_image(file, img);
    log << "wrote " << file.string() << "\n";
  }

  void header() {
    log << fmt::format("{}: class {} ({}) logit {:.6g}\n", path.string(), c, m.net.class_label(c),
                       trace.scores()[c]);
  }
};

void run_classify(ImageRun& run) {
  const auto& s = run.trace.scores();
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t top = std::min<std::size_t>(5, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(top), order.end(),
                    [&](std::size_t a, std::size_t b) { return s[a] > s[b] || (s[a] == s[b] && a < b); });
  const auto probs = lrp::softmax(s);
  std::string csv = "rank,class,label,logit,probability\n";
  run.log << run.path.string() << "\n";
  for (std::size_t r = 0; r < top; ++r) {
    const auto i = order[r];
    run.log << fmt::format("  {}. {:>5}  {:<30} logit {:>10.4f}  p {:.4f}\n", r + 1, i,
                           run.m.net.class_label(i), s[i], probs[i]);
    csv += fmt::format("{},{},\"{}\",{:.9g},{:.9g}\n", r + 1, i, run.m.net.class_label(i), s[i],
                       probs[i]);
  }
  write_text(run.out(run.stem + "_classify.csv"), csv);
}

void run_explain(ImageRun& run) {
  run.header();
  const auto rmap = run.explain();
  std::string csv = "boundary,after_layer,relevance_sum\n";
  for (std::size_t b = 0; b < rmap.boundaries.size(); ++b) {
    double sum = 0.0;
    for (float v : rmap.boundaries[b].data()) sum += v;
    csv += fmt::format("{},{},{:.9g}\n", b,
                       b == 0 ? std::string("input") : std::string(lrp::layer_kind_name(run.m.net.layer(b - 1).kind)),
                       sum);
  }
  write_text(run.out(run.stem + "_relevance_sums.csv"), csv);
  for (const auto& r : run.m.rules.ranges()) {
    run.log << fmt::format("  layers {}-{}: {}\n", r.first, r.last, lrp::rule_to_string(r.rule));
  }
  if (rmap.dropped) run.log << fmt::format("  {} guarded denominators dropped relevance\n", rmap.dropped);
  const std::size_t all[] = {0, 1, 2};
  const std::span<const std::size_t> colors(all, std::min<std::size_t>(3, run.x.dim(0)));
  run.save(lrp::channel_heatmap(rmap.pixels(), colors, lrp::HeatmapKind::Relevance), "input", 0);
}

void run_graph(ImageRun& run) {
  run.header();
  const auto rmap = run.explain();
  const auto g = run.graph(rmap);
  std::size_t retained = 0;
  for (const auto& l : g.layers) retained += static_cast<std::size_t>(std::count(l.retained.begin(), l.retained.end(), true));
  run.log << fmt::format("  graph: {} layers, {} nodes ({} retained), {} edges\n", g.layers.size(),
                         g.node_count(), retained, g.edge_count());
  const std::vector<lrp::Path> none;
  write_text(run.out(run.stem + "_graph.dot"), lrp::graph_to_dot(g, none));
  write_text(run.out(run.stem + "_graph.json"), lrp::graph_to_json(g, none));
}

void run_paths(ImageRun& run) {
  run.header();
  const auto rmap = run.explain();
  const auto g = run.graph(rmap);
  const auto result = lrp::top_k_paths(g, run.rc.k, run.search());
  if (result.truncated) {
    run.log << fmt::format("  only {} paths exist (asked for {})\n", result.paths.size(), run.rc.k);
  }
  std::string listing;
  for (std::size_t i = 0; i < result.paths.size(); ++i) {
    const auto& p = result.paths[i];
    std::string nodes;
    for (std::size_t l = 0; l < p.nodes.size(); ++l) {
      nodes += fmt::format("{}L{}C{}", l ? " -> " : "", l, p.nodes[l]);
    }
    listing += fmt::format("{}\t{:.9g}\t{}\n", i + 1, p.weight, nodes);
  }
  run.log << listing;
  const std::string base = fmt::format("{}_paths_k{}", run.stem, run.rc.k);
  write_text(run.out(base + ".dot"), lrp::graph_to_dot(g, result.paths));
  write_text(run.out(base + ".json"), lrp::graph_to_json(g, result.paths));
  write_text(run.out(base + ".tsv"), listing);
}

void run_heatmap(ImageRun& run) {
  run.header();
  const std::size_t boundary = resolve_boundary(run.m.net, run.rc.layer);
  const auto rmap = run.explain();
  const auto g = run.graph(rmap);
  const auto paths = lrp::top_k_paths(g, run.rc.k, run.search()).paths;
  const bool rel = run.rc.kind == "both" || run.rc.kind == "relevance";
  const bool act = run.rc.kind == "both" || run.rc.kind == "activation";
  if (!rel && !act) throw lrp::ConfigError("unknown --kind \"" + run.rc.kind + "\"");
  if (rel) run.save(lrp::relevance_heatmap(run.m.net, g, rmap, paths, boundary), run.rc.layer, run.rc.k);
  if (act) run.save(lrp::activation_heatmap(run.m.net, g, run.trace, paths, boundary), run.rc.layer, run.rc.k);
}

void run_deconv(ImageRun& run) {
  run.header();
  const std::size_t layer = resolve_feature_layer(run.m.net, run.rc.layer);
  const auto deconv = lrp::build_deconv(run.m.net);
  std::vector<std::size_t> channels = run.rc.channels;
  if (channels.empty()) {
    const auto rmap = run.explain();
    const auto g = run.graph(rmap);
    const auto paths = lrp::top_k_paths(g, run.rc.k, run.search()).paths;
    const auto gl = g.layer_for_boundary(run.m.net, layer + 1);
    if (!gl || *gl == 0) {
      throw lrp::LayerError(fmt::format("layer {} is not indexed by any conv graph layer", layer));
    }
    channels = lrp::path_channels(g, paths, *gl);
  }
  lrp::DeconvOptions opts;
  opts.relu = run.rc.deconv_relu;
  const auto rec = lrp::reconstruct_from_trace(deconv, run.trace, layer, channels, opts);
  std::string list;
  for (auto ch : channels) list += fmt::format("{}{}", list.empty() ? "" : ",", ch);
  run.log << fmt::format("  channels at layer {}: {}\n", layer, list);
  run.save(lrp::reconstruction_heatmap(rec), run.rc.layer, run.rc.channels.empty() ? run.rc.k : channels.size());
}

void run_metrics(ImageRun& run) {
  run.header();
  const auto rmap = run.explain();
  const auto g = run.graph(rmap);
  lrp::SweepOptions opts;
  opts.rule = lrp::parse_k_rule(run.rc.k_rule);
  opts.search = run.search();
  // Images already run concurrently; keep the sweep serial inside each.
  opts.jobs = run.rc.images.size() > 1 ? 1 : run.rc.jobs;
  const auto report = lrp::k_sweep(run.m.net, run.x, g, run.c, run.rc.k_max, opts);
  write_text(run.out(run.stem + "_metrics.csv"), lrp::metrics_csv(report));
  run.log << lrp::metrics_table(report, run.m.net);
}

using Handler = void (*)(ImageRun&);

int execute(const RunConfig& rc, Handler handler) {
  if (rc.k == 0) throw lrp::ConfigError("--k must be at least 1");
  if (rc.k_max == 0) throw lrp::ConfigError("--k-max must be at least 1");
  const Model model = load_model(rc);
  fs::create_directories(rc.out);

  std::vector<std::string> logs(rc.images.size());
  std::vector<std::string> errors(rc.images.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < rc.images.size(); i = next++) {
      try {
        ImageRun run(rc, model, rc.images[i]);
        handler(run);
        logs[i] = run.log.str();
      } catch (const std::exception& e) {
        errors[i] = fmt::format("{}: {}", rc.images[i].string(), e.what());
      }
    }
  };
  std::size_t jobs = rc.jobs ? rc.jobs : std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, rc.images.size());
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < jobs; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  int status = 0;
  for (std::size_t i = 0; i < rc.images.size(); ++i) {
    std::cout << logs[i];
    if (!errors[i].empty()) {
      std::cerr << "error: " << errors[i] << "\n";
      status = 1;
    }
  }
  return status;
}

void add_common(CLI::App* sub, RunConfig& rc) {
  sub->add_option("--model", rc.model, "LRPW weight file")->required()->check(CLI::ExistingFile);
  sub->add_option("--arch", rc.arch, "architecture JSON (default: arch.json beside the weights)")
      ->check(CLI::ExistingFile);
  sub->add_option("--image", rc.images, "input image(s): PNG, JPEG or PPM")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--class", rc.class_spec, "class index, label, or 'top'");
  sub->add_option("--labels", rc.labels, "newline-delimited class labels")->check(CLI::ExistingFile);
  sub->add_option("--out", rc.out, "output directory (default: $LRP_OUT_DIR or ./lrp_out)");
  sub->add_option("--jobs", rc.jobs, "images processed concurrently (0 = all cores)");
}

void add_lrp(CLI::App* sub, RunConfig& rc) {
  sub->add_option("--rule", rc.rule_overrides,
                  "override rules on a layer range, e.g. 0-0=zb or 17-35=epsilon:1e-3");
  sub->add_option("--eps", rc.epsilon, "epsilon for the composite default");
  sub->add_option("--gamma", rc.gamma, "gamma for the composite default");
  sub->add_flag("--strict", rc.strict, "fail instead of dropping relevance at guarded denominators");
}

void add_graph(CLI::App* sub, RunConfig& rc) {
  add_lrp(sub, rc);
  sub->add_flag("--getopt-literal", rc.getopt_literal,
                "keep channels at or below mean - std instead of above it");
  sub->add_flag("!--no-getopt", rc.getopt, "skip the channel retention pass");
  sub->add_option("--aggregate", rc.aggregate, "path score: sum or min")
      ->check(CLI::IsMember({"sum", "min"}));
}

void add_render(CLI::App* sub, RunConfig& rc) {
  sub->add_option("--colormap", rc.colormap)->check(CLI::IsMember({"seismic", "gray"}));
  sub->add_flag("--overlay", rc.overlay, "blend over the input photo at alpha 0.5");
  sub->add_option("--upscale", rc.upscale)->check(CLI::IsMember({"bilinear", "nearest"}));
  sub->add_option("--format", rc.format, "png or ppm")->check(CLI::IsMember({"png", "ppm"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer-wise relevance propagation, relevance graphs and k-path analysis for CNNs"};
  app.require_subcommand(1);
  RunConfig rc;
  Handler handler = nullptr;

  auto* classify = app.add_subcommand("classify", "print the top-5 classes");
  add_common(classify, rc);
  classify->callback([&] { handler = run_classify; });

  auto* explain = app.add_subcommand("explain", "pixel relevance for one class");
  add_common(explain, rc);
  add_lrp(explain, rc);
  add_render(explain, rc);
  explain->callback([&] { handler = run_explain; });

  auto* graph = app.add_subcommand("graph", "export the channel relevance graph");
  add_common(graph, rc);
  add_graph(graph, rc);
  graph->callback([&] { handler = run_graph; });

  auto* paths = app.add_subcommand("paths", "find and export the k most relevant paths");
  add_common(paths, rc);
  add_graph(paths, rc);
  paths->add_option("--k", rc.k, "number of paths");
  paths->callback([&] { handler = run_paths; });

  auto* heatmap = app.add_subcommand("heatmap", "relevance and activation heatmaps of the top-k paths");
  add_common(heatmap, rc);
  add_graph(heatmap, rc);
  add_render(heatmap, rc);
  heatmap->add_option("--k", rc.k, "number of paths");
  heatmap->add_option("--layer", rc.layer, "'input' or a layer index N (its output is mapped)")
      ->required();
  heatmap->add_option("--kind", rc.kind)->check(CLI::IsMember({"both", "relevance", "activation"}));
  heatmap->callback([&] { handler = run_heatmap; });

  auto* deconv = app.add_subcommand("deconv", "project feature maps back to pixel space");
  add_common(deconv, rc);
  add_graph(deconv, rc);
  add_render(deconv, rc);
  deconv->add_option("--k", rc.k, "number of paths selecting channels when --channel is absent");
  deconv->add_option("--layer", rc.layer, "feature layer index")->required();
  deconv->add_option("--channel", rc.channels, "channels to keep (default: top-k path channels)");
  deconv->add_flag("--deconv-relu,!--no-deconv-relu", rc.deconv_relu,
                   "rectify between deconv layers (default on)");
  deconv->callback([&] { handler = run_deconv; });

  auto* metrics = app.add_subcommand("metrics", "MSE/SMAPE sweep over k and the chosen k");
  add_common(metrics, rc);
  add_graph(metrics, rc);
  metrics->add_option("--k-max", rc.k_max, "largest k in the sweep");
  metrics->add_option("--k-rule", rc.k_rule)->check(CLI::IsMember({"mean", "elbow"}));
  metrics->callback([&] { handler = run_metrics; });

  CLI11_PARSE(app, argc, argv);

  if (rc.out.empty()) {
    const char* env = std::getenv("LRP_OUT_DIR");
    rc.out = env && *env ? fs::path(env) : fs::path("lrp_out");
  }
  try {
    return execute(rc, handler);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

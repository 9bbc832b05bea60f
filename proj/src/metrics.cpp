#include "lrpgraph/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include "lrpgraph/errors.hpp"

namespace lrp {

namespace {

void check_pair(std::span<const float> pred, std::span<const float> act) {
  if (pred.size() != act.size()) {
    throw ShapeError("metric inputs differ in length: " + std::to_string(pred.size()) + " vs " +
                     std::to_string(act.size()));
  }
  if (pred.empty()) throw ShapeError("metric inputs are empty");
}

std::size_t argmax(const Tensor& t) {
  const auto v = t.data();
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

double mse(std::span<const float> pred, std::span<const float> act) {
  check_pair(pred, act);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - act[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

double mse(const Tensor& pred, const Tensor& act) { return mse(pred.data(), act.data()); }

double smape(std::span<const float> pred, std::span<const float> act) {
  check_pair(pred, act);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = pred[i];
    const double a = act[i];
    const double denom = std::abs(p) + std::abs(a);
    if (denom == 0.0) continue;
    acc += 2.0 * std::abs(p - a) / denom;
  }
  return 100.0 * acc / static_cast<double>(pred.size());
}

double smape(const Tensor& pred, const Tensor& act) { return smape(pred.data(), act.data()); }

KRule parse_k_rule(const std::string& name) {
  if (name == "mean") return KRule::Mean;
  if (name == "elbow") return KRule::Elbow;
  throw ConfigError("unknown k rule \"" + name + "\" (expected mean or elbow)");
}

KChoice choose_k(std::span<const double> mse_by_k, KRule rule) {
  if (mse_by_k.empty()) throw ShapeError("choose_k needs at least one row");
  if (rule == KRule::Elbow && mse_by_k.size() >= 3) {
    std::size_t best = 1;
    double best_d2 = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i + 1 < mse_by_k.size(); ++i) {
      const double d2 = mse_by_k[i - 1] - 2.0 * mse_by_k[i] + mse_by_k[i + 1];
      if (d2 > best_d2) {
        best_d2 = d2;
        best = i;
      }
    }
    return {best + 1, fmt::format("elbow: largest MSE second difference {:.6g} at k={}", best_d2,
                                  best + 1)};
  }
  double sum = 0.0;
  for (double m : mse_by_k) sum += m;
  const double mean = sum / static_cast<double>(mse_by_k.size());
  std::size_t k = mse_by_k.size();
  for (std::size_t i = 0; i < mse_by_k.size(); ++i) {
    if (mse_by_k[i] <= mean) {
      k = i + 1;
      break;
    }
  }
  std::string why = fmt::format("mean: first k with MSE {:.6g} <= sweep mean {:.6g}",
                                mse_by_k[k - 1], mean);
  if (rule == KRule::Elbow) why += " (elbow needs 3 or more rows)";
  return {k, why};
}

MetricsReport k_sweep(const Network& net, const Tensor& image, const RelevanceGraph& graph,
                      std::size_t class_index, std::size_t k_max, const SweepOptions& options) {
  if (k_max == 0) throw IndexError("k_max must be at least 1");
  const Tensor actual = forward_trace(net, image).scores();
  if (class_index >= actual.size()) {
    throw IndexError("class " + std::to_string(class_index) + " out of range");
  }
  // Top-k lists are prefixes of the top-k_max list.
  const auto search = top_k_paths(graph, k_max, options.search);

  MetricsReport report;
  report.class_index = class_index;
  report.truncated = search.truncated;
  report.rows.resize(k_max);

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto worker = [&] {
    for (std::size_t i = next++; i < k_max; i = next++) {
      try {
        const std::size_t n = std::min(i + 1, search.paths.size());
        const auto mask =
            paths_to_mask(graph, std::span<const Path>(search.paths.data(), n));
        MetricsRow row;
        row.k = i + 1;
        row.prediction = masked_forward(net, image, mask);
        row.mse = mse(row.prediction, actual);
        row.smape = smape(row.prediction, actual);
        row.predicted_class = argmax(row.prediction);
        row.class_score = row.prediction[class_index];
        report.rows[i] = std::move(row);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::size_t jobs = options.jobs ? options.jobs : std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, k_max);
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < jobs; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<double> mses;
  for (const auto& r : report.rows) mses.push_back(r.mse);
  auto choice = choose_k(mses, options.rule);
  report.chosen_k = choice.k;
  report.rationale = std::move(choice.rationale);
  return report;
}

std::string metrics_csv(const MetricsReport& report) {
  std::string out = "k,mse,smape\n";
  for (const auto& r : report.rows) out += fmt::format("{},{:.9g},{:.9g}\n", r.k, r.mse, r.smape);
  return out;
}

std::string metrics_table(const MetricsReport& report, const Network& net) {
  std::string out = fmt::format("{:>4}  {:>14}  {:>10}  {:>12}  {}\n", "k", "mse", "smape %",
                                "class score", "top class");
  for (const auto& r : report.rows) {
    out += fmt::format("{:>4}  {:>14.6g}  {:>10.4f}  {:>12.6g}  {}{}\n", r.k, r.mse, r.smape,
                       r.class_score, net.class_label(r.predicted_class),
                       r.k == report.chosen_k ? "  <- chosen" : "");
  }
  out += fmt::format("chosen k = {} ({})\n", report.chosen_k, report.rationale);
  if (report.truncated) out += "note: fewer paths than k_max; larger k reuse every path\n";
  return out;
}

}  // namespace lrp

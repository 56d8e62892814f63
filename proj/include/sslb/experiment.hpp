#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "sslb/augment.hpp"
#include "sslb/data.hpp"
#include "sslb/errors.hpp"
#include "sslb/mixmatch.hpp"
#include "sslb/model.hpp"
#include "sslb/optimizer.hpp"
#include "sslb/pbc.hpp"
#include "sslb/rng.hpp"

namespace sslb {

enum class MethodId { kSupervised, kSupervisedBalanced, kMixMatch, kMixMatchPbc };

inline constexpr MethodId kAllMethods[] = {MethodId::kSupervised, MethodId::kSupervisedBalanced,
                                           MethodId::kMixMatch, MethodId::kMixMatchPbc};

inline std::string to_string(MethodId m) {
  switch (m) {
    case MethodId::kSupervised: return "supervised";
    case MethodId::kSupervisedBalanced: return "supervised_balanced";
    case MethodId::kMixMatch: return "mixmatch";
    case MethodId::kMixMatchPbc: return "mixmatch_pbc";
  }
  return "?";
}

inline std::optional<MethodId> parse_method(std::string_view name) {
  for (MethodId m : kAllMethods) {
    if (to_string(m) == name) return m;
  }
  return std::nullopt;
}

inline bool is_semi_supervised(MethodId m) {
  return m == MethodId::kMixMatch || m == MethodId::kMixMatchPbc;
}

/// Whether the method applies the inverse-frequency class weights.
inline bool is_balanced(MethodId m) {
  return m == MethodId::kSupervisedBalanced || m == MethodId::kMixMatchPbc;
}

struct TrainingConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 12;
  MixMatchConfig mixmatch;
  ModelConfig model;
  /// total_steps is derived per run from the scenario size.
  OptimizerConfig optimizer;
};

struct RunResult {
  MethodId method = MethodId::kSupervised;
  double neg_fraction = 0.5;
  std::size_t n_l = 0;
  std::uint64_t seed = 0;
  std::vector<double> val_acc;
  double best_val_acc = 0.0;
  bool failed = false;
  std::string failure;
};

/// Endless stream of indices 0..n-1, reshuffled on every pass.
class CyclicSampler {
 public:
  CyclicSampler(std::size_t n, Rng& rng) : order_(n), rng_(&rng) {
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), *rng_);
  }

  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), *rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng* rng_;
};

/// Fraction of observations whose predicted class matches the label.
inline double evaluate_accuracy(const ModelParams& params, const LabeledSet& set) {
  if (set.empty()) return 0.0;
  std::vector<Tensor> images;
  images.reserve(set.size());
  for (const auto& o : set) images.push_back(o.image);
  const auto predicted = predicted_classes(model_forward(params, stack_images(images)));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (predicted[i] == static_cast<std::size_t>(set[i].label)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(set.size());
}

/// Optimizer steps per epoch: one pass of batch_size over all training
/// observations (labelled plus unlabelled), identical for every method.
inline std::size_t steps_per_epoch(const Scenario& sc, std::size_t batch_size) {
  const std::size_t n = sc.labelled.size() + sc.unlabelled.size();
  return std::max<std::size_t>(1, (n + batch_size - 1) / batch_size);
}

using EpochCallback = std::function<void(std::size_t epoch, double val_acc)>;

/// Trains one model on a scenario and records validation accuracy after
/// every epoch. Fully determined by (scenario, method, seed, config).
inline RunResult run_training(const Scenario& sc, MethodId method, std::uint64_t seed,
                              const TrainingConfig& config, const EpochCallback& on_epoch = {}) {
  if (config.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (config.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (sc.labelled.empty()) throw ScenarioError("scenario has no labelled observations");
  if (is_semi_supervised(method)) {
    config.mixmatch.validate();
    if (sc.unlabelled.size() == 0) throw ScenarioError("scenario has no unlabelled observations");
  }

  RunResult result;
  result.method = method;
  result.neg_fraction = sc.config.neg_fraction;
  result.n_l = sc.config.n_l;
  result.seed = seed;

  ModelConfig model_cfg = config.model;
  model_cfg.input_size = sc.labelled.front().image.dim(1);
  ModelParams params = model_init(model_cfg, seed);
  std::vector<Tensor> trainable = params.trainable();

  const auto counts = class_counts(sc.labelled, model_cfg.num_classes);
  const ClassWeightVector weights = class_weights(counts);

  const std::size_t per_epoch = steps_per_epoch(sc, config.batch_size);
  OptimizerConfig opt = config.optimizer;
  opt.total_steps = per_epoch * config.epochs;
  opt.validate();
  OptimizerState state;

  Rng rng = make_rng(seed, "train");
  CyclicSampler labelled_stream(sc.labelled.size(), rng);
  std::optional<CyclicSampler> unlabelled_stream;
  if (is_semi_supervised(method)) unlabelled_stream.emplace(sc.unlabelled.size(), rng);

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    try {
      for (std::size_t s = 0; s < per_epoch; ++s, ++step) {
        std::vector<Tensor> images;
        std::vector<std::vector<double>> labels;
        for (std::size_t idx : labelled_stream.next(config.batch_size)) {
          images.push_back(sc.labelled[idx].image);
          labels.push_back(one_hot(static_cast<std::size_t>(sc.labelled[idx].label),
                                   model_cfg.num_classes));
        }
        Tape tape;
        Tensor loss;
        if (is_semi_supervised(method)) {
          SoftBatch labelled_batch{stack_images(images), rows_to_tensor(labels)};
          std::vector<Tensor> u_images;
          for (std::size_t idx : unlabelled_stream->next(config.batch_size)) {
            u_images.push_back(sc.unlabelled.images()[idx]);
          }
          MixedBatch mixed = build_mixed_batch(params, labelled_batch, stack_images(u_images),
                                               config.mixmatch, rng);
          const double r = ramp_up(static_cast<double>(step), config.mixmatch.rampup_horizon);
          loss = method == MethodId::kMixMatchPbc
                     ? pbc_mixmatch_loss(params, mixed, weights, config.mixmatch.gamma, r, &tape,
                                         ForwardMode::kUpdateStats)
                     : mixmatch_loss_unweighted(params, mixed, config.mixmatch.gamma, r, &tape,
                                                ForwardMode::kUpdateStats);
        } else {
          for (Tensor& img : images) img = apply_transform(sample_transform(rng), img);
          Tensor pred = model_forward(params, stack_images(images), ForwardMode::kUpdateStats, &tape);
          Tensor targets = rows_to_tensor(labels);
          loss = method == MethodId::kSupervisedBalanced
                     ? weighted_cross_entropy(targets, pred, weights, &tape)
                     : ops::cross_entropy(targets, pred, {}, &tape);
        }
        if (!std::isfinite(loss.item())) {
          throw NumericError("non-finite loss at optimizer step " + std::to_string(step));
        }
        tape.backward(loss);
        adam_step(trainable, state, one_cycle_lr(step, opt), opt);
      }
    } catch (const NumericError& e) {
      result.failed = true;
      result.failure = "epoch " + std::to_string(epoch + 1) + ": " + e.what();
      break;
    }
    const double acc = evaluate_accuracy(params, sc.validation);
    result.val_acc.push_back(acc);
    if (on_epoch) on_epoch(epoch + 1, acc);
  }
  result.best_val_acc =
      result.val_acc.empty() ? 0.0 : *std::max_element(result.val_acc.begin(), result.val_acc.end());
  return result;
}

// ---------------------------------------------------------------------------
// results CSV: seed,method,neg_fraction,n_l,curve,best_val_acc,status
// The curve is semicolon-joined; status is "ok" or "failed: <reason>".

inline constexpr const char* kResultsHeader = "seed,method,neg_fraction,n_l,curve,best_val_acc,status";

namespace detail {
inline std::string fmt_num(double v, int precision = 10) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}
}  // namespace detail

inline std::string format_result_row(const RunResult& r) {
  std::ostringstream os;
  os << r.seed << ',' << to_string(r.method) << ',' << detail::fmt_num(r.neg_fraction) << ','
     << r.n_l << ',';
  for (std::size_t i = 0; i < r.val_acc.size(); ++i) {
    if (i) os << ';';
    os << detail::fmt_num(r.val_acc[i]);
  }
  os << ',' << detail::fmt_num(r.best_val_acc) << ',';
  if (r.failed) {
    std::string reason = r.failure;
    std::replace(reason.begin(), reason.end(), ',', ' ');
    os << "failed: " << reason;
  } else {
    os << "ok";
  }
  return os.str();
}

inline RunResult parse_result_row(const std::string& line) {
  const auto cols = detail::split(line, ',');
  if (cols.size() != 7) throw DatasetError("results row has " + std::to_string(cols.size()) +
                                           " columns: " + line);
  RunResult r;
  r.seed = std::stoull(cols[0]);
  auto m = parse_method(cols[1]);
  if (!m) throw DatasetError("results row: unknown method " + cols[1]);
  r.method = *m;
  r.neg_fraction = std::stod(cols[2]);
  r.n_l = std::stoul(cols[3]);
  if (!cols[4].empty()) {
    for (const auto& v : detail::split(cols[4], ';')) r.val_acc.push_back(std::stod(v));
  }
  r.best_val_acc = std::stod(cols[5]);
  if (cols[6] != "ok") {
    r.failed = true;
    r.failure = cols[6].rfind("failed: ", 0) == 0 ? cols[6].substr(8) : cols[6];
  }
  return r;
}

inline std::vector<RunResult> read_results(std::istream& is) {
  std::vector<RunResult> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line == kResultsHeader) continue;
    out.push_back(parse_result_row(line));
  }
  return out;
}

inline void write_results(std::ostream& os, const std::vector<RunResult>& results) {
  os << kResultsHeader << '\n';
  for (const auto& r : results) os << format_result_row(r) << '\n';
}

// ---------------------------------------------------------------------------
// grid

struct GridConfig {
  std::vector<MethodId> methods{std::begin(kAllMethods), std::end(kAllMethods)};
  std::vector<double> neg_fractions{0.5, 0.7, 0.8};
  std::vector<std::size_t> n_ls{10, 15, 20};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::size_t total_sample = 204;
  double val_fraction = 0.30;
  TrainingConfig training;
  std::size_t jobs = 1;
};

/// Identity of a run inside a grid.
using RunKey = std::tuple<double, std::size_t, std::uint64_t, MethodId>;

inline RunKey key_of(const RunResult& r) { return {r.neg_fraction, r.n_l, r.seed, r.method}; }

inline ScenarioConfig scenario_config(const GridConfig& grid, double neg_fraction, std::size_t n_l,
                                      std::uint64_t seed) {
  ScenarioConfig sc;
  sc.total_sample = grid.total_sample;
  sc.val_fraction = grid.val_fraction;
  sc.n_l = n_l;
  sc.neg_fraction = neg_fraction;
  sc.seed = seed;
  return sc;
}

/// Runs of the grid in canonical order (balance, n_l, seed, method).
inline std::vector<RunKey> grid_keys(const GridConfig& grid) {
  std::vector<RunKey> keys;
  for (double f : grid.neg_fractions)
    for (std::size_t n_l : grid.n_ls)
      for (std::uint64_t seed : grid.seeds)
        for (MethodId m : grid.methods) keys.emplace_back(f, n_l, seed, m);
  return keys;
}

/// Executes every run of the grid not already present in `completed`. For
/// each (balance, n_l, seed) one scenario is sampled and shared by all
/// methods. `on_result` is invoked under a lock as runs finish, in
/// completion order. The return value is in canonical grid order.
inline std::vector<RunResult> run_grid(const GridConfig& grid, const ImageDataset& neg_pool,
                                       const ImageDataset& pos_pool,
                                       const std::vector<RunResult>& completed = {},
                                       const std::function<void(const RunResult&)>& on_result = {}) {
  if (grid.methods.empty() || grid.neg_fractions.empty() || grid.n_ls.empty() || grid.seeds.empty()) {
    throw ConfigError("experiment grid is empty");
  }
  const auto keys = grid_keys(grid);
  std::map<RunKey, RunResult> done;
  for (const auto& r : completed) done[key_of(r)] = r;

  std::vector<RunKey> pending;
  for (const auto& k : keys) {
    if (!done.count(k)) pending.push_back(k);
  }

  // Scenarios are sampled up front so worker threads only read them.
  std::map<std::tuple<double, std::size_t, std::uint64_t>, Scenario> scenarios;
  for (const auto& [f, n_l, seed, m] : pending) {
    auto sk = std::make_tuple(f, n_l, seed);
    if (!scenarios.count(sk)) {
      scenarios.emplace(sk, sample_scenario(neg_pool, pos_pool, scenario_config(grid, f, n_l, seed)));
    }
  }

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= pending.size()) return;
      const auto& [f, n_l, seed, m] = pending[i];
      const Scenario& sc = scenarios.at(std::make_tuple(f, n_l, seed));
      RunResult r;
      try {
        r = run_training(sc, m, seed, grid.training);
      } catch (const std::exception& e) {
        r.method = m;
        r.neg_fraction = f;
        r.n_l = n_l;
        r.seed = seed;
        r.failed = true;
        r.failure = e.what();
      }
      std::lock_guard<std::mutex> lock(mu);
      if (on_result) on_result(r);
      done[key_of(r)] = std::move(r);
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(grid.jobs, pending.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t j = 0; j < jobs; ++j) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  std::vector<RunResult> out;
  out.reserve(keys.size());
  for (const auto& k : keys) out.push_back(done.at(k));
  return out;
}

}  // namespace sslb

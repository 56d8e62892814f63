// sslb: synthetic data, single training runs, experiment grids and reports.
//
// Exit codes: 0 success, 2 usage error (nothing written), 3 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sslb/sslb.hpp"

namespace fs = std::filesystem;
using namespace sslb;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;
constexpr std::size_t kDefaultPoolPerClass = 120;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string data;
  std::string out;
  std::string config;
  std::uint64_t seed = 1;
  std::size_t seeds = 10;
  std::string method;
  std::string nl;
  std::string neg_frac;
  std::size_t epochs = 50;
  std::size_t batch = 12;
  double lr = 1e-5;
  double weight_decay = 1e-4;
  double gamma = 100.0;
  std::size_t k = 2;
  double temperature = 0.5;
  double alpha = 0.75;
  double rampup = 3000.0;
  std::size_t image_size = 32;
  std::size_t jobs = 1;
  bool synthetic = false;
  bool resume = false;
  std::size_t per_class = 102;
  double difficulty = 0.5;
  std::uint64_t data_seed = 0;
};

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<MethodId> parse_methods(const std::string& s) {
  std::vector<MethodId> out;
  for (const auto& name : split_list(s)) {
    auto m = parse_method(name);
    if (!m) {
      throw UsageError("unknown method '" + name +
                       "' (expected supervised, supervised_balanced, mixmatch, mixmatch_pbc)");
    }
    out.push_back(*m);
  }
  if (out.empty()) throw UsageError("no method given");
  return out;
}

template <class T>
std::vector<T> parse_numbers(const std::string& s, const char* what) {
  std::vector<T> out;
  for (const auto& item : split_list(s)) {
    std::istringstream is(item);
    T v{};
    if (!(is >> v) || !is.eof()) throw UsageError(std::string("bad value for ") + what + ": " + item);
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(std::string("no value given for ") + what);
  return out;
}

fs::path default_out_root() {
  if (const char* env = std::getenv("SSLB_OUT_DIR"); env && *env) return env;
  return "sslb_out";
}

fs::path out_dir(const Options& o) { return o.out.empty() ? default_out_root() : fs::path(o.out); }

TrainingConfig training_config(const Options& o) {
  TrainingConfig t;
  t.epochs = o.epochs;
  t.batch_size = o.batch;
  t.mixmatch.k = o.k;
  t.mixmatch.temperature = o.temperature;
  t.mixmatch.alpha = o.alpha;
  t.mixmatch.gamma = o.gamma;
  t.mixmatch.rampup_horizon = o.rampup;
  t.optimizer.max_lr = o.lr;
  t.optimizer.weight_decay = o.weight_decay;
  t.model.input_size = o.image_size;
  return t;
}

void validate_common(const Options& o) {
  if (o.epochs < 1) throw UsageError("--epochs must be >= 1");
  if (o.batch < 1) throw UsageError("--batch must be >= 1");
  if (o.image_size < 8) throw UsageError("--image-size must be >= 8");
  if (o.per_class < 1) throw UsageError("--per-class must be >= 1");
  if (!(o.difficulty > 0.0 && o.difficulty <= 1.0)) throw UsageError("--difficulty must lie in (0, 1]");
  if (o.data.empty() == !o.synthetic) throw UsageError("give exactly one of --data or --synthetic");
  try {
    auto t = training_config(o);
    t.mixmatch.validate();
    t.optimizer.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

ImageDataset load_data(const Options& o) {
  if (o.synthetic) return generate_synthetic(o.data_seed, o.per_class, o.image_size, o.difficulty);
  ImageDataset ds = load_image_directory(o.data, o.image_size, &std::cerr);
  if (ds.skipped) std::cerr << "skipped " << ds.skipped << " unreadable file(s)\n";
  return ds;
}

// Keys that change results; the echo of these reproduces a run exactly.
std::vector<std::pair<std::string, std::string>> resolved(const Options& o, const std::string& cmd) {
  std::vector<std::pair<std::string, std::string>> kv;
  auto add = [&](const char* k, const std::string& v) { kv.emplace_back(k, v); };
  if (cmd == "synth") {
    add("seed", std::to_string(o.seed));
    add("per-class", std::to_string(o.per_class));
    add("image-size", std::to_string(o.image_size));
    add("difficulty", num(o.difficulty));
    return kv;
  }
  if (o.synthetic) {
    add("synthetic", "true");
    add("per-class", std::to_string(o.per_class));
    add("difficulty", num(o.difficulty));
    add("data-seed", std::to_string(o.data_seed));
  } else {
    add("data", fs::absolute(o.data).lexically_normal().string());
  }
  add("image-size", std::to_string(o.image_size));
  add("method", o.method);
  add("nl", o.nl);
  add("neg-frac", o.neg_frac);
  add("seed", std::to_string(o.seed));
  if (cmd == "experiment") add("seeds", std::to_string(o.seeds));
  add("epochs", std::to_string(o.epochs));
  add("batch", std::to_string(o.batch));
  add("lr", num(o.lr));
  add("weight-decay", num(o.weight_decay));
  add("gamma", num(o.gamma));
  add("k", std::to_string(o.k));
  add("temperature", num(o.temperature));
  add("alpha", num(o.alpha));
  add("rampup", num(o.rampup));
  return kv;
}

std::string render_config(const std::vector<std::pair<std::string, std::string>>& kv) {
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << '=' << v << '\n';
  return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DatasetError("cannot write " + path.string());
  f << text;
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

// Turns "key=value" lines into argv tokens. Blank lines and '#' comments
// are ignored; boolean flags accept true/false.
std::vector<std::string> config_file_args(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot read config file " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(f, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config line without '=': " + line);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "synthetic" || key == "resume") {
      if (value == "true" || value == "1") out.push_back("--" + key);
      continue;
    }
    out.push_back("--" + key);
    out.push_back(value);
  }
  return out;
}

std::optional<std::string> find_config_path(const std::vector<std::string>& args) {
  std::optional<std::string> path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  return path;
}

// ---------------------------------------------------------------------------

int cmd_synth(const Options& o) {
  if (o.per_class < 1) throw UsageError("--per-class must be >= 1");
  if (o.image_size < 4) throw UsageError("--image-size must be >= 4");
  if (!(o.difficulty > 0.0 && o.difficulty <= 1.0)) throw UsageError("--difficulty must lie in (0, 1]");
  const fs::path dir = o.out.empty() ? default_out_root() / "synthetic" : fs::path(o.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir) || !std::ofstream(dir / "synth.config")) {
    throw UsageError("cannot write to " + dir.string());
  }
  ImageDataset ds = generate_synthetic(o.seed, o.per_class, o.image_size, o.difficulty);
  write_dataset_directory(ds, dir);
  write_file(dir / "synth.config", render_config(resolved(o, "synth")));
  std::cout << "wrote " << ds.size() << " images to " << dir.string() << '\n';
  return 0;
}

void append_result(const fs::path& path, const RunResult& r) {
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  std::ofstream f(path, std::ios::app | std::ios::binary);
  if (!f) throw DatasetError("cannot write " + path.string());
  if (fresh) f << kResultsHeader << '\n';
  f << format_result_row(r) << '\n';
  f.flush();
}

int cmd_train(Options o) {
  if (o.method.empty()) o.method = "mixmatch_pbc";
  if (o.nl.empty()) o.nl = "20";
  if (o.neg_frac.empty()) o.neg_frac = "0.8";
  validate_common(o);
  const auto methods = parse_methods(o.method);
  const auto n_ls = parse_numbers<std::size_t>(o.nl, "--nl");
  const auto fracs = parse_numbers<double>(o.neg_frac, "--neg-frac");
  if (methods.size() != 1 || n_ls.size() != 1 || fracs.size() != 1) {
    throw UsageError("train takes a single --method, --nl and --neg-frac");
  }
  ScenarioConfig scfg;
  scfg.n_l = n_ls[0];
  scfg.neg_fraction = fracs[0];
  scfg.seed = o.seed;
  try {
    scfg.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }

  const fs::path dir = out_dir(o);
  ImageDataset ds = load_data(o);
  Scenario sc = sample_scenario(ds, scfg);
  fs::create_directories(dir);
  write_file(dir / "train.config", render_config(resolved(o, "train")));
  {
    std::ofstream m(dir / ("scenario_seed" + std::to_string(o.seed) + ".txt"));
    write_manifest(sc, m);
  }
  RunResult r = run_training(sc, methods[0], o.seed, training_config(o),
                             [](std::size_t epoch, double acc) {
                               std::cout << "epoch " << epoch << " val_acc " << std::fixed
                                         << std::setprecision(4) << acc << std::endl;
                             });
  append_result(dir / "results.csv", r);
  if (r.failed) {
    std::cerr << "run failed: " << r.failure << '\n';
    std::cout << "BEST " << std::fixed << std::setprecision(4) << r.best_val_acc << '\n';
    return kExitRuntime;
  }
  std::cout << "BEST " << std::fixed << std::setprecision(4) << r.best_val_acc << '\n';
  return 0;
}

void write_reports(const fs::path& dir, const std::vector<RunResult>& results, std::size_t expected_seeds) {
  std::vector<MethodId> methods;
  for (const auto& r : results) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  }
  SummaryTable t = summarize(results, applicable_comparisons(methods), expected_seeds);
  std::ostringstream summary, gains, text;
  write_summary_csv(summary, t);
  write_gains_csv(gains, t);
  render_text(text, t);
  write_file(dir / "summary.csv", summary.str());
  write_file(dir / "gains.csv", gains.str());
  write_file(dir / "summary.txt", text.str());
  std::cout << text.str();
}

int cmd_experiment(Options o) {
  if (o.method.empty()) o.method = "supervised,supervised_balanced,mixmatch,mixmatch_pbc";
  if (o.nl.empty()) o.nl = "10,15,20";
  if (o.neg_frac.empty()) o.neg_frac = "0.5,0.7,0.8";
  validate_common(o);
  if (o.seeds < 1) throw UsageError("--seeds must be >= 1");
  if (o.jobs < 1) throw UsageError("--jobs must be >= 1");

  GridConfig grid;
  grid.methods = parse_methods(o.method);
  grid.n_ls = parse_numbers<std::size_t>(o.nl, "--nl");
  grid.neg_fractions = parse_numbers<double>(o.neg_frac, "--neg-frac");
  grid.seeds.clear();
  for (std::size_t i = 0; i < o.seeds; ++i) grid.seeds.push_back(o.seed + i);
  grid.training = training_config(o);
  grid.jobs = o.jobs;
  for (double f : grid.neg_fractions) {
    for (std::size_t n_l : grid.n_ls) {
      try {
        scenario_config(grid, f, n_l, 0).validate();
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
    }
  }

  const fs::path dir = out_dir(o);
  const fs::path results_path = dir / "results.csv";
  const fs::path config_path = dir / "experiment.config";
  const std::string config_text = render_config(resolved(o, "experiment"));

  std::vector<RunResult> completed;
  if (o.resume && fs::exists(config_path)) {
    if (read_file(config_path) != config_text) {
      std::cerr << "error: --resume with a different configuration than " << config_path.string()
                << "\n--- existing\n"
                << read_file(config_path) << "--- requested\n"
                << config_text;
      return kExitRuntime;
    }
    if (fs::exists(results_path)) {
      std::ifstream f(results_path);
      completed = read_results(f);
    }
  }

  ImageDataset ds = load_data(o);
  ImageDataset neg = filter_class(ds, kNegative), pos = filter_class(ds, kPositive);
  fs::create_directories(dir);
  write_file(config_path, config_text);
  if (!o.resume || completed.empty()) write_file(results_path, std::string(kResultsHeader) + "\n");

  const std::size_t total = grid_keys(grid).size();
  std::size_t finished = completed.size();
  if (finished) std::cout << "resuming: " << finished << " of " << total << " runs already complete\n";
  auto results = run_grid(grid, neg, pos, completed, [&](const RunResult& r) {
    append_result(results_path, r);
    ++finished;
    std::cout << '[' << finished << '/' << total << "] " << to_string(r.method) << " neg="
              << r.neg_fraction << " n_l=" << r.n_l << " seed=" << r.seed << " best="
              << std::fixed << std::setprecision(4) << r.best_val_acc << std::defaultfloat
              << (r.failed ? " FAILED: " + r.failure : std::string()) << std::endl;
  });

  std::ostringstream canonical;
  write_results(canonical, results);
  write_file(results_path, canonical.str());
  write_reports(dir, results, grid.seeds.size());
  return 0;
}

int cmd_report(const Options& o) {
  const fs::path dir = out_dir(o);
  const fs::path results_path = dir / "results.csv";
  if (!fs::exists(results_path)) throw UsageError("no results.csv in " + dir.string());
  std::ifstream f(results_path);
  write_reports(dir, read_results(f), 0);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  Options o;
  CLI::App app{"sslb: semi-supervised training with class-balance correction", "sslb"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  auto* synth = app.add_subcommand("synth", "generate a synthetic two-class image dataset");
  auto* train = app.add_subcommand("train", "train one model on one sampled scenario");
  auto* experiment = app.add_subcommand("experiment", "run the method x balance x n_l x seed grid");
  auto* report = app.add_subcommand("report", "rebuild summary tables from results.csv");
  for (auto* sub : {synth, train, experiment, report}) {
    sub->add_option("--out", o.out, "output directory (default $SSLB_OUT_DIR or ./sslb_out)");
    sub->add_option("--config", o.config, "key=value file; command-line flags take precedence");
  }
  synth->add_option("--seed", o.seed, "generator seed");
  synth->add_option("--per-class", o.per_class, "images per class");
  synth->add_option("--image-size,--size", o.image_size, "side length in pixels");
  synth->add_option("--difficulty", o.difficulty, "in (0, 1]; small is easy, 1 is hard");
  std::vector<CLI::Option*> pool_size_opts;
  for (auto* sub : {train, experiment}) {
    sub->add_option("--data", o.data, "dataset root with one subdirectory per class");
    sub->add_flag("--synthetic", o.synthetic, "use generated data instead of --data");
    pool_size_opts.push_back(
        sub->add_option("--per-class", o.per_class, "synthetic pool images per class (default 120)"));
    sub->add_option("--difficulty", o.difficulty, "synthetic difficulty in (0, 1]");
    sub->add_option("--data-seed", o.data_seed, "synthetic generator seed");
    sub->add_option("--image-size", o.image_size, "model input side length");
    sub->add_option("--seed", o.seed, "run seed (experiment: first seed)");
    sub->add_option("--epochs", o.epochs, "training epochs");
    sub->add_option("--batch", o.batch, "batch size");
    sub->add_option("--lr", o.lr, "peak learning rate");
    sub->add_option("--weight-decay", o.weight_decay, "decoupled weight decay");
    sub->add_option("--gamma", o.gamma, "unlabelled loss weight");
    sub->add_option("--k", o.k, "augmentations per unlabelled image");
    sub->add_option("--temperature", o.temperature, "sharpening temperature");
    sub->add_option("--alpha", o.alpha, "MixUp Beta parameter");
    sub->add_option("--rampup", o.rampup, "unlabelled weight ramp-up horizon in steps");
  }
  train->add_option("--method", o.method, "supervised|supervised_balanced|mixmatch|mixmatch_pbc");
  train->add_option("--nl", o.nl, "labelled observations");
  train->add_option("--neg-frac", o.neg_frac, "negative share of the labelled set");
  experiment->add_option("--method", o.method, "comma-separated methods (default all)");
  experiment->add_option("--nl", o.nl, "comma-separated labelled sizes (default 10,15,20)");
  experiment->add_option("--neg-frac", o.neg_frac, "comma-separated negative shares (default 0.5,0.7,0.8)");
  experiment->add_option("--seeds", o.seeds, "number of seeds");
  experiment->add_option("--jobs", o.jobs, "parallel runs");
  experiment->add_flag("--resume", o.resume, "skip runs already in results.csv");

  try {
    if (auto path = find_config_path(args); path && !args.empty()) {
      auto extra = config_file_args(*path);
      args.insert(args.begin() + 1, extra.begin(), extra.end());
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    // A scenario can need up to 109 observations of one class, more than
    // the 102 per class that synth writes by default.
    if (!synth->parsed() && pool_size_opts[0]->count() + pool_size_opts[1]->count() == 0) {
      o.per_class = kDefaultPoolPerClass;
    }
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(o);
    if (train->parsed()) return cmd_train(o);
    if (experiment->parsed()) return cmd_experiment(o);
    return cmd_report(o);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

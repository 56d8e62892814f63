#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sslb/errors.hpp"
#include "sslb/image_io.hpp"
#include "sslb/rng.hpp"
#include "sslb/tensor.hpp"

namespace sslb {

/// Class 0 is the negative (no finding) class, class 1 the positive one.
inline constexpr int kNegative = 0;
inline constexpr int kPositive = 1;
inline constexpr std::size_t kNumClasses = 2;

struct Observation {
  std::string id;
  Tensor image;  // [3, s, s], values in [0,1]
  int label = kNegative;
};

using LabeledSet = std::vector<Observation>;

struct ImageDataset {
  std::string source;
  LabeledSet observations;
  /// Files that could not be decoded while loading.
  std::size_t skipped = 0;

  std::size_t size() const { return observations.size(); }
};

inline std::vector<std::size_t> class_counts(const LabeledSet& set,
                                             std::size_t classes = kNumClasses) {
  std::vector<std::size_t> counts(classes, 0);
  for (const auto& obs : set) counts.at(static_cast<std::size_t>(obs.label)) += 1;
  return counts;
}

/// Observations of one class, in dataset order.
inline ImageDataset filter_class(const ImageDataset& ds, int label) {
  ImageDataset out;
  out.source = ds.source;
  for (const auto& obs : ds.observations) {
    if (obs.label == label) out.observations.push_back(obs);
  }
  return out;
}

/// Images without labels as seen by a trainer. The true labels are kept for
/// analysis only and are reachable solely through hidden_labels().
class UnlabeledSet {
 public:
  UnlabeledSet() = default;

  std::size_t size() const { return images_.size(); }
  const std::vector<Tensor>& images() const { return images_; }
  const std::vector<std::string>& ids() const { return ids_; }

  /// Analysis accessor; never used by training code.
  const std::vector<int>& hidden_labels() const { return hidden_; }

  friend UnlabeledSet strip_labels(const LabeledSet& set);

 private:
  std::vector<Tensor> images_;
  std::vector<std::string> ids_;
  std::vector<int> hidden_;
};

inline UnlabeledSet strip_labels(const LabeledSet& set) {
  UnlabeledSet out;
  for (const auto& obs : set) {
    out.images_.push_back(obs.image);
    out.ids_.push_back(obs.id);
    out.hidden_.push_back(obs.label);
  }
  return out;
}

// ---------------------------------------------------------------------------
// synthetic data

namespace detail {
inline double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

inline Tensor replicate_gray(const std::vector<double>& plane, std::size_t size) {
  std::vector<double> values;
  values.reserve(3 * plane.size());
  for (int c = 0; c < 3; ++c) values.insert(values.end(), plane.begin(), plane.end());
  return Tensor({3, size, size}, std::move(values));
}
}  // namespace detail

/// Noise and jitter knobs derived from a difficulty in (0, 1].
struct SyntheticStyle {
  double background = 0.15;
  double amplitude = 0.6;
  double single_sigma = 0.12;   // class 0 blob width, fraction of the side
  double pair_sigma = 0.085;    // class 1 blob width; same total mass as class 0
  double pair_offset = 0.17;    // centre-to-blob distance for class 1
  double jitter = 0.0;
  double noise = 0.0;

  static SyntheticStyle for_difficulty(double difficulty) {
    SyntheticStyle s;
    s.jitter = 0.12 * difficulty;
    s.noise = 0.03 + 0.45 * difficulty;
    return s;
  }
};

/// Class 0: one centred Gaussian blob. Class 1: two blobs placed
/// symmetrically about the centre at a random angle. Both classes carry the
/// same blob mass; difficulty raises pixel noise and position jitter. Pixel
/// values are quantized to 8 bits so a dataset round-trips through image
/// files exactly.
inline ImageDataset generate_synthetic(std::uint64_t seed, std::size_t n_per_class,
                                       std::size_t size, double difficulty) {
  if (n_per_class < 1) throw ConfigError("generate_synthetic: n_per_class must be >= 1");
  if (!(difficulty > 0.0 && difficulty <= 1.0)) {
    throw ConfigError("generate_synthetic: difficulty must be in (0,1]");
  }
  if (size < 4) throw ConfigError("generate_synthetic: size must be >= 4");
  const SyntheticStyle style = SyntheticStyle::for_difficulty(difficulty);
  Rng rng = make_rng(seed, "synthetic");
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, 3.14159265358979323846);

  ImageDataset ds;
  ds.source = "synthetic(seed=" + std::to_string(seed) + ",difficulty=" +
              [&] { std::ostringstream os; os << difficulty; return os.str(); }() + ")";
  for (int label : {kNegative, kPositive}) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      const double cx = style.jitter * unit(rng);
      const double cy = style.jitter * unit(rng);
      std::vector<std::pair<double, double>> centres;
      double sigma = style.single_sigma;
      if (label == kNegative) {
        centres.emplace_back(cx, cy);
      } else {
        const double th = angle(rng);
        const double dx = style.pair_offset * std::cos(th), dy = style.pair_offset * std::sin(th);
        centres.emplace_back(cx + dx, cy + dy);
        centres.emplace_back(cx - dx, cy - dy);
        sigma = style.pair_sigma;
      }
      std::vector<double> plane(size * size);
      for (std::size_t r = 0; r < size; ++r) {
        const double v = (static_cast<double>(r) + 0.5) / static_cast<double>(size) - 0.5;
        for (std::size_t c = 0; c < size; ++c) {
          const double u = (static_cast<double>(c) + 0.5) / static_cast<double>(size) - 0.5;
          double value = style.background;
          for (const auto& [bx, by] : centres) {
            const double d2 = (u - bx) * (u - bx) + (v - by) * (v - by);
            value += style.amplitude * std::exp(-d2 / (2.0 * sigma * sigma));
          }
          value += style.noise * noise(rng);
          plane[r * size + c] = detail::quantize8(value);
        }
      }
      std::ostringstream id;
      id << (label == kNegative ? "neg" : "pos") << "/syn_" << std::setw(5) << std::setfill('0')
         << i << ".pgm";
      ds.observations.push_back({id.str(), detail::replicate_gray(plane, size), label});
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// directory layout: <root>/<class_dir>/<image files>; the lexicographically
// first class directory is class 0.

inline ImageDataset load_image_directory(const std::filesystem::path& root, std::size_t target_size,
                                         std::ostream* warnings = nullptr) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DatasetError(root.string() + " is not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.size() != kNumClasses) {
    throw DatasetError(root.string() + ": expected 2 class subdirectories, found " +
                       std::to_string(class_dirs.size()));
  }
  ImageDataset ds;
  ds.source = root.string();
  for (std::size_t label = 0; label < class_dirs.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[label])) {
      if (entry.is_regular_file() && is_supported_image(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::size_t loaded = 0;
    for (const auto& file : files) {
      RawImage raw;
      try {
        raw = read_image(file);
      } catch (const DatasetError& e) {
        ds.skipped += 1;
        if (warnings) *warnings << "warning: skipping " << e.what() << '\n';
        continue;
      }
      std::vector<double> values;
      values.reserve(3 * target_size * target_size);
      for (std::size_t c = 0; c < 3; ++c) {
        auto plane = resize_bilinear(raw, raw.channels == 1 ? 0 : c, target_size);
        values.insert(values.end(), plane.begin(), plane.end());
      }
      ds.observations.push_back({class_dirs[label].filename().string() + "/" +
                                     file.filename().string(),
                                 Tensor({3, target_size, target_size}, std::move(values)),
                                 static_cast<int>(label)});
      ++loaded;
    }
    if (loaded == 0) {
      throw DatasetError(class_dirs[label].string() + ": no readable images");
    }
  }
  return ds;
}

/// Writes each observation as an 8-bit grayscale PGM (channel 0) at
/// <root>/<id>. Ids must be of the form <class_dir>/<file>.
inline void write_dataset_directory(const ImageDataset& ds, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  for (const auto& obs : ds.observations) {
    const fs::path path = root / obs.id;
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw DatasetError("cannot create " + path.parent_path().string() + ": " + ec.message());
    const std::size_t s = obs.image.dim(1);
    RawImage raw;
    raw.width = raw.height = s;
    raw.channels = 1;
    raw.pixels.resize(s * s);
    for (std::size_t i = 0; i < s * s; ++i) {
      raw.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(obs.image[i], 0.0, 1.0) * 255.0));
    }
    write_pgm(path, raw);
  }
}

// ---------------------------------------------------------------------------
// imbalance scenarios

struct ScenarioConfig {
  std::size_t total_sample = 204;
  double val_fraction = 0.30;
  std::size_t n_l = 20;
  /// Share of negatives in the labelled split.
  double neg_fraction = 0.8;
  std::uint64_t seed = 0;

  /// Negatives round half up; the remainder are positives.
  std::size_t labelled_negatives() const {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n_l) * neg_fraction + 0.5 + 1e-9));
  }
  std::size_t labelled_positives() const { return n_l - std::min(n_l, labelled_negatives()); }
  std::size_t validation_size() const {
    return static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(total_sample) + 1e-9));
  }

  void validate() const {
    if (!(neg_fraction >= 0.0 && neg_fraction <= 1.0)) throw ConfigError("neg_fraction outside [0,1]");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction outside (0,1)");
    if (labelled_negatives() < 1 || labelled_positives() < 1 || labelled_negatives() > n_l) {
      throw ConfigError("n_l=" + std::to_string(n_l) + " with negative share " +
                        std::to_string(neg_fraction) + " leaves a class without labelled data");
    }
    if (n_l + validation_size() > total_sample) {
      throw ConfigError("n_l plus validation exceeds total_sample");
    }
  }
};

struct Scenario {
  ScenarioConfig config;
  LabeledSet labelled;
  UnlabeledSet unlabelled;
  LabeledSet validation;
};

/// Draws one scenario of total_sample observations without replacement:
///   1. floor(val_fraction·total_sample) form a validation set balanced to
///      within one observation (the extra one is a negative);
///   2. the labelled split takes the rounded negative share of n_l;
///   3. the rest is unlabelled, also balanced to within one (extra negative).
/// The per-class totals follow from these counts, so imbalance lives only in
/// the labelled split.
inline Scenario sample_scenario(const ImageDataset& neg_pool, const ImageDataset& pos_pool,
                                const ScenarioConfig& config) {
  config.validate();
  Rng rng = make_rng(config.seed, "scenario");
  const std::size_t val = config.validation_size();
  const std::size_t val_neg = (val + 1) / 2, val_pos = val / 2;
  const std::size_t l_neg = config.labelled_negatives(), l_pos = config.labelled_positives();
  const std::size_t u = config.total_sample - val - config.n_l;
  const std::size_t u_neg = (u + 1) / 2, u_pos = u / 2;
  const std::size_t neg_total = val_neg + l_neg + u_neg;
  const std::size_t pos_total = val_pos + l_pos + u_pos;

  auto check = [](const char* what, std::size_t need, std::size_t have) {
    if (need > have) {
      throw ScenarioError(std::string(what) + ": need " + std::to_string(need) + ", have " +
                          std::to_string(have) + " (short by " + std::to_string(need - have) + ")");
    }
  };
  check("negative pool", neg_total, neg_pool.size());
  check("positive pool", pos_total, pos_pool.size());

  auto draw = [&rng](const ImageDataset& pool, std::size_t n) {
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    LabeledSet out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(pool.observations[idx[i]]);
    return out;
  };
  LabeledSet neg = draw(neg_pool, neg_total);
  LabeledSet pos = draw(pos_pool, pos_total);

  Scenario sc;
  sc.config = config;
  auto take = [](LabeledSet& from, std::size_t& cursor, std::size_t n, LabeledSet& into) {
    for (std::size_t i = 0; i < n; ++i) into.push_back(from[cursor++]);
  };
  std::size_t ni = 0, pi = 0;
  take(neg, ni, val_neg, sc.validation);
  take(pos, pi, val_pos, sc.validation);
  take(neg, ni, l_neg, sc.labelled);
  take(pos, pi, l_pos, sc.labelled);
  LabeledSet rest;
  take(neg, ni, neg.size() - ni, rest);
  take(pos, pi, pos.size() - pi, rest);
  std::shuffle(rest.begin(), rest.end(), rng);
  sc.unlabelled = strip_labels(rest);
  return sc;
}

/// Splits a mixed-class dataset into pools and samples a scenario.
inline Scenario sample_scenario(const ImageDataset& dataset, const ScenarioConfig& config) {
  return sample_scenario(filter_class(dataset, kNegative), filter_class(dataset, kPositive), config);
}

// Manifest: a plain-text record of a scenario, sufficient to rebuild it from
// the same pools.
//   sslb-scenario 1
//   seed <seed>
//   total_sample <n>
//   val_fraction <f>
//   n_l <n>
//   neg_fraction <f>
//   labelled_counts <neg> <pos>
//   split <name> <count>      followed by <count> lines "<label> <id>"

inline void write_manifest(const Scenario& sc, std::ostream& os) {
  const auto& c = sc.config;
  os << std::setprecision(17);
  os << "sslb-scenario 1\n"
     << "seed " << c.seed << '\n'
     << "total_sample " << c.total_sample << '\n'
     << "val_fraction " << c.val_fraction << '\n'
     << "n_l " << c.n_l << '\n'
     << "neg_fraction " << c.neg_fraction << '\n'
     << "labelled_counts " << c.labelled_negatives() << ' ' << c.labelled_positives() << '\n';
  auto split = [&os](const char* name, const LabeledSet& set) {
    os << "split " << name << ' ' << set.size() << '\n';
    for (const auto& o : set) os << o.label << ' ' << o.id << '\n';
  };
  split("validation", sc.validation);
  split("labelled", sc.labelled);
  os << "split unlabelled " << sc.unlabelled.size() << '\n';
  for (std::size_t i = 0; i < sc.unlabelled.size(); ++i) {
    os << sc.unlabelled.hidden_labels()[i] << ' ' << sc.unlabelled.ids()[i] << '\n';
  }
}

inline Scenario read_manifest(std::istream& is, const ImageDataset& dataset) {
  std::map<std::string, const Observation*> by_id;
  for (const auto& o : dataset.observations) by_id[o.id] = &o;
  Scenario sc;
  std::string line, key;
  if (!std::getline(is, line) || line.rfind("sslb-scenario", 0) != 0) {
    throw ScenarioError("manifest: bad header");
  }
  LabeledSet unlabelled;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ls >> key;
    if (key == "seed") ls >> sc.config.seed;
    else if (key == "total_sample") ls >> sc.config.total_sample;
    else if (key == "val_fraction") ls >> sc.config.val_fraction;
    else if (key == "n_l") ls >> sc.config.n_l;
    else if (key == "neg_fraction") ls >> sc.config.neg_fraction;
    else if (key == "labelled_counts") continue;
    else if (key == "split") {
      std::string name;
      std::size_t count = 0;
      ls >> name >> count;
      LabeledSet* target = name == "validation" ? &sc.validation
                           : name == "labelled" ? &sc.labelled
                           : name == "unlabelled" ? &unlabelled
                                                  : nullptr;
      if (target == nullptr) throw ScenarioError("manifest: unknown split " + name);
      for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(is, line)) throw ScenarioError("manifest: truncated split " + name);
        const auto space = line.find(' ');
        const std::string id = line.substr(space + 1);
        auto it = by_id.find(id);
        if (it == by_id.end()) throw ScenarioError("manifest: unknown observation " + id);
        target->push_back(*it->second);
      }
    } else {
      throw ScenarioError("manifest: unknown key " + key);
    }
  }
  sc.unlabelled = strip_labels(unlabelled);
  return sc;
}

}  // namespace sslb

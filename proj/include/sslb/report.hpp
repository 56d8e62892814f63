#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "sslb/errors.hpp"
#include "sslb/experiment.hpp"
#include "sslb/stats.hpp"

namespace sslb {

/// gain = mean(better) − mean(baseline).
struct Comparison {
  MethodId better;
  MethodId baseline;
  std::string label;
};

inline std::vector<Comparison> default_comparisons() {
  return {{MethodId::kMixMatchPbc, MethodId::kSupervised, "MM+PBC vs. No MM"},
          {MethodId::kMixMatchPbc, MethodId::kMixMatch, "MM+PBC vs. MM"}};
}

/// The default comparisons whose methods both appear in `methods`.
inline std::vector<Comparison> applicable_comparisons(const std::vector<MethodId>& methods) {
  std::vector<Comparison> out;
  auto has = [&](MethodId m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };
  for (const auto& c : default_comparisons()) {
    if (has(c.better) && has(c.baseline)) out.push_back(c);
  }
  return out;
}

struct CellSummary {
  MethodId method;
  double neg_fraction;
  std::size_t n_l;
  double mean = 0.0;
  double std = 0.0;
  /// Successful runs entering mean/std.
  std::size_t n = 0;
  std::size_t failed = 0;
  std::map<std::uint64_t, double> by_seed;
};

struct GainRow {
  double neg_fraction;
  std::size_t n_l;
  std::string comparison;
  double gain = 0.0;
  double p_value = std::numeric_limits<double>::quiet_NaN();
  bool significant = false;
  std::size_t pairs = 0;
};

struct SummaryTable {
  std::vector<CellSummary> cells;
  std::vector<GainRow> gains;
};

/// Per-cell means and sample deviations over seeds, plus paired gains
/// flagged significant when the signed-rank p-value is below `p_threshold`.
/// Every cell must hold exactly `expected_seeds` runs (0 = infer from the
/// largest cell).
inline SummaryTable summarize(const std::vector<RunResult>& results,
                              const std::vector<Comparison>& comparisons,
                              std::size_t expected_seeds = 0, double p_threshold = 0.1) {
  using CellKey = std::tuple<double, std::size_t, MethodId>;
  std::map<CellKey, CellSummary> cells;
  std::set<std::pair<double, std::size_t>> configs;
  for (const auto& r : results) {
    CellKey k{r.neg_fraction, r.n_l, r.method};
    auto it = cells.find(k);
    if (it == cells.end()) {
      CellSummary c;
      c.method = r.method;
      c.neg_fraction = r.neg_fraction;
      c.n_l = r.n_l;
      it = cells.emplace(k, c).first;
    }
    if (r.failed) {
      it->second.failed += 1;
    } else {
      it->second.by_seed[r.seed] = r.best_val_acc;
    }
    configs.emplace(r.neg_fraction, r.n_l);
  }
  if (expected_seeds == 0) {
    for (const auto& [k, c] : cells) expected_seeds = std::max(expected_seeds, c.by_seed.size() + c.failed);
  }

  std::vector<std::string> problems;
  auto describe = [](MethodId m, double f, std::size_t n_l) {
    std::ostringstream os;
    os << '(' << to_string(m) << ", neg=" << f << ", n_l=" << n_l << ')';
    return os.str();
  };
  for (auto& [k, c] : cells) {
    if (c.by_seed.size() + c.failed != expected_seeds) {
      problems.push_back(describe(c.method, c.neg_fraction, c.n_l) + " has " +
                         std::to_string(c.by_seed.size() + c.failed) + " of " +
                         std::to_string(expected_seeds) + " runs");
    }
  }
  for (const auto& [f, n_l] : configs) {
    for (const auto& cmp : comparisons) {
      for (MethodId m : {cmp.better, cmp.baseline}) {
        if (!cells.count({f, n_l, m})) problems.push_back(describe(m, f, n_l) + " missing");
      }
    }
  }
  if (!problems.empty()) {
    std::string msg = "summary: incomplete results:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw SummaryError(msg);
  }

  SummaryTable table;
  for (auto& [k, c] : cells) {
    std::vector<double> acc;
    for (const auto& [seed, v] : c.by_seed) acc.push_back(v);
    c.n = acc.size();
    c.mean = sample_mean(acc);
    c.std = sample_std(acc);
    table.cells.push_back(c);
  }
  for (const auto& [f, n_l] : configs) {
    for (const auto& cmp : comparisons) {
      const CellSummary& better = cells.at({f, n_l, cmp.better});
      const CellSummary& base = cells.at({f, n_l, cmp.baseline});
      GainRow row;
      row.neg_fraction = f;
      row.n_l = n_l;
      row.comparison = cmp.label;
      row.gain = better.mean - base.mean;
      std::vector<double> a, b;
      for (const auto& [seed, v] : better.by_seed) {
        auto it = base.by_seed.find(seed);
        if (it != base.by_seed.end()) {
          a.push_back(v);
          b.push_back(it->second);
        }
      }
      row.pairs = a.size();
      try {
        row.p_value = wilcoxon_signed_rank(a, b).p_value;
        row.significant = row.p_value < p_threshold;
      } catch (const InsufficientDataError&) {
        row.significant = false;
      }
      table.gains.push_back(row);
    }
  }
  return table;
}

namespace detail {
inline std::string pct(double f) {
  std::ostringstream os;
  os << std::lround(f * 100.0);
  return os.str();
}

inline std::string fixed(double v, int digits = 4) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}
}  // namespace detail

inline constexpr const char* kSummaryHeader = "ssdl,neg_pct,pos_pct,lb,method,n_l,mean,std,n,failed";
inline constexpr const char* kGainsHeader = "neg_pct,pos_pct,comparison,n_l,gain,p_value,significant,pairs";

inline void write_summary_csv(std::ostream& os, const SummaryTable& t) {
  os << kSummaryHeader << '\n';
  for (const auto& c : t.cells) {
    os << (is_semi_supervised(c.method) ? "Yes" : "No") << ',' << detail::pct(c.neg_fraction) << ','
       << detail::pct(1.0 - c.neg_fraction) << ',' << (is_balanced(c.method) ? "Yes" : "No") << ','
       << to_string(c.method) << ',' << c.n_l << ',' << detail::fixed(c.mean) << ','
       << detail::fixed(c.std) << ',' << c.n << ',' << c.failed << '\n';
  }
}

inline void write_gains_csv(std::ostream& os, const SummaryTable& t) {
  os << kGainsHeader << '\n';
  for (const auto& g : t.gains) {
    os << detail::pct(g.neg_fraction) << ',' << detail::pct(1.0 - g.neg_fraction) << ','
       << g.comparison << ',' << g.n_l << ',' << (g.gain >= 0.0 ? "+" : "") << detail::fixed(g.gain)
       << ',' << detail::fixed(g.p_value, 6) << ','
       << (g.significant ? "yes" : "no") << ',' << g.pairs << '\n';
  }
}

/// Aligned text rendering: one row per (ssdl, balance, lb), one mean/std
/// column pair per n_l; gains follow with non-significant entries in
/// parentheses.
inline void render_text(std::ostream& os, const SummaryTable& t) {
  std::set<std::size_t> n_ls;
  for (const auto& c : t.cells) n_ls.insert(c.n_l);
  using RowKey = std::tuple<bool, double, bool>;  // ssdl, balance (desc), lb
  std::map<RowKey, std::map<std::size_t, const CellSummary*>> rows;
  for (const auto& c : t.cells) {
    rows[{is_semi_supervised(c.method), -c.neg_fraction, is_balanced(c.method)}][c.n_l] = &c;
  }
  os << std::left << std::setw(6) << "SSDL" << std::setw(8) << "Neg" << std::setw(8) << "Pos"
     << std::setw(5) << "LB";
  for (std::size_t n : n_ls) os << std::setw(18) << ("n_l=" + std::to_string(n) + " mean/std");
  os << '\n';
  for (const auto& [key, by_n] : rows) {
    const auto& [ssdl, neg_desc, lb] = key;
    os << std::setw(6) << (ssdl ? "Yes" : "No") << std::setw(8) << (detail::pct(-neg_desc) + "%")
       << std::setw(8) << (detail::pct(1.0 + neg_desc) + "%") << std::setw(5) << (lb ? "Yes" : "No");
    for (std::size_t n : n_ls) {
      auto it = by_n.find(n);
      os << std::setw(18)
         << (it == by_n.end() ? std::string("-")
                              : detail::fixed(it->second->mean, 3) + " " + detail::fixed(it->second->std, 3));
    }
    os << '\n';
  }
  if (t.gains.empty()) return;
  os << '\n' << std::setw(8) << "Neg" << std::setw(8) << "Pos" << std::setw(20) << "Comparison";
  for (std::size_t n : n_ls) os << std::setw(12) << ("n_l=" + std::to_string(n));
  os << '\n';
  std::map<std::tuple<double, std::string>, std::map<std::size_t, const GainRow*>> gain_rows;
  for (const auto& g : t.gains) gain_rows[{-g.neg_fraction, g.comparison}][g.n_l] = &g;
  for (const auto& [key, by_n] : gain_rows) {
    const auto& [neg_desc, label] = key;
    os << std::setw(8) << (detail::pct(-neg_desc) + "%") << std::setw(8)
       << (detail::pct(1.0 + neg_desc) + "%") << std::setw(20) << label;
    for (std::size_t n : n_ls) {
      auto it = by_n.find(n);
      std::string cell = "-";
      if (it != by_n.end()) {
        std::ostringstream v;
        v << std::showpos << std::fixed << std::setprecision(3) << it->second->gain;
        cell = it->second->significant ? v.str() : "(" + v.str() + ")";
      }
      os << std::setw(12) << cell;
    }
    os << '\n';
  }
  os << std::right;
}

}  // namespace sslb

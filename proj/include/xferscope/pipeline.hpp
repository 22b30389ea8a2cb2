#pragma once

// The three correlation analyses over an experiment grid:
//   fig1 / fig3  impact vs language distance, per layer and metric
//                (fig3 restricts to one source language)
//   table1       language distance vs transfer accuracy, per metric
//   table2       impact vs transfer accuracy, per layer plus a pooled row
// Same-language pairs (S == T) never enter any correlation.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "xferscope/csv.hpp"
#include "xferscope/error.hpp"
#include "xferscope/lang_distance.hpp"
#include "xferscope/similarity.hpp"
#include "xferscope/stats.hpp"
#include "xferscope/tensor_store.hpp"

namespace xferscope {

struct ImpactKey {
  std::string source;
  std::string target;
  int layer = 0;

  auto operator<=>(const ImpactKey&) const = default;
};

inline std::string describe(const ImpactKey& k) {
  return "(" + k.source + "->" + k.target + ", layer " + std::to_string(k.layer) + ")";
}

/// Impact per (source, target, layer). Triples whose similarity computation
/// failed are listed in `failures` instead of `entries`.
struct ImpactTable {
  std::map<ImpactKey, double> entries;
  std::map<ImpactKey, std::string> failures;

  std::vector<int> layers() const {
    std::set<int> s;
    for (const auto& [k, v] : entries) s.insert(k.layer);
    for (const auto& [k, v] : failures) s.insert(k.layer);
    return {s.begin(), s.end()};
  }

  std::optional<double> find(const std::string& source, const std::string& target, int layer) const {
    const auto it = entries.find({source, target, layer});
    if (it == entries.end()) return std::nullopt;
    return it->second;
  }
};

struct ImpactOptions {
  unsigned threads = 1;
  /// Record similarity failures in ImpactTable::failures rather than throwing.
  bool drop_failures = true;
};

/// Impact for every finetuned entry in the set. Base matrices are loaded and
/// centered once per (target, layer).
inline ImpactTable compute_impacts(const ExperimentSet& set, const ImpactOptions& options = {}) {
  std::map<std::pair<std::string, int>, std::vector<const ExperimentManifest*>> groups;
  for (const auto& m : set.manifests())
    if (m.stage == Stage::finetuned) groups[{m.target_lang, m.layer}].push_back(&m);
  std::vector<std::pair<const ExperimentManifest*, std::vector<const ExperimentManifest*>>> work;
  for (auto& [key, members] : groups) work.emplace_back(&set.base_for(*members.front()), std::move(members));

  ImpactTable table;
  std::mutex guard;
  std::atomic<std::size_t> next{0};
  std::exception_ptr fatal;

  auto worker = [&] {
    while (true) {
      const auto i = next.fetch_add(1);
      if (i >= work.size()) return;
      try {
        const auto& [base_entry, members] = work[i];
        const CenteredReference reference(set.load(*base_entry));
        for (const auto* m : members) {
          const ImpactKey key{m->source_lang, m->target_lang, m->layer};
          try {
            const double phi = reference.impact_of(set.load(*m)).value();
            std::lock_guard lock(guard);
            table.entries.emplace(key, phi);
          } catch (const Error& e) {
            if (!options.drop_failures || (e.code() != Errc::DegenerateInput && e.code() != Errc::RowMismatch))
              throw Error(e.code(), describe(key) + ": " + e.what());
            std::lock_guard lock(guard);
            table.failures.emplace(key, e.what());
          }
        }
      } catch (...) {
        std::lock_guard lock(guard);
        if (!fatal) fatal = std::current_exception();
        next = work.size();
        return;
      }
    }
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(work.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (fatal) std::rethrow_exception(fatal);
  return table;
}

inline void write_impact_csv(const std::filesystem::path& path, const ImpactTable& table) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot open " + path.string() + " for writing");
  out << "source,target,layer,impact\n";
  for (const auto& [k, v] : table.entries)
    out << k.source << ',' << k.target << ',' << k.layer << ',' << csv::format_double(v) << '\n';
  if (!out) throw Error(Errc::IoError, "write failed for " + path.string());
}

inline ImpactTable read_impact_csv(const std::filesystem::path& path) {
  const auto rows = csv::read_file(path);
  if (rows.empty() || rows[0] != csv::Row{"source", "target", "layer", "impact"})
    throw Error(Errc::ParseError, path.string() + ": header must be source,target,layer,impact");
  ImpactTable table;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const std::string ctx = path.string() + ":" + std::to_string(r + 1);
    if (rows[r].size() != 4) throw Error(Errc::ParseError, ctx + ": expected 4 fields");
    const ImpactKey key{rows[r][0], rows[r][1], static_cast<int>(csv::parse_int(rows[r][2], ctx))};
    const double v = csv::parse_double(rows[r][3], ctx);
    if (!(v >= 0.0 && v <= 1.0)) throw Error(Errc::DomainError, ctx + ": impact outside [0,1]");
    if (!table.entries.emplace(key, v).second) throw Error(Errc::DuplicateEntry, ctx + ": " + describe(key));
  }
  return table;
}

/// Zero-shot accuracy per (source, target), complete over a square grid.
class TransferResults {
 public:
  TransferResults(std::vector<std::string> languages, std::vector<double> accuracy)
      : languages_(std::move(languages)), accuracy_(std::move(accuracy)) {
    const auto n = languages_.size();
    if (accuracy_.size() != n * n) throw Error(Errc::LengthMismatch, "transfer grid is not square");
    for (std::size_t i = 0; i < n; ++i) {
      if (!index_.emplace(languages_[i], i).second)
        throw Error(Errc::DuplicateEntry, "language '" + languages_[i] + "' repeated");
    }
    for (double v : accuracy_)
      if (!(v >= 0.0 && v <= 1.0)) throw Error(Errc::DomainError, "accuracy outside [0,1]");
  }

  const std::vector<std::string>& languages() const noexcept { return languages_; }
  bool contains(const std::string& lang) const { return index_.count(lang) != 0; }

  double at(const std::string& source, const std::string& target) const {
    const auto s = index_.find(source);
    const auto t = index_.find(target);
    if (s == index_.end() || t == index_.end())
      throw Error(Errc::UnknownLanguage, "no accuracy for " + source + "->" + target);
    return accuracy_[s->second * languages_.size() + t->second];
  }

 private:
  std::vector<std::string> languages_;
  std::vector<double> accuracy_;
  std::map<std::string, std::size_t> index_;
};

/// Square CSV: header row of target codes, one row per source.
inline TransferResults read_transfer_csv(const std::filesystem::path& path) {
  const auto rows = csv::read_file(path);
  if (rows.empty()) throw Error(Errc::ParseError, path.string() + ": empty");
  std::vector<std::string> langs(rows[0].begin() + 1, rows[0].end());
  const auto n = langs.size();
  if (rows.size() != n + 1) throw Error(Errc::ParseError, path.string() + ": not square");
  std::vector<double> acc(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string ctx = path.string() + ":" + std::to_string(i + 2);
    if (rows[i + 1].size() != n + 1 || rows[i + 1][0] != langs[i])
      throw Error(Errc::ParseError, ctx + ": row label/width mismatch");
    for (std::size_t j = 0; j < n; ++j) acc[i * n + j] = csv::parse_double(rows[i + 1][j + 1], ctx);
  }
  return {std::move(langs), std::move(acc)};
}

inline void write_transfer_csv(const std::filesystem::path& path, const TransferResults& results) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot open " + path.string() + " for writing");
  out << "source";
  for (const auto& l : results.languages()) out << ',' << l;
  out << '\n';
  for (const auto& s : results.languages()) {
    out << s;
    for (const auto& t : results.languages()) out << ',' << csv::format_double(results.at(s, t));
    out << '\n';
  }
  if (!out) throw Error(Errc::IoError, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Reports

struct ReportRow {
  std::string analysis;  // fig1, fig3:<source>, table1, table2
  std::string layer;     // layer index, "All", or "-"
  std::string metric;    // metric name or "-"
  std::optional<CorrelationResult> pearson;
  std::optional<CorrelationResult> spearman;
  std::size_t n = 0;
  std::string error;  // set when the correlation is undefined for this row
};

struct CorrelationReport {
  std::vector<ReportRow> rows;
  std::vector<std::string> warnings;
};

namespace detail {

inline ReportRow correlate_row(std::string analysis, std::string layer, std::string metric,
                               const std::vector<double>& x, const std::vector<double>& y) {
  ReportRow row{std::move(analysis), std::move(layer), std::move(metric), std::nullopt, std::nullopt, x.size(), {}};
  if (x.size() < 3)
    throw Error(Errc::TooFewPairs, row.analysis + " layer " + row.layer + " metric " + row.metric + ": n=" +
                                       std::to_string(x.size()));
  try {
    row.pearson = pearson(x, y);
    row.spearman = spearman(x, y);
  } catch (const Error& e) {
    if (e.code() != Errc::ConstantInput) throw;
    row.pearson.reset();
    row.spearman.reset();
    row.error = e.what();
  }
  return row;
}

inline std::vector<std::string> impact_sources(const ImpactTable& impacts) {
  std::set<std::string> s;
  for (const auto& [k, v] : impacts.entries) s.insert(k.source);
  return {s.begin(), s.end()};
}

inline void note_failures(const ImpactTable& impacts, int layer, const std::optional<std::string>& source,
                          std::vector<std::string>& warnings) {
  for (const auto& [k, msg] : impacts.failures) {
    if (k.layer != layer || k.source == k.target) continue;
    if (source && k.source != *source) continue;
    warnings.push_back("dropped " + describe(k) + ": " + msg);
  }
}

}  // namespace detail

/// Impact vs one distance metric at one layer over all S != T pairs, or
/// only pairs with S == `source_filter` when given.
inline ReportRow correlate_impact_distance(const ImpactTable& impacts, const DistanceMatrix& distances, int layer,
                                           const std::optional<std::string>& source_filter = std::nullopt,
                                           std::vector<std::string>* warnings = nullptr) {
  std::vector<double> phi, dist;
  for (const auto& [k, v] : impacts.entries) {
    if (k.layer != layer || k.source == k.target) continue;
    if (source_filter && k.source != *source_filter) continue;
    phi.push_back(v);
    dist.push_back(distances.at(k.source, k.target));
  }
  if (warnings) detail::note_failures(impacts, layer, source_filter, *warnings);
  const std::string analysis = source_filter ? "fig3:" + *source_filter : "fig1";
  return detail::correlate_row(analysis, std::to_string(layer), std::string(metric_name(distances.metric())), phi, dist);
}

/// fig1 (no filter) or fig3 (one source): every layer against every metric,
/// layer-major.
inline CorrelationReport impact_distance_report(const ImpactTable& impacts, const std::vector<DistanceMatrix>& distances,
                                                const std::optional<std::string>& source_filter = std::nullopt,
                                                const std::vector<int>& layer_filter = {}) {
  CorrelationReport report;
  std::vector<const DistanceMatrix*> ordered;
  for (const auto& d : distances) ordered.push_back(&d);
  std::stable_sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->metric() < b->metric(); });
  for (int layer : impacts.layers()) {
    if (!layer_filter.empty() && std::find(layer_filter.begin(), layer_filter.end(), layer) == layer_filter.end())
      continue;
    for (std::size_t i = 0; i < ordered.size(); ++i)
      report.rows.push_back(
          correlate_impact_distance(impacts, *ordered[i], layer, source_filter, i == 0 ? &report.warnings : nullptr));
  }
  for (const auto& r : report.rows)
    if (!r.error.empty()) report.warnings.push_back(r.analysis + " layer " + r.layer + " " + r.metric + ": " + r.error);
  return report;
}

/// One row per metric over (distance, accuracy) for all S != T in the grid.
inline CorrelationReport correlate_distance_performance(const std::vector<DistanceMatrix>& distances,
                                                        const TransferResults& results) {
  CorrelationReport report;
  std::vector<const DistanceMatrix*> ordered;
  for (const auto& d : distances) ordered.push_back(&d);
  std::stable_sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->metric() < b->metric(); });
  for (const auto* d : ordered) {
    std::vector<double> dist, acc;
    for (const auto& s : results.languages()) {
      for (const auto& t : results.languages()) {
        if (s == t) continue;
        dist.push_back(d->at(s, t));
        acc.push_back(results.at(s, t));
      }
    }
    report.rows.push_back(detail::correlate_row("table1", "-", std::string(metric_name(d->metric())), dist, acc));
  }
  for (const auto& r : report.rows)
    if (!r.error.empty()) report.warnings.push_back("table1 " + r.metric + ": " + r.error);
  return report;
}

/// One row per layer over (impact, accuracy) for S != T, then an "All" row
/// pooling every layer's pairs.
inline CorrelationReport correlate_impact_performance(const ImpactTable& impacts, const TransferResults& results) {
  CorrelationReport report;
  std::vector<double> all_phi, all_acc;
  for (int layer : impacts.layers()) {
    std::vector<double> phi, acc;
    for (const auto& [k, v] : impacts.entries) {
      if (k.layer != layer || k.source == k.target) continue;
      phi.push_back(v);
      acc.push_back(results.at(k.source, k.target));
    }
    detail::note_failures(impacts, layer, std::nullopt, report.warnings);
    all_phi.insert(all_phi.end(), phi.begin(), phi.end());
    all_acc.insert(all_acc.end(), acc.begin(), acc.end());
    report.rows.push_back(detail::correlate_row("table2", std::to_string(layer), "-", phi, acc));
  }
  report.rows.push_back(detail::correlate_row("table2", "All", "-", all_phi, all_acc));
  for (const auto& r : report.rows)
    if (!r.error.empty()) report.warnings.push_back("table2 layer " + r.layer + ": " + r.error);
  return report;
}

/// Mean accuracy of `source` over targets as a percentage. The source itself
/// is included by default.
inline double summarize_transfer(const TransferResults& results, const std::string& source,
                                 bool include_source = true) {
  if (!results.contains(source)) throw Error(Errc::UnknownLanguage, "'" + source + "' not in transfer results");
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& t : results.languages()) {
    if (!include_source && t == source) continue;
    sum += results.at(source, t);
    ++count;
  }
  if (count == 0) throw Error(Errc::TooFewPairs, "no targets for " + source);
  return 100.0 * sum / static_cast<double>(count);
}

inline std::string format_percent(double percent) { return csv::format_fixed(percent, 2); }

inline constexpr const char* kReportHeader =
    "analysis,layer,metric,pearson_r,pearson_p,pearson_stars,spearman_r,spearman_p,spearman_stars,n";

namespace detail {
inline std::string format_p(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", p);
  return buf;
}
}  // namespace detail

inline std::string report_csv(const CorrelationReport& report) {
  std::ostringstream out;
  out << kReportHeader << '\n';
  auto emit = [&](const std::optional<CorrelationResult>& c) {
    if (!c) {
      out << ",NA,NA,";
      return;
    }
    out << ',' << csv::format_fixed(c->coefficient, 4) << ',' << detail::format_p(c->p_value) << ','
        << stars_text(c->stars);
  };
  for (const auto& r : report.rows) {
    out << r.analysis << ',' << r.layer << ',' << r.metric;
    emit(r.pearson);
    emit(r.spearman);
    out << ',' << r.n << '\n';
  }
  return out.str();
}

inline nlohmann::json report_json(const CorrelationReport& report) {
  auto coef = [](const std::optional<CorrelationResult>& c) -> nlohmann::json {
    if (!c) return nullptr;
    return std::stod(csv::format_fixed(c->coefficient, 4));
  };
  auto pval = [](const std::optional<CorrelationResult>& c) -> nlohmann::json {
    if (!c) return nullptr;
    return std::stod(detail::format_p(c->p_value));
  };
  auto stars = [](const std::optional<CorrelationResult>& c) -> nlohmann::json {
    if (!c) return nullptr;
    return std::string(stars_text(c->stars));
  };
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"analysis", r.analysis},
                    {"layer", r.layer},
                    {"metric", r.metric},
                    {"pearson_r", coef(r.pearson)},
                    {"pearson_p", pval(r.pearson)},
                    {"pearson_stars", stars(r.pearson)},
                    {"spearman_r", coef(r.spearman)},
                    {"spearman_p", pval(r.spearman)},
                    {"spearman_stars", stars(r.spearman)},
                    {"n", r.n}});
  }
  return rows;
}

}  // namespace xferscope

#pragma once

// Selective layer freezing. Given per-layer correlations between impact and
// language distance for one source language, pick for each requested metric
// the candidate layer whose correlation is strongest in the requested
// direction, provided it clears the threshold. Freezing that layer pins its
// impact to zero during fine-tuning.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "xferscope/csv.hpp"
#include "xferscope/error.hpp"
#include "xferscope/lang_distance.hpp"
#include "xferscope/pipeline.hpp"
#include "xferscope/tensor_store.hpp"

namespace xferscope {

enum class Objective { narrow_gap, widen_gap };

inline std::string_view objective_name(Objective o) { return o == Objective::narrow_gap ? "narrow_gap" : "widen_gap"; }

inline Objective parse_objective(std::string_view s) {
  if (s == "narrow_gap") return Objective::narrow_gap;
  if (s == "widen_gap") return Objective::widen_gap;
  throw Error(Errc::ParseError, "unknown objective '" + std::string(s) + "'");
}

struct ProfileEntry {
  double coefficient = 0.0;
  double p_value = 1.0;
};

/// Impact-vs-distance correlations of one source language, by (layer, metric).
struct LayerCorrelationProfile {
  std::string source;
  std::map<std::pair<int, Metric>, ProfileEntry> entries;

  void set(int layer, Metric metric, double coefficient, double p_value = 1.0) {
    if (!(std::abs(coefficient) <= 1.0 + 1e-12))
      throw Error(Errc::DomainError, "coefficient outside [-1,1] at layer " + std::to_string(layer));
    entries[{layer, metric}] = {coefficient, p_value};
  }

  const ProfileEntry& at(int layer, Metric metric) const {
    const auto it = entries.find({layer, metric});
    if (it == entries.end())
      throw Error(Errc::DomainError, "profile for '" + source + "' lacks layer " + std::to_string(layer) + " " +
                                         std::string(metric_name(metric)));
    return it->second;
  }
};

struct RationaleEntry {
  int layer = 0;
  Metric metric = Metric::SYN;
  double coefficient = 0.0;

  friend bool operator==(const RationaleEntry&, const RationaleEntry&) = default;
};

/// Layers to hold fixed during fine-tuning, each with the correlation that
/// selected it.
class FreezePlan {
 public:
  FreezePlan(std::set<int> frozen_layers, std::vector<RationaleEntry> rationale, Objective objective,
             int model_depth = kReferenceModelDepth)
      : frozen_(std::move(frozen_layers)), rationale_(std::move(rationale)), objective_(objective) {
    if (frozen_.empty()) throw Error(Errc::InvalidPlan, "plan freezes no layers");
    for (int l : frozen_) {
      if (l < 1 || l > model_depth)
        throw Error(Errc::InvalidPlan, "layer " + std::to_string(l) + " outside model depth " + std::to_string(model_depth));
      bool explained = false;
      for (const auto& r : rationale_) explained = explained || r.layer == l;
      if (!explained) throw Error(Errc::InvalidPlan, "layer " + std::to_string(l) + " has no rationale");
    }
    for (const auto& r : rationale_)
      if (!frozen_.count(r.layer))
        throw Error(Errc::InvalidPlan, "rationale for layer " + std::to_string(r.layer) + " which is not frozen");
  }

  const std::set<int>& frozen_layers() const noexcept { return frozen_; }
  const std::vector<RationaleEntry>& rationale() const noexcept { return rationale_; }
  Objective objective() const noexcept { return objective_; }

  friend bool operator==(const FreezePlan&, const FreezePlan&) = default;

 private:
  std::set<int> frozen_;
  std::vector<RationaleEntry> rationale_;
  Objective objective_;
};

struct AdviseOptions {
  double threshold = 0.5;
  /// When set, only correlations with p below `significance` qualify.
  bool require_significance = false;
  double significance = 0.05;
  int model_depth = kReferenceModelDepth;
};

/// Ties on the coefficient resolve toward the lower layer index.
inline FreezePlan advise(const LayerCorrelationProfile& profile, const std::vector<Metric>& metrics,
                         const std::set<int>& candidate_layers, Objective objective, const AdviseOptions& options = {}) {
  if (candidate_layers.empty()) throw Error(Errc::DomainError, "no candidate layers");
  if (!(options.threshold > 0.0)) throw Error(Errc::DomainError, "threshold must be positive");
  const double sign = objective == Objective::narrow_gap ? -1.0 : 1.0;
  std::set<int> frozen;
  std::vector<RationaleEntry> rationale;
  for (Metric metric : std::set<Metric>(metrics.begin(), metrics.end())) {
    std::optional<RationaleEntry> best;
    for (int layer : candidate_layers) {
      const auto& e = profile.at(layer, metric);
      if (options.require_significance && !(e.p_value < options.significance)) continue;
      // Strength in the requested direction.
      const double directed = sign * e.coefficient;
      if (directed < options.threshold) continue;
      if (!best || directed > sign * best->coefficient) best = RationaleEntry{layer, metric, e.coefficient};
    }
    if (best) {
      frozen.insert(best->layer);
      rationale.push_back(*best);
    }
  }
  if (frozen.empty())
    throw Error(Errc::NoLayerQualifies, "no candidate layer reaches threshold " + csv::format_double(options.threshold) +
                                            " for " + std::string(objective_name(objective)));
  std::sort(rationale.begin(), rationale.end(),
            [](const auto& a, const auto& b) { return std::tie(a.layer, a.metric) < std::tie(b.layer, b.metric); });
  return {std::move(frozen), std::move(rationale), objective, options.model_depth};
}

inline nlohmann::json plan_to_json(const FreezePlan& plan) {
  nlohmann::json rationale = nlohmann::json::array();
  for (const auto& r : plan.rationale())
    rationale.push_back({{"layer", r.layer}, {"metric", std::string(metric_name(r.metric))}, {"coefficient", r.coefficient}});
  return {{"frozen_layers", std::vector<int>(plan.frozen_layers().begin(), plan.frozen_layers().end())},
          {"objective", std::string(objective_name(plan.objective()))},
          {"rationale", rationale}};
}

inline std::string plan_to_config(const FreezePlan& plan) { return plan_to_json(plan).dump(); }

inline FreezePlan plan_from_json(const nlohmann::json& j, int model_depth = kReferenceModelDepth) {
  try {
    std::vector<RationaleEntry> rationale;
    for (const auto& r : j.at("rationale")) {
      const auto metric = parse_metric(r.at("metric").get<std::string>());
      if (!metric) throw Error(Errc::ParseError, "unknown metric in rationale");
      rationale.push_back({r.at("layer").get<int>(), *metric, r.at("coefficient").get<double>()});
    }
    const auto layers = j.at("frozen_layers").get<std::vector<int>>();
    return {std::set<int>(layers.begin(), layers.end()), std::move(rationale),
            parse_objective(j.at("objective").get<std::string>()), model_depth};
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("freeze configuration: ") + e.what());
  }
}

inline FreezePlan parse_plan_config(const std::string& text, int model_depth = kReferenceModelDepth) {
  try {
    return plan_from_json(nlohmann::json::parse(text), model_depth);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("freeze configuration: ") + e.what());
  }
}

namespace detail {

inline void add_profile_row(std::map<std::string, LayerCorrelationProfile>& by_source, const std::string& analysis,
                            const std::string& layer, const std::string& metric, double r, double p,
                            const std::string& ctx) {
  constexpr std::string_view prefix = "fig3:";
  if (analysis.rfind(prefix, 0) != 0) return;
  const auto m = parse_metric(metric);
  if (!m) throw Error(Errc::ParseError, ctx + ": unknown metric '" + metric + "'");
  auto& prof = by_source[analysis.substr(prefix.size())];
  prof.source = analysis.substr(prefix.size());
  prof.set(static_cast<int>(csv::parse_int(layer, ctx)), *m, r, p);
}

inline LayerCorrelationProfile pick_profile(std::map<std::string, LayerCorrelationProfile> by_source,
                                            const std::optional<std::string>& source, const std::string& file) {
  if (by_source.empty()) throw Error(Errc::ParseError, file + ": no fig3 rows");
  if (source) {
    const auto it = by_source.find(*source);
    if (it == by_source.end()) throw Error(Errc::UnknownLanguage, file + ": no fig3 rows for source '" + *source + "'");
    return it->second;
  }
  if (by_source.size() > 1) throw Error(Errc::ParseError, file + ": several sources present, choose one");
  return by_source.begin()->second;
}

}  // namespace detail

/// Builds a profile from a fig3 correlation report, CSV or JSON (by extension).
/// Rows without a Pearson value are skipped.
inline LayerCorrelationProfile read_profile(const std::filesystem::path& path,
                                            const std::optional<std::string>& source = std::nullopt) {
  std::map<std::string, LayerCorrelationProfile> by_source;
  if (path.extension() == ".json") {
    std::ifstream in(path);
    if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
    try {
      for (const auto& row : nlohmann::json::parse(in)) {
        if (row.at("pearson_r").is_null()) continue;
        detail::add_profile_row(by_source, row.at("analysis").get<std::string>(), row.at("layer").get<std::string>(),
                                row.at("metric").get<std::string>(), row.at("pearson_r").get<double>(),
                                row.at("pearson_p").get<double>(), path.string());
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::ParseError, path.string() + ": " + e.what());
    }
  } else {
    const auto rows = csv::read_file(path);
    if (rows.empty() || rows[0] != csv::split(kReportHeader))
      throw Error(Errc::ParseError, path.string() + ": not a correlation report");
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& row = rows[i];
      const std::string ctx = path.string() + ":" + std::to_string(i + 1);
      if (row.size() != 10) throw Error(Errc::ParseError, ctx + ": expected 10 fields");
      if (row[3] == "NA") continue;
      detail::add_profile_row(by_source, row[0], row[1], row[2], csv::parse_double(row[3], ctx),
                              csv::parse_double(row[4], ctx), ctx);
    }
  }
  return detail::pick_profile(std::move(by_source), source, path.string());
}

}  // namespace xferscope

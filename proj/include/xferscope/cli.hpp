#pragma once

// Command-line front end. `run` is the whole program; tools/xferscope.cpp
// only forwards argv to it.
//
// Exit codes: 0 success, 1 usage error, 2 data error (including a failed
// validation run).

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "xferscope/error.hpp"
#include "xferscope/freeze_advisor.hpp"
#include "xferscope/lang_distance.hpp"
#include "xferscope/pipeline.hpp"
#include "xferscope/similarity.hpp"
#include "xferscope/stats.hpp"
#include "xferscope/synthetic_bench.hpp"
#include "xferscope/tensor_store.hpp"

namespace xferscope::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// --threads, else XFERSCOPE_THREADS, else the logical core count.
inline unsigned resolve_threads(std::optional<unsigned> flag) {
  if (flag && *flag > 0) return *flag;
  if (const char* env = std::getenv("XFERSCOPE_THREADS")) {
    try {
      const long v = csv::parse_int(env, "XFERSCOPE_THREADS");
      if (v > 0) return static_cast<unsigned>(v);
    } catch (const Error&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

inline std::vector<Metric> parse_metric_list(const std::vector<std::string>& names) {
  std::vector<Metric> out;
  for (const auto& n : names) {
    const auto m = parse_metric(n);
    if (!m) throw CLI::ValidationError("--metrics", "unknown metric '" + n + "'");
    out.push_back(*m);
  }
  return out;
}

/// Writes `content` to `out_dir/name`, or to `stdout_stream` without a directory.
inline void emit(const std::optional<fs::path>& out_dir, const std::string& name, const std::string& content,
                 std::ostream& stdout_stream) {
  if (!out_dir) {
    stdout_stream << content;
    return;
  }
  fs::create_directories(*out_dir);
  const auto path = *out_dir / name;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error(Errc::IoError, "cannot open " + path.string() + " for writing");
  f << content;
  if (!f) throw Error(Errc::IoError, "write failed for " + path.string());
}

struct CommonIo {
  std::optional<std::string> out_dir;
  std::optional<unsigned> threads;
  int depth = kReferenceModelDepth;
};

inline ExperimentSet load_set(const std::string& manifest, const std::optional<std::string>& root, int depth) {
  const fs::path m(manifest);
  const fs::path r = root ? fs::path(*root) : (m.has_parent_path() ? m.parent_path() : fs::path("."));
  return load_experiment(r, m, depth);
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Representation-space impact, language distance and layer-freezing analysis", "xferscope"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "xferscope 0.1.0");

  // cka
  auto* cka = app.add_subcommand("cka", "CKA similarity between two matrix files");
  std::string cka_a, cka_b, cka_mode = "centered";
  cka->add_option("a", cka_a, "First .xrep matrix")->required()->check(CLI::ExistingFile);
  cka->add_option("b", cka_b, "Second .xrep matrix")->required()->check(CLI::ExistingFile);
  cka->add_option("--mode", cka_mode, "centered (default) or paper_literal")
      ->check(CLI::IsMember({"centered", "paper_literal"}));

  // impact
  auto* imp = app.add_subcommand("impact", "Impact table for every finetuned entry of an experiment set");
  std::string imp_manifest;
  std::optional<std::string> imp_root;
  CommonIo imp_io;
  imp->add_option("--manifest", imp_manifest, "Experiment manifest JSON")->required()->check(CLI::ExistingFile);
  imp->add_option("--root", imp_root, "Directory matrix paths are relative to (default: manifest directory)");
  imp->add_option("--out", imp_io.out_dir, "Output directory for impacts.csv (default: standard output)");
  imp->add_option("--threads", imp_io.threads, "Worker threads (fallback: XFERSCOPE_THREADS, then core count)");
  imp->add_option("--depth", imp_io.depth, "Model depth used to validate layer indices")->capture_default_str();

  // distances
  auto* dist = app.add_subcommand("distances", "Five language distance matrices from raw typology data");
  std::optional<std::string> f_syn, f_inv, f_phon, f_geo, f_tree, dist_out;
  std::vector<std::string> dist_langs;
  dist->add_option("--syn", f_syn, "Syntax feature CSV")->check(CLI::ExistingFile);
  dist->add_option("--inv", f_inv, "Inventory feature CSV")->check(CLI::ExistingFile);
  dist->add_option("--phon", f_phon, "Phonology feature CSV")->check(CLI::ExistingFile);
  dist->add_option("--coords", f_geo, "Coordinates CSV (lang,lat,lon)")->check(CLI::ExistingFile);
  dist->add_option("--tree", f_tree, "Family tree file (iso,root/.../leaf)")->check(CLI::ExistingFile);
  dist->add_option("--languages", dist_langs, "Comma-separated language order (default: common languages, sorted)")
      ->delimiter(',');
  dist->add_option("--out", dist_out, "Output directory for distance_<metric>.csv")->required();

  // correlate
  auto* cor = app.add_subcommand("correlate", "Correlation reports: fig1, fig3, table1, table2");
  std::string cor_mode;
  std::optional<std::string> cor_impacts, cor_manifest, cor_root, cor_results, cor_source;
  std::vector<std::string> cor_distances, cor_metrics;
  std::vector<int> cor_layers;
  CommonIo cor_io;
  bool cor_json = false;
  cor->add_option("--mode", cor_mode, "fig1 | fig3 | table1 | table2")
      ->required()
      ->check(CLI::IsMember({"fig1", "fig3", "table1", "table2"}));
  auto* o_imp = cor->add_option("--impacts", cor_impacts, "Impact table CSV from `impact`")->check(CLI::ExistingFile);
  auto* o_man = cor->add_option("--manifest", cor_manifest, "Experiment manifest; impacts computed on the fly")
                    ->check(CLI::ExistingFile);
  o_imp->excludes(o_man);
  o_man->excludes(o_imp);
  cor->add_option("--root", cor_root, "Matrix root for --manifest (default: manifest directory)");
  cor->add_option("--distance", cor_distances, "Distance CSV (repeatable; metric from filename)")
      ->check(CLI::ExistingFile);
  cor->add_option("--results", cor_results, "Transfer accuracy CSV")->check(CLI::ExistingFile);
  cor->add_option("--source", cor_source, "Source language for fig3");
  cor->add_option("--layers", cor_layers, "Comma-separated layer filter (fig1/fig3)")->delimiter(',');
  cor->add_option("--metrics", cor_metrics, "Comma-separated metric filter")->delimiter(',');
  cor->add_option("--out", cor_io.out_dir, "Output directory for report_<mode>.csv/json (default: standard output)");
  cor->add_flag("--json", cor_json, "Emit JSON instead of CSV");
  cor->add_option("--threads", cor_io.threads, "Worker threads for --manifest (fallback: XFERSCOPE_THREADS)");
  cor->add_option("--depth", cor_io.depth, "Model depth used to validate layer indices")->capture_default_str();

  // advise
  auto* adv = app.add_subcommand("advise", "Freeze plan from a fig3 correlation profile");
  std::string adv_profile, adv_objective = "narrow_gap";
  std::optional<std::string> adv_source, adv_out;
  std::vector<std::string> adv_metrics;
  std::vector<int> adv_candidates;
  AdviseOptions adv_opts;
  adv->add_option("--profile", adv_profile, "fig3 report (CSV or JSON)")->required()->check(CLI::ExistingFile);
  adv->add_option("--source", adv_source, "Source language when the profile holds several");
  adv->add_option("--metrics", adv_metrics, "Comma-separated metrics to target")->required()->delimiter(',');
  adv->add_option("--candidates", adv_candidates, "Comma-separated candidate layers")->required()->delimiter(',');
  adv->add_option("--objective", adv_objective, "narrow_gap or widen_gap")
      ->check(CLI::IsMember({"narrow_gap", "widen_gap"}))
      ->capture_default_str();
  adv->add_option("--threshold", adv_opts.threshold, "Minimum |coefficient| in the objective's direction")
      ->capture_default_str();
  adv->add_flag("--require-significance", adv_opts.require_significance, "Only consider correlations with p below --significance");
  adv->add_option("--significance", adv_opts.significance, "p-value gate for --require-significance")->capture_default_str();
  adv->add_option("--depth", adv_opts.model_depth, "Model depth")->capture_default_str();
  adv->add_option("--out", adv_out, "Output directory for freeze_plan.json (default: standard output)");

  // synth
  auto* syn = app.add_subcommand("synth", "Synthetic experiment grid with planted correlation");
  SyntheticSpec sspec;
  std::optional<std::uint64_t> syn_seed;
  std::string syn_out, syn_metric = "SYN";
  std::optional<unsigned> syn_threads;
  syn->add_option("--seed", syn_seed, "Random seed (required)")->required();
  syn->add_option("--languages", sspec.n_languages, "Number of languages")->capture_default_str();
  syn->add_option("--layers", sspec.n_layers, "Number of layers")->capture_default_str();
  syn->add_option("--samples", sspec.samples, "Rows N per matrix")->capture_default_str();
  syn->add_option("--dim", sspec.dim, "Hidden dimension m")->capture_default_str();
  syn->add_option("--planted-r", sspec.planted_correlation, "Planted impact/distance correlation")->capture_default_str();
  syn->add_option("--noise", sspec.noise, "Accuracy noise standard deviation")->capture_default_str();
  syn->add_option("--impact-mean", sspec.impact_mean, "Mean target impact")->capture_default_str();
  syn->add_option("--impact-spread", sspec.impact_spread, "Standard deviation of target impacts")->capture_default_str();
  syn->add_option("--tolerance", sspec.tolerance, "Impact calibration tolerance")->capture_default_str();
  syn->add_option("--metric", syn_metric, "Label of the emitted distance matrix")->capture_default_str();
  syn->add_option("--threads", syn_threads, "Worker threads (fallback: XFERSCOPE_THREADS)");
  syn->add_option("--out", syn_out, "Output directory")->required();

  // validate
  auto* val = app.add_subcommand("validate", "Synthetic round trip: generate, reload, recover planted correlation");
  SyntheticSpec vspec;
  std::optional<std::uint64_t> val_seed;
  std::size_t val_runs = 1;
  double val_band = 0.05;
  std::string val_out;
  std::optional<unsigned> val_threads;
  vspec.planted_correlation = -0.6;
  val->add_option("--seed", val_seed, "First seed (required)")->required();
  val->add_option("--runs", val_runs, "Number of consecutive seeds")->capture_default_str();
  val->add_option("--planted-r", vspec.planted_correlation, "Planted correlation")->capture_default_str();
  val->add_option("--band", val_band, "Allowed |recovered - planted| per layer")->capture_default_str();
  val->add_option("--languages", vspec.n_languages, "Number of languages")->capture_default_str();
  val->add_option("--layers", vspec.n_layers, "Number of layers")->capture_default_str();
  val->add_option("--samples", vspec.samples, "Rows N per matrix")->capture_default_str();
  val->add_option("--dim", vspec.dim, "Hidden dimension m")->capture_default_str();
  val->add_option("--threads", val_threads, "Worker threads (fallback: XFERSCOPE_THREADS)");
  val->add_option("--out", val_out, "Working directory for generated files and reports")->required();

  // cltp
  auto* clt = app.add_subcommand("cltp", "Average transfer accuracy of one source, in percent");
  std::string clt_results, clt_source;
  bool clt_exclude = false;
  clt->add_option("--results", clt_results, "Transfer accuracy CSV")->required()->check(CLI::ExistingFile);
  clt->add_option("--source", clt_source, "Source language")->required();
  clt->add_flag("--exclude-source", clt_exclude, "Leave the source language out of the average");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*cka) {
      const auto score = cka_linear(read_matrix(cka_a), read_matrix(cka_b),
                                    cka_mode == "centered" ? CkaMode::centered : CkaMode::paper_literal);
      out << csv::format_fixed(score.value(), 6) << '\n';
      return kExitOk;
    }

    if (*imp) {
      const auto set = load_set(imp_manifest, imp_root, imp_io.depth);
      const auto table = compute_impacts(set, {resolve_threads(imp_io.threads), true});
      for (const auto& [k, msg] : table.failures) err << "warning: dropped " << describe(k) << ": " << msg << '\n';
      std::ostringstream body;
      body << "source,target,layer,impact\n";
      for (const auto& [k, v] : table.entries)
        body << k.source << ',' << k.target << ',' << k.layer << ',' << csv::format_double(v) << '\n';
      emit(imp_io.out_dir ? std::optional<fs::path>(*imp_io.out_dir) : std::nullopt, "impacts.csv", body.str(), out);
      return kExitOk;
    }

    if (*dist) {
      std::map<Metric, std::map<std::string, LanguageFeatureVector>> features;
      if (f_syn) features.emplace(Metric::SYN, read_feature_csv(*f_syn));
      if (f_inv) features.emplace(Metric::INV, read_feature_csv(*f_inv));
      if (f_phon) features.emplace(Metric::PHON, read_feature_csv(*f_phon));
      std::optional<std::map<std::string, GeoCoordinate>> coords;
      if (f_geo) coords = read_coordinates_csv(*f_geo);
      std::optional<PhylogenyTree> tree;
      if (f_tree) tree = read_tree_file(*f_tree);
      if (features.empty() && !coords && !tree) {
        err << "distances: provide at least one of --syn --inv --phon --coords --tree\n";
        return kExitUsage;
      }
      std::vector<std::string> langs = dist_langs;
      if (langs.empty()) {
        std::optional<std::set<std::string>> common;
        auto meet = [&](std::set<std::string> s) {
          if (!common) {
            common = std::move(s);
            return;
          }
          std::set<std::string> both;
          for (const auto& l : s)
            if (common->count(l)) both.insert(l);
          common = std::move(both);
        };
        for (const auto& [m, fv] : features) {
          std::set<std::string> s;
          for (const auto& [l, v] : fv) s.insert(l);
          meet(std::move(s));
        }
        if (coords) {
          std::set<std::string> s;
          for (const auto& [l, v] : *coords) s.insert(l);
          meet(std::move(s));
        }
        if (tree) {
          std::set<std::string> s;
          for (const auto& [l, v] : tree->leaves()) s.insert(l);
          meet(std::move(s));
        }
        langs.assign(common->begin(), common->end());
      }
      const fs::path dir(*dist_out);
      fs::create_directories(dir);
      for (const auto& [m, fv] : features) write_distance_csv(dir / distance_filename(m), distance_matrix(m, fv, langs));
      if (coords) write_distance_csv(dir / distance_filename(Metric::GEO), distance_matrix(*coords, langs));
      if (tree) write_distance_csv(dir / distance_filename(Metric::GEN), distance_matrix(*tree, langs));
      return kExitOk;
    }

    if (*cor) {
      std::vector<Metric> metric_filter = parse_metric_list(cor_metrics);
      std::vector<DistanceMatrix> distances;
      for (const auto& p : cor_distances) {
        auto d = read_distance_csv(p);
        if (!metric_filter.empty() &&
            std::find(metric_filter.begin(), metric_filter.end(), d.metric()) == metric_filter.end())
          continue;
        distances.push_back(std::move(d));
      }
      auto need_impacts = [&]() -> ImpactTable {
        if (cor_impacts) return read_impact_csv(*cor_impacts);
        if (cor_manifest) {
          const auto set = load_set(*cor_manifest, cor_root, cor_io.depth);
          return compute_impacts(set, {resolve_threads(cor_io.threads), true});
        }
        throw CLI::RequiredError("--impacts or --manifest");
      };
      auto need_results = [&]() -> TransferResults {
        if (!cor_results) throw CLI::RequiredError("--results");
        return read_transfer_csv(*cor_results);
      };
      auto need_distances = [&] {
        if (distances.empty()) throw CLI::RequiredError("--distance");
      };

      CorrelationReport report;
      if (cor_mode == "fig1" || cor_mode == "fig3") {
        need_distances();
        if (cor_mode == "fig3" && !cor_source) throw CLI::RequiredError("--source (fig3)");
        const auto impacts = need_impacts();
        report = impact_distance_report(impacts, distances,
                                        cor_mode == "fig3" ? cor_source : std::optional<std::string>{}, cor_layers);
      } else if (cor_mode == "table1") {
        need_distances();
        report = correlate_distance_performance(distances, need_results());
      } else {
        const auto results = need_results();
        report = correlate_impact_performance(need_impacts(), results);
      }
      for (const auto& w : report.warnings) err << "warning: " << w << '\n';
      const auto out_dir = cor_io.out_dir ? std::optional<fs::path>(*cor_io.out_dir) : std::nullopt;
      if (cor_json) emit(out_dir, "report_" + cor_mode + ".json", report_json(report).dump(1) + "\n", out);
      else emit(out_dir, "report_" + cor_mode + ".csv", report_csv(report), out);
      return kExitOk;
    }

    if (*adv) {
      const auto profile = read_profile(adv_profile, adv_source);
      const auto plan = advise(profile, parse_metric_list(adv_metrics),
                               std::set<int>(adv_candidates.begin(), adv_candidates.end()),
                               parse_objective(adv_objective), adv_opts);
      emit(adv_out ? std::optional<fs::path>(*adv_out) : std::nullopt, "freeze_plan.json", plan_to_config(plan) + "\n",
           out);
      return kExitOk;
    }

    if (*syn) {
      sspec.seed = *syn_seed;
      const auto metric = parse_metric(syn_metric);
      if (!metric) throw CLI::ValidationError("--metric", "unknown metric '" + syn_metric + "'");
      sspec.metric = *metric;
      sspec.threads = resolve_threads(syn_threads);
      generate(sspec, syn_out);
      return kExitOk;
    }

    if (*val) {
      vspec.threads = resolve_threads(val_threads);
      bool all_ok = true;
      const fs::path root(val_out);
      for (std::size_t run = 0; run < val_runs; ++run) {
        vspec.seed = *val_seed + run;
        const auto work = root / "work";
        fs::remove_all(work);
        const auto ds = generate(vspec, work);
        const auto set = load_experiment(work, ds.manifest_file);
        const auto impacts = compute_impacts(set, {vspec.threads, true});
        const auto report = impact_distance_report(impacts, {read_distance_csv(ds.distance_file)});
        bool ok = true;
        double worst = 0.0;
        for (const auto& row : report.rows) {
          const double dev = row.pearson ? std::abs(row.pearson->coefficient - vspec.planted_correlation) : 1.0;
          worst = std::max(worst, dev);
          ok = ok && dev <= val_band;
        }
        emit(root, "report_fig1_seed" + std::to_string(vspec.seed) + ".csv", report_csv(report), out);
        out << (ok ? "PASS" : "FAIL") << " seed=" << vspec.seed << " planted_r=" << vspec.planted_correlation
            << " max_layer_deviation=" << csv::format_fixed(worst, 4) << '\n';
        all_ok = all_ok && ok;
      }
      fs::remove_all(root / "work");
      return all_ok ? kExitOk : kExitData;
    }

    if (*clt) {
      out << format_percent(summarize_transfer(read_transfer_csv(clt_results), clt_source, !clt_exclude)) << '\n';
      return kExitOk;
    }
  } catch (const CLI::Error& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace xferscope::cli

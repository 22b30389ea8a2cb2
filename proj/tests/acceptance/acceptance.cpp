// Acceptance run. Prints one [PASS]/[FAIL] line per criterion and exits
// non-zero if any fails. Working files go to $XFERSCOPE_ACCEPTANCE_TMP,
// else /dev/shm when present, else the system temp directory.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "xferscope/freeze_advisor.hpp"
#include "xferscope/lang_distance.hpp"
#include "xferscope/pipeline.hpp"
#include "xferscope/similarity.hpp"
#include "xferscope/stats.hpp"
#include "xferscope/synthetic_bench.hpp"
#include "xferscope/tensor_store.hpp"

namespace fs = std::filesystem;
using namespace xferscope;

namespace {

struct Verdict {
  bool ok;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 3) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

fs::path scratch_root() {
  if (const char* env = std::getenv("XFERSCOPE_ACCEPTANCE_TMP")) return env;
  std::error_code ec;
  if (fs::is_directory("/dev/shm", ec)) return "/dev/shm";
  return fs::temp_directory_path();
}

struct Scratch {
  fs::path path;
  explicit Scratch(const std::string& tag) {
    std::random_device rd;
    path = scratch_root() / ("xferscope_acc_" + tag + "_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

MatrixXdR gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  MatrixXdR m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

// ---------------------------------------------------------------------------

Verdict cka_invariance() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<int> rows(5, 50), cols(2, 20);
  std::uniform_real_distribution<double> scale(0.001, 1000.0);
  double worst_rot = 0, worst_sym = 0, worst_scale = 0, worst_route = 0;
  for (int c = 0; c < 200; ++c) {
    const int n = rows(rng), m = cols(rng), m2 = cols(rng);
    const auto x = gaussian(n, m, rng);
    const auto y = gaussian(n, m2, rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(Eigen::MatrixXd(gaussian(m, m, rng)));
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(m, m);
    const MatrixXdR xq = x * q;
    worst_rot = std::max(worst_rot, std::abs(cka_linear(x, xq).unclamped() - 1.0));
    const double xy = cka_linear(x, y).unclamped();
    worst_sym = std::max(worst_sym, std::abs(xy - cka_linear(y, x).unclamped()));
    worst_scale = std::max(worst_scale, std::abs(xy - cka_linear(MatrixXdR(scale(rng) * x), y).unclamped()));
    const double f = cka_feature(x, y).unclamped();
    const double g = cka_gram(x, y).unclamped();
    worst_route = std::max(worst_route, std::abs(f - g) / std::max(std::abs(g), 1e-300));
  }
  const double secs = seconds_since(t0);
  const bool ok = worst_rot < 1e-6 && worst_sym <= 1e-9 && worst_scale <= 1e-9 && worst_route <= 1e-6 && secs < 10;
  return {ok, "200 cases; rot " + fmt(worst_rot) + ", sym " + fmt(worst_sym) + ", scale " + fmt(worst_scale) +
                  ", gram/feature rel " + fmt(worst_route) + ", " + fmt(secs) + " s"};
}

Verdict statistics_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(777);
  std::uniform_int_distribution<int> size(20, 60);
  std::uniform_real_distribution<double> rho(0.0, 0.6);
  std::normal_distribution<double> normal;
  int datasets = 0, agree = 0;
  double worst = 0;
  while (datasets < 50) {
    const int n = size(rng);
    const double r = rho(rng);
    std::vector<double> x(static_cast<std::size_t>(n)), y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = normal(rng);
      y[i] = r * x[i] + std::sqrt(1 - r * r) * normal(rng);
    }
    const double analytic = pearson(x, y).p_value;
    if (analytic < 0.001 || analytic > 0.5) continue;
    ++datasets;
    const double perm = permutation_p(x, y, 100000, rng());
    worst = std::max(worst, std::abs(perm - analytic));
    if (std::abs(perm - analytic) <= 0.01) ++agree;
  }
  double worst_reflect = 0;
  const std::pair<double, double> shapes[] = {{0.5, 0.5}, {1, 3}, {2.5, 0.5}, {10, 10}, {104, 0.5}};
  for (auto [a, b] : shapes) {
    for (int i = 0; i < 100; ++i) {
      const double xx = (i + 0.5) / 100.0;
      worst_reflect = std::max(worst_reflect, std::abs(incomplete_beta(a, b, xx) - (1.0 - incomplete_beta(b, a, 1 - xx))));
    }
  }
  const double secs = seconds_since(t0);
  const bool ok = agree == 50 && worst_reflect <= 1e-10 && secs < 60;
  return {ok, std::to_string(agree) + "/50 within 0.01 (worst " + fmt(worst) + "), reflection worst " +
                  fmt(worst_reflect) + ", " + fmt(secs) + " s"};
}

Verdict distance_axioms() {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> unit(0, 1), lat(-90, 90), lon(-179.999, 180);
  std::bernoulli_distribution defined(0.85);
  std::size_t checked = 0;
  bool ok = true;
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<std::string> langs;
    for (int i = 0; i < 10; ++i) langs.push_back("l" + std::to_string(i));
    std::vector<DistanceMatrix> all;
    for (Metric m : {Metric::SYN, Metric::INV, Metric::PHON}) {
      std::map<std::string, LanguageFeatureVector> f;
      for (const auto& l : langs) {
        std::vector<double> v(40);
        std::vector<bool> mask(40);
        for (std::size_t k = 0; k < v.size(); ++k) {
          v[k] = k % 3 == 0 ? unit(rng) : (unit(rng) < 0.5 ? 0.0 : 1.0);
          mask[k] = k < 3 || defined(rng);
        }
        v[1] = 1.0;
        f.emplace(l, LanguageFeatureVector(l, v, mask));
      }
      all.push_back(distance_matrix(m, f, langs));
    }
    std::map<std::string, GeoCoordinate> coords;
    for (const auto& l : langs) coords.emplace(l, GeoCoordinate(lat(rng), lon(rng)));
    all.push_back(distance_matrix(coords, langs));
    std::vector<std::pair<std::string, std::string>> paths;
    for (const auto& l : langs) {
      std::string p = "Root";
      const int depth = 1 + static_cast<int>(unit(rng) * 6);
      for (int k = 0; k < depth; ++k) p += "/n" + std::to_string(static_cast<int>(unit(rng) * 3));
      paths.emplace_back(l, p + "/" + l);
    }
    all.push_back(distance_matrix(PhylogenyTree::from_paths(paths), langs));
    for (const auto& d : all) {
      for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t j = 0; j < d.size(); ++j) {
          ok = ok && (i != j || d(i, j) == 0.0) && d(i, j) == d(j, i) && d(i, j) >= 0.0 && d(i, j) <= 1.0;
          ++checked;
        }
    }
  }
  const double antipodal = orthodromic_distance({0, 0}, {0, 180});
  const double quarter = orthodromic_distance({0, 0}, {0, 90});
  ok = ok && antipodal == 1.0 && quarter == 0.5;
  return {ok, std::to_string(checked) + " entries over 5 metrics; antipodal GEO " + fmt(antipodal, 17) +
                  ", quarter " + fmt(quarter, 17)};
}

Verdict planted_recovery() {
  const auto t0 = Clock::now();
  Scratch scratch("planted");
  const unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  std::ostringstream detail;
  bool ok = true;
  const double planted[] = {-0.8, -0.4, 0.0, 0.4, 0.8};
  for (std::size_t k = 0; k < 5; ++k) {
    int recovered = 0;
    double worst = 0;
    for (int i = 0; i < 100; ++i) {
      SyntheticSpec spec;
      spec.seed = 100000 * (k + 1) + static_cast<std::uint64_t>(i);
      spec.n_languages = 15;
      spec.n_layers = 12;
      spec.samples = 64;
      spec.dim = 32;
      spec.planted_correlation = planted[k];
      spec.threads = threads;
      const auto work = scratch.path / "run";
      fs::remove_all(work);
      bool seed_ok = true;
      try {
        // Everything downstream of generate reads back from disk.
        const auto ds = generate(spec, work);
        const auto set = load_experiment(work, work / "manifest.json");
        const auto impacts = compute_impacts(set, {threads, true});
        const auto dist = read_distance_csv(work / distance_filename(spec.metric));
        const auto report = impact_distance_report(impacts, {dist});
        seed_ok = report.rows.size() == 12;
        for (const auto& row : report.rows) {
          const double dev = row.pearson ? std::abs(row.pearson->coefficient - planted[k]) : 1.0;
          worst = std::max(worst, dev);
          seed_ok = seed_ok && row.n == 210 && dev <= 0.05;
        }
      } catch (const Error& e) {
        seed_ok = false;
        std::cerr << "  seed " << spec.seed << ": " << e.what() << '\n';
      }
      if (seed_ok) ++recovered;
    }
    ok = ok && recovered >= 95;
    detail << (k ? "; " : "") << "r=" << planted[k] << ": " << recovered << "/100 (worst " << fmt(worst) << ")";
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 300;
  detail << "; " << fmt(secs) << " s";
  return {ok, detail.str()};
}

LayerCorrelationProfile english_profile() {
  // Quoted: INV layer 2 -0.66, PHON layer 5 0.499, SYN layer 1 -0.618,
  // PHON layer 6 -0.543. Other cells are weaker fillers.
  LayerCorrelationProfile p;
  p.source = "en";
  const std::map<int, std::array<double, 3>> cells = {
      {1, {-0.618, -0.31, 0.21}}, {2, {-0.40, -0.66, -0.30}}, {5, {-0.12, 0.08, 0.499}}, {6, {-0.45, -0.22, -0.543}}};
  for (const auto& [layer, v] : cells) {
    p.set(layer, Metric::SYN, v[0]);
    p.set(layer, Metric::INV, v[1]);
    p.set(layer, Metric::PHON, v[2]);
  }
  return p;
}

std::string set_text(const std::set<int>& s) {
  std::string out = "{";
  for (int v : s) out += (out.size() > 1 ? "," : "") + std::to_string(v);
  return out + "}";
}

Verdict freeze_fixtures() {
  const auto p = english_profile();
  const std::set<int> cands = {1, 2, 5, 6};
  const auto a = advise(p, {Metric::INV}, cands, Objective::narrow_gap).frozen_layers();
  AdviseOptions b_opts;
  b_opts.threshold = 0.45;
  const auto b = advise(p, {Metric::PHON}, cands, Objective::widen_gap, b_opts).frozen_layers();
  const auto c = advise(p, {Metric::SYN, Metric::INV, Metric::PHON}, cands, Objective::narrow_gap).frozen_layers();
  const bool ok = a == std::set<int>{2} && b == std::set<int>{5} && c == std::set<int>{1, 2, 6};
  return {ok, "A " + set_text(a) + ", B " + set_text(b) + ", C " + set_text(c)};
}

Verdict report_shapes() {
  Scratch scratch("shapes");
  SyntheticSpec spec;
  spec.seed = 5;
  spec.n_languages = 6;
  spec.n_layers = 12;
  spec.samples = 16;
  spec.dim = 4;
  const auto ds = generate(spec, scratch.path);
  std::vector<DistanceMatrix> dists;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 1);
  for (Metric m : kAllMetrics) {
    const auto L = ds.languages.size();
    std::vector<double> v(L * L, 0.0);
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = i + 1; j < L; ++j) v[i * L + j] = v[j * L + i] = u(rng);
    write_distance_csv(scratch.path / ("shape_" + distance_filename(m)), DistanceMatrix(m, ds.languages, v));
    dists.push_back(read_distance_csv(scratch.path / ("shape_" + distance_filename(m))));
  }
  const auto results = read_transfer_csv(ds.transfer_file);
  const auto impacts = compute_impacts(load_experiment(ds.root, ds.manifest_file));
  const auto t1 = correlate_distance_performance(dists, results);
  const auto t2 = correlate_impact_performance(impacts, results);
  const std::size_t pairs = 6 * 6 - 6;
  bool ok = t1.rows.size() == 5 && t2.rows.size() == 13 && t2.rows.back().layer == "All";
  for (const auto& r : t1.rows) ok = ok && r.n == pairs && r.pearson && r.spearman;
  for (std::size_t i = 0; i + 1 < t2.rows.size(); ++i) ok = ok && t2.rows[i].n == pairs;
  ok = ok && t2.rows.back().n == 12 * pairs;
  return {ok, "table1 " + std::to_string(t1.rows.size()) + " rows, table2 " + std::to_string(t2.rows.size()) +
                  " rows, n per row " + std::to_string(t1.rows.front().n) + " (L=6)"};
}

Verdict pvalue_stars() {
  const double strong = p_value_two_tailed(-0.3193, 210);
  const double weak = p_value_two_tailed(-0.1706, 210);
  const bool ok = strong < 0.01 && stars_text(stars_for(strong)) == "**" && weak >= 0.01 && weak < 0.05 &&
                  stars_text(stars_for(weak)) == "*";
  return {ok, "r=-0.3193 p=" + fmt(strong) + ", r=-0.1706 p=" + fmt(weak) + " (n=210)"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> checks = {
      {"CKA invariance suite", cka_invariance},
      {"Statistics oracle", statistics_oracle},
      {"Distance axioms", distance_axioms},
      {"Planted-correlation recovery", planted_recovery},
      {"Freeze-advisor fixtures", freeze_fixtures},
      {"Report shape fixtures", report_shapes},
      {"p-value star consistency", pvalue_stars},
  };
  int failed = 0;
  for (const auto& [name, check] : checks) {
    Verdict v{false, ""};
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (v.ok ? "[PASS] " : "[FAIL] ") << name << " -- " << v.detail << std::endl;
    if (!v.ok) ++failed;
  }
  std::cout << (checks.size() - static_cast<std::size_t>(failed)) << "/" << checks.size() << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}

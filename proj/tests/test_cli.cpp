#include <cstdlib>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "xferscope/cli.hpp"

using namespace xferscope;
using xferscope::testing::TempDir;
using xferscope::testing::slurp;
using xferscope::testing::spit;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "xferscope");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::set<std::string> listing(const std::filesystem::path& dir) {
  std::set<std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    out.insert(std::filesystem::relative(e.path(), dir).string());
  return out;
}

std::string fig3_profile_csv() {
  CorrelationReport report;
  auto add = [&](int layer, Metric m, double r) {
    ReportRow row;
    row.analysis = "fig3:en";
    row.layer = std::to_string(layer);
    row.metric = std::string(metric_name(m));
    row.pearson = CorrelationResult{r, 14, 0.01, Stars::one};
    row.spearman = row.pearson;
    row.n = 14;
    report.rows.push_back(row);
  };
  const std::map<int, std::array<double, 3>> cells = {
      {1, {-0.618, -0.31, 0.21}}, {2, {-0.40, -0.66, -0.30}}, {5, {-0.12, 0.08, 0.499}}, {6, {-0.45, -0.22, -0.543}}};
  for (const auto& [layer, v] : cells) {
    add(layer, Metric::SYN, v[0]);
    add(layer, Metric::INV, v[1]);
    add(layer, Metric::PHON, v[2]);
  }
  return report_csv(report);
}

}  // namespace

TEST(Cli, CkaOfAFileWithItself) {
  TempDir dir;
  std::mt19937_64 rng(91);
  write_matrix(dir / "a.xrep", xferscope::testing::random_representation(20, 5, rng));
  const auto r = run_cli({"cka", (dir / "a.xrep").string(), (dir / "a.xrep").string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "1.000000\n");
  const auto literal = run_cli({"cka", (dir / "a.xrep").string(), (dir / "a.xrep").string(), "--mode", "paper_literal"});
  EXPECT_EQ(literal.out, "0.000000\n");
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  EXPECT_EQ(run_cli({}).code, 1);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 1);
  EXPECT_EQ(run_cli({"synth", "--out", (dir / "s").string()}).code, 1);  // --seed missing
  spit(dir / "bad.xrep", std::string("XXXX1\x01\0\0", 8) + std::string(24, '\0'));
  const auto bad = run_cli({"cka", (dir / "bad.xrep").string(), (dir / "bad.xrep").string()});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("BadMagic"), std::string::npos);
  EXPECT_TRUE(bad.out.empty());
  EXPECT_EQ(run_cli({"--version"}).code, 0);
}

TEST(Cli, EndToEndReportsAndFreezePlan) {
  TempDir dir;
  const auto data = (dir / "data").string();
  ASSERT_EQ(run_cli({"synth", "--seed", "7", "--languages", "4", "--layers", "12", "--samples", "16", "--dim", "4",
                     "--threads", "1", "--out", data})
                .code,
            0);
  const auto imp = run_cli({"impact", "--manifest", data + "/manifest.json", "--threads", "2", "--out", data});
  ASSERT_EQ(imp.code, 0) << imp.err;
  EXPECT_EQ(line_count(slurp(dir / "data/impacts.csv")), 1u + 12u * 16u);

  const auto t2 = run_cli({"correlate", "--mode", "table2", "--impacts", data + "/impacts.csv", "--results",
                           data + "/transfer.csv"});
  ASSERT_EQ(t2.code, 0) << t2.err;
  EXPECT_EQ(line_count(t2.out), 14u);
  EXPECT_NE(t2.out.find("\ntable2,All,-,"), std::string::npos);

  const auto t2m = run_cli({"correlate", "--mode", "table2", "--manifest", data + "/manifest.json", "--results",
                            data + "/transfer.csv", "--threads", "1"});
  EXPECT_EQ(t2m.out, t2.out);

  const auto t1 = run_cli({"correlate", "--mode", "table1", "--distance", data + "/distance_syn.csv", "--results",
                           data + "/transfer.csv", "--json"});
  ASSERT_EQ(t1.code, 0) << t1.err;
  const auto j = nlohmann::json::parse(t1.out);
  ASSERT_EQ(j.size(), 1u);
  EXPECT_EQ(j[0]["n"], 12);

  const auto f3 = run_cli({"correlate", "--mode", "fig3", "--impacts", data + "/impacts.csv", "--distance",
                           data + "/distance_syn.csv", "--source", "en", "--layers", "1,2", "--out",
                           (dir / "rep").string()});
  ASSERT_EQ(f3.code, 0) << f3.err;
  EXPECT_EQ(line_count(slurp(dir / "rep/report_fig3.csv")), 3u);
  EXPECT_EQ(run_cli({"correlate", "--mode", "fig3", "--impacts", data + "/impacts.csv", "--distance",
                     data + "/distance_syn.csv"})
                .code,
            1);  // --source missing

  spit(dir / "profile.csv", fig3_profile_csv());
  const auto adv = run_cli({"advise", "--profile", (dir / "profile.csv").string(), "--metrics", "syn,inv,phon",
                            "--candidates", "1,2,5,6", "--objective", "narrow_gap", "--threshold", "0.5"});
  ASSERT_EQ(adv.code, 0) << adv.err;
  EXPECT_EQ(parse_plan_config(adv.out).frozen_layers(), (std::set<int>{1, 2, 6}));
  const auto none = run_cli({"advise", "--profile", (dir / "profile.csv").string(), "--metrics", "phon",
                             "--candidates", "1,2,5,6", "--objective", "widen_gap"});
  EXPECT_EQ(none.code, 2);
  EXPECT_NE(none.err.find("NoLayerQualifies"), std::string::npos);
}

TEST(Cli, DistancesFromRawData) {
  TempDir dir;
  spit(dir / "syn.csv", "lang,a,b,c\nen,1,1,0\nde,1,0,--\nsw,0,1,1\n");
  spit(dir / "coords.csv", "lang,lat,lon\nen,0,0\nde,0,90\nsw,0,180\nzh,30,100\n");
  spit(dir / "tree.txt", "en,R/G/W/en\nde,R/G/W/de\nsw,R/B/sw\n");
  const auto r = run_cli({"distances", "--syn", (dir / "syn.csv").string(), "--coords", (dir / "coords.csv").string(),
                          "--tree", (dir / "tree.txt").string(), "--out", (dir / "out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(listing(dir / "out"), (std::set<std::string>{"distance_gen.csv", "distance_geo.csv", "distance_syn.csv"}));
  const auto geo = read_distance_csv(dir / "out/distance_geo.csv");
  EXPECT_EQ(geo.languages(), (std::vector<std::string>{"de", "en", "sw"}));
  EXPECT_EQ(geo.at("en", "sw"), 1.0);
  EXPECT_EQ(geo.at("en", "de"), 0.5);
  EXPECT_NEAR(read_distance_csv(dir / "out/distance_syn.csv").at("en", "de"), 1 - 1 / std::sqrt(2.0), 1e-12);
  EXPECT_EQ(run_cli({"distances", "--out", (dir / "o2").string()}).code, 1);
}

TEST(Cli, CltpAndValidate) {
  TempDir dir;
  spit(dir / "t.csv", "source,es,en\nes,0.6,0.8\nen,0.5,0.9\n");
  EXPECT_EQ(run_cli({"cltp", "--results", (dir / "t.csv").string(), "--source", "es"}).out, "70.00\n");
  EXPECT_EQ(run_cli({"cltp", "--results", (dir / "t.csv").string(), "--source", "es", "--exclude-source"}).out,
            "80.00\n");
  const std::vector<std::string> small = {"--languages", "15", "--layers", "2", "--threads", "1"};
  auto args = std::vector<std::string>{"validate", "--seed", "3", "--runs", "2", "--out", (dir / "v").string()};
  args.insert(args.end(), small.begin(), small.end());
  const auto ok = run_cli(args);
  EXPECT_EQ(ok.code, 0) << ok.out << ok.err;
  EXPECT_EQ(line_count(ok.out), 2u);
  EXPECT_EQ(ok.out.rfind("PASS seed=3 planted_r=-0.6", 0), 0u) << ok.out;
  args.insert(args.end(), {"--band", "0"});
  EXPECT_EQ(run_cli(args).code, 2);
  EXPECT_FALSE(std::filesystem::exists(dir / "v/work"));
}

TEST(Cli, WritesNothingOutsideOut) {
  TempDir inputs, cwd, outdir;
  const auto data = (inputs / "d").string();
  ASSERT_EQ(run_cli({"synth", "--seed", "1", "--languages", "3", "--layers", "1", "--samples", "8", "--dim", "3",
                     "--out", data})
                .code,
            0);
  spit(inputs / "profile.csv", fig3_profile_csv());
  const auto before = listing(inputs.path());
  const auto old = std::filesystem::current_path();
  std::filesystem::current_path(cwd.path());
  const auto o = outdir.path().string();
  EXPECT_EQ(run_cli({"impact", "--manifest", data + "/manifest.json", "--out", o}).code, 0);
  EXPECT_EQ(run_cli({"correlate", "--mode", "fig1", "--impacts", o + "/impacts.csv", "--distance",
                     data + "/distance_syn.csv", "--out", o})
                .code,
            0);
  EXPECT_EQ(run_cli({"advise", "--profile", (inputs / "profile.csv").string(), "--metrics", "inv", "--candidates",
                     "1,2,5,6", "--out", o})
                .code,
            0);
  std::filesystem::current_path(old);
  EXPECT_TRUE(listing(cwd.path()).empty());
  EXPECT_EQ(listing(inputs.path()), before);
  EXPECT_EQ(listing(outdir.path()), (std::set<std::string>{"impacts.csv", "report_fig1.csv", "freeze_plan.json"}));
  EXPECT_EQ(slurp(outdir / "freeze_plan.json"),
            "{\"frozen_layers\":[2],\"objective\":\"narrow_gap\",\"rationale\":[{\"coefficient\":-0.66,\"layer\":2,"
            "\"metric\":\"INV\"}]}\n");
}

TEST(Cli, ThreadResolution) {
  ::setenv("XFERSCOPE_THREADS", "3", 1);
  EXPECT_EQ(cli::resolve_threads(std::nullopt), 3u);
  EXPECT_EQ(cli::resolve_threads(5u), 5u);
  ::setenv("XFERSCOPE_THREADS", "junk", 1);
  EXPECT_GE(cli::resolve_threads(std::nullopt), 1u);
  ::unsetenv("XFERSCOPE_THREADS");
}

class CliHelp : public ::testing::TestWithParam<std::string> {};

TEST_P(CliHelp, MatchesGoldenFile) {
  const auto r = GetParam() == "main" ? run_cli({"--help"}) : run_cli({GetParam(), "--help"});
  EXPECT_EQ(r.code, 0);
  const std::filesystem::path golden = std::filesystem::path(XFERSCOPE_GOLDEN_DIR) / ("help_" + GetParam() + ".txt");
  if (std::getenv("XFERSCOPE_UPDATE_GOLDEN")) spit(golden, r.out);
  ASSERT_TRUE(std::filesystem::exists(golden)) << golden;
  EXPECT_EQ(r.out, slurp(golden));
}

INSTANTIATE_TEST_SUITE_P(Subcommands, CliHelp,
                         ::testing::Values("main", "cka", "impact", "distances", "correlate", "advise", "synth",
                                           "validate", "cltp"));

// Copyright (C) 2026 The odeslab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <filesystem>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "odeslab/cli.hpp"

using namespace odeslab;
namespace fs = std::filesystem;

namespace {

fs::path configs_dir() {
    if (const char* env = std::getenv("ODESLAB_TEST_CONFIGS")) return env;
    return fs::path("configs");
}

class TempDir {
public:
    explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("odeslab_cli_" + name)) {
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

const char* kSmallConfig = R"({
  "name": "small",
  "M_list": [8, 16, 32, 64],
  "seeds": [0, 1],
  "grid": {"kind": "uniform-lambda", "t_start": 10.0, "t_end": 0.001},
  "experiments": [
    {"name": "g", "kind": "orders", "model": {"model": "gaussian", "gamma": 1.0},
     "samplers": [{"rule": "DDIM"}, {"rule": "ODESolver", "order": 2}]}
  ]
})";

}  // namespace

TEST(Config, ParsesDefaultsAndOverrides) {
    const auto cfg = run_config_from_json(Json::parse(R"({
      "name": "n", "output_dir": "o", "comparison": "equal-NFE", "M_list": [1, 2, 3, 4],
      "grid": {"kind": "uniform-time", "t_start": 5.0, "t_end": 0.01},
      "oracle": {"gaussian_bypass": false, "tol": 1e-11},
      "experiments": [
        {"model": {"model": "gaussian", "gamma": 2.0}, "samplers": [{"rule": "DDIM"}]},
        {"name": "b", "kind": "tracking", "model": {"model": "poly", "coeffs": [[1.0]]}, "lookaheads": ["Oracle"],
         "M_list": [5, 6, 7, 8], "comparison": "equal-M", "schedule": {"kind": "VP-linear"},
         "grid": {"kind": "uniform-lambda", "t_start": 1.0, "t_end": 0.001}}
      ]})"));
    EXPECT_EQ(cfg.name, "n");
    EXPECT_EQ(cfg.output_dir, "o");
    ASSERT_EQ(cfg.plans.size(), 2u);
    const auto& a = cfg.plans[0];
    EXPECT_EQ(a.name, "orders");
    EXPECT_EQ(a.comparison, Comparison::EqualNFE);
    EXPECT_EQ(a.grid.kind, GridKind::UniformTime);
    EXPECT_FALSE(a.reference.gaussian_bypass);
    EXPECT_EQ(a.reference.tol, 1e-11);
    EXPECT_EQ(a.seeds, (std::vector<std::uint64_t>{0, 1, 2}));
    const auto& b = cfg.plans[1];
    EXPECT_EQ(b.kind, ExperimentKind::Tracking);
    EXPECT_EQ(b.M_list, (std::vector<int>{5, 6, 7, 8}));
    EXPECT_EQ(b.comparison, Comparison::EqualM);
    EXPECT_EQ(b.schedule.kind(), ScheduleKind::VPLinear);
    EXPECT_EQ(b.lookaheads, (std::vector<Lookahead>{Lookahead::Oracle}));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    const auto bad = [](const char* text) {
        try {
            (void)run_config_from_json(Json::parse(text));
        } catch (const Error& e) {
            return e.kind() == ErrorKind::Config;
        }
        return false;
    };
    EXPECT_TRUE(bad(R"({"experiments": [{"model": {"model": "gaussian", "gamma": 1}, "samplers": [{"rule": "DDIM"}]}], "typo": 1})"));
    EXPECT_TRUE(bad(R"({"experiments": [{"model": {"model": "gaussian", "gamma": 1}, "samplers": [{"rule": "DDIM"}], "x": 2}]})"));
    EXPECT_TRUE(bad(R"({"experiments": []})"));
    EXPECT_TRUE(bad(R"({"comparison": "equal-time", "experiments": [{"model": {"model": "gaussian", "gamma": 1}, "samplers": [{"rule": "DDIM"}]}]})"));
    EXPECT_TRUE(bad(R"({"M_list": [10, 5, 20, 40], "experiments": [{"model": {"model": "gaussian", "gamma": 1}, "samplers": [{"rule": "DDIM"}]}]})"));
    EXPECT_TRUE(bad(R"({"experiments": [{"model": {"model": "gaussian", "gamma": 1}}]})"));
    EXPECT_TRUE(bad(R"({"oracle": {"tol": 1e-14}, "experiments": [{"model": {"model": "gaussian", "gamma": 1}, "samplers": [{"rule": "DDIM"}]}]})"));
    EXPECT_TRUE(bad(R"({"experiments": [{"name": "a", "model": {"model": "gaussian", "gamma": 1}, "samplers": [{"rule": "DDIM"}]},
                                        {"name": "a", "model": {"model": "gaussian", "gamma": 1}, "samplers": [{"rule": "DDIM"}]}]})"));
}

TEST(Config, MalformedJsonReportsLineAndColumn) {
    try {
        (void)parse_json_text("{\n  \"name\": \"x\",\n  oops\n}", "cfg.json");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Config);
        EXPECT_NE(std::string(e.what()).find("cfg.json:3:3"), std::string::npos) << e.what();
    }
}

TEST(Config, BundledConfigsParse) {
    int n = 0;
    for (const auto& entry : fs::directory_iterator(configs_dir())) {
        if (entry.path().extension() != ".json") continue;
        EXPECT_NO_THROW((void)run_config_from_json(parse_json_text(read_text_file(entry.path()), entry.path().string())))
            << entry.path();
        ++n;
    }
    EXPECT_GE(n, 5);
}

TEST(Run, WritesReportFiles) {
    TempDir dir("run");
    write_text_file(dir.path() / "c.json", kSmallConfig);
    std::ostringstream out, err;
    ASSERT_EQ(cmd_run((dir.path() / "c.json").string(), (dir.path() / "out").string(), 2, out, err), kExitOk) << err.str();
    const auto csv = read_text_file(dir.path() / "out" / "small.csv");
    EXPECT_EQ(csv.rfind(kReportCsvHeader, 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 4 * 2);
    EXPECT_TRUE(fs::exists(dir.path() / "out" / "small.json"));
    const auto slopes = read_text_file(dir.path() / "out" / "small_slopes.csv");
    EXPECT_NE(slopes.find("g,DDIM,"), std::string::npos);
    EXPECT_NE(out.str().find("g/ODESolver-2: slope"), std::string::npos);

    std::ostringstream out2, err2;
    ASSERT_EQ(cmd_run((dir.path() / "c.json").string(), (dir.path() / "out2").string(), 1, out2, err2), kExitOk);
    EXPECT_EQ(read_text_file(dir.path() / "out2" / "small.csv"), csv);
    EXPECT_EQ(read_text_file(dir.path() / "out2" / "small.json"), read_text_file(dir.path() / "out" / "small.json"));
}

TEST(Run, BundledOrdersConfigHasFiveSamplers) {
    TempDir dir("orders");
    std::ostringstream out, err;
    ASSERT_EQ(cmd_run((configs_dir() / "theorem1_orders.json").string(), dir.path().string(), 4, out, err), kExitOk) << err.str();
    const auto slopes = parse_csv(read_text_file(dir.path() / "theorem1_orders_slopes.csv"));
    std::set<std::string> groups;
    for (const auto& r : slopes.rows) {
        if (r[slopes.column("experiment")] == "orders_gaussian") groups.insert(r[slopes.column("slope_group")]);
    }
    EXPECT_EQ(groups, (std::set<std::string>{"DDIM", "ODESolver-2", "ODESolver-3", "UniPC-3", "ForwardValue[DDIM]"}));
}

TEST(Run, ConfigErrorsExitTwo) {
    TempDir dir("bad");
    write_text_file(dir.path() / "bad.json", "{\"experiments\": [}");
    std::ostringstream out, err;
    EXPECT_EQ(cmd_run((dir.path() / "bad.json").string(), std::nullopt, 1, out, err), kExitConfig);
    EXPECT_NE(err.str().find("malformed JSON"), std::string::npos);
    EXPECT_EQ(cmd_run((dir.path() / "missing.json").string(), std::nullopt, 1, out, err), kExitConfig);
}

TEST(Run, NumericalFailureExitsThree) {
    TempDir dir("num");
    write_text_file(dir.path() / "c.json", R"({
      "M_list": [2, 3, 4, 5], "seeds": [0],
      "grid": {"kind": "uniform-lambda", "t_start": 10.0, "t_end": 0.001},
      "experiments": [{"model": {"model": "mixture", "components": [
          {"w": 0.5, "mean": [1.0, 0.0], "s": 0.05}, {"w": 0.5, "mean": [-1.0, 0.0], "s": 0.05}]},
        "samplers": [{"rule": "ForwardIdeal", "picard_max_iters": 1}]}]})");
    std::ostringstream out, err;
    EXPECT_EQ(cmd_run((dir.path() / "c.json").string(), (dir.path() / "o").string(), 1, out, err), kExitNumerical) << err.str();
    EXPECT_NE(err.str().find("Picard"), std::string::npos) << err.str();
}

TEST(Run, OutputDirPrecedence) {
    ::unsetenv("ODESLAB_OUT");
    EXPECT_EQ(resolve_output_dir(std::nullopt, "cfg"), fs::path("cfg"));
    ::setenv("ODESLAB_OUT", "env", 1);
    EXPECT_EQ(resolve_output_dir(std::nullopt, "cfg"), fs::path("env"));
    EXPECT_EQ(resolve_output_dir(std::string("flag"), "cfg"), fs::path("flag"));
    ::unsetenv("ODESLAB_OUT");
}

TEST(Plot, SingleGroupDeterministic) {
    TempDir dir("plot");
    const std::string csv = std::string(kReportCsvHeader) +
                            "e,DDIM,,10,10,0,0.1,DDIM\ne,DDIM,,20,20,0,0.05,DDIM\ne,DDIM,,40,40,0,0.025,DDIM\ne,DDIM,,80,80,0,0.0125,DDIM\n";
    write_text_file(dir.path() / "r.csv", csv);
    std::ostringstream out, err;
    ASSERT_EQ(cmd_plot((dir.path() / "r.csv").string(), (dir.path() / "a.svg").string(), out, err), kExitOk);
    ASSERT_EQ(cmd_plot((dir.path() / "r.csv").string(), (dir.path() / "b.svg").string(), out, err), kExitOk);
    const auto svg = read_text_file(dir.path() / "a.svg");
    EXPECT_EQ(svg, read_text_file(dir.path() / "b.svg"));
    std::size_t lines = 0;
    for (std::size_t p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++lines;
    EXPECT_EQ(lines, 1u);
    EXPECT_NE(svg.find("e/DDIM  slope 1.000"), std::string::npos);
}

TEST(Plot, EmptyDataSaysNoData) {
    const auto svg = render_convergence_svg(parse_csv(kReportCsvHeader));
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find("no data"), std::string::npos);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST(Plot, MissingColumnExitsTwo) {
    TempDir dir("plotbad");
    write_text_file(dir.path() / "r.csv", "experiment,M\ne,10\n");
    std::ostringstream out, err;
    EXPECT_EQ(cmd_plot((dir.path() / "r.csv").string(), (dir.path() / "x.svg").string(), out, err), kExitConfig);
    EXPECT_NE(err.str().find("missing column"), std::string::npos);
    EXPECT_FALSE(fs::exists(dir.path() / "x.svg"));
}

TEST(Verify, CriterionNamesCoverAcceptanceListOnce) {
    std::vector<std::string> names;
    for (const auto& c : acceptance_criteria()) names.emplace_back(c.name);
    EXPECT_EQ(names, (std::vector<std::string>{"theorem1_orders", "theorem2_lower_bound", "theorem3_cancellation", "theorem4_tracking",
                                               "oracle_equivalence", "structural_identities", "grid_subsample_rule", "determinism"}));
    EXPECT_EQ(std::set<std::string>(names.begin(), names.end()).size(), 8u);
}

TEST(Verify, OnlyFilterRunsOneBlock) {
    TempDir dir("verify");
    VerifyOptions o;
    o.only = "grid_subsample";
    std::ostringstream out, err;
    EXPECT_EQ(cmd_verify(o, dir.path().string(), out, err), kExitOk);
    EXPECT_NE(out.str().find("PASS grid_subsample_rule"), std::string::npos);
    EXPECT_EQ(out.str().find("theorem1"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir.path() / "verify.csv"));
    const auto j = Json::parse(read_text_file(dir.path() / "verify.json"));
    EXPECT_EQ(j.at("criteria").size(), 1u);

    VerifyOptions t3;
    t3.only = "theorem3";
    const auto outcome = run_verify(t3);
    ASSERT_EQ(outcome.results.size(), 1u);
    EXPECT_EQ(outcome.results[0].name, "theorem3_cancellation");
    EXPECT_TRUE(outcome.results[0].pass) << outcome.results[0].detail;

    VerifyOptions none;
    none.only = "no_such_criterion";
    EXPECT_EQ(cmd_verify(none, dir.path().string(), out, err), kExitConfig);
}

TEST(Verify, PhiSignFaultNamesCulprit) {
    VerifyOptions o;
    o.only = "theorem1";
    o.fault_phi1_sign = true;
    const auto outcome = run_verify(o);
    ASSERT_EQ(outcome.results.size(), 1u);
    EXPECT_FALSE(outcome.results[0].pass);
    EXPECT_NE(outcome.results[0].detail.find("culprit"), std::string::npos);
    EXPECT_NE(outcome.results[0].detail.find("ODESolver-2"), std::string::npos);
    EXPECT_FALSE(outcome.all_pass());
}

TEST(ExitCodes, Mapping) {
    EXPECT_EQ(exit_code(ErrorKind::Numerical), kExitNumerical);
    EXPECT_EQ(exit_code(ErrorKind::Domain), kExitNumerical);
    EXPECT_EQ(exit_code(ErrorKind::Config), kExitConfig);
    EXPECT_EQ(exit_code(ErrorKind::Io), kExitConfig);
}

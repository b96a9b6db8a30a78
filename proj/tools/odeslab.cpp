// Copyright (C) 2026 The odeslab Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "odeslab/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"odeslab: probability-flow ODE sampler lab"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    int threads = 1;
    auto* run = app.add_subcommand("run", "Run the experiments of a JSON config and write CSV/JSON reports");
    run->add_option("config", config_path, "Config file")->required();
    run->add_option("--out", out_dir, "Output directory (overrides ODESLAB_OUT and the config)");
    run->add_option("--threads", threads, "Worker threads")->check(CLI::Range(1, 256));

    std::string csv_path, svg_path;
    auto* plot = app.add_subcommand("plot", "Render a log-log convergence plot from a report CSV");
    plot->add_option("csv", csv_path, "Report CSV")->required();
    plot->add_option("svg", svg_path, "Output SVG")->required();

    odeslab::VerifyOptions vopts;
    std::string fault;
    auto* verify = app.add_subcommand("verify", "Run the acceptance suite");
    verify->add_option("--only", vopts.only, "Run criteria whose name contains this string");
    verify->add_option("--threads", vopts.threads, "Worker threads")->check(CLI::Range(1, 256));
    verify->add_option("--out", out_dir, "Output directory for verify.csv / verify.json");
    verify->add_option("--fault", fault, "Inject a fault (phi1-sign)")->check(CLI::IsMember({"phi1-sign"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : odeslab::kExitConfig;
    }

    const auto out_flag = out_dir.empty() ? std::nullopt : std::optional<std::string>(out_dir);
    if (*run) return odeslab::cmd_run(config_path, out_flag, threads, std::cout, std::cerr);
    if (*plot) return odeslab::cmd_plot(csv_path, svg_path, std::cout, std::cerr);
    vopts.fault_phi1_sign = fault == "phi1-sign";
    return odeslab::cmd_verify(vopts, out_flag, std::cout, std::cerr);
}

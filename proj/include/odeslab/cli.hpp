// Copyright (C) 2026 The odeslab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "odeslab/core.hpp"
#include "odeslab/harness.hpp"
#include "odeslab/json_io.hpp"
#include "odeslab/models.hpp"
#include "odeslab/plot.hpp"
#include "odeslab/schedule.hpp"
#include "odeslab/solvers.hpp"
#include "odeslab/verify.hpp"

namespace odeslab {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

inline int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::Numerical:
        case ErrorKind::Domain: return kExitNumerical;
        default: return kExitConfig;
    }
}

struct RunConfig {
    std::string name = "report";
    std::string output_dir = "odeslab_out";
    std::vector<ExperimentPlan> plans;
};

/// Parses JSON text; syntax errors report line and column.
inline Json parse_json_text(const std::string& text, const std::string& source) {
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        std::size_t line = 1, col = 1;
        const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
        for (std::size_t k = 0; k < end; ++k) {
            if (text[k] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        fail(ErrorKind::Config, source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": malformed JSON");
    }
}

namespace detail {

inline Comparison comparison_from_string(const std::string& s) {
    if (s == "equal-M") return Comparison::EqualM;
    if (s == "equal-NFE") return Comparison::EqualNFE;
    fail(ErrorKind::Config, "comparison must be \"equal-M\" or \"equal-NFE\", got \"" + s + "\"");
}

inline ReferenceOptions reference_from_json(const Json& j, ReferenceOptions r) {
    const std::string ctx = "oracle";
    require_known_keys(j, {"gaussian_bypass", "tol", "initial_substeps", "max_doublings"}, ctx);
    r.gaussian_bypass = optional_or(j, "gaussian_bypass", r.gaussian_bypass, ctx);
    r.tol = optional_or(j, "tol", r.tol, ctx);
    r.initial_substeps = optional_or(j, "initial_substeps", r.initial_substeps, ctx);
    r.max_doublings = optional_or(j, "max_doublings", r.max_doublings, ctx);
    if (!(r.tol >= 1e-12)) fail(ErrorKind::Config, "oracle.tol must be >= 1e-12");
    if (r.initial_substeps < 1 || r.max_doublings < 0) fail(ErrorKind::Config, "oracle: substep counts must be positive");
    return r;
}

}  // namespace detail

/// Top-level keys give defaults; each entry of "experiments" may override schedule, grid,
/// M_list, seeds, comparison and oracle.
inline RunConfig run_config_from_json(const Json& j) {
    const std::string ctx = "config";
    require_known_keys(j, {"name", "output_dir", "comparison", "schedule", "grid", "M_list", "seeds", "oracle", "experiments"}, ctx);
    RunConfig cfg;
    cfg.name = optional_or<std::string>(j, "name", cfg.name, ctx);
    cfg.output_dir = optional_or<std::string>(j, "output_dir", cfg.output_dir, ctx);

    ExperimentPlan base;
    base.grid.kind = GridKind::UniformLambda;
    if (j.contains("schedule")) base.schedule = schedule_from_json(j.at("schedule"));
    if (j.contains("grid")) base.grid = grid_config_from_json(j.at("grid"));
    base.M_list = optional_or(j, "M_list", base.M_list, ctx);
    base.seeds = optional_or(j, "seeds", base.seeds, ctx);
    base.comparison = detail::comparison_from_string(optional_or<std::string>(j, "comparison", "equal-M", ctx));
    if (j.contains("oracle")) base.reference = detail::reference_from_json(j.at("oracle"), base.reference);

    const Json experiments = required<Json>(j, "experiments", ctx);
    if (!experiments.is_array() || experiments.empty()) fail(ErrorKind::Config, "config: \"experiments\" must be a non-empty array");
    for (const auto& e : experiments) {
        const std::string ectx = "experiment";
        require_known_keys(e, {"name", "kind", "model", "samplers", "lookaheads", "schedule", "grid", "M_list", "seeds", "comparison", "oracle"}, ectx);
        ExperimentPlan p = base;
        p.kind = experiment_kind_from_string(optional_or<std::string>(e, "kind", "orders", ectx));
        p.name = optional_or<std::string>(e, "name", to_string(p.kind), ectx);
        p.model = model_from_json(required<Json>(e, "model", ectx));
        if (e.contains("schedule")) p.schedule = schedule_from_json(e.at("schedule"));
        if (e.contains("grid")) p.grid = grid_config_from_json(e.at("grid"));
        p.M_list = optional_or(e, "M_list", p.M_list, ectx);
        p.seeds = optional_or(e, "seeds", p.seeds, ectx);
        if (e.contains("comparison")) p.comparison = detail::comparison_from_string(required<std::string>(e, "comparison", ectx));
        if (e.contains("oracle")) p.reference = detail::reference_from_json(e.at("oracle"), p.reference);
        if (e.contains("samplers")) {
            for (const auto& s : e.at("samplers")) p.samplers.push_back(sampler_from_json(s));
        }
        if (e.contains("lookaheads")) {
            for (const auto& l : e.at("lookaheads")) {
                if (!l.is_string()) fail(ErrorKind::Config, "experiment: lookaheads must be strings");
                p.lookaheads.push_back(lookahead_from_string(l.get<std::string>()));
            }
        }
        try {
            p.validate();
        } catch (const Error& err) {
            fail(ErrorKind::Config, err.what());
        }
        for (const auto& other : cfg.plans) {
            if (other.name == p.name) fail(ErrorKind::Config, "config: duplicate experiment name \"" + p.name + "\"");
        }
        cfg.plans.push_back(std::move(p));
    }
    return cfg;
}

/// Output directory precedence: --out, then ODESLAB_OUT, then the configured default.
inline std::filesystem::path resolve_output_dir(const std::optional<std::string>& flag, const std::string& fallback) {
    if (flag && !flag->empty()) return *flag;
    if (const char* env = std::getenv("ODESLAB_OUT"); env && *env) return env;
    return fallback;
}

inline std::string slopes_csv(const ConvergenceReport& r) {
    std::string out = "experiment,slope_group,slope,residual,points\n";
    for (const auto& f : r.fits) {
        out += f.experiment + ',' + f.slope_group + ',' + (f.fitted ? format_g17(f.fit.slope) : std::string("nan")) + ',' +
               (f.fitted ? format_g17(f.fit.residual) : std::string("nan")) + ',' + std::to_string(f.fit.points) + '\n';
    }
    return out;
}

inline int cmd_run(const std::string& config_path, const std::optional<std::string>& out_flag, int threads, std::ostream& out,
                   std::ostream& err) {
    try {
        const auto t0 = std::chrono::steady_clock::now();
        const RunConfig cfg = run_config_from_json(parse_json_text(read_text_file(config_path), config_path));
        const auto dir = resolve_output_dir(out_flag, cfg.output_dir);
        ConvergenceReport report;
        for (const auto& plan : cfg.plans) report.append(run_experiment(plan, threads));
        emit_report(report, dir, cfg.name);
        write_text_file(dir / (cfg.name + "_slopes.csv"), slopes_csv(report));
        for (const auto& f : report.fits) {
            out << f.experiment << '/' << f.slope_group << ": slope "
                << (f.fitted ? detail::fmt("%.3f", f.fit.slope) + " (residual " + detail::fmt("%.3g", f.fit.residual) + ")" : "n/a (" + f.note + ")")
                << '\n';
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out << "wrote " << (dir / (cfg.name + ".csv")).string() << ", " << cfg.name << ".json, " << cfg.name << "_slopes.csv"
            << " (runtime " << detail::fmt("%.2f", secs) << " s)\n";
        return kExitOk;
    } catch (const Error& e) {
        err << "odeslab run: " << e.what() << '\n';
        return exit_code(e.kind());
    }
}

inline int cmd_plot(const std::string& csv_path, const std::string& svg_path, std::ostream& out, std::ostream& err) {
    try {
        const std::string svg = render_convergence_svg(parse_csv(read_text_file(csv_path)));
        write_text_file(svg_path, svg);
        out << "wrote " << svg_path << '\n';
        return kExitOk;
    } catch (const Error& e) {
        err << "odeslab plot: " << e.what() << '\n';
        return exit_code(e.kind());
    }
}

inline int cmd_verify(const VerifyOptions& opts, const std::optional<std::string>& out_flag, std::ostream& out, std::ostream& err) {
    bool matched = false;
    for (const auto& c : acceptance_criteria()) matched |= opts.only.empty() || std::string(c.name).find(opts.only) != std::string::npos;
    if (!matched) {
        err << "odeslab verify: no criterion matches \"" << opts.only << "\"\n";
        return kExitConfig;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto outcome = run_verify(opts, [&](const CriterionResult& r) {
        out << (r.pass ? "PASS " : "FAIL ") << r.name << " [" << detail::fmt("%.2f", r.seconds) << " s] " << r.detail << '\n';
        out.flush();
    });
    try {
        const auto dir = resolve_output_dir(out_flag, "odeslab_out");
        write_text_file(dir / "verify.csv", report_csv(outcome.report));
        write_text_file(dir / "verify.json", dump_json(verify_to_json(outcome, opts)));
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::size_t passed = 0;
        for (const auto& r : outcome.results) passed += r.pass;
        out << passed << "/" << outcome.results.size() << " criteria passed (runtime " << detail::fmt("%.2f", secs) << " s); wrote "
            << (dir / "verify.csv").string() << " and verify.json\n";
    } catch (const Error& e) {
        err << "odeslab verify: " << e.what() << '\n';
        return exit_code(e.kind());
    }
    return outcome.all_pass() ? kExitOk : 1;
}

}  // namespace odeslab

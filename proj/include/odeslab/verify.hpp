// Copyright (C) 2026 The odeslab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "odeslab/core.hpp"
#include "odeslab/harness.hpp"
#include "odeslab/json_io.hpp"
#include "odeslab/models.hpp"
#include "odeslab/oracle.hpp"
#include "odeslab/schedule.hpp"
#include "odeslab/solvers.hpp"

namespace odeslab {

struct VerifyOptions {
    int threads = 1;
    std::string only;          // substring filter on criterion names
    bool fault_phi1_sign = false;
};

struct CriterionResult {
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;        // wall clock; never serialized
    double budget_seconds = 0.0; // 0: no budget
};

struct VerifyOutcome {
    std::vector<CriterionResult> results;
    ConvergenceReport report;
    bool all_pass() const {
        for (const auto& r : results) {
            if (!r.pass) return false;
        }
        return !results.empty();
    }
};

namespace detail {

inline double phi_flipped_phi1(int k, double x) { return k == 1 ? -phi(1, x) : phi(k, x); }

inline std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

inline bool in_range(double v, double lo, double hi) { return v >= lo && v <= hi; }

struct Context {
    const VerifyOptions& opts;
    ConvergenceReport& report;

    SamplerSpec sampler(SamplerSpec s) const {
        if (opts.fault_phi1_sign) s.phi = &phi_flipped_phi1;
        return s;
    }
    PhiFn phi_fn() const { return opts.fault_phi1_sign ? &phi_flipped_phi1 : &phi; }
};

inline ExperimentPlan base_plan(const std::string& name, ExperimentKind kind, PredictorPtr model) {
    ExperimentPlan p;
    p.name = name;
    p.kind = kind;
    p.model = std::move(model);
    p.grid.kind = GridKind::UniformLambda;
    p.grid.t_start = 10.0;
    p.grid.t_end = 1e-3;
    return p;
}

inline PredictorPtr unit_gaussian() { return std::make_shared<IsotropicGaussianModel>(1.0, 4); }

/// Slope check for one group; appends "group=slope" to `detail` and the group to `culprits` on failure.
inline bool check_slope(const ConvergenceReport& r, const std::string& exp, const std::string& group, double lo, double hi,
                        std::string& detail, std::vector<std::string>& culprits) {
    const auto& f = r.find_fit(exp, group);
    if (!detail.empty()) detail += ' ';
    if (!f.fitted) {
        detail += exp + "/" + group + "=unfit";
        culprits.push_back(exp + "/" + group);
        return false;
    }
    const bool ok = in_range(f.fit.slope, lo, hi);
    detail += exp + "/" + group + "=" + fmt("%.3f", f.fit.slope);
    if (!ok) culprits.push_back(exp + "/" + group + " slope " + fmt("%.3f", f.fit.slope) + " outside [" + fmt("%g", lo) + ", " + fmt("%g", hi) + "]");
    return ok;
}

inline std::string join_culprits(const std::vector<std::string>& c) {
    std::string out;
    for (const auto& s : c) out += (out.empty() ? "" : "; ") + s;
    return out;
}

inline ConvergenceReport theorem1_report(const Context& ctx, int threads) {
    ConvergenceReport all;
    for (const auto& [name, model] : std::vector<std::pair<std::string, PredictorPtr>>{
             {"orders_gaussian", unit_gaussian()}, {"orders_mixture", make_two_component_mixture()}}) {
        auto plan = base_plan(name, ExperimentKind::Orders, model);
        plan.samplers = {ctx.sampler(SamplerSpec::ddim()), ctx.sampler(SamplerSpec::ode_solver(2)), ctx.sampler(SamplerSpec::unipc())};
        all.append(run_experiment(plan, threads));
    }
    return all;
}

inline CriterionResult theorem1_orders(Context& ctx) {
    CriterionResult res;
    res.name = "theorem1_orders";
    res.budget_seconds = 10.0;
    auto r = theorem1_report(ctx, ctx.opts.threads);
    std::vector<std::string> culprits;
    bool ok = true;
    for (const char* exp : {"orders_gaussian", "orders_mixture"}) {
        ok &= check_slope(r, exp, "DDIM", 0.9, 1.1, res.detail, culprits);
        ok &= check_slope(r, exp, "ODESolver-2", 1.8, 2.2, res.detail, culprits);
        ok &= check_slope(r, exp, "UniPC-3", 2.5, 3.5, res.detail, culprits);
    }
    res.pass = ok;
    if (!ok) res.detail = "culprit: " + join_culprits(culprits) + " | " + res.detail;
    ctx.report.append(std::move(r));
    return res;
}

inline CriterionResult theorem2_lower_bound(Context& ctx) {
    CriterionResult res;
    res.name = "theorem2_lower_bound";
    res.budget_seconds = 5.0;
    auto plan = base_plan("lower_bound", ExperimentKind::LowerBound, nullptr);
    const double gamma = plan.schedule.at(plan.grid.t_end).sigma / plan.schedule.at(plan.grid.t_end).alpha;  // e^{-lambda_{t_M}}
    plan.model = std::make_shared<IsotropicGaussianModel>(gamma, 4);
    plan.samplers = {ctx.sampler(SamplerSpec::ddim()), ctx.sampler(SamplerSpec::ode_solver(2)), ctx.sampler(SamplerSpec::unipc())};
    auto r = run_experiment(plan, ctx.opts.threads);

    const auto plateau = [](const std::vector<double>& s, double& min_over_max, double& last_over_max) {
        const double mx = *std::max_element(s.begin(), s.end());
        const double mn = *std::min_element(s.begin(), s.end());
        min_over_max = mn / mx;
        last_over_max = s.back() / mx;
        return mx > 0.0 && min_over_max >= 0.2 && last_over_max >= 0.5;
    };
    std::vector<double> d, p2, u3;
    for (const auto& p : r.lower_bound) {
        d.push_back(p.ddim);
        p2.push_back(p.solver2);
        u3.push_back(p.unipc);
    }
    double dm = 0, dl = 0, pm = 0, pl = 0;
    const bool ok_d = plateau(d, dm, dl);
    const bool ok_p = plateau(p2, pm, pl);
    res.pass = ok_d && ok_p;
    res.detail = "M*err(DDIM) min/max=" + fmt("%.3f", dm) + " last/max=" + fmt("%.3f", dl) + "; M^2*err(ODESolver-2) min/max=" +
                 fmt("%.3f", pm) + " last/max=" + fmt("%.3f", pl) + "; M^2*err(UniPC-3) first->last " + fmt("%.3g", u3.front()) +
                 "->" + fmt("%.3g", u3.back());
    if (!res.pass) res.detail = std::string("culprit: ") + (ok_d ? "" : "DDIM plateau ") + (ok_p ? "" : "ODESolver-2 plateau ") + "| " + res.detail;
    ctx.report.append(std::move(r));
    return res;
}

inline CriterionResult theorem3_cancellation(Context& ctx) {
    CriterionResult res;
    res.name = "theorem3_cancellation";
    res.budget_seconds = 10.0;
    std::vector<std::string> culprits;
    bool ok = true;
    for (const auto& [name, model] : std::vector<std::pair<std::string, PredictorPtr>>{
             {"cancellation_gaussian", unit_gaussian()}, {"cancellation_mixture", make_two_component_mixture()}}) {
        auto plan = base_plan(name, ExperimentKind::Cancellation, model);
        auto r = run_experiment(plan, ctx.opts.threads);
        ok &= check_slope(r, name, "combined", 1.8, 2.2, res.detail, culprits);
        ok &= check_slope(r, name, "DDIM", 0.9, 1.1, res.detail, culprits);
        ok &= check_slope(r, name, "ForwardIdeal", 0.9, 1.1, res.detail, culprits);
        const auto& last = r.cancellation.back();
        const double ratio = last.ratio();
        res.detail += " ratio@" + std::to_string(last.M) + "=" + fmt("%.4f", ratio);
        if (!(ratio <= 0.25)) {
            ok = false;
            culprits.push_back(name + " ratio " + fmt("%.4f", ratio) + " > 0.25");
        }
        ctx.report.append(std::move(r));
    }
    res.pass = ok;
    if (!ok) res.detail = "culprit: " + join_culprits(culprits) + " | " + res.detail;
    return res;
}

inline CriterionResult theorem4_tracking(Context& ctx) {
    CriterionResult res;
    res.name = "theorem4_tracking";
    res.budget_seconds = 10.0;
    std::vector<std::string> culprits;
    bool ok = true;
    for (const auto& [name, model] : std::vector<std::pair<std::string, PredictorPtr>>{
             {"tracking_gaussian", unit_gaussian()}, {"tracking_mixture", make_two_component_mixture()}}) {
        auto plan = base_plan(name, ExperimentKind::Tracking, model);
        plan.M_list = {40, 80, 160, 320, 640, 1280};
        plan.lookaheads = {Lookahead::DDIM, Lookahead::Oracle};
        auto r = run_experiment(plan, ctx.opts.threads);
        for (const char* la : {"DDIM", "Oracle"}) {
            const std::string g = std::string("gap[") + la + "]";
            const auto& f = r.find_fit(name, g);
            res.detail += (res.detail.empty() ? "" : " ") + name + "/" + g + "=" + (f.fitted ? fmt("%.3f", f.fit.slope) : "unfit");
            if (!f.fitted || !(f.fit.slope > 1.0)) {
                ok = false;
                culprits.push_back(name + "/" + g + " slope not > 1");
            }
        }
        ok &= check_slope(r, name, "ForwardValue[DDIM]", 0.9, 1.2, res.detail, culprits);
        ctx.report.append(std::move(r));
    }
    res.pass = ok;
    if (!ok) res.detail = "culprit: " + join_culprits(culprits) + " | " + res.detail;
    return res;
}

inline double max_step_relative_gap(const std::vector<Vec>& states, const std::vector<double>& kappas, const Vec& x0) {
    double worst = 0.0;
    for (std::size_t i = 0; i < states.size(); ++i) {
        const Vec expect = scaled(x0, kappas[i]);
        worst = std::max(worst, relative_distance(states[i], expect));
    }
    return worst;
}

inline CriterionResult oracle_equivalence(Context& ctx) {
    CriterionResult res;
    res.name = "oracle_equivalence";
    const double gamma = 1.0;
    const IsotropicGaussianModel model(gamma, 4);
    auto plan = base_plan("oracle_equivalence", ExperimentKind::Orders, unit_gaussian());
    double worst_ddim = 0.0, worst_s2 = 0.0, worst_ref = 0.0;
    for (int M : {10, 40, 160}) {
        plan.grid.M = M;
        const TimeGrid grid = build_grid(plan.schedule, plan.grid);
        const auto kd = gaussian_ddim_kappa(gamma, grid);
        const auto k2 = gaussian_solver2_kappa(gamma, grid);
        const auto ks = gaussian_exact_kappa(gamma, grid);
        for (std::uint64_t seed : plan.seeds) {
            const Vec x0 = sample_initial_state(model, grid[0], seed);
            worst_ddim = std::max(worst_ddim, max_step_relative_gap(run_sampler(ctx.sampler(SamplerSpec::ddim()), grid, model, x0).states, kd.kappas, x0));
            worst_s2 = std::max(worst_s2, max_step_relative_gap(run_sampler(ctx.sampler(SamplerSpec::ode_solver(2)), grid, model, x0).states, k2.kappas, x0));
            ReferenceOptions ro;
            ro.gaussian_bypass = false;
            worst_ref = std::max(worst_ref, max_step_relative_gap(reference_trajectory(model, grid, x0, ro).states, ks.kappas, x0));
        }
    }
    res.pass = worst_ddim <= 1e-10 && worst_s2 <= 1e-10 && worst_ref <= 1e-10;
    res.detail = "max rel gap DDIM=" + fmt("%.2e", worst_ddim) + " ODESolver-2=" + fmt("%.2e", worst_s2) + " RK4 reference=" + fmt("%.2e", worst_ref);
    if (!res.pass) {
        std::string c;
        if (worst_ddim > 1e-10) c += "DDIM ";
        if (worst_s2 > 1e-10) c += "ODESolver-2 ";
        if (worst_ref > 1e-10) c += "reference ";
        res.detail = "culprit: " + c + "| " + res.detail;
    }
    return res;
}

inline CriterionResult structural_identities(Context& ctx) {
    CriterionResult res;
    res.name = "structural_identities";
    std::vector<std::string> culprits;
    CounterRng rng(20260101);
    const auto rand_vec = [&](std::size_t d, double sd) {
        Vec v(d);
        for (double& x : v) x = sd * rng.normal();
        return v;
    };

    // First-order exponential integrator vs DDIM on random schedules, times and states.
    double worst_p1 = 0.0;
    for (int c = 0; c < 100; ++c) {
        const bool vp = c % 2 == 1;
        const NoiseSchedule s = vp ? NoiseSchedule::vp_linear() : NoiseSchedule::ve();
        const double tmax = vp ? 1.0 : 80.0;
        const double tmin = vp ? 1e-3 : 2e-3;
        const double ta = tmin + (tmax - tmin) * rng.uniform();
        const double tb = tmin * 0.5 + (ta - tmin * 0.5) * rng.uniform();
        const TimePoint from = s.at(ta), to = s.at(tb);
        const Vec x = rand_vec(4, 3.0), eps = rand_vec(4, 1.0);
        const NoiseEval node{from.lambda, eps};
        const Vec a = exponential_integrator_step(x, from, to, std::span<const NoiseEval>(&node, 1), ctx.phi_fn());
        worst_p1 = std::max(worst_p1, relative_distance(a, ddim_update(x, from, to, eps)));
    }
    if (worst_p1 > 1e-15) culprits.push_back("ODESolverP(1) vs DDIM " + fmt("%.2e", worst_p1));

    // Equal histories collapse every multistep rule to DDIM.
    double worst_eq = 0.0;
    {
        const NoiseSchedule s = NoiseSchedule::ve();
        const TimePoint p2 = s.at(5.0), p1 = s.at(2.0), p0 = s.at(1.0);
        for (int c = 0; c < 20; ++c) {
            const Vec x = rand_vec(4, 3.0), eps = rand_vec(4, 1.0);
            const std::vector<NoiseEval> h{{p0.lambda, eps}, {p1.lambda, eps}, {p2.lambda, eps}};
            const TimePoint to = s.at(0.5);
            const Vec ref = ddim_update(x, p0, to, eps);
            worst_eq = std::max(worst_eq, relative_distance(exponential_integrator_step(x, p0, to, std::span(h).first(2), ctx.phi_fn()), ref));
            worst_eq = std::max(worst_eq, relative_distance(exponential_integrator_step(x, p0, to, h, ctx.phi_fn()), ref));
            worst_eq = std::max(worst_eq, relative_distance(ode_solver_2_update(x, p0, to, h[0], h[1]), ref));
            worst_eq = std::max(worst_eq, relative_distance(ode_solver_3_update(x, p0, to, h[0], h[1], h[2]), ref));
            // Corrector (expanded at the previous point) with the same constant noise.
            const std::vector<NoiseEval> hc{{p0.lambda, eps}, {p1.lambda, eps}, {p2.lambda, eps}};
            worst_eq = std::max(worst_eq, relative_distance(exponential_integrator_step(x, p1, p0, hc, ctx.phi_fn()), ddim_update(x, p1, p0, eps)));
        }
        // UniPC on a constant-noise model equals DDIM along the whole run.
        const PolyLambdaModel constant({Vec{0.3, -0.7, 1.1, 0.2}});
        GridConfig g;
        g.M = 12;
        const TimeGrid grid = build_grid(s, g);
        const Vec x0 = rand_vec(4, 10.0);
        const auto u = run_sampler(ctx.sampler(SamplerSpec::unipc()), grid, constant, x0);
        const auto d = run_sampler(SamplerSpec::ddim(), grid, constant, x0);
        for (std::size_t i = 0; i < u.states.size(); ++i) worst_eq = std::max(worst_eq, relative_distance(u.states[i], d.states[i]));
    }
    if (worst_eq > 1e-13) culprits.push_back("equal-history reduction " + fmt("%.2e", worst_eq));

    // Terminal sigma = 0 forward-value step returns the data prediction at the lookahead.
    bool terminal_exact = true;
    for (const bool vp : {false, true}) {
        const NoiseSchedule s = vp ? NoiseSchedule::vp_linear() : NoiseSchedule::ve();
        GridConfig g;
        g.kind = GridKind::UniformTime;
        g.M = 8;
        g.t_start = vp ? 1.0 : 10.0;
        g.t_end = 0.0;
        const TimeGrid grid = build_grid(s, g);
        const auto mix = make_two_component_mixture();
        for (Lookahead l : {Lookahead::DDIM, Lookahead::DPMSolver2}) {
            StepHistory hist(3);
            Vec x = rand_vec(4, g.t_start);
            for (int i = 1; i <= grid.steps(); ++i) {
                const auto out = forward_value_step(x, i, grid, *mix, l, hist, 1e-12, ctx.phi_fn());
                if (i == grid.steps()) terminal_exact &= out.x == mix->eval_data(out.x_hat, grid[i]);
                x = out.x;
            }
        }
    }
    if (!terminal_exact) culprits.push_back("terminal forward-value step is not mu(x_hat)");

    // phi_k: recurrence, closed forms and adaptive quadrature of int_0^x e^{-u} u^k du.
    double worst_phi = 0.0;
    const PhiFn pf = ctx.phi_fn();
    for (double x : {1e-6, 1e-3, 0.05, 0.3, 0.9, 1.7, 3.0, 6.5, 12.0, 30.0}) {
        for (int k = 0; k <= 4; ++k) {
            const double q = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
                [k](double u) { return std::exp(-u) * std::pow(u, k); }, 0.0, x, 15, 1e-15);
            const double v = pf(k, x);
            worst_phi = std::max(worst_phi, std::abs(v - q) / std::max(std::abs(q), 1e-300));
            if (k >= 1) {
                // Residual of phi_k = k phi_{k-1} - x^k e^{-x}, relative to its largest term.
                const double a = k * pf(k - 1, x), b = std::pow(x, k) * std::exp(-x);
                const double scale = std::max({std::abs(v), std::abs(a), std::abs(b), 1e-300});
                worst_phi = std::max(worst_phi, std::abs(v - (a - b)) / scale);
            }
            if (k <= 2 && x >= 0.3) {
                const double cf = phi_closed_form(k, x);
                worst_phi = std::max(worst_phi, std::abs(v - cf) / std::max(std::abs(v), 1e-300));
            }
        }
    }
    if (worst_phi > 1e-12) culprits.push_back("phi cross-check " + fmt("%.2e", worst_phi));

    res.pass = culprits.empty();
    res.detail = "P1-vs-DDIM=" + fmt("%.1e", worst_p1) + " equal-history=" + fmt("%.1e", worst_eq) +
                 " terminal-exact=" + (terminal_exact ? "yes" : "no") + " phi=" + fmt("%.1e", worst_phi);
    if (!res.pass) res.detail = "culprit: " + join_culprits(culprits) + " | " + res.detail;
    return res;
}

inline CriterionResult grid_subsample_rule(Context&) {
    CriterionResult res;
    res.name = "grid_subsample_rule";
    const auto idx = subsample_indices(1000, 4);
    const std::vector<int> expect{0, 250, 500, 750, 1000};
    GridConfig g;
    g.kind = GridKind::SubsampleReference;
    g.M = 4;
    g.M_ref = 1000;
    g.reference_spacing = GridKind::UniformTime;
    const NoiseSchedule s = NoiseSchedule::ve();
    const TimeGrid sub = build_grid(s, g);
    GridConfig rc = g;
    rc.kind = GridKind::UniformTime;
    rc.M = 1000;
    const TimeGrid ref = build_grid(s, rc);
    bool points_ok = sub.steps() == 4;
    for (int i = 0; points_ok && i <= 4; ++i) points_ok = sub[i].t == ref[expect[static_cast<std::size_t>(i)]].t;
    res.pass = idx == expect && points_ok;
    std::string got;
    for (int i : idx) got += (got.empty() ? "" : ",") + std::to_string(i);
    res.detail = "indices {" + got + "}" + (points_ok ? " grid points match reference" : " grid points differ from reference");
    return res;
}

inline CriterionResult determinism(Context& ctx) {
    CriterionResult res;
    res.name = "determinism";
    const auto bytes = [&](int threads) {
        const auto r = theorem1_report(ctx, threads);
        return report_csv(r) + dump_json(report_to_json(r));
    };
    const std::string a = bytes(1), b = bytes(1), c = bytes(4);
    res.pass = a == b && a == c;
    res.detail = std::string("repeat ") + (a == b ? "identical" : "DIFFERS") + ", threads 1 vs 4 " + (a == c ? "identical" : "DIFFERS") +
                 " (" + std::to_string(a.size()) + " bytes)";
    return res;
}

}  // namespace detail

struct Criterion {
    const char* name;
    CriterionResult (*run)(detail::Context&);
};

inline const std::vector<Criterion>& acceptance_criteria() {
    static const std::vector<Criterion> all{
        {"theorem1_orders", &detail::theorem1_orders},
        {"theorem2_lower_bound", &detail::theorem2_lower_bound},
        {"theorem3_cancellation", &detail::theorem3_cancellation},
        {"theorem4_tracking", &detail::theorem4_tracking},
        {"oracle_equivalence", &detail::oracle_equivalence},
        {"structural_identities", &detail::structural_identities},
        {"grid_subsample_rule", &detail::grid_subsample_rule},
        {"determinism", &detail::determinism},
    };
    return all;
}

/// Runs every criterion whose name contains opts.only. `on_result` sees each result as it finishes.
inline VerifyOutcome run_verify(const VerifyOptions& opts, const std::function<void(const CriterionResult&)>& on_result = {}) {
    VerifyOutcome out;
    detail::Context ctx{opts, out.report};
    for (const auto& c : acceptance_criteria()) {
        if (!opts.only.empty() && std::string(c.name).find(opts.only) == std::string::npos) continue;
        const auto t0 = std::chrono::steady_clock::now();
        CriterionResult r;
        try {
            r = c.run(ctx);
        } catch (const Error& e) {
            r.name = c.name;
            r.pass = false;
            r.detail = std::string("error: ") + e.what();
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (r.budget_seconds > 0.0 && r.seconds > r.budget_seconds) {
            r.pass = false;
            r.detail = "over runtime budget of " + detail::fmt("%g", r.budget_seconds) + " s | " + r.detail;
        }
        if (on_result) on_result(r);
        out.results.push_back(std::move(r));
    }
    return out;
}

inline Json verify_to_json(const VerifyOutcome& v, const VerifyOptions& opts) {
    Json crit = Json::array();
    for (const auto& r : v.results) crit.push_back(Json{{"name", r.name}, {"pass", r.pass}, {"detail", r.detail}});
    Json j{{"criteria", crit}, {"all_pass", v.all_pass()}};
    if (!opts.only.empty()) j["only"] = opts.only;
    if (opts.fault_phi1_sign) j["fault"] = "phi1-sign";
    j["report"] = report_to_json(v.report);
    return j;
}

}  // namespace odeslab

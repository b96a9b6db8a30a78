// Copyright (C) 2026 The odeslab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "odeslab/core.hpp"
#include "odeslab/json_io.hpp"
#include "odeslab/models.hpp"
#include "odeslab/oracle.hpp"
#include "odeslab/schedule.hpp"
#include "odeslab/solvers.hpp"

namespace odeslab {

// ---- random initial states -------------------------------------------------

/// Counter-based generator: draw n of stream `seed` is splitmix64(seed * K + n), so any draw
/// can be reproduced without replaying the stream.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t next_u64() { return mix(seed_ * 0x9E3779B97F4A7C15ULL + (counter_++) + 0x632BE59BD9B4E019ULL); }

    /// Uniform on the open interval (0, 1).
    double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    /// Box-Muller; one normal per pair of uniforms.
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

/// Draws x_{t_0} from the model's marginal at `tp`: N(0, (a^2 g^2 + s^2) I) for the Gaussian,
/// the pushed-forward mixture for mixtures, N(0, (a^2 + s^2) I) otherwise.
inline Vec sample_initial_state(const Predictor& model, const TimePoint& tp, std::uint64_t seed) {
    CounterRng rng(seed);
    const std::size_t d = model.dim();
    Vec x(d);
    if (const auto* g = dynamic_cast<const IsotropicGaussianModel*>(&model)) {
        const double sd = std::sqrt(g->marginal_variance(tp));
        for (double& v : x) v = sd * rng.normal();
        return x;
    }
    if (const auto* m = dynamic_cast<const GaussianMixtureModel*>(&model)) {
        const double u = rng.uniform();
        const auto& comps = m->components();
        std::size_t k = 0;
        double acc = comps[0].weight;
        while (u > acc && k + 1 < comps.size()) acc += comps[++k].weight;
        const double sd = std::sqrt(GaussianMixtureModel::component_variance(comps[k], tp));
        for (std::size_t j = 0; j < d; ++j) x[j] = tp.alpha * comps[k].mean[j] + sd * rng.normal();
        return x;
    }
    const double sd = std::hypot(tp.alpha, tp.sigma);
    for (double& v : x) v = sd * rng.normal();
    return x;
}

// ---- order fitting ---------------------------------------------------------

inline constexpr double kErrorFloor = 1e-12;

struct OrderFit {
    double slope = 0.0;
    double residual = 0.0;  // max |log err - fitted line|
    int points = 0;
};

/// Least-squares slope of log(error) against log(1/M) over the points with error above 1e-12.
inline OrderFit estimate_order(const std::vector<std::pair<int, double>>& errors) {
    std::vector<double> xs, ys;
    for (const auto& [M, e] : errors) {
        if (M < 1) fail(ErrorKind::InvalidArgument, "estimate_order: M must be positive");
        if (!(e >= 0.0)) fail(ErrorKind::InvalidArgument, "estimate_order: errors must be nonnegative");
        if (e > kErrorFloor) {
            xs.push_back(-std::log(static_cast<double>(M)));
            ys.push_back(std::log(e));
        }
    }
    if (xs.size() < 4) {
        fail(ErrorKind::Numerical, "estimate_order: " + std::to_string(xs.size()) + " usable points above the 1e-12 floor (need 4)");
    }
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        mx += xs[k];
        my += ys[k];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        sxx += (xs[k] - mx) * (xs[k] - mx);
        sxy += (xs[k] - mx) * (ys[k] - my);
    }
    if (!(sxx > 0.0)) fail(ErrorKind::InvalidArgument, "estimate_order: M values must differ");
    OrderFit fit;
    fit.slope = sxy / sxx;
    fit.points = static_cast<int>(xs.size());
    const double b = my - fit.slope * mx;
    for (std::size_t k = 0; k < xs.size(); ++k) fit.residual = std::max(fit.residual, std::abs(ys[k] - (b + fit.slope * xs[k])));
    return fit;
}

// ---- plans and reports -----------------------------------------------------

enum class ExperimentKind { Orders, Cancellation, Tracking, LowerBound };

inline std::string to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::Orders: return "orders";
        case ExperimentKind::Cancellation: return "cancellation";
        case ExperimentKind::Tracking: return "tracking";
        case ExperimentKind::LowerBound: return "lower_bound";
    }
    return "?";
}

inline ExperimentKind experiment_kind_from_string(const std::string& s) {
    if (s == "orders") return ExperimentKind::Orders;
    if (s == "cancellation") return ExperimentKind::Cancellation;
    if (s == "tracking") return ExperimentKind::Tracking;
    if (s == "lower_bound") return ExperimentKind::LowerBound;
    fail(ErrorKind::Config, "unknown experiment \"" + s + "\"");
}

enum class Comparison { EqualM, EqualNFE };

struct ExperimentPlan {
    std::string name = "orders";
    ExperimentKind kind = ExperimentKind::Orders;
    PredictorPtr model;
    NoiseSchedule schedule = NoiseSchedule::ve();
    GridConfig grid;  // M is taken from M_list
    std::vector<int> M_list{10, 20, 40, 80, 160, 320};
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::vector<SamplerSpec> samplers;    // Orders
    std::vector<Lookahead> lookaheads;    // Tracking
    Comparison comparison = Comparison::EqualM;
    ReferenceOptions reference;

    void validate() const {
        if (!model) fail(ErrorKind::InvalidArgument, name + ": plan has no model");
        if (M_list.size() < 4) fail(ErrorKind::InvalidArgument, name + ": M_list needs at least 4 entries");
        for (std::size_t k = 0; k < M_list.size(); ++k) {
            if (M_list[k] < 1 || (k > 0 && M_list[k] <= M_list[k - 1])) {
                fail(ErrorKind::InvalidArgument, name + ": M_list must be positive and strictly increasing");
            }
        }
        if (seeds.empty()) fail(ErrorKind::InvalidArgument, name + ": no seeds");
        if (kind == ExperimentKind::Orders && samplers.empty()) fail(ErrorKind::InvalidArgument, name + ": no samplers");
        if (kind == ExperimentKind::Tracking && lookaheads.empty()) fail(ErrorKind::InvalidArgument, name + ": no lookaheads");
        for (const auto& s : samplers) s.validate();
    }
};

struct ReportRow {
    std::string experiment;
    std::string sampler;
    std::string lookahead;
    int M = 0;
    std::size_t nfe = 0;
    std::uint64_t seed = 0;
    double final_error = 0.0;
    std::string slope_group;
};

struct SlopeFit {
    std::string experiment;
    std::string slope_group;
    std::vector<std::pair<int, double>> mean_errors;  // seed-averaged, by M
    bool fitted = false;
    OrderFit fit;
    std::string note;  // why no fit, when fitted is false
};

struct CancellationPoint {
    std::string experiment;
    int M = 0;
    double combined = 0.0;  // ||e_bck + e_for||
    double backward = 0.0;  // ||e_bck||
    double forward = 0.0;   // ||e_for||
    double ratio() const { return combined / std::max({backward, forward, 1e-300}); }
};

struct TrackingPoint {
    std::string experiment;
    std::string lookahead;
    int M = 0;
    double gap = 0.0;  // ||x - x^for||
};

struct LowerBoundPoint {
    std::string experiment;
    int M = 0;
    double ddim = 0.0;     // M err(DDIM)
    double solver2 = 0.0;  // M^2 err(ODESolver-2)
    double unipc = 0.0;    // M^2 err(UniPC-3)
};

struct ConvergenceReport {
    Json config = Json::array();  // plan echoes
    std::vector<ReportRow> rows;
    std::vector<SlopeFit> fits;
    std::vector<CancellationPoint> cancellation;
    std::vector<TrackingPoint> tracking;
    std::vector<LowerBoundPoint> lower_bound;

    const SlopeFit& find_fit(const std::string& experiment, const std::string& group) const {
        for (const auto& f : fits) {
            if (f.experiment == experiment && f.slope_group == group) return f;
        }
        fail(ErrorKind::InvalidArgument, "report: no slope group \"" + group + "\" in experiment \"" + experiment + "\"");
    }

    void append(ConvergenceReport other) {
        for (auto& c : other.config) config.push_back(std::move(c));
        const auto move_all = [](auto& dst, auto& src) { std::move(src.begin(), src.end(), std::back_inserter(dst)); };
        move_all(rows, other.rows);
        move_all(fits, other.fits);
        move_all(cancellation, other.cancellation);
        move_all(tracking, other.tracking);
        move_all(lower_bound, other.lower_bound);
    }
};

// ---- execution -------------------------------------------------------------

/// Runs fn(0..n-1) on up to `threads` workers. Results must be written to per-index slots.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
    if (workers <= 1) {
        for (std::size_t k = 0; k < n; ++k) fn(k);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t k = next++; k < n; k = next++) {
                try {
                    fn(k);
                } catch (...) {
                    errors[k] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    // Rethrow the lowest-index failure so the diagnostic is thread-count independent.
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

inline double final_error(const Trajectory& traj, const ReferenceTrajectory& ref) {
    if (traj.states.size() != ref.states.size()) fail(ErrorKind::InvalidArgument, "final_error: grid mismatch");
    if (traj.states.back().size() != ref.states.back().size()) fail(ErrorKind::InvalidArgument, "final_error: dimension mismatch");
    return distance2(traj.states.back(), ref.states.back());
}

namespace detail {

inline std::string group_label(const SamplerSpec& s) {
    return s.rule == Rule::ForwardValue ? s.name() + "[" + to_string(s.lookahead) + "]" : s.name();
}

inline TimeGrid plan_grid(const ExperimentPlan& plan, int M) {
    GridConfig g = plan.grid;
    g.M = M;
    if (g.kind == GridKind::SubsampleReference && g.M_ref < M) g.M_ref = M;
    return build_grid(plan.schedule, g);
}

struct SeedState {
    Vec x0;
    Vec x_final;  // x*_{t_M}
};

// x0 from q_{t_0} and the exact endpoint, computed on a one-interval grid with the same endpoints.
inline std::vector<SeedState> seed_states(const ExperimentPlan& plan, int threads) {
    std::vector<SeedState> out(plan.seeds.size());
    GridConfig g = plan.grid;
    g.kind = GridKind::UniformTime;
    g.M = 1;
    const TimeGrid one = build_grid(plan.schedule, g);
    parallel_for(out.size(), threads, [&](std::size_t k) {
        out[k].x0 = sample_initial_state(*plan.model, one[0], plan.seeds[k]);
        out[k].x_final = reference_trajectory(*plan.model, one, out[k].x0, plan.reference).states.back();
    });
    return out;
}

inline std::vector<SlopeFit> fit_groups(const std::vector<ReportRow>& rows) {
    std::vector<SlopeFit> fits;
    std::map<std::pair<std::string, std::string>, std::size_t> index;
    std::vector<std::map<int, std::pair<double, int>>> sums;
    for (const auto& r : rows) {
        const auto key = std::make_pair(r.experiment, r.slope_group);
        auto it = index.find(key);
        if (it == index.end()) {
            it = index.emplace(key, fits.size()).first;
            fits.push_back({r.experiment, r.slope_group, {}, false, {}, {}});
            sums.emplace_back();
        }
        auto& acc = sums[it->second][r.M];
        acc.first += r.final_error;
        acc.second += 1;
    }
    for (std::size_t k = 0; k < fits.size(); ++k) {
        for (const auto& [M, acc] : sums[k]) fits[k].mean_errors.emplace_back(M, acc.first / acc.second);
        try {
            fits[k].fit = estimate_order(fits[k].mean_errors);
            fits[k].fitted = true;
        } catch (const Error& e) {
            fits[k].note = e.what();
        }
    }
    return fits;
}

inline const std::vector<std::pair<int, double>>& series(const std::vector<SlopeFit>& fits, const std::string& group) {
    for (const auto& f : fits) {
        if (f.slope_group == group) return f.mean_errors;
    }
    fail(ErrorKind::InvalidArgument, "missing slope group " + group);
}

}  // namespace detail

inline Json plan_to_json(const ExperimentPlan& plan) {
    Json samplers = Json::array();
    for (const auto& s : plan.samplers) samplers.push_back(sampler_to_json(s));
    Json lookaheads = Json::array();
    for (auto l : plan.lookaheads) lookaheads.push_back(to_string(l));
    Json seeds = Json::array();
    for (auto s : plan.seeds) seeds.push_back(s);
    Json j{{"experiment", plan.name},
           {"kind", to_string(plan.kind)},
           {"model", plan.model ? plan.model->to_json() : Json()},
           {"schedule", schedule_to_json(plan.schedule)},
           {"grid", grid_config_to_json(plan.grid, false)},
           {"M_list", plan.M_list},
           {"seeds", seeds}};
    if (!samplers.empty()) j["samplers"] = samplers;
    if (!lookaheads.empty()) j["lookaheads"] = lookaheads;
    j["comparison"] = plan.comparison == Comparison::EqualM ? "equal-M" : "equal-NFE";
    j["reference"] = Json{{"tol", plan.reference.tol},
                          {"gaussian_bypass", plan.reference.gaussian_bypass},
                          {"initial_substeps", plan.reference.initial_substeps},
                          {"max_doublings", plan.reference.max_doublings}};
    return j;
}

/// Step count a sampler runs at for nominal budget M.
inline int effective_steps(const ExperimentPlan& plan, const SamplerSpec& s, int M) {
    if (plan.comparison == Comparison::EqualNFE && s.calls_per_step() > 1) return std::max(1, M / s.calls_per_step());
    return M;
}

inline ConvergenceReport run_experiment(const ExperimentPlan& plan, int threads = 1) {
    plan.validate();
    ConvergenceReport report;
    report.config.push_back(plan_to_json(plan));
    const auto states = detail::seed_states(plan, threads);
    const Predictor& model = *plan.model;
    const std::size_t nM = plan.M_list.size();
    const std::size_t nS = plan.seeds.size();

    // Cells are enumerated as (unit, M, seed); each fills its own slot of rows.
    const auto run_cells = [&](std::size_t units, const std::function<std::vector<ReportRow>(std::size_t, int, std::size_t)>& cell) {
        std::vector<std::vector<ReportRow>> slots(units * nM * nS);
        parallel_for(slots.size(), threads, [&](std::size_t k) {
            const std::size_t u = k / (nM * nS);
            const int M = plan.M_list[(k / nS) % nM];
            slots[k] = cell(u, M, k % nS);
        });
        for (auto& s : slots) std::move(s.begin(), s.end(), std::back_inserter(report.rows));
    };

    const auto row = [&](const SamplerSpec& s, int M, std::size_t seed_idx, const Trajectory& t, double err, std::string group) {
        return ReportRow{plan.name, s.name(), s.lookahead_name(), M, t.model_calls, plan.seeds[seed_idx], err, std::move(group)};
    };

    switch (plan.kind) {
        case ExperimentKind::Orders:
        case ExperimentKind::LowerBound: {
            std::vector<SamplerSpec> samplers = plan.samplers;
            if (plan.kind == ExperimentKind::LowerBound && samplers.empty()) {
                samplers = {SamplerSpec::ddim(), SamplerSpec::ode_solver(2), SamplerSpec::unipc()};
            }
            run_cells(samplers.size(), [&](std::size_t u, int M, std::size_t s) {
                const auto& spec = samplers[u];
                const auto traj = run_sampler(spec, detail::plan_grid(plan, effective_steps(plan, spec, M)), model, states[s].x0);
                return std::vector<ReportRow>{row(spec, M, s, traj, distance2(traj.states.back(), states[s].x_final), detail::group_label(spec))};
            });
            report.fits = detail::fit_groups(report.rows);
            if (plan.kind == ExperimentKind::LowerBound) {
                const auto& d = detail::series(report.fits, "DDIM");
                const auto& p2 = detail::series(report.fits, "ODESolver-2");
                const auto& u3 = detail::series(report.fits, "UniPC-3");
                for (std::size_t k = 0; k < d.size(); ++k) {
                    const double M = d[k].first;
                    report.lower_bound.push_back({plan.name, d[k].first, M * d[k].second, M * M * p2[k].second, M * M * u3[k].second});
                }
            }
            break;
        }
        case ExperimentKind::Cancellation: {
            const SamplerSpec bck = SamplerSpec::ddim();
            const SamplerSpec fwd = SamplerSpec::forward_ideal();
            run_cells(1, [&](std::size_t, int M, std::size_t s) {
                const TimeGrid grid = detail::plan_grid(plan, M);
                const Vec& x0 = states[s].x0;
                const Vec& xs = states[s].x_final;
                const auto tb = run_sampler(bck, grid, model, x0);
                const auto tf = run_sampler(fwd, grid, model, x0);
                Vec sum(xs.size());
                for (std::size_t j = 0; j < xs.size(); ++j) sum[j] = (tb.states.back()[j] - xs[j]) + (tf.states.back()[j] - xs[j]);
                ReportRow combined{plan.name, "DDIM+ForwardIdeal", "", M, tb.model_calls + tf.model_calls, plan.seeds[s], norm2(sum), "combined"};
                return std::vector<ReportRow>{row(bck, M, s, tb, distance2(tb.states.back(), xs), "DDIM"),
                                              row(fwd, M, s, tf, distance2(tf.states.back(), xs), "ForwardIdeal"),
                                              std::move(combined)};
            });
            report.fits = detail::fit_groups(report.rows);
            const auto& c = detail::series(report.fits, "combined");
            const auto& b = detail::series(report.fits, "DDIM");
            const auto& f = detail::series(report.fits, "ForwardIdeal");
            for (std::size_t k = 0; k < c.size(); ++k) report.cancellation.push_back({plan.name, c[k].first, c[k].second, b[k].second, f[k].second});
            break;
        }
        case ExperimentKind::Tracking: {
            run_cells(plan.lookaheads.size(), [&](std::size_t u, int M, std::size_t s) {
                const TimeGrid grid = detail::plan_grid(plan, M);
                const SamplerSpec fv = SamplerSpec::forward_value(plan.lookaheads[u]);
                const auto tv = run_sampler(fv, grid, model, states[s].x0);
                const auto ti = run_sampler(SamplerSpec::forward_ideal(), grid, model, states[s].x0);
                const std::string la = to_string(plan.lookaheads[u]);
                return std::vector<ReportRow>{row(fv, M, s, tv, distance2(tv.states.back(), states[s].x_final), "ForwardValue[" + la + "]"),
                                              row(fv, M, s, tv, distance2(tv.states.back(), ti.states.back()), "gap[" + la + "]")};
            });
            report.fits = detail::fit_groups(report.rows);
            for (auto l : plan.lookaheads) {
                const std::string la = to_string(l);
                for (const auto& [M, g] : detail::series(report.fits, "gap[" + la + "]")) report.tracking.push_back({plan.name, la, M, g});
            }
            break;
        }
    }
    return report;
}

// ---- serialization ---------------------------------------------------------

inline constexpr const char* kReportCsvHeader = "experiment,sampler,lookahead,M,NFE,seed,final_error,slope_group\n";

inline std::string report_csv(const ConvergenceReport& r) {
    std::string out = kReportCsvHeader;
    for (const auto& row : r.rows) {
        out += row.experiment + ',' + row.sampler + ',' + row.lookahead + ',' + std::to_string(row.M) + ',' + std::to_string(row.nfe) +
               ',' + std::to_string(row.seed) + ',' + format_g17(row.final_error) + ',' + row.slope_group + '\n';
    }
    return out;
}

inline Json report_to_json(const ConvergenceReport& r) {
    Json rows = Json::array();
    for (const auto& row : r.rows) {
        rows.push_back(Json{{"experiment", row.experiment},
                            {"sampler", row.sampler},
                            {"lookahead", row.lookahead},
                            {"M", row.M},
                            {"NFE", row.nfe},
                            {"seed", row.seed},
                            {"final_error", row.final_error},
                            {"slope_group", row.slope_group}});
    }
    Json fits = Json::array();
    for (const auto& f : r.fits) {
        Json ms = Json::array(), es = Json::array();
        for (const auto& [M, e] : f.mean_errors) {
            ms.push_back(M);
            es.push_back(e);
        }
        Json j{{"experiment", f.experiment}, {"slope_group", f.slope_group}, {"M", ms}, {"mean_error", es}};
        if (f.fitted) {
            j["slope"] = f.fit.slope;
            j["residual"] = f.fit.residual;
            j["points"] = f.fit.points;
        } else {
            j["slope"] = nullptr;
            j["note"] = f.note;
        }
        fits.push_back(std::move(j));
    }
    Json canc = Json::array();
    for (const auto& c : r.cancellation) {
        canc.push_back(Json{{"experiment", c.experiment}, {"M", c.M}, {"combined", c.combined}, {"backward", c.backward},
                            {"forward", c.forward}, {"ratio", c.ratio()}});
    }
    Json track = Json::array();
    for (const auto& t : r.tracking) track.push_back(Json{{"experiment", t.experiment}, {"lookahead", t.lookahead}, {"M", t.M}, {"gap", t.gap}});
    Json lb = Json::array();
    for (const auto& p : r.lower_bound) {
        lb.push_back(Json{{"experiment", p.experiment}, {"M", p.M}, {"M_err_DDIM", p.ddim}, {"M2_err_ODESolver-2", p.solver2},
                          {"M2_err_UniPC-3", p.unipc}});
    }
    // NFE ledger: total sampler-side model calls per (experiment, sampler, lookahead, M), summed over seeds.
    std::map<std::tuple<std::string, std::string, std::string, int>, std::size_t> ledger;
    std::vector<std::tuple<std::string, std::string, std::string, int>> order;
    for (const auto& row : r.rows) {
        if (row.slope_group == "combined" || row.slope_group.rfind("gap[", 0) == 0) continue;
        const auto key = std::make_tuple(row.experiment, row.sampler, row.lookahead, row.M);
        if (!ledger.count(key)) order.push_back(key);
        ledger[key] += row.nfe;
    }
    Json nfe = Json::array();
    for (const auto& key : order) {
        nfe.push_back(Json{{"experiment", std::get<0>(key)}, {"sampler", std::get<1>(key)}, {"lookahead", std::get<2>(key)},
                           {"M", std::get<3>(key)}, {"NFE_total", ledger[key]}});
    }
    return Json{{"config", r.config}, {"rows", rows},     {"slopes", fits},        {"cancellation", canc},
                {"tracking", track},  {"lower_bound", lb}, {"nfe_ledger", nfe}};
}

inline ConvergenceReport report_from_json(const Json& j) {
    ConvergenceReport r;
    r.config = j.at("config");
    for (const auto& row : j.at("rows")) {
        r.rows.push_back({row.at("experiment").get<std::string>(), row.at("sampler").get<std::string>(),
                          row.at("lookahead").get<std::string>(), row.at("M").get<int>(), row.at("NFE").get<std::size_t>(),
                          row.at("seed").get<std::uint64_t>(), row.at("final_error").get<double>(),
                          row.at("slope_group").get<std::string>()});
    }
    r.fits = detail::fit_groups(r.rows);
    for (const auto& c : j.at("cancellation")) {
        r.cancellation.push_back({c.at("experiment").get<std::string>(), c.at("M").get<int>(), c.at("combined").get<double>(),
                                  c.at("backward").get<double>(), c.at("forward").get<double>()});
    }
    for (const auto& t : j.at("tracking")) {
        r.tracking.push_back({t.at("experiment").get<std::string>(), t.at("lookahead").get<std::string>(), t.at("M").get<int>(),
                              t.at("gap").get<double>()});
    }
    for (const auto& p : j.at("lower_bound")) {
        r.lower_bound.push_back({p.at("experiment").get<std::string>(), p.at("M").get<int>(), p.at("M_err_DDIM").get<double>(),
                                 p.at("M2_err_ODESolver-2").get<double>(), p.at("M2_err_UniPC-3").get<double>()});
    }
    return r;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
    out << text;
    out.close();
    if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes <dir>/<stem>.csv and <dir>/<stem>.json.
inline void emit_report(const ConvergenceReport& r, const std::filesystem::path& dir, const std::string& stem = "report") {
    write_text_file(dir / (stem + ".csv"), report_csv(r));
    write_text_file(dir / (stem + ".json"), dump_json(report_to_json(r)));
}

}  // namespace odeslab

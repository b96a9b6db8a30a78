// Copyright (C) 2026 The odeslab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "odeslab/core.hpp"
#include "odeslab/json_io.hpp"
#include "odeslab/models.hpp"
#include "odeslab/schedule.hpp"

namespace odeslab {

// Ground truth for the samplers. On isotropic Gaussian targets every trajectory stays
// colinear with its starting point, so exact and discrete dynamics reduce to scalar
// coefficients kappa. For general models the exact flow comes from classical RK4 in
// lambda with step doubling.

/// Exact scalar flow coefficient from (lambda0, alpha0) to (lambda, alpha) on N(0, gamma^2 I).
inline double gaussian_kappa_star(double gamma, double lam0, double lam, double alpha0, double alpha) {
    if (!(gamma >= 0.0)) fail(ErrorKind::InvalidArgument, "kappa*: gamma must be nonnegative");
    const double g2 = gamma * gamma;
    const double num = g2 + std::exp(-2.0 * lam);
    const double den = g2 + std::exp(-2.0 * lam0);
    if (!(num > 0.0) || !(den > 0.0)) fail(ErrorKind::Domain, "kappa*: gamma = 0 with infinite lambda");
    return (alpha / alpha0) * std::sqrt(num / den);
}

enum class KappaVariant { Exact, DDIM, Solver2 };

inline std::string to_string(KappaVariant v) {
    switch (v) {
        case KappaVariant::Exact: return "exact";
        case KappaVariant::DDIM: return "ddim";
        case KappaVariant::Solver2: return "solver2";
    }
    return "?";
}

struct GaussianKappaTrace {
    KappaVariant variant = KappaVariant::Exact;
    std::vector<double> kappas;  // kappa_{t_0..t_M}, kappa_{t_0} = 1
};

namespace detail {

inline void check_kappa_grid(const TimeGrid& grid) {
    if (grid.steps() < 1) fail(ErrorKind::InvalidArgument, "kappa trace: grid needs at least one step");
    const auto v = validate_grid(grid);
    if (!v.ok) fail(ErrorKind::InvalidArgument, "kappa trace: invalid grid at step " + std::to_string(v.index) + ": " + v.violation);
}

// e^{-lambda} as sigma / alpha; exact zero at the sigma = 0 endpoint.
inline double exp_neg_lambda(const TimePoint& p) { return p.sigma / p.alpha; }

}  // namespace detail

inline GaussianKappaTrace gaussian_exact_kappa(double gamma, const TimeGrid& grid) {
    detail::check_kappa_grid(grid);
    GaussianKappaTrace tr{KappaVariant::Exact, {1.0}};
    const TimePoint& p0 = grid[0];
    for (int i = 1; i <= grid.steps(); ++i) {
        tr.kappas.push_back(gaussian_kappa_star(gamma, p0.lambda, grid[i].lambda, p0.alpha, grid[i].alpha));
    }
    return tr;
}

/// Scalar DDIM dynamics on N(0, gamma^2 I):
/// kappa_i = (a_i / a_{i-1}) (1 - e^{-l_{i-1}} (e^{-l_{i-1}} - e^{-l_i}) / (gamma^2 + e^{-2 l_{i-1}})) kappa_{i-1}.
inline GaussianKappaTrace gaussian_ddim_kappa(double gamma, const TimeGrid& grid) {
    detail::check_kappa_grid(grid);
    const double g2 = gamma * gamma;
    GaussianKappaTrace tr{KappaVariant::DDIM, {1.0}};
    for (int i = 1; i <= grid.steps(); ++i) {
        const TimePoint& a = grid[i - 1];
        const TimePoint& b = grid[i];
        const double ea = detail::exp_neg_lambda(a);
        const double eb = detail::exp_neg_lambda(b);
        const double factor = (b.alpha / a.alpha) * (1.0 - ea * (ea - eb) / (g2 + ea * ea));
        tr.kappas.push_back(factor * tr.kappas.back());
    }
    return tr;
}

/// Scalar dynamics of the second-order multistep solver on N(0, gamma^2 I). Step 1 uses
/// the DDIM recursion (ramp-order warm-up); both lambda-integrals are in closed form.
inline GaussianKappaTrace gaussian_solver2_kappa(double gamma, const TimeGrid& grid) {
    detail::check_kappa_grid(grid);
    const double g2 = gamma * gamma;
    // eps_j / x_{t_0} = g_j kappa_j with g_j = e^{-l_j} / (alpha_j (gamma^2 + e^{-2 l_j})).
    const auto slope = [&](int j) {
        const double e = detail::exp_neg_lambda(grid[j]);
        return e / (grid[j].alpha * (g2 + e * e));
    };
    GaussianKappaTrace tr{KappaVariant::Solver2, {1.0}};
    for (int i = 1; i <= grid.steps(); ++i) {
        const TimePoint& a = grid[i - 1];
        const TimePoint& b = grid[i];
        const double ea = detail::exp_neg_lambda(a);
        const double eb = detail::exp_neg_lambda(b);
        // int e^{-l} dl and int (l - l_{i-1}) e^{-l} dl over [l_{i-1}, l_i]
        const double i0 = ea - eb;
        const double i1 = b.sigma == 0.0 ? ea : ea - (1.0 + (b.lambda - a.lambda)) * eb;
        const double k1 = tr.kappas[static_cast<std::size_t>(i - 1)];
        double k = (b.alpha / a.alpha) * k1 - b.alpha * i0 * slope(i - 1) * k1;
        if (i >= 2) {
            const double k2 = tr.kappas[static_cast<std::size_t>(i - 2)];
            const double dd = (slope(i - 1) * k1 - slope(i - 2) * k2) / (a.lambda - grid[i - 2].lambda);
            k -= b.alpha * i1 * dd;
        }
        tr.kappas.push_back(k);
    }
    return tr;
}

inline Json kappa_trace_to_json(const GaussianKappaTrace& tr, double gamma) {
    return Json{{"role", "oracle"}, {"variant", to_string(tr.variant)}, {"gamma", gamma}, {"kappas", tr.kappas}};
}

struct ReferenceOptions {
    double tol = 1e-12;
    bool gaussian_bypass = true;
    int initial_substeps = 4;  // per grid interval
    int max_doublings = 12;
};

struct ReferenceTrajectory {
    std::vector<Vec> states;
    double achieved_tolerance = 0.0;
    int substeps = 0;          // per interval at acceptance; 0 for the closed form
    bool closed_form = false;
    std::size_t model_calls = 0;
};

namespace detail {

// RK4 on y = x / alpha, dy/dlambda = -e^{-lambda} eps(alpha y, t(lambda)). When the interval
// ends at sigma = 0 it integrates in s = e^{-lambda} instead, where dy/ds = eps.
inline Vec rk4_interval(const Predictor& model, const NoiseSchedule& schedule, std::span<const double> x,
                        const TimePoint& from, const TimePoint& to, int n, std::size_t& calls) {
    const std::size_t d = x.size();
    Vec y(d), k1(d), k2(d), k3(d), k4(d), tmp(d), eps(d);
    for (std::size_t j = 0; j < d; ++j) y[j] = x[j] / from.alpha;

    const bool terminal = to.sigma == 0.0;
    const double u0 = terminal ? from.sigma / from.alpha : from.lambda;
    const double u1 = terminal ? 0.0 : to.lambda;
    const double h = (u1 - u0) / n;

    // Right-hand side at coordinate u (lambda, or s on the terminal interval).
    const auto rhs = [&](double u, std::span<const double> yy, Vec& out) {
        const TimePoint tp = terminal ? (u <= 0.0 ? schedule.at_lambda(kInf) : schedule.at_lambda(-std::log(u)))
                                      : schedule.at_lambda(u);
        for (std::size_t j = 0; j < d; ++j) tmp[j] = tp.alpha * yy[j];
        model.noise(tmp, tp, eps);
        ++calls;
        const double w = terminal ? 1.0 : -tp.sigma / tp.alpha;
        for (std::size_t j = 0; j < d; ++j) out[j] = w * eps[j];
    };

    Vec stage(d);
    for (int s = 0; s < n; ++s) {
        const double u = u0 + h * s;
        const double un = s + 1 == n ? u1 : u0 + h * (s + 1);
        const double hh = un - u;
        rhs(u, y, k1);
        for (std::size_t j = 0; j < d; ++j) stage[j] = y[j] + 0.5 * hh * k1[j];
        rhs(u + 0.5 * hh, stage, k2);
        for (std::size_t j = 0; j < d; ++j) stage[j] = y[j] + 0.5 * hh * k2[j];
        rhs(u + 0.5 * hh, stage, k3);
        for (std::size_t j = 0; j < d; ++j) stage[j] = y[j] + hh * k3[j];
        rhs(un, stage, k4);
        for (std::size_t j = 0; j < d; ++j) y[j] += hh / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    }
    for (double& v : y) v *= to.alpha;
    return y;
}

inline std::vector<Vec> rk4_trajectory(const Predictor& model, const TimeGrid& grid, std::span<const double> x0, int n,
                                       std::size_t& calls) {
    std::vector<Vec> states{Vec(x0.begin(), x0.end())};
    for (int i = 1; i <= grid.steps(); ++i) {
        states.push_back(rk4_interval(model, grid.schedule(), states.back(), grid[i - 1], grid[i], n, calls));
    }
    return states;
}

inline double max_relative_gap(const std::vector<Vec>& a, const std::vector<Vec>& b) {
    double gap = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        gap = std::max(gap, distance2(a[i], b[i]) / std::max(norm2(b[i]), 1e-300));
    }
    return gap;
}

}  // namespace detail

/// Exact flow of the diffusion ODE through the grid times, started at x0 = x*_{t_0}.
inline ReferenceTrajectory reference_trajectory(const Predictor& model, const TimeGrid& grid, std::span<const double> x0,
                                                const ReferenceOptions& opts = {}) {
    if (x0.size() != model.dim()) fail(ErrorKind::InvalidArgument, "reference_trajectory: dimension mismatch");
    if (!(opts.tol >= 1e-12)) fail(ErrorKind::InvalidArgument, "reference_trajectory: tol must be >= 1e-12");
    const auto v = validate_grid(grid);
    if (!v.ok) fail(ErrorKind::InvalidArgument, "reference_trajectory: invalid grid at step " + std::to_string(v.index));

    ReferenceTrajectory ref;
    if (const auto* g = dynamic_cast<const IsotropicGaussianModel*>(&model); g && opts.gaussian_bypass) {
        const auto kappa = gaussian_exact_kappa(g->gamma(), grid);
        for (double k : kappa.kappas) ref.states.push_back(scaled(x0, k));
        ref.closed_form = true;
        return ref;
    }

    int n = std::max(1, opts.initial_substeps);
    auto coarse = detail::rk4_trajectory(model, grid, x0, n, ref.model_calls);
    for (int k = 0; k < opts.max_doublings; ++k) {
        n *= 2;
        auto fine = detail::rk4_trajectory(model, grid, x0, n, ref.model_calls);
        const double gap = detail::max_relative_gap(coarse, fine);
        if (gap <= opts.tol) {
            ref.states = std::move(fine);
            ref.achieved_tolerance = gap;
            ref.substeps = n;
            return ref;
        }
        coarse = std::move(fine);
    }
    fail(ErrorKind::Numerical, "reference_trajectory: refinement did not reach tol " + format_g17(opts.tol) + " within " +
                                   std::to_string(opts.max_doublings) + " doublings");
}

/// x*_{t_i}(x_{t_{i-1}}, t_{i-1}): the exact flow over the single interval [t_{i-1}, t_i].
inline Vec exact_substep(const Predictor& model, std::span<const double> x_prev, int i, const TimeGrid& grid,
                         double tol = 1e-12, bool gaussian_bypass = true, std::size_t* calls = nullptr) {
    if (i < 1 || i > grid.steps()) fail(ErrorKind::InvalidArgument, "exact_substep: step index out of range");
    const TimePoint& a = grid[i - 1];
    const TimePoint& b = grid[i];
    if (const auto* g = dynamic_cast<const IsotropicGaussianModel*>(&model); g && gaussian_bypass) {
        return scaled(x_prev, gaussian_kappa_star(g->gamma(), a.lambda, b.lambda, a.alpha, b.alpha));
    }
    if (!(tol >= 1e-12)) fail(ErrorKind::InvalidArgument, "exact_substep: tol must be >= 1e-12");
    std::size_t local = 0;
    int n = 2;
    Vec coarse = detail::rk4_interval(model, grid.schedule(), x_prev, a, b, n, local);
    for (int k = 0; k < 12; ++k) {
        n *= 2;
        Vec fine = detail::rk4_interval(model, grid.schedule(), x_prev, a, b, n, local);
        if (distance2(coarse, fine) <= tol * std::max(norm2(fine), 1e-300)) {
            if (calls) *calls += local;
            return fine;
        }
        coarse = std::move(fine);
    }
    fail(ErrorKind::Numerical, "exact_substep: refinement did not converge on step " + std::to_string(i));
}

inline Json reference_to_json(const ReferenceTrajectory& ref) {
    Json states = Json::array();
    for (const auto& s : ref.states) states.push_back(s);
    return Json{{"role", "oracle"},
                {"states", states},
                {"achieved_tolerance", ref.achieved_tolerance},
                {"closed_form", ref.closed_form},
                {"substeps", ref.substeps},
                {"model_calls", ref.model_calls}};
}

}  // namespace odeslab

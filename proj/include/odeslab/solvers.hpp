// Copyright (C) 2026 The odeslab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "odeslab/core.hpp"
#include "odeslab/json_io.hpp"
#include "odeslab/models.hpp"
#include "odeslab/oracle.hpp"
#include "odeslab/schedule.hpp"

namespace odeslab {

// ---- phi functions -------------------------------------------------------

/// phi_k(x) = int_0^x e^{-u} u^k du. Accepts x = +inf (phi_k = k!).
inline double phi(int k, double x) {
    if (k < 0) fail(ErrorKind::InvalidArgument, "phi: negative order");
    if (!(x >= 0.0)) fail(ErrorKind::Domain, "phi: argument must be nonnegative");
    if (x == kInf) return std::tgamma(k + 1.0);
    if (x == 0.0) return 0.0;
    if (x < k + 2.0) {
        // k! e^{-x} sum_{j>k} x^j / j!, free of the cancellation in the recurrence.
        double term = std::pow(x, k + 1) / (k + 1);
        double sum = 0.0;
        for (int j = k + 1; j < k + 200; ++j) {
            sum += term;
            if (term < 1e-18 * sum) break;
            term *= x / (j + 1);
        }
        return std::exp(-x) * sum;
    }
    double value = -std::expm1(-x);
    const double ex = std::exp(-x);
    double xk = 1.0;
    for (int j = 1; j <= k; ++j) {
        xk *= x;
        value = j * value - xk * ex;
    }
    return value;
}

/// Closed forms for k <= 2: 1 - e^{-x}, 1 - (1 + x) e^{-x}, 2 - (x^2 + 2x + 2) e^{-x}.
inline double phi_closed_form(int k, double x) {
    const double ex = std::exp(-x);
    switch (k) {
        case 0: return 1.0 - ex;
        case 1: return 1.0 - (1.0 + x) * ex;
        case 2: return 2.0 - (x * x + 2.0 * x + 2.0) * ex;
        default: fail(ErrorKind::InvalidArgument, "phi_closed_form: only k <= 2");
    }
}

using PhiFn = double (*)(int, double);

// The explicit second- and third-order displays fold the exponential weights into
// absolute-lambda coefficients:
//   phi1 = (h + 1) e^{-l_i} - e^{-l_{i-1}} = -e^{-l_{i-1}} phi_1(h)
//   phi2 = h^2 e^{-l_i} + 2 phi1          = -e^{-l_{i-1}} phi_2(h)
inline double display_phi1(const TimePoint& from, const TimePoint& to) {
    const double ea = from.sigma / from.alpha;
    if (to.sigma == 0.0) return -ea;
    const double h = to.lambda - from.lambda;
    return (h + 1.0) * (to.sigma / to.alpha) - ea;
}

inline double display_phi2(const TimePoint& from, const TimePoint& to) {
    const double p1 = display_phi1(from, to);
    if (to.sigma == 0.0) return 2.0 * p1;
    const double h = to.lambda - from.lambda;
    return h * h * (to.sigma / to.alpha) + 2.0 * p1;
}

// ---- history -------------------------------------------------------------

struct NoiseEval {
    double lambda = 0.0;
    Vec eps;
};

/// Most recent noise evaluations, ordered by strictly increasing lambda.
class StepHistory {
public:
    explicit StepHistory(std::size_t capacity = 3) : capacity_(std::max<std::size_t>(capacity, 1)) {}

    void push(double lambda, Vec eps) {
        if (!entries_.empty() && !(lambda > entries_.front().lambda)) {
            fail(ErrorKind::InvalidArgument, "StepHistory: lambdas must be strictly increasing");
        }
        entries_.push_front({lambda, std::move(eps)});
        if (entries_.size() > capacity_) entries_.pop_back();
    }

    /// Replaces the newest entry (same lambda).
    void replace_newest(Vec eps) {
        if (entries_.empty()) fail(ErrorKind::InvalidArgument, "StepHistory: empty");
        entries_.front().eps = std::move(eps);
    }

    std::size_t size() const noexcept { return entries_.size(); }
    std::size_t capacity() const noexcept { return capacity_; }
    bool empty() const noexcept { return entries_.empty(); }
    void clear() noexcept { entries_.clear(); }

    /// j = 0 is the newest entry.
    const NoiseEval& recent(std::size_t j) const { return entries_.at(j); }

    std::vector<NoiseEval> newest(std::size_t n) const {
        if (n > entries_.size()) fail(ErrorKind::InvalidArgument, "StepHistory: insufficient history");
        return {entries_.begin(), entries_.begin() + static_cast<std::ptrdiff_t>(n)};
    }

private:
    std::size_t capacity_;
    std::deque<NoiseEval> entries_;
};

// ---- Vandermonde system --------------------------------------------------

/// Solves A Y = B (A is p x p row-major, B is p x d) by Gaussian elimination with partial pivoting.
inline std::vector<Vec> solve_dense(std::vector<double> A, std::vector<Vec> B) {
    const std::size_t p = B.size();
    if (A.size() != p * p) fail(ErrorKind::InvalidArgument, "solve_dense: shape mismatch");
    double scale = 0.0;
    for (double a : A) scale = std::max(scale, std::abs(a));
    for (std::size_t c = 0; c < p; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < p; ++r) {
            if (std::abs(A[r * p + c]) > std::abs(A[piv * p + c])) piv = r;
        }
        if (!(std::abs(A[piv * p + c]) > 1e-14 * scale)) fail(ErrorKind::Numerical, "solve_dense: singular system");
        if (piv != c) {
            for (std::size_t k = 0; k < p; ++k) std::swap(A[c * p + k], A[piv * p + k]);
            std::swap(B[c], B[piv]);
        }
        for (std::size_t r = c + 1; r < p; ++r) {
            const double f = A[r * p + c] / A[c * p + c];
            if (f == 0.0) continue;
            for (std::size_t k = c; k < p; ++k) A[r * p + k] -= f * A[c * p + k];
            for (std::size_t j = 0; j < B[r].size(); ++j) B[r][j] -= f * B[c][j];
        }
    }
    for (std::size_t c = p; c-- > 0;) {
        for (std::size_t k = c + 1; k < p; ++k) {
            const double a = A[c * p + k];
            if (a == 0.0) continue;
            for (std::size_t j = 0; j < B[c].size(); ++j) B[c][j] -= a * B[k][j];
        }
        const double diag = A[c * p + c];
        if (diag != 1.0) {
            for (double& v : B[c]) v /= diag;
        }
    }
    return B;
}

/// Rows y_1..y_p of the Taylor coefficients of the interpolant through `nodes`, expanded at `center`:
/// sum_k (l_j - center)^{k-1} / (k-1)! y_k = eps_j.
inline std::vector<Vec> taylor_coefficients(std::span<const NoiseEval> nodes, double center) {
    const std::size_t p = nodes.size();
    if (p == 0) fail(ErrorKind::InvalidArgument, "taylor_coefficients: no nodes");
    std::vector<double> A(p * p);
    std::vector<Vec> B(p);
    for (std::size_t j = 0; j < p; ++j) {
        const double off = nodes[j].lambda - center;
        double entry = 1.0;
        for (std::size_t k = 0; k < p; ++k) {
            A[j * p + k] = entry;
            entry *= off / static_cast<double>(k + 1);
        }
        B[j] = nodes[j].eps;
    }
    return solve_dense(std::move(A), std::move(B));
}

/**
 * Exponential-integrator update from `from` to `to`:
 *
 *   x_to = (alpha_to / alpha_from) x - alpha_to * int_{l_from}^{l_to} e^{-l} P(l) dl,
 *
 * with P the polynomial through `nodes` (any distinct lambdas), expanded at l_from so the
 * integral becomes alpha_to e^{-l_from} sum_k phi_k(h) / k! y_{k+1}. The zeroth coefficient is
 * written as alpha_to sigma_from / alpha_from - sigma_to, which is also its sigma_to = 0 limit.
 */
inline Vec exponential_integrator_step(std::span<const double> x, const TimePoint& from, const TimePoint& to,
                                       std::span<const NoiseEval> nodes, PhiFn phi_fn = &phi) {
    if (!(from.sigma > 0.0)) fail(ErrorKind::Domain, "step: sigma at the start of the interval must be positive");
    const std::vector<Vec> y = taylor_coefficients(nodes, from.lambda);
    const double ratio = to.alpha / from.alpha;
    const double pre = to.alpha * from.sigma / from.alpha;
    const double h = to.sigma == 0.0 ? kInf : to.lambda - from.lambda;

    Vec out(x.size());
    const double c0 = pre - to.sigma;
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = ratio * x[j] - c0 * y[0][j];
    double factorial = 1.0;
    for (std::size_t k = 1; k < y.size(); ++k) {
        factorial *= static_cast<double>(k);
        const double ck = pre * phi_fn(static_cast<int>(k), h) / factorial;
        for (std::size_t j = 0; j < x.size(); ++j) out[j] -= ck * y[k][j];
    }
    return out;
}

// ---- individual update rules ---------------------------------------------

namespace detail {

inline void check_step(const TimeGrid& grid, int i) {
    if (i < 1 || i > grid.steps()) {
        fail(ErrorKind::InvalidArgument, "step index " + std::to_string(i) + " outside [1, " + std::to_string(grid.steps()) + "]");
    }
    if (!(grid[i - 1].sigma > 0.0)) fail(ErrorKind::Domain, "step " + std::to_string(i) + ": sigma_{t_{i-1}} must be positive");
}

}  // namespace detail

/// Deterministic DDIM: (a_i / a_{i-1}) x - (a_i s_{i-1} / a_{i-1} - s_i) eps(x, t_{i-1}).
inline Vec ddim_update(std::span<const double> x_prev, const TimePoint& from, const TimePoint& to,
                       std::span<const double> eps) {
    const double ratio = to.alpha / from.alpha;
    const double c0 = to.alpha * from.sigma / from.alpha - to.sigma;
    Vec out(x_prev.size());
    for (std::size_t j = 0; j < x_prev.size(); ++j) out[j] = ratio * x_prev[j] - c0 * eps[j];
    return out;
}

inline Vec ddim_step(std::span<const double> x_prev, int i, const TimeGrid& grid, const Predictor& model) {
    detail::check_step(grid, i);
    const Vec eps = model.eval_noise(x_prev, grid[i - 1]);
    return ddim_update(x_prev, grid[i - 1], grid[i], eps);
}

/// General p-th order multistep step. Evaluates eps(x_prev, t_{i-1}), records it in `history`,
/// and integrates the degree-(p-1) interpolant through the p newest evaluations.
inline Vec ode_solver_p_step(std::span<const double> x_prev, StepHistory& history, int i, const TimeGrid& grid,
                             const Predictor& model, int p, PhiFn phi_fn = &phi) {
    detail::check_step(grid, i);
    if (p < 1) fail(ErrorKind::InvalidArgument, "ode_solver_p_step: order must be >= 1");
    if (history.size() + 1 < static_cast<std::size_t>(p)) {
        fail(ErrorKind::InvalidArgument, "ode_solver_p_step: insufficient history for order " + std::to_string(p));
    }
    if (history.capacity() < static_cast<std::size_t>(p)) {
        fail(ErrorKind::InvalidArgument, "ode_solver_p_step: history capacity below order");
    }
    history.push(grid[i - 1].lambda, model.eval_noise(x_prev, grid[i - 1]));
    const auto nodes = history.newest(static_cast<std::size_t>(p));
    return exponential_integrator_step(x_prev, grid[i - 1], grid[i], nodes, phi_fn);
}

/// Second-order display with D_1 = (eps_{i-1} - eps_{i-2}) / (l_{i-1} - l_{i-2}).
inline Vec ode_solver_2_update(std::span<const double> x_prev, const TimePoint& from, const TimePoint& to,
                               const NoiseEval& e1, const NoiseEval& e2) {
    const double ea = from.sigma / from.alpha;
    const double eb = to.sigma / to.alpha;
    const double p1 = display_phi1(from, to);
    const double ratio = to.alpha / from.alpha;
    Vec out(x_prev.size());
    for (std::size_t j = 0; j < out.size(); ++j) {
        const double d1 = (e1.eps[j] - e2.eps[j]) / (e1.lambda - e2.lambda);
        out[j] = ratio * x_prev[j] + to.alpha * ((eb - ea) * e1.eps[j] + p1 * d1);
    }
    return out;
}

/// Third-order display with D_2 = (eps_{i-1} - eps_{i-3}) / (l_{i-1} - l_{i-3}).
inline Vec ode_solver_3_update(std::span<const double> x_prev, const TimePoint& from, const TimePoint& to,
                               const NoiseEval& e1, const NoiseEval& e2, const NoiseEval& e3) {
    const double ea = from.sigma / from.alpha;
    const double eb = to.sigma / to.alpha;
    const double p1 = display_phi1(from, to);
    const double p2 = display_phi2(from, to);
    const double ratio = to.alpha / from.alpha;
    const double l1 = e1.lambda, l2 = e2.lambda, l3 = e3.lambda;
    Vec out(x_prev.size());
    for (std::size_t j = 0; j < out.size(); ++j) {
        const double d1 = (e1.eps[j] - e2.eps[j]) / (l1 - l2);
        const double d2 = (e1.eps[j] - e3.eps[j]) / (l1 - l3);
        out[j] = ratio * x_prev[j] +
                 to.alpha * ((eb - ea) * e1.eps[j] + p1 * ((l1 - l3) * d1 - (l1 - l2) * d2) / (l2 - l3) +
                             p2 * (d1 - d2) / (l2 - l3));
    }
    return out;
}

inline Vec ode_solver_2_step(std::span<const double> x_prev, StepHistory& history, int i, const TimeGrid& grid,
                             const Predictor& model) {
    detail::check_step(grid, i);
    if (history.empty()) fail(ErrorKind::InvalidArgument, "ode_solver_2_step: insufficient history");
    history.push(grid[i - 1].lambda, model.eval_noise(x_prev, grid[i - 1]));
    return ode_solver_2_update(x_prev, grid[i - 1], grid[i], history.recent(0), history.recent(1));
}

inline Vec ode_solver_3_step(std::span<const double> x_prev, StepHistory& history, int i, const TimeGrid& grid,
                             const Predictor& model) {
    detail::check_step(grid, i);
    if (history.size() < 2 || history.capacity() < 3) fail(ErrorKind::InvalidArgument, "ode_solver_3_step: insufficient history");
    history.push(grid[i - 1].lambda, model.eval_noise(x_prev, grid[i - 1]));
    return ode_solver_3_update(x_prev, grid[i - 1], grid[i], history.recent(0), history.recent(1), history.recent(2));
}

// ---- UniPC -----------------------------------------------------------------

struct UniPCOutput {
    Vec x_next;     // x_{t_i}
    Vec x_cor_prev; // x^cor_{t_{i-1}}
};

/**
 * Predictor-corrector step. Evaluates eps_{i-1} = eps(x_{t_{i-1}}, t_{i-1}) on the predictor
 * trajectory, corrects x^cor_{t_{i-1}} from x^cor_{t_{i-2}} with the interpolant through
 * eps_{i-1}, eps_{i-2}, eps_{i-3}, then predicts x_{t_i} from x^cor_{t_{i-1}} with the
 * `predictor_order` newest evaluations.
 *
 * With `ramp` set, fewer than three evaluations lower the corrector and predictor orders to
 * what is available (and step 1 is plain DDIM); otherwise they are an error.
 */
inline UniPCOutput unipc_step(std::span<const double> x_prev_pred, std::span<const double> x_prev_cor, StepHistory& history,
                              int i, const TimeGrid& grid, const Predictor& model, int predictor_order = 2,
                              bool ramp = false, PhiFn phi_fn = &phi, bool eval_on_corrected = false,
                              std::size_t* extra_calls = nullptr) {
    detail::check_step(grid, i);
    if (predictor_order != 2 && predictor_order != 3) fail(ErrorKind::InvalidArgument, "unipc_step: predictor order must be 2 or 3");
    if (history.capacity() < 3) fail(ErrorKind::InvalidArgument, "unipc_step: history capacity must be >= 3");
    if (!ramp && history.size() + 1 < 3) fail(ErrorKind::InvalidArgument, "unipc_step: insufficient history (< 3 evaluations)");

    history.push(grid[i - 1].lambda, model.eval_noise(x_prev_pred, grid[i - 1]));
    UniPCOutput out;
    if (i == 1 || history.size() < 2) {
        out.x_cor_prev.assign(x_prev_pred.begin(), x_prev_pred.end());
    } else {
        const auto nodes = history.newest(std::min<std::size_t>(3, history.size()));
        out.x_cor_prev = exponential_integrator_step(x_prev_cor, grid[i - 2], grid[i - 1], nodes, phi_fn);
        if (eval_on_corrected) {
            history.replace_newest(model.eval_noise(out.x_cor_prev, grid[i - 1]));
            if (extra_calls) ++*extra_calls;
        }
    }
    const auto order = std::min<std::size_t>(static_cast<std::size_t>(predictor_order), history.size());
    out.x_next = exponential_integrator_step(out.x_cor_prev, grid[i - 1], grid[i], history.newest(order), phi_fn);
    return out;
}

// ---- forward-value rules -------------------------------------------------

/// Data-form coefficients (a, c) of x_i = a x_{i-1} + c mu: a = s_i / s_{i-1}, c = a_i - s_i a_{i-1} / s_{i-1}.
inline std::pair<double, double> data_form_coefficients(const TimePoint& from, const TimePoint& to) {
    const double a = to.sigma / from.sigma;
    const double c = to.alpha - to.sigma * from.alpha / from.sigma;
    return {a, c};
}

struct FixedPointResult {
    Vec x;
    int iterations = 0;       // Picard updates taken (0 for the closed form)
    double residual = 0.0;    // ||x - (a x_prev + c mu(x))||
    bool closed_form = false;
    bool degenerate = false;  // sigma_{t_i} = 0 with mu(x, t_i) = x / alpha: every x is a fixed point
    std::size_t model_calls = 0;
};

/// Idealized forward-value step: solves x = a x_prev + c mu(x, t_i). Linear models are solved
/// in closed form; otherwise Picard iteration from the DDIM step until the update residual r_k,
/// divided by (1 - q) with q the observed contraction ratio r_k / r_{k-1}, is at most
/// picard_tol (1 + ||x||). The returned iterate is then within that tolerance of the fixed point.
inline FixedPointResult forward_value_ideal_step(std::span<const double> x_prev, int i, const TimeGrid& grid,
                                                 const Predictor& model, double picard_tol = 1e-12,
                                                 int picard_max_iters = 100) {
    detail::check_step(grid, i);
    if (!(picard_tol > 0.0) || picard_max_iters < 1) fail(ErrorKind::InvalidArgument, "forward_value_ideal_step: bad tolerances");
    const TimePoint& from = grid[i - 1];
    const TimePoint& to = grid[i];
    const auto [a, c] = data_form_coefficients(from, to);

    FixedPointResult res;
    const auto gain = model.linear_data_gain(to);
    const bool degenerate = gain && to.sigma == 0.0 && std::abs(*gain * to.alpha - 1.0) <= 1e-15;
    if (gain && !degenerate) {
        const double denom = 1.0 - c * *gain;
        res.x = scaled(x_prev, a / denom);
        res.closed_form = true;
        const Vec mu = scaled(res.x, *gain);
        Vec r(res.x.size());
        for (std::size_t j = 0; j < r.size(); ++j) r[j] = res.x[j] - (a * x_prev[j] + c * mu[j]);
        res.residual = norm2(r);
        return res;
    }

    Vec x = ddim_update(x_prev, from, to, model.eval_noise(x_prev, from));
    res.model_calls = 1;
    res.degenerate = to.sigma == 0.0;
    double r_prev = -1.0;
    for (int it = 0; it <= picard_max_iters; ++it) {
        const Vec mu = model.eval_data(x, to);
        ++res.model_calls;
        Vec next(x.size());
        for (std::size_t j = 0; j < x.size(); ++j) next[j] = a * x_prev[j] + c * mu[j];
        const double r = distance2(next, x);
        const double q = r_prev > 0.0 ? std::min(r / r_prev, 0.999) : 0.5;
        if (r == 0.0 || (r_prev > 0.0 && r <= picard_tol * (1.0 + norm2(x)) * (1.0 - q))) {
            res.x = std::move(x);
            res.iterations = it;
            res.residual = r;
            return res;
        }
        r_prev = r;
        x = std::move(next);
    }
    fail(ErrorKind::Numerical, "forward_value_ideal_step: Picard iteration did not converge on step " + std::to_string(i) +
                                   " (step too coarse for the model's Lipschitz constant)");
}

enum class Lookahead { DDIM, DPMSolver2, Oracle };

inline std::string to_string(Lookahead l) {
    switch (l) {
        case Lookahead::DDIM: return "DDIM";
        case Lookahead::DPMSolver2: return "DPMSolver2";
        case Lookahead::Oracle: return "Oracle";
    }
    return "?";
}

inline Lookahead lookahead_from_string(const std::string& s) {
    if (s == "DDIM") return Lookahead::DDIM;
    if (s == "DPMSolver2") return Lookahead::DPMSolver2;
    if (s == "Oracle") return Lookahead::Oracle;
    fail(ErrorKind::Config, "unknown lookahead \"" + s + "\"");
}

/// x_i = (s_i / s_{i-1}) x_{i-1} - (s_i a_{i-1} / s_{i-1} - a_i) mu(x_hat, t_i), given mu(x_hat, t_i).
inline Vec forward_value_update(std::span<const double> x_prev, const TimePoint& from, const TimePoint& to,
                                std::span<const double> mu_hat) {
    const double a = to.sigma / from.sigma;
    const double c = to.sigma * from.alpha / from.sigma - to.alpha;
    Vec out(x_prev.size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = a * x_prev[j] - c * mu_hat[j];
    return out;
}

struct ForwardValueOutput {
    Vec x;
    Vec x_hat;
    std::size_t model_calls = 0;
    std::size_t oracle_calls = 0;
};

/**
 * One step of the forward-value sampler. The lookahead x_hat_{t_i} uses only information up
 * to step i-1:
 *   DDIM        one DDIM step from x_{t_{i-1}} (one extra model call);
 *   DPMSolver2  second-order multistep from x_{t_{i-1}} on the eps values already computed at
 *               earlier lookahead points, kept in `lookahead_history` (no extra call after step 1);
 *   Oracle      the exact single-interval flow (zero lookahead error; verification only),
 *               integrated on `oracle_model` when given so its calls stay out of the NFE count.
 * The model is then evaluated once at (x_hat, t_i).
 */
inline ForwardValueOutput forward_value_step(std::span<const double> x_prev, int i, const TimeGrid& grid,
                                             const Predictor& model, Lookahead lookahead, StepHistory& lookahead_history,
                                             double oracle_tol = 1e-12, PhiFn phi_fn = &phi,
                                             const Predictor* oracle_model = nullptr) {
    detail::check_step(grid, i);
    const TimePoint& from = grid[i - 1];
    const TimePoint& to = grid[i];
    ForwardValueOutput out;
    switch (lookahead) {
        case Lookahead::DDIM:
            out.x_hat = ddim_update(x_prev, from, to, model.eval_noise(x_prev, from));
            ++out.model_calls;
            break;
        case Lookahead::DPMSolver2: {
            if (lookahead_history.capacity() < 2) fail(ErrorKind::InvalidArgument, "forward_value_step: history capacity must be >= 2");
            if (lookahead_history.empty()) {
                // Step 1: no lookahead evaluation exists yet; spend one call at x_{t_0}.
                lookahead_history.push(from.lambda, model.eval_noise(x_prev, from));
                ++out.model_calls;
            }
            if (!(lookahead_history.recent(0).lambda == from.lambda)) {
                fail(ErrorKind::InvalidArgument, "forward_value_step: lookahead history does not end at t_{i-1}");
            }
            const auto nodes = lookahead_history.newest(std::min<std::size_t>(2, lookahead_history.size()));
            out.x_hat = exponential_integrator_step(x_prev, from, to, nodes, phi_fn);
            break;
        }
        case Lookahead::Oracle:
            out.x_hat = exact_substep(oracle_model ? *oracle_model : model, x_prev, i, grid, oracle_tol, true, &out.oracle_calls);
            break;
    }
    const Vec eps_hat = model.eval_noise(out.x_hat, to);
    ++out.model_calls;
    if (lookahead == Lookahead::DPMSolver2 && to.sigma > 0.0) lookahead_history.push(to.lambda, eps_hat);
    out.x = forward_value_update(x_prev, from, to, data_from_noise(out.x_hat, to, eps_hat));
    return out;
}

// ---- sampler specification and driver -------------------------------------

enum class Rule { DDIM, ODESolver, UniPC, ForwardIdeal, ForwardValue };

enum class UniPCBootstrap {
    RampCorrector,  // corrector runs from step 2 with as many evaluations as exist
    CopyPredictor,  // x^cor_{t_j} := x_{t_j} for j <= 2, corrector from step 4
};

struct SamplerSpec {
    Rule rule = Rule::DDIM;
    int order = 1;              // ODESolver order p
    int predictor_order = 2;    // UniPC predictor order (corrector is third order)
    Lookahead lookahead = Lookahead::DDIM;
    UniPCBootstrap unipc_bootstrap = UniPCBootstrap::RampCorrector;
    bool unipc_eval_on_corrected = false;
    double picard_tol = 1e-12;
    int picard_max_iters = 100;
    double oracle_tol = 1e-12;
    PhiFn phi = &odeslab::phi;

    static SamplerSpec ddim() { return {}; }
    static SamplerSpec ode_solver(int p) {
        SamplerSpec s;
        s.rule = Rule::ODESolver;
        s.order = p;
        return s;
    }
    static SamplerSpec unipc(int predictor_order = 2) {
        SamplerSpec s;
        s.rule = Rule::UniPC;
        s.order = 3;
        s.predictor_order = predictor_order;
        return s;
    }
    static SamplerSpec forward_ideal() {
        SamplerSpec s;
        s.rule = Rule::ForwardIdeal;
        return s;
    }
    static SamplerSpec forward_value(Lookahead l = Lookahead::DDIM) {
        SamplerSpec s;
        s.rule = Rule::ForwardValue;
        s.lookahead = l;
        return s;
    }

    std::string name() const {
        switch (rule) {
            case Rule::DDIM: return "DDIM";
            case Rule::ODESolver: return "ODESolver-" + std::to_string(order);
            case Rule::UniPC: return predictor_order == 2 ? "UniPC-3" : "UniPC-3-p3";
            case Rule::ForwardIdeal: return "ForwardIdeal";
            case Rule::ForwardValue: return "ForwardValue";
        }
        return "?";
    }

    /// Lookahead label for reports; empty for rules without one.
    std::string lookahead_name() const { return rule == Rule::ForwardValue ? to_string(lookahead) : std::string(); }

    /// Nominal model calls per step, used for equal-NFE comparisons.
    int calls_per_step() const { return rule == Rule::ForwardValue && lookahead == Lookahead::DDIM ? 2 : 1; }

    void validate() const {
        if (rule == Rule::ODESolver && order < 1) fail(ErrorKind::InvalidArgument, "sampler: order must be >= 1");
        if (rule == Rule::UniPC && predictor_order != 2 && predictor_order != 3) {
            fail(ErrorKind::InvalidArgument, "sampler: UniPC predictor order must be 2 or 3");
        }
        if (!(picard_tol > 0.0) || !(oracle_tol > 0.0) || picard_max_iters < 1) {
            fail(ErrorKind::InvalidArgument, "sampler: tolerances must be positive");
        }
    }
};

struct StepDiagnostics {
    int picard_iterations = 0;
    double lookahead_deviation = std::numeric_limits<double>::quiet_NaN();
    bool degenerate = false;
};

struct Trajectory {
    std::string sampler;
    std::string lookahead;
    std::vector<Vec> states;  // x_{t_0..t_M}
    std::size_t model_calls = 0;
    std::size_t oracle_calls = 0;
    std::vector<StepDiagnostics> steps;
};

struct RunOptions {
    /// Record ||x_hat - x*_{t_i}(x_{t_{i-1}})|| for forward-value lookaheads (costs oracle calls).
    bool track_lookahead_error = false;
};

/// Iterates the configured rule over i = 1..M with ramp-order warm-up (order min(i, p)).
inline Trajectory run_sampler(const SamplerSpec& spec, const TimeGrid& grid, const Predictor& model, std::span<const double> x0,
                              const RunOptions& options = {}) {
    spec.validate();
    if (x0.size() != model.dim()) fail(ErrorKind::InvalidArgument, "run_sampler: x0 dimension does not match the model");
    if (const auto v = validate_grid(grid); !v.ok) {
        fail(ErrorKind::InvalidArgument, "run_sampler: invalid grid at step " + std::to_string(v.index) + ": " + v.violation);
    }

    // Counts sampler-side model evaluations.
    struct Counting final : Predictor {
        const Predictor& inner;
        mutable std::size_t calls = 0;
        explicit Counting(const Predictor& p) : inner(p) {}
        std::size_t dim() const override { return inner.dim(); }
        void noise(std::span<const double> x, const TimePoint& tp, std::span<double> out) const override {
            ++calls;
            inner.noise(x, tp, out);
        }
        std::optional<double> linear_data_gain(const TimePoint& tp) const override { return inner.linear_data_gain(tp); }
        Json to_json() const override { return inner.to_json(); }
    } counted(model);

    Trajectory traj;
    traj.sampler = spec.name();
    traj.lookahead = spec.lookahead_name();
    traj.states.reserve(static_cast<std::size_t>(grid.steps()) + 1);
    traj.states.emplace_back(x0.begin(), x0.end());
    traj.steps.resize(static_cast<std::size_t>(grid.steps()));

    const std::size_t capacity = std::max(3, spec.order);
    StepHistory history(capacity);
    Vec x_cor = traj.states.front();
    std::size_t extra_calls = 0;

    for (int i = 1; i <= grid.steps(); ++i) {
        const Vec& x = traj.states.back();
        auto& diag = traj.steps[static_cast<std::size_t>(i - 1)];
        Vec next;
        try {
            switch (spec.rule) {
                case Rule::DDIM:
                    next = ddim_step(x, i, grid, counted);
                    break;
                case Rule::ODESolver:
                    next = ode_solver_p_step(x, history, i, grid, counted, std::min(i, spec.order), spec.phi);
                    break;
                case Rule::UniPC: {
                    if (spec.unipc_bootstrap == UniPCBootstrap::CopyPredictor && i <= 3) {
                        // Plain ramp-order multistep while x^cor_{t_j} := x_{t_j}.
                        history.push(grid[i - 1].lambda, counted.eval_noise(x, grid[i - 1]));
                        const auto order = std::min<std::size_t>(static_cast<std::size_t>(spec.predictor_order), history.size());
                        next = exponential_integrator_step(x, grid[i - 1], grid[i], history.newest(order), spec.phi);
                        x_cor = x;
                    } else {
                        auto out = unipc_step(x, x_cor, history, i, grid, counted, spec.predictor_order, true, spec.phi,
                                              spec.unipc_eval_on_corrected, &extra_calls);
                        next = std::move(out.x_next);
                        x_cor = std::move(out.x_cor_prev);
                    }
                    break;
                }
                case Rule::ForwardIdeal: {
                    auto res = forward_value_ideal_step(x, i, grid, counted, spec.picard_tol, spec.picard_max_iters);
                    diag.picard_iterations = res.iterations;
                    diag.degenerate = res.degenerate;
                    next = std::move(res.x);
                    break;
                }
                case Rule::ForwardValue: {
                    auto out = forward_value_step(x, i, grid, counted, spec.lookahead, history, spec.oracle_tol, spec.phi, &model);
                    traj.oracle_calls += out.oracle_calls;
                    if (options.track_lookahead_error) {
                        std::size_t oc = 0;
                        const Vec exact = exact_substep(model, x, i, grid, spec.oracle_tol, true, &oc);
                        traj.oracle_calls += oc;
                        diag.lookahead_deviation = distance2(out.x_hat, exact);
                    }
                    next = std::move(out.x);
                    break;
                }
            }
        } catch (const Error& e) {
            throw Error(e.kind(), traj.sampler + " step " + std::to_string(i) + ": " + e.what());
        }
        traj.states.push_back(std::move(next));
    }
    traj.model_calls = counted.calls;
    return traj;
}

// ---- JSON ----------------------------------------------------------------

inline Json sampler_to_json(const SamplerSpec& s) {
    Json j;
    switch (s.rule) {
        case Rule::DDIM: j["rule"] = "DDIM"; break;
        case Rule::ODESolver:
            j["rule"] = "ODESolver";
            j["order"] = s.order;
            break;
        case Rule::UniPC:
            j["rule"] = "UniPC";
            j["predictor_order"] = s.predictor_order;
            j["bootstrap"] = s.unipc_bootstrap == UniPCBootstrap::RampCorrector ? "ramp-corrector" : "copy-predictor";
            j["eval_on_corrected"] = s.unipc_eval_on_corrected;
            break;
        case Rule::ForwardIdeal:
            j["rule"] = "ForwardIdeal";
            j["picard_tol"] = s.picard_tol;
            j["picard_max_iters"] = s.picard_max_iters;
            break;
        case Rule::ForwardValue:
            j["rule"] = "ForwardValue";
            j["lookahead"] = to_string(s.lookahead);
            break;
    }
    j["warmup"] = "ramp-order";
    return j;
}

inline SamplerSpec sampler_from_json(const Json& j) {
    const std::string ctx = "sampler";
    require_known_keys(j, {"rule", "order", "predictor_order", "lookahead", "bootstrap", "eval_on_corrected", "picard_tol",
                           "picard_max_iters", "oracle_tol", "warmup"},
                       ctx);
    if (optional_or<std::string>(j, "warmup", "ramp-order", ctx) != "ramp-order") {
        fail(ErrorKind::Config, "sampler: only the ramp-order warm-up is supported");
    }
    const auto rule = required<std::string>(j, "rule", ctx);
    SamplerSpec s;
    if (rule == "DDIM") {
        s = SamplerSpec::ddim();
    } else if (rule == "ODESolver") {
        s = SamplerSpec::ode_solver(required<int>(j, "order", ctx));
    } else if (rule == "UniPC") {
        s = SamplerSpec::unipc(optional_or(j, "predictor_order", 2, ctx));
        const auto boot = optional_or<std::string>(j, "bootstrap", "ramp-corrector", ctx);
        if (boot == "ramp-corrector") {
            s.unipc_bootstrap = UniPCBootstrap::RampCorrector;
        } else if (boot == "copy-predictor") {
            s.unipc_bootstrap = UniPCBootstrap::CopyPredictor;
        } else {
            fail(ErrorKind::Config, "sampler: unknown UniPC bootstrap \"" + boot + "\"");
        }
        s.unipc_eval_on_corrected = optional_or(j, "eval_on_corrected", false, ctx);
    } else if (rule == "ForwardIdeal") {
        s = SamplerSpec::forward_ideal();
    } else if (rule == "ForwardValue") {
        s = SamplerSpec::forward_value(lookahead_from_string(optional_or<std::string>(j, "lookahead", "DDIM", ctx)));
    } else {
        fail(ErrorKind::Config, "sampler: unknown rule \"" + rule + "\"");
    }
    s.picard_tol = optional_or(j, "picard_tol", s.picard_tol, ctx);
    s.picard_max_iters = optional_or(j, "picard_max_iters", s.picard_max_iters, ctx);
    s.oracle_tol = optional_or(j, "oracle_tol", s.oracle_tol, ctx);
    try {
        s.validate();
    } catch (const Error& e) {
        fail(ErrorKind::Config, e.what());
    }
    return s;
}

inline Json trajectory_to_json(const Trajectory& t) {
    Json states = Json::array();
    for (const auto& s : t.states) states.push_back(s);
    Json diags = Json::array();
    for (const auto& d : t.steps) {
        diags.push_back(Json{{"picard_iterations", d.picard_iterations},
                             {"lookahead_deviation", d.lookahead_deviation},
                             {"degenerate", d.degenerate}});
    }
    Json j{{"role", "sampler"}, {"sampler", t.sampler}};
    if (!t.lookahead.empty()) j["lookahead"] = t.lookahead;
    j["NFE"] = t.model_calls;
    j["oracle_calls"] = t.oracle_calls;
    j["states"] = states;
    j["diagnostics"] = diags;
    return j;
}

}  // namespace odeslab

// Copyright (C) 2026 The odeslab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "odeslab/core.hpp"
#include "odeslab/json_io.hpp"

namespace odeslab {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class ScheduleKind { VE, VPLinear };

/// One evaluated schedule point. `lambda` is +inf exactly when `sigma` is 0.
struct TimePoint {
    double t = 0.0;
    double alpha = 1.0;
    double sigma = 0.0;
    double lambda = kInf;
};

namespace detail {

// log(1 + e^z) without overflow.
inline double softplus(double z) {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

}  // namespace detail

/**
 * Forward-process marginal amplitudes x_t = alpha_t x_0 + sigma_t z.
 *
 * VE:        alpha_t = 1, sigma_t = t, domain [0, t_max].
 * VP-linear: alpha_t = exp(-t^2 (b_max - b_min) / 4 - t b_min / 2), sigma_t = sqrt(1 - alpha_t^2),
 *            domain [0, 1].
 *
 * The half-log-SNR lambda(t) = log(alpha_t / sigma_t) is strictly decreasing; both
 * kinds admit a closed-form inverse.
 */
class NoiseSchedule {
public:
    static NoiseSchedule ve(double t_max = 100.0) {
        if (!(t_max > 0.0)) fail(ErrorKind::InvalidArgument, "VE schedule: t_max must be positive");
        NoiseSchedule s;
        s.kind_ = ScheduleKind::VE;
        s.t_max_ = t_max;
        return s;
    }

    static NoiseSchedule vp_linear(double beta_min = 0.1, double beta_max = 20.0) {
        if (!(beta_min > 0.0) || !(beta_max > 0.0)) {
            fail(ErrorKind::InvalidArgument, "VP-linear schedule: beta_min and beta_max must be positive");
        }
        NoiseSchedule s;
        s.kind_ = ScheduleKind::VPLinear;
        s.beta_min_ = beta_min;
        s.beta_max_ = beta_max;
        s.t_max_ = 1.0;
        return s;
    }

    ScheduleKind kind() const noexcept { return kind_; }
    double beta_min() const noexcept { return beta_min_; }
    double beta_max() const noexcept { return beta_max_; }
    double t_min() const noexcept { return 0.0; }
    double t_max() const noexcept { return t_max_; }

    bool in_domain(double t) const noexcept { return t >= t_min() && t <= t_max_; }

    double log_alpha(double t) const {
        check_domain(t);
        if (kind_ == ScheduleKind::VE) return 0.0;
        return -0.25 * t * t * (beta_max_ - beta_min_) - 0.5 * t * beta_min_;
    }

    double alpha(double t) const { return std::exp(log_alpha(t)); }

    double sigma(double t) const {
        check_domain(t);
        if (kind_ == ScheduleKind::VE) return t;
        return std::sqrt(-std::expm1(2.0 * log_alpha(t)));
    }

    /// Half-log-SNR. Throws Domain when sigma_t = 0 (lambda would be infinite).
    double lambda(double t) const {
        check_domain(t);
        if (kind_ == ScheduleKind::VE) {
            if (t == 0.0) fail(ErrorKind::Domain, "lambda(t): sigma_t = 0 at t = 0");
            return -std::log(t);
        }
        const double la = log_alpha(t);
        if (la == 0.0) fail(ErrorKind::Domain, "lambda(t): sigma_t = 0 at t = 0");
        return la - 0.5 * std::log(-std::expm1(2.0 * la));
    }

    /// Inverse of lambda(t). Throws Domain when `lam` is outside the image of the domain.
    double t_of_lambda(double lam) const {
        if (std::isnan(lam)) fail(ErrorKind::Domain, "t_of_lambda: NaN");
        if (lam == kInf) return 0.0;
        if (lam < lambda(t_max_)) {
            fail(ErrorKind::Domain, "t_of_lambda: lambda " + format_g17(lam) + " below the schedule image");
        }
        if (kind_ == ScheduleKind::VE) return std::exp(-lam);
        // Positive root of (db/4) t^2 + (b_min/2) t + log_alpha = 0, written without cancellation.
        const double la = log_alpha_of_lambda(lam);
        const double a = 0.25 * (beta_max_ - beta_min_);
        const double b = 0.5 * beta_min_;
        return -2.0 * la / (b + std::sqrt(b * b - 4.0 * a * la));
    }

    TimePoint at(double t) const {
        check_domain(t);
        TimePoint p;
        p.t = t;
        p.alpha = alpha(t);
        p.sigma = sigma(t);
        p.lambda = p.sigma == 0.0 ? kInf : lambda(t);
        return p;
    }

    /// Schedule point parameterized by lambda; alpha and sigma come straight from lambda.
    TimePoint at_lambda(double lam) const {
        TimePoint p;
        p.t = t_of_lambda(lam);
        p.lambda = lam;
        if (kind_ == ScheduleKind::VE) {
            p.alpha = 1.0;
            p.sigma = lam == kInf ? 0.0 : std::exp(-lam);
        } else {
            p.alpha = std::exp(log_alpha_of_lambda(lam));
            p.sigma = lam == kInf ? 0.0 : std::exp(-0.5 * detail::softplus(2.0 * lam));
        }
        return p;
    }

    friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;

private:
    NoiseSchedule() = default;

    void check_domain(double t) const {
        if (!in_domain(t)) {
            fail(ErrorKind::Domain, "time " + format_g17(t) + " outside schedule domain [0, " + format_g17(t_max_) + "]");
        }
    }

    // VP: alpha^2 = sigmoid(2 lambda).
    static double log_alpha_of_lambda(double lam) {
        if (lam == kInf) return 0.0;
        return -0.5 * detail::softplus(-2.0 * lam);
    }

    ScheduleKind kind_ = ScheduleKind::VE;
    double beta_min_ = 0.0;
    double beta_max_ = 0.0;
    double t_max_ = 100.0;
};

inline double lambda_of_t(const NoiseSchedule& schedule, double t) { return schedule.lambda(t); }
inline double t_of_lambda(const NoiseSchedule& schedule, double lam) { return schedule.t_of_lambda(lam); }

enum class GridKind { UniformLambda, UniformTime, SubsampleReference };

struct GridConfig {
    GridKind kind = GridKind::UniformLambda;
    int M = 10;
    double t_start = 10.0;
    double t_end = 1e-3;
    int M_ref = 0;
    // Spacing of the reference grid that SubsampleReference picks from.
    GridKind reference_spacing = GridKind::UniformTime;
};

/// Decreasing times t_0 > ... > t_M with cached alpha, sigma and lambda.
class TimeGrid {
public:
    TimeGrid() = default;

    /// Hand-built grid; no invariants are checked (see validate_grid).
    explicit TimeGrid(std::vector<TimePoint> points, GridKind kind = GridKind::UniformTime)
        : points_(std::move(points)), kind_(kind) {}

    TimeGrid(std::vector<TimePoint> points, const NoiseSchedule& schedule, GridKind kind = GridKind::UniformTime)
        : points_(std::move(points)), kind_(kind), schedule_(schedule) {}

    int steps() const noexcept { return static_cast<int>(points_.size()) - 1; }
    GridKind kind() const noexcept { return kind_; }
    const TimePoint& operator[](int i) const { return points_.at(static_cast<std::size_t>(i)); }
    const std::vector<TimePoint>& points() const noexcept { return points_; }
    const TimePoint& front() const { return points_.front(); }
    const TimePoint& back() const { return points_.back(); }

    bool has_schedule() const noexcept { return schedule_.has_value(); }
    const NoiseSchedule& schedule() const {
        if (!schedule_) fail(ErrorKind::InvalidArgument, "time grid carries no schedule");
        return *schedule_;
    }

    /// delta_i = lambda_i - lambda_{i-1}, i in [1, M].
    double delta(int i) const { return (*this)[i].lambda - (*this)[i - 1].lambda; }

    double max_delta() const {
        double m = 0.0;
        for (int i = 1; i <= steps(); ++i) m = std::max(m, delta(i));
        return m;
    }

    /// Indices into the reference grid when built by subsampling, empty otherwise.
    const std::vector<int>& reference_indices() const noexcept { return reference_indices_; }

    friend TimeGrid build_grid(const NoiseSchedule&, const GridConfig&);

private:
    std::vector<TimePoint> points_;
    GridKind kind_ = GridKind::UniformTime;
    std::optional<NoiseSchedule> schedule_;
    std::vector<int> reference_indices_;
};

/// i' = round(i * M_ref / M) for i = 0..M.
inline std::vector<int> subsample_indices(int M_ref, int M) {
    if (M < 1) fail(ErrorKind::InvalidArgument, "subsample_indices: M must be >= 1");
    if (M_ref < M) fail(ErrorKind::InvalidArgument, "subsample_indices: M_ref must be >= M");
    std::vector<int> idx(static_cast<std::size_t>(M) + 1);
    for (int i = 0; i <= M; ++i) {
        idx[static_cast<std::size_t>(i)] =
            static_cast<int>(std::lround(static_cast<double>(i) * M_ref / static_cast<double>(M)));
    }
    return idx;
}

namespace detail {

inline std::vector<TimePoint> uniform_points(const NoiseSchedule& s, GridKind kind, int M, double t_start, double t_end) {
    std::vector<TimePoint> pts(static_cast<std::size_t>(M) + 1);
    if (kind == GridKind::UniformTime) {
        const double h = (t_end - t_start) / M;
        for (int i = 0; i <= M; ++i) {
            const double t = i == M ? t_end : t_start + h * i;
            pts[static_cast<std::size_t>(i)] = s.at(t);
        }
        return pts;
    }
    const TimePoint first = s.at(t_start);
    const TimePoint last = s.at(t_end);
    if (last.sigma == 0.0) {
        fail(ErrorKind::InvalidArgument, "uniform-lambda grid cannot end at sigma = 0 (infinite lambda)");
    }
    const double h = (last.lambda - first.lambda) / M;
    for (int i = 0; i <= M; ++i) {
        if (i == 0) {
            pts[0] = first;
        } else if (i == M) {
            pts[static_cast<std::size_t>(M)] = last;
        } else {
            const double lam = first.lambda + h * i;
            TimePoint p = s.at(s.t_of_lambda(lam));
            p.lambda = lam;
            pts[static_cast<std::size_t>(i)] = p;
        }
    }
    return pts;
}

}  // namespace detail

inline TimeGrid build_grid(const NoiseSchedule& schedule, const GridConfig& cfg) {
    if (cfg.M < 1) fail(ErrorKind::InvalidArgument, "build_grid: M must be >= 1");
    if (!(cfg.t_start > cfg.t_end)) fail(ErrorKind::InvalidArgument, "build_grid: t_start must exceed t_end");
    if (!schedule.in_domain(cfg.t_start) || !schedule.in_domain(cfg.t_end)) {
        fail(ErrorKind::Domain, "build_grid: endpoints outside schedule domain");
    }
    TimeGrid grid;
    grid.kind_ = cfg.kind;
    grid.schedule_ = schedule;
    if (cfg.kind != GridKind::SubsampleReference) {
        grid.points_ = detail::uniform_points(schedule, cfg.kind, cfg.M, cfg.t_start, cfg.t_end);
        return grid;
    }
    if (cfg.reference_spacing == GridKind::SubsampleReference) {
        fail(ErrorKind::InvalidArgument, "build_grid: reference spacing must be uniform-time or uniform-lambda");
    }
    grid.reference_indices_ = subsample_indices(cfg.M_ref, cfg.M);
    const auto reference = detail::uniform_points(schedule, cfg.reference_spacing, cfg.M_ref, cfg.t_start, cfg.t_end);
    grid.points_.reserve(grid.reference_indices_.size());
    for (int i : grid.reference_indices_) grid.points_.push_back(reference[static_cast<std::size_t>(i)]);
    return grid;
}

struct GridValidation {
    bool ok = true;
    int index = -1;          // first offending step index i
    std::string violation;   // empty when ok
    double max_delta = 0.0;
};

/// Checks delta_i > 0, alpha nondecreasing and sigma nonincreasing, step by step.
inline GridValidation validate_grid(const TimeGrid& grid) {
    GridValidation v;
    if (grid.steps() < 1) {
        v.ok = false;
        v.index = 0;
        v.violation = "grid needs at least two points";
        return v;
    }
    for (int i = 1; i <= grid.steps(); ++i) {
        const TimePoint& a = grid[i - 1];
        const TimePoint& b = grid[i];
        std::string what;
        if (!(b.lambda > a.lambda)) {
            what = "delta_i <= 0";
        } else if (b.alpha < a.alpha) {
            what = "alpha decreases";
        } else if (b.sigma > a.sigma) {
            what = "sigma increases";
        } else if (i < grid.steps() && b.sigma == 0.0) {
            what = "sigma = 0 before the final entry";
        }
        if (!what.empty()) {
            v.ok = false;
            v.index = i;
            v.violation = what;
            return v;
        }
    }
    v.max_delta = grid.max_delta();
    return v;
}

// ---- JSON ----------------------------------------------------------------

inline std::string to_string(ScheduleKind k) { return k == ScheduleKind::VE ? "VE" : "VP-linear"; }

inline std::string to_string(GridKind k) {
    switch (k) {
        case GridKind::UniformLambda: return "uniform-lambda";
        case GridKind::UniformTime: return "uniform-time";
        case GridKind::SubsampleReference: return "subsample-reference";
    }
    return "?";
}

inline GridKind grid_kind_from_string(const std::string& s) {
    if (s == "uniform-lambda") return GridKind::UniformLambda;
    if (s == "uniform-time") return GridKind::UniformTime;
    if (s == "subsample-reference") return GridKind::SubsampleReference;
    fail(ErrorKind::Config, "unknown grid kind \"" + s + "\"");
}

inline Json schedule_to_json(const NoiseSchedule& s) {
    Json j;
    j["kind"] = to_string(s.kind());
    if (s.kind() == ScheduleKind::VPLinear) {
        j["beta_min"] = s.beta_min();
        j["beta_max"] = s.beta_max();
    } else {
        j["t_max"] = s.t_max();
    }
    return j;
}

inline NoiseSchedule schedule_from_json(const Json& j) {
    const std::string ctx = "schedule";
    require_known_keys(j, {"kind", "beta_min", "beta_max", "t_max"}, ctx);
    const auto kind = required<std::string>(j, "kind", ctx);
    if (kind == "VE") {
        if (j.contains("beta_min") || j.contains("beta_max")) fail(ErrorKind::Config, "schedule: VE takes no beta parameters");
        return NoiseSchedule::ve(optional_or(j, "t_max", 100.0, ctx));
    }
    if (kind == "VP-linear") {
        if (j.contains("t_max")) fail(ErrorKind::Config, "schedule: VP-linear domain is fixed to [0, 1]");
        return NoiseSchedule::vp_linear(optional_or(j, "beta_min", 0.1, ctx), optional_or(j, "beta_max", 20.0, ctx));
    }
    fail(ErrorKind::Config, "schedule: unknown kind \"" + kind + "\"");
}

inline Json grid_config_to_json(const GridConfig& g, bool with_M = true) {
    Json j;
    j["kind"] = to_string(g.kind);
    if (with_M) j["M"] = g.M;
    j["t_start"] = g.t_start;
    j["t_end"] = g.t_end;
    if (g.kind == GridKind::SubsampleReference) {
        j["M_ref"] = g.M_ref;
        j["reference_spacing"] = to_string(g.reference_spacing);
    }
    return j;
}

inline GridConfig grid_config_from_json(const Json& j) {
    const std::string ctx = "grid";
    require_known_keys(j, {"kind", "M", "t_start", "t_end", "M_ref", "reference_spacing"}, ctx);
    GridConfig g;
    g.kind = grid_kind_from_string(required<std::string>(j, "kind", ctx));
    g.M = optional_or(j, "M", g.M, ctx);
    g.t_start = required<double>(j, "t_start", ctx);
    g.t_end = required<double>(j, "t_end", ctx);
    g.M_ref = optional_or(j, "M_ref", 0, ctx);
    g.reference_spacing = grid_kind_from_string(optional_or<std::string>(j, "reference_spacing", "uniform-time", ctx));
    return g;
}

/// Grid points as JSON arrays (times and lambdas at 17 significant digits via dump_json).
inline Json grid_points_to_json(const TimeGrid& grid) {
    Json times = Json::array(), lambdas = Json::array();
    for (const auto& p : grid.points()) {
        times.push_back(p.t);
        lambdas.push_back(p.lambda);
    }
    return Json{{"times", times}, {"lambdas", lambdas}};
}

}  // namespace odeslab

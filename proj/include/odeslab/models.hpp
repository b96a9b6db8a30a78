// Copyright (C) 2026 The odeslab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "odeslab/core.hpp"
#include "odeslab/json_io.hpp"
#include "odeslab/schedule.hpp"

namespace odeslab {

/// mu = (x - sigma eps) / alpha.
inline Vec data_from_noise(std::span<const double> x, const TimePoint& tp, std::span<const double> eps) {
    if (!(tp.alpha > 0.0)) fail(ErrorKind::Domain, "data_from_noise: alpha_t must be positive");
    Vec mu(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) mu[k] = (x[k] - tp.sigma * eps[k]) / tp.alpha;
    return mu;
}

inline Vec data_from_noise(std::span<const double> x, double t, std::span<const double> eps, const NoiseSchedule& schedule) {
    return data_from_noise(x, schedule.at(t), eps);
}

/// eps = (x - alpha mu) / sigma.
inline Vec noise_from_data(std::span<const double> x, const TimePoint& tp, std::span<const double> mu) {
    if (!(tp.sigma > 0.0)) fail(ErrorKind::Domain, "noise_from_data: sigma_t must be positive");
    Vec eps(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) eps[k] = (x[k] - tp.alpha * mu[k]) / tp.sigma;
    return eps;
}

/// A noise prediction model eps(x, t); the data prediction mu(x, t) follows from it.
class Predictor {
public:
    virtual ~Predictor() = default;

    virtual std::size_t dim() const = 0;
    virtual void noise(std::span<const double> x, const TimePoint& tp, std::span<double> out) const = 0;
    virtual Json to_json() const = 0;

    /// Scalar g with mu(x, t) = g x for every x, when the model has that structure.
    virtual std::optional<double> linear_data_gain(const TimePoint&) const { return std::nullopt; }

    Vec eval_noise(std::span<const double> x, const TimePoint& tp) const {
        check_dim(x);
        Vec out(x.size());
        noise(x, tp, out);
        return out;
    }

    Vec eval_data(std::span<const double> x, const TimePoint& tp) const {
        const Vec eps = eval_noise(x, tp);
        return data_from_noise(x, tp, eps);
    }

protected:
    void check_dim(std::span<const double> x) const {
        if (x.size() != dim()) {
            fail(ErrorKind::InvalidArgument,
                 "predictor: input dimension " + std::to_string(x.size()) + " != model dimension " + std::to_string(dim()));
        }
    }
};

using PredictorPtr = std::shared_ptr<const Predictor>;

/// Target q_0 = N(0, gamma^2 I_d).
class IsotropicGaussianModel final : public Predictor {
public:
    IsotropicGaussianModel(double gamma, std::size_t dim) : gamma_(gamma), dim_(dim) {
        if (!(gamma >= 0.0)) fail(ErrorKind::InvalidArgument, "gaussian model: gamma must be nonnegative");
        if (dim == 0) fail(ErrorKind::InvalidArgument, "gaussian model: dim must be positive");
    }

    double gamma() const noexcept { return gamma_; }
    std::size_t dim() const override { return dim_; }

    /// sigma / (alpha^2 gamma^2 + sigma^2): the factor with eps = factor * x.
    double noise_gain(const TimePoint& tp) const {
        const double var = marginal_variance(tp);
        if (!(var > 0.0)) fail(ErrorKind::Domain, "gaussian model: degenerate marginal (sigma_t = 0 with gamma = 0)");
        return tp.sigma / var;
    }

    double marginal_variance(const TimePoint& tp) const {
        return tp.alpha * tp.alpha * gamma_ * gamma_ + tp.sigma * tp.sigma;
    }

    void noise(std::span<const double> x, const TimePoint& tp, std::span<double> out) const override {
        const double var = marginal_variance(tp);
        if (!(var > 0.0)) fail(ErrorKind::Domain, "gaussian model: degenerate marginal (sigma_t = 0 with gamma = 0)");
        for (std::size_t k = 0; k < x.size(); ++k) out[k] = tp.sigma * x[k] / var;
    }

    std::optional<double> linear_data_gain(const TimePoint& tp) const override {
        const double var = marginal_variance(tp);
        if (!(var > 0.0)) fail(ErrorKind::Domain, "gaussian model: degenerate marginal (sigma_t = 0 with gamma = 0)");
        return tp.alpha * gamma_ * gamma_ / var;
    }

    Json to_json() const override { return Json{{"model", "gaussian"}, {"gamma", gamma_}, {"dim", dim_}}; }

private:
    double gamma_;
    std::size_t dim_;
};

struct MixtureComponent {
    double weight = 1.0;
    Vec mean;
    double scale = 1.0;
};

/// q_0 = sum_k w_k N(m_k, s_k^2 I); its marginals are sum_k w_k N(alpha m_k, (alpha^2 s_k^2 + sigma^2) I).
class GaussianMixtureModel final : public Predictor {
public:
    explicit GaussianMixtureModel(std::vector<MixtureComponent> components) : components_(std::move(components)) {
        if (components_.empty()) fail(ErrorKind::InvalidArgument, "mixture model: needs at least one component");
        dim_ = components_.front().mean.size();
        if (dim_ == 0) fail(ErrorKind::InvalidArgument, "mixture model: empty mean");
        double total = 0.0;
        for (const auto& c : components_) {
            if (c.mean.size() != dim_) fail(ErrorKind::InvalidArgument, "mixture model: mean dimensions differ");
            if (!(c.weight > 0.0)) fail(ErrorKind::InvalidArgument, "mixture model: weights must be positive");
            if (!(c.scale > 0.0)) fail(ErrorKind::InvalidArgument, "mixture model: scales must be positive");
            total += c.weight;
        }
        if (std::abs(total - 1.0) > 1e-12) fail(ErrorKind::InvalidArgument, "mixture model: weights must sum to 1");
    }

    std::size_t dim() const override { return dim_; }
    const std::vector<MixtureComponent>& components() const noexcept { return components_; }

    /// Posterior component probabilities at (x, t), normalized with a max-shift.
    Vec responsibilities(std::span<const double> x, const TimePoint& tp) const {
        const std::size_t K = components_.size();
        Vec logw(K);
        for (std::size_t k = 0; k < K; ++k) {
            const auto& c = components_[k];
            const double v = component_variance(c, tp);
            double r2 = 0.0;
            for (std::size_t j = 0; j < dim_; ++j) {
                const double d = x[j] - tp.alpha * c.mean[j];
                r2 += d * d;
            }
            logw[k] = std::log(c.weight) - 0.5 * static_cast<double>(dim_) * std::log(v) - 0.5 * r2 / v;
        }
        const double shift = *std::max_element(logw.begin(), logw.end());
        double total = 0.0;
        for (double& w : logw) {
            w = std::exp(w - shift);
            total += w;
        }
        for (double& w : logw) w /= total;
        return logw;
    }

    // eps = sigma * sum_k r_k (x - alpha m_k) / v_k = -sigma * grad log q_t(x).
    void noise(std::span<const double> x, const TimePoint& tp, std::span<double> out) const override {
        const Vec r = responsibilities(x, tp);
        std::fill(out.begin(), out.end(), 0.0);
        for (std::size_t k = 0; k < components_.size(); ++k) {
            const auto& c = components_[k];
            const double w = r[k] / component_variance(c, tp);
            for (std::size_t j = 0; j < dim_; ++j) out[j] += w * (x[j] - tp.alpha * c.mean[j]);
        }
        for (double& v : out) v *= tp.sigma;
    }

    Json to_json() const override {
        Json comps = Json::array();
        for (const auto& c : components_) comps.push_back(Json{{"w", c.weight}, {"mean", c.mean}, {"s", c.scale}});
        return Json{{"model", "mixture"}, {"components", comps}};
    }

    static double component_variance(const MixtureComponent& c, const TimePoint& tp) {
        return tp.alpha * tp.alpha * c.scale * c.scale + tp.sigma * tp.sigma;
    }

private:
    std::vector<MixtureComponent> components_;
    std::size_t dim_ = 0;
};

/// eps(x, t(lambda)) = sum_k c_k lambda^k, independent of x.
class PolyLambdaModel final : public Predictor {
public:
    explicit PolyLambdaModel(std::vector<Vec> coeffs) : coeffs_(std::move(coeffs)) {
        if (coeffs_.empty()) fail(ErrorKind::InvalidArgument, "poly model: needs at least one coefficient");
        dim_ = coeffs_.front().size();
        if (dim_ == 0) fail(ErrorKind::InvalidArgument, "poly model: empty coefficient");
        for (const auto& c : coeffs_) {
            if (c.size() != dim_) fail(ErrorKind::InvalidArgument, "poly model: coefficient dimensions differ");
        }
    }

    std::size_t dim() const override { return dim_; }
    const std::vector<Vec>& coeffs() const noexcept { return coeffs_; }
    int degree() const noexcept { return static_cast<int>(coeffs_.size()) - 1; }

    void noise(std::span<const double>, const TimePoint& tp, std::span<double> out) const override {
        if (!std::isfinite(tp.lambda)) fail(ErrorKind::Domain, "poly model: lambda must be finite");
        // Horner
        std::fill(out.begin(), out.end(), 0.0);
        for (auto it = coeffs_.rbegin(); it != coeffs_.rend(); ++it) {
            for (std::size_t j = 0; j < dim_; ++j) out[j] = out[j] * tp.lambda + (*it)[j];
        }
    }

    Json to_json() const override { return Json{{"model", "poly"}, {"coeffs", coeffs_}}; }

private:
    std::vector<Vec> coeffs_;
    std::size_t dim_ = 0;
};

inline Vec gaussian_noise_predictor(const IsotropicGaussianModel& m, std::span<const double> x, const TimePoint& tp) {
    return m.eval_noise(x, tp);
}

inline Vec mixture_noise_predictor(const GaussianMixtureModel& m, std::span<const double> x, const TimePoint& tp) {
    return m.eval_noise(x, tp);
}

inline Vec poly_noise_predictor(const PolyLambdaModel& m, std::span<const double> x, const TimePoint& tp) {
    return m.eval_noise(x, tp);
}

inline PredictorPtr model_from_json(const Json& j) {
    const std::string ctx = "model";
    if (!j.is_object()) fail(ErrorKind::Config, "model: expected an object");
    const auto kind = required<std::string>(j, "model", ctx);
    if (kind == "gaussian") {
        require_known_keys(j, {"model", "gamma", "dim"}, ctx);
        return std::make_shared<IsotropicGaussianModel>(required<double>(j, "gamma", ctx),
                                                        optional_or<std::size_t>(j, "dim", 4, ctx));
    }
    if (kind == "mixture") {
        require_known_keys(j, {"model", "components"}, ctx);
        std::vector<MixtureComponent> comps;
        for (const auto& c : required<Json>(j, "components", ctx)) {
            require_known_keys(c, {"w", "mean", "s"}, "model.components");
            comps.push_back({required<double>(c, "w", ctx), required<Vec>(c, "mean", ctx), required<double>(c, "s", ctx)});
        }
        return std::make_shared<GaussianMixtureModel>(std::move(comps));
    }
    if (kind == "poly") {
        require_known_keys(j, {"model", "coeffs"}, ctx);
        return std::make_shared<PolyLambdaModel>(required<std::vector<Vec>>(j, "coeffs", ctx));
    }
    fail(ErrorKind::Config, "model: unknown kind \"" + kind + "\"");
}

/// Two equal-weight components at +-(1, 0, ..., 0) with scale 0.5.
inline std::shared_ptr<GaussianMixtureModel> make_two_component_mixture(std::size_t dim = 4, double scale = 0.5) {
    Vec plus(dim, 0.0), minus(dim, 0.0);
    plus[0] = 1.0;
    minus[0] = -1.0;
    return std::make_shared<GaussianMixtureModel>(
        std::vector<MixtureComponent>{{0.5, plus, scale}, {0.5, minus, scale}});
}

}  // namespace odeslab

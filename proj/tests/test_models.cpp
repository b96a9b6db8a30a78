// Copyright (C) 2026 The odeslab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "odeslab/harness.hpp"
#include "odeslab/models.hpp"

using namespace odeslab;

namespace {

Vec random_vec(CounterRng& rng, std::size_t d, double scale = 1.0) {
    Vec v(d);
    for (double& x : v) x = scale * rng.normal();
    return v;
}

// log q_t(x) for a mixture, evaluated directly from the density.
double mixture_log_density(const GaussianMixtureModel& m, const Vec& x, const TimePoint& tp) {
    double total = 0.0;
    const double d = static_cast<double>(x.size());
    for (const auto& c : m.components()) {
        const double v = GaussianMixtureModel::component_variance(c, tp);
        double r2 = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) r2 += (x[j] - tp.alpha * c.mean[j]) * (x[j] - tp.alpha * c.mean[j]);
        total += c.weight * std::pow(2 * M_PI * v, -d / 2) * std::exp(-0.5 * r2 / v);
    }
    return std::log(total);
}

}  // namespace

TEST(Conversions, SigmaZeroReturnsX) {
    const auto tp = NoiseSchedule::ve().at(0.0);
    const Vec x{0.3, -1.2};
    EXPECT_EQ(data_from_noise(x, tp, Vec{5.0, 5.0}), x);
}

TEST(Conversions, VeUnitTimeExample) {
    EXPECT_EQ(data_from_noise(Vec{2.0, 0.0}, 1.0, Vec{1.0, 0.0}, NoiseSchedule::ve()), (Vec{1.0, 0.0}));
}

TEST(Conversions, RoundTrip) {
    CounterRng rng(1);
    const auto s = NoiseSchedule::vp_linear();
    for (int k = 0; k < 100; ++k) {
        const auto tp = s.at(0.01 + 0.98 * rng.uniform());
        const Vec x = random_vec(rng, 3), eps = random_vec(rng, 3);
        const Vec back = noise_from_data(x, tp, data_from_noise(x, tp, eps));
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(back[j], eps[j], 1e-12 * (1 + std::abs(eps[j])));
    }
}

TEST(Gaussian, ZeroGammaIsXOverSigma) {
    const IsotropicGaussianModel m(0.0, 2);
    const auto tp = NoiseSchedule::vp_linear().at(0.4);
    const Vec e = gaussian_noise_predictor(m, Vec{1.0, -2.0}, tp);
    EXPECT_NEAR(e[0], 1.0 / tp.sigma, 1e-14);
    EXPECT_NEAR(e[1], -2.0 / tp.sigma, 1e-14);
}

TEST(Gaussian, LargeGammaVanishes) {
    const IsotropicGaussianModel m(1e8, 2);
    const Vec e = m.eval_noise(Vec{1.0, 1.0}, NoiseSchedule::ve().at(1.0));
    EXPECT_LT(norm2(e), 1e-15);
}

TEST(Gaussian, UnitExample) {
    const IsotropicGaussianModel m(1.0, 4);
    EXPECT_EQ(m.eval_noise(Vec{1, 0, 0, 0}, NoiseSchedule::ve().at(1.0)), (Vec{0.5, 0, 0, 0}));
}

TEST(Gaussian, LambdaFormAndLinearity) {
    CounterRng rng(2);
    const auto s = NoiseSchedule::vp_linear();
    const IsotropicGaussianModel m(0.7, 3);
    for (int k = 0; k < 50; ++k) {
        const auto tp = s.at(0.02 + 0.9 * rng.uniform());
        const Vec x = random_vec(rng, 3), y = random_vec(rng, 3);
        const double a = rng.normal();
        const Vec ex = m.eval_noise(x, tp);
        const double el = std::exp(-tp.lambda);
        for (std::size_t j = 0; j < 3; ++j) {
            EXPECT_NEAR(ex[j], el * x[j] / (tp.alpha * (0.49 + el * el)), 1e-12 * (1 + std::abs(ex[j])));
        }
        Vec comb(3);
        for (std::size_t j = 0; j < 3; ++j) comb[j] = a * x[j] + y[j];
        const Vec ec = m.eval_noise(comb, tp), ey = m.eval_noise(y, tp);
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(ec[j], a * ex[j] + ey[j], 1e-12 * (1 + std::abs(ec[j])));
    }
}

TEST(Gaussian, DegenerateTerminalThrows) {
    const IsotropicGaussianModel m(0.0, 1);
    EXPECT_THROW((void)m.eval_noise(Vec{1.0}, NoiseSchedule::ve().at(0.0)), Error);
}

TEST(Predictor, DataNoiseConsistencyAllModels) {
    CounterRng rng(3);
    const auto s = NoiseSchedule::vp_linear();
    const std::vector<PredictorPtr> models{std::make_shared<IsotropicGaussianModel>(1.3, 4), make_two_component_mixture(),
                                           std::make_shared<PolyLambdaModel>(std::vector<Vec>{Vec(4, 0.2), Vec(4, -0.1)})};
    for (const auto& m : models) {
        for (int k = 0; k < 30; ++k) {
            const auto tp = s.at(0.05 + 0.9 * rng.uniform());
            const Vec x = random_vec(rng, 4);
            const Vec mu = m->eval_data(x, tp), eps = m->eval_noise(x, tp);
            for (std::size_t j = 0; j < 4; ++j) {
                const double expect = (x[j] - tp.sigma * eps[j]) / tp.alpha;
                EXPECT_NEAR(mu[j], expect, 1e-12 * std::max(1.0, std::abs(expect)));
            }
        }
    }
}

TEST(Predictor, DimensionMismatchThrows) {
    const IsotropicGaussianModel m(1.0, 3);
    EXPECT_THROW((void)m.eval_noise(Vec{1.0, 2.0}, NoiseSchedule::ve().at(1.0)), Error);
}

TEST(Mixture, SingleComponentMatchesGaussian) {
    const GaussianMixtureModel mix({{1.0, Vec(3, 0.0), 0.8}});
    const IsotropicGaussianModel g(0.8, 3);
    CounterRng rng(4);
    for (int k = 0; k < 20; ++k) {
        const auto tp = NoiseSchedule::ve().at(0.01 + 5 * rng.uniform());
        const Vec x = random_vec(rng, 3);
        const Vec a = mixture_noise_predictor(mix, x, tp), b = g.eval_noise(x, tp);
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(a[j], b[j], 1e-13 * (1 + std::abs(b[j])));
    }
}

TEST(Mixture, SymmetricAtOriginIsZero) {
    const auto m = make_two_component_mixture(4);
    const Vec e = m->eval_noise(Vec(4, 0.0), NoiseSchedule::ve().at(0.7));
    for (double v : e) EXPECT_EQ(v, 0.0);
}

TEST(Mixture, ThreeComponentsMatchFiniteDifferenceScore) {
    const GaussianMixtureModel m({{0.2, Vec{1.0, 0.5, -0.3}, 0.4}, {0.5, Vec{-0.8, 0.1, 0.9}, 0.7}, {0.3, Vec{0.2, -1.1, 0.0}, 0.3}});
    CounterRng rng(5);
    const auto s = NoiseSchedule::vp_linear();
    for (int k = 0; k < 20; ++k) {
        const auto tp = s.at(0.05 + 0.5 * rng.uniform());
        const Vec x = random_vec(rng, 3);
        const Vec e = m.eval_noise(x, tp);
        for (std::size_t j = 0; j < 3; ++j) {
            const double h = 1e-5;
            Vec xp = x, xm = x;
            xp[j] += h;
            xm[j] -= h;
            const double grad = (mixture_log_density(m, xp, tp) - mixture_log_density(m, xm, tp)) / (2 * h);
            EXPECT_NEAR(e[j], -tp.sigma * grad, 1e-6 * std::max(1.0, std::abs(e[j])));
        }
    }
}

TEST(Mixture, ResponsibilitiesSumToOne) {
    const auto m = make_two_component_mixture(4, 0.3);
    CounterRng rng(6);
    for (int k = 0; k < 100; ++k) {
        const auto tp = NoiseSchedule::ve().at(1e-3 + 3 * rng.uniform());
        const Vec r = m->responsibilities(random_vec(rng, 4, 3.0), tp);
        EXPECT_NEAR(std::accumulate(r.begin(), r.end(), 0.0), 1.0, 1e-14);
    }
}

TEST(Mixture, FarPointsStayFinite) {
    const auto m = make_two_component_mixture(2, 0.1);
    const Vec e = m->eval_noise(Vec{300.0, -200.0}, NoiseSchedule::ve().at(1e-3));
    for (double v : e) EXPECT_TRUE(std::isfinite(v));
}

TEST(Mixture, InvalidWeightsThrow) {
    EXPECT_THROW(GaussianMixtureModel({{0.3, Vec{1.0}, 1.0}, {0.3, Vec{0.0}, 1.0}}), Error);
    EXPECT_THROW(GaussianMixtureModel({{1.0, Vec{1.0}, 0.0}}), Error);
}

TEST(Poly, ConstantEverywhere) {
    const PolyLambdaModel m({Vec{0.4, -0.2}});
    for (double t : {1e-3, 0.5, 7.0}) EXPECT_EQ(poly_noise_predictor(m, Vec{9.0, 9.0}, NoiseSchedule::ve().at(t)), (Vec{0.4, -0.2}));
}

TEST(Poly, LinearAtOriginIsC0) {
    const PolyLambdaModel m({Vec{1.5}, Vec{3.0}});
    EXPECT_EQ(m.eval_noise(Vec{0.0}, NoiseSchedule::ve().at(1.0)), (Vec{1.5}));
}

TEST(Poly, QuadraticAtTwoIsSeven) {
    const PolyLambdaModel m({Vec{1.0, 0.0}, Vec{1.0, 0.0}, Vec{1.0, 0.0}});
    const Vec e = m.eval_noise(Vec{0.0, 0.0}, NoiseSchedule::ve().at(std::exp(-2.0)));
    EXPECT_NEAR(e[0], 7.0, 1e-14);
    EXPECT_EQ(e[1], 0.0);
}

TEST(ModelJson, RoundTripAndUnknownKeys) {
    const auto g = model_from_json(Json{{"model", "gaussian"}, {"gamma", 2.0}, {"dim", 3}});
    EXPECT_EQ(g->dim(), 3u);
    EXPECT_EQ(g->to_json(), (Json{{"model", "gaussian"}, {"gamma", 2.0}, {"dim", 3}}));
    const auto mix = make_two_component_mixture();
    EXPECT_EQ(model_from_json(mix->to_json())->to_json(), mix->to_json());
    const auto p = model_from_json(Json{{"model", "poly"}, {"coeffs", Json::array({Json::array({1.0, 2.0})})}});
    EXPECT_EQ(p->dim(), 2u);
    try {
        (void)model_from_json(Json{{"model", "gaussian"}, {"gamma", 1.0}, {"sigma", 2}});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Config);
    }
    EXPECT_THROW((void)model_from_json(Json{{"model", "laplace"}}), Error);
}

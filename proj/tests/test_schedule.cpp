// Copyright (C) 2026 The odeslab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <gtest/gtest.h>

#include "odeslab/harness.hpp"
#include "odeslab/schedule.hpp"

using namespace odeslab;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// lambda(t) for VP-linear in 113-bit binary floating point.
double vp_lambda_quad(double t_in, double bmin, double bmax) {
    using F = boost::multiprecision::cpp_bin_float_quad;
    const F t = t_in;
    const F la = -F(t * t * (F(bmax) - F(bmin))) / 4 - t * F(bmin) / 2;
    const F a = exp(la);
    const F s = sqrt(1 - a * a);
    return static_cast<double>(la - log(s));
}

double bisect_t(const NoiseSchedule& s, double lam, double lo, double hi) {
    for (int k = 0; k < 200; ++k) {
        const double mid = 0.5 * (lo + hi);
        (s.lambda(mid) > lam ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

TEST(Lambda, VeUnitTimeIsZero) { EXPECT_EQ(lambda_of_t(NoiseSchedule::ve(), 1.0), 0.0); }

TEST(Lambda, VeInverseE) { EXPECT_NEAR(lambda_of_t(NoiseSchedule::ve(), std::exp(-1.0)), 1.0, 1e-15); }

TEST(Lambda, VpLinearHalfMatchesQuadPrecision) {
    const auto s = NoiseSchedule::vp_linear(0.1, 20.0);
    const double expect = -1.2275677344107872734;  // 50-digit evaluation
    EXPECT_LE(rel(s.lambda(0.5), expect), 1e-12);
    EXPECT_LE(rel(s.lambda(0.5), vp_lambda_quad(0.5, 0.1, 20.0)), 1e-12);
    EXPECT_NEAR(s.alpha(0.5), 0.28118288079675237585, 1e-15);
    EXPECT_NEAR(s.sigma(0.5), 0.95965420206803624666, 1e-15);
}

TEST(Lambda, VpLinearAgreesWithQuadPrecisionAcrossDomain) {
    const auto s = NoiseSchedule::vp_linear();
    for (double t : {1e-4, 1e-3, 0.01, 0.1, 0.3, 0.7, 0.95, 1.0}) EXPECT_LE(rel(s.lambda(t), vp_lambda_quad(t, 0.1, 20.0)), 1e-12) << t;
}

TEST(Lambda, SigmaZeroThrowsDomain) {
    try {
        (void)NoiseSchedule::ve().lambda(0.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Domain);
    }
    EXPECT_THROW((void)NoiseSchedule::vp_linear().lambda(0.0), Error);
}

TEST(Lambda, OutsideDomainThrows) {
    EXPECT_THROW((void)NoiseSchedule::ve().lambda(-1.0), Error);
    EXPECT_THROW((void)NoiseSchedule::vp_linear().lambda(1.5), Error);
}

TEST(TOfLambda, VeZeroIsOne) { EXPECT_EQ(t_of_lambda(NoiseSchedule::ve(), 0.0), 1.0); }

TEST(TOfLambda, VpLinearRecoversHalfAgainstBisection) {
    const auto s = NoiseSchedule::vp_linear();
    const double lam = -1.2275677344107872734;
    EXPECT_NEAR(s.t_of_lambda(lam), 0.5, 1e-12);
    EXPECT_NEAR(s.t_of_lambda(lam), bisect_t(s, lam, 1e-6, 1.0), 1e-12);
}

TEST(TOfLambda, RoundTripAndMonotone) {
    CounterRng rng(7);
    for (const auto& s : {NoiseSchedule::ve(), NoiseSchedule::vp_linear(), NoiseSchedule::vp_linear(0.5, 5.0)}) {
        const double tmax = s.kind() == ScheduleKind::VE ? 100.0 : 1.0;
        std::vector<double> ts;
        for (int k = 0; k < 1000; ++k) ts.push_back(tmax * (1e-6 + (1 - 1e-6) * rng.uniform()));
        std::sort(ts.begin(), ts.end());
        for (std::size_t k = 0; k < ts.size(); ++k) {
            const double lam = s.lambda(ts[k]);
            EXPECT_LE(rel(s.t_of_lambda(lam), ts[k]), 1e-12) << ts[k];
            if (k > 0 && ts[k] > ts[k - 1]) {
                EXPECT_LT(lam, s.lambda(ts[k - 1]));
            }
        }
    }
}

TEST(TOfLambda, BelowImageThrowsAndInfinityIsZero) {
    const auto ve = NoiseSchedule::ve(100.0);
    EXPECT_THROW((void)ve.t_of_lambda(-std::log(100.0) - 1.0), Error);
    EXPECT_EQ(ve.t_of_lambda(kInf), 0.0);
    EXPECT_EQ(NoiseSchedule::vp_linear().t_of_lambda(kInf), 0.0);
}

TEST(BuildGrid, UniformLambdaMiddleIsMean) {
    GridConfig g;
    g.M = 2;
    const auto grid = build_grid(NoiseSchedule::ve(), g);
    ASSERT_EQ(grid.steps(), 2);
    EXPECT_NEAR(grid[1].lambda, 0.5 * (grid[0].lambda + grid[2].lambda), 1e-15);
    EXPECT_EQ(grid[0].t, 10.0);
    EXPECT_EQ(grid[2].t, 1e-3);
}

TEST(BuildGrid, SubsamplePaperRule) {
    EXPECT_EQ(subsample_indices(1000, 4), (std::vector<int>{0, 250, 500, 750, 1000}));
}

TEST(BuildGrid, SubsampleRoundingTenThree) { EXPECT_EQ(subsample_indices(10, 3), (std::vector<int>{0, 3, 7, 10})); }

TEST(BuildGrid, SubsampleGridPicksReferencePoints) {
    GridConfig g;
    g.kind = GridKind::SubsampleReference;
    g.M = 3;
    g.M_ref = 10;
    const auto grid = build_grid(NoiseSchedule::ve(), g);
    EXPECT_EQ(grid.reference_indices(), (std::vector<int>{0, 3, 7, 10}));
    GridConfig r = g;
    r.kind = GridKind::UniformTime;
    r.M = 10;
    const auto ref = build_grid(NoiseSchedule::ve(), r);
    for (int i = 0; i <= 3; ++i) EXPECT_EQ(grid[i].t, ref[grid.reference_indices()[static_cast<std::size_t>(i)]].t);
}

TEST(BuildGrid, Errors) {
    GridConfig g;
    g.kind = GridKind::SubsampleReference;
    g.M = 5;
    g.M_ref = 3;
    EXPECT_THROW((void)build_grid(NoiseSchedule::ve(), g), Error);
    GridConfig h;
    h.t_start = 1.0;
    h.t_end = 2.0;
    EXPECT_THROW((void)build_grid(NoiseSchedule::ve(), h), Error);
    h.t_end = 1.0;
    EXPECT_THROW((void)build_grid(NoiseSchedule::ve(), h), Error);
    GridConfig z;
    z.M = 0;
    EXPECT_THROW((void)build_grid(NoiseSchedule::ve(), z), Error);
}

TEST(BuildGrid, TerminalSigmaZeroNeedsTimeSpacing) {
    GridConfig g;
    g.t_end = 0.0;
    EXPECT_THROW((void)build_grid(NoiseSchedule::ve(), g), Error);
    g.kind = GridKind::UniformTime;
    const auto grid = build_grid(NoiseSchedule::ve(), g);
    EXPECT_EQ(grid.back().sigma, 0.0);
    EXPECT_TRUE(std::isinf(grid.back().lambda));
    EXPECT_TRUE(validate_grid(grid).ok);
}

TEST(ValidateGrid, BuiltGridsAreValid) {
    for (auto kind : {GridKind::UniformLambda, GridKind::UniformTime, GridKind::SubsampleReference}) {
        for (const auto& s : {NoiseSchedule::ve(), NoiseSchedule::vp_linear()}) {
            GridConfig g;
            g.kind = kind;
            g.M = 17;
            g.M_ref = 200;
            if (s.kind() == ScheduleKind::VPLinear) g.t_start = 1.0;
            const auto v = validate_grid(build_grid(s, g));
            EXPECT_TRUE(v.ok) << v.violation;
        }
    }
}

TEST(ValidateGrid, SwappedPointsFailAtTwo) {
    GridConfig g;
    g.kind = GridKind::UniformTime;
    g.M = 4;
    auto pts = build_grid(NoiseSchedule::ve(), g).points();
    std::swap(pts[1], pts[2]);
    const auto v = validate_grid(TimeGrid(pts));
    EXPECT_FALSE(v.ok);
    EXPECT_EQ(v.index, 2);
}

TEST(ValidateGrid, MaxDeltaVeTenSteps) {
    GridConfig g;
    g.M = 10;
    const auto v = validate_grid(build_grid(NoiseSchedule::ve(), g));
    ASSERT_TRUE(v.ok);
    EXPECT_NEAR(v.max_delta, 0.92103403719761827361, 1e-14);
}

TEST(ValidateGrid, UniformLambdaDeltasEqualAndHalveWithDoubling) {
    for (const auto& s : {NoiseSchedule::ve(), NoiseSchedule::vp_linear()}) {
        GridConfig g;
        if (s.kind() == ScheduleKind::VPLinear) g.t_start = 1.0;
        double prev = 0.0;
        for (int M : {10, 20, 40, 80}) {
            g.M = M;
            const auto grid = build_grid(s, g);
            for (int i = 1; i <= M; ++i) EXPECT_NEAR(grid.delta(i), grid.delta(1), 1e-14);
            if (prev > 0.0) {
                EXPECT_NEAR(grid.max_delta(), prev / 2, 1e-14);
            }
            prev = grid.max_delta();
        }
    }
}

TEST(ScheduleJson, RoundTrip) {
    const auto vp = NoiseSchedule::vp_linear(0.2, 15.0);
    EXPECT_EQ(schedule_from_json(schedule_to_json(vp)), vp);
    const auto ve = NoiseSchedule::ve();
    EXPECT_EQ(schedule_from_json(schedule_to_json(ve)), ve);
    GridConfig g;
    g.kind = GridKind::SubsampleReference;
    g.M = 7;
    g.M_ref = 70;
    const auto back = grid_config_from_json(grid_config_to_json(g));
    EXPECT_EQ(back.kind, g.kind);
    EXPECT_EQ(back.M, 7);
    EXPECT_EQ(back.M_ref, 70);
    EXPECT_EQ(back.t_start, g.t_start);
    EXPECT_EQ(back.t_end, g.t_end);
}

TEST(ScheduleJson, UnknownKeyRejected) {
    EXPECT_THROW((void)schedule_from_json(Json{{"kind", "VE"}, {"beta", 1}}), Error);
    EXPECT_THROW((void)grid_config_from_json(Json{{"kind", "uniform-lambda"}, {"t_start", 1}, {"t_end", 0.1}, {"foo", 1}}), Error);
}

TEST(ScheduleJson, GridPointsPrintSeventeenDigits) {
    GridConfig g;
    g.M = 3;
    const auto text = dump_json(grid_points_to_json(build_grid(NoiseSchedule::ve(), g)));
    EXPECT_NE(text.find("-2.3025850929940459"), std::string::npos) << text;
}

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "svcgfl/model.hpp"

using namespace svcgfl;

namespace {

SvcDataset tiny() {
    SvcDataset d;
    d.graph = topology::path(2);
    d.sigma2 = 2.0;
    d.observations = {{1.0, Vec::Constant(2, 1.0), 0}, {2.0, (Vec(2) << 1.0, -1.0).finished(), 1},
                      {0.5, (Vec(2) << 0.5, 2.0).finished(), 1}};
    return d;
}

}  // namespace

TEST(Model, ExpandDesignIsKronecker) {
    SvcObservation o{0.0, (Vec(2) << 3.0, 4.0).finished(), 1};
    const Vec x = expand_design(o, 3);
    EXPECT_EQ(x, (Vec(6) << 0, 0, 3, 4, 0, 0).finished());
}

TEST(Model, ValidateCatchesBadInputs) {
    auto d = tiny();
    EXPECT_NO_THROW(validate(d));
    d.observations[1].psi = 2;
    EXPECT_THROW(validate(d), DataError);
    d = tiny();
    d.observations[0].y = NAN;
    EXPECT_THROW(validate(d), DataError);
    d = tiny();
    d.observations[0].x_tilde = Vec::Ones(3);
    EXPECT_THROW(validate(d), DataError);
    d = tiny();
    d.observations.clear();
    EXPECT_THROW(validate(d), DataError);
}

TEST(Model, LoglikGradientMatchesFiniteDifferences) {
    const auto d = tiny();
    Vec xi(4);
    xi << 0.3, -0.2, 1.1, 0.4;
    const Vec g = loglik_grad(d, xi);
    for (int k = 0; k < 4; ++k) {
        Vec a = xi, b = xi;
        a[k] += 1e-6;
        b[k] -= 1e-6;
        EXPECT_NEAR(g[k], (loglik(d, a) - loglik(d, b)) / 2e-6, 1e-6);
    }
    // Hessian is constant.
    const Mat H = loglik_hess(d);
    Vec e = Vec::Zero(4);
    e[2] = 1e-4;
    EXPECT_NEAR(((loglik_grad(d, xi + e) - g) / 1e-4 - H.col(2)).norm(), 0.0, 1e-8);
}

TEST(Model, LogDensityAtMean) {
    EXPECT_NEAR(log_normal_density(1.0, 1.0, 1.0), -0.5 * std::log(2.0 * std::numbers::pi), 1e-15);
}

TEST(Model, MomentsMatchExpandedDesign) {
    const auto d = tiny();
    const auto m = design_moments(d);
    Mat xtx = Mat::Zero(4, 4);
    for (const auto& o : d.observations) {
        const Vec x = expand_design(o, 2);
        xtx += x * x.transpose();
    }
    EXPECT_NEAR((m.xtx - xtx).norm(), 0.0, 1e-14);
    EXPECT_NEAR(m.yty, 1.0 + 4.0 + 0.25, 1e-14);
}

TEST(Model, SigmaEstimateAndFloor) {
    auto d = tiny();
    const Vec xi = Vec::Zero(4);
    EXPECT_NEAR(estimate_sigma2(d, xi, 1), (1.0 + 4.0 + 0.25) / 2.0, 1e-14);
    EXPECT_NEAR(estimate_sigma2(d, xi, 10), 5.25, 1e-14);  // denominator floored at 1
    // A perfect fit gives a raw zero and the floored 1e-8.
    SvcDataset p;
    p.graph = topology::path(1);
    p.sigma2 = 1.0;
    p.observations = {{2.0, Vec::Ones(1), 0}, {2.0, Vec::Ones(1), 0}};
    EXPECT_EQ(estimate_sigma2(p, Vec::Constant(1, 2.0), 1), 0.0);
    EXPECT_EQ(resolve_sigma2(p, Vec::Constant(1, 2.0), 1), kSigma2Floor);
    d.sigma2.reset();
    EXPECT_THROW(d.resolved_sigma2(), UsageError);
}

TEST(Generators, CaseOneTrueCoefficients) {
    Rng rng(1);
    const auto cd = case_design(1, 1, 1.0, rng);
    EXPECT_EQ(cd.n, 20u);
    // theta by region m and variable j at m * 3 + j.
    const double expect[3][3] = {{1, 2, 3}, {1, -2, -3}, {1, -3.5, 1.5}};
    for (int m = 0; m < 3; ++m)
        for (int j = 0; j < 3; ++j) EXPECT_EQ(cd.model.theta[m * 3 + j], expect[m][j]);
    const auto cd2 = case_design(1, 2, 1.0, rng);
    EXPECT_EQ(cd2.n, 35u);
    EXPECT_NEAR(cd2.model.p_psi[1], 1.0 / 6, 1e-15);
}

TEST(Generators, AllCasesBuild) {
    for (int c = 1; c <= 8; ++c)
        for (int s = 1; s <= 2; ++s) {
            Rng rng(derive_seed(3, {static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(s)}));
            const auto cd = case_design(c, s, 1.5, rng);
            EXPECT_EQ(cd.model.theta.size(), cd.model.graph.m_regions() * 3);
            double total = 0.0;
            for (double v : cd.model.p_psi) total += v;
            EXPECT_NEAR(total, 1.0, 1e-12);
        }
    Rng rng(1);
    EXPECT_THROW(case_design(1, 3, 1.0, rng), UsageError);
    EXPECT_THROW(case_design(0, 1, 1.0, rng), UsageError);
}

TEST(Generators, GroupedSettingTwoIsPiecewiseConstant) {
    Rng rng(9);
    const auto cd = case_design(8, 2, 1.0, rng);
    // Variable 1 in Case 8 / Setting 2 has four groups of nine regions.
    for (int g = 0; g < 4; ++g)
        for (int r = 1; r < 9; ++r) EXPECT_EQ(cd.model.theta[(g * 9 + r) * 3], cd.model.theta[(g * 9) * 3]);
}

TEST(Generators, DeterministicGivenSeed) {
    const auto [a, ta] = generate_case(2, 1, 1.0, 42);
    const auto [b, tb] = generate_case(2, 1, 1.0, 42);
    ASSERT_EQ(a.n(), b.n());
    for (std::size_t i = 0; i < a.n(); ++i) {
        EXPECT_EQ(a.observations[i].y, b.observations[i].y);
        EXPECT_EQ(a.observations[i].psi, b.observations[i].psi);
    }
    const auto [c, tc] = generate_case(2, 1, 1.0, 43);
    EXPECT_NE(a.observations[0].y, c.observations[0].y);
}

TEST(Generators, SampleMomentsMatchDesign) {
    Rng rng(5);
    const auto cd = case_design(1, 2, 1.0, rng);
    Rng r2(6);
    const auto d = sample_dataset(cd.model, 100000, r2);
    std::vector<double> freq(3, 0.0);
    double xx = 0.0;
    for (const auto& o : d.observations) {
        freq[o.psi] += 1.0;
        xx += o.x_tilde[0] * o.x_tilde[0];
    }
    for (int m = 0; m < 3; ++m) EXPECT_NEAR(freq[m] / 1e5, cd.model.p_psi[m], 0.01);
    EXPECT_NEAR(xx / 1e5, 5.0, 0.1);
    const Mat J = cd.model.second_moment();
    EXPECT_NEAR(J(3, 3), 5.0 / 6, 1e-12);
}

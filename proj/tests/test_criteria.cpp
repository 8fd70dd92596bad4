#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "instances.hpp"
#include "svcgfl/criteria.hpp"

using namespace svcgfl;

namespace {

/// One observation y = 0 at region 0 with x = 1 and sigma2 chosen so the two
/// draws give log densities -1 and -3.
struct HandCase {
    SvcDataset data;
    PosteriorDraws draws;
};

HandCase hand_case() {
    HandCase h;
    h.data.graph = topology::path(1);
    h.data.sigma2 = 1.0;
    h.data.observations = {{0.0, Vec::Ones(1), 0}};
    // log f = c - mu^2 / 2 with c = -log(2 pi)/2; pick mu so log f = -1, -3.
    const double c = -0.5 * std::log(2.0 * std::numbers::pi);
    h.draws.sigma2 = 1.0;
    h.draws.draws.resize(2, 1);
    h.draws.draws(0, 0) = std::sqrt(2.0 * (c + 1.0));
    h.draws.draws(1, 0) = std::sqrt(2.0 * (c + 3.0));
    return h;
}

GflSolution solution_with_blocks(std::size_t j3) {
    GflSolution s;
    s.j3_count = j3;
    return s;
}

}  // namespace

TEST(Waic, HandCase) {
    const auto h = hand_case();
    const auto r = make_report(h.draws, h.data, solution_with_blocks(0));
    const double nlp = -std::log((std::exp(-1.0) + std::exp(-3.0)) / 2.0);
    EXPECT_NEAR(r.neg_log_pred_sum, nlp, 1e-12);
    EXPECT_NEAR(nlp, 1.566219, 1e-6);
    EXPECT_NEAR(r.waic_penalty, 1.0, 1e-12);
    EXPECT_NEAR(r.waic, 2.566219, 1e-6);
    EXPECT_NEAR(waic(h.draws, h.data), r.waic, 1e-15);
}

TEST(Waic, DegeneratePosteriorHasZeroPenalty) {
    Rng rng(1);
    const auto d = inst::random_dataset(3, 2, 20, rng);
    const Vec xi = Vec::Constant(d.p(), 0.3);
    const auto pd = plugin_draws(xi, 1.0);
    const auto r = make_report(pd, d, solution_with_blocks(4));
    EXPECT_EQ(r.waic_penalty, 0.0);
    EXPECT_NEAR(r.waic, -loglik(d, xi), 1e-10);
    EXPECT_TRUE(r.diagnostics.plug_in_predictive);
}

TEST(Waic, DuplicatedDrawsAndReorderingAreInvariant) {
    Rng rng(2);
    auto d = inst::random_dataset(3, 2, 20, rng);
    PosteriorControls c;
    c.burn_in = 50;
    c.keep = 200;
    c.thin = 1;
    const auto draws = gibbs_sample(d, IntensifiedPrior{PenaltyWeights::tied(2, 0.0, 0.1)}, c);
    PosteriorDraws twice = draws;
    twice.draws.resize(400, d.p());
    twice.draws << draws.draws, draws.draws;
    EXPECT_NEAR(waic(twice, d), waic(draws, d), 1e-9);
    const double before = waic(draws, d);
    std::reverse(d.observations.begin(), d.observations.end());
    EXPECT_NEAR(waic(draws, d), before, 1e-9);
}

TEST(Piic1, IdentitiesWithWaic) {
    const auto h = hand_case();
    EXPECT_NEAR(piic1(h.draws, h.data, solution_with_blocks(0)), -std::log((std::exp(-1.0) + std::exp(-3.0)) / 2.0),
                1e-12);
    const auto r = make_report(h.draws, h.data, solution_with_blocks(6));
    EXPECT_NEAR(r.piic1 - r.waic, 6.0 - r.waic_penalty, 1e-12);
    EXPECT_EQ(r.piic1, r.neg_log_pred_sum + 6.0);
}

TEST(Trace, InjectedMatrices) {
    Mat j(3, 3);
    j << 2, 0.5, 0, 0.5, 1, 0.1, 0, 0.1, 3;
    auto [tr, eps] = curvature_trace(j, j);
    EXPECT_NEAR(tr, 3.0, 1e-12);
    EXPECT_EQ(eps, 0.0);
    auto [t1, e1] = curvature_trace(Mat::Constant(1, 1, 2.0), Mat::Constant(1, 1, 0.5));
    EXPECT_NEAR(t1, 0.25, 1e-15);
    EXPECT_EQ(e1, 0.0);
}

TEST(Trace, SingularJ1GetsMinimalRidge) {
    Mat j1 = Mat::Zero(2, 2);
    j1(0, 0) = 4.0;
    const Mat j2 = Mat::Identity(2, 2);
    auto [tr, eps] = curvature_trace(j1, j2);
    EXPECT_NEAR(eps, 4e-8, 1e-20);
    EXPECT_TRUE(std::isfinite(tr));
    auto [t0, e0] = curvature_trace(Mat::Zero(1, 1), Mat::Zero(1, 1));
    EXPECT_EQ(e0, 1e-8);
    EXPECT_EQ(t0, 0.0);
}

TEST(Stencil, PolynomialSelfTest) {
    // f_i(l) = a_i l + b_i l^2 / 2: derivative a_i + b_i l, second derivative b_i.
    const Vec a = (Vec(4) << 0.3, -1.2, 2.0, 0.7).finished();
    const Vec b = (Vec(4) << -0.5, 1.5, 0.25, -2.0).finished();
    PointwiseFn fn = [&](const Vec& l) { return Vec(a * l[0] + b * (l[0] * l[0] / 2.0)); };
    const double l0 = 0.8;
    for (auto scale : {StencilScale::log, StencilScale::linear}) {
        const auto d = stencil_derivatives(fn, Vec::Constant(1, l0), 1e-3, scale);
        for (int i = 0; i < 4; ++i) {
            // Recover a_i from the gradient using the known second derivative.
            EXPECT_NEAR(d.grad(i, 0) - b[i] * l0, a[i], 1e-4);
        }
        EXPECT_NEAR(d.mean_hess(0, 0), b.mean(), 1e-4);
    }
}

TEST(Stencil, TwoDimensionalCrossTerm) {
    // f_i(l) = c_i l1 l2 + l1^2: Hessian [[2, c], [c, 0]].
    const Vec c = (Vec(3) << 1.0, -2.0, 0.5).finished();
    PointwiseFn fn = [&](const Vec& l) { return Vec((c * l[0] * l[1]).array() + l[0] * l[0]); };
    const auto d = stencil_derivatives(fn, (Vec(2) << 0.4, 1.3).finished(), 1e-3);
    EXPECT_NEAR(d.mean_hess(0, 1), c.mean(), 1e-5);
    EXPECT_NEAR(d.mean_hess(0, 0), 2.0, 1e-5);
    EXPECT_NEAR(d.mean_hess(1, 1), 0.0, 1e-5);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(d.grad(i, 1), c[i] * 0.4, 1e-6);
}

TEST(Stencil, TraceInvariantToParameterization) {
    const Vec a = (Vec(5) << 0.3, -1.2, 2.0, 0.7, 0.1).finished();
    const Vec b = (Vec(5) << 1.0, 0.4, 0.2, 0.9, 1.6).finished();
    PointwiseFn fn = [&](const Vec& l) {
        return Vec((a * std::log(l[0]) - b * l[0] * l[0] - b * l[1] * l[1]).array() + a.array() * l[0] * l[1]);
    };
    const Vec l0 = (Vec(2) << 0.7, 0.4).finished();
    const auto cl = curvature_from_derivatives(stencil_derivatives(fn, l0, 1e-3, StencilScale::log), 1e-3);
    const auto cn = curvature_from_derivatives(stencil_derivatives(fn, l0, 1e-3, StencilScale::linear), 1e-3);
    EXPECT_NEAR(cl.trace_term, cn.trace_term, 1e-3);
    EXPECT_NEAR((cl.j1_hat - cl.j1_hat.transpose()).norm(), 0.0, 1e-15);
    const Eigen::SelfAdjointEigenSolver<Mat> es(cl.j2_hat);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
}

TEST(Stencil, RejectsNonPositiveLambda) {
    PointwiseFn fn = [](const Vec& l) { return l; };
    EXPECT_THROW(stencil_derivatives(fn, Vec::Zero(1), 1e-3), UsageError);
}

TEST(Piic2, AddsTraceTerm) {
    const auto h = hand_case();
    auto r = make_report(h.draws, h.data, solution_with_blocks(2));
    HyperCurvature c;
    c.trace_term = 0.0;
    EXPECT_EQ(piic2(r, c), r.piic1);
    c.trace_term = 0.25;
    attach_curvature(r, c);
    EXPECT_EQ(*r.piic2, r.piic1 + 0.25);
    EXPECT_EQ(*r.trace_term, 0.25);
}

TEST(Piic2, FittedModelTwoCurvatureIsPositive) {
    auto [d, truth] = generate_case(1, 1, 1.0, 5);
    const auto fd = make_fit_data(d);
    const auto w = PenaltyWeights::free({0, 0, 0}, {0.05, 0.08, 0.03});
    const auto coords = model_coordinates(2, 3, false);
    const auto c = hyper_curvature(w, coords, plugin_refit(fd, d, {}));
    ASSERT_EQ(c.j1_hat.rows(), 3);
    const Eigen::SelfAdjointEigenSolver<Mat> e2(c.j2_hat), e1(c.j1_hat);
    EXPECT_GE(e2.eigenvalues().minCoeff(), -1e-10);
    if (e1.eigenvalues().minCoeff() > 0.0 && c.j2_hat.norm() > 0.0) EXPECT_GT(c.trace_term, 0.0);
}

TEST(Coordinates, CountsPerModel) {
    EXPECT_EQ(model_coordinates(1, 3, false).size(), 1u);
    EXPECT_EQ(model_coordinates(1, 3, true).size(), 2u);
    EXPECT_EQ(model_coordinates(2, 3, false).size(), 3u);
    EXPECT_EQ(model_coordinates(2, 3, true).size(), 6u);
    EXPECT_EQ(model_coordinates(2, 3, true, 2).size(), 5u);
}

TEST(Risk, TrueDensityGivesConditionalEntropy) {
    Rng rng(9);
    Rng trng(10);
    auto cd = case_design(1, 1, 1.0, rng);
    const auto test = sample_dataset(cd.model, 100000, trng);
    const auto truth = plugin_draws(cd.model.theta, 1.0);
    const double risk = empirical_risk(truth, test);
    const double entropy = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
    EXPECT_NEAR(entropy, 1.41894, 1e-5);
    EXPECT_NEAR(risk, entropy, 4.0 * std::sqrt(0.5 / 100000.0));
    Vec worse = cd.model.theta;
    worse[0] += 0.3;
    EXPECT_GT(empirical_risk(plugin_draws(worse, 1.0), test), risk);
    SvcDataset empty;
    EXPECT_THROW(empirical_risk(truth, empty), UsageError);
}

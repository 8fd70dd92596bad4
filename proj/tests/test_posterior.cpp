#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "instances.hpp"
#include "oracles.hpp"
#include "svcgfl/posterior.hpp"

using namespace svcgfl;

TEST(Rng, InverseGaussianMoments) {
    Rng rng(1);
    const double mu = 1.5, lam = 4.0;
    double s = 0.0, ss = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.inverse_gaussian(mu, lam);
        s += x;
        ss += x * x;
    }
    const double mean = s / n, var = ss / n - mean * mean;
    EXPECT_NEAR(mean, mu, 0.01);
    EXPECT_NEAR(var, mu * mu * mu / lam, 0.03);
}

TEST(Ess, IidAndAutocorrelatedChains) {
    Rng rng(2);
    const int n = 20000;
    Vec iid(n), ar(n);
    double prev = 0.0;
    for (int i = 0; i < n; ++i) {
        iid[i] = rng.normal();
        prev = 0.8 * prev + rng.normal();
        ar[i] = prev;
    }
    EXPECT_NEAR(effective_sample_size(iid) / n, 1.0, 0.1);
    // AR(1): n (1 - rho) / (1 + rho) = n / 9.
    EXPECT_NEAR(effective_sample_size(ar) / (n / 9.0), 1.0, 0.2);
}

TEST(Gibbs, FlatPriorMatchesGaussianPosterior) {
    Rng rng(3);
    const auto d = inst::random_dataset(3, 2, 30, rng);
    const auto [mean, cov] = oracle::gaussian_posterior(d, 1.0);
    PosteriorControls c;
    c.burn_in = 200;
    c.keep = 20000;
    c.thin = 1;
    c.seed = 4;
    const auto draws = gibbs_sample(d, IntensifiedPrior{PenaltyWeights::tied(2, 0.0, 0.0)}, c);
    ASSERT_EQ(draws.size(), 20000);
    const Vec m = draws.draws.colwise().mean().transpose();
    const Mat centered = draws.draws.rowwise() - m.transpose();
    const Mat s = centered.transpose() * centered / static_cast<double>(draws.size() - 1);
    for (int k = 0; k < d.p(); ++k) {
        const double se = std::sqrt(cov(k, k) / draws.size());
        EXPECT_LE(std::abs(m[k] - mean[k]), 3.0 * se) << "coefficient " << k;
        EXPECT_NEAR(s(k, k) / cov(k, k), 1.0, 0.1);
    }
}

namespace {

/// Posterior mean of xi under exp(-(n/2)(xi - ybar)^2 - c|xi|) by quadrature.
double laplace_mean(double ybar, double n, double c) {
    double num = 0.0, den = 0.0;
    for (double x = -10.0; x <= 10.0; x += 1e-4) {
        const double w = std::exp(-0.5 * n * (x - ybar) * (x - ybar) - c * std::abs(x));
        num += x * w;
        den += w;
    }
    return num / den;
}

}  // namespace

TEST(Gibbs, LaplacePriorMatchesQuadrature) {
    // One region, x = 1: likelihood N(ybar, 1/n).
    SvcDataset d;
    d.graph = topology::path(1);
    d.sigma2 = 1.0;
    for (double y : {0.3, 0.1, 0.5, -0.1}) d.observations.push_back({y, Vec::Ones(1), 0});
    const double ybar = 0.2, n = 4.0;
    PosteriorControls c;
    c.burn_in = 1000;
    c.keep = 60000;
    c.thin = 1;
    for (bool intensified : {true, false}) {
        const double lam = 0.15;
        const auto draws = gibbs_sample(d, IntensifiedPrior{PenaltyWeights::tied(1, lam, 0.0), intensified}, c);
        const double rate = intensified ? n * lam : lam;
        const double expect = laplace_mean(ybar, n, rate);
        const double se = std::sqrt(1.0 / n / effective_sample_size(draws.draws.col(0)));
        EXPECT_NEAR(draws.draws.col(0).mean(), expect, 4.0 * se) << "intensified " << intensified;
    }
}

TEST(Gibbs, FusionPriorShrinksDifference) {
    SvcDataset d;
    d.graph = topology::path(2);
    d.sigma2 = 1.0;
    for (int i = 0; i < 10; ++i) {
        d.observations.push_back({1.0, Vec::Ones(1), 0});
        d.observations.push_back({1.4, Vec::Ones(1), 1});
    }
    PosteriorControls c;
    c.burn_in = 500;
    c.keep = 20000;
    c.thin = 1;
    const auto flat = gibbs_sample(d, IntensifiedPrior{PenaltyWeights::tied(1, 0.0, 0.0)}, c);
    const auto fused = gibbs_sample(d, IntensifiedPrior{PenaltyWeights::tied(1, 0.0, 0.5)}, c);
    const double diff_flat = (flat.draws.col(1) - flat.draws.col(0)).mean();
    const double diff_fused = (fused.draws.col(1) - fused.draws.col(0)).mean();
    EXPECT_NEAR(diff_flat, 0.4, 0.02);
    EXPECT_LT(std::abs(diff_fused), 0.5 * diff_flat);
}

TEST(Gibbs, DeterministicGivenSeedAndThinning) {
    Rng rng(5);
    const auto d = inst::random_dataset(3, 1, 15, rng);
    PosteriorControls c;
    c.burn_in = 10;
    c.keep = 50;
    c.thin = 3;
    c.seed = 77;
    const IntensifiedPrior prior{PenaltyWeights::tied(1, 0.1, 0.1)};
    const auto a = gibbs_sample(d, prior, c);
    const auto b = gibbs_sample(d, prior, c);
    EXPECT_EQ(a.draws, b.draws);
    EXPECT_EQ(a.size(), 50);
    c.seed = 78;
    EXPECT_NE(gibbs_sample(d, prior, c).draws, a.draws);
    c.keep = 0;
    EXPECT_THROW(gibbs_sample(d, prior, c), UsageError);
}

TEST(Predictive, LogMeanExpAndMoments) {
    Vec l(2);
    l << -1.0, -3.0;
    EXPECT_NEAR(log_mean_exp(l), std::log((std::exp(-1.0) + std::exp(-3.0)) / 2.0), 1e-15);
    const auto m = moments_of(l);
    EXPECT_NEAR(m.mean_logf, -2.0, 1e-15);
    EXPECT_NEAR(m.var_logf, 1.0, 1e-15);
    EXPECT_NEAR(m.mean_logf_sq - m.mean_logf * m.mean_logf, m.var_logf, 1e-12);
    Vec big = Vec::Constant(3, -1e4);
    EXPECT_NEAR(log_mean_exp(big), -1e4, 1e-9);
}

TEST(Predictive, PluginDrawsGiveConditionalDensity) {
    const auto pd = plugin_draws(Vec::Constant(2, 0.5), 2.0);
    SvcObservation o{1.0, Vec::Ones(1), 1};
    EXPECT_NEAR(log_predictive(pd, o), log_normal_density(1.0, 0.5, 2.0), 1e-15);
    EXPECT_EQ(predictive_moments(pd, o).var_logf, 0.0);
}

TEST(DrawDump, RoundTrip) {
    PosteriorDraws d;
    d.draws = Mat::Random(7, 3);
    d.seed = 99;
    const auto path = (std::filesystem::temp_directory_path() / "svcgfl_draws_test.bin").string();
    write_draws(path, d);
    const auto r = read_draws(path, 1.5);
    EXPECT_EQ(r.draws, d.draws);
    EXPECT_EQ(r.seed, 99u);
    EXPECT_EQ(r.sigma2, 1.5);
    std::remove(path.c_str());
    EXPECT_THROW(read_draws(path, 1.0), DataError);
}

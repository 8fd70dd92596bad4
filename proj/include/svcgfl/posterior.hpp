#pragma once

// Posterior sampling under the generalized fused lasso prior
//
//   pi(xi; lambda) ∝ exp(-c sum_j lambda1_j |xi_j| - c sum_E lambda2_j |xi_a - xi_b|)
//
// with c = n (intensified prior) or c = 1 (the 1/n-tempered variant). Every
// Laplace factor is written as a Gaussian scale mixture with its own latent
// variance, which makes the full conditional of xi Gaussian and each inverse
// latent variance inverse-Gaussian.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "svcgfl/errors.hpp"
#include "svcgfl/model.hpp"
#include "svcgfl/random.hpp"
#include "svcgfl/solver.hpp"

namespace svcgfl {

struct IntensifiedPrior {
    PenaltyWeights weights;
    bool intensified = true;
};

struct PosteriorControls {
    int burn_in = 2000;
    int keep = 5000;
    int thin = 2;
    std::uint64_t seed = 1;
    bool compute_ess = true;
};

struct PosteriorDraws {
    Mat draws;  ///< S x p
    int burn_in = 0;
    int thin = 1;
    std::uint64_t seed = 0;
    double sigma2 = 1.0;
    Vec ess;                               ///< per coefficient; empty if not computed
    std::size_t degenerate_resamples = 0;  ///< latent scales redrawn from their prior
    bool plug_in = false;                  ///< single point mass at a fitted estimate

    Eigen::Index size() const { return draws.rows(); }
};

/// Geyer initial-positive-sequence effective sample size for one chain.
inline double effective_sample_size(const Eigen::Ref<const Vec>& chain) {
    const auto s = chain.size();
    if (s < 4) return static_cast<double>(s);
    const double mean = chain.mean();
    const Vec c = chain.array() - mean;
    const double c0 = c.squaredNorm() / static_cast<double>(s);
    if (c0 <= 0.0) return static_cast<double>(s);
    auto rho = [&](Eigen::Index lag) {
        return c.head(s - lag).dot(c.tail(s - lag)) / (static_cast<double>(s) * c0);
    };
    double sum = 0.0;
    for (Eigen::Index k = 0; 2 * k + 1 < s; ++k) {
        const double pair = (k == 0 ? 1.0 : rho(2 * k)) + rho(2 * k + 1);
        if (pair <= 0.0) break;
        sum += pair;
    }
    const double tau = std::max(2.0 * sum - 1.0, 1e-12);
    return std::min(static_cast<double>(s), static_cast<double>(s) / tau);
}

inline PosteriorDraws gibbs_sample(const FitData& fd, const IntensifiedPrior& prior, const PosteriorControls& ctl) {
    if (ctl.keep < 1 || ctl.thin < 1 || ctl.burn_in < 0) throw UsageError("posterior controls must be positive");
    prior.weights.validate(fd.graph.p_tilde());
    const int p = fd.p();
    const double n = static_cast<double>(fd.n());
    const Mat H = fd.moments.xtx / fd.sigma2;
    const Vec b = fd.moments.xty / fd.sigma2;
    const auto rows = penalty_rows(fd, prior.weights);
    const std::size_t m = rows.size();
    std::vector<double> rate(m);  // Laplace rate of each factor
    for (std::size_t k = 0; k < m; ++k) rate[k] = (prior.intensified ? n : 1.0) * rows[k].weight;

    Rng rng(ctl.seed);
    std::vector<double> inv_tau(m);
    for (std::size_t k = 0; k < m; ++k) inv_tau[k] = rate[k] * rate[k] / 2.0;

    PosteriorDraws out;
    out.burn_in = ctl.burn_in;
    out.thin = ctl.thin;
    out.seed = ctl.seed;
    out.sigma2 = fd.sigma2;
    out.draws.resize(ctl.keep, p);

    Mat Q(p, p);
    Vec z(p), xi(p);
    Eigen::LLT<Mat> llt(p);
    const long total = static_cast<long>(ctl.burn_in) + static_cast<long>(ctl.keep) * ctl.thin;
    Eigen::Index kept = 0;
    for (long sweep = 0; sweep < total; ++sweep) {
        Q = H;
        for (std::size_t k = 0; k < m; ++k) {
            const auto& r = rows[k];
            const double w = inv_tau[k];
            Q(r.a, r.a) += w;
            if (r.kind == PenaltyRow::Kind::fusion) {
                Q(r.b, r.b) += w;
                Q(r.a, r.b) -= w;
                Q(r.b, r.a) -= w;
            }
        }
        llt.compute(Q);
        if (llt.info() != Eigen::Success)
            throw NumericalError("posterior precision is not positive definite (improper posterior?)");
        for (int i = 0; i < p; ++i) z[i] = rng.normal();
        xi = llt.solve(b);
        xi += llt.matrixU().solve(z);
        if (!xi.allFinite()) throw NumericalError("sampler produced non-finite draw");

        for (std::size_t k = 0; k < m; ++k) {
            const double t = std::abs(rows[k].apply(xi));
            if (t < 1e-12) {
                inv_tau[k] = 1.0 / rng.exponential(rate[k] * rate[k] / 2.0);
                ++out.degenerate_resamples;
            } else {
                inv_tau[k] = rng.inverse_gaussian(rate[k] / t, rate[k] * rate[k]);
            }
        }
        if (sweep >= ctl.burn_in && (sweep - ctl.burn_in) % ctl.thin == 0) out.draws.row(kept++) = xi.transpose();
    }
    if (ctl.compute_ess) {
        out.ess.resize(p);
        for (int j = 0; j < p; ++j) out.ess[j] = effective_sample_size(out.draws.col(j));
    }
    return out;
}

inline PosteriorDraws gibbs_sample(const SvcDataset& d, const IntensifiedPrior& prior, const PosteriorControls& ctl) {
    return gibbs_sample(*make_fit_data(d), prior, ctl);
}

/// Point mass at a fitted estimate: the plug-in predictive.
inline PosteriorDraws plugin_draws(const Vec& xi, double sigma2) {
    PosteriorDraws d;
    d.draws = xi.transpose();
    d.sigma2 = sigma2;
    d.plug_in = true;
    return d;
}

/// log f(y | x, xi_s) for every draw s.
inline Vec draw_log_densities(const PosteriorDraws& draws, const SvcObservation& point) {
    const auto pt = point.x_tilde.size();
    const Vec mean = draws.draws.middleCols(point.psi * pt, pt) * point.x_tilde;
    const double c = -0.5 * std::log(2.0 * std::numbers::pi * draws.sigma2);
    return (c - (point.y - mean.array()).square() / (2.0 * draws.sigma2)).matrix();
}

inline double log_mean_exp(const Vec& l) {
    const double mx = l.maxCoeff();
    if (!std::isfinite(mx)) return mx;
    return mx + std::log((l.array() - mx).exp().sum()) - std::log(static_cast<double>(l.size()));
}

/// log of the posterior-averaged conditional density.
inline double log_predictive(const PosteriorDraws& draws, const SvcObservation& point) {
    if (draws.size() < 1) throw UsageError("no posterior draws");
    return log_mean_exp(draw_log_densities(draws, point));
}

struct PredictiveMoments {
    double mean_logf = 0.0;
    double var_logf = 0.0;      ///< population variance over draws
    double mean_logf_sq = 0.0;
};

inline PredictiveMoments moments_of(const Vec& l) {
    PredictiveMoments m;
    const double s = static_cast<double>(l.size());
    m.mean_logf = l.sum() / s;
    m.mean_logf_sq = l.squaredNorm() / s;
    m.var_logf = (l.array() - m.mean_logf).square().sum() / s;
    return m;
}

inline PredictiveMoments predictive_moments(const PosteriorDraws& draws, const SvcObservation& point) {
    return moments_of(draw_log_densities(draws, point));
}

// Draw dump: "SVCDRAW1", then uint64 S, uint64 p, uint64 seed, then S*p
// little-endian doubles in row-major order.

inline void write_draws(const std::string& path, const PosteriorDraws& d) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path + " for writing");
    os.write("SVCDRAW1", 8);
    const std::uint64_t hdr[3] = {static_cast<std::uint64_t>(d.draws.rows()), static_cast<std::uint64_t>(d.draws.cols()),
                                  d.seed};
    os.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
    for (Eigen::Index s = 0; s < d.draws.rows(); ++s)
        for (Eigen::Index j = 0; j < d.draws.cols(); ++j) {
            const double v = d.draws(s, j);
            os.write(reinterpret_cast<const char*>(&v), sizeof v);
        }
}

inline PosteriorDraws read_draws(const std::string& path, double sigma2) {
    std::ifstream is(path, std::ios::binary);
    char magic[8];
    std::uint64_t hdr[3];
    if (!is.read(magic, 8) || std::string(magic, 8) != "SVCDRAW1" || !is.read(reinterpret_cast<char*>(hdr), sizeof hdr))
        throw DataError(path + " is not a draw dump");
    PosteriorDraws d;
    d.seed = hdr[2];
    d.sigma2 = sigma2;
    d.draws.resize(static_cast<Eigen::Index>(hdr[0]), static_cast<Eigen::Index>(hdr[1]));
    for (Eigen::Index s = 0; s < d.draws.rows(); ++s)
        for (Eigen::Index j = 0; j < d.draws.cols(); ++j)
            if (!is.read(reinterpret_cast<char*>(&d.draws(s, j)), sizeof(double))) throw DataError(path + " is truncated");
    return d;
}

}  // namespace svcgfl

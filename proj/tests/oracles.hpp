#pragma once

// Test-only oracles, kept independent of the implementation paths they check:
// finite-difference gradients, brute-force lambda-return expansion, Monte-Carlo
// KL, and exhaustive VQ assignment search.

#include <functional>
#include <vector>

#include "lcvn/common.hpp"
#include "lcvn/nn.hpp"

namespace oracle {

// Central finite differences along random unit directions in parameter space.
// Returns the worst relative error across directions.
struct GradCheckResult {
    double max_rel_err = 0.0;
    int directions = 0;
};

inline GradCheckResult gradcheck(
    lcvn::ParamStore& ps,
    const std::function<double(lcvn::ParamStore&, std::vector<lcvn::Mat>*)>& loss_and_grads,
    int n_directions, uint64_t seed, double h = 1e-5,
    const std::function<bool(const std::string&)>& include = {}) {
    using lcvn::Mat;
    std::vector<Mat> grads;
    double base = loss_and_grads(ps, &grads);
    (void)base;
    LCVN_CHECK(grads.size() == ps.entries.size(), "gradcheck: grads size mismatch");

    lcvn::Rng rng(seed);
    GradCheckResult res;
    res.directions = n_directions;
    for (int d = 0; d < n_directions; ++d) {
        std::vector<Mat> dir(ps.entries.size());
        double norm_sq = 0.0;
        for (size_t i = 0; i < ps.entries.size(); ++i) {
            const Mat& w = ps.entries[i].w;
            Mat m(w.rows(), w.cols());
            if (!include || include(ps.entries[i].name))
                for (int r = 0; r < w.rows(); ++r)
                    for (int c = 0; c < w.cols(); ++c) m(r, c) = rng.normal();
            else
                m.setZero();
            norm_sq += m.squaredNorm();
            dir[i] = std::move(m);
        }
        double inv = 1.0 / std::sqrt(norm_sq);
        for (auto& m : dir) m *= inv;

        double analytic = 0.0;
        for (size_t i = 0; i < grads.size(); ++i)
            analytic += grads[i].cwiseProduct(dir[i]).sum();

        auto shift = [&](double eps) {
            for (size_t i = 0; i < ps.entries.size(); ++i) ps.entries[i].w += eps * dir[i];
        };
        shift(h);
        double up = loss_and_grads(ps, nullptr);
        shift(-2.0 * h);
        double dn = loss_and_grads(ps, nullptr);
        shift(h);

        double numeric = (up - dn) / (2.0 * h);
        double rel = std::abs(analytic - numeric) /
                     std::max({1e-8, std::abs(analytic), std::abs(numeric)});
        res.max_rel_err = std::max(res.max_rel_err, rel);
    }
    return res;
}

// Brute-force lambda-return: exponentially weighted mixture of n-step returns,
// expanded directly from the definition rather than via the recursion.
inline std::vector<double> lambda_returns_bruteforce(const std::vector<double>& rewards,
                                                     const std::vector<double>& values,
                                                     double gamma, double lambda) {
    size_t H = rewards.size();
    LCVN_CHECK(values.size() == H + 1, "oracle: length mismatch");
    std::vector<double> out(H);
    for (size_t k = 0; k < H; ++k) {
        size_t remaining = H - k;
        // n-step return G^(i) for i = 1..remaining
        auto nstep = [&](size_t i) {
            double g = 0.0, disc = 1.0;
            for (size_t j = 0; j < i; ++j) {
                g += disc * rewards[k + j];
                disc *= gamma;
            }
            g += disc * values[k + i];
            return g;
        };
        double acc = 0.0, lpow = 1.0;
        for (size_t i = 1; i < remaining; ++i) {
            acc += (1.0 - lambda) * lpow * nstep(i);
            lpow *= lambda;
        }
        acc += lpow * nstep(remaining);
        out[k] = acc;
    }
    return out;
}

// Monte-Carlo estimate of D_KL(p || q) for diagonal Gaussians, with standard error.
struct McKl {
    double mean = 0.0;
    double stderr_ = 0.0;
};

inline McKl kl_monte_carlo(const std::vector<double>& mu_p, const std::vector<double>& logvar_p,
                           const std::vector<double>& mu_q, const std::vector<double>& logvar_q,
                           size_t n_samples, uint64_t seed) {
    lcvn::Rng rng(seed);
    size_t d = mu_p.size();
    double sum = 0.0, sum_sq = 0.0;
    for (size_t s = 0; s < n_samples; ++s) {
        double log_p = 0.0, log_q = 0.0;
        for (size_t i = 0; i < d; ++i) {
            double std_p = std::exp(0.5 * logvar_p[i]);
            double x = mu_p[i] + std_p * rng.normal();
            double zp = (x - mu_p[i]) / std_p;
            log_p += -0.5 * zp * zp - 0.5 * logvar_p[i];
            double std_q = std::exp(0.5 * logvar_q[i]);
            double zq = (x - mu_q[i]) / std_q;
            log_q += -0.5 * zq * zq - 0.5 * logvar_q[i];
        }
        double term = log_p - log_q;
        sum += term;
        sum_sq += term * term;
    }
    McKl r;
    r.mean = sum / double(n_samples);
    double var = sum_sq / double(n_samples) - r.mean * r.mean;
    r.stderr_ = std::sqrt(std::max(0.0, var) / double(n_samples));
    return r;
}

}  // namespace oracle

// SPDX-License-Identifier: Apache-2.0
//
// Randomised property checks behind `ehfo validate`. Each check is a pure
// function of (sample count, seed) and reports its worst observed margin.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ehfo/montecarlo.hpp"
#include "ehfo/oea.hpp"
#include "ehfo/optimizer.hpp"
#include "ehfo/profiles.hpp"
#include "ehfo/rate_models.hpp"

namespace ehfo::validation {

struct CheckResult {
    std::string name;
    bool passed = true;
    int samples = 0;
    std::uint64_t seed = 0;
    double worst = 0.0;  ///< check-specific margin, documented per check
    std::string detail;
};

namespace detail {

inline double log_uniform(std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
    return std::exp(u(rng));
}

// Central-difference Hessian of f at x.
template <class F>
Eigen::MatrixXd hessian(F&& f, const Eigen::VectorXd& x, double h) {
    const Eigen::Index n = x.size();
    Eigen::MatrixXd H(n, n);
    const double f0 = f(x);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd xp = x, xm = x;
        xp(i) += h;
        xm(i) -= h;
        H(i, i) = (f(xp) - 2.0 * f0 + f(xm)) / (h * h);
        for (Eigen::Index j = i + 1; j < n; ++j) {
            Eigen::VectorXd a = x, b = x, c = x, d = x;
            a(i) += h, a(j) += h;
            b(i) += h, b(j) -= h;
            c(i) -= h, c(j) += h;
            d(i) -= h, d(j) -= h;
            H(i, j) = H(j, i) = (f(a) - f(b) - f(c) + f(d)) / (4.0 * h * h);
        }
    }
    return H;
}

}  // namespace detail

/// Largest eigenvalue of the central-difference Hessian (step h).
template <class F>
double max_hessian_eigenvalue(F&& f, const Eigen::VectorXd& x, double h = 1e-4) {
    const Eigen::MatrixXd H = detail::hessian(f, x, h);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
    return es.eigenvalues().maxCoeff();
}

/// rate_exact <= rate_upper_u <= rate_upper_ub; worst = most negative slack.
inline CheckResult bound_chain(int samples, std::uint64_t seed, double slack = -1e-7) {
    CheckResult r{"bound_chain", true, samples, seed, std::numeric_limits<double>::infinity(), ""};
    std::mt19937_64 rng(seed);
    const int Ms[] = {2, 4, 8};
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < samples; ++i) {
        rates::RateModelParams P;
        P.M = Ms[rng() % 3];
        const double p = detail::log_uniform(rng, 0.01, 100.0);
        const double q = unit(rng) < 0.1 ? 0.0 : 100.0 * unit(rng);
        const double tau = q > 0.0 ? P.T * unit(rng) : (unit(rng) < 0.5 ? 0.0 : P.T * unit(rng));
        const rates::IntervalAllocation a{p, q, std::max(tau, q > 0.0 ? 1e-6 : 0.0)};
        const double ex = rates::rate_exact(a, P);
        const double u = rates::rate_upper_u(a, P);
        const double ub = rates::rate_upper_ub(a, P);
        const double s = std::min(u - ex, ub - u);
        if (s < r.worst) r.worst = s;
        if (s < slack && r.passed) {
            r.passed = false;
            r.detail = "sample " + std::to_string(i) + ": p=" + profiles::format_double(p) +
                       " q=" + profiles::format_double(q) + " tau=" + profiles::format_double(a.tau) +
                       " M=" + std::to_string(P.M);
        }
    }
    return r;
}

/// Negative semidefinite Hessians of R^u in (q, tau) and R^ub in (p, q, tau);
/// worst = largest eigenvalue seen.
inline CheckResult concavity(int samples, std::uint64_t seed, double eig_tol = 1e-6) {
    CheckResult r{"concavity", true, samples, seed, -std::numeric_limits<double>::infinity(), ""};
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    rates::RateModelParams P;
    for (int i = 0; i < samples; ++i) {
        P.M = 2 + static_cast<int>(rng() % 7);
        const double p = detail::log_uniform(rng, 0.1, 100.0);
        const double q = detail::log_uniform(rng, 0.1, 100.0);
        const double tau = 1.0 + (P.T - 2.0) * unit(rng);
        auto fu = [&](const Eigen::VectorXd& x) { return rates::rate_upper_u({p, x(0), x(1)}, P); };
        auto fub = [&](const Eigen::VectorXd& x) { return rates::rate_upper_ub({x(0), x(1), x(2)}, P); };
        const double eu = max_hessian_eigenvalue(fu, Eigen::Vector2d(q, tau));
        const double eub = max_hessian_eigenvalue(fub, Eigen::Vector3d(p, q, tau));
        const double e = std::max(eu, eub);
        r.worst = std::max(r.worst, e);
        if (e > eig_tol && r.passed) {
            r.passed = false;
            r.detail = "sample " + std::to_string(i) + ": max eigenvalue " + profiles::format_double(e);
        }
    }
    return r;
}

/// Staircase output is most majorized among sampled feasible vectors, with
/// band averages and conservation to 1e-12; worst = largest conservation error.
inline CheckResult oea_majorization(int profiles_count, int samples, std::uint64_t seed) {
    CheckResult r{"oea_majorization", true, profiles_count, seed, 0.0, ""};
    std::mt19937_64 rng(seed);
    std::exponential_distribution<double> ex(1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < profiles_count; ++i) {
        const int K = 1 + static_cast<int>(rng() % 20);
        oea::EnergyVector e(K);
        for (auto& v : e) v = unit(rng) < 0.2 ? 0.0 : ex(rng);
        const auto a = oea::oea(e);
        double se = 0.0, sa = 0.0;
        for (int k = 0; k < K; ++k) se += e[k], sa += a.values[k];
        const double cons = std::abs(se - sa);
        r.worst = std::max(r.worst, cons);
        bool ok = cons <= 1e-12 * std::max(1.0, se);
        const auto& B = a.bands.boundaries;
        for (std::size_t b = 0; ok && b + 1 < B.size(); ++b) {
            double band = 0.0;
            for (int k = B[b]; k < B[b + 1]; ++k) band += e[k];
            band /= (B[b + 1] - B[b]);
            for (int k = B[b]; k < B[b + 1]; ++k) ok = ok && std::abs(a.values[k] - band) <= 1e-12 * std::max(1.0, band);
            if (b + 2 < B.size()) ok = ok && a.values[B[b + 1]] > a.values[B[b]];
        }
        ok = ok && oea::verify_most_majorized(a, e, samples, seed + 1000 + i);
        if (!ok && r.passed) {
            r.passed = false;
            r.detail = "profile " + std::to_string(i) + " (K=" + std::to_string(K) + ")";
        }
    }
    return r;
}

/// Monte-Carlo RVQ means agree with E[nu] within z standard errors and stay
/// under the universal bound; worst = largest |z| seen.
inline CheckResult mc_quantisation(std::int64_t draws, int max_bits, std::uint64_t seed, double z = 3.0) {
    CheckResult r{"mc_quantisation", true, static_cast<int>(draws), seed, 0.0, ""};
    for (int M = 2; M <= 4; ++M) {
        for (int b = 0; b <= max_bits; ++b) {
            const auto est = mc::simulate_nu({seed + static_cast<std::uint64_t>(16 * M + b), draws, M, b, 1});
            const double zz = std::abs(est.mean - rates::nu_expected(b, M)) / est.std_err;
            r.worst = std::max(r.worst, zz);
            const bool ok = zz <= z && est.mean <= rates::nu_upper(b, M) + z * est.std_err;
            if (!ok && r.passed) {
                r.passed = false;
                r.detail = "M=" + std::to_string(M) + " b=" + std::to_string(b) + " z=" + profiles::format_double(zz);
            }
        }
    }
    return r;
}

/// q giving exactly `bits` feedback bits in tau channel uses.
inline double q_for_bits(double bits, double tau, double sigma2) {
    return tau * sigma2 * std::expm1(bits * rates::kLn2 / tau);
}

/// Channel-draw rate estimates against rate_exact at integer-bit allocations;
/// worst = largest |z|.
inline CheckResult mc_rate(std::int64_t draws, std::uint64_t seed, double z = 3.0) {
    CheckResult r{"mc_rate", true, static_cast<int>(draws), seed, 0.0, ""};
    int i = 0;
    for (int M : {2, 4}) {
        for (int bits : {0, 3, 6}) {
            for (double p : {1.0, 10.0}) {
                rates::RateModelParams P;
                P.M = M;
                const double tau = bits == 0 ? 0.0 : 10.0;
                const rates::IntervalAllocation a{p, bits == 0 ? 0.0 : q_for_bits(bits, tau, P.sigma2), tau};
                const auto est = mc::simulate_rate(a, P, {seed + static_cast<std::uint64_t>(i++), draws, M, 0, 1});
                const double zz = std::abs(est.mean - rates::rate_exact(a, P)) / est.std_err;
                r.worst = std::max(r.worst, zz);
                if (zz > z && r.passed) {
                    r.passed = false;
                    r.detail = "M=" + std::to_string(M) + " b=" + std::to_string(bits) + " p=" +
                               profiles::format_double(p) + " z=" + profiles::format_double(zz);
                }
            }
        }
    }
    return r;
}

/// High-power gap constant for M = 4 against log2 M - mean(log2 ||h||^2);
/// worst = |z|.
inline CheckResult gap_limit(std::int64_t draws, std::uint64_t seed, double z = 3.0) {
    CheckResult r{"gap_limit", true, static_cast<int>(draws), seed, 0.0, ""};
    const auto est = mc::simulate_gain_functional([](double g) { return 2.0 - std::log2(g); }, 4, draws, seed);
    r.worst = std::abs(est.mean - rates::gap_limit_high_power(4)) / est.std_err;
    if (r.worst > z) {
        r.passed = false;
        r.detail = "z=" + profiles::format_double(r.worst);
    }
    return r;
}

/// Random harvesting and constant-power scenarios: every optimiser output is
/// feasible and passes certify_optimality at `tol`.
inline CheckResult certificates(int scenarios, std::uint64_t seed, double tol = 1e-6) {
    CheckResult r{"certificates", true, scenarios, seed, 0.0, ""};
    std::mt19937_64 rng(seed);
    for (int i = 0; i < scenarios; ++i) {
        optimizer::Scenario s;
        const int K = 2 + static_cast<int>(rng() % 11);
        const double LT = s.profile.L * s.params.T;
        const double mean_p = detail::log_uniform(rng, 1.0, 100.0);
        const double mean_q = detail::log_uniform(rng, 1.0, 100.0);
        const std::uint64_t profile_seed = rng();
        s.profile = profiles::synthetic_exponential(K, LT * mean_p, s.profile.L * mean_q, profile_seed);
        optimizer::Policy pol;
        if (i % 3 == 2) {
            s.tx_mode = optimizer::TxMode::constant_power(detail::log_uniform(rng, 0.1, 100.0));
            pol = optimizer::optimize_rx_only(s);
        } else {
            pol = optimizer::optimize_joint_general(s);
        }
        const auto feas = optimizer::check_feasibility(pol, s);
        const auto cert = optimizer::certify_optimality(pol, s, tol);
        if ((!feas.all() || !cert.all()) && r.passed) {
            r.passed = false;
            r.detail = "scenario " + std::to_string(i) + ": " + (cert.all() ? "infeasible" : cert.detail);
        }
    }
    return r;
}

/// solve_tau_star against a dense grid argmax; worst = largest |dtau| / T.
inline CheckResult tau_star(int samples, int grid, std::uint64_t seed, double rel_tol = 1e-3) {
    CheckResult r{"tau_star", true, samples, seed, 0.0, ""};
    std::mt19937_64 rng(seed);
    for (int i = 0; i < samples; ++i) {
        rates::RateModelParams P;
        P.M = 2 + static_cast<int>(rng() % 7);
        const double p = detail::log_uniform(rng, 0.01, 100.0);
        const double q = detail::log_uniform(rng, 0.01, 100.0);
        const auto bound = (i % 2) ? optimizer::Bound::upper_ub : optimizer::Bound::upper_u;
        const double ts = optimizer::solve_tau_star(p, q, P, bound);
        double best_tau = 0.0, best = -1.0;
        for (int g = 0; g < grid; ++g) {
            const double tau = P.T * g / grid;
            if (tau == 0.0) continue;
            const rates::IntervalAllocation a{p, q, tau};
            const double v = bound == optimizer::Bound::upper_u ? rates::rate_upper_u(a, P) : rates::rate_upper_ub(a, P);
            if (v > best) best = v, best_tau = tau;
        }
        const double err = std::abs(ts - best_tau) / P.T;
        r.worst = std::max(r.worst, err);
        if (err > rel_tol && r.passed) {
            r.passed = false;
            r.detail = "sample " + std::to_string(i) + ": tau*=" + profiles::format_double(ts) +
                       " grid=" + profiles::format_double(best_tau);
        }
    }
    return r;
}

}  // namespace ehfo::validation

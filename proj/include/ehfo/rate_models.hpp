// SPDX-License-Identifier: Apache-2.0
//
// Throughput formulas for one harvesting interval of the limited-feedback
// MISO link.
//
// Units: `p` is transmit energy per channel use, `q` is the RX feedback
// energy spent per frame, `tau` is the number of channel uses per frame spent
// on feedback (out of T). The TX energy constraint therefore reads
// L*T*sum(p) <= sum(e_t) and the RX constraint L*sum(q) <= sum(e_r).
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <utility>
#include <vector>

#include "ehfo/errors.hpp"
#include "ehfo/numerics.hpp"

namespace ehfo::rates {

using numerics::QuadratureSpec;

inline constexpr double kLog2e = std::numbers::log2e;
inline constexpr double kLn2 = std::numbers::ln2;

struct RateModelParams {
    int M = 4;            ///< TX antennas
    double T = 200.0;     ///< channel uses per frame
    double sigma2 = 1.0;  ///< uplink noise variance
    QuadratureSpec quad{};

    void validate() const {
        if (M < 2) throw DomainError("RateModelParams: M must be >= 2");
        if (!(T > 0.0) || !std::isfinite(T)) throw DomainError("RateModelParams: T must be positive");
        if (!(sigma2 > 0.0) || !std::isfinite(sigma2))
            throw DomainError("RateModelParams: sigma2 must be positive");
        quad.validate();
    }
};

struct IntervalAllocation {
    double p = 0.0;
    double q = 0.0;
    double tau = 0.0;
};

/// Throws DomainError unless the allocation lies in the model's domain.
/// A positive feedback energy with zero feedback duration is accepted only
/// for silent intervals (p == 0), where it carries no bits.
inline void validate(const IntervalAllocation& a, const RateModelParams& params) {
    if (!(a.p >= 0.0) || !std::isfinite(a.p)) throw DomainError("allocation: p must be >= 0");
    if (!(a.q >= 0.0) || !std::isfinite(a.q)) throw DomainError("allocation: q must be >= 0");
    if (!(a.tau >= 0.0) || !(a.tau < params.T)) throw DomainError("allocation: tau must lie in [0, T)");
    if (a.q > 0.0 && a.tau == 0.0 && a.p > 0.0)
        throw DomainError("allocation: q > 0 requires tau > 0");
}

/// b = tau * log2(1 + q / (tau sigma^2)); zero when q == 0.
inline double feedback_bits(double q, double tau, double sigma2) {
    if (!(sigma2 > 0.0)) throw DomainError("feedback_bits: sigma2 must be positive");
    if (!(q >= 0.0)) throw DomainError("feedback_bits: q must be >= 0");
    if (q == 0.0) return 0.0;
    if (!(tau > 0.0)) throw DomainError("feedback_bits: tau must be positive when q > 0");
    return tau * std::log1p(q / (tau * sigma2)) * kLog2e;
}

/// E[nu] for random vector quantisation with 2^b codewords.
inline double nu_expected(double b, int M) {
    if (!(b >= 0.0)) throw DomainError("nu_expected: b must be >= 0");
    if (M < 2) throw DomainError("nu_expected: M must be >= 2");
    const double y = static_cast<double>(M) / (M - 1);
    const double log_n = b * kLn2;
    double log_beta;
    if (b > 1000.0) {
        log_beta = boost::math::lgamma(y) - y * log_n;
    } else {
        log_beta = numerics::log_beta(std::exp2(b), y);
    }
    return -std::expm1(log_n + log_beta);
}

/// Universal upper bound on E[nu] for any b-bit quantiser.
inline double nu_upper(double b, int M) {
    if (!(b >= 0.0)) throw DomainError("nu_upper: b must be >= 0");
    if (M < 2) throw DomainError("nu_upper: M must be >= 2");
    return 1.0 - (static_cast<double>(M - 1) / M) * std::exp2(-b / (M - 1));
}

/// Shared pieces of both concave bounds at one allocation:
///   t = 1 - tau/T, f = M - (M-1) (1 + q/(tau sigma^2))^{-tau/(M-1)},
/// and the partial derivatives of f in tau and q.
struct BoundTerms {
    double t = 1.0;
    double f = 1.0;
    double df_dtau = 0.0;
    double df_dq = 0.0;
};

inline BoundTerms bound_terms(double q, double tau, const RateModelParams& params) {
    BoundTerms bt;
    bt.t = 1.0 - tau / params.T;
    const double m1 = params.M - 1.0;
    if (tau <= 0.0) {
        // no feedback: f = 1
        bt.f = 1.0;
        bt.df_dq = 0.0;
        bt.df_dtau = q > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
        return bt;
    }
    const double s = q / params.sigma2;
    const double l = std::log1p(s / tau);
    const double x = std::exp(-(tau / m1) * l);
    bt.f = params.M - m1 * x;
    bt.df_dtau = x * (l - s / (tau + s));
    bt.df_dq = x * tau / (params.sigma2 * (tau + s));
    return bt;
}

/// R^u: Jensen plus quantisation-bound upper bound on the ergodic rate.
inline double rate_upper_u(const IntervalAllocation& a, const RateModelParams& params) {
    validate(a, params);
    if (a.p == 0.0) return 0.0;
    const BoundTerms bt = bound_terms(a.q, a.tau, params);
    return bt.t * std::log1p(a.p * bt.f / bt.t) * kLog2e;
}

/// R^ub: concave bound obtained by raising the effective SNR by one.
inline double rate_upper_ub(const IntervalAllocation& a, const RateModelParams& params) {
    validate(a, params);
    const BoundTerms bt = bound_terms(a.q, a.tau, params);
    const double t = bt.t;
    return t * std::log1p((1.0 + a.p / t) * bt.f / t) * kLog2e;
}

/// Closed form of R^ub - R^u.
inline double gap_ub_vs_u(const IntervalAllocation& a, const RateModelParams& params) {
    validate(a, params);
    const BoundTerms bt = bound_terms(a.q, a.tau, params);
    const double t = bt.t;
    const double f = bt.f;
    const double pf = a.p * f;
    return t * std::log2((t * t + t * f + pf) / (t + pf)) - t * std::log2(t);
}

/// d R^u / d tau at fixed (p, q).
inline double d_rate_upper_u_dtau(double p, double q, double tau, const RateModelParams& params) {
    const BoundTerms bt = bound_terms(q, tau, params);
    const double t = bt.t;
    const double A = p * bt.f / t;
    return -std::log1p(A) * kLog2e / params.T +
           (p * kLog2e) * (bt.df_dtau + bt.f / (params.T * t)) / (1.0 + A);
}

/// d R^ub / d tau at fixed (p, q).
inline double d_rate_upper_ub_dtau(double p, double q, double tau, const RateModelParams& params) {
    const BoundTerms bt = bound_terms(q, tau, params);
    const double t = bt.t;
    const double T = params.T;
    const double B = (1.0 + p / t) * bt.f / t;
    const double dB = bt.df_dtau / t + bt.f / (T * t * t) + p * bt.df_dtau / (t * t) +
                      2.0 * p * bt.f / (T * t * t * t);
    return -std::log1p(B) * kLog2e / T + t * dB * kLog2e / (1.0 + B);
}

/// Gradient of R^ub in (p, q) at fixed tau.
inline std::pair<double, double> grad_rate_upper_ub(double p, double q, double tau,
                                                     const RateModelParams& params) {
    const BoundTerms bt = bound_terms(q, tau, params);
    const double t = bt.t;
    const double B = (1.0 + p / t) * bt.f / t;
    const double dp = bt.f / (t * (1.0 + B)) * kLog2e;
    const double dq = (1.0 + p / t) * bt.df_dq / (1.0 + B) * kLog2e;
    return {dp, dq};
}

namespace detail {

// Exact ergodic rate for a given (possibly non-integer) codebook size
// exponent b, i.e. N = 2^b codewords.
//
// With rho = t/p the rate is
//   t log2(e) [ sum_{l<M} e^rho E_{l+1}(rho) - \int_0^1 F(nu) g'(nu) dnu ],
//   F(nu) = (1 - (1-nu)^{M-1})^N,  g'(nu) = (M/nu) e^{rho/nu} E_{M+1}(rho/nu).
// F concentrates near nu = 1 for large N and g' turns over near nu = rho,
// so the integral is split in two regions with their own variables.
inline double rate_exact_bits(double p, double tau, double bits, const RateModelParams& params) {
    if (p == 0.0) return 0.0;
    const int M = params.M;
    const double t = 1.0 - tau / params.T;
    const double rho = t / p;

    double perfect = 0.0;
    for (int l = 0; l < M; ++l) perfect += numerics::exp_integral_n_scaled(l + 1, rho);

    const double m1 = M - 1.0;
    const double n_codewords = std::exp(bits * kLn2);
    const double rel = params.quad.rel_tol > 0.0 ? std::min(params.quad.rel_tol, 1e-10) : 1e-10;
    // the loss never exceeds the perfect-CSI term, so that term sets the scale
    const double abs_tol = std::max(params.quad.abs_tol, 1e-12 * perfect);
    auto kernel = [&](double nu) { return (M / nu) * numerics::exp_integral_n_scaled(M + 1, rho / nu); };

    // Region u = 1 - nu <= 1/2, as u = v / N^{1/(M-1)} so the domain stays
    // O(1) however concentrated F is. Beyond v^{M-1} = 745, F underflows.
    const double u_scale = std::exp(-bits * kLn2 / m1);
    const double u_max = std::min(1.0, u_scale * std::pow(745.0, 1.0 / m1));
    const double u_split = std::min(u_max, 0.5);
    auto in_v = [&](double v) {
        const double log_f = n_codewords * std::log1p(-std::pow(v, m1) / n_codewords);
        if (log_f < -745.0) return 0.0;
        return u_scale * std::exp(log_f) * kernel(1.0 - u_scale * v);
    };
    const double v_split = u_split / u_scale;
    const double v_mid = std::min(v_split, std::pow(40.0, 1.0 / m1));
    double loss = numerics::integrate_interval(in_v, 0.0, v_mid, abs_tol, rel);
    if (v_split > v_mid) loss += numerics::integrate_interval(in_v, v_mid, v_split, abs_tol, rel);

    // Region nu < 1/2, directly in nu, with breakpoints where the kernel
    // turns over (nu ~ rho).
    if (u_max > 0.5) {
        auto in_nu = [&](double nu) {
            if (nu <= 0.0) return 0.0;
            const double w = -std::expm1(m1 * std::log1p(-nu));  // 1 - (1 - nu)^{M-1}
            const double log_f = n_codewords * std::log(w);
            if (log_f < -745.0) return 0.0;
            return std::exp(log_f) * kernel(nu);
        };
        std::vector<double> cuts{1.0 - u_max, 0.5};
        for (double k : {0.01, 0.1, 1.0, 10.0, 100.0}) {
            const double nu = k * rho;
            if (nu > cuts.front() && nu < 0.5) cuts.push_back(nu);
        }
        std::sort(cuts.begin(), cuts.end());
        for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
            loss += numerics::integrate_interval(in_nu, cuts[i], cuts[i + 1], abs_tol, rel);
    }
    return std::max(0.0, t * kLog2e * (perfect - loss));
}

}  // namespace detail

/// Exact ergodic rate with non-integer feedback bits.
inline double rate_exact(const IntervalAllocation& a, const RateModelParams& params) {
    validate(a, params);
    if (a.p == 0.0) return 0.0;
    const double bits = a.tau > 0.0 ? feedback_bits(a.q, a.tau, params.sigma2) : 0.0;
    return detail::rate_exact_bits(a.p, a.tau, bits, params);
}

/// Exact rate after rounding the feedback bits down to an integer codebook.
inline double round_bits_policy_rate(const IntervalAllocation& a, const RateModelParams& params) {
    validate(a, params);
    if (a.p == 0.0) return 0.0;
    const double bits = a.tau > 0.0 ? feedback_bits(a.q, a.tau, params.sigma2) : 0.0;
    // absorb floating noise just below an exact integer
    const double rounded = std::floor(bits + 1e-9);
    return detail::rate_exact_bits(a.p, a.tau, rounded, params);
}

/// Jensen lower / Edmundson-Madansky upper bounds on R^u - R_exact.
inline std::pair<double, double> gap_bounds_u(const IntervalAllocation& a,
                                              const RateModelParams& params) {
    validate(a, params);
    if (!(a.p > 0.0)) throw DomainError("gap_bounds_u: requires p > 0");
    const double t = 1.0 - a.tau / params.T;
    const double bits = a.tau > 0.0 ? feedback_bits(a.q, a.tau, params.sigma2) : 0.0;
    const double mean_nu = nu_expected(bits, params.M);
    const double snr = a.p / t;
    const double upper_u = rate_upper_u(a, params);
    const double jensen = numerics::expect_gamma(
        [&](double g) { return std::log1p(snr * g * mean_nu) * kLog2e; }, params.M, params.quad);
    const double chord = numerics::expect_gamma(
        [&](double g) { return std::log1p(snr * g) * kLog2e; }, params.M, params.quad);
    return {upper_u - t * jensen, upper_u - t * chord * mean_nu};
}

/// Infinite-feedback limit of R^u - R_exact at fixed (p, tau).
inline double gap_limit_u(double p, double tau, const RateModelParams& params) {
    const double t = 1.0 - tau / params.T;
    const double M = params.M;
    return t * numerics::expect_gamma(
                   [&](double g) { return std::log2((t + p * M) / (t + p * g)); }, params.M,
                   params.quad);
}

/// High-power, infinite-feedback gap constant log2 M - E[log2 ||h||^2].
inline double gap_limit_high_power(int M) {
    if (M < 2) throw DomainError("gap_limit_high_power: M must be >= 2");
    return std::log2(static_cast<double>(M)) - numerics::digamma(M) * kLog2e;
}

}  // namespace ehfo::rates

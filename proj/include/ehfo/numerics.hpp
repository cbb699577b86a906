// SPDX-License-Identifier: Apache-2.0
//
// Special functions, quadrature and bracketing root finding shared by the
// rate models and the optimizers. Everything here is a pure function of its
// arguments; the Gauss-Laguerre rule cache is internally synchronised.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/tools/toms748_solve.hpp>

#include "ehfo/errors.hpp"

namespace ehfo::numerics {

inline constexpr double kEulerGamma = 0.57721566490153286060651209008240243;

enum class QuadratureScheme { gauss_laguerre, adaptive_interval };

struct QuadratureSpec {
    int node_count = 64;
    QuadratureScheme scheme = QuadratureScheme::gauss_laguerre;
    double abs_tol = 0.0;
    double rel_tol = 1e-8;

    void validate() const {
        if (node_count < 8) throw DomainError("QuadratureSpec: node_count must be >= 8");
        if (!(abs_tol >= 0.0) || !(rel_tol >= 0.0))
            throw DomainError("QuadratureSpec: tolerances must be non-negative");
        if (abs_tol == 0.0 && rel_tol == 0.0)
            throw DomainError("QuadratureSpec: one of abs_tol, rel_tol must be positive");
    }
};

namespace detail {

// E_n(x), optionally multiplied by e^x. Continued fraction (modified Lentz)
// for x >= 1, power series otherwise.
inline double exp_integral_impl(int n, double x, bool scaled) {
    constexpr int kMaxIter = 2000;
    constexpr double kEps = 1e-16;
    constexpr double kTiny = 1e-300;

    if (n < 1) throw DomainError("exp_integral_n: order must be >= 1");
    if (!(x >= 0.0)) throw DomainError("exp_integral_n: argument must be >= 0");
    const int nm1 = n - 1;
    if (x == 0.0) {
        if (nm1 == 0) throw DomainError("exp_integral_n: E_1(0) is infinite");
        return 1.0 / nm1;
    }
    if (std::isinf(x)) return 0.0;

    if (x >= 1.0) {
        double b = x + n;
        double c = 1.0 / kTiny;
        double d = 1.0 / b;
        double h = d;
        for (int i = 1; i <= kMaxIter; ++i) {
            const double a = -static_cast<double>(i) * (nm1 + i);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            const double del = c * d;
            h *= del;
            if (std::abs(del - 1.0) < kEps) return scaled ? h : h * std::exp(-x);
        }
        throw ToleranceError("exp_integral_n: continued fraction did not converge", h);
    }

    double ans = (nm1 != 0) ? 1.0 / nm1 : -std::log(x) - kEulerGamma;
    double fact = 1.0;
    for (int i = 1; i <= kMaxIter; ++i) {
        fact *= -x / i;
        double del;
        if (i != nm1) {
            del = -fact / (i - nm1);
        } else {
            double psi = -kEulerGamma;
            for (int ii = 1; ii <= nm1; ++ii) psi += 1.0 / ii;
            del = fact * (-std::log(x) + psi);
        }
        ans += del;
        if (std::abs(del) < std::abs(ans) * kEps) return scaled ? ans * std::exp(x) : ans;
    }
    throw ToleranceError("exp_integral_n: series did not converge", ans);
}

struct LaguerreRule {
    std::vector<double> nodes;
    std::vector<double> weights;  // normalised: sum to one
};

// Golub-Welsch for the generalised Laguerre weight g^alpha e^{-g}.
inline LaguerreRule build_laguerre_rule(int n, double alpha) {
    Eigen::VectorXd diag(n);
    Eigen::VectorXd sub(n > 1 ? n - 1 : 0);
    for (int i = 0; i < n; ++i) diag(i) = 2.0 * i + alpha + 1.0;
    for (int i = 1; i < n; ++i) sub(i - 1) = std::sqrt(i * (i + alpha));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
    solver.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
    LaguerreRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        rule.nodes[i] = solver.eigenvalues()(i);
        const double v0 = solver.eigenvectors()(0, i);
        rule.weights[i] = v0 * v0;
    }
    return rule;
}

}  // namespace detail

/// E_n(x) = \int_1^\infty e^{-xt} t^{-n} dt.
inline double exp_integral_n(int n, double x) { return detail::exp_integral_impl(n, x, false); }

/// e^x E_n(x); finite for all x > 0 where the unscaled value under/overflows.
inline double exp_integral_n_scaled(int n, double x) { return detail::exp_integral_impl(n, x, true); }

/// ln B(x, y). Uses the gamma delta ratio when one argument dominates so that
/// large codebook sizes keep full relative precision.
inline double log_beta(double x, double y) {
    if (!(x > 0.0) || !(y > 0.0)) throw DomainError("beta_fn: arguments must be positive");
    if (x < y) std::swap(x, y);
    if (x > 1e15) {
        return boost::math::lgamma(y) - y * std::log(x) - 0.5 * y * (y - 1.0) / x;
    }
    if (x > 4.0 * y && x > 8.0) {
        return boost::math::lgamma(y) + std::log(boost::math::tgamma_delta_ratio(x, y));
    }
    return boost::math::lgamma(x) + boost::math::lgamma(y) - boost::math::lgamma(x + y);
}

inline double beta_fn(double x, double y) { return std::exp(log_beta(x, y)); }

inline double digamma(double x) {
    if (!(x > 0.0)) throw DomainError("digamma: argument must be positive");
    double shift = 0.0;
    while (x < 16.0) {
        shift -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    // Bernoulli tail of the asymptotic expansion
    const double tail =
        inv2 * (1.0 / 12 - inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 * (1.0 / 132)))));
    return shift + std::log(x) - 0.5 * inv - tail;
}

/// Cached normalised generalised Gauss-Laguerre rule with weight g^alpha e^{-g}.
inline const detail::LaguerreRule& gauss_laguerre_rule(int n, int alpha) {
    static std::mutex mutex;
    static std::map<std::pair<int, int>, detail::LaguerreRule> cache;
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find({n, alpha});
    if (it == cache.end()) {
        it = cache.emplace(std::make_pair(n, alpha), detail::build_laguerre_rule(n, alpha)).first;
    }
    return it->second;
}

/// Adaptive Gauss-Kronrod over a finite or half-infinite interval.
template <class F>
double integrate_interval(F&& f, double a, double b, double abs_tol, double rel_tol,
                          unsigned max_depth = 18) {
    using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
    double error = 0.0;
    double l1 = 0.0;
    // The adaptive driver only understands relative targets; a coarse pass
    // turns abs_tol into one.
    const double coarse = GK::integrate(f, a, b, 0, 0.0, &error, &l1);
    if (std::isfinite(coarse) && error <= std::max(abs_tol, rel_tol * l1)) return coarse;
    double target = std::max(rel_tol, 1e-15);
    if (abs_tol > 0.0 && l1 > 0.0) target = std::max(target, std::min(1e-3, abs_tol / l1));
    const double value = GK::integrate(f, a, b, max_depth, target, &error, &l1);
    if (!std::isfinite(value))
        throw ToleranceError("integrate_interval: non-finite result", error);
    if (error > std::max(abs_tol, rel_tol * l1) && error > 1e-300)
        throw ToleranceError("integrate_interval: tolerance not met", error);
    return value;
}

/// E[f(G)] for G ~ Gamma(M, 1).
template <class F>
double expect_gamma(F&& f, int M, const QuadratureSpec& spec = {}) {
    spec.validate();
    if (M < 1) throw DomainError("expect_gamma: shape M must be >= 1");

    auto adaptive = [&]() {
        const double log_norm = boost::math::lgamma(static_cast<double>(M));
        auto integrand = [&](double g) {
            if (g <= 0.0) return 0.0;
            const double w = std::exp((M - 1) * std::log(g) - g - log_norm);
            return w == 0.0 ? 0.0 : f(g) * w;
        };
        const double rel = spec.rel_tol > 0.0 ? spec.rel_tol : 1e-10;
        return integrate_interval(integrand, 0.0, std::numeric_limits<double>::infinity(),
                                  spec.abs_tol, rel);
    };

    if (spec.scheme == QuadratureScheme::adaptive_interval) return adaptive();

    auto apply = [&](int n) {
        const auto& rule = gauss_laguerre_rule(n, M - 1);
        double s = 0.0;
        for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
            if (rule.weights[i] == 0.0) continue;
            s += rule.weights[i] * f(rule.nodes[i]);
        }
        return s;
    };
    const double coarse = apply(spec.node_count);
    const double fine = apply(spec.node_count + spec.node_count / 2);
    if (std::abs(fine - coarse) <= std::max(spec.abs_tol, spec.rel_tol * std::abs(fine))) return fine;
    return adaptive();
}

/// Bracketing root finder (TOMS 748: bisection with inverse cubic
/// interpolation). Returns a point whose bracket has width <= tol, or an
/// exact zero.
template <class F>
double find_root(F&& f, double lo, double hi, double tol = 1e-10) {
    if (!(lo <= hi)) throw DomainError("find_root: lo must not exceed hi");
    if (!(tol > 0.0)) throw DomainError("find_root: tol must be positive");
    const double flo = f(lo);
    const double fhi = f(hi);
    if (flo == 0.0) return lo;
    if (fhi == 0.0) return hi;
    if (std::signbit(flo) == std::signbit(fhi))
        throw NoSignChangeError("find_root: f(lo) and f(hi) have the same sign");

    auto done = [tol](double a, double b) { return std::abs(b - a) <= tol; };
    std::uintmax_t iters = 200;
    auto bracket = boost::math::tools::toms748_solve(f, lo, hi, flo, fhi, done, iters);
    double a = bracket.first;
    double b = bracket.second;
    if (std::abs(b - a) > tol) {
        // finish by plain bisection
        double fa = f(a);
        while (std::abs(b - a) > tol) {
            const double m = 0.5 * (a + b);
            const double fm = f(m);
            if (fm == 0.0) return m;
            if (std::signbit(fm) == std::signbit(fa)) {
                a = m;
                fa = fm;
            } else {
                b = m;
            }
        }
    }
    return 0.5 * (a + b);
}

}  // namespace ehfo::numerics

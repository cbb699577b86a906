// SPDX-License-Identifier: Apache-2.0
//
// Majorization predicates and the doubly-stochastic machinery used to
// certify allocation vectors.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ehfo/errors.hpp"

namespace ehfo::majorization {

using RealVector = std::vector<double>;
using SquareMatrix = Eigen::MatrixXd;

inline constexpr double kDefaultTol = 1e-9;

namespace detail {

inline void require_finite(std::span<const double> v, const char* who) {
    for (double e : v)
        if (!std::isfinite(e)) throw DomainError(std::string(who) + ": non-finite entry");
}

inline RealVector sorted_descending(std::span<const double> v) {
    RealVector s(v.begin(), v.end());
    std::sort(s.begin(), s.end(), std::greater<>());
    return s;
}

// Permutation that sorts v descending: v[order[0]] >= v[order[1]] >= ...
inline std::vector<int> descending_order(std::span<const double> v) {
    std::vector<int> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return v[a] > v[b]; });
    return order;
}

}  // namespace detail

/// x is majorized by y: every partial sum of the descending rearrangement of
/// x is at most that of y, with equal totals. Tolerance is absolute.
inline bool is_majorized(std::span<const double> x, std::span<const double> y,
                         double tol = kDefaultTol) {
    if (x.size() != y.size()) throw LengthMismatchError("is_majorized: length mismatch");
    detail::require_finite(x, "is_majorized");
    detail::require_finite(y, "is_majorized");
    const RealVector xs = detail::sorted_descending(x);
    const RealVector ys = detail::sorted_descending(y);
    double sx = 0.0;
    double sy = 0.0;
    for (std::size_t l = 0; l < xs.size(); ++l) {
        sx += xs[l];
        sy += ys[l];
        if (sx > sy + tol) return false;
    }
    return std::abs(sx - sy) <= tol;
}

inline bool is_doubly_stochastic(const SquareMatrix& d, double tol = kDefaultTol) {
    if (d.rows() != d.cols()) return false;
    if (!d.allFinite()) return false;
    if ((d.array() < -tol).any()) return false;
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
        if (std::abs(d.row(i).sum() - 1.0) > tol) return false;
        if (std::abs(d.col(i).sum() - 1.0) > tol) return false;
    }
    return true;
}

/// Falsification probe for x <= y: checks sum g(x_i) >= sum g(y_i) - tol for
/// each supplied concave g. Passing is necessary, not sufficient.
inline bool schur_test(std::span<const double> x, std::span<const double> y,
                       const std::vector<std::function<double(double)>>& g_family,
                       double tol = kDefaultTol) {
    if (x.size() != y.size()) throw LengthMismatchError("schur_test: length mismatch");
    for (const auto& g : g_family) {
        double gx = 0.0;
        double gy = 0.0;
        for (double v : x) gx += g(v);
        for (double v : y) gy += g(v);
        if (gx < gy - tol) return false;
    }
    return true;
}

/// Column-wise probe for matrix majorization X = Y D.
inline bool schur_test_columns(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                               const std::vector<std::function<double(const Eigen::VectorXd&)>>& g_family,
                               double tol = kDefaultTol) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
        throw LengthMismatchError("schur_test_columns: shape mismatch");
    for (const auto& g : g_family) {
        double gx = 0.0;
        double gy = 0.0;
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            gx += g(x.col(c));
            gy += g(y.col(c));
        }
        if (gx < gy - tol) return false;
    }
    return true;
}

/// Chord upper bound on E[f(X)] for convex f and X supported on [a, b] with mean mu.
inline double edmundson_madansky_bound(const std::function<double(double)>& f, double a, double b,
                                       double mu) {
    if (!(a < b)) throw DomainError("edmundson_madansky_bound: requires a < b");
    if (!(mu >= a && mu <= b)) throw DomainError("edmundson_madansky_bound: mean outside [a, b]");
    return (b - mu) / (b - a) * f(a) + (mu - a) / (b - a) * f(b);
}

/// Doubly stochastic D with x = y D (row-vector convention), built from a
/// finite sequence of T-transforms. Requires is_majorized(x, y, tol).
inline SquareMatrix t_transform_matrix(std::span<const double> x, std::span<const double> y,
                                       double tol = kDefaultTol) {
    if (!is_majorized(x, y, tol))
        throw DomainError("t_transform_matrix: x is not majorized by y");
    const auto n = static_cast<Eigen::Index>(x.size());
    const auto ox = detail::descending_order(x);
    const auto oy = detail::descending_order(y);
    RealVector xs(n);
    RealVector ys(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        xs[i] = x[ox[i]];
        ys[i] = y[oy[i]];
    }

    // Sorted-space transform: xs = ys * D.
    SquareMatrix d = SquareMatrix::Identity(n, n);
    for (Eigen::Index step = 0; step < n; ++step) {
        Eigen::Index j = -1;
        for (Eigen::Index i = n - 1; i >= 0; --i) {
            if (ys[i] > xs[i] + tol) {
                j = i;
                break;
            }
        }
        if (j < 0) break;
        Eigen::Index k = -1;
        for (Eigen::Index i = j + 1; i < n; ++i) {
            if (ys[i] < xs[i] - tol) {
                k = i;
                break;
            }
        }
        if (k < 0) break;
        const double delta = std::min(ys[j] - xs[j], xs[k] - ys[k]);
        const double lambda = 1.0 - delta / (ys[j] - ys[k]);
        // T = lambda I + (1 - lambda) Q, Q exchanging coordinates j and k
        SquareMatrix t = SquareMatrix::Identity(n, n);
        t(j, j) = lambda;
        t(k, k) = lambda;
        t(j, k) = 1.0 - lambda;
        t(k, j) = 1.0 - lambda;
        d = d * t;
        ys[j] -= delta;
        ys[k] += delta;
    }

    // Undo the sorting permutations: y_sorted = y * Py, x = x_sorted * Px.
    SquareMatrix py = SquareMatrix::Zero(n, n);
    SquareMatrix px = SquareMatrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        py(oy[i], i) = 1.0;
        px(i, ox[i]) = 1.0;
    }
    return py * d * px;
}

}  // namespace ehfo::majorization

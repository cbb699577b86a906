// SPDX-License-Identifier: Apache-2.0
//
// Staircase allocation of harvested energy under "use no earlier than it
// arrives" prefix constraints, and its most-majorized certificate.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <tuple>
#include <vector>

#include "ehfo/errors.hpp"
#include "ehfo/majorization.hpp"

namespace ehfo::oea {

/// Per-interval available energy, already scaled to allocation units.
using EnergyVector = std::vector<double>;

/// Band boundaries {B_0 = 0 < B_1 < ... < B_m = K}; band i covers [B_{i-1}, B_i).
struct BandStructure {
    std::vector<int> boundaries{0};

    int band_count() const { return static_cast<int>(boundaries.size()) - 1; }
    bool operator==(const BandStructure&) const = default;
};

struct Allocation {
    std::vector<double> values;
    BandStructure bands;
};

namespace detail {

inline void require_nonnegative(const EnergyVector& e, const char* who) {
    for (double v : e)
        if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError(std::string(who) + ": entries must be finite and >= 0");
}

inline double total(const EnergyVector& e) {
    double s = 0.0;
    for (double v : e) s += v;
    return s;
}

}  // namespace detail

/// Prefix tolerance used by the staircase and the feasibility checks.
inline double prefix_tolerance(const EnergyVector& e) { return 1e-12 * std::max(1.0, detail::total(e)); }

/// Prefix feasibility: sum_{i<=l} x_i <= sum_{i<=l} e_i for every l, with
/// equality at l = K when `require_terminal` is set.
inline bool is_prefix_feasible(const std::vector<double>& x, const EnergyVector& e, double tol,
                               bool require_terminal = true) {
    if (x.size() != e.size()) throw LengthMismatchError("is_prefix_feasible: length mismatch");
    double sx = 0.0;
    double se = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] < -tol) return false;
        sx += x[i];
        se += e[i];
        if (sx > se + tol) return false;
    }
    return !require_terminal || std::abs(sx - se) <= tol;
}

/// Staircase allocation: from each band start, spread the energy evenly over
/// the longest run that keeps every earlier prefix feasible.
inline Allocation oea(const EnergyVector& e) {
    if (e.empty()) throw DomainError("oea: K must be >= 1");
    detail::require_nonnegative(e, "oea");
    const int K = static_cast<int>(e.size());
    const double tol = prefix_tolerance(e);

    Allocation out;
    out.values.assign(K, 0.0);
    int start = 0;
    while (start < K) {
        int best = start + 1;
        double level = e[start];
        for (int end = K; end > start; --end) {
            double sum = 0.0;
            for (int i = start; i < end; ++i) sum += e[i];
            const double avg = sum / (end - start);
            // spreading avg over [start, end) must not outrun any partial arrival
            bool ok = true;
            double acc = 0.0;
            for (int i = start; i < end && ok; ++i) {
                acc += e[i];
                ok = avg * (i - start + 1) <= acc + tol;
            }
            if (ok) {
                best = end;
                level = avg;
                break;
            }
        }
        for (int i = start; i < best; ++i) out.values[i] = level;
        out.bands.boundaries.push_back(best);
        start = best;
    }
    return out;
}

/// Random feasible vector with the same total: every arrival e_i is split
/// across intervals j >= i by a random deferral pattern.
inline std::vector<double> random_feasible(const EnergyVector& e, std::mt19937_64& rng) {
    const std::size_t K = e.size();
    std::vector<double> x(K, 0.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::exponential_distribution<double> expo(1.0);
    const int style = static_cast<int>(rng() % 3);
    for (std::size_t i = 0; i < K; ++i) {
        if (e[i] == 0.0) continue;
        if (style == 0) {
            // all of e_i to one random later interval
            const std::size_t j = i + static_cast<std::size_t>(rng() % (K - i));
            x[j] += e[i];
            continue;
        }
        std::vector<double> w(K - i);
        double sw = 0.0;
        for (auto& v : w) {
            v = style == 1 ? expo(rng) : (unit(rng) < 0.3 ? expo(rng) : 0.0);
            sw += v;
        }
        if (sw == 0.0) {
            x[i] += e[i];
            continue;
        }
        double given = 0.0;
        for (std::size_t j = 0; j + 1 < w.size(); ++j) {
            const double part = e[i] * (w[j] / sw);
            x[i + j] += part;
            given += part;
        }
        x[K - 1] += e[i] - given;
    }
    return x;
}

/// Samples feasible vectors and checks that `alloc` is majorized by each.
/// Returns false if `alloc` itself is infeasible.
inline bool verify_most_majorized(const Allocation& alloc, const EnergyVector& e, int samples,
                                  std::uint64_t seed) {
    if (alloc.values.size() != e.size()) throw LengthMismatchError("verify_most_majorized: length mismatch");
    const double tol = 1e-9 * std::max(1.0, detail::total(e));
    if (!is_prefix_feasible(alloc.values, e, tol)) return false;
    std::mt19937_64 rng(seed);
    for (int s = 0; s < samples; ++s) {
        const auto x = random_feasible(e, rng);
        if (!majorization::is_majorized(alloc.values, x, tol)) return false;
    }
    return true;
}

/// Drops leading intervals with no TX arrival; their RX energy is carried into
/// the first kept interval. Returns (e_t', e_r', dropped count).
inline std::tuple<EnergyVector, EnergyVector, int> normalize_profile(const EnergyVector& e_t,
                                                                      const EnergyVector& e_r) {
    if (e_t.size() != e_r.size()) throw LengthMismatchError("normalize_profile: length mismatch");
    detail::require_nonnegative(e_t, "normalize_profile");
    detail::require_nonnegative(e_r, "normalize_profile");
    std::size_t first = 0;
    while (first < e_t.size() && e_t[first] == 0.0) ++first;
    if (first == e_t.size()) throw InfeasibleError("normalize_profile: TX profile is identically zero");
    EnergyVector t(e_t.begin() + first, e_t.end());
    EnergyVector r(e_r.begin() + first, e_r.end());
    for (std::size_t i = 0; i < first; ++i) r[0] += e_r[i];
    return {std::move(t), std::move(r), static_cast<int>(first)};
}

}  // namespace ehfo::oea

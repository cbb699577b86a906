// SPDX-License-Identifier: Apache-2.0
//
// Offline policies (p_k, q_k, tau_k) for a harvesting TX/RX pair: RX-only
// staircase, separable joint solution for similar profiles, a general joint
// solver, the greedy baseline and optimality certificates.
//
// Units follow rate_models.hpp: TX feasibility is L*T*sum(p) <= sum(e_t) and
// RX feasibility is L*sum(q) <= sum(e_r), prefix-wise.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ehfo/errors.hpp"
#include "ehfo/numerics.hpp"
#include "ehfo/oea.hpp"
#include "ehfo/profiles.hpp"
#include "ehfo/rate_models.hpp"

namespace ehfo::optimizer {

using profiles::EHProfile;
using rates::RateModelParams;

enum class TxModeKind { constant_power, harvesting };

struct TxMode {
    TxModeKind kind = TxModeKind::harvesting;
    double p = 0.0;  ///< downlink energy per channel use, constant_power only

    static TxMode constant_power(double p) { return {TxModeKind::constant_power, p}; }
    static TxMode harvesting() { return {TxModeKind::harvesting, 0.0}; }
};

struct Scenario {
    EHProfile profile;
    RateModelParams params;
    TxMode tx_mode;

    int K() const { return profile.K(); }

    void validate() const {
        profile.validate();
        params.validate();
        if (profile.T != params.T) throw DomainError("Scenario: profile.T and params.T differ");
        if (tx_mode.kind == TxModeKind::constant_power && (!(tx_mode.p > 0.0) || !std::isfinite(tx_mode.p)))
            throw DomainError("Scenario: constant_power requires p > 0");
    }
};

enum class ObjectiveKind { exact, upper_u, upper_ub };
enum class Bound { upper_u, upper_ub };

inline const char* to_string(ObjectiveKind k) {
    switch (k) {
        case ObjectiveKind::exact: return "exact";
        case ObjectiveKind::upper_u: return "upper_u";
        case ObjectiveKind::upper_ub: return "upper_ub";
    }
    return "?";
}

struct Policy {
    std::vector<double> p;
    std::vector<double> q;
    std::vector<double> tau;
    ObjectiveKind objective_kind = ObjectiveKind::upper_ub;

    int K() const { return static_cast<int>(p.size()); }
};

struct SolverStats {
    int iterations = 0;
    double gap = std::numeric_limits<double>::infinity();
    double objective = 0.0;
    bool converged = false;
};

/// The general solver hit max_iters. Carries the best feasible iterate.
class NonConvergenceError : public std::runtime_error {
public:
    NonConvergenceError(const std::string& what, Policy best, SolverStats stats)
        : std::runtime_error(what), best_(std::move(best)), stats_(stats) {}
    const Policy& best() const noexcept { return best_; }
    const SolverStats& stats() const noexcept { return stats_; }
    double gap() const noexcept { return stats_.gap; }

private:
    Policy best_;
    SolverStats stats_;
};

namespace detail {

inline double bound_dtau(Bound bound, double p, double q, double tau, const RateModelParams& params) {
    return bound == Bound::upper_u ? rates::d_rate_upper_u_dtau(p, q, tau, params)
                                   : rates::d_rate_upper_ub_dtau(p, q, tau, params);
}

// Maximiser of the bound in tau without the p == 0 convention. The derivative
// is +infinity at tau = 0+ whenever q > 0, so the root is interior.
inline double tau_raw(Bound bound, double p, double q, const RateModelParams& params) {
    if (q <= 0.0) return 0.0;
    if (bound == Bound::upper_u && p <= 0.0) return 0.0;
    const double T = params.T;
    const double s = q / params.sigma2;
    const double lo = 1e-9 * std::min(T, s);
    const double hi = T * (1.0 - 1e-9);
    auto d = [&](double tau) { return bound_dtau(bound, p, q, tau, params); };
    if (d(lo) <= 0.0) return lo;
    if (d(hi) >= 0.0) return hi;
    return numerics::find_root(d, lo, hi, 1e-13 * T);
}

}  // namespace detail

/// Maximiser of the chosen bound over tau in [0, T) at fixed (p, q).
/// Zero when q == 0, and zero by convention when p == 0.
inline double solve_tau_star(double p, double q, const RateModelParams& params, Bound bound) {
    params.validate();
    if (!(p >= 0.0) || !(q >= 0.0)) throw DomainError("solve_tau_star: p and q must be >= 0");
    if (p == 0.0 || q == 0.0) return 0.0;
    return detail::tau_raw(bound, p, q, params);
}

/// The bound at its optimal tau, i.e. the per-interval objective after the
/// feedback duration has been eliminated.
inline double reduced_rate(double p, double q, const RateModelParams& params, Bound bound) {
    const double tau = solve_tau_star(p, q, params, bound);
    const rates::IntervalAllocation a{p, q, tau};
    return bound == Bound::upper_u ? rates::rate_upper_u(a, params) : rates::rate_upper_ub(a, params);
}

inline double rate_under(ObjectiveKind kind, const rates::IntervalAllocation& a, const RateModelParams& params) {
    switch (kind) {
        case ObjectiveKind::exact: return rates::rate_exact(a, params);
        case ObjectiveKind::upper_u: return rates::rate_upper_u(a, params);
        case ObjectiveKind::upper_ub: return rates::rate_upper_ub(a, params);
    }
    return 0.0;
}

/// Sum over intervals of the policy's own objective.
inline double policy_objective(const Policy& pol, const Scenario& s) {
    double total = 0.0;
    for (int k = 0; k < pol.K(); ++k)
        total += rate_under(pol.objective_kind, {pol.p[k], pol.q[k], pol.tau[k]}, s.params);
    return total;
}

struct FeasibilityReport {
    bool domain = true;         ///< every (p, q, tau) is a valid allocation
    bool rx_prefix = true;      ///< L * prefix(q) <= prefix(e_r)
    bool tx_prefix = true;      ///< L * T * prefix(p) <= prefix(e_t), harvesting only
    bool rx_terminal = true;
    bool tx_terminal = true;
    int first_violation = -1;   ///< 0-based interval index, -1 if none

    bool feasible() const { return domain && rx_prefix && tx_prefix; }
    bool all() const { return feasible() && rx_terminal && tx_terminal; }
};

/// Prefix checks in Joules with tolerance rel_tol * (total energy of the node).
inline FeasibilityReport check_feasibility(const Policy& pol, const Scenario& s, double rel_tol = 1e-10) {
    FeasibilityReport r;
    const int K = s.K();
    if (pol.K() != K || static_cast<int>(pol.q.size()) != K || static_cast<int>(pol.tau.size()) != K)
        throw LengthMismatchError("check_feasibility: policy length differs from K");
    const double L = s.profile.L;
    const double T = s.params.T;
    double tot_t = 0.0;
    double tot_r = 0.0;
    for (int k = 0; k < K; ++k) {
        tot_t += s.profile.e_t[k];
        tot_r += s.profile.e_r[k];
    }
    const double tol_t = rel_tol * std::max(1.0, tot_t);
    const double tol_r = rel_tol * std::max(1.0, tot_r);
    auto flag = [&r](int k) {
        if (r.first_violation < 0) r.first_violation = k;
    };
    double use_t = 0.0, got_t = 0.0, use_r = 0.0, got_r = 0.0;
    for (int k = 0; k < K; ++k) {
        try {
            rates::validate({pol.p[k], pol.q[k], pol.tau[k]}, s.params);
        } catch (const DomainError&) {
            r.domain = false;
            flag(k);
        }
        use_r += L * pol.q[k];
        got_r += s.profile.e_r[k];
        if (use_r > got_r + tol_r) {
            r.rx_prefix = false;
            flag(k);
        }
        if (s.tx_mode.kind == TxModeKind::harvesting) {
            use_t += L * T * pol.p[k];
            got_t += s.profile.e_t[k];
            if (use_t > got_t + tol_t) {
                r.tx_prefix = false;
                flag(k);
            }
        } else if (pol.p[k] != s.tx_mode.p) {
            r.domain = false;
            flag(k);
        }
    }
    r.rx_terminal = std::abs(use_r - got_r) <= tol_r;
    r.tx_terminal = s.tx_mode.kind != TxModeKind::harvesting || std::abs(use_t - got_t) <= tol_t;
    return r;
}

inline std::vector<double> scaled(const std::vector<double>& e, double divisor) {
    std::vector<double> out(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) out[i] = e[i] / divisor;
    return out;
}

inline void fill_tau(Policy& pol, const RateModelParams& params, Bound bound) {
    pol.tau.resize(pol.p.size());
    for (int k = 0; k < pol.K(); ++k) pol.tau[k] = solve_tau_star(pol.p[k], pol.q[k], params, bound);
}

/// Constant downlink power; feedback energy from the RX staircase.
inline Policy optimize_rx_only(const Scenario& s) {
    s.validate();
    if (s.tx_mode.kind != TxModeKind::constant_power)
        throw DomainError("optimize_rx_only: requires constant_power tx_mode");
    Policy pol;
    pol.objective_kind = ObjectiveKind::upper_u;
    pol.p.assign(s.K(), s.tx_mode.p);
    pol.q = oea::oea(scaled(s.profile.e_r, s.profile.L)).values;
    fill_tau(pol, s.params, Bound::upper_u);
    return pol;
}

/// Similar profiles: both staircases share their band boundaries.
inline bool check_similar(const std::vector<double>& e_t, const std::vector<double>& e_r, int L, double T) {
    if (e_t.size() != e_r.size()) throw LengthMismatchError("check_similar: length mismatch");
    if (L < 1 || !(T > 0.0)) throw DomainError("check_similar: L >= 1 and T > 0 required");
    return oea::oea(scaled(e_t, L * T)).bands == oea::oea(scaled(e_r, L)).bands;
}

namespace detail {

struct Normalized {
    std::vector<double> e_t;
    std::vector<double> e_r;
    int offset = 0;
};

inline Normalized normalize(const Scenario& s) {
    auto [t, r, off] = oea::normalize_profile(s.profile.e_t, s.profile.e_r);
    return {std::move(t), std::move(r), off};
}

// Pads a policy on the normalised horizon with silent leading intervals.
inline Policy expand(const Policy& inner, int offset) {
    Policy out;
    out.objective_kind = inner.objective_kind;
    out.p.assign(offset, 0.0);
    out.q.assign(offset, 0.0);
    out.tau.assign(offset, 0.0);
    out.p.insert(out.p.end(), inner.p.begin(), inner.p.end());
    out.q.insert(out.q.end(), inner.q.begin(), inner.q.end());
    out.tau.insert(out.tau.end(), inner.tau.begin(), inner.tau.end());
    return out;
}

}  // namespace detail

/// Separable joint optimum; throws NotSimilarError unless the normalised
/// profiles share their band structure.
inline Policy optimize_joint_similar(const Scenario& s) {
    s.validate();
    if (s.tx_mode.kind != TxModeKind::harvesting) throw DomainError("optimize_joint_similar: requires harvesting tx_mode");
    const auto n = detail::normalize(s);
    const double LT = s.profile.L * s.params.T;
    const auto pa = oea::oea(scaled(n.e_t, LT));
    const auto qa = oea::oea(scaled(n.e_r, s.profile.L));
    if (!(pa.bands == qa.bands)) throw NotSimilarError("optimize_joint_similar: TX and RX band structures differ");
    Policy inner;
    inner.objective_kind = ObjectiveKind::upper_ub;
    inner.p = pa.values;
    inner.q = qa.values;
    fill_tau(inner, s.params, Bound::upper_ub);
    return detail::expand(inner, n.offset);
}

/// Spends exactly what arrives in each interval.
inline Policy greedy_policy(const Scenario& s) {
    s.validate();
    Policy pol;
    pol.q = scaled(s.profile.e_r, s.profile.L);
    Bound bound;
    if (s.tx_mode.kind == TxModeKind::constant_power) {
        pol.p.assign(s.K(), s.tx_mode.p);
        pol.objective_kind = ObjectiveKind::upper_u;
        bound = Bound::upper_u;
    } else {
        pol.p = scaled(s.profile.e_t, s.profile.L * s.params.T);
        pol.objective_kind = ObjectiveKind::upper_ub;
        bound = Bound::upper_ub;
    }
    fill_tau(pol, s.params, bound);
    return pol;
}

namespace detail {

// Value and (p, q)-gradient of max_tau R^ub. Gradients follow from the
// envelope theorem at the optimal tau; at q == 0 the q-gradient is the
// one-sided limit, approximated at q_floor.
struct Reduced {
    double value = 0.0;
    double dp = 0.0;
    double dq = 0.0;
};

inline Reduced reduced_ub(double p, double q, double q_floor, const RateModelParams& params) {
    Reduced r;
    const double tau = tau_raw(Bound::upper_ub, p, q, params);
    r.value = rates::rate_upper_ub({p, q, tau}, params);
    const double qg = std::max(q, q_floor);
    const double tg = qg == q ? tau : tau_raw(Bound::upper_ub, p, qg, params);
    const auto [dp, dq] = rates::grad_rate_upper_ub(p, qg, tg, params);
    r.dp = dp;
    r.dq = dq;
    return r;
}

// Best eligible target for arrival i: largest coefficient, earliest on ties.
inline int oracle_target(const std::vector<double>& c, int i) {
    int best = i;
    for (int j = i + 1; j < static_cast<int>(c.size()); ++j)
        if (c[j] > c[best]) best = j;
    return best;
}

}  // namespace detail

/// Exact maximum of sum_j c_j u_j over usages u reachable by deferring each
/// arrival w_i to intervals j >= i.
inline double linear_oracle_value(const std::vector<double>& w, const std::vector<double>& c) {
    if (w.size() != c.size()) throw LengthMismatchError("linear_oracle_value: length mismatch");
    double v = 0.0;
    for (int i = 0; i < static_cast<int>(w.size()); ++i) v += w[i] * c[detail::oracle_target(c, i)];
    return v;
}

/// Usage vector attaining linear_oracle_value.
inline std::vector<double> linear_oracle_usage(const std::vector<double>& w, const std::vector<double>& c) {
    if (w.size() != c.size()) throw LengthMismatchError("linear_oracle_usage: length mismatch");
    std::vector<double> u(w.size(), 0.0);
    for (int i = 0; i < static_cast<int>(w.size()); ++i) u[detail::oracle_target(c, i)] += w[i];
    return u;
}

/// Conditional-gradient gap max_s <c, s - u> over the deferral polytope of w.
/// Non-negative for feasible u; zero exactly at maximisers of a concave
/// objective with gradient c.
inline double conditional_gradient_gap(const std::vector<double>& w, const std::vector<double>& c,
                                       const std::vector<double>& u) {
    if (u.size() != c.size()) throw LengthMismatchError("conditional_gradient_gap: length mismatch");
    double cu = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) cu += c[j] * u[j];
    return linear_oracle_value(w, c) - cu;
}

struct GeneralOptions {
    int max_iters = 10000;
    /// Accept once the conditional-gradient gap is <= tol * max(1, |objective|).
    double tol = 1e-10;
};

namespace detail {

// Log-barrier Newton method for
//   max sum_j Rt(p_j, q_j)  s.t.  prefix(p) <= prefix(a), sum p = sum a,
//                                 prefix(q) <= prefix(c), sum q = sum c,
// with Rt the tau-reduced R^ub. Leading intervals with no RX arrival have
// q fixed at zero; a[0] > 0 is guaranteed by profile normalisation.
class BarrierSolver {
public:
    BarrierSolver(std::vector<double> a, std::vector<double> c, const RateModelParams& params)
        : a_(std::move(a)), c_(std::move(c)), params_(params), K_(static_cast<int>(a_.size())) {
        cum_a_.resize(K_);
        cum_c_.resize(K_);
        double sa = 0.0, sc = 0.0;
        for (int j = 0; j < K_; ++j) {
            sa += a_[j];
            sc += c_[j];
            cum_a_[j] = sa;
            cum_c_[j] = sc;
        }
        r0_ = 0;
        while (r0_ < K_ && cum_c_[r0_] <= 0.0) ++r0_;
        nr_ = K_ - r0_;
        q_floor_ = 1e-10 * std::max(sc / K_, 1e-300);
    }

    int K() const { return K_; }

    // Strictly interior start: mostly the staircase point, blended with a
    // vector that keeps every prefix constraint slack.
    void initialise() {
        p_ = blend(oea::oea(a_).values, cum_a_, 0);
        q_.assign(K_, 0.0);
        if (nr_ > 0) {
            const auto qo = oea::oea(c_).values;
            const auto qi = blend(qo, cum_c_, r0_);
            for (int j = r0_; j < K_; ++j) q_[j] = qi[j];
        }
    }

    // Follows the central path until the conditional-gradient gap of the
    // iterate is <= gap_target. Returns Newton iterations used, or -1 if the
    // budget or the path ran out first.
    int run(double gap_target, int max_iters) {
        if (K_ == 1) {
            p_ = a_;
            q_ = c_;
            return 0;
        }
        double t = 1.0;
        int iters = 0;
        while (t < 1e16) {
            // Near the end of the path the decrement hits a rounding floor,
            // so centering is capped.
            for (int inner = 0; inner < 50; ++inner) {
                if (iters >= max_iters) return -1;
                ++iters;
                if (newton_step(t) <= 1e-9) break;
            }
            if (cg_gap() <= gap_target) return iters;
            t *= 20.0;
        }
        return -1;
    }

    double cg_gap() const {
        std::vector<double> gp(K_), gq(K_);
        objective(&gp, &gq);
        for (int j = 0; j < r0_; ++j) gq[j] = 0.0;
        return conditional_gradient_gap(a_, gp, p_) + conditional_gradient_gap(c_, gq, q_);
    }

    const std::vector<double>& p() const { return p_; }
    const std::vector<double>& q() const { return q_; }

    double objective(std::vector<double>* gp = nullptr, std::vector<double>* gq = nullptr) const {
        double u = 0.0;
        for (int j = 0; j < K_; ++j) {
            const auto r = reduced_ub(p_[j], q_[j], q_floor_, params_);
            u += r.value;
            if (gp) (*gp)[j] = r.dp;
            if (gq) (*gq)[j] = r.dq;
        }
        return u;
    }

private:
    std::vector<double> blend(const std::vector<double>& base, const std::vector<double>& cum, int first) const {
        const double cap = cum[first];
        const int n = K_ - first;
        const double d = cap / (2.0 * n);
        std::vector<double> out(K_, 0.0);
        const double theta = 0.05;
        for (int j = first; j < K_; ++j) {
            const double spread = j + 1 < K_ ? d : cum[K_ - 1] - (n - 1) * d;
            out[j] = (1.0 - theta) * base[j] + theta * spread;
        }
        return out;
    }

    int n_vars() const { return K_ + nr_; }

    // Barrier slacks; false if any leaves the interior.
    bool slacks(const std::vector<double>& p, const std::vector<double>& q, std::vector<double>& sp,
                std::vector<double>& sq) const {
        sp.assign(K_, 0.0);
        sq.assign(K_, 0.0);
        double P = 0.0, Q = 0.0;
        for (int l = 0; l < K_; ++l) {
            if (!(p[l] > 0.0)) return false;
            P += p[l];
            if (l + 1 < K_) {
                sp[l] = cum_a_[l] - P;
                if (!(sp[l] > 0.0)) return false;
            }
            if (l >= r0_) {
                if (!(q[l] > 0.0)) return false;
                Q += q[l];
                if (l + 1 < K_) {
                    sq[l] = cum_c_[l] - Q;
                    if (!(sq[l] > 0.0)) return false;
                }
            }
        }
        return true;
    }

    // d/ds of the barrier objective at (p, q) + s * (dp, dq).
    double directional(double t, double s, const std::vector<double>& dp, const std::vector<double>& dq) const {
        std::vector<double> p(K_), q(K_), sp, sq;
        for (int j = 0; j < K_; ++j) {
            p[j] = p_[j] + s * dp[j];
            q[j] = q_[j] + s * dq[j];
        }
        if (!slacks(p, q, sp, sq)) return -std::numeric_limits<double>::infinity();
        double d = 0.0;
        double DP = 0.0, DQ = 0.0;
        for (int j = 0; j < K_; ++j) {
            const auto r = reduced_ub(p[j], q[j], q_floor_, params_);
            d += t * r.dp * dp[j] + dp[j] / p[j];
            DP += dp[j];
            if (j + 1 < K_) d -= DP / sp[j];
            if (j >= r0_) {
                d += t * r.dq * dq[j] + dq[j] / q[j];
                DQ += dq[j];
                if (j + 1 < K_) d -= DQ / sq[j];
            }
        }
        return d;
    }

    // One damped Newton step on t * U + barrier; returns the Newton decrement
    // lambda^2 / 2 before the step.
    double newton_step(double t) {
        const int n = n_vars();
        const int neq = 1 + (nr_ > 0 ? 1 : 0);
        std::vector<double> sp, sq;
        if (!slacks(p_, q_, sp, sq)) throw InfeasibleError("optimize_joint_general: iterate left the interior");

        Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n, n);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
        auto qi = [this](int j) { return K_ + (j - r0_); };

        // objective part, 2x2 Hessian blocks by central differences of the
        // envelope gradient
        for (int j = 0; j < K_; ++j) {
            const bool qfree = j >= r0_;
            const auto r = reduced_ub(p_[j], q_[j], q_floor_, params_);
            rhs(j) += t * r.dp + 1.0 / p_[j];
            kkt(j, j) -= 1.0 / (p_[j] * p_[j]);
            const double hp = 1e-5 * p_[j];
            const auto rp1 = reduced_ub(p_[j] + hp, q_[j], q_floor_, params_);
            const auto rp0 = reduced_ub(p_[j] - hp, q_[j], q_floor_, params_);
            const double hpp = (rp1.dp - rp0.dp) / (2.0 * hp);
            kkt(j, j) += t * hpp;
            if (qfree) {
                const int k = qi(j);
                rhs(k) += t * r.dq + 1.0 / q_[j];
                kkt(k, k) -= 1.0 / (q_[j] * q_[j]);
                const double hq = 1e-5 * q_[j];
                const auto rq1 = reduced_ub(p_[j], q_[j] + hq, q_floor_, params_);
                const auto rq0 = reduced_ub(p_[j], q_[j] - hq, q_floor_, params_);
                const double hqq = (rq1.dq - rq0.dq) / (2.0 * hq);
                const double hpq = 0.5 * ((rp1.dq - rp0.dq) / (2.0 * hp) + (rq1.dp - rq0.dp) / (2.0 * hq));
                kkt(k, k) += t * hqq;
                kkt(j, k) += t * hpq;
                kkt(k, j) += t * hpq;
            }
        }
        // prefix barriers: d/dp_i = -sum_{l >= i} 1/s_l, Hessian -sum_{l >= max(i,j)} 1/s_l^2
        auto add_prefix = [&](const std::vector<double>& s, int first, auto index) {
            std::vector<double> g1(K_ + 1, 0.0), g2(K_ + 1, 0.0);
            for (int l = K_ - 2; l >= first; --l) {
                g1[l] = g1[l + 1] + 1.0 / s[l];
                g2[l] = g2[l + 1] + 1.0 / (s[l] * s[l]);
            }
            for (int i = first; i < K_; ++i) {
                rhs(index(i)) -= g1[i];
                for (int j = first; j < K_; ++j) kkt(index(i), index(j)) -= g2[std::max(i, j)];
            }
        };
        add_prefix(sp, 0, [](int j) { return j; });
        if (nr_ > 0) add_prefix(sq, r0_, qi);

        // Equality-constrained Newton step through the Schur complement of
        // N = -H (positive definite): d = N^{-1} (g + E^T nu), E d = 0.
        const Eigen::MatrixXd N = -kkt.topLeftCorner(n, n);
        const Eigen::VectorXd g = rhs.head(n);
        Eigen::MatrixXd E = Eigen::MatrixXd::Zero(neq, n);
        for (int j = 0; j < K_; ++j) E(0, j) = 1.0;
        for (int j = r0_; j < K_; ++j) E(neq - 1, qi(j)) = 1.0;
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(N);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
            throw ToleranceError("optimize_joint_general: barrier Hessian not definite", 0.0);
        const Eigen::VectorXd ng = ldlt.solve(g);
        const Eigen::MatrixXd ne = ldlt.solve(E.transpose());
        const Eigen::MatrixXd S = E * ne;
        const Eigen::VectorXd nu = S.ldlt().solve(-(E * ng));
        const Eigen::VectorXd d = ng + ne * nu;
        std::vector<double> dp(K_, 0.0), dq(K_, 0.0);
        double mean_p = 0.0, mean_q = 0.0;
        for (int j = 0; j < K_; ++j) mean_p += d(j) / K_;
        for (int j = r0_; j < K_; ++j) mean_q += d(qi(j)) / nr_;
        double dec = 0.0;
        for (int j = 0; j < K_; ++j) {
            dp[j] = d(j) - mean_p;
            dec += g(j) * dp[j];
        }
        for (int j = r0_; j < K_; ++j) {
            dq[j] = d(qi(j)) - mean_q;
            dec += g(qi(j)) * dq[j];
        }
        if (!(dec > 0.0)) return 0.0;

        // exact line search on the directional derivative, inside the domain
        double s_max = 1.0;
        std::vector<double> tp(K_), tq(K_), tsp, tsq;
        for (int tries = 0; tries < 200; ++tries) {
            for (int j = 0; j < K_; ++j) {
                tp[j] = p_[j] + s_max * dp[j];
                tq[j] = q_[j] + s_max * dq[j];
            }
            if (slacks(tp, tq, tsp, tsq)) break;
            s_max *= 0.5;
        }
        double step = s_max;
        auto psi = [&](double s) { return directional(t, s, dp, dq); };
        if (psi(s_max) < 0.0) step = numerics::find_root(psi, 0.0, s_max, 1e-12 * s_max);
        for (int j = 0; j < K_; ++j) {
            p_[j] += step * dp[j];
            q_[j] += step * dq[j];
        }
        return 0.5 * dec;
    }

    std::vector<double> a_, c_;
    RateModelParams params_;
    int K_;
    int r0_ = 0;
    int nr_ = 0;
    double q_floor_ = 0.0;
    std::vector<double> cum_a_, cum_c_;
    std::vector<double> p_, q_;
};

}  // namespace detail

/// Maximises sum_k R^ub over both prefix polytopes. tau is eliminated per
/// interval by exact scalar maximisation; (p, q) follow a log-barrier Newton
/// path. Termination is certified by the conditional-gradient gap computed
/// with the exact deferral linear oracle.
inline Policy optimize_joint_general(const Scenario& s, const GeneralOptions& opt = {},
                                     SolverStats* stats_out = nullptr) {
    s.validate();
    if (s.tx_mode.kind != TxModeKind::harvesting) throw DomainError("optimize_joint_general: requires harvesting tx_mode");
    if (opt.max_iters < 1 || !(opt.tol > 0.0)) throw DomainError("optimize_joint_general: invalid options");
    const auto n = detail::normalize(s);
    const auto a = scaled(n.e_t, s.profile.L * s.params.T);
    const auto c = scaled(n.e_r, s.profile.L);
    detail::BarrierSolver solver(a, c, s.params);
    solver.initialise();

    SolverStats stats;
    // the objective only grows along the path, so the start bounds the scale
    const double u0 = solver.objective();
    const int used = solver.run(opt.tol * std::max(1.0, std::abs(u0)), opt.max_iters);
    stats.iterations = used < 0 ? opt.max_iters : used;
    stats.objective = solver.objective();
    stats.gap = solver.cg_gap();
    stats.converged = stats.gap <= opt.tol * std::max(1.0, std::abs(stats.objective));

    Policy inner;
    inner.objective_kind = ObjectiveKind::upper_ub;
    inner.p = solver.p();
    inner.q = solver.q();
    fill_tau(inner, s.params, Bound::upper_ub);
    Policy out = detail::expand(inner, n.offset);
    if (stats_out) *stats_out = stats;
    if (!stats.converged)
        throw NonConvergenceError("optimize_joint_general: gap " + std::to_string(stats.gap) + " after " +
                                      std::to_string(stats.iterations) + " iterations",
                                  out, stats);
    return out;
}

/// Conditional-gradient gap of a harvesting policy for the joint R^ub problem,
/// relative to max(1, objective). Intervals dropped by normalisation must be
/// silent in `pol`.
inline double joint_gap(const Policy& pol, const Scenario& s) {
    s.validate();
    if (s.tx_mode.kind != TxModeKind::harvesting) throw DomainError("joint_gap: requires harvesting tx_mode");
    if (pol.K() != s.K() || static_cast<int>(pol.q.size()) != s.K())
        throw LengthMismatchError("joint_gap: policy length differs from K");
    const auto n = detail::normalize(s);
    const auto a = scaled(n.e_t, s.profile.L * s.params.T);
    const auto c = scaled(n.e_r, s.profile.L);
    const int Kn = static_cast<int>(a.size());
    double sc = 0.0;
    for (double v : c) sc += v;
    const double q_floor = 1e-10 * std::max(sc / Kn, 1e-300);
    std::vector<double> p(pol.p.begin() + n.offset, pol.p.end());
    std::vector<double> q(pol.q.begin() + n.offset, pol.q.end());
    std::vector<double> gp(Kn), gq(Kn);
    double u = 0.0;
    for (int j = 0; j < Kn; ++j) {
        const auto r = detail::reduced_ub(p[j], q[j], q_floor, s.params);
        u += r.value;
        gp[j] = r.dp;
        gq[j] = r.dq;
    }
    // q fixed at zero before the first RX arrival, as in the solver
    int r0 = 0;
    for (double acc = 0.0; r0 < Kn && (acc += c[r0]) <= 0.0;) ++r0;
    for (int j = 0; j < r0; ++j) gq[j] = 0.0;
    const double gap = conditional_gradient_gap(a, gp, p) + conditional_gradient_gap(c, gq, q);
    return gap / std::max(1.0, std::abs(u));
}

struct CertificateReport {
    bool monotone = true;
    bool buffer_emptying = true;
    bool terminal_equality = true;
    int failing_interval = -1;  ///< 0-based, first interval that broke a check
    std::string detail;

    bool all() const { return monotone && buffer_emptying && terminal_equality; }
};

/// Structural optimality conditions: non-decreasing p and q, a buffer emptied
/// wherever the per-interval optimal rate changes, and both buffers drained by
/// the end. `tol` is relative: buffers compare against tol * total energy of
/// the node, rate changes against tol * max(1, total rate).
inline CertificateReport certify_optimality(const Policy& pol, const Scenario& s, double tol = 1e-6) {
    s.validate();
    const int K = s.K();
    if (pol.K() != K || static_cast<int>(pol.q.size()) != K)
        throw LengthMismatchError("certify_optimality: policy length differs from K");
    CertificateReport rep;
    const bool harvesting = s.tx_mode.kind == TxModeKind::harvesting;
    const Bound bound = harvesting ? Bound::upper_ub : Bound::upper_u;
    auto fail = [&rep](int k, const std::string& why) {
        if (rep.failing_interval < 0) {
            rep.failing_interval = k;
            rep.detail = why + " at interval " + std::to_string(k + 1);
        }
    };

    double sum_p = 0.0, sum_q = 0.0, tot_t = 0.0, tot_r = 0.0;
    for (int k = 0; k < K; ++k) {
        sum_p += pol.p[k];
        sum_q += pol.q[k];
        tot_t += s.profile.e_t[k];
        tot_r += s.profile.e_r[k];
    }
    for (int k = 0; k + 1 < K; ++k) {
        const bool p_ok = !harvesting || pol.p[k + 1] >= pol.p[k] - tol * sum_p;
        const bool q_ok = pol.q[k + 1] >= pol.q[k] - tol * sum_q;
        if (!p_ok || !q_ok) {
            rep.monotone = false;
            fail(k + 1, !p_ok ? "p decreases" : "q decreases");
        }
    }

    std::vector<double> rate(K);
    double total_rate = 0.0;
    for (int k = 0; k < K; ++k) {
        rate[k] = reduced_rate(pol.p[k], pol.q[k], s.params, bound);
        total_rate += rate[k];
    }
    const double rate_tol = tol * std::max(1.0, total_rate);
    const double buf_tol_t = tol * std::max(1.0, tot_t);
    const double buf_tol_r = tol * std::max(1.0, tot_r);
    const double LT = s.profile.L * s.params.T;
    double buf_t = 0.0, buf_r = 0.0;
    for (int k = 0; k < K; ++k) {
        buf_t += s.profile.e_t[k] - LT * pol.p[k];
        buf_r += s.profile.e_r[k] - s.profile.L * pol.q[k];
        if (k + 1 < K && std::abs(rate[k + 1] - rate[k]) > rate_tol) {
            const bool emptied = buf_r <= buf_tol_r || (harvesting && buf_t <= buf_tol_t);
            if (!emptied) {
                rep.buffer_emptying = false;
                fail(k, "rate changes with both buffers non-empty");
            }
        }
    }
    rep.terminal_equality = std::abs(buf_r) <= buf_tol_r && (!harvesting || std::abs(buf_t) <= buf_tol_t);
    if (!rep.terminal_equality) fail(K - 1, "buffer not drained");
    return rep;
}

}  // namespace ehfo::optimizer

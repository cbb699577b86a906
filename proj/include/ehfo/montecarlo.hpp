// SPDX-License-Identifier: Apache-2.0
//
// Stochastic reference evaluations: random vector quantisation with explicit
// codebooks, and channel-draw averages of the ergodic rate.
//
// Stream layout: draws are split into batches of kBatch consecutive indices.
// Batch k owns an MT19937-64 engine seeded with splitmix64(seed ^ splitmix64(k));
// normals come from Boost's ziggurat normal_distribution on that engine.
// Per-batch (count, mean, M2) triples are merged in a fixed pairwise tree, so
// results do not depend on the thread count.
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>

#include "ehfo/errors.hpp"
#include "ehfo/rate_models.hpp"

namespace ehfo::mc {

inline constexpr std::int64_t kBatch = 8192;
inline constexpr int kMaxBits = 16;

struct SimConfig {
    std::uint64_t seed = 1;
    std::int64_t draws = 100000;
    int M = 4;
    int b = 0;  ///< codebook bits; simulate_rate derives its own from (q, tau)
    int jobs = 1;

    void validate() const {
        if (draws < 1) throw DomainError("SimConfig: draws must be >= 1");
        if (M < 2) throw DomainError("SimConfig: M must be >= 2");
        if (b < 0 || b > kMaxBits) throw DomainError("SimConfig: b must lie in [0, 16]");
        if (jobs < 1) throw DomainError("SimConfig: jobs must be >= 1");
    }
};

struct Estimate {
    double mean = 0.0;
    double std_err = 0.0;
    std::int64_t count = 0;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

namespace detail {

struct Moments {
    std::int64_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void push(double v) {
        ++n;
        const double d = v - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (v - mean);
    }

    static Moments merge(const Moments& a, const Moments& b) {
        if (a.n == 0) return b;
        if (b.n == 0) return a;
        Moments r;
        r.n = a.n + b.n;
        const double d = b.mean - a.mean;
        const double fb = static_cast<double>(b.n) / static_cast<double>(r.n);
        r.mean = a.mean + d * fb;
        r.m2 = a.m2 + b.m2 + d * d * static_cast<double>(a.n) * fb;
        return r;
    }
};

inline Moments reduce_pairwise(std::vector<Moments> v) {
    if (v.empty()) return {};
    while (v.size() > 1) {
        std::vector<Moments> next((v.size() + 1) / 2);
        for (std::size_t i = 0; i < next.size(); ++i)
            next[i] = 2 * i + 1 < v.size() ? Moments::merge(v[2 * i], v[2 * i + 1]) : v[2 * i];
        v.swap(next);
    }
    return v.front();
}

inline Estimate to_estimate(const Moments& m) {
    Estimate e;
    e.mean = m.mean;
    e.count = m.n;
    e.std_err = m.n > 1 ? std::sqrt(m.m2 / static_cast<double>(m.n - 1) / static_cast<double>(m.n)) : 0.0;
    return e;
}

// Runs body(rng, count) per batch, possibly across threads, and reduces.
template <class Body>
Estimate run_batches(std::uint64_t seed, std::int64_t draws, int jobs, Body body) {
    const std::int64_t batches = (draws + kBatch - 1) / kBatch;
    std::vector<Moments> parts(static_cast<std::size_t>(batches));
    auto work = [&](std::int64_t first, std::int64_t stride) {
        for (std::int64_t k = first; k < batches; k += stride) {
            boost::random::mt19937_64 rng(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(k))));
            const std::int64_t n = std::min(kBatch, draws - k * kBatch);
            parts[static_cast<std::size_t>(k)] = body(rng, n);
        }
    };
    const int threads = static_cast<int>(std::min<std::int64_t>(jobs, batches));
    if (threads <= 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
        for (auto& th : pool) th.join();
    }
    return to_estimate(reduce_pairwise(std::move(parts)));
}

// i.i.d. CN(0, 1) entries.
inline void draw_complex_gaussian(boost::random::mt19937_64& rng, boost::random::normal_distribution<double>& n01,
                                  std::vector<std::complex<double>>& v) {
    constexpr double s = 0.70710678118654752440;
    for (auto& z : v) {
        const double re = n01(rng);
        const double im = n01(rng);
        z = {s * re, s * im};
    }
}

inline double squared_norm(const std::vector<std::complex<double>>& v) {
    double s = 0.0;
    for (const auto& z : v) s += std::norm(z);
    return s;
}

// Quantisation quality of one RVQ realisation: the normalised channel h is
// compared against `codewords` fresh isotropic unit vectors. The ratio
// |h^H f|^2 / ||f||^2 is scale free, so codeword entries skip the CN scaling.
inline double rvq_quality(boost::random::mt19937_64& rng, boost::random::normal_distribution<double>& n01,
                          const std::vector<std::complex<double>>& h_unit, std::int64_t codewords) {
    const std::size_t M = h_unit.size();
    double best = 0.0;
    for (std::int64_t c = 0; c < codewords; ++c) {
        double nf = 0.0, re = 0.0, im = 0.0;
        for (std::size_t i = 0; i < M; ++i) {
            const double fr = n01(rng);
            const double fi = n01(rng);
            const double hr = h_unit[i].real();
            const double hi = h_unit[i].imag();
            nf += fr * fr + fi * fi;
            re += hr * fr + hi * fi;
            im += hr * fi - hi * fr;
        }
        best = std::max(best, (re * re + im * im) / nf);
    }
    return best;
}

}  // namespace detail

/// Mean quantisation quality max_f |h~^H f|^2 over random codebooks of 2^b
/// isotropic unit vectors.
inline Estimate simulate_nu(const SimConfig& config) {
    config.validate();
    const std::int64_t codewords = std::int64_t{1} << config.b;
    return detail::run_batches(config.seed, config.draws, config.jobs, [&](boost::random::mt19937_64& rng, std::int64_t n) {
        boost::random::normal_distribution<double> n01;
        std::vector<std::complex<double>> h(config.M);
        detail::Moments m;
        for (std::int64_t d = 0; d < n; ++d) {
            detail::draw_complex_gaussian(rng, n01, h);
            const double nh = std::sqrt(detail::squared_norm(h));
            for (auto& z : h) z /= nh;
            m.push(detail::rvq_quality(rng, n01, h, codewords));
        }
        return m;
    });
}

/// Codebook bits used by simulate_rate: feedback_bits rounded to nearest.
inline int simulation_bits(const rates::IntervalAllocation& a, const rates::RateModelParams& params) {
    const double bits = a.tau > 0.0 ? rates::feedback_bits(a.q, a.tau, params.sigma2) : 0.0;
    const double r = std::nearbyint(bits);
    if (r > kMaxBits) throw DomainError("simulate_rate: implied codebook exceeds 16 bits");
    return static_cast<int>(r);
}

/// Channel-draw estimate of t * E[log2(1 + (p/t) ||h||^2 nu)]. The codebook
/// size comes from simulation_bits; config.b and config.M are ignored in
/// favour of the allocation and params.
inline Estimate simulate_rate(const rates::IntervalAllocation& a, const rates::RateModelParams& params,
                              const SimConfig& config) {
    rates::validate(a, params);
    SimConfig cfg = config;
    cfg.M = params.M;
    cfg.b = 0;
    cfg.validate();
    if (a.p == 0.0) return {0.0, 0.0, config.draws};
    const std::int64_t codewords = std::int64_t{1} << simulation_bits(a, params);
    const double t = 1.0 - a.tau / params.T;
    const double snr = a.p / t;
    return detail::run_batches(cfg.seed, cfg.draws, cfg.jobs, [&](boost::random::mt19937_64& rng, std::int64_t n) {
        boost::random::normal_distribution<double> n01;
        std::vector<std::complex<double>> h(params.M);
        detail::Moments m;
        for (std::int64_t d = 0; d < n; ++d) {
            detail::draw_complex_gaussian(rng, n01, h);
            const double gain = detail::squared_norm(h);
            const double nh = std::sqrt(gain);
            for (auto& z : h) z /= nh;
            const double nu = detail::rvq_quality(rng, n01, h, codewords);
            m.push(t * std::log1p(snr * gain * nu) * rates::kLog2e);
        }
        return m;
    });
}

/// E[f(||h||^2)] for h with M i.i.d. CN(0, 1) entries.
inline Estimate simulate_gain_functional(const std::function<double(double)>& f, int M, std::int64_t draws,
                                         std::uint64_t seed, int jobs = 1) {
    SimConfig cfg{seed, draws, M, 0, jobs};
    cfg.validate();
    return detail::run_batches(seed, draws, jobs, [&](boost::random::mt19937_64& rng, std::int64_t n) {
        boost::random::normal_distribution<double> n01;
        std::vector<std::complex<double>> h(M);
        detail::Moments m;
        for (std::int64_t d = 0; d < n; ++d) {
            detail::draw_complex_gaussian(rng, n01, h);
            m.push(f(detail::squared_norm(h)));
        }
        return m;
    });
}

/// Sample correlation between nu and ||h||^2 under RVQ with 2^b codewords.
inline double simulate_nu_gain_correlation(const SimConfig& config) {
    config.validate();
    const std::int64_t codewords = std::int64_t{1} << config.b;
    // single stream: the statistic is not a mean, so batches are not merged
    boost::random::mt19937_64 rng(splitmix64(config.seed));
    boost::random::normal_distribution<double> n01;
    std::vector<std::complex<double>> h(config.M);
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::int64_t d = 0; d < config.draws; ++d) {
        detail::draw_complex_gaussian(rng, n01, h);
        const double gain = detail::squared_norm(h);
        const double nh = std::sqrt(gain);
        for (auto& z : h) z /= nh;
        const double nu = detail::rvq_quality(rng, n01, h, codewords);
        sx += nu;
        sy += gain;
        sxx += nu * nu;
        syy += gain * gain;
        sxy += nu * gain;
    }
    const double n = static_cast<double>(config.draws);
    const double cov = sxy / n - (sx / n) * (sy / n);
    const double vx = sxx / n - (sx / n) * (sx / n);
    const double vy = syy / n - (sy / n) * (sy / n);
    return cov / std::sqrt(vx * vy);
}

}  // namespace ehfo::mc

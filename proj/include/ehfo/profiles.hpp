// SPDX-License-Identifier: Apache-2.0
//
// Harvesting profiles: construction from irradiance, synthetic draws, and the
// `k,e_t_joules,e_r_joules` text format.
#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ehfo/errors.hpp"

namespace ehfo::profiles {

/// Energies are Joules per interval. T counts channel uses per frame.
struct EHProfile {
    std::vector<double> e_t;
    std::vector<double> e_r;
    int L = 18000;
    double T = 200.0;
    double delta = 3600.0;

    int K() const { return static_cast<int>(e_t.size()); }

    void validate() const {
        if (e_t.empty()) throw DomainError("EHProfile: K must be >= 1");
        if (e_t.size() != e_r.size()) throw LengthMismatchError("EHProfile: e_t and e_r lengths differ");
        for (std::size_t k = 0; k < e_t.size(); ++k) {
            if (!(e_t[k] >= 0.0) || !std::isfinite(e_t[k]) || !(e_r[k] >= 0.0) || !std::isfinite(e_r[k]))
                throw DomainError("EHProfile: energies must be finite and >= 0 (interval " +
                                  std::to_string(k + 1) + ")");
        }
        if (L < 1) throw DomainError("EHProfile: L must be >= 1");
        if (!(T > 0.0) || !std::isfinite(T)) throw DomainError("EHProfile: T must be positive");
        if (!(delta > 0.0) || !std::isfinite(delta)) throw DomainError("EHProfile: delta must be positive");
    }
};

/// e_k = I_k * area * rho * delta.
inline std::vector<double> from_irradiance(const std::vector<double>& irradiance, double area, double rho,
                                           double delta) {
    if (!(area > 0.0)) throw DomainError("from_irradiance: area must be positive");
    if (!(rho > 0.0 && rho <= 1.0)) throw DomainError("from_irradiance: rho must lie in (0, 1]");
    if (!(delta > 0.0)) throw DomainError("from_irradiance: delta must be positive");
    std::vector<double> e;
    e.reserve(irradiance.size());
    for (double i : irradiance) {
        if (!(i >= 0.0) || !std::isfinite(i)) throw DomainError("from_irradiance: irradiance must be >= 0");
        e.push_back(i * area * rho * delta);
    }
    return e;
}

/// Independent exponential arrivals by inverse CDF on a mt19937_64 stream:
/// all TX draws first, then all RX draws.
inline EHProfile synthetic_exponential(int K, double mean_t, double mean_r, std::uint64_t seed) {
    if (K < 1) throw DomainError("synthetic_exponential: K must be >= 1");
    if (!(mean_t > 0.0) || !(mean_r > 0.0)) throw DomainError("synthetic_exponential: means must be positive");
    std::mt19937_64 rng(seed);
    auto draw = [&rng]() {
        // 53-bit uniform in [0, 1)
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        return -std::log1p(-u);
    };
    EHProfile p;
    p.e_t.resize(K);
    p.e_r.resize(K);
    for (int k = 0; k < K; ++k) p.e_t[k] = mean_t * draw();
    for (int k = 0; k < K; ++k) p.e_r[k] = mean_r * draw();
    return p;
}

inline double hpn_linear(double e, double delta, double sigma2) {
    if (!(delta > 0.0) || !(sigma2 > 0.0)) throw DomainError("hpn: delta and sigma2 must be positive");
    if (!(e >= 0.0)) throw DomainError("hpn: energy must be >= 0");
    return e / (delta * sigma2);
}

/// HPN in dB; -infinity for a zero-energy interval.
inline double hpn_db(double e, double delta, double sigma2) {
    const double lin = hpn_linear(e, delta, sigma2);
    if (lin == 0.0) return -std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(lin);
}

/// Hourly irradiance (W/m^2) of the shipped synthetic solar-shaped day: dark
/// from 20:00 to 06:00, single midday peak.
inline std::vector<double> solar_shaped_irradiance() {
    return {0,   0,   0,   0,   0,   0,   40,  180, 390, 580, 740, 850,
            900, 870, 770, 610, 420, 220, 70,  10,  0,   0,   0,   0};
}

/// The shipped solar-shaped profile. The defaults put the midday downlink
/// energy near p = 18 per channel use and the feedback energy near q = 36.
inline EHProfile solar_shaped_profile(double area_t = 100.0, double area_r = 1.0, double rho = 0.2) {
    EHProfile p;
    p.e_t = from_irradiance(solar_shaped_irradiance(), area_t, rho, p.delta);
    p.e_r = from_irradiance(solar_shaped_irradiance(), area_r, rho, p.delta);
    return p;
}

/// Shortest decimal that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_commas(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (true) {
        const auto c = s.find(',', pos);
        out.push_back(trim(s.substr(pos, c == std::string_view::npos ? std::string_view::npos : c - pos)));
        if (c == std::string_view::npos) break;
        pos = c + 1;
    }
    return out;
}

inline double parse_double(std::string_view field, std::size_t line, const char* name) {
    double v = 0.0;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size())
        throw ParseError(line, std::string("invalid number in column ") + name + ": '" + std::string(field) + "'");
    return v;
}

}  // namespace detail

/// Parses profile text. Geometry (L, T, delta) keeps its defaults; the caller
/// overwrites it from the scenario.
inline EHProfile parse_profile_csv(std::string_view text) {
    EHProfile p;
    bool header_seen = false;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string_view::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto fields = detail::split_commas(line);
        if (!header_seen) {
            if (fields.size() != 3 || fields[0] != "k" || fields[1] != "e_t_joules" || fields[2] != "e_r_joules")
                throw ParseError(line_no, "expected header 'k,e_t_joules,e_r_joules'");
            header_seen = true;
            continue;
        }
        if (fields.size() != 3) throw ParseError(line_no, "expected 3 fields, found " + std::to_string(fields.size()));
        const double k = detail::parse_double(fields[0], line_no, "k");
        if (k != static_cast<double>(p.e_t.size() + 1))
            throw ParseError(line_no, "interval index must be " + std::to_string(p.e_t.size() + 1));
        const double et = detail::parse_double(fields[1], line_no, "e_t_joules");
        const double er = detail::parse_double(fields[2], line_no, "e_r_joules");
        if (!(et >= 0.0) || !std::isfinite(et) || !(er >= 0.0) || !std::isfinite(er))
            throw ParseError(line_no, "energies must be finite and >= 0");
        p.e_t.push_back(et);
        p.e_r.push_back(er);
    }
    if (!header_seen) throw ParseError(0, "missing header 'k,e_t_joules,e_r_joules'");
    if (p.e_t.empty()) throw ParseError(0, "profile has no intervals");
    return p;
}

inline EHProfile read_profile_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(0, "cannot open profile file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_profile_csv(ss.str());
}

inline std::string format_profile_csv(const EHProfile& p) {
    std::string out = "k,e_t_joules,e_r_joules\n";
    for (int k = 0; k < p.K(); ++k) {
        out += std::to_string(k + 1);
        out += ',';
        out += format_double(p.e_t[k]);
        out += ',';
        out += format_double(p.e_r[k]);
        out += '\n';
    }
    return out;
}

inline void write_profile_csv(const std::string& path, const EHProfile& p) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError(0, "cannot write profile file '" + path + "'");
    out << format_profile_csv(p);
}

}  // namespace ehfo::profiles

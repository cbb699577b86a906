// SPDX-License-Identifier: Apache-2.0
//
// Experiment plumbing: scenario files, policy evaluation under all three rate
// models, sweeps, feedback-bit tables and the validation suite. Everything
// here is deterministic given (scenario, run config); wall-clock time is kept
// apart from the result files.
#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <tuple>
#include <vector>

#include <boost/version.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include "ehfo/errors.hpp"
#include "ehfo/montecarlo.hpp"
#include "ehfo/optimizer.hpp"
#include "ehfo/profiles.hpp"
#include "ehfo/rate_models.hpp"
#include "ehfo/validation.hpp"

namespace ehfo::experiment {

inline constexpr const char* kVersion = "1.0.0";

/// Bad command line or conflicting configuration (exit status 1).
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

using optimizer::Policy;
using optimizer::Scenario;

// ---------------------------------------------------------------------------
// Scenario files
// ---------------------------------------------------------------------------

struct ScenarioEntry {
    std::string section;
    std::string key;
    std::string value;
    std::size_t line = 0;
};

struct ScenarioFile {
    Scenario scenario;
    std::string source;                  ///< path as given, empty for in-memory text
    std::vector<ScenarioEntry> entries;  ///< file order
    std::map<std::string, ScenarioEntry> run;
};

namespace detail {

inline std::string_view trim(std::string_view s) { return profiles::detail::trim(s); }

inline double parse_real(const ScenarioEntry& e) {
    double v = 0.0;
    const auto& s = e.value;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
        throw ParseError(e.line, "[" + e.section + "] " + e.key + ": expected a real number, got '" + s + "'");
    return v;
}

inline long long parse_integer(const ScenarioEntry& e) {
    long long v = 0;
    const auto& s = e.value;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ParseError(e.line, "[" + e.section + "] " + e.key + ": expected an integer, got '" + s + "'");
    return v;
}

inline std::uint64_t parse_u64(const ScenarioEntry& e) {
    std::uint64_t v = 0;
    const auto& s = e.value;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ParseError(e.line, "[" + e.section + "] " + e.key + ": expected an unsigned integer, got '" + s + "'");
    return v;
}

inline bool parse_bool(const ScenarioEntry& e) {
    if (e.value == "true") return true;
    if (e.value == "false") return false;
    throw ParseError(e.line, "[" + e.section + "] " + e.key + ": expected true or false");
}

inline std::vector<double> parse_grid(const ScenarioEntry& e) {
    std::vector<double> out;
    for (auto f : profiles::detail::split_commas(e.value)) {
        ScenarioEntry one = e;
        one.value = std::string(f);
        out.push_back(parse_real(one));
    }
    return out;
}

inline const std::map<std::string, std::vector<std::string>>& known_keys() {
    static const std::map<std::string, std::vector<std::string>> keys{
        {"profile", {"path", "generator", "area_t", "area_r", "rho", "K", "mean_t_joules", "mean_r_joules", "seed"}},
        {"params", {"M", "uses_per_frame", "T_uses", "L", "sigma2", "delta"}},
        {"tx_mode", {"mode", "p", "snr_db"}},
        {"run", {"seed", "jobs", "grid", "samples", "force_general", "policy"}},
    };
    return keys;
}

}  // namespace detail

/// Parses `[section]` / `key = value` text. Relative profile paths resolve
/// against `base_dir`.
inline ScenarioFile parse_scenario(std::string_view text, const std::filesystem::path& base_dir = {}) {
    ScenarioFile out;
    std::map<std::string, std::map<std::string, ScenarioEntry>> table;
    std::string section;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string_view::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ParseError(line_no, "unterminated section header");
            section = std::string(detail::trim(line.substr(1, line.size() - 2)));
            if (!detail::known_keys().count(section)) throw ParseError(line_no, "unknown section [" + section + "]");
            if (table.count(section)) throw ParseError(line_no, "duplicate section [" + section + "]");
            table[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ParseError(line_no, "expected 'key = value'");
        if (section.empty()) throw ParseError(line_no, "key outside of any section");
        ScenarioEntry e{section, std::string(detail::trim(line.substr(0, eq))),
                        std::string(detail::trim(line.substr(eq + 1))), line_no};
        const auto& allowed = detail::known_keys().at(section);
        if (std::find(allowed.begin(), allowed.end(), e.key) == allowed.end())
            throw ParseError(line_no, "unknown key '" + e.key + "' in [" + section + "]");
        if (e.value.empty()) throw ParseError(line_no, "empty value for '" + e.key + "'");
        if (table[section].count(e.key)) throw ParseError(line_no, "duplicate key '" + e.key + "'");
        table[section][e.key] = e;
        out.entries.push_back(e);
    }

    auto get = [&](const std::string& sec, const std::string& key) -> const ScenarioEntry* {
        const auto s = table.find(sec);
        if (s == table.end()) return nullptr;
        const auto k = s->second.find(key);
        return k == s->second.end() ? nullptr : &k->second;
    };
    auto exclusive = [&](const std::string& sec, const std::string& a, const std::string& b) {
        const auto* ea = get(sec, a);
        const auto* eb = get(sec, b);
        if (ea && eb) throw ParseError(eb->line, "[" + sec + "] sets both '" + a + "' and '" + b + "'");
        return ea ? ea : eb;
    };

    // [params]
    auto& P = out.scenario.params;
    auto& prof = out.scenario.profile;
    int L = 18000;
    double delta = 3600.0;
    if (const auto* e = get("params", "M")) P.M = static_cast<int>(detail::parse_integer(*e));
    if (const auto* e = exclusive("params", "uses_per_frame", "T_uses")) P.T = detail::parse_real(*e);
    if (const auto* e = get("params", "L")) L = static_cast<int>(detail::parse_integer(*e));
    if (const auto* e = get("params", "sigma2")) P.sigma2 = detail::parse_real(*e);
    if (const auto* e = get("params", "delta")) delta = detail::parse_real(*e);

    // [profile]
    const auto* path = get("profile", "path");
    const auto* gen = get("profile", "generator");
    if (!path == !gen) throw ParseError(0, "[profile] needs exactly one of 'path' or 'generator'");
    auto real_or = [&](const char* key, double def) {
        const auto* e = get("profile", key);
        return e ? detail::parse_real(*e) : def;
    };
    if (path) {
        std::filesystem::path pp(path->value);
        if (pp.is_relative() && !base_dir.empty()) pp = base_dir / pp;
        try {
            prof = profiles::read_profile_csv(pp.string());
        } catch (const ParseError& err) {
            throw ParseError(err.line(), pp.string() + ": " + err.what());
        }
    } else if (gen->value == "solar_shaped") {
        prof = profiles::solar_shaped_profile(real_or("area_t", 100.0), real_or("area_r", 1.0), real_or("rho", 0.2));
    } else if (gen->value == "exponential") {
        const auto* k = get("profile", "K");
        const auto* mt = get("profile", "mean_t_joules");
        const auto* mr = get("profile", "mean_r_joules");
        if (!k || !mt || !mr) throw ParseError(gen->line, "exponential generator needs K, mean_t_joules, mean_r_joules");
        const auto* sd = get("profile", "seed");
        prof = profiles::synthetic_exponential(static_cast<int>(detail::parse_integer(*k)), detail::parse_real(*mt),
                                               detail::parse_real(*mr), sd ? detail::parse_u64(*sd) : 1);
    } else {
        throw ParseError(gen->line, "unknown generator '" + gen->value + "'");
    }
    prof.L = L;
    prof.T = P.T;
    prof.delta = delta;

    // [tx_mode]
    const auto* mode = get("tx_mode", "mode");
    const std::string m = mode ? mode->value : "harvesting";
    const auto* pe = exclusive("tx_mode", "p", "snr_db");
    if (m == "harvesting") {
        if (pe) throw ParseError(pe->line, "[tx_mode] harvesting takes no downlink power");
        out.scenario.tx_mode = optimizer::TxMode::harvesting();
    } else if (m == "constant_power") {
        if (!pe) throw ParseError(mode->line, "[tx_mode] constant_power needs 'p' or 'snr_db'");
        const double v = detail::parse_real(*pe);
        out.scenario.tx_mode = optimizer::TxMode::constant_power(pe->key == "p" ? v : std::pow(10.0, v / 10.0));
    } else {
        throw ParseError(mode->line, "unknown tx mode '" + m + "'");
    }

    if (table.count("run"))
        for (const auto& [k, e] : table["run"]) out.run[k] = e;

    try {
        out.scenario.validate();
    } catch (const DomainError& err) {
        throw ParseError(0, std::string("invalid scenario: ") + err.what());
    } catch (const LengthMismatchError& err) {
        throw ParseError(0, std::string("invalid scenario: ") + err.what());
    }
    return out;
}

inline ScenarioFile load_scenario(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(0, "cannot open scenario file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        auto sf = parse_scenario(ss.str(), std::filesystem::path(path).parent_path());
        sf.source = path;
        return sf;
    } catch (const ParseError& err) {
        throw ParseError(err.line(), path + ": " + err.what());
    }
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// What the command line supplied; unset optionals were not given.
struct CliFlags {
    std::string subcommand;
    std::optional<std::string> scenario;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    std::optional<std::vector<double>> grid;
    std::optional<int> samples;
    std::optional<std::string> policy;
    bool force_general = false;
};

struct RunConfig {
    std::string subcommand;
    std::string scenario_path;  ///< empty only for validate
    std::string out_dir;
    std::uint64_t seed = 1;
    int jobs = 1;
    bool force_general = false;
    std::vector<double> grid;
    int samples = 100;
    std::string policy_path;
};

/// Harvesting sweeps scale both profiles; constant-power sweeps set the
/// downlink SNR in dB.
inline std::vector<double> default_grid(const Scenario& s) {
    if (s.tx_mode.kind == optimizer::TxModeKind::harvesting) return {0.25, 0.5, 1, 2, 4, 8, 16};
    return {0, 5, 10, 15, 20};
}

/// Merges flags with the scenario's [run] section. A setting present in both
/// is a UsageError.
inline RunConfig resolve_run_config(const CliFlags& f, const ScenarioFile* sf) {
    RunConfig rc;
    rc.subcommand = f.subcommand;
    if (!f.out) throw UsageError("--out is required");
    rc.out_dir = *f.out;
    if (f.scenario) rc.scenario_path = *f.scenario;
    if (rc.subcommand != "validate" && rc.scenario_path.empty()) throw UsageError("--scenario is required");

    const std::map<std::string, ScenarioEntry> none;
    const auto& run = sf ? sf->run : none;
    auto conflict = [&](const char* key, bool flag_given) -> const ScenarioEntry* {
        const auto it = run.find(key);
        if (it == run.end()) return nullptr;
        if (flag_given)
            throw UsageError(std::string("'") + key + "' is set both on the command line and in [run] (line " +
                             std::to_string(it->second.line) + ")");
        return &it->second;
    };
    if (const auto* e = conflict("seed", f.seed.has_value())) rc.seed = detail::parse_u64(*e);
    else if (f.seed) rc.seed = *f.seed;
    if (const auto* e = conflict("jobs", f.jobs.has_value())) rc.jobs = static_cast<int>(detail::parse_integer(*e));
    else if (f.jobs) rc.jobs = *f.jobs;
    if (const auto* e = conflict("samples", f.samples.has_value())) rc.samples = static_cast<int>(detail::parse_integer(*e));
    else if (f.samples) rc.samples = *f.samples;
    if (const auto* e = conflict("grid", f.grid.has_value())) rc.grid = detail::parse_grid(*e);
    else if (f.grid) rc.grid = *f.grid;
    if (const auto* e = conflict("force_general", f.force_general)) rc.force_general = detail::parse_bool(*e);
    else rc.force_general = f.force_general;
    if (const auto* e = conflict("policy", f.policy.has_value())) {
        std::filesystem::path pp(e->value);
        if (pp.is_relative() && sf && !sf->source.empty()) pp = std::filesystem::path(sf->source).parent_path() / pp;
        rc.policy_path = pp.string();
    } else if (f.policy) {
        rc.policy_path = *f.policy;
    }

    if (rc.jobs < 1) throw UsageError("jobs must be >= 1");
    if (rc.samples < 1) throw UsageError("samples must be >= 1");
    if (rc.subcommand == "evaluate" && rc.policy_path.empty()) throw UsageError("evaluate needs --policy");
    if (rc.subcommand == "sweep") {
        if (rc.grid.empty() && sf) rc.grid = default_grid(sf->scenario);
        if (rc.grid.empty()) throw UsageError("sweep grid must be non-empty");
        const bool harvesting = sf && sf->scenario.tx_mode.kind == optimizer::TxModeKind::harvesting;
        for (double g : rc.grid)
            if (!std::isfinite(g) || (harvesting && !(g > 0.0)))
                throw UsageError("sweep grid: multipliers must be positive and SNR points finite");
    }
    return rc;
}

// ---------------------------------------------------------------------------
// Solving and evaluation
// ---------------------------------------------------------------------------

/// Relative conditional-gradient gap below which the separable solution for
/// similar profiles is accepted as the joint optimum.
inline constexpr double kSimilarAcceptGap = 1e-8;

struct Solved {
    Policy policy;
    std::string path;  ///< rx_only, joint_similar, joint_general, joint_general_fallback
    double gap = std::numeric_limits<double>::quiet_NaN();
    int iterations = 0;
};

/// Mode-appropriate optimiser. For similar profiles the separable solution is
/// kept only if its gap certifies it; otherwise the general solver runs.
inline Solved solve(const Scenario& s, bool force_general) {
    Solved out;
    if (s.tx_mode.kind == optimizer::TxModeKind::constant_power) {
        out.policy = optimizer::optimize_rx_only(s);
        out.path = "rx_only";
        return out;
    }
    if (!force_general) {
        try {
            out.policy = optimizer::optimize_joint_similar(s);
            out.gap = optimizer::joint_gap(out.policy, s);
            if (out.gap <= kSimilarAcceptGap) {
                out.path = "joint_similar";
                return out;
            }
            out.path = "joint_general_fallback";
        } catch (const NotSimilarError&) {
        }
    }
    if (out.path.empty()) out.path = "joint_general";
    optimizer::SolverStats stats;
    out.policy = optimizer::optimize_joint_general(s, {}, &stats);
    out.gap = stats.gap / std::max(1.0, std::abs(stats.objective));
    out.iterations = stats.iterations;
    return out;
}

struct EvalRow {
    int k = 0;  ///< 1-based
    double p = 0.0, q = 0.0, tau = 0.0, b = 0.0;
    double r_exact = 0.0, r_u = 0.0, r_ub = 0.0;
};

struct EvalReport {
    std::string policy_name;
    std::string solver_path;
    optimizer::ObjectiveKind objective_kind = optimizer::ObjectiveKind::upper_ub;
    std::vector<EvalRow> rows;
    double total_exact = 0.0, total_u = 0.0, total_ub = 0.0;
    optimizer::FeasibilityReport feasibility;
    optimizer::CertificateReport certificate;
    double gap = std::numeric_limits<double>::quiet_NaN();
    int iterations = 0;
    double wall_seconds = 0.0;
};

inline std::string describe(const optimizer::FeasibilityReport& f) {
    if (f.all()) return "feasible";
    std::string why = !f.domain ? "allocation outside the model domain"
                    : !f.rx_prefix ? "RX energy used before it arrives"
                    : !f.tx_prefix ? "TX energy used before it arrives"
                    : !f.rx_terminal ? "RX energy left unused"
                                     : "TX energy left unused";
    if (f.first_violation >= 0) why += " at interval " + std::to_string(f.first_violation + 1);
    return why;
}

/// Evaluates every interval under all three models. Throws InfeasibleError if
/// any allocation leaves the model domain.
inline EvalReport evaluate_policy(const Policy& pol, const Scenario& s, std::string name, std::string path) {
    s.validate();
    if (pol.K() != s.K() || static_cast<int>(pol.q.size()) != s.K() || static_cast<int>(pol.tau.size()) != s.K())
        throw LengthMismatchError("evaluate_policy: policy has " + std::to_string(pol.K()) + " rows, profile has " +
                                  std::to_string(s.K()));
    EvalReport r;
    r.policy_name = std::move(name);
    r.solver_path = std::move(path);
    r.objective_kind = pol.objective_kind;
    r.feasibility = optimizer::check_feasibility(pol, s);
    if (!r.feasibility.domain) throw InfeasibleError("policy " + describe(r.feasibility));
    for (int k = 0; k < s.K(); ++k) {
        const rates::IntervalAllocation a{pol.p[k], pol.q[k], pol.tau[k]};
        EvalRow row;
        row.k = k + 1;
        row.p = a.p;
        row.q = a.q;
        row.tau = a.tau;
        row.b = a.tau > 0.0 ? rates::feedback_bits(a.q, a.tau, s.params.sigma2) : 0.0;
        row.r_exact = rates::rate_exact(a, s.params);
        row.r_u = rates::rate_upper_u(a, s.params);
        row.r_ub = rates::rate_upper_ub(a, s.params);
        r.total_exact += row.r_exact;
        r.total_u += row.r_u;
        r.total_ub += row.r_ub;
        r.rows.push_back(row);
    }
    r.certificate = optimizer::certify_optimality(pol, s);
    return r;
}

inline EvalReport solve_and_evaluate(const Scenario& s, bool force_general) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto sol = solve(s, force_general);
    auto rep = evaluate_policy(sol.policy, s, "optimal", sol.path);
    rep.gap = sol.gap;
    rep.iterations = sol.iterations;
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

inline EvalReport greedy_and_evaluate(const Scenario& s) {
    const auto t0 = std::chrono::steady_clock::now();
    auto rep = evaluate_policy(optimizer::greedy_policy(s), s, "greedy", "greedy");
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

using profiles::format_double;

/// Re-validates each row before writing: domain, bound ordering, and totals
/// equal to column sums.
inline std::string format_policy_csv(const EvalReport& r, const rates::RateModelParams& params) {
    std::string out = "k,p,q,tau,b,R_exact,R_u,R_ub\n";
    double se = 0.0, su = 0.0, sub = 0.0;
    for (const auto& row : r.rows) {
        rates::validate({row.p, row.q, row.tau}, params);
        if (row.r_exact > row.r_u + 1e-7 || row.r_u > row.r_ub + 1e-7)
            throw ToleranceError("bound ordering violated at interval " + std::to_string(row.k), row.r_u - row.r_exact);
        se += row.r_exact;
        su += row.r_u;
        sub += row.r_ub;
        out += std::to_string(row.k);
        for (double v : {row.p, row.q, row.tau, row.b, row.r_exact, row.r_u, row.r_ub}) {
            out += ',';
            out += format_double(v);
        }
        out += '\n';
    }
    const double tol = 1e-9 * std::max(1.0, sub);
    if (std::abs(se - r.total_exact) > tol || std::abs(su - r.total_u) > tol || std::abs(sub - r.total_ub) > tol)
        throw ToleranceError("report totals differ from column sums", std::abs(sub - r.total_ub));
    return out;
}

inline std::string format_totals_csv(const EvalReport& r) {
    return "model,total_rate\nexact," + format_double(r.total_exact) + "\nupper_u," + format_double(r.total_u) +
           "\nupper_ub," + format_double(r.total_ub) + "\n";
}

/// Reads a policy table with at least the columns k, p, q, tau (any order,
/// extra columns ignored). The objective kind follows the scenario's mode.
inline Policy parse_policy_csv(std::string_view text, const Scenario& s) {
    Policy pol;
    pol.objective_kind = s.tx_mode.kind == optimizer::TxModeKind::harvesting ? optimizer::ObjectiveKind::upper_ub
                                                                              : optimizer::ObjectiveKind::upper_u;
    int ck = -1, cp = -1, cq = -1, ct = -1;
    std::size_t ncols = 0;
    std::size_t line_no = 0, pos = 0;
    bool header = false;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string_view::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto f = profiles::detail::split_commas(line);
        if (!header) {
            for (std::size_t i = 0; i < f.size(); ++i) {
                if (f[i] == "k") ck = static_cast<int>(i);
                if (f[i] == "p") cp = static_cast<int>(i);
                if (f[i] == "q") cq = static_cast<int>(i);
                if (f[i] == "tau") ct = static_cast<int>(i);
            }
            if (ck < 0 || cp < 0 || cq < 0 || ct < 0) throw ParseError(line_no, "policy header needs k, p, q, tau");
            ncols = f.size();
            header = true;
            continue;
        }
        if (f.size() != ncols)
            throw ParseError(line_no, "expected " + std::to_string(ncols) + " fields, found " + std::to_string(f.size()));
        const double k = profiles::detail::parse_double(f[ck], line_no, "k");
        if (k != static_cast<double>(pol.p.size() + 1))
            throw ParseError(line_no, "interval index must be " + std::to_string(pol.p.size() + 1));
        pol.p.push_back(profiles::detail::parse_double(f[cp], line_no, "p"));
        pol.q.push_back(profiles::detail::parse_double(f[cq], line_no, "q"));
        pol.tau.push_back(profiles::detail::parse_double(f[ct], line_no, "tau"));
    }
    if (!header) throw ParseError(0, "missing policy header");
    if (pol.K() != s.K())
        throw ParseError(0, "policy has " + std::to_string(pol.K()) + " rows, profile has " + std::to_string(s.K()));
    return pol;
}

inline Policy read_policy_csv(const std::string& path, const Scenario& s) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(0, "cannot open policy file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse_policy_csv(ss.str(), s);
    } catch (const ParseError& err) {
        throw ParseError(err.line(), path + ": " + err.what());
    }
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct SweepRow {
    int point = 0;            ///< 0-based grid index
    double grid_value = 0.0;  ///< multiplier or downlink SNR in dB
    double tx_db = 0.0;       ///< mean TX HPN (harvesting) or downlink SNR, dB
    double rx_hpn_db = 0.0;   ///< mean RX HPN, dB
    std::string policy;       ///< optimal | greedy
    std::string bound;        ///< exact | upper_u | upper_ub
    double total_rate = std::numeric_limits<double>::quiet_NaN();
    std::string status = "ok";
};

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

/// The scenario at one grid point.
inline Scenario sweep_point(const Scenario& base, double g) {
    Scenario s = base;
    if (s.tx_mode.kind == optimizer::TxModeKind::harvesting) {
        for (auto& e : s.profile.e_t) e *= g;
        for (auto& e : s.profile.e_r) e *= g;
    } else {
        s.tx_mode.p = std::pow(10.0, g / 10.0);
    }
    return s;
}

/// One solve+greedy evaluation per grid point; a failing point yields rows
/// with status "error: ..." and the sweep continues. Points run on up to
/// `jobs` threads; rows come back in grid order.
inline std::vector<SweepRow> run_sweep(const Scenario& base, const std::vector<double>& grid, bool force_general,
                                       int jobs) {
    std::vector<std::vector<SweepRow>> per(grid.size());
    auto one = [&](std::size_t i) {
        const double g = grid[i];
        std::vector<SweepRow>& rows = per[i];
        SweepRow proto;
        proto.point = static_cast<int>(i);
        proto.grid_value = g;
        try {
            const Scenario s = sweep_point(base, g);
            s.validate();
            const bool harvesting = s.tx_mode.kind == optimizer::TxModeKind::harvesting;
            proto.tx_db = harvesting ? profiles::hpn_db(mean_of(s.profile.e_t), s.profile.delta, 1.0) : g;
            proto.rx_hpn_db = profiles::hpn_db(mean_of(s.profile.e_r), s.profile.delta, s.params.sigma2);
            for (const auto& rep : {solve_and_evaluate(s, force_general), greedy_and_evaluate(s)}) {
                for (const auto& [bound, v] : {std::pair{"exact", rep.total_exact}, std::pair{"upper_u", rep.total_u},
                                               std::pair{"upper_ub", rep.total_ub}}) {
                    SweepRow r = proto;
                    r.policy = rep.policy_name;
                    r.bound = bound;
                    r.total_rate = v;
                    rows.push_back(r);
                }
            }
        } catch (const std::exception& err) {
            rows.clear();
            for (const char* pol : {"optimal", "greedy"}) {
                SweepRow r = proto;
                r.policy = pol;
                r.bound = "none";
                r.status = std::string("error: ") + err.what();
                rows.push_back(r);
            }
        }
    };
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < grid.size(); i = next++) one(i);
    };
    const int threads = std::max(1, std::min<int>(jobs, static_cast<int>(grid.size())));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    std::vector<SweepRow> out;
    for (auto& v : per) out.insert(out.end(), v.begin(), v.end());
    return out;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c == '\n' ? ' ' : c);
    return q + "\"";
}

inline std::string format_sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = "point,grid_value,tx_db,rx_hpn_db,policy,bound,total_rate,status\n";
    for (const auto& r : rows) {
        out += std::to_string(r.point) + ',' + format_double(r.grid_value) + ',' + format_double(r.tx_db) + ',' +
               format_double(r.rx_hpn_db) + ',' + r.policy + ',' + r.bound + ',' + format_double(r.total_rate) + ',' +
               csv_field(r.status) + '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Feedback bits
// ---------------------------------------------------------------------------

struct BitsRow {
    int k = 0;
    std::string policy;
    double b = 0.0;
    double b_floor = 0.0;
    double r_exact = 0.0;
    double r_exact_floor = 0.0;
};

struct BitsSummary {
    std::string policy;
    double total_exact = 0.0;
    double total_exact_floor = 0.0;
    double relative_change = 0.0;  ///< (floor - exact) / exact
};

inline std::pair<std::vector<BitsRow>, std::vector<BitsSummary>> bits_table(const Scenario& s, bool force_general) {
    std::vector<BitsRow> rows;
    std::vector<BitsSummary> sums;
    const std::pair<std::string, Policy> pols[] = {{"optimal", solve(s, force_general).policy},
                                                   {"greedy", optimizer::greedy_policy(s)}};
    for (const auto& [name, pol] : pols) {
        BitsSummary sum{name};
        for (int k = 0; k < pol.K(); ++k) {
            const rates::IntervalAllocation a{pol.p[k], pol.q[k], pol.tau[k]};
            BitsRow r;
            r.k = k + 1;
            r.policy = name;
            r.b = a.tau > 0.0 ? rates::feedback_bits(a.q, a.tau, s.params.sigma2) : 0.0;
            r.b_floor = std::floor(r.b + 1e-9);
            r.r_exact = rates::rate_exact(a, s.params);
            r.r_exact_floor = rates::round_bits_policy_rate(a, s.params);
            sum.total_exact += r.r_exact;
            sum.total_exact_floor += r.r_exact_floor;
            rows.push_back(r);
        }
        sum.relative_change = sum.total_exact > 0.0 ? (sum.total_exact_floor - sum.total_exact) / sum.total_exact : 0.0;
        sums.push_back(sum);
    }
    return {rows, sums};
}

inline std::string format_bits_csv(const std::vector<BitsRow>& rows) {
    std::string out = "k,policy,b,b_floor,R_exact,R_exact_floor\n";
    for (const auto& r : rows)
        out += std::to_string(r.k) + ',' + r.policy + ',' + format_double(r.b) + ',' + format_double(r.b_floor) + ',' +
               format_double(r.r_exact) + ',' + format_double(r.r_exact_floor) + '\n';
    return out;
}

inline std::string format_bits_summary_csv(const std::vector<BitsSummary>& sums) {
    std::string out = "policy,total_exact,total_exact_floor,relative_change\n";
    for (const auto& s : sums)
        out += s.policy + ',' + format_double(s.total_exact) + ',' + format_double(s.total_exact_floor) + ',' +
               format_double(s.relative_change) + '\n';
    return out;
}

// ---------------------------------------------------------------------------
// Validation suite
// ---------------------------------------------------------------------------

/// Feasibility and optimality certificate of a given policy, reported with the
/// first failing interval (1-based).
inline validation::CheckResult policy_check(const Policy& pol, const Scenario& s, std::uint64_t seed) {
    validation::CheckResult r{"policy_certificate", true, 1, seed, 0.0, "ok"};
    const auto feas = optimizer::check_feasibility(pol, s);
    if (!feas.all()) {
        r.passed = false;
        r.worst = feas.first_violation + 1;
        r.detail = describe(feas);
        return r;
    }
    const auto cert = optimizer::certify_optimality(pol, s);
    if (!cert.all()) {
        r.passed = false;
        r.worst = cert.failing_interval + 1;
        r.detail = cert.detail;
    }
    return r;
}

/// The property suite. `samples` scales every check; 10 is a smoke run.
/// Monte-Carlo checks use a 4-sigma band since a run aggregates up to 15
/// comparisons.
inline std::vector<validation::CheckResult> run_validation(int samples, std::uint64_t seed,
                                                           const Scenario* scenario = nullptr,
                                                           const Policy* policy = nullptr) {
    using namespace validation;
    std::vector<CheckResult> out;
    auto sub = [seed](std::uint64_t k) { return mc::splitmix64(seed ^ mc::splitmix64(k)); };
    out.push_back(bound_chain(10 * samples, sub(1)));
    out.push_back(concavity(samples, sub(2)));
    out.push_back(oea_majorization(std::max(1, samples / 10), samples, sub(3)));
    out.push_back(mc_quantisation(2000LL * samples, 4, sub(4), 4.0));
    out.push_back(mc_rate(2000LL * samples, sub(5), 4.0));
    out.push_back(gap_limit(20000LL * samples, sub(6), 4.0));
    out.push_back(certificates(std::max(2, samples / 10), sub(7)));
    out.push_back(tau_star(samples, 10000, sub(8)));
    if (scenario) {
        const Policy pol = policy ? *policy : solve(*scenario, false).policy;
        out.push_back(policy_check(pol, *scenario, seed));
    }
    return out;
}

inline std::string format_validation_csv(const std::vector<validation::CheckResult>& v) {
    std::string out = "check,passed,samples,seed,worst,detail\n";
    for (const auto& c : v)
        out += c.name + ',' + (c.passed ? "true" : "false") + ',' + std::to_string(c.samples) + ',' +
               std::to_string(c.seed) + ',' + format_double(c.worst) + ',' + csv_field(c.detail) + '\n';
    return out;
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

inline void prepare_out_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    const auto probe = std::filesystem::path(dir) / ".ehfo_write_probe";
    {
        std::ofstream t(probe, std::ios::binary);
        if (!t) throw UsageError("output directory '" + dir + "' is not writable");
    }
    std::filesystem::remove(probe, ec);
}

inline void write_file(const std::string& dir, const std::string& name, const std::string& content) {
    const auto p = std::filesystem::path(dir) / name;
    std::ofstream out(p, std::ios::binary);
    if (!out) throw UsageError("cannot write '" + p.string() + "'");
    out << content;
}

inline nlohmann::json manifest(const RunConfig& rc, const ScenarioFile* sf, const std::vector<std::string>& files) {
    nlohmann::json m;
    m["tool"] = "ehfo";
    m["subcommand"] = rc.subcommand;
    m["versions"] = {{"ehfo", kVersion},
                     {"compiler", __VERSION__},
                     {"boost", BOOST_LIB_VERSION},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
    m["run"] = {{"seed", rc.seed},       {"jobs", rc.jobs},           {"samples", rc.samples},
                {"grid", rc.grid},       {"force_general", rc.force_general},
                {"scenario", rc.scenario_path}, {"policy", rc.policy_path}};
    if (sf) {
        nlohmann::json echo = nlohmann::json::object();
        for (const auto& e : sf->entries) echo[e.section][e.key] = e.value;
        m["scenario"] = echo;
        m["profile"] = {{"K", sf->scenario.K()},
                        {"L", sf->scenario.profile.L},
                        {"T", sf->scenario.params.T},
                        {"delta", sf->scenario.profile.delta}};
    }
    m["files"] = files;
    return m;
}

inline nlohmann::json report_json(const EvalReport& r) {
    nlohmann::json j;
    j["policy"] = r.policy_name;
    j["solver_path"] = r.solver_path;
    j["objective_kind"] = optimizer::to_string(r.objective_kind);
    j["totals"] = {{"exact", r.total_exact}, {"upper_u", r.total_u}, {"upper_ub", r.total_ub}};
    j["feasibility"] = {{"domain", r.feasibility.domain},           {"rx_prefix", r.feasibility.rx_prefix},
                        {"tx_prefix", r.feasibility.tx_prefix},     {"rx_terminal", r.feasibility.rx_terminal},
                        {"tx_terminal", r.feasibility.tx_terminal}, {"detail", describe(r.feasibility)}};
    j["certificate"] = {{"monotone", r.certificate.monotone},
                        {"buffer_emptying", r.certificate.buffer_emptying},
                        {"terminal_equality", r.certificate.terminal_equality},
                        {"detail", r.certificate.all() ? std::string("ok") : r.certificate.detail}};
    if (std::isfinite(r.gap)) j["relative_gap"] = r.gap;
    if (r.iterations > 0) j["iterations"] = r.iterations;
    return j;
}

inline std::string timing_json(double seconds) {
    nlohmann::json t;
    t["wall_clock_seconds"] = seconds;
    return t.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Subcommands. Each writes its tables plus manifest.json and timing.json and
// returns the exit status; errors propagate as exceptions.
// ---------------------------------------------------------------------------

inline int write_report(const RunConfig& rc, const ScenarioFile& sf, const EvalReport& rep, std::ostream& log) {
    write_file(rc.out_dir, "policy.csv", format_policy_csv(rep, sf.scenario.params));
    write_file(rc.out_dir, "totals.csv", format_totals_csv(rep));
    auto m = manifest(rc, &sf, {"policy.csv", "totals.csv", "manifest.json", "timing.json"});
    m["report"] = report_json(rep);
    write_file(rc.out_dir, "manifest.json", m.dump(2) + "\n");
    write_file(rc.out_dir, "timing.json", timing_json(rep.wall_seconds));
    log << rc.subcommand << ": " << rep.solver_path << "  R_exact=" << format_double(rep.total_exact)
        << "  R_u=" << format_double(rep.total_u) << "  R_ub=" << format_double(rep.total_ub)
        << "  certificate=" << (rep.certificate.all() ? "ok" : rep.certificate.detail) << "\n";
    return 0;
}

inline int cmd_optimize(const RunConfig& rc, const ScenarioFile& sf, std::ostream& log) {
    return write_report(rc, sf, solve_and_evaluate(sf.scenario, rc.force_general), log);
}

inline int cmd_greedy(const RunConfig& rc, const ScenarioFile& sf, std::ostream& log) {
    return write_report(rc, sf, greedy_and_evaluate(sf.scenario), log);
}

inline int cmd_evaluate(const RunConfig& rc, const ScenarioFile& sf, std::ostream& log) {
    const auto t0 = std::chrono::steady_clock::now();
    const Policy pol = read_policy_csv(rc.policy_path, sf.scenario);
    auto rep = evaluate_policy(pol, sf.scenario, "file", "evaluate");
    if (!rep.feasibility.all()) throw InfeasibleError("policy " + describe(rep.feasibility));
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return write_report(rc, sf, rep, log);
}

inline int cmd_sweep(const RunConfig& rc, const ScenarioFile& sf, std::ostream& log) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto rows = run_sweep(sf.scenario, rc.grid, rc.force_general, rc.jobs);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_file(rc.out_dir, "sweep.csv", format_sweep_csv(rows));
    int failed = 0;
    for (const auto& r : rows) failed += r.status != "ok";
    auto m = manifest(rc, &sf, {"sweep.csv", "manifest.json", "timing.json"});
    m["failed_rows"] = failed;
    write_file(rc.out_dir, "manifest.json", m.dump(2) + "\n");
    write_file(rc.out_dir, "timing.json", timing_json(secs));
    log << "sweep: " << rc.grid.size() << " points, " << failed << " failed rows\n";
    return 0;
}

inline int cmd_bits(const RunConfig& rc, const ScenarioFile& sf, std::ostream& log) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto [rows, sums] = bits_table(sf.scenario, rc.force_general);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_file(rc.out_dir, "bits.csv", format_bits_csv(rows));
    write_file(rc.out_dir, "bits_summary.csv", format_bits_summary_csv(sums));
    write_file(rc.out_dir, "manifest.json",
               manifest(rc, &sf, {"bits.csv", "bits_summary.csv", "manifest.json", "timing.json"}).dump(2) + "\n");
    write_file(rc.out_dir, "timing.json", timing_json(secs));
    for (const auto& s : sums)
        log << "bits: " << s.policy << " floor-rounding changes R_exact by " << format_double(100.0 * s.relative_change)
            << " %\n";
    return 0;
}

/// Exit status 3 when any check fails.
inline int cmd_validate(const RunConfig& rc, const ScenarioFile* sf, std::ostream& log) {
    const auto t0 = std::chrono::steady_clock::now();
    std::optional<Policy> pol;
    if (!rc.policy_path.empty()) {
        if (!sf) throw UsageError("validate --policy needs --scenario");
        pol = read_policy_csv(rc.policy_path, sf->scenario);
    }
    const auto checks = run_validation(rc.samples, rc.seed, sf ? &sf->scenario : nullptr, pol ? &*pol : nullptr);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_file(rc.out_dir, "validate.csv", format_validation_csv(checks));
    auto m = manifest(rc, sf, {"validate.csv", "manifest.json", "timing.json"});
    int failed = 0;
    for (const auto& c : checks) {
        failed += !c.passed;
        log << (c.passed ? "PASS " : "FAIL ") << c.name;
        if (!c.passed) log << "  (" << c.detail << "; seed " << c.seed << ")";
        log << "\n";
    }
    m["failed_checks"] = failed;
    write_file(rc.out_dir, "manifest.json", m.dump(2) + "\n");
    write_file(rc.out_dir, "timing.json", timing_json(secs));
    return failed == 0 ? 0 : 3;
}

}  // namespace ehfo::experiment

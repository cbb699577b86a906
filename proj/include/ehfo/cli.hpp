// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Exit status: 0 success, 1 usage, 2 infeasible or
// unparsable input, 3 validation failure (including solver non-convergence).
#pragma once

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ehfo/experiment.hpp"

namespace ehfo::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitValidation = 3;

inline int dispatch(const experiment::CliFlags& flags, std::ostream& out) {
    std::optional<experiment::ScenarioFile> sf;
    if (flags.scenario) sf = experiment::load_scenario(*flags.scenario);
    const auto rc = experiment::resolve_run_config(flags, sf ? &*sf : nullptr);
    experiment::prepare_out_dir(rc.out_dir);
    const auto& c = rc.subcommand;
    if (c == "optimize") return experiment::cmd_optimize(rc, *sf, out);
    if (c == "greedy") return experiment::cmd_greedy(rc, *sf, out);
    if (c == "evaluate") return experiment::cmd_evaluate(rc, *sf, out);
    if (c == "sweep") return experiment::cmd_sweep(rc, *sf, out);
    if (c == "bits") return experiment::cmd_bits(rc, *sf, out);
    if (c == "validate") return experiment::cmd_validate(rc, sf ? &*sf : nullptr, out);
    throw experiment::UsageError("unknown subcommand '" + c + "'");
}

/// Parses argv and runs one subcommand. Diagnostics go to `err`.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Offline energy and feedback scheduling for harvesting MISO links", "ehfo"};
    app.require_subcommand(1);
    app.set_version_flag("--version", experiment::kVersion);

    experiment::CliFlags flags;
    std::string scenario, outdir, policy;
    std::uint64_t seed = 0;
    int jobs = 0, samples = 0;
    std::vector<double> grid;

    struct Sub {
        const char* name;
        const char* help;
    };
    const Sub subs[] = {
        {"optimize", "solve the scenario and evaluate the policy under all rate models"},
        {"greedy", "evaluate the spend-as-harvested baseline"},
        {"evaluate", "evaluate a policy file against the scenario"},
        {"sweep", "optimal and greedy totals over a profile-scale or SNR grid"},
        {"bits", "per-interval feedback bits, with floor-rounded variants"},
        {"validate", "run the randomised property suite"},
    };
    std::vector<CLI::App*> apps;
    for (const auto& s : subs) {
        auto* sub = app.add_subcommand(s.name, s.help);
        sub->add_option("--scenario", scenario, "scenario file");
        sub->add_option("--out", outdir, "output directory")->required();
        sub->add_option("--seed", seed, "seed (u64)");
        sub->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
        sub->add_flag("--force-general", flags.force_general, "skip the separable solution for similar profiles");
        sub->add_option("--grid", grid, "comma-separated multipliers or SNR points (dB)")->delimiter(',');
        sub->add_option("--samples", samples, "validation sample scale")->check(CLI::PositiveNumber);
        sub->add_option("--policy", policy, "policy file with columns k,p,q,tau");
        apps.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    for (auto* sub : apps) {
        if (!sub->parsed()) continue;
        flags.subcommand = sub->get_name();
        if (sub->count("--scenario")) flags.scenario = scenario;
        flags.out = outdir;
        if (sub->count("--seed")) flags.seed = seed;
        if (sub->count("--jobs")) flags.jobs = jobs;
        if (sub->count("--grid")) flags.grid = grid;
        if (sub->count("--samples")) flags.samples = samples;
        if (sub->count("--policy")) flags.policy = policy;
    }

    try {
        return dispatch(flags, out);
    } catch (const experiment::UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ParseError& e) {
        err << "parse error: " << e.what() << "\n";
        return kExitInput;
    } catch (const InfeasibleError& e) {
        err << "infeasible: " << e.what() << "\n";
        return kExitInput;
    } catch (const LengthMismatchError& e) {
        err << "input error: " << e.what() << "\n";
        return kExitInput;
    } catch (const DomainError& e) {
        err << "input error: " << e.what() << "\n";
        return kExitInput;
    } catch (const optimizer::NonConvergenceError& e) {
        err << "solver did not converge: " << e.what() << "\n";
        return kExitValidation;
    } catch (const ToleranceError& e) {
        err << "tolerance failure: " << e.what() << "\n";
        return kExitValidation;
    }
}

}  // namespace ehfo::cli

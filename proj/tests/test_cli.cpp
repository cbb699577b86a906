#include <catch_amalgamated.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ehfo/cli.hpp"

namespace fs = std::filesystem;
using namespace ehfo;
using namespace ehfo::experiment;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinRel;

namespace {

std::string scenario(const std::string& name) { return (fs::path(EHFO_TEST_SOURCE_DIR) / "scenarios" / name).string(); }

// Fresh scratch directory per call site.
fs::path scratch(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("ehfo_cli_test_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "ehfo");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(slurp(p));
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        rows.push_back(f);
    }
    return rows;
}

}  // namespace

TEST_CASE("version and usage errors", "[cli]") {
    const auto v = run({"--version"});
    CHECK(v.code == 0);
    CHECK_THAT(v.out, ContainsSubstring(kVersion));
    CHECK(run({}).code == 1);
    CHECK(run({"optimize", "--scenario", scenario("solar.ini")}).code == 1);  // no --out
    CHECK(run({"frobnicate", "--out", "x"}).code == 1);
    const auto d = scratch("usage");
    CHECK(run({"optimize", "--out", d.string()}).code == 1);  // no --scenario
    CHECK(run({"evaluate", "--scenario", scenario("solar.ini"), "--out", d.string()}).code == 1);
    CHECK(run({"sweep", "--scenario", scenario("solar.ini"), "--out", d.string(), "--grid", "1,-2"}).code == 1);
}

TEST_CASE("a setting in both [run] and the command line is a usage error", "[cli]") {
    const auto d = scratch("conflict");
    const auto r = run({"sweep", "--scenario", scenario("solar_generated.ini"), "--out", d.string(), "--seed", "5"});
    CHECK(r.code == 1);
    CHECK_THAT(r.err, ContainsSubstring("seed"));
    CHECK_THAT(r.err, ContainsSubstring("line"));
}

TEST_CASE("scenario parse errors report the line", "[cli]") {
    const auto d = scratch("parse");
    spit(d / "bad.ini", "[profile]\ngenerator = solar_shaped\ncolour = blue\n");
    auto r = run({"optimize", "--scenario", (d / "bad.ini").string(), "--out", (d / "o").string()});
    CHECK(r.code == 2);
    CHECK_THAT(r.err, ContainsSubstring("line 3"));

    spit(d / "profile.csv", "k,e_t_joules,e_r_joules\n1,1,1\n2,1,1\n3,x,1\n");
    spit(d / "csv.ini", "[profile]\npath = profile.csv\n");
    r = run({"optimize", "--scenario", (d / "csv.ini").string(), "--out", (d / "o").string()});
    CHECK(r.code == 2);
    CHECK_THAT(r.err, ContainsSubstring("line 4"));

    spit(d / "mode.ini", "[profile]\ngenerator = solar_shaped\n[tx_mode]\nmode = constant_power\n");
    CHECK(run({"optimize", "--scenario", (d / "mode.ini").string(), "--out", (d / "o").string()}).code == 2);
    CHECK(run({"optimize", "--scenario", (d / "missing.ini").string(), "--out", (d / "o").string()}).code == 2);
}

TEST_CASE("parse_scenario reads every section", "[cli]") {
    const auto sf = parse_scenario(
        "[profile]\ngenerator = exponential\nK = 5\nmean_t_joules = 1e6\nmean_r_joules = 2e4\nseed = 3\n"
        "[params]\nM = 8\nT_uses = 100\nL = 900\nsigma2 = 2\ndelta = 60\n"
        "[tx_mode]\nmode = constant_power\np = 3\n[run]\ngrid = 1, 2\n");
    const auto& s = sf.scenario;
    CHECK(s.K() == 5);
    CHECK(s.params.M == 8);
    CHECK(s.params.T == 100.0);
    CHECK(s.profile.T == 100.0);
    CHECK(s.profile.L == 900);
    CHECK(s.params.sigma2 == 2.0);
    CHECK(s.profile.delta == 60.0);
    CHECK(s.tx_mode.kind == optimizer::TxModeKind::constant_power);
    CHECK(s.tx_mode.p == 3.0);
    CHECK(sf.run.at("grid").value == "1, 2");
    CHECK_THROWS_AS(parse_scenario("[params]\nuses_per_frame = 1\nT_uses = 1\n[profile]\ngenerator = solar_shaped\n"),
                    ParseError);
    CHECK_THROWS_AS(parse_scenario("[profile]\ngenerator = solar_shaped\n[profile]\n"), ParseError);
}

TEST_CASE("optimize output is byte-identical across runs", "[cli][property]") {
    for (const char* name : {"solar.ini", "exponential.ini"}) {
        const auto a = scratch("det_a"), b = scratch("det_b");
        REQUIRE(run({"optimize", "--scenario", scenario(name), "--out", a.string()}).code == 0);
        REQUIRE(run({"optimize", "--scenario", scenario(name), "--out", b.string()}).code == 0);
        for (const char* f : {"policy.csv", "totals.csv", "manifest.json"}) CHECK(slurp(a / f) == slurp(b / f));
        CHECK(fs::exists(a / "timing.json"));
    }
    const auto a = scratch("det_sweep_a"), b = scratch("det_sweep_b");
    REQUIRE(run({"sweep", "--scenario", scenario("exponential.ini"), "--out", a.string(), "--grid", "0.5,2"}).code ==
            0);
    REQUIRE(run({"sweep", "--scenario", scenario("exponential.ini"), "--out", b.string(), "--grid", "0.5,2", "--jobs",
                 "3"})
                .code == 0);
    CHECK(slurp(a / "sweep.csv") == slurp(b / "sweep.csv"));
}

TEST_CASE("solver paths per scenario", "[cli]") {
    const auto solar = load_scenario(scenario("solar.ini")).scenario;
    const auto sim = solve_and_evaluate(solar, false);
    const auto gen = solve_and_evaluate(solar, true);
    CHECK(sim.solver_path == "joint_similar");
    CHECK(gen.solver_path == "joint_general");
    CHECK_THAT(gen.total_ub, WithinRel(sim.total_ub, 1e-6));
    CHECK(sim.certificate.all());

    const auto cp = load_scenario(scenario("constant_power.ini")).scenario;
    const auto rx = solve_and_evaluate(cp, false);
    CHECK(rx.solver_path == "rx_only");
    for (const auto& row : rx.rows) CHECK_THAT(row.p, WithinRel(10.0, 1e-12));

    const auto ex = load_scenario(scenario("exponential.ini")).scenario;
    CHECK(solve_and_evaluate(ex, false).solver_path == "joint_general");
}

TEST_CASE("similar profiles fall back to the general solver when the staircase is beaten", "[cli]") {
    // Similar two-interval profile on which deferring feedback energy pays.
    optimizer::Scenario s;
    s.profile.e_t = {0.17 * 18000 * 200, 1.5 * 18000 * 200};
    s.profile.e_r = {0.05 * 18000, 0.1 * 18000};
    REQUIRE(optimizer::check_similar(s.profile.e_t, s.profile.e_r, 18000, 200));
    const auto solved = solve(s, false);
    CHECK(solved.path == "joint_general_fallback");
    CHECK(optimizer::policy_objective(solved.policy, s) >
          optimizer::policy_objective(optimizer::optimize_joint_similar(s), s));
}

TEST_CASE("optimal beats greedy on the solar scenario", "[cli]") {
    const auto d = scratch("greedy");
    REQUIRE(run({"optimize", "--scenario", scenario("solar.ini"), "--out", (d / "opt").string()}).code == 0);
    REQUIRE(run({"greedy", "--scenario", scenario("solar.ini"), "--out", (d / "gr").string()}).code == 0);
    const auto opt = read_csv(d / "opt" / "totals.csv"), gr = read_csv(d / "gr" / "totals.csv");
    REQUIRE(opt.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(std::stod(opt[i][1]) >= std::stod(gr[i][1]));

    // every row keeps the bound ordering and the totals are column sums
    double sum_ub = 0.0;
    for (const auto& r : read_csv(d / "opt" / "policy.csv")) {
        CHECK(std::stod(r[5]) <= std::stod(r[6]) + 1e-7);
        CHECK(std::stod(r[6]) <= std::stod(r[7]) + 1e-7);
        sum_ub += std::stod(r[7]);
    }
    CHECK_THAT(sum_ub, WithinRel(std::stod(opt[2][1]), 1e-9));
}

TEST_CASE("sweeps keep optimal above greedy", "[cli]") {
    const auto d = scratch("sweep");
    REQUIRE(run({"sweep", "--scenario", scenario("solar_generated.ini"), "--out", d.string()}).code == 0);
    const auto rows = read_csv(d / "sweep.csv");
    REQUIRE(rows.size() == 6 * 6);
    for (std::size_t i = 0; i < rows.size(); i += 6) {
        for (int b = 0; b < 3; ++b) {
            CHECK(rows[i + b][4] == "optimal");
            CHECK(rows[i + 3 + b][4] == "greedy");
            CHECK(rows[i + b][7] == "ok");
            CHECK(std::stod(rows[i + b][6]) >= std::stod(rows[i + 3 + b][6]));
        }
    }

    // exponential profiles: both curves rise with HPN
    const auto ex = load_scenario(scenario("exponential.ini")).scenario;
    const auto sw = run_sweep(ex, {0.5, 1, 2, 4}, false, 1);
    double prev_opt = -1.0, prev_gr = -1.0;
    for (const auto& r : sw) {
        if (r.bound != "upper_ub") continue;
        double& prev = r.policy == "optimal" ? prev_opt : prev_gr;
        CHECK(r.total_rate > prev);
        prev = r.total_rate;
    }
}

TEST_CASE("feedback bits follow the band structure", "[cli]") {
    const auto s = load_scenario(scenario("solar.ini")).scenario;
    const auto [rows, sums] = bits_table(s, false);
    const auto q_bands = oea::oea(optimizer::scaled(s.profile.e_r, s.profile.L)).bands.boundaries;
    std::vector<double> opt, gr;
    for (const auto& r : rows) (r.policy == "optimal" ? opt : gr).push_back(r.b);
    REQUIRE(opt.size() == 24);
    for (std::size_t i = 1; i < q_bands.size(); ++i)
        for (int k = q_bands[i - 1] + 1; k < q_bands[i]; ++k) CHECK_THAT(opt[k], WithinRel(opt[q_bands[i - 1]], 1e-9));
    // after the first TX arrival (6 dark hours) every optimal interval feeds back
    for (int k = 6; k < 24; ++k) CHECK(opt[k] > 0.0);
    for (int k = 0; k < 24; ++k)
        if (s.profile.e_r[k] == 0.0) CHECK(gr[k] == 0.0);
    REQUIRE(sums.size() == 2);
    for (const auto& sm : sums) CHECK(std::abs(sm.relative_change) < 0.02);
}

TEST_CASE("bit rounding costs under 0.1 bits/s/Hz along an SNR sweep", "[cli]") {
    // average per-interval loss of the optimal policy, M = 4
    const auto base = load_scenario(scenario("constant_power.ini")).scenario;
    REQUIRE(base.params.M == 4);
    for (double db = -10.0; db <= 40.0; db += 5.0) {
        const auto s = sweep_point(base, db);
        const auto [rows, sums] = bits_table(s, false);
        double loss = 0.0;
        int n = 0;
        for (const auto& r : rows) {
            if (r.policy != "optimal") continue;
            CHECK(r.r_exact_floor <= r.r_exact + 1e-12);
            loss += r.r_exact - r.r_exact_floor;
            ++n;
        }
        CHECK(loss / n <= 0.1);
    }
}

TEST_CASE("evaluate and validate on policy files", "[cli]") {
    const auto d = scratch("policy");
    const auto sc = scenario("solar.ini");
    REQUIRE(run({"optimize", "--scenario", sc, "--out", (d / "opt").string()}).code == 0);
    const auto pol = d / "opt" / "policy.csv";
    REQUIRE(run({"evaluate", "--scenario", sc, "--policy", pol.string(), "--out", (d / "ev").string()}).code == 0);
    CHECK(slurp(d / "ev" / "policy.csv") == slurp(pol));
    CHECK(slurp(d / "ev" / "totals.csv") == slurp(d / "opt" / "totals.csv"));

    // keep k,p,q,tau and push interval 10's feedback energy past what has arrived
    std::istringstream in(slurp(pol));
    std::string line, text;
    for (int i = 0; std::getline(in, line); ++i) {
        std::vector<std::string> c;
        std::istringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) c.push_back(cell);
        if (i == 10) c[2] = profiles::format_double(2 * std::stod(c[2]) + 1.0);
        text += c[0] + ',' + c[1] + ',' + c[2] + ',' + c[3] + '\n';
    }
    spit(d / "bad.csv", text);
    auto r = run({"evaluate", "--scenario", sc, "--policy", (d / "bad.csv").string(), "--out", (d / "ev2").string()});
    CHECK(r.code == 2);
    r = run({"validate", "--scenario", sc, "--policy", (d / "bad.csv").string(), "--samples", "10", "--out",
             (d / "val").string()});
    CHECK(r.code == 3);
    CHECK_THAT(r.out, ContainsSubstring("FAIL policy_certificate"));
    CHECK_THAT(r.out, ContainsSubstring("interval 10"));
    const auto val = read_csv(d / "val" / "validate.csv");
    CHECK(val.back()[0] == "policy_certificate");
    CHECK(val.back()[4] == "10");
}

TEST_CASE("validate smoke run passes quickly", "[cli]") {
    const auto d = scratch("validate");
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run({"validate", "--samples", "10", "--out", d.string()});
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(r.code == 0);
    CHECK(secs < 10.0);
    for (const auto& row : read_csv(d / "validate.csv")) CHECK(row[1] == "true");
}

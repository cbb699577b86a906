#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <random>
#include <vector>

#include "ehfo/profiles.hpp"

using namespace ehfo;
using namespace ehfo::profiles;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;
using Vec = std::vector<double>;

TEST_CASE("from_irradiance examples", "[profiles]") {
    CHECK(from_irradiance(Vec{0.0}, 1.0, 0.2, 3600.0) == Vec{0.0});
    CHECK_THAT(from_irradiance(Vec{1000.0}, 0.01, 0.2, 3600.0)[0], WithinRel(7200.0, 1e-15));
    const Vec irr{0, 120, 800.5, 30};
    const Vec a = from_irradiance(irr, 0.3, 0.15, 3600.0);
    const Vec b = from_irradiance(irr, 0.6, 0.15, 3600.0);
    const Vec c = from_irradiance(irr, 0.3, 0.3, 3600.0);
    for (std::size_t k = 0; k < irr.size(); ++k) {
        CHECK_THAT(b[k], WithinAbs(2 * a[k], 1e-9));
        CHECK_THAT(c[k], WithinAbs(2 * a[k], 1e-9));
    }
    CHECK_THROWS_AS(from_irradiance(Vec{1.0}, 0.0, 0.2, 3600.0), DomainError);
    CHECK_THROWS_AS(from_irradiance(Vec{1.0}, 1.0, 1.5, 3600.0), DomainError);
    CHECK_THROWS_AS(from_irradiance(Vec{-1.0}, 1.0, 0.2, 3600.0), DomainError);
}

TEST_CASE("hpn examples", "[profiles]") {
    CHECK(hpn_db(3600.0, 3600.0, 1.0) == 0.0);
    CHECK_THAT(hpn_db(36000.0, 3600.0, 1.0), WithinAbs(10.0, 1e-12));
    CHECK(hpn_linear(7200.0, 3600.0, 2.0) == 1.0);
    CHECK(std::isinf(hpn_db(0.0, 3600.0, 1.0)));
    CHECK(hpn_db(0.0, 3600.0, 1.0) < 0.0);
    CHECK_THROWS_AS(hpn_db(1.0, 0.0, 1.0), DomainError);
    const EHProfile solar = solar_shaped_profile();
    for (int i = 0; i < solar.K(); ++i)
        for (int j = 0; j < solar.K(); ++j)
            if (solar.e_r[i] < solar.e_r[j]) CHECK(hpn_db(solar.e_r[i], 3600, 1) < hpn_db(solar.e_r[j], 3600, 1));
}

TEST_CASE("synthetic_exponential is seeded and scale-equivariant", "[profiles]") {
    const EHProfile a = synthetic_exponential(50, 2.0, 3.0, 99);
    const EHProfile b = synthetic_exponential(50, 2.0, 3.0, 99);
    CHECK(a.e_t == b.e_t);
    CHECK(a.e_r == b.e_r);
    const EHProfile c = synthetic_exponential(50, 8.0, 3.0, 99);
    for (int k = 0; k < 50; ++k) CHECK_THAT(c.e_t[k], WithinRel(4.0 * a.e_t[k], 1e-15));
    CHECK(c.e_r == a.e_r);
    CHECK(synthetic_exponential(50, 2.0, 3.0, 100).e_t != a.e_t);

    const EHProfile big = synthetic_exponential(10000, 5.0, 0.5, 7);
    double st = 0.0, sr = 0.0;
    for (int k = 0; k < big.K(); ++k) st += big.e_t[k], sr += big.e_r[k];
    CHECK_THAT(st / big.K(), WithinRel(5.0, 0.05));
    CHECK_THAT(sr / big.K(), WithinRel(0.5, 0.05));
    CHECK_THROWS_AS(synthetic_exponential(0, 1.0, 1.0, 1), DomainError);
    CHECK_THROWS_AS(synthetic_exponential(3, 0.0, 1.0, 1), DomainError);
}

TEST_CASE("solar-shaped profile defaults", "[profiles]") {
    const EHProfile s = solar_shaped_profile();
    REQUIRE(s.K() == 24);
    CHECK(s.L == 18000);
    CHECK(s.T == 200.0);
    CHECK(s.delta == 3600.0);
    const double peak_t = *std::max_element(s.e_t.begin(), s.e_t.end());
    const double peak_r = *std::max_element(s.e_r.begin(), s.e_r.end());
    CHECK_THAT(peak_t / (s.L * s.T), WithinRel(18.0, 1e-12));
    CHECK_THAT(peak_r / s.L, WithinRel(36.0, 1e-12));
    for (int k : {0, 5, 20, 23}) CHECK(s.e_t[k] == 0.0);
    // unimodal: rises to the peak, then falls
    const auto top = std::max_element(s.e_r.begin(), s.e_r.end()) - s.e_r.begin();
    for (long k = 1; k <= top; ++k) CHECK(s.e_r[k] >= s.e_r[k - 1]);
    for (long k = top + 1; k < s.K(); ++k) CHECK(s.e_r[k] <= s.e_r[k - 1]);
}

TEST_CASE("profile CSV round-trips at full precision", "[profiles][property]") {
    std::mt19937_64 rng(51);
    for (int trial = 0; trial < 50; ++trial) {
        const EHProfile p = synthetic_exponential(1 + static_cast<int>(rng() % 40), 1e7, 3e-3, rng());
        const EHProfile back = parse_profile_csv(format_profile_csv(p));
        CHECK(back.e_t == p.e_t);
        CHECK(back.e_r == p.e_r);
    }
    const auto path = std::filesystem::temp_directory_path() / "ehfo_test_profile.csv";
    const EHProfile solar = solar_shaped_profile();
    write_profile_csv(path.string(), solar);
    const EHProfile read = read_profile_csv(path.string());
    CHECK(read.e_t == solar.e_t);
    CHECK(read.e_r == solar.e_r);
    std::filesystem::remove(path);
}

TEST_CASE("profile CSV accepts comments and blank lines", "[profiles]") {
    const EHProfile p = parse_profile_csv("# synthetic\n\nk,e_t_joules,e_r_joules\n1, 10, 2 # first\n\n2,0,0\n");
    CHECK(p.e_t == Vec{10, 0});
    CHECK(p.e_r == Vec{2, 0});
}

TEST_CASE("profile CSV errors carry line numbers", "[profiles]") {
    auto line_of = [](const std::string& text) -> std::size_t {
        try {
            (void)parse_profile_csv(text);
        } catch (const ParseError& e) {
            return e.line();
        }
        return 999;
    };
    CHECK(line_of("k,e_t,e_r\n1,1,1\n") == 1);
    CHECK(line_of("k,e_t_joules,e_r_joules\n1,1,1\n2,abc,1\n") == 3);
    CHECK(line_of("k,e_t_joules,e_r_joules\n1,1\n") == 2);
    CHECK(line_of("k,e_t_joules,e_r_joules\n2,1,1\n") == 2);
    CHECK(line_of("k,e_t_joules,e_r_joules\n1,1,-1\n") == 2);
    CHECK(line_of("# only a comment\n") == 0);
    CHECK(line_of("k,e_t_joules,e_r_joules\n") == 0);
    CHECK_THROWS_AS(read_profile_csv("/nonexistent/profile.csv"), ParseError);
}

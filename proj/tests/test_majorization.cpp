#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "ehfo/majorization.hpp"

using namespace ehfo::majorization;
using Vec = std::vector<double>;

namespace {

// Random doubly stochastic matrix as a convex combination of permutations.
SquareMatrix random_doubly_stochastic(int n, std::mt19937_64& rng) {
    SquareMatrix d = SquareMatrix::Zero(n, n);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::exponential_distribution<double> ex(1.0);
    std::vector<double> w(4);
    double sw = 0.0;
    for (auto& v : w) sw += (v = ex(rng));
    for (double v : w) {
        std::shuffle(perm.begin(), perm.end(), rng);
        for (int i = 0; i < n; ++i) d(i, perm[i]) += v / sw;
    }
    return d;
}

Vec times(const Vec& y, const SquareMatrix& d) {
    Eigen::RowVectorXd r = Eigen::Map<const Eigen::RowVectorXd>(y.data(), y.size()) * d;
    return Vec(r.data(), r.data() + r.size());
}

Vec random_vec(int n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 10.0);
    Vec v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

}  // namespace

TEST_CASE("is_majorized examples", "[majorization]") {
    CHECK(is_majorized(Vec{2, 2}, Vec{1, 3}));
    CHECK_FALSE(is_majorized(Vec{1, 3}, Vec{2, 2}));
    CHECK(is_majorized(Vec{1.5, 1.5, 3}, Vec{3, 0, 3}));
    CHECK_FALSE(is_majorized(Vec{1, 1}, Vec{1, 2}));  // totals differ
    CHECK_THROWS_AS(is_majorized(Vec{1}, Vec{1, 2}), ehfo::LengthMismatchError);
    CHECK_THROWS_AS(is_majorized(Vec{NAN}, Vec{1}), ehfo::DomainError);
}

TEST_CASE("is_doubly_stochastic examples", "[majorization]") {
    CHECK(is_doubly_stochastic(SquareMatrix::Identity(4, 4)));
    CHECK(is_doubly_stochastic(SquareMatrix::Constant(5, 5, 0.2)));
    SquareMatrix bad = SquareMatrix::Identity(3, 3);
    bad(0, 0) = 0.9;
    CHECK_FALSE(is_doubly_stochastic(bad));
    CHECK_FALSE(is_doubly_stochastic(SquareMatrix::Zero(2, 3)));
}

TEST_CASE("schur_test examples", "[majorization]") {
    const std::vector<std::function<double(double)>> g = {[](double v) { return std::log1p(v); },
                                                          [](double v) { return std::sqrt(v); },
                                                          [](double v) { return -v * v; }};
    CHECK(schur_test(Vec{2, 2}, Vec{1, 3}, g));
    CHECK(schur_test(Vec{1, 3}, Vec{1, 3}, g));
    CHECK_FALSE(schur_test(Vec{1, 3}, Vec{2, 2}, g));
}

TEST_CASE("schur_test holds for concave probes on majorized pairs", "[majorization][property]") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 6);
        const Vec y = random_vec(n, rng);
        const Vec x = times(y, random_doubly_stochastic(n, rng));
        REQUIRE(is_majorized(x, y));
        std::vector<std::function<double(double)>> g;
        for (int k = 0; k < 50; ++k) {
            const double a = u(rng), b = 10 * u(rng), cap = 20 * u(rng);
            if (k % 2) g.push_back([=](double v) { return -a * v * v + b * v; });
            else g.push_back([=](double v) { return std::min(b * v, cap); });
        }
        CHECK(schur_test(x, y, g));
    }
}

TEST_CASE("edmundson_madansky_bound examples", "[majorization]") {
    auto sq = [](double v) { return v * v; };
    CHECK(edmundson_madansky_bound(sq, 0.0, 1.0, 0.5) == 0.5);
    CHECK_THAT(edmundson_madansky_bound([](double v) { return 3 * v - 2; }, -1.0, 4.0, 0.7),
               Catch::Matchers::WithinAbs(3 * 0.7 - 2, 1e-14));
    CHECK(edmundson_madansky_bound(sq, 0.0, 1.0, 0.5) >= 1.0 / 3.0);
    CHECK_THROWS_AS(edmundson_madansky_bound(sq, 0.0, 1.0, 1.5), ehfo::DomainError);
    CHECK_THROWS_AS(edmundson_madansky_bound(sq, 1.0, 1.0, 1.0), ehfo::DomainError);
}

TEST_CASE("edmundson_madansky_bound dominates sampled expectations", "[majorization][property]") {
    std::mt19937_64 rng(22);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        // convex piecewise-linear: max of random affine pieces
        std::vector<std::pair<double, double>> pieces(1 + rng() % 5);
        for (auto& [s, c] : pieces) s = 4 * u(rng) - 2, c = 4 * u(rng) - 2;
        auto f = [&](double v) {
            double m = -INFINITY;
            for (auto [s, c] : pieces) m = std::max(m, s * v + c);
            return m;
        };
        const double a = -u(rng), b = a + 0.1 + u(rng);
        // random discrete distribution on [a, b]
        const int atoms = 1 + static_cast<int>(rng() % 6);
        double mu = 0.0, ef = 0.0, sw = 0.0;
        std::vector<double> w(atoms), x(atoms);
        for (int i = 0; i < atoms; ++i) sw += (w[i] = u(rng) + 1e-3), x[i] = a + (b - a) * u(rng);
        for (int i = 0; i < atoms; ++i) mu += w[i] / sw * x[i], ef += w[i] / sw * f(x[i]);
        CHECK(edmundson_madansky_bound(f, a, b, mu) >= ef - 1e-12);
    }
}

TEST_CASE("majorization is transitive", "[majorization][property]") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 6);
        const Vec z = random_vec(n, rng);
        const Vec y = times(z, random_doubly_stochastic(n, rng));
        const Vec x = times(y, random_doubly_stochastic(n, rng));
        REQUIRE(is_majorized(x, y));
        REQUIRE(is_majorized(y, z));
        CHECK(is_majorized(x, z));
    }
}

TEST_CASE("majorization and doubly stochastic maps are equivalent for small n", "[majorization][property]") {
    std::mt19937_64 rng(24);
    for (int trial = 0; trial < 500; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 4);
        const Vec y = random_vec(n, rng);
        const Vec x = times(y, random_doubly_stochastic(n, rng));
        REQUIRE(is_majorized(x, y));
        const SquareMatrix d = t_transform_matrix(x, y);
        CHECK(is_doubly_stochastic(d));
        const Vec back = times(y, d);
        for (int i = 0; i < n; ++i) CHECK(std::abs(back[i] - x[i]) <= 1e-9);
    }
    CHECK_THROWS_AS(t_transform_matrix(Vec{1, 3}, Vec{2, 2}), ehfo::DomainError);
}

TEST_CASE("column probe for matrix majorization X = Y D", "[majorization][property]") {
    std::mt19937_64 rng(25);
    std::normal_distribution<double> n01;
    for (int trial = 0; trial < 100; ++trial) {
        const int rows = 1 + static_cast<int>(rng() % 3), cols = 2 + static_cast<int>(rng() % 4);
        Eigen::MatrixXd y(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) y(i, j) = n01(rng);
        const Eigen::MatrixXd x = y * random_doubly_stochastic(cols, rng);
        std::vector<std::function<double(const Eigen::VectorXd&)>> g;
        for (int k = 0; k < 10; ++k) {
            Eigen::MatrixXd a(rows, rows);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < rows; ++j) a(i, j) = n01(rng);
            const Eigen::MatrixXd q = a * a.transpose();
            Eigen::VectorXd l(rows);
            for (int i = 0; i < rows; ++i) l(i) = n01(rng);
            g.push_back([q, l](const Eigen::VectorXd& v) { return -v.dot(q * v) + l.dot(v); });
        }
        CHECK(schur_test_columns(x, y, g));
    }
}

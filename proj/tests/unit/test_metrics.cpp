#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "tvsurv/errors.hpp"
#include "tvsurv/metrics.hpp"

using namespace tvsurv;

namespace {

TimeGrid random_grid(std::size_t m, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> step(0.1, 2.0);
    TimeGrid g{{0.0}};
    for (std::size_t j = 0; j < m; ++j) g.boundaries.push_back(g.boundaries.back() + step(rng));
    return g;
}

// Midpoint quadrature of f linearly interpolated between the boundary samples.
double dense_integral(const std::vector<double>& f, const TimeGrid& g, std::size_t per_interval = 2000) {
    double total = 0.0;
    for (std::size_t j = 1; j < g.boundaries.size(); ++j) {
        const double a = g.boundaries[j - 1], b = g.boundaries[j], h = (b - a) / double(per_interval);
        for (std::size_t q = 0; q < per_interval; ++q) {
            const double w = (double(q) + 0.5) / double(per_interval);
            total += ((1 - w) * f[j - 1] + w * f[j]) * h;
        }
    }
    return total;
}

SurvivalCurve random_curve(std::size_t m, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.01, 0.4);
    std::vector<double> h(m);
    for (auto& v : h) v = u(rng);
    return SurvivalCurve::from_hazards(h);
}

}  // namespace

TEST_CASE("tv_pehe simple forms") {
    const TimeGrid g{{0.0, 1.0, 3.0, 3.5}};
    const std::vector<EffectCurve> truth{{0, 0.1, 0.2, 0.3}, {0, -0.1, 0.0, 0.4}};
    CHECK(tv_pehe(truth, truth, g) == 0.0);
    auto shifted = truth;
    for (auto& c : shifted)
        for (auto& v : c) v += 0.05;
    CHECK(tv_pehe(shifted, truth, g) == doctest::Approx(std::sqrt(0.05 * 0.05 * 3.5)).epsilon(1e-14));
    CHECK(tv_pehe(shifted, truth, g, false) == doctest::Approx(0.05 * 0.05 * 3.5).epsilon(1e-14));

    auto doubled = truth;
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 4; ++j) doubled[i][j] = truth[i][j] + 2.0 * (shifted[i][j] - truth[i][j]);
    CHECK(tv_pehe(doubled, truth, g) == doctest::Approx(2.0 * tv_pehe(shifted, truth, g)));

    CHECK_THROWS_AS(tv_pehe(truth, g, truth, TimeGrid{{0.0, 1.0, 3.0, 4.0}}), DataError);
    CHECK_THROWS_AS(tv_pehe(truth, std::vector<EffectCurve>{{0, 1}, {0, 1}}, g), DataError);
}

TEST_CASE("tv_pehe and irmse match dense quadrature") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> z;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 2 + trial % 7, n = 5;
        const TimeGrid g = random_grid(m, rng);
        std::vector<EffectCurve> est(n, EffectCurve(m + 1)), eff(n, EffectCurve(m + 1));
        std::vector<SurvivalCurve> pred, real;
        double pehe_sum = 0.0, irmse_sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> sq(m + 1);
            for (std::size_t j = 0; j <= m; ++j) {
                est[i][j] = z(rng);
                eff[i][j] = z(rng);
                sq[j] = (est[i][j] - eff[i][j]) * (est[i][j] - eff[i][j]);
            }
            pehe_sum += dense_integral(sq, g);
            pred.push_back(random_curve(m, rng));
            real.push_back(random_curve(m, rng));
            const auto a = pred.back().on_boundaries(), b = real.back().on_boundaries();
            std::vector<double> d2(m + 1);
            for (std::size_t j = 0; j <= m; ++j) d2[j] = (a[j] - b[j]) * (a[j] - b[j]);
            irmse_sum += dense_integral(d2, g) / g.horizon();
        }
        CHECK(std::abs(tv_pehe(est, eff, g, false) - pehe_sum / n) < 1e-10);
        CHECK(std::abs(tv_pehe(est, eff, g) - std::sqrt(pehe_sum / n)) < 1e-10);
        CHECK(std::abs(irmse(pred, real, g) - std::sqrt(irmse_sum / n)) < 1e-10);

        // permutation invariance
        std::reverse(est.begin(), est.end());
        std::reverse(eff.begin(), eff.end());
        CHECK(tv_pehe(est, eff, g) == doctest::Approx(std::sqrt(pehe_sum / n)).epsilon(1e-12));
    }
}

TEST_CASE("irmse simple forms") {
    const TimeGrid g{{0.0, 2.0, 5.0}};
    const std::vector<SurvivalCurve> a{SurvivalCurve::from_survival({0.8, 0.5})};
    CHECK(irmse(a, a, g) == 0.0);
    CHECK_THROWS_AS(irmse(a, std::vector<SurvivalCurve>{}, g), DataError);
}

TEST_CASE("c_index") {
    const std::vector<double> times{1, 2, 3, 4, 5};
    const std::vector<int> events{1, 1, 1, 1, 1};
    CHECK(c_index(std::vector<double>{5, 4, 3, 2, 1}, times, events) == 1.0);
    CHECK(c_index(std::vector<double>{1, 1, 1, 1, 1}, times, events) == 0.5);
    CHECK_THROWS_AS(c_index(std::vector<double>{1, 2}, std::vector<double>{1, 2}, std::vector<int>{0, 0}), DataError);

    std::mt19937_64 rng(2);
    std::normal_distribution<double> z;
    std::exponential_distribution<double> e(1.0);
    std::vector<double> s(2000), t(2000), neg(2000);
    std::vector<int> d(2000);
    for (std::size_t i = 0; i < 2000; ++i) {
        s[i] = z(rng);
        neg[i] = -s[i];
        t[i] = e(rng);
        d[i] = int(rng() % 4 != 0);
    }
    const double c = c_index(s, t, d);
    CHECK(std::abs(c - 0.5) < 0.03);
    CHECK(c_index(neg, t, d) == doctest::Approx(1.0 - c).epsilon(1e-12));
}

TEST_CASE("censoring Kaplan-Meier") {
    const std::vector<double> t{1, 2, 3, 4};
    const std::vector<int> d{1, 0, 1, 0};
    const CensoringKm km(t, d);
    CHECK(km.at(1.5) == 1.0);
    CHECK(km.at(2.0) == doctest::Approx(2.0 / 3.0));
    CHECK(km.before(2.0) == 1.0);
    CHECK(km.at(4.0) == 0.0);
}

TEST_CASE("ipcw brier") {
    // Uncensored, constant 0.5 forecast.
    const std::vector<double> t0{1, 2, 3, 4};
    const std::vector<int> all{1, 1, 1, 1};
    const CensoringKm none(t0, all);
    CHECK(brier(std::vector<double>(4, 0.5), t0, all, 2.5, none).value == doctest::Approx(0.25));
    CHECK(brier(std::vector<double>{0, 0, 1, 1}, t0, all, 2.5, none).value == 0.0);

    // Hand computation: G jumps to 2/3 at t=2 (one of three at risk is censored).
    // A (t=1, event):    0.2^2 / G(1-) = 0.04
    // B (t=2, censored): 0, kept in the denominator
    // C (t=3, > tau):    0.3^2 / G(2.5) = 0.135
    // D (t=4, > tau):    0.1^2 / G(2.5) = 0.015
    const std::vector<int> d{1, 0, 1, 0};
    const CensoringKm km(t0, d);
    const auto b = brier(std::vector<double>{0.2, 0.6, 0.7, 0.9}, t0, d, 2.5, km);
    CHECK(b.value == doctest::Approx(0.19 / 4.0).epsilon(1e-15));
    CHECK(b.excluded == 0);

    // At tau = 4 individual D is censored at tau and G(4) = 0: C still counts, with G(3-) = 2/3.
    const auto late = brier(std::vector<double>{0.2, 0.6, 0.7, 0.9}, t0, d, 3.5, km);
    CHECK(late.value == doctest::Approx((0.04 + 0.49 * 1.5 + 0.01 * 1.5) / 4.0).epsilon(1e-15));
}

TEST_CASE("integrated brier averages the per-boundary scores") {
    Cohort c;
    c.d = 1;
    c.K = 1;
    const double times[] = {1.0, 2.0, 3.0, 4.0};
    for (int i = 0; i < 4; ++i) {
        Trajectory t;
        t.id = std::to_string(i);
        t.covariates = {{0.0}, {0.0}};
        t.treatments = {0, 0};
        t.observed_time = times[i];
        t.event = 1;
        c.trajectories.push_back(t);
    }
    const TimeGrid g{{0.0, 2.0, 4.0}};
    const std::vector<SurvivalCurve> pred(4, SurvivalCurve::from_survival({0.5, 0.5}));
    const auto r = integrated_brier(pred, c, g, CensoringKm(c));
    REQUIRE(r.brier.size() == 3);
    CHECK(r.brier[0] == 0.0);
    CHECK(r.brier[1] == doctest::Approx(0.25));
    CHECK(r.ibs == doctest::Approx((0.5 * (0.0 + 0.25) * 2 + 0.5 * (0.25 + r.brier[2]) * 2) / 4.0));
}

TEST_CASE("report serialization") {
    EvalReport r;
    r.c_index = 0.7;
    r.ibs = 0.1;
    r.grid = TimeGrid{{0, 1, 2}};
    r.contrast_a = "11";
    r.contrast_b = "00";
    CHECK(r.to_json().find("\"tv_pehe\":null") != std::string::npos);
    CHECK(eval_csv_rows("full", r).find("tv_pehe") == std::string::npos);
    r.tv_pehe = 0.25;
    CHECK(eval_csv_rows("full", r).find("full,tv_pehe,0.25") != std::string::npos);
}

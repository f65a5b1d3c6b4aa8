// Constrained path-integral tests. Frozen oracles: scalar potential -3/2 at
// the all-ones point with unit rates, deflator vector potential (-1/2, -1/2)
// for identity diffusion, Lagrangian value -1.08 for a pinned input set, and
// the log-2 action integral for the linear deflator ramp.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <functional>
#include <vector>

#include "qmarket/feynman.hpp"
#include "qmarket/rng.hpp"

using namespace qmkt;

namespace {

MarketPoint point2(vecN x, vecN d, vecN r) {
    MarketPoint q;
    q.x = std::move(x);
    q.d = std::move(d);
    q.r = std::move(r);
    return q;
}

StepMetrics metrics_of(vecN sx, vecN sd, vecN sr) {
    StepMetrics m;
    m.sigma_x = std::move(sx);
    m.sigma_d = std::move(sd);
    m.sigma_r = std::move(sr);
    return m;
}

/// Complex 1-D Simpson integral used as an independent oracle for overlap
/// and mass integrals.
complex simpson(real a, real b, const std::function<complex(real)>& f, int n = 400) {
    complex acc = f(a) + f(b);
    const real h = (b - a) / n;
    for (int i = 1; i < n; ++i) acc += f(a + i * h) * ((i % 2) ? 4.0 : 2.0);
    return acc * (h / 3.0);
}

}  // namespace

TEST_CASE("scalar and vector potentials at pinned points") {
    std::vector<vecN> id2 = {{1.0, 0.0}, {0.0, 1.0}};

    auto p = gat_potentials(point2({1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}), id2);
    CHECK(p.phi == doctest::Approx(-1.5).epsilon(1e-15));
    REQUIRE(p.a_d.size() == 2);
    CHECK(p.a_d[0] == doctest::Approx(-0.5).epsilon(1e-15));
    CHECK(p.a_d[1] == doctest::Approx(-0.5).epsilon(1e-15));

    // Zero rates leave only the constant -1/2 regardless of x and D.
    auto pz = gat_potentials(point2({0.3, 1.7}, {0.9, 0.4}, {0.0, 0.0}), id2);
    CHECK(pz.phi == doctest::Approx(-0.5).epsilon(1e-15));

    // Non-diagonal diffusion, hand-inverted covariance:
    // sigma = [[2,0],[1,1]] -> C = [[4,2],[2,2]], C^{-1} = [[.5,-.5],[-.5,1]],
    // x = (1,2), x.D = 3 -> a = (1/6, -1/2).
    std::vector<vecN> tri = {{2.0, 0.0}, {1.0, 1.0}};
    auto pt = gat_potentials(point2({1.0, 2.0}, {1.0, 1.0}, {0.0, 0.0}), tri);
    CHECK(pt.a_d[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-13));
    CHECK(pt.a_d[1] == doctest::Approx(-0.5).epsilon(1e-13));

    std::vector<vecN> rank1 = {{1.0, 1.0}, {1.0, 1.0}};
    CHECK_THROWS_AS((void)gat_potentials(point2({1.0, 1.0}, {1.0, 1.0}, {0.0, 0.0}), rank1),
                    Error);
    CHECK_THROWS_AS((void)gat_potentials(point2({1.0, -1.0}, {1.0, 1.0}, {0.0, 0.0}), id2),
                    Error);
    CHECK_THROWS_AS((void)gat_potentials(point2({1.0, 1.0}, {1.0, 1.0}, {0.0, 0.0}),
                                         std::vector<vecN>{{1.0, 0.0}}),
                    Error);
}

TEST_CASE("stochastic-mechanics Lagrangian values") {
    MarketPoint q1 = point2({1.0}, {1.0}, {0.0});
    // Unit drift along the first coordinate and nothing else: kinetic 1/2.
    vecN b = {1.0, 0.0, 0.0};
    vecN a0 = {0.0, 0.0, 0.0};
    CHECK(guerra_morato_lagrangian(q1, b, 0.0, 0.0, a0, 0.0) ==
          doctest::Approx(0.5).epsilon(1e-15));

    // A constant shift of the scalar potential shifts the value by -c.
    real base = guerra_morato_lagrangian(q1, b, 0.2, 0.1, a0, -0.3);
    real shifted = guerra_morato_lagrangian(q1, b, 0.2, 0.1 + 0.7, a0, -0.3);
    CHECK(shifted - base == doctest::Approx(-0.7).epsilon(1e-14));

    // Pinned full-width example (two assets, six coordinates):
    // kinetic 0.67 + 0.15 - 0.2 - 1.5 - 0.2 = -1.08.
    MarketPoint q2 = point2({1.0, 1.0}, {1.0, 1.0}, {0.0, 0.0});
    vecN b2 = {0.5, -1.0, 0.0, 0.0, 0.0, 0.3};
    vecN a2 = {1.0, 2.0, 0.0, 0.0, -1.0, 0.0};
    CHECK(guerra_morato_lagrangian(q2, b2, 0.3, 0.2, a2, -0.4) ==
          doctest::Approx(-1.08).epsilon(1e-14));

    CHECK_THROWS_AS((void)guerra_morato_lagrangian(q2, b, 0.0, 0.0, a0, 0.0), Error);
}

TEST_CASE("amplitude field from R and S") {
    std::vector<real> R = {0.0, -0.5, 0.3, -2.0};
    std::vector<real> S = {0.0, 1.2, -0.7, 3.9};
    auto psi = wavefunction_from_RS(R, S);
    REQUIRE(psi.size() == 4);
    CHECK(psi[0] == complex{1.0, 0.0});
    for (size_t i = 0; i < psi.size(); ++i) {
        CHECK(std::norm(psi[i]) ==
              doctest::Approx(std::exp(2.0 * R[i])).epsilon(1e-13));
        CHECK(std::arg(psi[i]) ==
              doctest::Approx(std::remainder(S[i], 2.0 * pi)).epsilon(1e-13));
    }
    CHECK_THROWS_AS((void)wavefunction_from_RS({0.0}, {0.0, 1.0}), Error);
}

TEST_CASE("constrained step sampler: orthogonality, unit speed, frozen blocks") {
    RngStream rng(2026, 7);
    MarketPoint q = point2({1.0, 0.4}, {0.8, 1.1}, {0.0, 0.0});
    StepMetrics m = metrics_of({0.5, 2.0}, {1.0, 3.0}, {0.0, 0.7});
    const real ds = 0.01;

    for (int k = 0; k < 200; ++k) {
        PathIncrement inc = sample_constrained_step(q, m, ds, rng);
        // Frozen rate coordinate never moves.
        CHECK(inc.dr[0] == 0.0);
        // Orthogonality to the deflator direction.
        real ortho = (inc.dx[0] * q.d[0] + inc.dx[1] * q.d[1]) / ds;
        CHECK(std::abs(ortho) <= 1e-10);
        // Unit metric speed.
        real speed = 0.0;
        speed += (inc.dx[0] / ds / 0.5) * (inc.dx[0] / ds / 0.5);
        speed += (inc.dx[1] / ds / 2.0) * (inc.dx[1] / ds / 2.0);
        speed += (inc.dd[0] / ds / 1.0) * (inc.dd[0] / ds / 1.0);
        speed += (inc.dd[1] / ds / 3.0) * (inc.dd[1] / ds / 3.0);
        speed += (inc.dr[1] / ds / 0.7) * (inc.dr[1] / ds / 0.7);
        CHECK(speed == doctest::Approx(1.0).epsilon(1e-12));
    }

    // One asset: the orthogonality constraint kills the nominal coordinate
    // exactly, other blocks keep moving.
    MarketPoint q1 = point2({1.3}, {0.9}, {0.05});
    StepMetrics m1 = metrics_of({0.6}, {0.4}, {0.2});
    for (int k = 0; k < 50; ++k) {
        PathIncrement inc = sample_constrained_step(q1, m1, ds, rng);
        CHECK(inc.dx[0] == 0.0);
        CHECK(std::abs(inc.dd[0]) + std::abs(inc.dr[0]) > 0.0);
    }

    // Direction means vanish: 20000 draws, each component within 4 empirical
    // standard errors of zero.
    const int n = 20000;
    std::vector<real> sum(6, 0.0), sumsq(6, 0.0);
    RngStream rng2(99, 1);
    for (int k = 0; k < n; ++k) {
        PathIncrement inc = sample_constrained_step(q, m, ds, rng2);
        real comps[6] = {inc.dx[0], inc.dx[1], inc.dd[0], inc.dd[1], inc.dr[0], inc.dr[1]};
        for (int c = 0; c < 6; ++c) {
            sum[c] += comps[c] / ds;
            sumsq[c] += comps[c] / ds * (comps[c] / ds);
        }
    }
    for (int c = 0; c < 6; ++c) {
        real mean = sum[c] / n;
        real sd = std::sqrt(std::max(0.0, sumsq[c] / n - mean * mean));
        CHECK(std::abs(mean) <= 4.0 * sd / std::sqrt(static_cast<real>(n)) + 1e-15);
    }

    // Degenerate inputs.
    RngStream r3(1, 1);
    CHECK_THROWS_AS((void)sample_constrained_step(q, metrics_of({0, 0}, {0, 0}, {0, 0}), ds, r3),
                    Error);
    CHECK_THROWS_AS((void)sample_constrained_step(q, metrics_of({-1, 1}, {1, 1}, {1, 1}), ds, r3),
                    Error);
    CHECK_THROWS_AS((void)sample_constrained_step(q, m, 0.0, r3), Error);
    CHECK_THROWS_AS(
        (void)sample_constrained_step(point2({1.0}, {0.0}, {0.0}),
                                      metrics_of({1}, {1}, {1}), ds, r3),
        Error);
    // Only the nominal block active with one asset: no direction survives.
    CHECK_THROWS_AS(
        (void)sample_constrained_step(q1, metrics_of({1}, {0}, {0}), ds, r3), Error);
}

TEST_CASE("sampled paths satisfy both invariants everywhere") {
    RngStream rng(5150, 0);
    MarketPoint start = point2({1.0, 1.0}, {1.0, 1.0}, {0.0, 0.0});
    StepMetrics m = metrics_of({0.3, 0.3}, {0.2, 0.5}, {0.1, 0.1});
    ConstrainedPath path = sample_constrained_path(start, m, 0.02, 500, rng);
    REQUIRE(path.steps.size() == 500);
    CHECK(max_constraint_residual(path, m) <= 1e-10);

    MarketPoint mid = path.point_at(250);
    MarketPoint end = path.point_at(500);
    CHECK(mid.t == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(end.t == doctest::Approx(10.0).epsilon(1e-12));
    // Rates moved away from zero with positive probability mass.
    CHECK(std::abs(end.r[0]) + std::abs(end.r[1]) > 0.0);
}

TEST_CASE("path action: pinned integrals, refinement order, additivity") {
    // Deflator ramp D = (1+s, 1) against x = (1, 0): integral of 1/(1+s) over
    // [0,1] is log 2; the left-endpoint sum converges at first order.
    auto ramp_path = [](int n) {
        ConstrainedPath path;
        path.start = point2({1.0, 0.0}, {1.0, 1.0}, {0.0, 0.0});
        path.ds = 1.0 / n;
        PathIncrement inc;
        inc.dx = {0.0, 0.0};
        inc.dd = {path.ds, 0.0};
        inc.dr = {0.0, 0.0};
        path.steps.assign(n, inc);
        return path;
    };
    real a1000 = path_action(ramp_path(1000));
    real a2000 = path_action(ramp_path(2000));
    real e1 = std::abs(a1000 - std::log(2.0));
    real e2 = std::abs(a2000 - std::log(2.0));
    CHECK(e1 < 1e-3);
    CHECK(e1 / e2 == doctest::Approx(2.0).epsilon(0.1));

    // No deflator motion and zero rates: the action vanishes identically.
    ConstrainedPath flat;
    flat.start = point2({0.7, 0.2}, {1.0, 1.5}, {0.0, 0.0});
    flat.ds = 0.1;
    PathIncrement still;
    still.dx = {0.01, -0.02};
    still.dd = {0.0, 0.0};
    still.dr = {0.0, 0.0};
    flat.steps.assign(10, still);
    CHECK(path_action(flat) == 0.0);

    // Constant rates with every coordinate frozen: action = 0.3 t at
    // x = (1, 0), where only the first rate enters.
    ConstrainedPath rated = flat;
    rated.start = point2({1.0, 0.0}, {1.0, 1.0}, {0.3, 0.9});
    PathIncrement frozen;
    frozen.dx = {0.0, 0.0};
    frozen.dd = {0.0, 0.0};
    frozen.dr = {0.0, 0.0};
    rated.steps.assign(10, frozen);
    CHECK(path_action(rated) == doctest::Approx(0.3).epsilon(1e-12));

    // A rate field overrides the carried coordinates.
    RateField half = [](real, const MarketPoint& q) { return vecN(q.x.size(), 0.5); };
    CHECK(path_action(rated, half) == doctest::Approx(0.5).epsilon(1e-12));

    // Additivity over concatenation.
    ConstrainedPath whole = ramp_path(800);
    ConstrainedPath head = whole, tail = whole;
    head.steps.resize(400);
    tail.start = whole.point_at(400);
    tail.steps.erase(tail.steps.begin(), tail.steps.begin() + 400);
    CHECK(path_action(whole) ==
          doctest::Approx(path_action(head) + path_action(tail)).epsilon(1e-12));

    // x.D = 0 at the start point.
    ConstrainedPath bad = flat;
    bad.start = point2({1.0, -1.0}, {1.0, 1.0}, {0.0, 0.0});
    CHECK_THROWS_AS((void)path_action(bad), Error);
}

namespace {

PathIntegralConfig capture_all_config(int n_paths, uint64_t seed) {
    PathIntegralConfig cfg;
    cfg.n_paths = n_paths;
    cfg.n_steps = 20;
    cfg.ds = 0.05;
    cfg.seed = seed;
    cfg.x_axes = {{-0.5, 1.5, 10}, {-0.5, 1.5, 10}};
    cfg.d_axes = {{0.5, 1.5, 2}, {0.5, 1.5, 2}};
    cfg.r_start = {0.0, 0.0};
    return cfg;
}

PathIntegralModel frozen_deflator_model(real sx) {
    PathIntegralModel model;
    model.metrics = metrics_of({sx, sx}, {0.0, 0.0}, {0.0, 0.0});
    return model;
}

}  // namespace

TEST_CASE("path integral: zero-action regime has exactly unit phase") {
    // Frozen deflator and rate blocks with zero rates: every action term is
    // exactly zero, so contributions stay on the positive real axis.
    auto psi0 = [](const MarketPoint&) { return complex{0.25, 0.0}; };
    PathIntegralConfig cfg = capture_all_config(4000, 31);
    TerminalField field = evolve_via_path_integral(psi0, 1.0, cfg, frozen_deflator_model(0.1));

    REQUIRE(field.size() == 10 * 10 * 2 * 2);
    int populated = 0, total_paths = 0;
    for (size_t b = 0; b < field.size(); ++b) {
        CHECK(field.psi[b].imag() == 0.0);
        CHECK(field.psi[b].real() >= 0.0);
        CHECK(field.se_im[b] == 0.0);
        total_paths += field.n_effective[b];
        if (field.n_effective[b] > 0) ++populated;
    }
    // Starts cover the whole bin box, so edge starts can walk out (walk range
    // sigma * t = 0.1); almost everything stays captured.
    CHECK(total_paths >= 3800);
    CHECK(total_paths <= 4000);
    CHECK(populated > 100);

    // Start weight 0.25 * volume 4 = 1 per path: the captured mass equals the
    // captured path fraction exactly.
    complex mass{0.0, 0.0};
    for (size_t b = 0; b < field.size(); ++b) mass += field.psi[b] * field.bin_volume;
    CHECK(mass.real() == doctest::Approx(total_paths / 4000.0).epsilon(1e-14));
    CHECK(mass.imag() == 0.0);
}

TEST_CASE("path integral: deterministic for a fixed seed") {
    auto psi0 = [](const MarketPoint& q) {
        return complex{std::exp(-8.0 * (q.x[0] - 0.5) * (q.x[0] - 0.5)), 0.0};
    };
    PathIntegralConfig cfg = capture_all_config(2000, 77);
    PathIntegralModel model = frozen_deflator_model(0.08);
    TerminalField a = evolve_via_path_integral(psi0, 1.0, cfg, model);
    TerminalField b = evolve_via_path_integral(psi0, 1.0, cfg, model);
    REQUIRE(a.size() == b.size());
    for (size_t k = 0; k < a.size(); ++k) {
        CHECK(a.psi[k].real() == b.psi[k].real());
        CHECK(a.psi[k].imag() == b.psi[k].imag());
        CHECK(a.n_effective[k] == b.n_effective[k]);
    }
}

TEST_CASE("path integral: constant rate field twists every bin by the same phase") {
    auto psi0 = [](const MarketPoint&) { return complex{1.0, 0.0}; };
    PathIntegralConfig cfg;
    cfg.n_paths = 500;
    cfg.n_steps = 10;
    cfg.ds = 0.1;
    cfg.seed = 5;
    cfg.x_axes = {{0.0, 1.0, 1}};
    cfg.d_axes = {{0.5, 1.5, 4}};
    cfg.r_start = {0.0};
    PathIntegralModel model;
    // One asset: x is frozen by the constraint; the deflator random-walks.
    model.metrics = metrics_of({0.0}, {0.05}, {0.0});
    model.rates = [](real, const MarketPoint& q) { return vecN(q.x.size(), 0.7); };

    // Action = 0.7 t + sum of D'/D terms; with x scalar the drift term is
    // D'/D, so freeze it out by comparing against a zero-rate run.
    TerminalField with_rate = evolve_via_path_integral(psi0, 1.0, cfg, model);
    PathIntegralModel no_rate = model;
    no_rate.rates = [](real, const MarketPoint& q) { return vecN(q.x.size(), 0.0); };
    TerminalField base = evolve_via_path_integral(psi0, 1.0, cfg, no_rate);
    for (size_t b = 0; b < with_rate.size(); ++b) {
        if (with_rate.n_effective[b] == 0) continue;
        complex ratio = with_rate.psi[b] / base.psi[b];
        CHECK(std::arg(ratio) == doctest::Approx(0.7).epsilon(1e-10));
        CHECK(std::abs(ratio) == doctest::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("path integral: linear functionals, standard errors, and scaling") {
    auto psi0 = [](const MarketPoint& q) {
        return complex{std::exp(-8.0 * (q.x[0] - 0.5) * (q.x[0] - 0.5)) *
                           std::exp(-8.0 * (q.x[1] - 0.5) * (q.x[1] - 0.5)),
                       0.0};
    };
    PathIntegralModel model = frozen_deflator_model(0.1);

    TerminalField small = evolve_via_path_integral(psi0, 1.0, capture_all_config(4000, 11), model);
    TerminalField large =
        evolve_via_path_integral(psi0, 1.0, capture_all_config(64000, 11), model);

    std::vector<complex> ones(small.size(), complex{1.0, 0.0});
    auto [v_small, se_small, sei_small] = small.linear_functional(ones);
    auto [v_large, se_large, sei_large] = large.linear_functional(ones);

    // The functional with unit weight equals the summed field mass.
    complex mass{0.0, 0.0};
    for (size_t b = 0; b < small.size(); ++b) mass += small.psi[b] * small.bin_volume;
    CHECK(v_small.real() == doctest::Approx(mass.real()).epsilon(1e-13));

    // Independent oracle for the true mass: the amplitude integrated over the
    // start box (one 1-D Simpson integral per axis). A small upward bias from
    // boundary leakage is allowed for alongside the Monte-Carlo band.
    auto marginal = simpson(-0.5, 1.5, [](real x) {
        return complex{std::exp(-8.0 * (x - 0.5) * (x - 0.5)), 0.0};
    });
    real truth = marginal.real() * marginal.real();
    CHECK(std::abs(v_large.real() - truth) <= 4.0 * se_large + 0.002);

    // Monte-Carlo error shrinks like n^{-1/2}: a factor 16 in paths divides
    // the standard error by about 4.
    CHECK(se_small / se_large == doctest::Approx(4.0).epsilon(0.35));
    CHECK(se_small > 0.0);
    CHECK(sei_small == 0.0);  // purely real contributions
    (void)sei_large;

    CHECK_THROWS_AS((void)small.linear_functional(std::vector<complex>(3)), Error);
}

TEST_CASE("path integral: plane-wave modes survive transport within tolerance") {
    // Initial data: the lowest oscillatory mode on the unit box, restricted to
    // the box; transport for t = 1 with a small nominal-block walk barely
    // damps low modes, so binned mode estimates match the overlap integrals.
    auto in_box = [](const MarketPoint& q) {
        return q.x[0] >= 0.0 && q.x[0] <= 1.0 && q.x[1] >= 0.0 && q.x[1] <= 1.0;
    };
    auto psi0 = [&](const MarketPoint& q) -> complex {
        if (!in_box(q)) return {0.0, 0.0};
        return std::polar(1.0, -pi * (q.x[0] + q.x[1]));
    };

    PathIntegralConfig cfg;
    cfg.n_paths = 20000;
    cfg.n_steps = 25;
    cfg.ds = 0.04;
    cfg.seed = 4242;
    cfg.x_axes = {{-0.2, 1.2, 24}, {-0.2, 1.2, 24}};
    cfg.d_axes = {{0.7, 1.3, 2}, {0.7, 1.3, 2}};
    cfg.r_start = {0.0, 0.0};
    PathIntegralModel model = frozen_deflator_model(0.05);

    TerminalField field = evolve_via_path_integral(psi0, 1.0, cfg, model);

    // Mode functional: conj of e^{-i pi (k1 x1 + k2 x2)} at bin centers,
    // deflator block integrated out.
    auto mode = [&](int k1, int k2) {
        std::vector<complex> g(field.size());
        size_t idx = 0;
        for (int c0 = 0; c0 < 24; ++c0)
            for (int c1 = 0; c1 < 24; ++c1)
                for (int c2 = 0; c2 < 2; ++c2)
                    for (int c3 = 0; c3 < 2; ++c3) {
                        (void)c2;
                        (void)c3;
                        real x1 = field.axes[0].center(c0);
                        real x2 = field.axes[1].center(c1);
                        g[idx++] = std::polar(1.0, pi * (k1 * x1 + k2 * x2)) /
                                   (0.6 * 0.6);  // deflator box volume
                    }
        return field.linear_functional(g);
    };

    // Oracle: separable overlap integrals over the unit box.
    auto overlap1d = [&](int k) {
        return simpson(0.0, 1.0, [&](real x) { return std::polar(1.0, (k - 1.0) * pi * x); });
    };
    struct Probe {
        int k1, k2;
    };
    for (Probe pr : {Probe{1, 1}, Probe{2, 1}, Probe{3, 1}}) {
        auto [m, se_re, se_im] = mode(pr.k1, pr.k2);
        complex truth = overlap1d(pr.k1) * overlap1d(pr.k2);
        real tol = 4.0 * std::max(se_re, se_im) + 0.02;
        CHECK(std::abs(m - truth) <= tol);
    }
}

TEST_CASE("path integral: configuration and metric errors") {
    auto psi0 = [](const MarketPoint&) { return complex{1.0, 0.0}; };
    PathIntegralConfig cfg = capture_all_config(100, 1);
    PathIntegralModel model = frozen_deflator_model(0.1);

    PathIntegralConfig one_path = cfg;
    one_path.n_paths = 1;
    CHECK_THROWS_AS((void)evolve_via_path_integral(psi0, 1.0, one_path, model), Error);

    PathIntegralConfig wrong_t = cfg;
    wrong_t.ds = 0.06;
    CHECK_THROWS_AS((void)evolve_via_path_integral(psi0, 1.0, wrong_t, model), Error);

    PathIntegralConfig no_axes = cfg;
    no_axes.x_axes.clear();
    CHECK_THROWS_AS((void)evolve_via_path_integral(psi0, 1.0, no_axes, model), Error);

    PathIntegralModel frozen;
    frozen.metrics = metrics_of({0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0});
    CHECK_THROWS_AS((void)evolve_via_path_integral(psi0, 1.0, cfg, frozen), Error);

    // A throwing amplitude surfaces as a library error, not a crash.
    auto boom = [](const MarketPoint&) -> complex { throw std::runtime_error("bad field"); };
    CHECK_THROWS_AS((void)evolve_via_path_integral(boom, 1.0, cfg, model), Error);
}

// Bubble valuation tests. Frozen analytic oracles for the uniform terminal
// law with density weight 2u: reweighted mean 2/3, mean difference -1/6,
// decomposition variance 1/12 + 1/18 = 5/36, per-sample difference variance
// 19/180 (includes the cross term the decomposition drops).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "qmarket/bubbles.hpp"
#include "qmarket/rng.hpp"

using namespace qmkt;

namespace {

/// Two-point ensemble whose terminal deflator values are handed in directly.
PathEnsemble terminal_ensemble(const std::vector<vecN>& terminal, real tau = 1.0) {
    const int n_paths = static_cast<int>(terminal.size());
    const int N = static_cast<int>(terminal.front().size());
    PathEnsemble ens;
    ens.grid = TimeGrid{0.0, tau, 1};
    ens.n_assets = N;
    ens.n_paths = n_paths;
    ens.data.assign(static_cast<size_t>(n_paths) * 2 * 3 * N, 0.0);
    for (int p = 0; p < n_paths; ++p)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < N; ++j) {
                ens.data[(static_cast<size_t>(p) * 2 + i) * 3 * N + j] = 1.0;  // x block
                ens.data[(static_cast<size_t>(p) * 2 + i) * 3 * N + N + j] =
                    i == 1 ? terminal[p][j] : 0.5;
            }
    return ens;
}

PathEnsemble constant_ensemble(real value, int N, int n_paths, int n_steps, real h) {
    PathEnsemble ens;
    ens.grid = TimeGrid{0.0, h, n_steps};
    ens.n_assets = N;
    ens.n_paths = n_paths;
    ens.data.assign(static_cast<size_t>(n_paths) * (n_steps + 1) * 3 * N, 0.0);
    for (int p = 0; p < n_paths; ++p)
        for (int i = 0; i <= n_steps; ++i)
            for (int j = 0; j < N; ++j)
                ens.data[(static_cast<size_t>(p) * (n_steps + 1) + i) * 3 * N + N + j] = value;
    return ens;
}

std::vector<vecN> uniform_samples(int n, uint64_t seed, int N = 1) {
    RngStream rng(seed, 0);
    std::vector<vecN> out(n, vecN(N));
    for (auto& s : out)
        for (int j = 0; j < N; ++j) s[j] = rng.uniform01();
    return out;
}

RadonNikodymWeight tilt_weight() {
    RadonNikodymWeight w;
    w.density = [](const vecN& s) { return 2.0 * s[0]; };
    return w;
}

}  // namespace

TEST_CASE("pairwise summation matches a high-precision reference") {
    RngStream rng(7, 0);
    std::vector<real> v(12345);
    long double ref = 0.0L;
    for (auto& x : v) {
        x = rng.normal();
        ref += static_cast<long double>(x);
    }
    CHECK(pairwise_sum(v) == doctest::Approx(static_cast<real>(ref)).epsilon(1e-13));
    CHECK(pairwise_sum({}) == 0.0);
    CHECK(pairwise_sum({3.25}) == 3.25);
    CHECK(pairwise_mean(std::vector<real>(64, 0.75)) == 0.75);
}

TEST_CASE("reweighting density: renormalization and sign guard") {
    const std::vector<vecN> samples = uniform_samples(20000, 11);
    RadonNikodymWeight w = tilt_weight();
    w.renormalize(samples);
    std::vector<real> vals(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) vals[i] = w(samples[i]);
    CHECK(std::abs(pairwise_mean(vals) - 1.0) <= 1e-3);  // invariant, float-exact by design
    CHECK(std::abs(pairwise_mean(vals) - 1.0) < 1e-12);

    RadonNikodymWeight bad;
    bad.density = [](const vecN& s) { return s[0] - 0.5; };
    CHECK_THROWS_AS(bad.renormalize(samples), Error);
    CHECK_THROWS_AS((void)bad({0.1}), Error);
    CHECK(RadonNikodymWeight::unit()({0.3}) == 1.0);
    RadonNikodymWeight unset;
    CHECK_THROWS_AS((void)unset({0.3}), Error);
}

TEST_CASE("payoff registry and pointwise parity") {
    const Payoff call = make_payoff("call", 1.0, 0);
    const Payoff put = make_payoff("put", 1.0, 0);
    const Payoff fwd = make_payoff("forward", 1.0, 0);
    const Payoff id = make_payoff("identity", 0.0, 1);
    const Payoff con = make_payoff("constant", 2.5, 0);
    CHECK(call({1.5, 0.0}) == 0.5);
    CHECK(call({0.5, 0.0}) == 0.0);
    CHECK(put({0.5, 0.0}) == 0.5);
    CHECK(put({1.5, 0.0}) == 0.0);
    CHECK(fwd({0.5, 0.0}) == -0.5);
    CHECK(id({0.5, 0.9}) == 0.9);
    CHECK(con({0.5, 0.9}) == 2.5);
    for (real s : {0.3, 0.99, 1.0, 1.7, 2.4})
        CHECK(call({s}) - put({s}) == fwd({s}));  // exact: one side is zero
    CHECK_THROWS_AS((void)make_payoff("digital", 1.0, 0), Error);
    CHECK_THROWS_AS((void)call({}), Error);
    CHECK_THROWS_AS((void)id({0.6}), Error);
}

TEST_CASE("asset fundamentals: deterministic, discounted, dividend cases") {
    // constant price, unit weight, zero rate: the price itself, exactly
    const PathEnsemble flat = constant_ensemble(0.75, 2, 64, 50, 0.01);
    const McVector plain =
        fundamental_value_assets(flat, RadonNikodymWeight::unit(), nullptr, 0.5, 0.0);
    CHECK(plain.value[0] == 0.75);
    CHECK(plain.value[1] == 0.75);
    CHECK(plain.se[0] == 0.0);

    // constant cash rate discounts by the left-endpoint exponent sum
    const McVector disc = fundamental_value_assets(
        flat, RadonNikodymWeight::unit(), [](real) { return 0.1; }, 0.5, 0.0);
    CHECK(disc.value[0] == doctest::Approx(0.75 * std::exp(-0.05)).epsilon(1e-12));

    // constant dividend stream adds its discounted integral
    const McVector divd = fundamental_value_assets(
        flat, RadonNikodymWeight::unit(), nullptr, 0.5, 0.0,
        [](real, const vecN& s) { return vecN(s.size(), 0.2); });
    CHECK(divd.value[0] == doctest::Approx(0.75 + 0.2 * 0.5).epsilon(1e-12));

    // error paths
    PathEnsemble one = flat;
    one.n_paths = 1;
    one.data.resize(flat.data.size() / 64);
    CHECK_THROWS_AS(
        (void)fundamental_value_assets(one, RadonNikodymWeight::unit(), nullptr, 0.5, 0.0),
        Error);
    CHECK_THROWS_AS(
        (void)fundamental_value_assets(flat, RadonNikodymWeight::unit(), nullptr, 0.9, 0.0),
        Error);
    CHECK_THROWS_AS(
        (void)fundamental_value_assets(flat, RadonNikodymWeight::unit(), nullptr, 0.2, 0.2),
        Error);
    CHECK_THROWS_AS(
        (void)fundamental_value_assets(flat, RadonNikodymWeight::unit(), nullptr, 0.255, 0.0),
        Error);
}

TEST_CASE("martingale prices recover the spot within 3 standard errors") {
    SdeModel model;
    model.n_assets = 2;
    model.k_noise = 2;
    model.sigma_d = [](const MarketPoint&, vecN& out) {
        out[0] = 0.2;
        out[1] = 0.0;
        out[2] = 0.0;
        out[3] = 0.2;
    };
    InitialSpec init;
    init.point.x = {1.0, 1.0};
    init.point.d = {1.0, 0.8};
    init.point.r = {0.0, 0.0};
    const PathEnsemble ens = simulate_sde(model, init, TimeGrid{0.0, 0.01, 50}, 4000, 977);
    const McVector est =
        fundamental_value_assets(ens, RadonNikodymWeight::unit(), nullptr, 0.5, 0.0);
    CHECK(est.se[0] > 0.0);
    CHECK(std::abs(est.value[0] - 1.0) <= 3.0 * est.se[0]);
    CHECK(std::abs(est.value[1] - 0.8) <= 3.0 * est.se[1]);
}

TEST_CASE("uniform terminal law with linear tilt: reweighted mean 2/3") {
    const std::vector<vecN> samples = uniform_samples(20000, 23);
    const PathEnsemble ens = terminal_ensemble(samples);
    RadonNikodymWeight w = tilt_weight();
    w.renormalize(samples);
    const McVector star = fundamental_value_assets(ens, w, nullptr, 1.0, 0.0);
    CHECK(std::abs(star.value[0] - 2.0 / 3.0) <= 3.0 * star.se[0]);

    // bubble at quoted 1/2: -1/6; identity with the fundamental is exact
    const McVector bub = asset_bubble(ens, {0.5}, w, nullptr, 1.0, 0.0);
    CHECK(std::abs(bub.value[0] - (-1.0 / 6.0)) <= 3.0 * bub.se[0]);
    CHECK(bub.value[0] + star.value[0] == 0.5);
    const McVector shifted = asset_bubble(ens, {0.5 + 0.25}, w, nullptr, 1.0, 0.0);
    CHECK(shifted.value[0] == doctest::Approx(bub.value[0] + 0.25).epsilon(1e-14));
    CHECK_THROWS_AS((void)asset_bubble(ens, {0.5, 0.5}, w, nullptr, 1.0, 0.0), Error);
}

TEST_CASE("bubble moment formulas against the analytic tilt oracle") {
    const std::vector<vecN> samples = uniform_samples(100000, 41);
    RadonNikodymWeight w = tilt_weight();
    w.renormalize(samples);
    const BubbleStats stats = bubble_discounted_stats(samples, w);
    REQUIRE(stats.n_samples == 100000);
    CHECK(stats.mean_se[0] > 0.0);
    CHECK(std::abs(stats.mean[0] - (-1.0 / 6.0)) <= 3.0 * stats.mean_se[0]);
    CHECK(std::abs(stats.variance[0] - 5.0 / 36.0) <= 3.0 * stats.variance_se[0]);
    // the per-sample difference variance keeps the cross term: 19/180
    CHECK(stats.empirical_variance[0] == doctest::Approx(19.0 / 180.0).epsilon(0.05));

    // unit weight: mean 0, variance twice the statistical variance (1/6)
    const BubbleStats unit = bubble_discounted_stats(samples, RadonNikodymWeight::unit());
    CHECK(std::abs(unit.mean[0]) <= 3.0 * std::max(unit.mean_se[0], 1e-15));
    CHECK(unit.mean_se[0] < 1e-12);  // per-sample difference is identically zero
    CHECK(unit.variance[0] == doctest::Approx(1.0 / 6.0).epsilon(0.02));
    CHECK(unit.empirical_variance[0] < 1e-20);

    // degenerate law: everything collapses
    const std::vector<vecN> flat(100, vecN{0.6});
    RadonNikodymWeight wf = tilt_weight();
    wf.renormalize(flat);
    const BubbleStats deg = bubble_discounted_stats(flat, wf);
    CHECK(std::abs(deg.mean[0]) < 1e-12);
    CHECK(std::abs(deg.variance[0]) < 1e-12);
    CHECK_THROWS_AS((void)bubble_discounted_stats({vecN{0.5}}, wf), Error);
}

TEST_CASE("reweighted expectation agrees with resampling by the weight") {
    const int n = 50000;
    const std::vector<vecN> samples = uniform_samples(n, 59);
    RadonNikodymWeight w = tilt_weight();
    w.renormalize(samples);

    // weighted estimate of E*[Z], Z = D^2 (analytic value 1/2)
    std::vector<real> wz(n);
    for (int i = 0; i < n; ++i) wz[i] = w(samples[i]) * samples[i][0] * samples[i][0];
    const real weighted = pairwise_mean(wz);
    std::vector<real> sq(n);
    for (int i = 0; i < n; ++i) sq[i] = (wz[i] - weighted) * (wz[i] - weighted);
    const real weighted_se = std::sqrt(pairwise_sum(sq) / (static_cast<real>(n) * (n - 1.0)));

    // resampling estimate: draw by cumulative weight, average Z
    std::vector<real> cum(n);
    real acc = 0.0;
    for (int i = 0; i < n; ++i) {
        acc += w(samples[i]);
        cum[i] = acc;
    }
    RngStream rng(60, 1);
    std::vector<real> rez(n);
    for (int i = 0; i < n; ++i) {
        const real target = rng.uniform01() * acc;
        const auto it = std::lower_bound(cum.begin(), cum.end(), target);
        const size_t k = static_cast<size_t>(it - cum.begin());
        rez[i] = samples[k][0] * samples[k][0];
    }
    const real resampled = pairwise_mean(rez);
    std::vector<real> rsq(n);
    for (int i = 0; i < n; ++i) rsq[i] = (rez[i] - resampled) * (rez[i] - resampled);
    const real resampled_se = std::sqrt(pairwise_sum(rsq) / (static_cast<real>(n) * (n - 1.0)));

    CHECK(std::abs(weighted - 0.5) <= 3.0 * weighted_se);
    CHECK(std::abs(weighted - resampled) <=
          3.0 * std::sqrt(weighted_se * weighted_se + resampled_se * resampled_se));
}

TEST_CASE("claim values: constants, identity reduction, dividends, parity") {
    const PathEnsemble flat = constant_ensemble(0.75, 2, 64, 50, 0.01);
    const RadonNikodymWeight unit = RadonNikodymWeight::unit();

    ClaimSpec con = make_claim("constant", 2.0, 0, 0.5);
    const McScalar kv = claim_fundamental_value(flat, con, unit, [](real) { return 0.1; }, 0.0);
    CHECK(kv.value == doctest::Approx(2.0 * std::exp(-0.05)).epsilon(1e-12));

    // identity payoff reduces to the asset fundamental
    SdeModel model;
    model.n_assets = 2;
    model.k_noise = 2;
    model.sigma_d = [](const MarketPoint&, vecN& out) {
        out[0] = 0.15;
        out[1] = 0.0;
        out[2] = 0.0;
        out[3] = 0.25;
    };
    InitialSpec init;
    init.point.x = {1.0, 1.0};
    init.point.d = {1.0, 0.8};
    init.point.r = {0.0, 0.0};
    const PathEnsemble ens = simulate_sde(model, init, TimeGrid{0.0, 0.01, 50}, 2000, 499);
    const McScalar idv =
        claim_fundamental_value(ens, make_claim("identity", 0.0, 1, 0.5), unit, nullptr, 0.0);
    const McVector assets = fundamental_value_assets(ens, unit, nullptr, 0.5, 0.0);
    CHECK(idv.value == doctest::Approx(assets.value[1]).epsilon(1e-13));
    const McScalar call0 =
        claim_fundamental_value(ens, make_claim("call", 0.0, 1, 0.5), unit, nullptr, 0.0);
    CHECK(call0.value == idv.value);  // strike-zero call is the identity on positive prices

    // dividend factor multiplies the terminal price inside the payoff
    ClaimSpec withdiv = make_claim("identity", 0.0, 0, 0.5);
    withdiv.dividend_yield = {0.04, 0.0};
    const McScalar dv = claim_fundamental_value(flat, withdiv, unit, nullptr, 0.0);
    CHECK(dv.value == doctest::Approx(0.75 * std::exp(0.02)).epsilon(1e-12));

    // put-call parity on a matched ensemble
    const real strike = 1.0;
    const McScalar c = claim_fundamental_value(ens, make_claim("call", strike, 0, 0.5), unit,
                                               nullptr, 0.0);
    const McScalar p = claim_fundamental_value(ens, make_claim("put", strike, 0, 0.5), unit,
                                               nullptr, 0.0);
    const McScalar f = claim_fundamental_value(ens, make_claim("forward", strike, 0, 0.5), unit,
                                               nullptr, 0.0);
    const real combined = std::sqrt(c.se * c.se + p.se * p.se + f.se * f.se);
    CHECK(std::abs(c.value - p.value - f.value) <= 3.0 * combined);
    CHECK(std::abs(c.value - p.value - f.value) < 1e-12);  // pointwise identity pre-summation

    // linearity in the payoff with matched paths
    const Payoff g1 = make_payoff("call", 0.9, 0);
    const Payoff g2 = make_payoff("put", 1.1, 0);
    ClaimSpec mix = make_claim("identity", 0.0, 0, 0.5);
    mix.payoff = [&g1, &g2](const vecN& s) { return 2.0 * g1(s) - 0.5 * g2(s); };
    const McScalar mv = claim_fundamental_value(ens, mix, unit, nullptr, 0.0);
    ClaimSpec c1 = make_claim("identity", 0.0, 0, 0.5);
    c1.payoff = g1;
    ClaimSpec c2 = make_claim("identity", 0.0, 0, 0.5);
    c2.payoff = g2;
    const McScalar v1 = claim_fundamental_value(ens, c1, unit, nullptr, 0.0);
    const McScalar v2 = claim_fundamental_value(ens, c2, unit, nullptr, 0.0);
    CHECK(mv.value == doctest::Approx(2.0 * v1.value - 0.5 * v2.value).epsilon(1e-12));

    // a payoff that blows up is reported, not propagated as garbage
    ClaimSpec boom = make_claim("identity", 0.0, 0, 0.5);
    boom.payoff = [](const vecN& s) { return 1.0 / (s[0] - s[0]); };
    CHECK_THROWS_AS((void)claim_fundamental_value(ens, boom, unit, nullptr, 0.0), Error);
}

TEST_CASE("claim bubble stats: deterministic case and linear reduction") {
    const std::vector<real> quoted(100, 0.4);
    const std::vector<vecN> prices(100, vecN{0.9});
    ClaimSpec con = make_claim("constant", 0.3, 0, 1.0);
    const ClaimBubbleStats s =
        claim_bubble_stats(quoted, prices, con, RadonNikodymWeight::unit());
    CHECK(s.mean == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(std::abs(s.variance) < 1e-12);

    // linear payoff on the same sample reduces to the asset statistics
    const std::vector<vecN> samples = uniform_samples(20000, 77);
    std::vector<real> quoted_d(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) quoted_d[i] = samples[i][0];
    RadonNikodymWeight w = tilt_weight();
    w.renormalize(samples);
    const ClaimBubbleStats cs =
        claim_bubble_stats(quoted_d, samples, make_claim("identity", 0.0, 0, 1.0), w);
    const BubbleStats bs = bubble_discounted_stats(samples, w);
    CHECK(cs.mean == doctest::Approx(bs.mean[0]).epsilon(1e-12));
    CHECK(cs.variance == doctest::Approx(bs.variance[0]).epsilon(1e-9));
    CHECK_THROWS_AS((void)claim_bubble_stats({0.4}, prices, con, RadonNikodymWeight::unit()),
                    Error);
}

TEST_CASE("stopping-time classification covers the three types exclusively") {
    CHECK(bubble_type_classify({0.3, false}) == BubbleType::type1);
    CHECK(bubble_type_classify({1.0, false}) == BubbleType::type1);
    CHECK(bubble_type_classify({0.0, false}) == BubbleType::type2);
    CHECK(bubble_type_classify({0.0, true}) == BubbleType::type3);
    CHECK_THROWS_AS((void)bubble_type_classify({0.3, true}), Error);
    CHECK_THROWS_AS((void)bubble_type_classify({-0.1, false}), Error);
    CHECK_THROWS_AS((void)bubble_type_classify({1.5, false}), Error);
}

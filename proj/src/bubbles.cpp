#include "qmarket/bubbles.hpp"

#include <cmath>
#include <cstddef>
#include <utility>

namespace qmkt {

namespace {

void require(bool cond, Errc code, const char* msg) {
    if (!cond) throw Error(code, msg);
}

real pairwise_sum_range(const real* v, size_t n) {
    if (n <= 8) {
        real s = 0.0;
        for (size_t i = 0; i < n; ++i) s += v[i];
        return s;
    }
    const size_t half = n / 2;
    return pairwise_sum_range(v, half) + pairwise_sum_range(v + half, n - half);
}

/// Snap a time to its ensemble grid index; the time must lie on the grid.
int grid_index(const TimeGrid& g, real t, const char* what) {
    require(g.h > 0.0, Errc::domain_error, "ensemble grid has no positive step");
    const real fi = (t - g.t0) / g.h;
    const int i = static_cast<int>(std::lround(fi));
    require(std::abs(fi - i) <= 1e-6 * (1.0 + std::abs(fi)), Errc::domain_error, what);
    require(i >= 0 && i <= g.n_steps, Errc::domain_error, what);
    return i;
}

/// Left-endpoint discount factors e^{-sum r0 h} for indices i_t..i_tau.
std::vector<real> discount_factors(const TimeGrid& g, const RatePath& r0, int i_t, int i_tau) {
    std::vector<real> disc(static_cast<size_t>(i_tau - i_t) + 1, 1.0);
    real acc = 0.0;
    for (int i = i_t; i < i_tau; ++i) {
        acc += (r0 ? r0(g.time(i)) : 0.0) * g.h;
        disc[i - i_t + 1] = std::exp(-acc);
    }
    return disc;
}

struct MomentAccumulator {
    std::vector<real> vals;
    void reserve(size_t n) { vals.reserve(n); }
    void push(real v) { vals.push_back(v); }
    real mean() const { return pairwise_mean(vals); }
    /// Unbiased standard error of the sample mean.
    real se() const {
        const size_t n = vals.size();
        if (n < 2) return 0.0;
        const real m = mean();
        std::vector<real> sq(n);
        for (size_t i = 0; i < n; ++i) sq[i] = (vals[i] - m) * (vals[i] - m);
        return std::sqrt(pairwise_sum(sq) / (static_cast<real>(n) * (n - 1.0)));
    }
};

vecN terminal_values_of(const PathEnsemble& ens, int p, int i_tau) {
    vecN d(ens.n_assets);
    for (int j = 0; j < ens.n_assets; ++j) d[j] = ens.d(p, i_tau, j);
    return d;
}

}  // namespace

real pairwise_sum(const std::vector<real>& v) {
    return v.empty() ? 0.0 : pairwise_sum_range(v.data(), v.size());
}

real pairwise_mean(const std::vector<real>& v) {
    return v.empty() ? 0.0 : pairwise_sum(v) / static_cast<real>(v.size());
}

real RadonNikodymWeight::operator()(const vecN& terminal) const {
    require(static_cast<bool>(density), Errc::config_error, "reweighting density not set");
    const real raw = density(terminal);
    require(std::isfinite(raw), Errc::numeric_failure, "reweighting density is not finite");
    require(raw >= 0.0, Errc::negative_weight, "reweighting density is negative");
    return scale * raw;
}

void RadonNikodymWeight::renormalize(const std::vector<vecN>& samples) {
    require(static_cast<bool>(density), Errc::config_error, "reweighting density not set");
    require(samples.size() >= 2, Errc::insufficient_paths,
            "renormalization needs at least 2 samples");
    std::vector<real> raw(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) {
        raw[i] = density(samples[i]);
        require(std::isfinite(raw[i]), Errc::numeric_failure,
                "reweighting density is not finite");
        require(raw[i] >= 0.0, Errc::negative_weight, "reweighting density is negative");
    }
    const real m = pairwise_mean(raw);
    require(m > 0.0, Errc::negative_weight, "reweighting density has zero mean");
    scale = 1.0 / m;
}

RadonNikodymWeight RadonNikodymWeight::unit() {
    RadonNikodymWeight w;
    w.density = [](const vecN&) { return 1.0; };
    return w;
}

Payoff make_payoff(const std::string& kind, real strike, int asset_index) {
    auto pick = [asset_index](const vecN& s) -> real {
        if (asset_index < 0 || asset_index >= static_cast<int>(s.size()))
            throw Error(Errc::dimension_mismatch, "payoff asset index out of range");
        return s[asset_index];
    };
    if (kind == "call")
        return [pick, strike](const vecN& s) { return std::max(pick(s) - strike, 0.0); };
    if (kind == "put")
        return [pick, strike](const vecN& s) { return std::max(strike - pick(s), 0.0); };
    if (kind == "forward") return [pick, strike](const vecN& s) { return pick(s) - strike; };
    if (kind == "identity") return [pick](const vecN& s) { return pick(s); };
    if (kind == "constant") return [strike](const vecN&) { return strike; };
    throw Error(Errc::config_error, "unknown payoff kind (call|put|forward|identity|constant)");
}

ClaimSpec make_claim(const std::string& kind, real strike, int asset_index, real maturity) {
    require(maturity > 0.0, Errc::config_error, "claim maturity must be positive");
    ClaimSpec c;
    c.payoff = make_payoff(kind, strike, asset_index);
    c.maturity = maturity;
    c.name = kind;
    return c;
}

McVector fundamental_value_assets(const PathEnsemble& ens, const RadonNikodymWeight& phi,
                                  const RatePath& r0, real tau, real t,
                                  const DividendFlow& cash_flow) {
    const int N = ens.n_assets;
    require(N >= 1, Errc::domain_error, "ensemble has no assets");
    require(ens.n_paths >= 2, Errc::insufficient_paths, "need at least 2 paths");
    require(t < tau, Errc::domain_error, "valuation time must precede maturity");
    const int i_t = grid_index(ens.grid, t, "valuation time not on the ensemble grid");
    const int i_tau = grid_index(ens.grid, tau, "maturity not on the ensemble grid");
    require(i_t < i_tau, Errc::domain_error, "maturity must be at least one grid step ahead");

    const std::vector<real> disc = discount_factors(ens.grid, r0, i_t, i_tau);
    std::vector<MomentAccumulator> acc(N);
    for (auto& a : acc) a.reserve(ens.n_paths);

    vecN assets(N);
    for (int p = 0; p < ens.n_paths; ++p) {
        const real w = phi(terminal_values_of(ens, p, i_tau));
        for (int j = 0; j < N; ++j) assets[j] = ens.d(p, i_tau, j) * disc[i_tau - i_t];
        if (cash_flow) {
            for (int i = i_t; i < i_tau; ++i) {
                vecN state(N);
                for (int j = 0; j < N; ++j) state[j] = ens.d(p, i, j);
                const vecN flow = cash_flow(ens.grid.time(i), state);
                require(static_cast<int>(flow.size()) == N, Errc::dimension_mismatch,
                        "dividend flow must return one rate per asset");
                for (int j = 0; j < N; ++j)
                    assets[j] += flow[j] * ens.grid.h * disc[i - i_t];
            }
        }
        for (int j = 0; j < N; ++j) acc[j].push(w * assets[j]);
    }

    McVector out;
    out.n_paths = ens.n_paths;
    out.value.resize(N);
    out.se.resize(N);
    for (int j = 0; j < N; ++j) {
        out.value[j] = acc[j].mean();
        out.se[j] = acc[j].se();
    }
    return out;
}

McVector asset_bubble(const PathEnsemble& ens, const vecN& quoted, const RadonNikodymWeight& phi,
                      const RatePath& r0, real tau, real t, const DividendFlow& cash_flow) {
    require(static_cast<int>(quoted.size()) == ens.n_assets, Errc::dimension_mismatch,
            "quoted price vector size must match the asset count");
    McVector out = fundamental_value_assets(ens, phi, r0, tau, t, cash_flow);
    for (int j = 0; j < ens.n_assets; ++j) out.value[j] = quoted[j] - out.value[j];
    return out;
}

BubbleStats bubble_discounted_stats(const std::vector<vecN>& terminal_values,
                                    const RadonNikodymWeight& phi) {
    const size_t n = terminal_values.size();
    require(n >= 2, Errc::insufficient_paths, "need at least 2 samples");
    const int N = static_cast<int>(terminal_values.front().size());
    require(N >= 1, Errc::domain_error, "samples have no components");

    std::vector<real> w(n);
    for (size_t i = 0; i < n; ++i) {
        require(static_cast<int>(terminal_values[i].size()) == N, Errc::dimension_mismatch,
                "inconsistent sample dimensions");
        w[i] = phi(terminal_values[i]);
    }

    BubbleStats out;
    out.n_samples = static_cast<int>(n);
    out.mean.resize(N);
    out.mean_se.resize(N);
    out.variance.resize(N);
    out.variance_se.resize(N);
    out.empirical_variance.resize(N);

    std::vector<real> d(n), d2(n), wd(n), wd2(n), u(n), proj(n);
    for (int j = 0; j < N; ++j) {
        for (size_t i = 0; i < n; ++i) {
            d[i] = terminal_values[i][j];
            d2[i] = d[i] * d[i];
            wd[i] = w[i] * d[i];
            wd2[i] = w[i] * d2[i];
            u[i] = d[i] - wd[i];
        }
        const real m1 = pairwise_mean(d), m2 = pairwise_mean(d2);
        const real w1 = pairwise_mean(wd), w2 = pairwise_mean(wd2);
        out.mean[j] = m1 - w1;
        // decomposition formula: statistical variance plus reweighted variance
        out.variance[j] = (m2 - m1 * m1) + (w2 - w1 * w1);

        // standard error of the mean difference from the per-sample values
        MomentAccumulator um;
        um.vals = u;
        out.mean_se[j] = um.se();

        // delta method for the variance statistic: project each sample onto
        // the gradient of (m2 - m1^2 + w2 - w1^2) in (m1, m2, w1, w2)
        for (size_t i = 0; i < n; ++i)
            proj[i] = -2.0 * m1 * d[i] + d2[i] - 2.0 * w1 * wd[i] + wd2[i];
        MomentAccumulator pm;
        pm.vals = proj;
        out.variance_se[j] = pm.se();

        const real um1 = pairwise_mean(u);
        std::vector<real> usq(n);
        for (size_t i = 0; i < n; ++i) usq[i] = (u[i] - um1) * (u[i] - um1);
        out.empirical_variance[j] = n > 1 ? pairwise_sum(usq) / (n - 1.0) : 0.0;
    }
    return out;
}

McScalar claim_fundamental_value(const PathEnsemble& ens, const ClaimSpec& claim,
                                 const RadonNikodymWeight& phi, const RatePath& r0, real t) {
    const int N = ens.n_assets;
    require(static_cast<bool>(claim.payoff), Errc::config_error, "claim payoff not set");
    require(t < claim.maturity, Errc::domain_error, "valuation time must precede maturity");
    require(claim.dividend_yield.empty() || static_cast<int>(claim.dividend_yield.size()) == N,
            Errc::dimension_mismatch, "dividend yield size must match the asset count");
    require(ens.n_paths >= 2, Errc::insufficient_paths, "need at least 2 paths");
    const int i_t = grid_index(ens.grid, t, "valuation time not on the ensemble grid");
    const int i_T = grid_index(ens.grid, claim.maturity, "maturity not on the ensemble grid");
    require(i_t < i_T, Errc::domain_error, "maturity must be at least one grid step ahead");

    const std::vector<real> disc = discount_factors(ens.grid, r0, i_t, i_T);
    const real horizon = claim.maturity - t;

    MomentAccumulator acc;
    acc.reserve(ens.n_paths);
    vecN adjusted(N);
    for (int p = 0; p < ens.n_paths; ++p) {
        const vecN terminal = terminal_values_of(ens, p, i_T);
        const real w = phi(terminal);
        for (int j = 0; j < N; ++j) {
            const real y = claim.dividend_yield.empty() ? 0.0 : claim.dividend_yield[j];
            adjusted[j] = y == 0.0 ? terminal[j] : terminal[j] * std::exp(y * horizon);
        }
        const real g = claim.payoff(adjusted);
        require(std::isfinite(g), Errc::payoff_overflow, "payoff is not finite on a sample");
        acc.push(w * disc[i_T - i_t] * g);
    }

    McScalar out;
    out.n_paths = ens.n_paths;
    out.value = acc.mean();
    out.se = acc.se();
    return out;
}

ClaimBubbleStats claim_bubble_stats(const std::vector<real>& quoted_values,
                                    const std::vector<vecN>& terminal_prices,
                                    const ClaimSpec& claim, const RadonNikodymWeight& phi,
                                    real discount) {
    require(quoted_values.size() >= 2, Errc::insufficient_paths,
            "need at least 2 quoted-value samples");
    require(terminal_prices.size() >= 2, Errc::insufficient_paths,
            "need at least 2 terminal-price samples");
    require(static_cast<bool>(claim.payoff), Errc::config_error, "claim payoff not set");

    const size_t m = terminal_prices.size();
    const int N = static_cast<int>(terminal_prices.front().size());
    std::vector<real> wg(m), wg2(m);
    vecN adjusted(N);
    for (size_t i = 0; i < m; ++i) {
        const real w = phi(terminal_prices[i]);
        for (int j = 0; j < N; ++j) {
            const real y = claim.dividend_yield.empty() ? 0.0 : claim.dividend_yield[j];
            adjusted[j] = y == 0.0 ? terminal_prices[i][j]
                                   : terminal_prices[i][j] * std::exp(y * claim.maturity);
        }
        const real g = discount * claim.payoff(adjusted);
        require(std::isfinite(g), Errc::payoff_overflow, "payoff is not finite on a sample");
        wg[i] = w * g;
        wg2[i] = w * g * g;
    }

    // population form, matching the asset-statistics estimator so the
    // linear-payoff reduction agrees
    const real v1 = pairwise_mean(quoted_values);
    std::vector<real> vsq(quoted_values.size());
    for (size_t i = 0; i < quoted_values.size(); ++i)
        vsq[i] = (quoted_values[i] - v1) * (quoted_values[i] - v1);
    const real var_v = pairwise_mean(vsq);

    const real g1 = pairwise_mean(wg), g2 = pairwise_mean(wg2);

    ClaimBubbleStats out;
    out.n_samples = static_cast<int>(std::min(quoted_values.size(), m));
    out.mean = v1 - g1;
    out.variance = var_v + (g2 - g1 * g1);
    out.empirical_quoted_variance = var_v;

    MomentAccumulator va;
    va.vals = quoted_values;
    MomentAccumulator ga;
    ga.vals = wg;
    const real se_v = va.se(), se_g = ga.se();
    out.mean_se = std::sqrt(se_v * se_v + se_g * se_g);

    // delta method: gradient projections of each variance statistic; the
    // quoted part's projection (q - v1)^2 differs from q^2 - 2 v1 q by a
    // constant, which leaves the standard error unchanged
    std::vector<real> proj(m);
    for (size_t i = 0; i < m; ++i) proj[i] = wg2[i] - 2.0 * g1 * wg[i];
    MomentAccumulator pa;
    pa.vals = proj;
    MomentAccumulator vpa;
    vpa.vals = vsq;
    const real se_pv = vpa.se(), se_pg = pa.se();
    out.variance_se = std::sqrt(se_pv * se_pv + se_pg * se_pg);
    return out;
}

BubbleType bubble_type_classify(const TauSpec& spec) {
    require(spec.p_infinite >= 0.0 && spec.p_infinite <= 1.0, Errc::domain_error,
            "P[tau = infinity] must lie in [0, 1]");
    if (spec.bounded && spec.p_infinite > 0.0)
        throw Error(Errc::inconsistent_spec,
                    "a bounded stopping time cannot be infinite with positive probability");
    if (spec.p_infinite > 0.0) return BubbleType::type1;
    if (!spec.bounded) return BubbleType::type2;
    return BubbleType::type3;
}

}  // namespace qmkt

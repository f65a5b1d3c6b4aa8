#pragma once
// Fundamental values and price bubbles for base assets and European claims
// under a user-supplied change-of-measure weight, plus bubble statistics and
// stopping-time type classification.

#include <functional>
#include <string>
#include <vector>

#include "qmarket/market_core.hpp"
#include "qmarket/types.hpp"

namespace qmkt {

/// Deterministic tree reduction: the result depends only on the element
/// order, never on thread count, so Monte-Carlo outputs are reproducible.
real pairwise_sum(const std::vector<real>& v);
real pairwise_mean(const std::vector<real>& v);

/// Nonnegative reweighting density of the terminal state. `scale` is fixed
/// by renormalize() so the sample mean of the weight is 1 (invariant
/// |E[phi] - 1| <= 1e-3 afterwards). Evaluation throws on negative raw
/// density values.
struct RadonNikodymWeight {
    std::function<real(const vecN& terminal)> density;
    real scale = 1.0;

    real operator()(const vecN& terminal) const;
    void renormalize(const std::vector<vecN>& samples);
    static RadonNikodymWeight unit();
};

using Payoff = std::function<real(const vecN& terminal_prices)>;

/// European claim: payoff of the N terminal prices, maturity, and optional
/// per-asset terminal dividend yield (the cumulative-dividend to price ratio;
/// empty or zero means no dividends).
struct ClaimSpec {
    Payoff payoff;
    real maturity = 1.0;
    vecN dividend_yield;
    std::string name = "claim";
};

/// Payoff registry: kind is one of call, put, forward, identity, constant.
/// `strike` doubles as the constant's value; `asset_index` selects the
/// underlying component (ignored for constant).
Payoff make_payoff(const std::string& kind, real strike, int asset_index);
ClaimSpec make_claim(const std::string& kind, real strike, int asset_index, real maturity);

struct McVector {
    vecN value;
    vecN se;
    int n_paths = 0;
};
struct McScalar {
    real value = 0.0;
    real se = 0.0;
    int n_paths = 0;
};

/// Deterministic cash rate r0(t) used for discounting.
using RatePath = std::function<real(real t)>;
/// Absolute dividend cash-flow rate per asset: dC = flow(t, assets) dt.
using DividendFlow = std::function<vecN(real t, const vecN& assets)>;

/// Monte-Carlo estimate, per asset, of the weighted discounted terminal value
/// plus the discounted dividend stream over [t, tau]:
///   E_t[ phi * ( sum dC_u e^{-int r0} + S_tau e^{-int_t^tau r0} ) ].
/// Asset values are the ensemble's deflator block; cash flows and discount
/// exponents use left-endpoint sums on the ensemble grid. t and tau must lie
/// on the grid.
McVector fundamental_value_assets(const PathEnsemble& ens, const RadonNikodymWeight& phi,
                                  const RatePath& r0, real tau, real t,
                                  const DividendFlow& cash_flow = nullptr);

/// Bubble = quoted price minus fundamental value, per asset.
McVector asset_bubble(const PathEnsemble& ens, const vecN& quoted, const RadonNikodymWeight& phi,
                      const RatePath& r0, real tau, real t,
                      const DividendFlow& cash_flow = nullptr);

/// Moments of the discounted bubble from a terminal-law sample. The variance
/// follows the decomposition formula Var0 + Var0* (no cross term); the
/// empirical variance of the per-sample difference d - phi*d is reported
/// alongside for comparison, not asserted equal.
struct BubbleStats {
    vecN mean, mean_se;
    vecN variance, variance_se;
    vecN empirical_variance;
    int n_samples = 0;
};
BubbleStats bubble_discounted_stats(const std::vector<vecN>& terminal_values,
                                    const RadonNikodymWeight& phi);

/// Weighted discounted claim value:
///   E_t[ phi e^{-int_t^T r0} G(S_T e^{yield (T - t)}) ].
McScalar claim_fundamental_value(const PathEnsemble& ens, const ClaimSpec& claim,
                                 const RadonNikodymWeight& phi, const RatePath& r0, real t);

/// Claim-bubble moments from a quoted-value sample and an independent
/// terminal-price sample: mean = E[quoted] - E*[discounted payoff],
/// variance = Var(quoted) + Var*(discounted payoff).
struct ClaimBubbleStats {
    real mean = 0.0, mean_se = 0.0;
    real variance = 0.0, variance_se = 0.0;
    real empirical_quoted_variance = 0.0;
    int n_samples = 0;
};
ClaimBubbleStats claim_bubble_stats(const std::vector<real>& quoted_values,
                                    const std::vector<vecN>& terminal_prices,
                                    const ClaimSpec& claim, const RadonNikodymWeight& phi,
                                    real discount = 1.0);

/// The three mutually exclusive bubble lifetimes, keyed by the stopping time:
/// type1 lives past every horizon with positive probability, type2 is almost
/// surely finite but unbounded, type3 is bounded.
enum class BubbleType { type1 = 1, type2 = 2, type3 = 3 };

struct TauSpec {
    real p_infinite = 0.0;  // P[tau = +infinity]
    bool bounded = false;
};

BubbleType bubble_type_classify(const TauSpec& spec);

}  // namespace qmkt

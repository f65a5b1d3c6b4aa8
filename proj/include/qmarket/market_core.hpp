// Portfolio calculus on (x, D, r) market configurations: short rates,
// arbitrage Lagrangian/Hamiltonian, curvature diagnostics, arbitrage action,
// SDE path ensembles, and Nelson difference-quotient drift estimators.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "qmarket/rng.hpp"
#include "qmarket/types.hpp"

namespace qmkt {

// --- pointwise portfolio calculus ------------------------------------------

/// Deflator-weighted average short rate  (x.(r*D)) / (x.D).
/// Throws zero_denominator when x.D = 0.
real portfolio_short_rate(const vecN& x, const vecN& d, const vecN& r);

/// Arbitrage Lagrangian  |x'| * x.(D' + r*D) / (x.D).
real lagrangian(const MarketPoint& q, const Velocity& q_dot);

/// Self-financing residual  x'.D  (admissible steps keep it ~0).
real self_financing_residual(const MarketPoint& q, const Velocity& q_dot);

/// Conjugate momenta of the Lagrangian. Requires |x'| > 0 and x.D != 0;
/// p_r is identically zero.
Momentum legendre_momenta(const MarketPoint& q, const Velocity& q_dot);

/// Hamilton function  (x.p_D)/|x|^2 * ((x.D)|p_x| - x.(r*D)).
/// Throws zero_nominal_vector when |x| = 0.
real hamilton_function(const Momentum& p, const MarketPoint& q);

// --- curvature --------------------------------------------------------------

/// Scalar field of (t, x); used for drift/rate summaries entering curvature.
using ScalarField = std::function<real(real t, const vecN& x)>;

/// Central-difference gradient in x of  g * [dlogD_x + r_x]  — the
/// coefficient vector of the curvature 2-form on the nominal fibre.
/// h_fd holds one step per component. Throws evaluation_failure if a field
/// call throws or returns a non-finite value.
vecN curvature_vector(const ScalarField& dlogD_x, const ScalarField& r_x, real t, const vecN& x,
                      real g, const vecN& h_fd);

// --- SDE models and ensembles -----------------------------------------------

struct TimeGrid {
    real t0 = 0.0;
    real h = 0.0;    // step, > 0
    int n_steps = 0;

    int n_points() const { return n_steps + 1; }
    real time(int i) const { return t0 + h * i; }
    real t_end() const { return t0 + h * n_steps; }
};

/// Drift and diffusion fields of the market SDE. All three blocks share
/// one K-dimensional driving noise. Drifts write N values; diffusions write
/// an N x K matrix row-major.
struct SdeModel {
    int n_assets = 0;
    int k_noise = 0;
    std::function<void(real t, const MarketPoint&, vecN& out)> drift_x, drift_d, drift_r;
    std::function<void(const MarketPoint&, vecN& out)> sigma_x, sigma_d, sigma_r;
    std::string descriptor;
};

/// Start distribution: deterministic point, optionally overridden per block
/// by uniform boxes (size N each when present).
struct InitialSpec {
    MarketPoint point;
    std::vector<std::pair<real, real>> x_range;  // empty = use point.x
    std::vector<std::pair<real, real>> d_range;
    std::vector<std::pair<real, real>> r_range;
};

/// Immutable ensemble of Euler-Maruyama paths on a shared uniform grid.
/// Layout: coordinate c of path p at grid index i sits at
/// data[(p * n_points + i) * 3N + c] with c in [0,N) = x, [N,2N) = d,
/// [2N,3N) = r.
struct PathEnsemble {
    TimeGrid grid;
    int n_assets = 0;
    int n_paths = 0;
    uint64_t seed = 0;
    std::string provenance;
    std::vector<real> data;

    real at(int p, int i, int c) const {
        return data[(static_cast<size_t>(p) * grid.n_points() + i) * 3 * n_assets + c];
    }
    real x(int p, int i, int j) const { return at(p, i, j); }
    real d(int p, int i, int j) const { return at(p, i, n_assets + j); }
    real r(int p, int i, int j) const { return at(p, i, 2 * n_assets + j); }
    MarketPoint point(int p, int i) const;
};

enum class Exec { serial, parallel };

/// Euler-Maruyama simulation. Path p consumes RNG stream (seed, p) only, so
/// the result is bit-identical for any Exec choice or thread count.
/// Throws numeric_failure if a path leaves the representable range.
PathEnsemble simulate_sde(const SdeModel& model, const InitialSpec& initial, const TimeGrid& grid,
                          int n_paths, uint64_t seed, Exec exec = Exec::parallel);

// --- Nelson derivatives ------------------------------------------------------

enum class NelsonKind { forward, backward, mean };
enum class CoordBlock { x, d, r };

/// Present-state conditioning: uniform bins on one coordinate at time t.
/// lo >= hi requests automatic range from the ensemble. `lag` widens the
/// difference quotient to lag*h (quotient step selection for bias studies).
struct BinSpec {
    CoordBlock block = CoordBlock::d;
    int component = 0;
    int n_bins = 20;
    real lo = 0.0;
    real hi = 0.0;
    int lag = 1;
};

struct NelsonBin {
    real center = 0.0;
    int count = 0;
    vecN deriv;          // N components of the requested block
    bool empty = true;
};

struct NelsonResult {
    std::vector<NelsonBin> bins;
    CoordBlock deriv_block;
    real bin_width = 0.0;
};

/// Binned conditional difference quotients E[(Q_{t+h}-Q_t)/h | bin] of the
/// chosen coordinate block. mean = (forward + backward)/2 exactly.
/// Throws out_of_domain when t or t +/- lag*h leaves the grid,
/// insufficient_paths on an empty ensemble; empty bins are flagged, not fatal.
NelsonResult nelson_derivative(const PathEnsemble& ensemble, real t, NelsonKind kind,
                               const BinSpec& conditioning, CoordBlock deriv_block = CoordBlock::d);

// --- arbitrage action --------------------------------------------------------

/// One discretized (x, D, r) trajectory on a uniform grid.
struct DiscretePath {
    TimeGrid grid;
    std::vector<MarketPoint> points;  // size grid.n_points()
};

struct ActionResult {
    real value = 0.0;
    real max_self_financing_residual = 0.0;
    bool self_financing = true;  // warning channel; never throws
};

/// Trapezoidal discretization of the arbitrage action
///   integral of [x.(D' + r*D) - qcov/2] / (x.D)  +  log(beta_end/beta_0),
/// with symmetric difference quotients for D' in the interior (one-sided at
/// the endpoints) and the quadratic covariation realized from increment
/// products. beta holds one positive value per grid point; only its
/// endpoints enter. sf_rel_tol scales the self-financing warning threshold.
ActionResult arbitrage_action(const DiscretePath& path, const vecN& beta,
                              real sf_rel_tol = 1e-8);

// --- curvature flatness over an ensemble --------------------------------------

struct CurvatureTestResult {
    bool zero = false;
    real max_residual = 0.0;
};

/// Estimates dlogD_x and r_x from ensemble means and checks that every
/// curvature component vanishes to `tol` over interior grid times and the
/// supplied nominal vectors. h_fd may be empty (defaults to
/// 1e-4 * max(1,|x_l|) per component). Throws insufficient_paths on an
/// empty ensemble.
CurvatureTestResult zero_curvature_test(const PathEnsemble& ensemble,
                                        const std::vector<vecN>& sample_xs, real tol,
                                        vecN h_fd = {}, real g = 1.0);

}  // namespace qmkt

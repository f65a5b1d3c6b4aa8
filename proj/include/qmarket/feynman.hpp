#pragma once
// Constrained path-integral Monte-Carlo propagator: unit-speed arc-length
// paths orthogonal to the deflator direction, pointwise action accumulation,
// and terminal-bin field estimation with per-bin standard errors.

#include <functional>
#include <tuple>
#include <vector>

#include "qmarket/rng.hpp"
#include "qmarket/types.hpp"

namespace qmkt {

/// Scalar potential and deflator-block vector potential at a market point.
/// The nominal and rate blocks carry no vector potential.
struct GatPotentials {
    real phi = 0.0;
    vecN a_d;
};

/// phi = -x.(r o D)/(x.D) - 1/2;  a_d = -(sigma sigma^T)^{-1} x / (x.D).
/// `sigma_d` is the deflator diffusion matrix, rows = components.
GatPotentials gat_potentials(const MarketPoint& q, const std::vector<vecN>& sigma_d);

/// Stochastic-mechanics Lagrangian value from drift, potentials, and their
/// divergences: sum_j b_j^2/2 + div_b/2 - phi + a.b + div_a/2.
real guerra_morato_lagrangian(const MarketPoint& at, const vecN& b, real div_b, real phi,
                              const vecN& a, real div_a);

/// Amplitude field e^{R + iS} on a shared grid; verifies |psi|^2 = e^{2R}
/// pointwise before returning.
std::vector<complex> wavefunction_from_RS(const std::vector<real>& R, const std::vector<real>& S);

/// Diagonal arc-length metric scales per coordinate block. A zero scale
/// freezes that coordinate (its increment is exactly zero).
struct StepMetrics {
    vecN sigma_x, sigma_d, sigma_r;
};

struct PathIncrement {
    vecN dx, dd, dr;
};

/// One arc-length step: a direction drawn uniformly on the metric unit
/// sphere intersected with the hyperplane x'.D = 0 (projection in whitened
/// coordinates, then renormalization), scaled by ds.
PathIncrement sample_constrained_step(const MarketPoint& q, const StepMetrics& metrics, real ds,
                                      RngStream& rng);

struct ConstrainedPath {
    MarketPoint start;
    real ds = 0.0;
    std::vector<PathIncrement> steps;

    MarketPoint point_at(size_t i) const;  // state before step i (i = size() -> terminal)
};

ConstrainedPath sample_constrained_path(const MarketPoint& start, const StepMetrics& metrics,
                                        real ds, int n_steps, RngStream& rng);

/// Largest violation over the path of either invariant: unit metric speed on
/// active coordinates (frozen ones must be exactly zero) and x'.D = 0.
real max_constraint_residual(const ConstrainedPath& path, const StepMetrics& metrics);

/// Optional rate field along a path: rates(s, state) -> N rates. When absent,
/// the path's own carried r coordinates are used.
using RateField = std::function<vecN(real s, const MarketPoint&)>;

/// Left-endpoint Riemann sum of x.(D' + r o D)/(x.D) over the arc-length
/// grid.
real path_action(const ConstrainedPath& path, const RateField& rates = nullptr);

struct BinAxis {
    real lo = 0.0, hi = 1.0;
    int count = 1;
    real width() const { return (hi - lo) / count; }
    real center(int c) const { return lo + (c + 0.5) * width(); }
};

struct PathIntegralConfig {
    int n_paths = 0;
    int n_steps = 0;
    real ds = 0.0;
    uint64_t seed = 0;
    std::vector<BinAxis> x_axes, d_axes;  // terminal binning; also the start support
    vecN r_start;                         // rates are carried, not binned
};

struct PathIntegralModel {
    StepMetrics metrics;
    RateField rates;  // nullptr = carried r coordinates (constant along paths)
};

/// Binned terminal amplitude with per-bin statistics. Bins are row-major over
/// the axes (x axes first, then deflator axes).
struct TerminalField {
    std::vector<BinAxis> axes;
    std::vector<complex> psi;
    std::vector<real> se_re, se_im;
    std::vector<int> n_effective;
    std::vector<real> m2_rr, m2_ii, m2_ri;  // raw per-bin second-moment sums
    int n_paths = 0;
    real bin_volume = 0.0;

    size_t size() const { return psi.size(); }

    /// Estimate of E[w g(bin)] = sum_bins psi_bin g_bin bin_volume for a
    /// per-bin complex weight g, with standard errors of the real and
    /// imaginary parts. Paths that missed the grid contribute zero.
    std::tuple<complex, real, real> linear_functional(const std::vector<complex>& g) const;
};

/// Monte-Carlo propagation: start points uniform over the bin box, weight
/// psi0(start) times the box volume, phase e^{i action}; contributions land
/// in the terminal (x, D) bin. Deterministic for a fixed seed at any thread
/// count (per-path streams, tree reduction in path order).
TerminalField evolve_via_path_integral(const std::function<complex(const MarketPoint&)>& psi0,
                                       real t, const PathIntegralConfig& config,
                                       const PathIntegralModel& model);

}  // namespace qmkt

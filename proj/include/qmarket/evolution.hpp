// Truncated spectral states of the market Hamilton operator, their unitary
// time evolution, and the observable calculus on the coefficient space:
// expectations, variances, serial cross-moments, distribution laws, the
// uncertainty relation, and the expectation-derivative identity.
#pragma once

#include <utility>
#include <vector>

#include "qmarket/market_core.hpp"
#include "qmarket/spectral.hpp"
#include "qmarket/types.hpp"

namespace qmkt {

/// Density of the short-rate block. Eigenvalues carry no rate dependence, so
/// evolution transports this object unchanged; it only enters means and
/// distribution laws. Two kinds cover the artifact's scope: a point mass and
/// a uniform density on a box.
struct RMarginal {
    enum class Kind { dirac, uniform };
    Kind kind = Kind::dirac;
    vecN point;                                // dirac: the carried rate vector
    std::vector<std::pair<real, real>> box;    // uniform: per-component support

    static RMarginal dirac_at(vecN r0);
    static RMarginal uniform_box(std::vector<std::pair<real, real>> b);

    int dim() const;
    void validate() const;
    vecN mean() const;
    /// P[r <= r0] componentwise (product law within the marginal).
    real cdf(const vecN& r0) const;
};

/// A state in the truncated (I, J) basis: coefficients over the enumerated
/// index list, plus the inert rate marginal. States are plain values; all
/// operations return new states.
struct SpectralState {
    MarketDomain domain;
    TruncationSpec truncation;
    std::vector<SpectralIndex> labels;  // enumerate_indices(domain.n_assets, truncation)
    std::vector<complex> coeffs;        // parallel to labels
    RMarginal r_marginal;
    real norm_cache = 0.0;

    real norm() const;
    /// Scales coefficients to unit norm. Throws numeric_failure on zero norm.
    void normalize();
    /// Coefficient lookup by index pair; zero if the label is not enumerated.
    complex coeff(const std::vector<int>& I, const std::vector<int>& J) const;
};

/// Coordinate state: amplitude 1 on one basis label, 0 elsewhere.
/// Throws missing_eigenvalue if (I, J) is not in the enumerated truncation.
SpectralState make_basis_state(const MarketDomain& domain, const TruncationSpec& trunc,
                               const std::vector<int>& I, const std::vector<int>& J,
                               RMarginal r_marginal);

/// Projects a carrier-modulated Gaussian packet onto the even-index
/// orthonormal subfamily of the plane-wave basis (even indices form a true
/// Fourier basis, so the coefficient-space calculus reproduces function-space
/// moments without frame corrections; odd-index coefficients stay zero).
/// x_widths / d_widths are per-axis standard deviations; carriers default to
/// an even mid-spectrum index on the x side and 0 on the D side. The rate
/// marginal is a point mass at center.r. captured (optional out) receives the
/// packet mass captured by the truncation.
/// Throws truncation_too_small when captured mass < 0.99.
SpectralState from_wavepacket(const MarketPoint& center, const vecN& x_widths,
                              const vecN& d_widths, const MarketDomain& domain,
                              const TruncationSpec& trunc,
                              const std::vector<int>* x_carrier = nullptr,
                              const std::vector<int>* d_carrier = nullptr,
                              real* captured = nullptr);

/// Unitary propagation: multiplies each coefficient by e^{+i lambda t}.
/// Throws missing_eigenvalue if the table lacks a label with nonzero amplitude.
SpectralState evolve(const SpectralState& state, real t, const EigenTable& table);

/// Dense observable in the truncated basis. Entries are inner products
/// <phi_row | A | phi_col>; the calculus treats coefficient vectors as the
/// state space, with the inner product conjugate-linear in the first slot.
struct ObservableMatrix {
    std::vector<SpectralIndex> labels;
    std::vector<complex> entries;  // row-major, size() x size()
    bool hermitian = false;

    size_t size() const { return labels.size(); }
    complex at(size_t row, size_t col) const { return entries[row * labels.size() + col]; }
    bool is_hermitian(real tol = 1e-12) const;
};

/// Position observable q_l on the chosen block, from the closed-form
/// one-dimensional integrals (1/L) int_0^L u e^{-i pi m u / L} du: diagonal
/// L/2, off-diagonal L [ i (-1)^m / (pi m) + ((-1)^m - 1) / (pi m)^2 ] with
/// m the column-minus-row index shift on that axis; zero unless all other
/// axes agree. Blocks: CoordBlock::x or CoordBlock::d only.
ObservableMatrix position_operator_matrix(CoordBlock block, int component,
                                          const MarketDomain& domain,
                                          const TruncationSpec& trunc);

/// Conjugate momentum observable: diagonal pi I_l / A_l (x block) or
/// pi J_l / B_l (D block) in the plane-wave basis.
ObservableMatrix momentum_operator_matrix(CoordBlock block, int component,
                                          const MarketDomain& domain,
                                          const TruncationSpec& trunc);

ObservableMatrix identity_observable(const MarketDomain& domain, const TruncationSpec& trunc);

/// (A psi, psi) with the first slot conjugated. Real part is the expectation
/// for hermitian A.
complex expectation_form(const SpectralState& state, const ObservableMatrix& obs);
real expectation(const SpectralState& state, const ObservableMatrix& obs);
/// (A^2 psi, psi) - (A psi, psi)^2, hermitian observables only.
real variance(const SpectralState& state, const ObservableMatrix& obs);

struct MeanDynamics {
    vecN x_mean;  // sum |c|^2 (A_l / 2) — the diagonal formula, = A_l/2 at unit norm
    vecN d_mean;
    vecN r_mean;  // mean of the rate marginal
};

/// The diagonal expected-value formula: plane-wave diagonal elements are
/// L/2 on every axis, so the result is (A/2, B/2, E[r]) for any normalized
/// state, independent of time.
MeanDynamics diagonal_mean_dynamics(const SpectralState& state);

/// Product law of the stationary distribution: (prod x0_l/A_l)(prod D0_l/B_l)
/// P[r <= r0]. Components outside the box are clamped; *clamped reports it.
real uniform_law_cdf(const MarketPoint& q0, const MarketDomain& domain,
                     const RMarginal& r_marginal, bool* clamped = nullptr);

/// Two-time moment (e^{+iH(t1-t)} f^dag e^{+iH(t2-t1)} g e^{-iH(t2-t)} psi_t,
/// psi_t) with diagonal phase matrices in the eigenbasis; state is psi at
/// time t, and t <= t1, t <= t2 is required.
complex serial_cross_moment(const SpectralState& state_t, const ObservableMatrix& f_obs,
                            const ObservableMatrix& g_obs, real t, real t1, real t2,
                            const EigenTable& table);

struct HeisenbergReport {
    real lhs = 0.0;              // sigma^2(q) sigma^2(p)
    real rhs = 0.0;              // ||[q,p] psi||^2 / 4
    bool satisfied = false;      // lhs >= rhs - tol
    real sigma2_q = 0.0;
    real sigma2_p = 0.0;
    real commutator_norm = 0.0;  // ||[q,p] psi||, ~1 away from truncation edges
};

/// Uncertainty product against the commutator norm on the given axis.
/// Throws truncation_too_small when the commutator norm deviates from 1 by
/// more than 10% — the boundary/truncation artifact channel (plane-wave
/// basis states land here by construction).
HeisenbergReport heisenberg_check(const SpectralState& state, CoordBlock block, int component,
                                  real tol = 1e-12);

/// | centered difference of d/dt (A psi_t, psi_t)  -  (1/i)([A, H] psi_t, psi_t) |
/// with H diagonal (lambda_{I,J}) in the truncated eigenbasis.
real ehrenfest_residual(const SpectralState& state, const ObservableMatrix& obs, real t, real h,
                        const EigenTable& table);

}  // namespace qmkt

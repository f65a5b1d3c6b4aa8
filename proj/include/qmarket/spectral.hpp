// Eigenbasis of the market Hamilton operator on cuboid domains: plane-wave
// bases over nominals and deflators, Hermite-function basis over rates,
// eigenvalue quadrature with corner refinement, the published N=2 closed
// form, and the no-unbounded-profit spectrum test.
#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "qmarket/types.hpp"

namespace qmkt {

/// Basis label: I over the nominal axes (entries >= 1), J over the deflator
/// axes (any integers), k the rate-basis degree.
struct SpectralIndex {
    std::vector<int> I;
    std::vector<int> J;
    int k = 0;
};

bool operator==(const SpectralIndex& a, const SpectralIndex& b);

/// Total degree used for truncation tiering: sum of (I_l - 1) + sum of |J_l|.
int index_degree(const SpectralIndex& idx);

/// Truncation cutoffs. Enumeration emits complete total-degree tiers in
/// (degree, lexicographic) order and stops before the tier that would push
/// the count past max_indices, so a cutoff is always reproducible.
struct TruncationSpec {
    int i_max = 8;
    int j_max = 8;
    int max_indices = 5000;
};

std::vector<SpectralIndex> enumerate_indices(int n_assets, const TruncationSpec& trunc);

// --- basis functions --------------------------------------------------------

/// Plane wave over the nominal cuboid: exp(-i pi sum I_l x_l / A_l)/sqrt(prod A_l).
complex alpha_eigenvector(const std::vector<int>& I, const MarketDomain& domain, const vecN& x);

/// sqrt(sum pi^2 I_l^2 / A_l^2), the modulus-of-gradient eigenvalue.
real alpha_eigenvalue(const std::vector<int>& I, const MarketDomain& domain);

/// Plane wave over the deflator cuboid.
complex beta_eigenvector(const std::vector<int>& J, const MarketDomain& domain, const vecN& d);

/// (prod sgn J_l) * sqrt(sum pi^2 J_l^2 / B_l^2); zero when any J_l = 0.
real beta_eigenvalue(const std::vector<int>& J, const MarketDomain& domain);

/// Rate-basis member: orthonormal Hermite function of degree k in the first
/// rate coordinate, ground state in the others.
complex gamma_eigenvector(int k, const vecN& r);

/// One-axis overlap (1/L) integral of exp(-i pi m u / L) over [0, L]; the
/// value depends only on m. The restricted plane-wave family is a tight
/// frame (bound 2), not an orthonormal set: overlap is 1 at m = 0, zero for
/// even m != 0, and 2/(i pi m) for odd m.
complex plane_wave_overlap(int m);

/// Product of per-axis overlaps for an index shift vector m.
complex basis_overlap(const std::vector<int>& m);

// --- eigenvalue quadrature ----------------------------------------------------

struct QuadratureSpec {
    int order = 16;       // tensor Gauss-Legendre points per axis
    int min_levels = 2;   // corner-refinement levels before convergence checks
    int max_levels = 40;
    real rel_tol = 1e-9;
};

struct EigenData {
    real lambda_alpha = 0.0;
    real lambda_beta = 0.0;
    real lambda_ij = 0.0;
    real quadrature_error = 0.0;  // last refinement increment
    bool converged = true;
    int levels = 0;
};

/// Eigenvalue of H for the (I, J) plane-wave pair by corner-refined tensor
/// quadrature of the cuboid double integral. Exactly zero (no quadrature)
/// when the beta eigenvalue vanishes. hamilton_sign selects the operator
/// branch (+1 default) and mirrors the spectrum.
/// Throws unsupported_dimension for N = 1: the one-asset spectrum is handled
/// by the reduced rule, which is identically zero.
EigenData lambda_IJ_quadrature(const std::vector<int>& I, const std::vector<int>& J,
                               const MarketDomain& domain, const QuadratureSpec& spec,
                               int hamilton_sign = +1);

/// The published two-asset closed-form eigenvalue expression, transcribed
/// verbatim (sgn, arctanh and log terms). Emitted side by side with the
/// quadrature value; the two are not reconciled here.
real lambda_IJ_closed_form_N2(const std::vector<int>& I, const std::vector<int>& J, const vecN& A,
                              const vecN& B);

/// Dirichlet eigenvalue of the dimension-reduced operator obtained from the
/// self-financing constraint, with the deflator frozen at d_ref:
/// sqrt(sum_{l<N} pi^2 I_l^2 (1 + (d_l/d_N)^2) / A_l^2). Zero for N = 1.
/// Throws division_by_zero when d_ref's last component vanishes.
real reduced_lambda_alpha(const std::vector<int>& I_reduced, const MarketDomain& domain,
                          const vecN& d_ref);

/// Pointwise image of the basis function under H: Lambda_{I,J}(q) times
/// alpha_I(x) beta_J(D) gamma_k(r), where
///   Lambda = lb * (x.e/|x|^2) * [ (-la^2 (e.D) + la (x.D))/2 - x.(r*D) ].
complex hamilton_apply(const std::vector<int>& I, const std::vector<int>& J, int k,
                       const MarketDomain& domain, const MarketPoint& q, int hamilton_sign = +1);

// --- eigenvalue tables and the spectrum test -----------------------------------

/// Immutable eigenvalue table over an enumerated truncation; rows are
/// computed by a parallel map over indices (pure per-row arithmetic, so the
/// result does not depend on scheduling).
class EigenTable {
  public:
    static EigenTable build(const MarketDomain& domain, const TruncationSpec& trunc,
                            const QuadratureSpec& spec, int hamilton_sign = +1);

    const std::vector<SpectralIndex>& indices() const { return indices_; }
    const std::vector<EigenData>& rows() const { return rows_; }
    const MarketDomain& domain() const { return domain_; }
    int hamilton_sign() const { return sign_; }

    /// Row lookup by (I, J); k never enters the eigenvalue. Null if absent.
    const EigenData* find(const std::vector<int>& I, const std::vector<int>& J) const;
    bool all_converged() const;

  private:
    MarketDomain domain_;
    int sign_ = 1;
    std::vector<SpectralIndex> indices_;
    std::vector<EigenData> rows_;
    std::unordered_map<uint64_t, std::vector<size_t>> buckets_;  // hash -> row ids
};

struct NupbrViolation {
    SpectralIndex idx;
    real lambda_ij = 0.0;
    bool converged = true;
};

struct NupbrResult {
    bool nupbr = false;
    std::vector<NupbrViolation> violators;
    int checked = 0;
};

/// Scans |lambda_{I,J}| <= tol over the full cutoff box I in [1, i_max]^N,
/// J in [-j_max, j_max]^N. One-asset markets pass unconditionally.
NupbrResult nupbr_check(const MarketDomain& domain, int i_max, int j_max, real tol,
                        const QuadratureSpec& spec = {}, int hamilton_sign = +1);

}  // namespace qmkt

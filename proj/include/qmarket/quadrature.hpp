// Gauss-Legendre quadrature: 1-d rules, tensor-product box rules, and a
// corner-refined scheme for integrands with an integrable singularity at the
// origin corner of an axis-aligned cuboid.
#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "qmarket/types.hpp"

namespace qmkt {

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
/// Nodes are found by Newton iteration on the Legendre polynomial, seeded
/// with the Chebyshev angle estimate; accurate to ~1e-15 for n <= 64.
struct GaussLegendre {
    explicit GaussLegendre(int order);

    const std::vector<real>& nodes() const { return nodes_; }
    const std::vector<real>& weights() const { return weights_; }
    int order() const { return static_cast<int>(nodes_.size()); }

    /// Shared per-order cache (thread-safe, built on first use).
    static const GaussLegendre& cached(int order);

  private:
    std::vector<real> nodes_;
    std::vector<real> weights_;
};

using Box = std::vector<std::pair<real, real>>;  // per-axis [lo, hi]

/// Integrate f over an axis-aligned box with the tensor Gauss-Legendre rule
/// of the given order per axis. f receives the point as a vecN.
real integrate_box(const std::function<real(const vecN&)>& f, const Box& box, int order);

/// Decompose the dyadic corner shell  Π[0,u_l] \ Π[0,u_l/2]  into its
/// 2^N - 1 axis-aligned boxes. Deterministic ordering (bitmask ascending).
std::vector<Box> corner_shell_boxes(const vecN& upper);

/// Integrate f over Π[0, upper_l] where f may blow up (integrably) at the
/// origin. `levels` dyadic shells are peeled off the origin corner and each
/// resulting box gets the tensor rule; the innermost core cube is integrated
/// directly (its nodes are interior, so the singular corner is never hit).
/// Larger `levels` refines toward the corner; callers drive convergence by
/// comparing successive levels.
real integrate_corner_refined(const std::function<real(const vecN&)>& f, const vecN& upper,
                              int order, int levels);

}  // namespace qmkt

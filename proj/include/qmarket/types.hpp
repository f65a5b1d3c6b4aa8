// Core value types shared by all qmarket modules: market domains, state
// points, velocities, momenta, and the library-wide error channel.
#pragma once

#include <complex>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace qmkt {

using real = double;
using complex = std::complex<double>;
using vecN = std::vector<double>;

inline constexpr real pi = std::numbers::pi_v<real>;

/// Error categories surfaced by the library. Each operation documents which
/// of these it can raise; the CLI maps them onto its exit-code contract.
enum class Errc {
    zero_denominator,
    zero_velocity,
    zero_nominal_vector,
    out_of_domain,
    unsupported_dimension,
    domain_error,
    division_by_zero,
    missing_eigenvalue,
    dimension_mismatch,
    truncation_too_small,
    insufficient_paths,
    empty_bin,
    negative_weight,
    payoff_overflow,
    inconsistent_spec,
    singular_diffusion,
    degenerate_metric,
    evaluation_failure,
    not_converged,
    config_error,
    numeric_failure,
};

class Error : public std::runtime_error {
  public:
    Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Errc code() const noexcept { return code_; }

  private:
    Errc code_;
};

const char* errc_name(Errc code);

/// Cuboid market domain: x ranges over Π[0, A_l], deflators over Π[0, B_l].
/// The r box bounds the short rates for sampling purposes only.
struct MarketDomain {
    int n_assets = 0;
    vecN x_bounds;                                 // A_l, upper bounds for nominals
    vecN d_bounds;                                 // B_l, upper bounds for deflators
    std::vector<std::pair<real, real>> r_box;      // per-component short-rate bounds

    void validate() const;
    real x_volume() const;
    real d_volume() const;
};

/// One market configuration q = (x, D, r) at time t.
struct MarketPoint {
    vecN x;      // portfolio nominals
    vecN d;      // deflators
    vecN r;      // short rates
    real t = 0.0;
};

/// Velocity triple (x', D', r') paired with MarketPoint in the Lagrangian calculus.
struct Velocity {
    vecN x_dot;
    vecN d_dot;
    vecN r_dot;
};

/// Conjugate momenta; the Legendre map always produces p_r = 0.
struct Momentum {
    vecN p_x;
    vecN p_d;
    vecN p_r;
};

// --- small dense-vector helpers -------------------------------------------

real dot(const vecN& a, const vecN& b);
real norm2(const vecN& a);
real norm(const vecN& a);

inline vecN zeros(int n) { return vecN(static_cast<size_t>(n), 0.0); }

}  // namespace qmkt

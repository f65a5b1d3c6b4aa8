#include "qmarket/types.hpp"

#include <cmath>

namespace qmkt {

const char* errc_name(Errc code) {
    switch (code) {
        case Errc::zero_denominator: return "ZeroDenominator";
        case Errc::zero_velocity: return "ZeroVelocity";
        case Errc::zero_nominal_vector: return "ZeroNominalVector";
        case Errc::out_of_domain: return "OutOfDomain";
        case Errc::unsupported_dimension: return "UnsupportedDimension";
        case Errc::domain_error: return "DomainError";
        case Errc::division_by_zero: return "DivisionByZero";
        case Errc::missing_eigenvalue: return "MissingEigenvalue";
        case Errc::dimension_mismatch: return "DimensionMismatch";
        case Errc::truncation_too_small: return "TruncationTooSmall";
        case Errc::insufficient_paths: return "InsufficientPaths";
        case Errc::empty_bin: return "EmptyBin";
        case Errc::negative_weight: return "NegativeWeight";
        case Errc::payoff_overflow: return "PayoffOverflow";
        case Errc::inconsistent_spec: return "InconsistentSpec";
        case Errc::singular_diffusion: return "SingularDiffusion";
        case Errc::degenerate_metric: return "DegenerateMetric";
        case Errc::evaluation_failure: return "EvaluationFailure";
        case Errc::not_converged: return "NotConverged";
        case Errc::config_error: return "ConfigError";
        case Errc::numeric_failure: return "NumericFailure";
    }
    return "UnknownError";
}

void MarketDomain::validate() const {
    if (n_assets < 1) throw Error(Errc::domain_error, "domain needs at least one asset");
    if (static_cast<int>(x_bounds.size()) != n_assets ||
        static_cast<int>(d_bounds.size()) != n_assets)
        throw Error(Errc::dimension_mismatch, "domain bound vectors must have n_assets entries");
    for (real a : x_bounds)
        if (!(a > 0.0)) throw Error(Errc::domain_error, "x bounds must be positive");
    for (real b : d_bounds)
        if (!(b > 0.0)) throw Error(Errc::domain_error, "d bounds must be positive");
    if (!r_box.empty() && static_cast<int>(r_box.size()) != n_assets)
        throw Error(Errc::dimension_mismatch, "r box must be empty or have n_assets entries");
    for (const auto& [lo, hi] : r_box)
        if (!(lo <= hi)) throw Error(Errc::domain_error, "r box bounds inverted");
}

real MarketDomain::x_volume() const {
    real v = 1.0;
    for (real a : x_bounds) v *= a;
    return v;
}

real MarketDomain::d_volume() const {
    real v = 1.0;
    for (real b : d_bounds) v *= b;
    return v;
}

real dot(const vecN& a, const vecN& b) {
    if (a.size() != b.size()) throw Error(Errc::dimension_mismatch, "dot: size mismatch");
    real s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

real norm2(const vecN& a) {
    real s = 0.0;
    for (real v : a) s += v * v;
    return s;
}

real norm(const vecN& a) { return std::sqrt(norm2(a)); }

}  // namespace qmkt

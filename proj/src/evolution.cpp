#include "qmarket/evolution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qmarket/quadrature.hpp"

namespace qmkt {

namespace {

void require(bool ok, Errc code, const char* msg) {
    if (!ok) throw Error(code, msg);
}

// Closed-form (1/L) int_0^L u e^{-i pi m u / L} du; m is the column-minus-row
// index shift along the active axis.
complex position_entry_1d(int m, real L) {
    if (m == 0) return complex(0.5 * L, 0.0);
    const real sgn = (m % 2 == 0) ? 1.0 : -1.0;
    return complex(L * (sgn - 1.0) / (pi * pi * m * m), L * sgn / (pi * m));
}

// Labels agree on every axis except possibly `axis` of `block`; returns the
// index shift on that axis through `m`.
bool line_neighbors(const SpectralIndex& row, const SpectralIndex& col, CoordBlock block, int axis,
                    int& m) {
    const std::vector<int>* row_active = (block == CoordBlock::x) ? &row.I : &row.J;
    const std::vector<int>* col_active = (block == CoordBlock::x) ? &col.I : &col.J;
    const std::vector<int>* row_other = (block == CoordBlock::x) ? &row.J : &row.I;
    const std::vector<int>* col_other = (block == CoordBlock::x) ? &col.J : &col.I;
    if (*row_other != *col_other) return false;
    for (size_t l = 0; l < row_active->size(); ++l) {
        if (static_cast<int>(l) == axis) continue;
        if ((*row_active)[l] != (*col_active)[l]) return false;
    }
    m = (*col_active)[axis] - (*row_active)[axis];
    return true;
}

void check_block(CoordBlock block) {
    require(block == CoordBlock::x || block == CoordBlock::d, Errc::domain_error,
            "observables act on the x or D block");
}

void check_labels_match(const SpectralState& state, const ObservableMatrix& obs) {
    require(state.labels.size() == obs.labels.size() && state.labels.size() == obs.size(),
            Errc::dimension_mismatch, "observable and state use different truncations");
    // spot-check cheaply, then fall back to a full comparison
    if (!state.labels.empty()) {
        require(state.labels.front() == obs.labels.front() &&
                    state.labels.back() == obs.labels.back(),
                Errc::dimension_mismatch, "observable and state use different truncations");
    }
    require(state.labels == obs.labels, Errc::dimension_mismatch,
            "observable and state use different truncations");
}

std::vector<complex> matvec(const ObservableMatrix& m, const std::vector<complex>& v) {
    const size_t n = m.size();
    std::vector<complex> out(n);
    const int ni = static_cast<int>(n);
#pragma omp parallel for schedule(static) if (ni >= 256)
    for (int r = 0; r < ni; ++r) {
        complex acc(0.0, 0.0);
        const complex* row = &m.entries[static_cast<size_t>(r) * n];
        for (size_t c = 0; c < n; ++c) acc += row[c] * v[c];
        out[static_cast<size_t>(r)] = acc;
    }
    return out;
}

std::vector<complex> matvec_adjoint(const ObservableMatrix& m, const std::vector<complex>& v) {
    const size_t n = m.size();
    std::vector<complex> out(n, complex(0.0, 0.0));
    for (size_t r = 0; r < n; ++r) {
        const complex* row = &m.entries[r * n];
        const complex vr = v[r];
        for (size_t c = 0; c < n; ++c) out[c] += std::conj(row[c]) * vr;
    }
    return out;
}

// (a, b) with the first slot conjugated.
complex inner(const std::vector<complex>& a, const std::vector<complex>& b) {
    complex acc(0.0, 0.0);
    for (size_t k = 0; k < a.size(); ++k) acc += std::conj(a[k]) * b[k];
    return acc;
}

real norm2_c(const std::vector<complex>& a) {
    real acc = 0.0;
    for (const complex& z : a) acc += std::norm(z);
    return acc;
}

// Eigenvalue phases for the state's labels; throws where an amplitude-carrying
// label is missing from the table.
std::vector<real> eigenvalues_for(const SpectralState& state, const EigenTable& table) {
    std::vector<real> lam(state.labels.size(), 0.0);
    for (size_t k = 0; k < state.labels.size(); ++k) {
        const EigenData* row = table.find(state.labels[k].I, state.labels[k].J);
        if (row == nullptr) {
            if (std::abs(state.coeffs[k]) > 0.0)
                throw Error(Errc::missing_eigenvalue,
                            "eigenvalue table does not cover an active state index");
            continue;
        }
        lam[k] = row->lambda_ij;
    }
    return lam;
}

std::vector<complex> apply_phases(const std::vector<complex>& c, const std::vector<real>& lam,
                                  real t) {
    std::vector<complex> out(c.size());
    for (size_t k = 0; k < c.size(); ++k)
        out[k] = c[k] * std::exp(complex(0.0, lam[k] * t));
    return out;
}

// One-axis projection of a Gaussian packet, carrier-modulated, onto the even
// plane-wave indices within [lo, hi].
struct AxisProjection {
    std::vector<int> values;       // even index values, ascending
    std::vector<complex> coeffs;   // (1/sqrt L) int e^{+i pi v u / L} f(u) du
    real packet_norm2 = 0.0;       // int_0^L |f|^2 du
};

AxisProjection project_axis(real L, real center, real width, int carrier, int lo, int hi) {
    AxisProjection out;
    const int panels = std::max(16, 2 * (std::max(std::abs(lo), std::abs(hi)) + std::abs(carrier)));
    const GaussLegendre& rule = GaussLegendre::cached(12);
    for (int v = lo; v <= hi; ++v)
        if (v % 2 == 0) out.values.push_back(v);
    out.coeffs.assign(out.values.size(), complex(0.0, 0.0));
    const real hpan = L / panels;
    for (int p = 0; p < panels; ++p) {
        for (int g = 0; g < rule.order(); ++g) {
            const real u = (p + 0.5 * (1.0 + rule.nodes()[g])) * hpan;
            const real w = 0.5 * hpan * rule.weights()[g];
            const real du = u - center;
            const real gauss = std::exp(-du * du / (4.0 * width * width));
            out.packet_norm2 += w * gauss * gauss;
            for (size_t k = 0; k < out.values.size(); ++k) {
                const real phase = pi * (out.values[k] - carrier) * u / L;
                out.coeffs[k] += w * gauss * std::exp(complex(0.0, phase));
            }
        }
    }
    const real scale = 1.0 / std::sqrt(L);
    for (complex& z : out.coeffs) z *= scale;
    return out;
}

}  // namespace

// --- RMarginal ---------------------------------------------------------------

RMarginal RMarginal::dirac_at(vecN r0) {
    RMarginal m;
    m.kind = Kind::dirac;
    m.point = std::move(r0);
    return m;
}

RMarginal RMarginal::uniform_box(std::vector<std::pair<real, real>> b) {
    RMarginal m;
    m.kind = Kind::uniform;
    m.box = std::move(b);
    return m;
}

int RMarginal::dim() const {
    return kind == Kind::dirac ? static_cast<int>(point.size()) : static_cast<int>(box.size());
}

void RMarginal::validate() const {
    if (kind == Kind::dirac) {
        require(!point.empty(), Errc::inconsistent_spec, "rate point mass has no location");
        return;
    }
    require(!box.empty(), Errc::inconsistent_spec, "rate box is empty");
    for (const auto& [lo, hi] : box)
        require(hi > lo, Errc::inconsistent_spec, "rate box side has nonpositive length");
}

vecN RMarginal::mean() const {
    validate();
    if (kind == Kind::dirac) return point;
    vecN m(box.size());
    for (size_t l = 0; l < box.size(); ++l) m[l] = 0.5 * (box[l].first + box[l].second);
    return m;
}

real RMarginal::cdf(const vecN& r0) const {
    validate();
    require(static_cast<int>(r0.size()) == dim(), Errc::dimension_mismatch,
            "rate quantile dimension mismatch");
    real p = 1.0;
    if (kind == Kind::dirac) {
        for (size_t l = 0; l < point.size(); ++l)
            if (r0[l] < point[l]) return 0.0;
        return 1.0;
    }
    for (size_t l = 0; l < box.size(); ++l) {
        const real frac = (r0[l] - box[l].first) / (box[l].second - box[l].first);
        p *= std::clamp(frac, 0.0, 1.0);
    }
    return p;
}

// --- SpectralState -------------------------------------------------------------

real SpectralState::norm() const { return std::sqrt(norm2_c(coeffs)); }

void SpectralState::normalize() {
    const real n = norm();
    require(n > 0.0, Errc::numeric_failure, "cannot normalize a zero state");
    for (complex& z : coeffs) z /= n;
    norm_cache = 1.0;
}

complex SpectralState::coeff(const std::vector<int>& I, const std::vector<int>& J) const {
    for (size_t k = 0; k < labels.size(); ++k)
        if (labels[k].I == I && labels[k].J == J) return coeffs[k];
    return complex(0.0, 0.0);
}

SpectralState make_basis_state(const MarketDomain& domain, const TruncationSpec& trunc,
                               const std::vector<int>& I, const std::vector<int>& J,
                               RMarginal r_marginal) {
    domain.validate();
    r_marginal.validate();
    SpectralState s;
    s.domain = domain;
    s.truncation = trunc;
    s.labels = enumerate_indices(domain.n_assets, trunc);
    s.coeffs.assign(s.labels.size(), complex(0.0, 0.0));
    s.r_marginal = std::move(r_marginal);
    for (size_t k = 0; k < s.labels.size(); ++k) {
        if (s.labels[k].I == I && s.labels[k].J == J) {
            s.coeffs[k] = complex(1.0, 0.0);
            s.norm_cache = 1.0;
            return s;
        }
    }
    throw Error(Errc::missing_eigenvalue, "basis label is outside the enumerated truncation");
}

SpectralState from_wavepacket(const MarketPoint& center, const vecN& x_widths,
                              const vecN& d_widths, const MarketDomain& domain,
                              const TruncationSpec& trunc, const std::vector<int>* x_carrier,
                              const std::vector<int>* d_carrier, real* captured) {
    domain.validate();
    const int n = domain.n_assets;
    require(static_cast<int>(center.x.size()) == n && static_cast<int>(center.d.size()) == n &&
                static_cast<int>(center.r.size()) == n,
            Errc::dimension_mismatch, "packet center dimension mismatch");
    require(static_cast<int>(x_widths.size()) == n && static_cast<int>(d_widths.size()) == n,
            Errc::dimension_mismatch, "packet width dimension mismatch");
    for (int l = 0; l < n; ++l) {
        require(x_widths[l] > 0.0 && d_widths[l] > 0.0, Errc::domain_error,
                "packet widths must be positive");
        require(center.x[l] > 0.0 && center.x[l] < domain.x_bounds[l], Errc::out_of_domain,
                "packet center must be interior to the nominal cuboid");
        require(center.d[l] > 0.0 && center.d[l] < domain.d_bounds[l], Errc::out_of_domain,
                "packet center must be interior to the deflator cuboid");
    }
    if (x_carrier != nullptr)
        require(static_cast<int>(x_carrier->size()) == n, Errc::dimension_mismatch,
                "x carrier dimension mismatch");
    if (d_carrier != nullptr)
        require(static_cast<int>(d_carrier->size()) == n, Errc::dimension_mismatch,
                "D carrier dimension mismatch");

    // default x carrier: even mid-spectrum; default D carrier: 0
    std::vector<int> kx(n), kd(n, 0);
    for (int l = 0; l < n; ++l)
        kx[l] = x_carrier ? (*x_carrier)[l] : 2 * std::max(1L, std::lround(trunc.i_max / 4.0));
    if (d_carrier)
        kd = *d_carrier;

    std::vector<AxisProjection> px(n), pd(n);
    for (int l = 0; l < n; ++l) {
        px[l] = project_axis(domain.x_bounds[l], center.x[l], x_widths[l], kx[l], 1, trunc.i_max);
        pd[l] = project_axis(domain.d_bounds[l], center.d[l], d_widths[l], kd[l], -trunc.j_max,
                             trunc.j_max);
        require(!px[l].values.empty() && !pd[l].values.empty(), Errc::truncation_too_small,
                "truncation holds no even index on some axis");
    }

    SpectralState s;
    s.domain = domain;
    s.truncation = trunc;
    s.labels = enumerate_indices(n, trunc);
    s.coeffs.assign(s.labels.size(), complex(0.0, 0.0));
    s.r_marginal = RMarginal::dirac_at(center.r);

    auto axis_coeff = [](const AxisProjection& p, int v) {
        if (v % 2 != 0) return complex(0.0, 0.0);
        auto it = std::lower_bound(p.values.begin(), p.values.end(), v);
        if (it == p.values.end() || *it != v) return complex(0.0, 0.0);
        return p.coeffs[static_cast<size_t>(it - p.values.begin())];
    };

    real mass = 0.0;
    real packet_norm2 = 1.0;
    for (int l = 0; l < n; ++l) packet_norm2 *= px[l].packet_norm2 * pd[l].packet_norm2;
    require(packet_norm2 > 0.0, Errc::numeric_failure, "packet has no mass inside the domain");
    for (size_t k = 0; k < s.labels.size(); ++k) {
        complex c(1.0, 0.0);
        for (int l = 0; l < n; ++l) {
            c *= axis_coeff(px[l], s.labels[k].I[l]);
            if (c == complex(0.0, 0.0)) break;
            c *= axis_coeff(pd[l], s.labels[k].J[l]);
            if (c == complex(0.0, 0.0)) break;
        }
        s.coeffs[k] = c;
        mass += std::norm(c);
    }
    const real frac = mass / packet_norm2;
    if (captured != nullptr) *captured = frac;
    if (frac < 0.99)
        throw Error(Errc::truncation_too_small,
                    "truncation captures less than 99% of the packet mass");
    s.normalize();
    return s;
}

SpectralState evolve(const SpectralState& state, real t, const EigenTable& table) {
    SpectralState out = state;
    const std::vector<real> lam = eigenvalues_for(state, table);
    out.coeffs = apply_phases(state.coeffs, lam, t);
    out.norm_cache = state.norm_cache;  // phases preserve the norm
    return out;
}

// --- observables ---------------------------------------------------------------

bool ObservableMatrix::is_hermitian(real tol) const {
    const size_t n = size();
    for (size_t r = 0; r < n; ++r)
        for (size_t c = r; c < n; ++c)
            if (std::abs(at(r, c) - std::conj(at(c, r))) > tol) return false;
    return true;
}

namespace {

constexpr size_t kMaxDense = 4096;

ObservableMatrix make_empty_matrix(const MarketDomain& domain, const TruncationSpec& trunc) {
    domain.validate();
    ObservableMatrix m;
    m.labels = enumerate_indices(domain.n_assets, trunc);
    require(m.labels.size() <= kMaxDense, Errc::config_error,
            "truncation too large for a dense observable matrix");
    m.entries.assign(m.labels.size() * m.labels.size(), complex(0.0, 0.0));
    return m;
}

}  // namespace

ObservableMatrix position_operator_matrix(CoordBlock block, int component,
                                          const MarketDomain& domain,
                                          const TruncationSpec& trunc) {
    check_block(block);
    require(component >= 0 && component < domain.n_assets, Errc::domain_error,
            "component outside the asset range");
    ObservableMatrix m = make_empty_matrix(domain, trunc);
    const real L =
        (block == CoordBlock::x) ? domain.x_bounds[component] : domain.d_bounds[component];
    const size_t n = m.labels.size();
    const int ni = static_cast<int>(n);
#pragma omp parallel for schedule(static) if (ni >= 128)
    for (int r = 0; r < ni; ++r) {
        for (size_t c = 0; c < n; ++c) {
            int shift = 0;
            if (line_neighbors(m.labels[static_cast<size_t>(r)], m.labels[c], block, component,
                               shift))
                m.entries[static_cast<size_t>(r) * n + c] = position_entry_1d(shift, L);
        }
    }
    m.hermitian = true;
    return m;
}

ObservableMatrix momentum_operator_matrix(CoordBlock block, int component,
                                          const MarketDomain& domain,
                                          const TruncationSpec& trunc) {
    check_block(block);
    require(component >= 0 && component < domain.n_assets, Errc::domain_error,
            "component outside the asset range");
    ObservableMatrix m = make_empty_matrix(domain, trunc);
    const real L =
        (block == CoordBlock::x) ? domain.x_bounds[component] : domain.d_bounds[component];
    const size_t n = m.labels.size();
    for (size_t k = 0; k < n; ++k) {
        const int v = (block == CoordBlock::x) ? m.labels[k].I[static_cast<size_t>(component)]
                                               : m.labels[k].J[static_cast<size_t>(component)];
        m.entries[k * n + k] = complex(pi * v / L, 0.0);
    }
    m.hermitian = true;
    return m;
}

ObservableMatrix identity_observable(const MarketDomain& domain, const TruncationSpec& trunc) {
    ObservableMatrix m = make_empty_matrix(domain, trunc);
    const size_t n = m.labels.size();
    for (size_t k = 0; k < n; ++k) m.entries[k * n + k] = complex(1.0, 0.0);
    m.hermitian = true;
    return m;
}

complex expectation_form(const SpectralState& state, const ObservableMatrix& obs) {
    check_labels_match(state, obs);
    const std::vector<complex> av = matvec(obs, state.coeffs);
    return inner(av, state.coeffs);
}

real expectation(const SpectralState& state, const ObservableMatrix& obs) {
    return expectation_form(state, obs).real();
}

real variance(const SpectralState& state, const ObservableMatrix& obs) {
    check_labels_match(state, obs);
    require(obs.hermitian, Errc::domain_error, "variance needs a hermitian observable");
    const std::vector<complex> av = matvec(obs, state.coeffs);
    const real second = norm2_c(av);  // (A^2 psi, psi) = ||A psi||^2 for hermitian A
    const real first = inner(av, state.coeffs).real();
    return second - first * first;
}

MeanDynamics diagonal_mean_dynamics(const SpectralState& state) {
    state.r_marginal.validate();
    real weight = 0.0;
    for (const complex& z : state.coeffs) weight += std::norm(z);
    MeanDynamics out;
    out.x_mean.resize(state.domain.n_assets);
    out.d_mean.resize(state.domain.n_assets);
    for (int l = 0; l < state.domain.n_assets; ++l) {
        out.x_mean[l] = weight * 0.5 * state.domain.x_bounds[l];
        out.d_mean[l] = weight * 0.5 * state.domain.d_bounds[l];
    }
    out.r_mean = state.r_marginal.mean();
    return out;
}

real uniform_law_cdf(const MarketPoint& q0, const MarketDomain& domain,
                     const RMarginal& r_marginal, bool* clamped) {
    domain.validate();
    require(static_cast<int>(q0.x.size()) == domain.n_assets &&
                static_cast<int>(q0.d.size()) == domain.n_assets,
            Errc::dimension_mismatch, "quantile point dimension mismatch");
    bool any_clamped = false;
    real p = 1.0;
    for (int l = 0; l < domain.n_assets; ++l) {
        const real fx = q0.x[l] / domain.x_bounds[l];
        const real fd = q0.d[l] / domain.d_bounds[l];
        if (fx < 0.0 || fx > 1.0 || fd < 0.0 || fd > 1.0) any_clamped = true;
        p *= std::clamp(fx, 0.0, 1.0) * std::clamp(fd, 0.0, 1.0);
    }
    p *= r_marginal.cdf(q0.r);
    if (clamped != nullptr) *clamped = any_clamped;
    return p;
}

complex serial_cross_moment(const SpectralState& state_t, const ObservableMatrix& f_obs,
                            const ObservableMatrix& g_obs, real t, real t1, real t2,
                            const EigenTable& table) {
    check_labels_match(state_t, f_obs);
    check_labels_match(state_t, g_obs);
    require(t <= t1 && t <= t2, Errc::domain_error, "cross-moment times must not precede t");
    const std::vector<real> lam = eigenvalues_for(state_t, table);
    std::vector<complex> v = apply_phases(state_t.coeffs, lam, -(t2 - t));  // e^{-iH(t2-t)} psi_t
    v = matvec(g_obs, v);
    v = apply_phases(v, lam, t2 - t1);
    v = matvec_adjoint(f_obs, v);
    v = apply_phases(v, lam, t1 - t);
    return inner(v, state_t.coeffs);
}

HeisenbergReport heisenberg_check(const SpectralState& state, CoordBlock block, int component,
                                  real tol) {
    const ObservableMatrix q = position_operator_matrix(block, component, state.domain,
                                                        state.truncation);
    const ObservableMatrix p = momentum_operator_matrix(block, component, state.domain,
                                                        state.truncation);
    check_labels_match(state, q);
    const size_t n = q.size();

    // [q, p] has entries q[r,c] (p_c - p_r) since p is diagonal
    std::vector<complex> comm_c(n, complex(0.0, 0.0));
    for (size_t r = 0; r < n; ++r) {
        const real pr = p.at(r, r).real();
        complex acc(0.0, 0.0);
        for (size_t c = 0; c < n; ++c)
            acc += q.at(r, c) * (p.at(c, c).real() - pr) * state.coeffs[c];
        comm_c[r] = acc;
    }

    HeisenbergReport rep;
    rep.sigma2_q = variance(state, q);
    rep.sigma2_p = variance(state, p);
    rep.lhs = rep.sigma2_q * rep.sigma2_p;
    // The restricted exponential family covers the box twice (two modulation
    // classes), so an interior packet's commutator image has coefficient norm
    // 2, not 1; report it normalized so the ideal interior value is 1.
    rep.commutator_norm = 0.5 * std::sqrt(norm2_c(comm_c));
    rep.rhs = 0.25 * norm2_c(comm_c);
    rep.satisfied = rep.lhs >= rep.rhs - tol;
    if (std::abs(rep.commutator_norm - 1.0) > 0.10)
        throw Error(Errc::truncation_too_small,
                    "commutator norm far from 1: truncation/boundary artifact");
    return rep;
}

real ehrenfest_residual(const SpectralState& state, const ObservableMatrix& obs, real t, real h,
                        const EigenTable& table) {
    check_labels_match(state, obs);
    require(h > 0.0, Errc::domain_error, "step must be positive");
    const std::vector<real> lam = eigenvalues_for(state, table);
    auto value_at = [&](real s) {
        const std::vector<complex> c = apply_phases(state.coeffs, lam, s);
        const std::vector<complex> ac = matvec(obs, c);
        return inner(ac, c).real();
    };
    const real diff = (value_at(t + h) - value_at(t - h)) / (2.0 * h);

    // (1/i)([A,H] psi_t, psi_t), H diagonal with lambda
    const std::vector<complex> ct = apply_phases(state.coeffs, lam, t);
    const size_t n = obs.size();
    std::vector<complex> comm_c(n, complex(0.0, 0.0));
    for (size_t r = 0; r < n; ++r) {
        complex acc(0.0, 0.0);
        for (size_t c = 0; c < n; ++c) acc += obs.at(r, c) * (lam[c] - lam[r]) * ct[c];
        comm_c[r] = acc;
    }
    const complex rhs = inner(comm_c, ct) / complex(0.0, 1.0);
    return std::abs(diff - rhs.real());
}

}  // namespace qmkt

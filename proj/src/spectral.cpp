#include "qmarket/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <mutex>
#include <sstream>

#include "qmarket/quadrature.hpp"

namespace qmkt {

namespace {

void require(bool ok, Errc code, const char* msg) {
    if (!ok) throw Error(code, msg);
}

void check_index_I(const std::vector<int>& I, int n) {
    require(static_cast<int>(I.size()) == n, Errc::dimension_mismatch,
            "nominal index size does not match the market dimension");
    for (int v : I)
        require(v >= 1, Errc::domain_error, "nominal index entries must be positive");
}

void check_index_J(const std::vector<int>& J, int n) {
    require(static_cast<int>(J.size()) == n, Errc::dimension_mismatch,
            "deflator index size does not match the market dimension");
}

void check_point(const vecN& p, const vecN& bounds, const char* what) {
    require(p.size() == bounds.size(), Errc::dimension_mismatch,
            "point dimension does not match the domain");
    for (size_t l = 0; l < p.size(); ++l)
        require(p[l] >= 0.0 && p[l] <= bounds[l], Errc::out_of_domain, what);
}

void check_sign(int hamilton_sign) {
    require(hamilton_sign == 1 || hamilton_sign == -1, Errc::config_error,
            "hamilton_sign must be +1 or -1");
}

real volume(const vecN& bounds) {
    real v = 1.0;
    for (real b : bounds) v *= b;
    return v;
}

// ---- shared x-side integrals -------------------------------------------------
//
// Every eigenvalue over a fixed domain needs the same cuboid integrals of
// g(x) = (sum_l x_l)/|x|^2 and of x_l g(x): the deflator half of the double
// integral is a polynomial moment that the tensor rule reproduces exactly, so
// the (I, J) dependence collapses to eigenvalue prefactors. We therefore
// tabulate the cumulative corner-refined values of these N+1 integrals once
// per (domain, order) and reuse them for every index and refinement level.

struct XMoments {
    std::vector<real> v;                 // v[L]   = (1/vol) I_L[g]
    std::vector<std::vector<real>> u;    // u[L][l] = (1/vol) I_L[x_l g]
};

// Tensor-rule sums of {g, x_0 g, .., x_{N-1} g} over one box, added to acc.
void accumulate_box(const Box& box, int order, std::vector<real>& acc) {
    const GaussLegendre& rule = GaussLegendre::cached(order);
    const int n = static_cast<int>(box.size());
    std::vector<int> digit(n, 0);
    vecN x(n);
    for (;;) {
        real w = 1.0;
        for (int a = 0; a < n; ++a) {
            const real half = 0.5 * (box[a].second - box[a].first);
            const real mid = 0.5 * (box[a].second + box[a].first);
            x[a] = mid + half * rule.nodes()[digit[a]];
            w *= half * rule.weights()[digit[a]];
        }
        real s = 0.0, n2 = 0.0;
        for (int a = 0; a < n; ++a) {
            s += x[a];
            n2 += x[a] * x[a];
        }
        const real g = s / n2;
        acc[0] += w * g;
        for (int a = 0; a < n; ++a) acc[1 + a] += w * x[a] * g;
        int a = 0;
        while (a < n && ++digit[a] == rule.order()) digit[a++] = 0;
        if (a == n) break;
    }
}

XMoments build_x_moments(const vecN& A, int order, int max_levels) {
    const int n = static_cast<int>(A.size());
    const real vol = volume(A);
    XMoments m;
    m.v.assign(max_levels + 1, 0.0);
    m.u.assign(max_levels + 1, std::vector<real>(n, 0.0));
    std::vector<real> shells(n + 1, 0.0);  // all shells peeled so far
    for (int level = 0; level <= max_levels; ++level) {
        vecN upper(n);
        for (int l = 0; l < n; ++l) upper[l] = std::ldexp(A[l], -level);
        std::vector<real> core(n + 1, 0.0);
        Box core_box(n);
        for (int l = 0; l < n; ++l) core_box[l] = {0.0, upper[l]};
        accumulate_box(core_box, order, core);
        m.v[level] = (shells[0] + core[0]) / vol;
        for (int l = 0; l < n; ++l) m.u[level][l] = (shells[1 + l] + core[1 + l]) / vol;
        if (level < max_levels)
            for (const Box& b : corner_shell_boxes(upper)) accumulate_box(b, order, shells);
    }
    return m;
}

const XMoments& x_moments(const vecN& A, int order, int max_levels) {
    static std::mutex mu;
    static std::map<std::string, XMoments> cache;
    std::ostringstream key;
    key << A.size() << '|' << order << '|' << max_levels;
    for (real a : A) {
        uint64_t bits;
        std::memcpy(&bits, &a, sizeof bits);
        key << '|' << bits;
    }
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(key.str());
    if (it == cache.end()) it = cache.emplace(key.str(), build_x_moments(A, order, max_levels)).first;
    return it->second;
}

uint64_t hash_ij(const std::vector<int>& I, const std::vector<int>& J) {
    uint64_t h = 1469598103934665603ull;  // FNV-1a over both index vectors
    auto mix = [&h](int v) {
        h ^= static_cast<uint64_t>(static_cast<uint32_t>(v));
        h *= 1099511628211ull;
    };
    for (int v : I) mix(v);
    mix(INT32_MIN);  // separator outside the index range
    for (int v : J) mix(v);
    return h;
}

}  // namespace

bool operator==(const SpectralIndex& a, const SpectralIndex& b) {
    return a.I == b.I && a.J == b.J && a.k == b.k;
}

int index_degree(const SpectralIndex& idx) {
    int d = 0;
    for (int v : idx.I) d += v - 1;
    for (int v : idx.J) d += std::abs(v);
    return d;
}

std::vector<SpectralIndex> enumerate_indices(int n_assets, const TruncationSpec& trunc) {
    require(n_assets >= 1, Errc::domain_error, "need at least one asset");
    require(trunc.i_max >= 1 && trunc.j_max >= 0, Errc::config_error,
            "truncation cutoffs must be positive");
    require(trunc.max_indices >= 1, Errc::config_error, "index budget must be positive");

    std::vector<SpectralIndex> all;
    std::vector<int> I(n_assets, 1), J(n_assets, -trunc.j_max);
    for (;;) {  // odometer over the I box
        for (;;) {  // odometer over the J box
            all.push_back(SpectralIndex{I, J, 0});
            int a = 0;
            while (a < n_assets && ++J[a] > trunc.j_max) J[a++] = -trunc.j_max;
            if (a == n_assets) break;
        }
        int a = 0;
        while (a < n_assets && ++I[a] > trunc.i_max) I[a++] = 1;
        if (a == n_assets) break;
    }
    std::sort(all.begin(), all.end(), [](const SpectralIndex& a, const SpectralIndex& b) {
        const int da = index_degree(a), db = index_degree(b);
        if (da != db) return da < db;
        if (a.I != b.I) return a.I < b.I;
        return a.J < b.J;
    });
    // keep whole degree tiers while they fit in the budget
    size_t keep = 0;
    while (keep < all.size()) {
        size_t end = keep + 1;
        while (end < all.size() && index_degree(all[end]) == index_degree(all[keep])) ++end;
        if (end > static_cast<size_t>(trunc.max_indices) && keep > 0) break;
        keep = end;
        if (keep >= static_cast<size_t>(trunc.max_indices)) break;
    }
    all.resize(keep);
    return all;
}

complex alpha_eigenvector(const std::vector<int>& I, const MarketDomain& domain, const vecN& x) {
    check_index_I(I, domain.n_assets);
    check_point(x, domain.x_bounds, "nominal point outside the cuboid");
    real phase = 0.0;
    for (int l = 0; l < domain.n_assets; ++l) phase += I[l] * x[l] / domain.x_bounds[l];
    phase *= pi;
    return std::exp(complex(0.0, -phase)) / std::sqrt(volume(domain.x_bounds));
}

real alpha_eigenvalue(const std::vector<int>& I, const MarketDomain& domain) {
    check_index_I(I, domain.n_assets);
    real s = 0.0;
    for (int l = 0; l < domain.n_assets; ++l) {
        const real t = pi * I[l] / domain.x_bounds[l];
        s += t * t;
    }
    return std::sqrt(s);
}

complex beta_eigenvector(const std::vector<int>& J, const MarketDomain& domain, const vecN& d) {
    check_index_J(J, domain.n_assets);
    check_point(d, domain.d_bounds, "deflator point outside the cuboid");
    real phase = 0.0;
    for (int l = 0; l < domain.n_assets; ++l) phase += J[l] * d[l] / domain.d_bounds[l];
    phase *= pi;
    return std::exp(complex(0.0, -phase)) / std::sqrt(volume(domain.d_bounds));
}

real beta_eigenvalue(const std::vector<int>& J, const MarketDomain& domain) {
    check_index_J(J, domain.n_assets);
    real s = 0.0;
    real sign = 1.0;
    for (int l = 0; l < domain.n_assets; ++l) {
        if (J[l] == 0) return 0.0;
        if (J[l] < 0) sign = -sign;
        const real t = pi * J[l] / domain.d_bounds[l];
        s += t * t;
    }
    return sign * std::sqrt(s);
}

complex gamma_eigenvector(int k, const vecN& r) {
    require(k >= 0, Errc::domain_error, "rate-basis degree must be nonnegative");
    require(!r.empty(), Errc::dimension_mismatch, "rate point is empty");
    // orthonormal Hermite functions h_k(u) = H_k(u) e^{-u^2/2} / sqrt(2^k k! sqrt(pi))
    auto hermite_fn = [](int deg, real u) {
        real h0 = std::exp(-0.5 * u * u) / std::pow(pi, 0.25);
        if (deg == 0) return h0;
        real h1 = std::sqrt(2.0) * u * h0;
        for (int j = 2; j <= deg; ++j) {
            const real h2 = std::sqrt(2.0 / j) * u * h1 - std::sqrt((j - 1.0) / j) * h0;
            h0 = h1;
            h1 = h2;
        }
        return h1;
    };
    real val = hermite_fn(k, r[0]);
    for (size_t l = 1; l < r.size(); ++l) val *= hermite_fn(0, r[l]);
    return complex(val, 0.0);
}

complex plane_wave_overlap(int m) {
    if (m == 0) return complex(1.0, 0.0);
    if (m % 2 == 0) return complex(0.0, 0.0);
    return complex(0.0, -2.0 / (pi * m));  // 2/(i pi m)
}

complex basis_overlap(const std::vector<int>& m) {
    complex p(1.0, 0.0);
    for (int v : m) p *= plane_wave_overlap(v);
    return p;
}

EigenData lambda_IJ_quadrature(const std::vector<int>& I, const std::vector<int>& J,
                               const MarketDomain& domain, const QuadratureSpec& spec,
                               int hamilton_sign) {
    domain.validate();
    check_index_I(I, domain.n_assets);
    check_index_J(J, domain.n_assets);
    check_sign(hamilton_sign);
    require(domain.n_assets >= 2, Errc::unsupported_dimension,
            "one-asset eigenvalues follow the reduced rule and vanish identically");
    require(spec.order >= 2, Errc::config_error, "quadrature order must be at least 2");
    require(spec.min_levels >= 1 && spec.max_levels >= spec.min_levels, Errc::config_error,
            "refinement levels must satisfy 1 <= min <= max");
    require(spec.rel_tol > 0.0, Errc::config_error, "relative tolerance must be positive");

    EigenData out;
    out.lambda_alpha = alpha_eigenvalue(I, domain);
    out.lambda_beta = beta_eigenvalue(J, domain);
    if (out.lambda_beta == 0.0) return out;  // exact zero, no quadrature

    const XMoments& xm = x_moments(domain.x_bounds, spec.order, spec.max_levels);
    const vecN& B = domain.d_bounds;
    real half_b_sum = 0.0;
    for (real b : B) half_b_sum += 0.5 * b;
    const real pref = hamilton_sign * 0.5 * out.lambda_alpha * out.lambda_beta;
    auto value_at = [&](int level) {
        real bracket = 0.0;
        for (int l = 0; l < domain.n_assets; ++l) bracket += 0.5 * B[l] * xm.u[level][l];
        bracket -= out.lambda_alpha * half_b_sum * xm.v[level];
        return pref * bracket;
    };

    real prev = value_at(spec.min_levels - 1);
    out.converged = false;
    for (int level = spec.min_levels; level <= spec.max_levels; ++level) {
        const real cur = value_at(level);
        out.lambda_ij = cur;
        out.quadrature_error = std::abs(cur - prev);
        out.levels = level;
        if (out.quadrature_error <= spec.rel_tol * std::max(std::abs(cur), 1e-300)) {
            out.converged = true;
            break;
        }
        prev = cur;
    }
    return out;
}

real lambda_IJ_closed_form_N2(const std::vector<int>& I, const std::vector<int>& J, const vecN& A,
                              const vecN& B) {
    require(I.size() == 2 && J.size() == 2 && A.size() == 2 && B.size() == 2,
            Errc::unsupported_dimension, "the closed form covers exactly two assets");
    require(A[0] > 0 && A[1] > 0 && B[0] > 0 && B[1] > 0, Errc::domain_error,
            "domain bounds must be positive");
    if (J[0] == 0 || J[1] == 0) return 0.0;
    const real sgn = ((J[0] < 0) != (J[1] < 0)) ? -1.0 : 1.0;
    const real A1 = A[0], A2 = A[1], B1 = B[0], B2 = B[1];
    const real abs_i1 = std::abs(I[0]);
    const real s = std::sqrt(A1 * A1 + A2 * A2);
    const real root = std::sqrt(J[0] * J[0] / (B1 * B1) + J[1] * J[1] / (B2 * B2));
    const real pre = sgn * B2 * pi * pi * root * abs_i1 / (48.0 * A1 * A1);

    const real t1 = 2.0 * A1 * (B1 * B1 + B2 * B2) *
                    (-2.0 * A1 * A1 * A1 + 2.0 * A1 * A1 * s + A1 * A2 * s +
                     2.0 * A2 * A2 * (-A2 + s));
    const real t2 = -2.0 * A1 * A2 * A2 * A2 *
                    (B1 * B1 * std::atanh(A1 / s) +
                     2.0 * B2 * B2 * (std::log(A2) - std::log(A1 + s)));
    const real big_log = std::log1p(2.0 * A2 * (A2 + s) / (A1 * A1));
    const real t3 = -3.0 * B1 * (B1 + B2) * pi * abs_i1 *
                    (2.0 * A1 * s + 2.0 * A2 * s -
                     2.0 * A2 * A2 * (1.0 + std::log(A2) - std::log(A1 + s)) +
                     A1 * A1 * (-2.0 + big_log) +
                     A1 * A1 * A1 * A1 * (2.0 * B1 * B1 - B2 * B2) * big_log);
    return pre * (t1 + t2 + t3);
}

real reduced_lambda_alpha(const std::vector<int>& I_reduced, const MarketDomain& domain,
                          const vecN& d_ref) {
    const int n = domain.n_assets;
    require(static_cast<int>(d_ref.size()) == n, Errc::dimension_mismatch,
            "reference deflator dimension does not match the domain");
    if (n == 1) {
        require(I_reduced.empty(), Errc::dimension_mismatch,
                "a one-asset market has no reduced index");
        require(d_ref[0] != 0.0, Errc::division_by_zero,
                "reference deflator's last component vanishes");
        return 0.0;
    }
    require(static_cast<int>(I_reduced.size()) == n - 1, Errc::dimension_mismatch,
            "reduced index must have one entry per non-numeraire asset");
    for (int v : I_reduced)
        require(v >= 1, Errc::domain_error, "nominal index entries must be positive");
    const real dn = d_ref[n - 1];
    require(dn != 0.0, Errc::division_by_zero, "reference deflator's last component vanishes");
    real sum = 0.0;
    for (int l = 0; l < n - 1; ++l) {
        const real ratio = d_ref[l] / dn;
        const real t = pi * I_reduced[l] / domain.x_bounds[l];
        sum += t * t * (1.0 + ratio * ratio);
    }
    return std::sqrt(sum);
}

complex hamilton_apply(const std::vector<int>& I, const std::vector<int>& J, int k,
                       const MarketDomain& domain, const MarketPoint& q, int hamilton_sign) {
    domain.validate();
    check_index_I(I, domain.n_assets);
    check_index_J(J, domain.n_assets);
    check_sign(hamilton_sign);
    check_point(q.x, domain.x_bounds, "nominal point outside the cuboid");
    check_point(q.d, domain.d_bounds, "deflator point outside the cuboid");
    require(q.r.size() == q.x.size(), Errc::dimension_mismatch, "rate dimension mismatch");

    const real n2 = norm2(q.x);
    require(n2 > 0.0, Errc::zero_nominal_vector, "nominal portfolio vector is zero");

    const real la = alpha_eigenvalue(I, domain);
    const real lb = beta_eigenvalue(J, domain);
    if (lb == 0.0) return complex(0.0, 0.0);

    real e_dot_d = 0.0, x_dot_d = 0.0, x_dot_e = 0.0, x_rd = 0.0;
    for (int l = 0; l < domain.n_assets; ++l) {
        e_dot_d += q.d[l];
        x_dot_d += q.x[l] * q.d[l];
        x_dot_e += q.x[l];
        x_rd += q.x[l] * q.r[l] * q.d[l];
    }
    const real scalar =
        lb * (x_dot_e / n2) *
        (hamilton_sign * 0.5 * (-la * la * e_dot_d + la * x_dot_d) - x_rd);
    return scalar * alpha_eigenvector(I, domain, q.x) * beta_eigenvector(J, domain, q.d) *
           gamma_eigenvector(k, q.r);
}

EigenTable EigenTable::build(const MarketDomain& domain, const TruncationSpec& trunc,
                             const QuadratureSpec& spec, int hamilton_sign) {
    domain.validate();
    check_sign(hamilton_sign);
    EigenTable table;
    table.domain_ = domain;
    table.sign_ = hamilton_sign;
    table.indices_ = enumerate_indices(domain.n_assets, trunc);
    table.rows_.resize(table.indices_.size());

    const bool one_asset = domain.n_assets == 1;
    if (!one_asset) {
        // Validate once and warm the shared moment cache up front: the loop
        // body below must not throw inside the parallel region.
        require(spec.order >= 2, Errc::config_error, "quadrature order must be at least 2");
        require(spec.min_levels >= 1 && spec.max_levels >= spec.min_levels, Errc::config_error,
                "refinement levels must satisfy 1 <= min <= max");
        require(spec.rel_tol > 0.0, Errc::config_error, "relative tolerance must be positive");
        x_moments(domain.x_bounds, spec.order, spec.max_levels);
    }

    const int count = static_cast<int>(table.indices_.size());
#pragma omp parallel for schedule(dynamic, 16)
    for (int i = 0; i < count; ++i) {
        const SpectralIndex& idx = table.indices_[i];
        if (one_asset) {
            EigenData d;
            d.lambda_alpha = alpha_eigenvalue(idx.I, domain);
            d.lambda_beta = beta_eigenvalue(idx.J, domain);
            d.lambda_ij = 0.0;  // one-asset operator vanishes identically
            table.rows_[i] = d;
        } else {
            table.rows_[i] = lambda_IJ_quadrature(idx.I, idx.J, domain, spec, hamilton_sign);
        }
    }
    for (size_t i = 0; i < table.indices_.size(); ++i)
        table.buckets_[hash_ij(table.indices_[i].I, table.indices_[i].J)].push_back(i);
    return table;
}

const EigenData* EigenTable::find(const std::vector<int>& I, const std::vector<int>& J) const {
    auto it = buckets_.find(hash_ij(I, J));
    if (it == buckets_.end()) return nullptr;
    for (size_t row : it->second)
        if (indices_[row].I == I && indices_[row].J == J) return &rows_[row];
    return nullptr;
}

bool EigenTable::all_converged() const {
    for (const EigenData& d : rows_)
        if (!d.converged) return false;
    return true;
}

NupbrResult nupbr_check(const MarketDomain& domain, int i_max, int j_max, real tol,
                        const QuadratureSpec& spec, int hamilton_sign) {
    domain.validate();
    require(i_max >= 1 && j_max >= 0, Errc::config_error, "cutoffs must be nonnegative");
    require(tol >= 0.0, Errc::config_error, "tolerance must be nonnegative");
    TruncationSpec trunc;
    trunc.i_max = i_max;
    trunc.j_max = j_max;
    trunc.max_indices = INT32_MAX;  // the spectrum test scans the whole cutoff box
    EigenTable table = EigenTable::build(domain, trunc, spec, hamilton_sign);
    NupbrResult result;
    result.checked = static_cast<int>(table.rows().size());
    for (size_t i = 0; i < table.rows().size(); ++i) {
        const EigenData& d = table.rows()[i];
        if (std::abs(d.lambda_ij) > tol || !d.converged)
            result.violators.push_back(NupbrViolation{table.indices()[i], d.lambda_ij, d.converged});
    }
    result.nupbr = result.violators.empty();
    return result;
}

}  // namespace qmkt

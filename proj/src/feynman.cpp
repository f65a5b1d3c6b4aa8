#include "qmarket/feynman.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <mutex>
#include <numeric>
#include <string>

#include "qmarket/bubbles.hpp"  // pairwise_sum

namespace qmkt {

namespace {

void require(bool cond, Errc code, const std::string& msg) {
    if (!cond) throw Error(code, msg);
}

// Invert a small symmetric positive matrix by Gauss-Jordan elimination with
// partial pivoting. Row-major, n x n.
std::vector<real> invert_matrix(std::vector<real> m, int n) {
    std::vector<real> inv(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) inv[static_cast<size_t>(i) * n + i] = 1.0;
    real scale = 0.0;
    for (real v : m) scale = std::max(scale, std::abs(v));
    if (scale == 0.0) throw Error(Errc::singular_diffusion, "diffusion matrix is zero");
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        for (int r = col + 1; r < n; ++r)
            if (std::abs(m[static_cast<size_t>(r) * n + col]) >
                std::abs(m[static_cast<size_t>(pivot) * n + col]))
                pivot = r;
        real pv = m[static_cast<size_t>(pivot) * n + col];
        if (std::abs(pv) <= 1e-13 * scale)
            throw Error(Errc::singular_diffusion, "diffusion matrix is singular");
        if (pivot != col) {
            for (int c = 0; c < n; ++c) {
                std::swap(m[static_cast<size_t>(pivot) * n + c],
                          m[static_cast<size_t>(col) * n + c]);
                std::swap(inv[static_cast<size_t>(pivot) * n + c],
                          inv[static_cast<size_t>(col) * n + c]);
            }
        }
        real d = m[static_cast<size_t>(col) * n + col];
        for (int c = 0; c < n; ++c) {
            m[static_cast<size_t>(col) * n + c] /= d;
            inv[static_cast<size_t>(col) * n + c] /= d;
        }
        for (int r = 0; r < n; ++r) {
            if (r == col) continue;
            real f = m[static_cast<size_t>(r) * n + col];
            if (f == 0.0) continue;
            for (int c = 0; c < n; ++c) {
                m[static_cast<size_t>(r) * n + c] -= f * m[static_cast<size_t>(col) * n + c];
                inv[static_cast<size_t>(r) * n + c] -= f * inv[static_cast<size_t>(col) * n + c];
            }
        }
    }
    return inv;
}

}  // namespace

GatPotentials gat_potentials(const MarketPoint& q, const std::vector<vecN>& sigma_d) {
    const size_t n = q.x.size();
    require(q.d.size() == n && q.r.size() == n, Errc::dimension_mismatch,
            "gat_potentials: coordinate block sizes differ");
    require(sigma_d.size() == n, Errc::dimension_mismatch,
            "gat_potentials: diffusion matrix must be N x N");
    for (const auto& row : sigma_d)
        require(row.size() == n, Errc::dimension_mismatch,
                "gat_potentials: diffusion matrix must be N x N");

    real den = dot(q.x, q.d);
    if (den == 0.0) throw Error(Errc::zero_denominator, "gat_potentials: x.D = 0");

    GatPotentials out;
    real xrd = 0.0;
    for (size_t j = 0; j < n; ++j) xrd += q.x[j] * q.r[j] * q.d[j];
    out.phi = -xrd / den - 0.5;

    // Covariance C = sigma sigma^T, then a_d = -C^{-1} x / (x.D).
    const int ni = static_cast<int>(n);
    std::vector<real> cov(n * n, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) {
            real s = 0.0;
            for (size_t k = 0; k < n; ++k) s += sigma_d[i][k] * sigma_d[j][k];
            cov[i * n + j] = s;
        }
    std::vector<real> inv = invert_matrix(std::move(cov), ni);
    out.a_d = zeros(ni);
    for (size_t j = 0; j < n; ++j) {
        real s = 0.0;
        for (size_t i = 0; i < n; ++i) s += inv[j * n + i] * q.x[i];
        out.a_d[j] = -s / den;
    }
    return out;
}

real guerra_morato_lagrangian(const MarketPoint& at, const vecN& b, real div_b, real phi,
                              const vecN& a, real div_a) {
    const size_t n = at.x.size() + at.d.size() + at.r.size();
    require(b.size() == n && a.size() == n, Errc::dimension_mismatch,
            "guerra_morato_lagrangian: drift/potential size must match the full coordinate count");
    real kinetic = 0.0;
    for (real bj : b) kinetic += 0.5 * bj * bj;
    return kinetic + 0.5 * div_b - phi + dot(a, b) + 0.5 * div_a;
}

std::vector<complex> wavefunction_from_RS(const std::vector<real>& R, const std::vector<real>& S) {
    require(R.size() == S.size(), Errc::dimension_mismatch,
            "wavefunction_from_RS: field sizes differ");
    std::vector<complex> psi(R.size());
    for (size_t i = 0; i < R.size(); ++i) {
        real mag = std::exp(R[i]);
        psi[i] = std::polar(mag, S[i]);
        real density = std::norm(psi[i]);
        real expected = std::exp(2.0 * R[i]);
        if (!std::isfinite(density) ||
            std::abs(density - expected) > 1e-12 * std::max(density, expected))
            throw Error(Errc::numeric_failure,
                        "wavefunction_from_RS: density does not match e^{2R}");
    }
    return psi;
}

namespace {

struct MetricLayout {
    // Flattened active-coordinate view over (x block, d block, r block).
    std::vector<int> block;    // 0 = x, 1 = d, 2 = r
    std::vector<int> index;    // component within the block
    std::vector<real> sigma;   // positive scales for active coordinates
};

MetricLayout validate_metrics(const StepMetrics& m, size_t n) {
    require(m.sigma_x.size() == n && m.sigma_d.size() == n && m.sigma_r.size() == n,
            Errc::dimension_mismatch, "step metrics: scale vectors must have one entry per asset");
    MetricLayout lay;
    const vecN* blocks[3] = {&m.sigma_x, &m.sigma_d, &m.sigma_r};
    for (int b = 0; b < 3; ++b)
        for (size_t j = 0; j < n; ++j) {
            real s = (*blocks[b])[j];
            require(s >= 0.0 && std::isfinite(s), Errc::degenerate_metric,
                    "step metrics: scales must be finite and non-negative");
            if (s > 0.0) {
                lay.block.push_back(b);
                lay.index.push_back(static_cast<int>(j));
                lay.sigma.push_back(s);
            }
        }
    require(!lay.sigma.empty(), Errc::degenerate_metric,
            "step metrics: every coordinate is frozen");
    return lay;
}

}  // namespace

PathIncrement sample_constrained_step(const MarketPoint& q, const StepMetrics& metrics, real ds,
                                      RngStream& rng) {
    const size_t n = q.x.size();
    require(q.d.size() == n, Errc::dimension_mismatch,
            "sample_constrained_step: x and D sizes differ");
    require(ds > 0.0, Errc::domain_error, "sample_constrained_step: ds must be positive");
    require(norm(q.d) > 0.0, Errc::domain_error,
            "sample_constrained_step: deflator direction is zero");
    MetricLayout lay = validate_metrics(metrics, n);
    const size_t dof = lay.sigma.size();

    // Whitened constraint normal: the hyperplane x'.D = 0 becomes w.nrm = 0
    // with nrm_c = sigma_c D_j on active x coordinates.
    std::vector<real> nrm(dof, 0.0);
    real nn = 0.0;
    for (size_t c = 0; c < dof; ++c)
        if (lay.block[c] == 0) {
            nrm[c] = lay.sigma[c] * q.d[static_cast<size_t>(lay.index[c])];
            nn += nrm[c] * nrm[c];
        }
    real nlen = std::sqrt(nn);
    if (nlen > 0.0)
        for (real& v : nrm) v /= nlen;

    std::vector<real> w(dof);
    bool found = false;
    for (int attempt = 0; attempt < 128 && !found; ++attempt) {
        for (size_t c = 0; c < dof; ++c) w[c] = rng.normal();
        if (nlen > 0.0) {
            real proj = 0.0;
            for (size_t c = 0; c < dof; ++c) proj += w[c] * nrm[c];
            for (size_t c = 0; c < dof; ++c) w[c] -= proj * nrm[c];
        }
        real len = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
        if (len > 1e-8) {
            for (real& v : w) v /= len;
            found = true;
        }
    }
    require(found, Errc::degenerate_metric,
            "sample_constrained_step: the orthogonality constraint removes every degree of "
            "freedom");

    PathIncrement inc;
    inc.dx = zeros(static_cast<int>(n));
    inc.dd = zeros(static_cast<int>(n));
    inc.dr = zeros(static_cast<int>(n));
    vecN* outs[3] = {&inc.dx, &inc.dd, &inc.dr};
    for (size_t c = 0; c < dof; ++c)
        (*outs[lay.block[c]])[static_cast<size_t>(lay.index[c])] = lay.sigma[c] * w[c] * ds;
    return inc;
}

MarketPoint ConstrainedPath::point_at(size_t i) const {
    MarketPoint q = start;
    for (size_t k = 0; k < i && k < steps.size(); ++k) {
        for (size_t j = 0; j < q.x.size(); ++j) {
            q.x[j] += steps[k].dx[j];
            q.d[j] += steps[k].dd[j];
            q.r[j] += steps[k].dr[j];
        }
        q.t += ds;
    }
    return q;
}

ConstrainedPath sample_constrained_path(const MarketPoint& start, const StepMetrics& metrics,
                                        real ds, int n_steps, RngStream& rng) {
    require(n_steps >= 0, Errc::domain_error, "sample_constrained_path: negative step count");
    ConstrainedPath path;
    path.start = start;
    path.ds = ds;
    path.steps.reserve(static_cast<size_t>(n_steps));
    MarketPoint q = start;
    for (int i = 0; i < n_steps; ++i) {
        PathIncrement inc = sample_constrained_step(q, metrics, ds, rng);
        for (size_t j = 0; j < q.x.size(); ++j) {
            q.x[j] += inc.dx[j];
            q.d[j] += inc.dd[j];
            q.r[j] += inc.dr[j];
        }
        q.t += ds;
        path.steps.push_back(std::move(inc));
    }
    return path;
}

real max_constraint_residual(const ConstrainedPath& path, const StepMetrics& metrics) {
    const size_t n = path.start.x.size();
    MetricLayout lay = validate_metrics(metrics, n);
    require(path.ds > 0.0 || path.steps.empty(), Errc::domain_error,
            "max_constraint_residual: ds must be positive");
    real worst = 0.0;
    MarketPoint q = path.start;
    for (const PathIncrement& inc : path.steps) {
        // Unit metric speed over active coordinates; frozen ones must not move.
        real speed = 0.0;
        const vecN* blocks[3] = {&inc.dx, &inc.dd, &inc.dr};
        for (size_t c = 0; c < lay.sigma.size(); ++c) {
            real v = (*blocks[lay.block[c]])[static_cast<size_t>(lay.index[c])] / path.ds;
            speed += (v / lay.sigma[c]) * (v / lay.sigma[c]);
        }
        worst = std::max(worst, std::abs(speed - 1.0));
        const vecN* scales[3] = {&metrics.sigma_x, &metrics.sigma_d, &metrics.sigma_r};
        for (int b = 0; b < 3; ++b)
            for (size_t j = 0; j < n; ++j)
                if ((*scales[b])[j] == 0.0)
                    worst = std::max(worst, std::abs((*blocks[b])[j]));
        real ortho = 0.0;
        for (size_t j = 0; j < n; ++j) ortho += (inc.dx[j] / path.ds) * q.d[j];
        worst = std::max(worst, std::abs(ortho));
        for (size_t j = 0; j < n; ++j) {
            q.x[j] += inc.dx[j];
            q.d[j] += inc.dd[j];
            q.r[j] += inc.dr[j];
        }
    }
    return worst;
}

real path_action(const ConstrainedPath& path, const RateField& rates) {
    const size_t n = path.start.x.size();
    require(path.start.d.size() == n, Errc::dimension_mismatch, "path_action: x, D sizes differ");
    if (!path.steps.empty())
        require(path.ds > 0.0, Errc::domain_error, "path_action: ds must be positive");
    real action = 0.0;
    MarketPoint q = path.start;
    real s = 0.0;
    for (const PathIncrement& inc : path.steps) {
        real den = dot(q.x, q.d);
        if (den == 0.0) throw Error(Errc::zero_denominator, "path_action: x.D = 0 on path");
        vecN r = rates ? rates(s, q) : q.r;
        require(r.size() == n, Errc::dimension_mismatch, "path_action: rate field size mismatch");
        real drift = 0.0;
        for (size_t j = 0; j < n; ++j) drift += q.x[j] * (inc.dd[j] / path.ds + r[j] * q.d[j]);
        action += drift / den * path.ds;
        for (size_t j = 0; j < n; ++j) {
            q.x[j] += inc.dx[j];
            q.d[j] += inc.dd[j];
            q.r[j] += inc.dr[j];
        }
        s += path.ds;
    }
    return action;
}

std::tuple<complex, real, real> TerminalField::linear_functional(
    const std::vector<complex>& g) const {
    require(g.size() == psi.size(), Errc::dimension_mismatch,
            "linear_functional: weight per bin required");
    require(n_paths > 0, Errc::insufficient_paths, "linear_functional: empty field");
    complex value{0.0, 0.0};
    real s2_re = 0.0, s2_im = 0.0;
    for (size_t b = 0; b < psi.size(); ++b) {
        value += psi[b] * g[b] * bin_volume;
        const real gr = g[b].real(), gi = g[b].imag();
        // Per-bin sums of squared real/imag parts of per-path w * g.
        s2_re += gr * gr * m2_rr[b] - 2.0 * gr * gi * m2_ri[b] + gi * gi * m2_ii[b];
        s2_im += gi * gi * m2_rr[b] + 2.0 * gr * gi * m2_ri[b] + gr * gr * m2_ii[b];
    }
    const real np = static_cast<real>(n_paths);
    real var_re = std::max(0.0, s2_re / np - value.real() * value.real());
    real var_im = std::max(0.0, s2_im / np - value.imag() * value.imag());
    return {value, std::sqrt(var_re / np), std::sqrt(var_im / np)};
}

namespace {

struct BinGrid {
    std::vector<BinAxis> axes;
    std::vector<long long> stride;
    long long total = 1;

    explicit BinGrid(std::vector<BinAxis> a) : axes(std::move(a)) {
        stride.assign(axes.size(), 1);
        long long acc = 1;
        for (size_t k = axes.size(); k-- > 0;) {
            stride[k] = acc;
            acc *= axes[k].count;
        }
        total = acc;
    }

    // Flat index of a point, or -1 when it lies outside the grid.
    long long locate(const real* coords) const {
        long long idx = 0;
        for (size_t k = 0; k < axes.size(); ++k) {
            const BinAxis& ax = axes[k];
            real v = coords[k];
            if (v < ax.lo || v > ax.hi) return -1;
            int c = static_cast<int>((v - ax.lo) / ax.width());
            if (c >= ax.count) c = ax.count - 1;  // v == hi lands in the last bin
            idx += c * stride[k];
        }
        return idx;
    }
};

}  // namespace

TerminalField evolve_via_path_integral(const std::function<complex(const MarketPoint&)>& psi0,
                                       real t, const PathIntegralConfig& config,
                                       const PathIntegralModel& model) {
    require(static_cast<bool>(psi0), Errc::config_error,
            "evolve_via_path_integral: initial amplitude is required");
    const size_t n = model.metrics.sigma_x.size();
    require(n > 0, Errc::dimension_mismatch, "evolve_via_path_integral: zero assets");
    MetricLayout lay = validate_metrics(model.metrics, n);
    (void)lay;
    require(config.n_paths >= 2, Errc::insufficient_paths,
            "evolve_via_path_integral: at least two paths are required");
    require(config.n_steps >= 1 && config.ds > 0.0, Errc::config_error,
            "evolve_via_path_integral: positive step count and ds are required");
    require(std::abs(config.ds * config.n_steps - t) <= 1e-9 * std::max(1.0, std::abs(t)),
            Errc::inconsistent_spec, "evolve_via_path_integral: ds * n_steps must equal t");
    require(config.x_axes.size() == n && config.d_axes.size() == n, Errc::dimension_mismatch,
            "evolve_via_path_integral: one bin axis per coordinate is required");
    vecN r_start = config.r_start.empty() ? zeros(static_cast<int>(n)) : config.r_start;
    require(r_start.size() == n, Errc::dimension_mismatch,
            "evolve_via_path_integral: r_start size mismatch");

    std::vector<BinAxis> axes;
    axes.reserve(2 * n);
    real start_volume = 1.0;
    for (const auto* block : {&config.x_axes, &config.d_axes})
        for (const BinAxis& ax : *block) {
            require(ax.count >= 1 && ax.hi > ax.lo, Errc::config_error,
                    "evolve_via_path_integral: bin axes need hi > lo and count >= 1");
            axes.push_back(ax);
            start_volume *= ax.hi - ax.lo;
        }
    BinGrid grid(axes);
    real bin_volume = 1.0;
    for (const BinAxis& ax : grid.axes) bin_volume *= ax.width();

    const int n_paths = config.n_paths;
    std::vector<long long> bin_of(n_paths, -1);
    std::vector<real> wr(n_paths, 0.0), wi(n_paths, 0.0);

    std::atomic<bool> ok{true};
    std::mutex err_mutex;
    Errc err_code = Errc::numeric_failure;
    std::string err_msg;

#pragma omp parallel for schedule(static)
    for (int p = 0; p < n_paths; ++p) {
        if (!ok.load(std::memory_order_relaxed)) continue;
        try {
            RngStream rng(config.seed, static_cast<uint64_t>(p));
            MarketPoint q;
            q.x = zeros(static_cast<int>(n));
            q.d = zeros(static_cast<int>(n));
            q.r = r_start;
            q.t = 0.0;
            for (size_t j = 0; j < n; ++j)
                q.x[j] = rng.uniform(config.x_axes[j].lo, config.x_axes[j].hi);
            for (size_t j = 0; j < n; ++j)
                q.d[j] = rng.uniform(config.d_axes[j].lo, config.d_axes[j].hi);

            complex w0 = psi0(q) * start_volume;
            real action = 0.0;
            for (int i = 0; i < config.n_steps; ++i) {
                real den = dot(q.x, q.d);
                if (den == 0.0)
                    throw Error(Errc::zero_denominator,
                                "evolve_via_path_integral: x.D = 0 on path");
                vecN r = model.rates ? model.rates(i * config.ds, q) : q.r;
                require(r.size() == n, Errc::dimension_mismatch,
                        "evolve_via_path_integral: rate field size mismatch");
                PathIncrement inc = sample_constrained_step(q, model.metrics, config.ds, rng);
                real drift = 0.0;
                for (size_t j = 0; j < n; ++j)
                    drift += q.x[j] * (inc.dd[j] / config.ds + r[j] * q.d[j]);
                action += drift / den * config.ds;
                for (size_t j = 0; j < n; ++j) {
                    q.x[j] += inc.dx[j];
                    q.d[j] += inc.dd[j];
                    q.r[j] += inc.dr[j];
                }
                q.t += config.ds;
            }

            std::vector<real> coords(2 * n);
            for (size_t j = 0; j < n; ++j) coords[j] = q.x[j];
            for (size_t j = 0; j < n; ++j) coords[n + j] = q.d[j];
            complex w = w0 * std::polar(1.0, action);
            if (!std::isfinite(w.real()) || !std::isfinite(w.imag()))
                throw Error(Errc::numeric_failure,
                            "evolve_via_path_integral: non-finite contribution");
            bin_of[p] = grid.locate(coords.data());
            wr[p] = w.real();
            wi[p] = w.imag();
        } catch (const Error& e) {
            std::lock_guard<std::mutex> lock(err_mutex);
            if (ok.exchange(false)) {
                err_code = e.code();
                err_msg = e.what();
            }
        } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(err_mutex);
            if (ok.exchange(false)) {
                err_code = Errc::evaluation_failure;
                err_msg = std::string("evolve_via_path_integral: ") + e.what();
            }
        }
    }
    if (!ok.load()) throw Error(err_code, err_msg);

    // Deterministic accumulation: bucket contributions per bin in path order,
    // then tree-reduce each bucket.
    TerminalField field;
    field.axes = grid.axes;
    field.n_paths = n_paths;
    field.bin_volume = bin_volume;
    const size_t nb = static_cast<size_t>(grid.total);
    field.psi.assign(nb, complex{0.0, 0.0});
    field.se_re.assign(nb, 0.0);
    field.se_im.assign(nb, 0.0);
    field.n_effective.assign(nb, 0);
    field.m2_rr.assign(nb, 0.0);
    field.m2_ii.assign(nb, 0.0);
    field.m2_ri.assign(nb, 0.0);

    std::vector<int> count(nb, 0);
    for (int p = 0; p < n_paths; ++p)
        if (bin_of[p] >= 0) ++count[static_cast<size_t>(bin_of[p])];
    std::vector<size_t> offset(nb + 1, 0);
    for (size_t b = 0; b < nb; ++b) offset[b + 1] = offset[b] + static_cast<size_t>(count[b]);
    std::vector<real> bre(offset[nb]), bim(offset[nb]);
    std::vector<size_t> fill(offset.begin(), offset.end() - 1);
    for (int p = 0; p < n_paths; ++p) {
        if (bin_of[p] < 0) continue;
        size_t pos = fill[static_cast<size_t>(bin_of[p])]++;
        bre[pos] = wr[p];
        bim[pos] = wi[p];
    }

    const real np = static_cast<real>(n_paths);
    std::vector<real> scratch;
    for (size_t b = 0; b < nb; ++b) {
        const size_t beg = offset[b], end = offset[b + 1];
        const size_t m = end - beg;
        field.n_effective[b] = static_cast<int>(m);
        if (m == 0) continue;
        auto reduce = [&](auto&& f) {
            scratch.resize(m);
            for (size_t k = 0; k < m; ++k) scratch[k] = f(bre[beg + k], bim[beg + k]);
            return pairwise_sum(scratch);
        };
        real s_re = reduce([](real a, real) { return a; });
        real s_im = reduce([](real, real b2) { return b2; });
        field.m2_rr[b] = reduce([](real a, real) { return a * a; });
        field.m2_ii[b] = reduce([](real, real b2) { return b2 * b2; });
        field.m2_ri[b] = reduce([](real a, real b2) { return a * b2; });
        field.psi[b] = complex{s_re, s_im} / (np * bin_volume);
        real mean_re = s_re / np, mean_im = s_im / np;
        real var_re = std::max(0.0, field.m2_rr[b] / np - mean_re * mean_re);
        real var_im = std::max(0.0, field.m2_ii[b] / np - mean_im * mean_im);
        field.se_re[b] = std::sqrt(var_re / np) / bin_volume;
        field.se_im[b] = std::sqrt(var_im / np) / bin_volume;
    }
    return field;
}

}  // namespace qmkt

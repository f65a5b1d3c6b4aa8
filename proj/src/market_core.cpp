#include "qmarket/market_core.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

namespace qmkt {

namespace {

// x.(r*D): deflator-weighted rate mass, shared by several formulas.
real weighted_rate_sum(const vecN& x, const vecN& d, const vecN& r) {
    real s = 0.0;
    for (size_t j = 0; j < x.size(); ++j) s += x[j] * d[j] * r[j];
    return s;
}

}  // namespace

real portfolio_short_rate(const vecN& x, const vecN& d, const vecN& r) {
    real denom = dot(x, d);
    if (denom == 0.0) throw Error(Errc::zero_denominator, "portfolio_short_rate: x.D = 0");
    return weighted_rate_sum(x, d, r) / denom;
}

real lagrangian(const MarketPoint& q, const Velocity& q_dot) {
    real denom = dot(q.x, q.d);
    if (denom == 0.0) throw Error(Errc::zero_denominator, "lagrangian: x.D = 0");
    real num = dot(q.x, q_dot.d_dot) + weighted_rate_sum(q.x, q.d, q.r);
    return norm(q_dot.x_dot) * num / denom;
}

real self_financing_residual(const MarketPoint& q, const Velocity& q_dot) {
    return dot(q_dot.x_dot, q.d);
}

Momentum legendre_momenta(const MarketPoint& q, const Velocity& q_dot) {
    real denom = dot(q.x, q.d);
    if (denom == 0.0) throw Error(Errc::zero_denominator, "legendre_momenta: x.D = 0");
    real speed = norm(q_dot.x_dot);
    if (speed == 0.0) throw Error(Errc::zero_velocity, "legendre_momenta: |x'| = 0");
    real coef = (dot(q.x, q_dot.d_dot) + weighted_rate_sum(q.x, q.d, q.r)) / denom;

    Momentum p;
    int n = static_cast<int>(q.x.size());
    p.p_x.resize(n);
    p.p_d.resize(n);
    p.p_r.assign(n, 0.0);
    for (int j = 0; j < n; ++j) {
        p.p_x[j] = coef * q_dot.x_dot[j] / speed;
        p.p_d[j] = speed / denom * q.x[j];
    }
    return p;
}

real hamilton_function(const Momentum& p, const MarketPoint& q) {
    real nx2 = norm2(q.x);
    if (nx2 == 0.0) throw Error(Errc::zero_nominal_vector, "hamilton_function: |x| = 0");
    real bracket = dot(q.x, q.d) * norm(p.p_x) - weighted_rate_sum(q.x, q.d, q.r);
    return dot(q.x, p.p_d) / nx2 * bracket;
}

// --- curvature ---------------------------------------------------------------

vecN curvature_vector(const ScalarField& dlogD_x, const ScalarField& r_x, real t, const vecN& x,
                      real g, const vecN& h_fd) {
    int n = static_cast<int>(x.size());
    if (static_cast<int>(h_fd.size()) != n)
        throw Error(Errc::dimension_mismatch, "curvature_vector: h_fd size mismatch");
    if (g == 0.0) return zeros(n);

    auto bracket = [&](const vecN& y) -> real {
        real v;
        try {
            v = dlogD_x(t, y) + r_x(t, y);
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            throw Error(Errc::evaluation_failure, std::string("curvature field failed: ") + e.what());
        }
        if (!std::isfinite(v))
            throw Error(Errc::evaluation_failure, "curvature field returned non-finite value");
        return v;
    };

    vecN out(n);
    vecN y = x;
    for (int j = 0; j < n; ++j) {
        real h = h_fd[j];
        if (!(h > 0.0)) throw Error(Errc::domain_error, "curvature_vector: h_fd must be positive");
        y[j] = x[j] + h;
        real up = bracket(y);
        y[j] = x[j] - h;
        real dn = bracket(y);
        y[j] = x[j];
        out[j] = g * (up - dn) / (2.0 * h);
    }
    return out;
}

// --- SDE simulation ------------------------------------------------------------

MarketPoint PathEnsemble::point(int p, int i) const {
    MarketPoint q;
    q.t = grid.time(i);
    q.x.resize(n_assets);
    q.d.resize(n_assets);
    q.r.resize(n_assets);
    for (int j = 0; j < n_assets; ++j) {
        q.x[j] = x(p, i, j);
        q.d[j] = d(p, i, j);
        q.r[j] = r(p, i, j);
    }
    return q;
}

namespace {

// Advance one full path, writing every grid point into its slots.
// Consumes only stream (seed, p); returns false on non-finite state.
bool run_one_path(const SdeModel& model, const InitialSpec& initial, const TimeGrid& grid,
                  uint64_t seed, int p, int n, real* slot) {
    RngStream rng(seed, static_cast<uint64_t>(p));
    int stride = 3 * n;

    MarketPoint q;
    q.x = initial.point.x;
    q.d = initial.point.d;
    q.r = initial.point.r;
    q.t = grid.t0;
    auto draw_block = [&](vecN& v, const std::vector<std::pair<real, real>>& range) {
        if (range.empty()) return;
        v.resize(n);
        for (int j = 0; j < n; ++j) v[j] = rng.uniform(range[j].first, range[j].second);
    };
    draw_block(q.x, initial.x_range);
    draw_block(q.d, initial.d_range);
    draw_block(q.r, initial.r_range);

    vecN bx(n), bd(n), br(n);
    int k = model.k_noise;
    vecN sx(static_cast<size_t>(n) * k), sd(static_cast<size_t>(n) * k),
        sr(static_cast<size_t>(n) * k);
    vecN z(k);
    real sqh = std::sqrt(grid.h);

    auto store = [&](int i) {
        for (int j = 0; j < n; ++j) {
            slot[static_cast<size_t>(i) * stride + j] = q.x[j];
            slot[static_cast<size_t>(i) * stride + n + j] = q.d[j];
            slot[static_cast<size_t>(i) * stride + 2 * n + j] = q.r[j];
        }
    };
    store(0);

    for (int i = 0; i < grid.n_steps; ++i) {
        real t = grid.time(i);
        q.t = t;
        std::fill(bx.begin(), bx.end(), 0.0);
        std::fill(bd.begin(), bd.end(), 0.0);
        std::fill(br.begin(), br.end(), 0.0);
        if (model.drift_x) model.drift_x(t, q, bx);
        if (model.drift_d) model.drift_d(t, q, bd);
        if (model.drift_r) model.drift_r(t, q, br);
        if (k > 0) {
            std::fill(sx.begin(), sx.end(), 0.0);
            std::fill(sd.begin(), sd.end(), 0.0);
            std::fill(sr.begin(), sr.end(), 0.0);
            if (model.sigma_x) model.sigma_x(q, sx);
            if (model.sigma_d) model.sigma_d(q, sd);
            if (model.sigma_r) model.sigma_r(q, sr);
            for (int m = 0; m < k; ++m) z[m] = rng.normal();
        }
        for (int j = 0; j < n; ++j) {
            real dx = bx[j] * grid.h, dd = bd[j] * grid.h, dr = br[j] * grid.h;
            for (int m = 0; m < k; ++m) {
                dx += sx[static_cast<size_t>(j) * k + m] * z[m] * sqh;
                dd += sd[static_cast<size_t>(j) * k + m] * z[m] * sqh;
                dr += sr[static_cast<size_t>(j) * k + m] * z[m] * sqh;
            }
            q.x[j] += dx;
            q.d[j] += dd;
            q.r[j] += dr;
            if (!std::isfinite(q.x[j]) || !std::isfinite(q.d[j]) || !std::isfinite(q.r[j]))
                return false;
        }
        store(i + 1);
    }
    return true;
}

}  // namespace

PathEnsemble simulate_sde(const SdeModel& model, const InitialSpec& initial, const TimeGrid& grid,
                          int n_paths, uint64_t seed, Exec exec) {
    if (n_paths < 1) throw Error(Errc::domain_error, "simulate_sde: n_paths must be >= 1");
    if (!(grid.h > 0.0)) throw Error(Errc::domain_error, "simulate_sde: grid step must be > 0");
    int n = model.n_assets;
    if (n < 1) throw Error(Errc::domain_error, "simulate_sde: model needs n_assets >= 1");
    auto check_range = [&](const std::vector<std::pair<real, real>>& range, const char* name) {
        if (!range.empty() && static_cast<int>(range.size()) != n)
            throw Error(Errc::dimension_mismatch,
                        std::string("simulate_sde: ") + name + " range size mismatch");
    };
    check_range(initial.x_range, "x");
    check_range(initial.d_range, "d");
    check_range(initial.r_range, "r");
    if (initial.x_range.empty() && static_cast<int>(initial.point.x.size()) != n)
        throw Error(Errc::dimension_mismatch, "simulate_sde: initial point x size mismatch");
    if (initial.d_range.empty() && static_cast<int>(initial.point.d.size()) != n)
        throw Error(Errc::dimension_mismatch, "simulate_sde: initial point d size mismatch");
    if (initial.r_range.empty() && static_cast<int>(initial.point.r.size()) != n)
        throw Error(Errc::dimension_mismatch, "simulate_sde: initial point r size mismatch");

    PathEnsemble ens;
    ens.grid = grid;
    ens.n_assets = n;
    ens.n_paths = n_paths;
    ens.seed = seed;
    ens.provenance = model.descriptor;
    size_t per_path = static_cast<size_t>(grid.n_points()) * 3 * n;
    ens.data.assign(static_cast<size_t>(n_paths) * per_path, 0.0);

    std::atomic<bool> ok{true};
    if (exec == Exec::parallel) {
#pragma omp parallel for schedule(static)
        for (int p = 0; p < n_paths; ++p) {
            if (!ok.load(std::memory_order_relaxed)) continue;
            if (!run_one_path(model, initial, grid, seed, p, n, ens.data.data() + p * per_path))
                ok.store(false, std::memory_order_relaxed);
        }
    } else {
        for (int p = 0; p < n_paths && ok; ++p)
            if (!run_one_path(model, initial, grid, seed, p, n, ens.data.data() + p * per_path))
                ok = false;
    }
    if (!ok)
        throw Error(Errc::numeric_failure, "simulate_sde: path left the representable range");
    return ens;
}

// --- Nelson derivatives ---------------------------------------------------------

namespace {

int locate_grid_index(const TimeGrid& grid, real t) {
    real pos = (t - grid.t0) / grid.h;
    int i = static_cast<int>(std::lround(pos));
    if (i < 0 || i > grid.n_steps || std::abs(grid.time(i) - t) > 1e-9 * (1.0 + std::abs(t)))
        throw Error(Errc::out_of_domain, "time does not lie on the ensemble grid");
    return i;
}

int block_offset(CoordBlock block, int n) {
    switch (block) {
        case CoordBlock::x: return 0;
        case CoordBlock::d: return n;
        case CoordBlock::r: return 2 * n;
    }
    return 0;
}

}  // namespace

NelsonResult nelson_derivative(const PathEnsemble& ensemble, real t, NelsonKind kind,
                               const BinSpec& conditioning, CoordBlock deriv_block) {
    if (ensemble.n_paths < 1)
        throw Error(Errc::insufficient_paths, "nelson_derivative: empty ensemble");
    if (conditioning.n_bins < 1)
        throw Error(Errc::domain_error, "nelson_derivative: need at least one bin");
    int lag = conditioning.lag;
    if (lag < 1) throw Error(Errc::domain_error, "nelson_derivative: lag must be >= 1");

    const TimeGrid& grid = ensemble.grid;
    int ti = locate_grid_index(grid, t);
    bool need_fwd = kind != NelsonKind::backward;
    bool need_bwd = kind != NelsonKind::forward;
    if (need_fwd && ti + lag > grid.n_steps)
        throw Error(Errc::out_of_domain, "nelson_derivative: forward step leaves the grid");
    if (need_bwd && ti - lag < 0)
        throw Error(Errc::out_of_domain, "nelson_derivative: backward step leaves the grid");

    int n = ensemble.n_assets;
    int cond_c = block_offset(conditioning.block, n) + conditioning.component;
    int der_off = block_offset(deriv_block, n);

    real lo = conditioning.lo, hi = conditioning.hi;
    bool auto_range = !(lo < hi);
    if (auto_range) {
        lo = ensemble.at(0, ti, cond_c);
        hi = lo;
        for (int p = 1; p < ensemble.n_paths; ++p) {
            real v = ensemble.at(p, ti, cond_c);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (!(lo < hi)) {  // degenerate: all paths share the value
            lo -= 0.5;
            hi += 0.5;
        }
    }
    int nb = conditioning.n_bins;
    real width = (hi - lo) / nb;

    std::vector<int> count(nb, 0);
    std::vector<vecN> sum_f(nb, zeros(n)), sum_b(nb, zeros(n));
    real quot_h = lag * grid.h;

    for (int p = 0; p < ensemble.n_paths; ++p) {
        real v = ensemble.at(p, ti, cond_c);
        if (v < lo || v > hi) continue;
        int b = std::min(nb - 1, static_cast<int>((v - lo) / width));
        ++count[b];
        for (int j = 0; j < n; ++j) {
            int c = der_off + j;
            if (need_fwd)
                sum_f[b][j] += (ensemble.at(p, ti + lag, c) - ensemble.at(p, ti, c)) / quot_h;
            if (need_bwd)
                sum_b[b][j] += (ensemble.at(p, ti, c) - ensemble.at(p, ti - lag, c)) / quot_h;
        }
    }

    NelsonResult res;
    res.deriv_block = deriv_block;
    res.bin_width = width;
    res.bins.resize(nb);
    for (int b = 0; b < nb; ++b) {
        NelsonBin& bin = res.bins[b];
        bin.center = lo + (b + 0.5) * width;
        bin.count = count[b];
        bin.empty = count[b] == 0;
        bin.deriv = zeros(n);
        if (bin.empty) continue;
        for (int j = 0; j < n; ++j) {
            real f = sum_f[b][j] / count[b];
            real bk = sum_b[b][j] / count[b];
            switch (kind) {
                case NelsonKind::forward: bin.deriv[j] = f; break;
                case NelsonKind::backward: bin.deriv[j] = bk; break;
                case NelsonKind::mean: bin.deriv[j] = (f + bk) / 2.0; break;
            }
        }
    }
    return res;
}

// --- arbitrage action -------------------------------------------------------------

ActionResult arbitrage_action(const DiscretePath& path, const vecN& beta, real sf_rel_tol) {
    const TimeGrid& grid = path.grid;
    int np = grid.n_points();
    if (np < 2 || static_cast<int>(path.points.size()) != np)
        throw Error(Errc::domain_error, "arbitrage_action: path must carry the full grid");
    if (static_cast<int>(beta.size()) != np)
        throw Error(Errc::dimension_mismatch, "arbitrage_action: beta must match the grid");
    for (real b : beta)
        if (!(b > 0.0)) throw Error(Errc::domain_error, "arbitrage_action: beta must be positive");
    if (!(grid.h > 0.0)) throw Error(Errc::domain_error, "arbitrage_action: grid step must be > 0");

    int n = static_cast<int>(path.points[0].x.size());
    real h = grid.h;

    // Per-step increments feed both the interior quotients and the realized
    // quadratic covariation.
    auto dstep = [&](int i, int j) { return path.points[i + 1].d[j] - path.points[i].d[j]; };
    auto xstep = [&](int i, int j) { return path.points[i + 1].x[j] - path.points[i].x[j]; };
    auto qcov_step = [&](int i) {
        real s = 0.0;
        for (int j = 0; j < n; ++j) s += xstep(i, j) * dstep(i, j);
        return s;
    };

    ActionResult res;
    real integral = 0.0;
    for (int i = 0; i < np; ++i) {
        const MarketPoint& q = path.points[i];
        real denom = dot(q.x, q.d);
        if (denom == 0.0) throw Error(Errc::zero_denominator, "arbitrage_action: x.D = 0 on path");

        real drift_term = 0.0;  // x . D'  via symmetric quotient (one-sided at ends)
        real qv = 0.0;          // realized covariation rate at this node
        if (i == 0) {
            for (int j = 0; j < n; ++j) drift_term += q.x[j] * dstep(0, j) / h;
            qv = qcov_step(0) / h;
        } else if (i == np - 1) {
            for (int j = 0; j < n; ++j) drift_term += q.x[j] * dstep(i - 1, j) / h;
            qv = qcov_step(i - 1) / h;
        } else {
            for (int j = 0; j < n; ++j)
                drift_term += q.x[j] * (path.points[i + 1].d[j] - path.points[i - 1].d[j]) / (2.0 * h);
            qv = (qcov_step(i - 1) + qcov_step(i)) / (2.0 * h);
        }
        real rate_term = weighted_rate_sum(q.x, q.d, q.r);
        real f = (drift_term + rate_term - 0.5 * qv) / denom;
        integral += (i == 0 || i == np - 1) ? 0.5 * f : f;
    }
    res.value = h * integral + std::log(beta[np - 1] / beta[0]);

    // Self-financing warning channel: x'.D with forward quotients.
    res.self_financing = true;
    for (int i = 0; i + 1 < np; ++i) {
        real resid = 0.0, xv = 0.0;
        for (int j = 0; j < n; ++j) {
            real xs = xstep(i, j) / h;
            resid += xs * path.points[i].d[j];
            xv += xs * xs;
        }
        real bound = sf_rel_tol * std::sqrt(xv) * norm(path.points[i].d);
        res.max_self_financing_residual = std::max(res.max_self_financing_residual, std::abs(resid));
        if (std::abs(resid) > bound) res.self_financing = false;
    }
    return res;
}

// --- curvature flatness over an ensemble -------------------------------------------

CurvatureTestResult zero_curvature_test(const PathEnsemble& ensemble,
                                        const std::vector<vecN>& sample_xs, real tol, vecN h_fd,
                                        real g) {
    if (ensemble.n_paths < 1)
        throw Error(Errc::insufficient_paths, "zero_curvature_test: empty ensemble");
    const TimeGrid& grid = ensemble.grid;
    if (grid.n_steps < 2)
        throw Error(Errc::insufficient_paths,
                    "zero_curvature_test: grid too short for symmetric quotients");
    int n = ensemble.n_assets;

    // Ensemble-mean fields entering the curvature bracket.
    ScalarField dlogD = [&ensemble, n](real t, const vecN& x) {
        const TimeGrid& grd = ensemble.grid;
        int i = locate_grid_index(grd, t);
        int a = std::max(0, i - 1), b = std::min(grd.n_steps, i + 1);
        real span = (b - a) * grd.h;
        real acc = 0.0;
        for (int p = 0; p < ensemble.n_paths; ++p) {
            real da = 0.0, db = 0.0;
            for (int j = 0; j < n; ++j) {
                da += x[j] * ensemble.d(p, a, j);
                db += x[j] * ensemble.d(p, b, j);
            }
            acc += (std::log(db) - std::log(da)) / span;
        }
        return acc / ensemble.n_paths;
    };
    ScalarField r_of_x = [&ensemble, n](real t, const vecN& x) {
        int i = locate_grid_index(ensemble.grid, t);
        real acc = 0.0;
        for (int p = 0; p < ensemble.n_paths; ++p) {
            real num = 0.0, den = 0.0;
            for (int j = 0; j < n; ++j) {
                real xd = x[j] * ensemble.d(p, i, j);
                den += xd;
                num += xd * ensemble.r(p, i, j);
            }
            if (den == 0.0) throw Error(Errc::zero_denominator, "zero_curvature_test: x.D = 0");
            acc += num / den;
        }
        return acc / ensemble.n_paths;
    };

    CurvatureTestResult out;
    for (const vecN& x : sample_xs) {
        vecN steps = h_fd;
        if (steps.empty()) {
            steps.resize(x.size());
            for (size_t j = 0; j < x.size(); ++j) steps[j] = 1e-4 * std::max(1.0, std::abs(x[j]));
        }
        for (int i = 1; i < grid.n_steps; ++i) {
            vecN curv = curvature_vector(dlogD, r_of_x, grid.time(i), x, g, steps);
            for (real c : curv) out.max_residual = std::max(out.max_residual, std::abs(c));
        }
    }
    out.zero = out.max_residual <= tol;
    return out;
}

}  // namespace qmkt

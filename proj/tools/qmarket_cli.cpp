// Command-line driver: reproducible spectrum / evolution / bubble /
// path-integral / curvature runs from a flat config file, with CSV + JSON
// outputs, a per-run manifest, and a fixed exit-code contract
// (0 success, 2 config, 3 convergence, 4 runtime numeric failure).

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>
#include <json.hpp>

#include "qmarket/bubbles.hpp"
#include "qmarket/evolution.hpp"
#include "qmarket/feynman.hpp"
#include "qmarket/io.hpp"
#include "qmarket/market_core.hpp"
#include "qmarket/rng.hpp"
#include "qmarket/spectral.hpp"
#include "qmarket/types.hpp"

namespace {

using namespace qmkt;

constexpr const char* kVersion = "1.0.0";

struct Flags {
    std::string config_path;
    std::string out_dir;
    uint64_t seed = 0;
    bool seed_set = false;
    double tol = 0.0;
    bool tol_set = false;
    int threads = 0;
};

void fail_config(const std::string& msg) { throw Error(Errc::config_error, msg); }

// --- config -> domain objects -------------------------------------------------

MarketDomain domain_from(const RunConfig& cfg) {
    MarketDomain dom;
    dom.n_assets = static_cast<int>(cfg.get_int("domain.n"));
    if (dom.n_assets < 1) fail_config("domain.n: must be a positive asset count");
    dom.x_bounds = cfg.get_vec("domain.a", vecN(dom.n_assets, 1.0));
    dom.d_bounds = cfg.get_vec("domain.b", vecN(dom.n_assets, 1.0));
    vecN r_lo = cfg.get_vec("domain.r_lo", vecN(dom.n_assets, 0.0));
    vecN r_hi = cfg.get_vec("domain.r_hi", vecN(dom.n_assets, 0.0));
    if (r_lo.size() != static_cast<size_t>(dom.n_assets) || r_lo.size() != r_hi.size())
        fail_config("domain.r_lo / domain.r_hi: need one entry per asset");
    dom.r_box.clear();
    for (size_t j = 0; j < r_lo.size(); ++j) dom.r_box.emplace_back(r_lo[j], r_hi[j]);
    try {
        dom.validate();
    } catch (const Error& e) {
        fail_config(std::string("domain.*: ") + e.what());
    }
    return dom;
}

TruncationSpec trunc_from(const RunConfig& cfg) {
    TruncationSpec t;
    t.i_max = static_cast<int>(cfg.get_int("trunc.i_max", 3));
    t.j_max = static_cast<int>(cfg.get_int("trunc.j_max", 3));
    t.max_indices = static_cast<int>(cfg.get_int("trunc.max_indices", 5000));
    if (t.i_max < 1 || t.j_max < 0) fail_config("trunc.i_max / trunc.j_max: out of range");
    return t;
}

QuadratureSpec quad_from(const RunConfig& cfg) {
    QuadratureSpec q;
    q.order = static_cast<int>(cfg.get_int("quad.order", q.order));
    q.min_levels = static_cast<int>(cfg.get_int("quad.min_levels", q.min_levels));
    q.max_levels = static_cast<int>(cfg.get_int("quad.max_levels", q.max_levels));
    q.rel_tol = cfg.get_real("quad.rel_tol", q.rel_tol);
    return q;
}

TimeGrid grid_from(const RunConfig& cfg) {
    TimeGrid g;
    g.t0 = cfg.get_real("grid.t0", 0.0);
    g.h = cfg.get_real("grid.h", 0.01);
    g.n_steps = static_cast<int>(cfg.get_int("grid.n_steps", 100));
    if (g.h <= 0.0 || g.n_steps < 1) fail_config("grid.h / grid.n_steps: out of range");
    return g;
}

InitialSpec initial_from(const RunConfig& cfg, int n) {
    InitialSpec init;
    init.point.x = cfg.get_vec("initial.x", vecN(n, 1.0));
    init.point.d = cfg.get_vec("initial.d", vecN(n, 1.0));
    init.point.r = cfg.get_vec("initial.r", vecN(n, 0.0));
    if (cfg.has("initial.d_lo") || cfg.has("initial.d_hi")) {
        vecN lo = cfg.get_vec("initial.d_lo");
        vecN hi = cfg.get_vec("initial.d_hi");
        if (lo.size() != static_cast<size_t>(n) || hi.size() != lo.size())
            fail_config("initial.d_lo / initial.d_hi: need one entry per asset");
        for (size_t j = 0; j < lo.size(); ++j) init.d_range.emplace_back(lo[j], hi[j]);
    }
    return init;
}

std::function<void(const MarketPoint&, vecN&)> diag_sigma(vecN scales) {
    return [scales = std::move(scales)](const MarketPoint&, vecN& out) {
        const size_t n = scales.size();
        for (size_t i = 0; i < n; ++i)
            for (size_t k = 0; k < n; ++k) out[i * n + k] = (i == k) ? scales[i] : 0.0;
    };
}

SdeModel model_from(const RunConfig& cfg, int n) {
    SdeModel model;
    model.n_assets = n;
    model.k_noise = n;
    const std::string kind = cfg.get_string("model.kind", "driftless");
    model.descriptor = kind;
    if (kind == "driftless") {
        model.sigma_d = diag_sigma(cfg.get_vec("model.sigma_d", vecN(n, 0.2)));
    } else if (kind == "ou") {
        vecN kappa = cfg.get_vec("model.kappa", vecN(n, 1.0));
        vecN mu = cfg.get_vec("model.mu", vecN(n, 1.0));
        if (kappa.size() != static_cast<size_t>(n) || mu.size() != kappa.size())
            fail_config("model.kappa / model.mu: need one entry per asset");
        model.drift_d = [kappa, mu](real, const MarketPoint& q, vecN& out) {
            for (size_t j = 0; j < kappa.size(); ++j) out[j] = -kappa[j] * (q.d[j] - mu[j]);
        };
        model.sigma_d = diag_sigma(cfg.get_vec("model.sigma_d", vecN(n, 0.2)));
    } else if (kind == "equal_drift" || kind == "distinct_drift") {
        vecN mu;
        if (kind == "equal_drift")
            mu.assign(n, cfg.get_real("model.rate", 0.05));
        else
            mu = cfg.get_vec("model.mu");
        if (mu.size() != static_cast<size_t>(n)) fail_config("model.mu: one entry per asset");
        model.drift_d = [mu](real, const MarketPoint& q, vecN& out) {
            for (size_t j = 0; j < mu.size(); ++j) out[j] = mu[j] * q.d[j];
        };
        vecN vol = cfg.get_vec("model.sigma_d", vecN(n, 0.0));
        if (norm(vol) > 0.0) model.sigma_d = diag_sigma(vol);
    } else if (kind == "gbm") {
        vecN mu = cfg.get_vec("model.mu", vecN(n, 0.0));
        vecN vol = cfg.get_vec("model.vol", vecN(n, 0.2));
        if (mu.size() != static_cast<size_t>(n) || vol.size() != mu.size())
            fail_config("model.mu / model.vol: need one entry per asset");
        model.drift_d = [mu](real, const MarketPoint& q, vecN& out) {
            for (size_t j = 0; j < mu.size(); ++j) out[j] = mu[j] * q.d[j];
        };
        model.sigma_d = [vol](const MarketPoint& q, vecN& out) {
            const size_t n2 = vol.size();
            for (size_t i = 0; i < n2; ++i)
                for (size_t k = 0; k < n2; ++k) out[i * n2 + k] = (i == k) ? vol[i] * q.d[i] : 0.0;
        };
    } else {
        fail_config("model.kind: unknown model '" + kind + "'");
    }
    return model;
}

/// Synthetic two-point ensemble whose terminal deflators are uniform draws —
/// the analytic benchmark law for bubble statistics.
PathEnsemble uniform_terminal_ensemble(const RunConfig& cfg, int n, int n_paths, uint64_t seed) {
    vecN lo = cfg.get_vec("model.lo", vecN(n, 0.0));
    vecN hi = cfg.get_vec("model.hi", vecN(n, 1.0));
    if (lo.size() != static_cast<size_t>(n) || hi.size() != lo.size())
        fail_config("model.lo / model.hi: need one entry per asset");
    InitialSpec init = initial_from(cfg, n);
    PathEnsemble ens;
    ens.grid = TimeGrid{0.0, cfg.get_real("bubble.tau", 1.0), 1};
    ens.n_assets = n;
    ens.n_paths = n_paths;
    ens.seed = seed;
    ens.provenance = "uniform_terminal";
    ens.data.assign(static_cast<size_t>(n_paths) * 2 * 3 * n, 0.0);
    for (int p = 0; p < n_paths; ++p) {
        RngStream rng(seed, static_cast<uint64_t>(p));
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < n; ++j) {
                ens.data[(static_cast<size_t>(p) * 2 + i) * 3 * n + j] = init.point.x[j];
                ens.data[(static_cast<size_t>(p) * 2 + i) * 3 * n + 2 * n + j] = init.point.r[j];
            }
        for (int j = 0; j < n; ++j)
            ens.data[(static_cast<size_t>(p) * 2 + 0) * 3 * n + n + j] = init.point.d[j];
        for (int j = 0; j < n; ++j)
            ens.data[(static_cast<size_t>(p) * 2 + 1) * 3 * n + n + j] =
                rng.uniform(lo[j], hi[j]);
    }
    return ens;
}

SpectralState state_from(const RunConfig& cfg, const MarketDomain& dom,
                         const TruncationSpec& trunc) {
    const std::string kind = cfg.get_string("state.kind", "basis");
    vecN r0 = cfg.get_vec("state.r", vecN(dom.n_assets, 0.0));
    RMarginal marg = RMarginal::dirac_at(r0);
    if (cfg.get_string("state.r_kind", "dirac") == "uniform") {
        std::vector<std::pair<real, real>> box;
        for (const auto& [lo, hi] : dom.r_box) box.emplace_back(lo, hi);
        marg = RMarginal::uniform_box(box);
    }
    if (kind == "basis") {
        std::vector<int> I = cfg.get_int_vec("state.i", std::vector<int>(dom.n_assets, 1));
        std::vector<int> J = cfg.get_int_vec("state.j", std::vector<int>(dom.n_assets, 1));
        return make_basis_state(dom, trunc, I, J, marg);
    }
    if (kind == "wavepacket") {
        MarketPoint center;
        center.x = cfg.get_vec("state.center_x", vecN(dom.n_assets, 0.5));
        center.d = cfg.get_vec("state.center_d", vecN(dom.n_assets, 0.5));
        center.r = r0;
        vecN wx = cfg.get_vec("state.width_x", vecN(dom.n_assets, 0.12));
        vecN wd = cfg.get_vec("state.width_d", vecN(dom.n_assets, 0.12));
        std::vector<int> cx = cfg.get_int_vec("state.x_carrier", {});
        std::vector<int> cd = cfg.get_int_vec("state.d_carrier", {});
        return from_wavepacket(center, wx, wd, dom, trunc, cx.empty() ? nullptr : &cx,
                               cd.empty() ? nullptr : &cd);
    }
    fail_config("state.kind: unknown state '" + kind + "'");
    return {};
}

// --- output helpers -------------------------------------------------------------

std::string bool_cell(bool v) { return v ? "1" : "0"; }

void stage_manifest_and_commit(OutputSink& sink, const std::string& command,
                               const RunConfig& cfg, uint64_t seed,
                               std::chrono::steady_clock::time_point t0) {
    RunManifest man;
    man.command = command;
    man.artifact_version = kVersion;
    man.config_hash = hex64(cfg.fingerprint());
    man.seed = seed;
    man.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    sink.commit(std::move(man));
}

// --- commands -------------------------------------------------------------------

void run_spectrum(const RunConfig& cfg, OutputSink& sink) {
    MarketDomain dom = domain_from(cfg);
    TruncationSpec trunc = trunc_from(cfg);
    QuadratureSpec quad = quad_from(cfg);
    EigenTable table = EigenTable::build(dom, trunc, quad);
    if (!table.all_converged())
        throw Error(Errc::not_converged, "spectrum: quadrature did not converge at the cutoff");

    const int n = dom.n_assets;
    CsvTable csv;
    for (int l = 1; l <= n; ++l) csv.header.push_back("i_" + std::to_string(l));
    for (int l = 1; l <= n; ++l) csv.header.push_back("j_" + std::to_string(l));
    csv.header.insert(csv.header.end(),
                      {"lambda", "lambda_alpha", "lambda_beta", "quad_error", "levels"});
    const bool with_closed_form = (n == 2);
    if (with_closed_form) {
        csv.header.push_back("closed_form");
        csv.header.push_back("rel_deviation");
    }
    for (size_t k = 0; k < table.indices().size(); ++k) {
        const SpectralIndex& idx = table.indices()[k];
        const EigenData& row = table.rows()[k];
        std::vector<std::string> cells;
        for (int v : idx.I) cells.push_back(std::to_string(v));
        for (int v : idx.J) cells.push_back(std::to_string(v));
        cells.push_back(format_real(row.lambda_ij));
        cells.push_back(format_real(row.lambda_alpha));
        cells.push_back(format_real(row.lambda_beta));
        cells.push_back(format_real(row.quadrature_error));
        cells.push_back(std::to_string(row.levels));
        if (with_closed_form) {
            real cf = lambda_IJ_closed_form_N2(idx.I, idx.J, dom.x_bounds, dom.d_bounds);
            real denom = std::max(std::abs(row.lambda_ij), std::abs(cf));
            real dev = denom == 0.0 ? 0.0 : std::abs(row.lambda_ij - cf) / denom;
            cells.push_back(format_real(cf));
            cells.push_back(format_real(dev));
        }
        csv.add_row(std::move(cells));
    }
    sink.add("eigen_table.csv", csv.to_string());
}

void run_nupbr(const RunConfig& cfg, OutputSink& sink, const Flags& flags) {
    MarketDomain dom = domain_from(cfg);
    TruncationSpec trunc = trunc_from(cfg);
    QuadratureSpec quad = quad_from(cfg);
    real tol = flags.tol_set ? flags.tol : cfg.get_real("nupbr.tol", 1e-8);
    NupbrResult res = nupbr_check(dom, trunc.i_max, trunc.j_max, tol, quad);
    nlohmann::json j;
    j["nupbr"] = res.nupbr;
    j["checked"] = res.checked;
    j["tol"] = tol;
    nlohmann::json viols = nlohmann::json::array();
    for (const auto& v : res.violators)
        viols.push_back({{"i", v.idx.I}, {"j", v.idx.J}, {"lambda", v.lambda_ij}});
    j["violators"] = viols;
    sink.add("nupbr.json", j.dump(2) + "\n");
}

void run_evolve(const RunConfig& cfg, OutputSink& sink) {
    MarketDomain dom = domain_from(cfg);
    TruncationSpec trunc = trunc_from(cfg);
    QuadratureSpec quad = quad_from(cfg);
    EigenTable table = EigenTable::build(dom, trunc, quad);
    SpectralState state = state_from(cfg, dom, trunc);

    const real t_end = cfg.get_real("evolve.t_end", 1.0);
    const int n_times = static_cast<int>(cfg.get_int("evolve.n_times", 11));
    if (n_times < 1) fail_config("evolve.n_times: must be positive");

    const int n = dom.n_assets;
    std::vector<ObservableMatrix> qx, qd;
    for (int l = 0; l < n; ++l) {
        qx.push_back(position_operator_matrix(CoordBlock::x, l, dom, trunc));
        qd.push_back(position_operator_matrix(CoordBlock::d, l, dom, trunc));
    }

    CsvTable series;
    series.header = {"t", "norm"};
    for (int l = 1; l <= n; ++l) series.header.push_back("mean_x_" + std::to_string(l));
    for (int l = 1; l <= n; ++l) series.header.push_back("mean_d_" + std::to_string(l));

    SpectralState last = state;
    for (int k = 0; k < n_times; ++k) {
        real t = n_times == 1 ? t_end : t_end * k / (n_times - 1);
        SpectralState st = evolve(state, t, table);
        std::vector<std::string> cells = {format_real(t), format_real(st.norm())};
        for (int l = 0; l < n; ++l) cells.push_back(format_real(expectation(st, qx[l])));
        for (int l = 0; l < n; ++l) cells.push_back(format_real(expectation(st, qd[l])));
        series.add_row(std::move(cells));
        if (k == n_times - 1) last = std::move(st);
    }
    sink.add("evolve_series.csv", series.to_string());

    CsvTable snap;
    for (int l = 1; l <= n; ++l) snap.header.push_back("i_" + std::to_string(l));
    for (int l = 1; l <= n; ++l) snap.header.push_back("j_" + std::to_string(l));
    snap.header.push_back("re");
    snap.header.push_back("im");
    for (size_t k = 0; k < last.labels.size(); ++k) {
        std::vector<std::string> cells;
        for (int v : last.labels[k].I) cells.push_back(std::to_string(v));
        for (int v : last.labels[k].J) cells.push_back(std::to_string(v));
        cells.push_back(format_real(last.coeffs[k].real()));
        cells.push_back(format_real(last.coeffs[k].imag()));
        snap.add_row(std::move(cells));
    }
    sink.add("state_snapshot.csv", snap.to_string());
}

void run_moments(const RunConfig& cfg, OutputSink& sink) {
    MarketDomain dom = domain_from(cfg);
    TruncationSpec trunc = trunc_from(cfg);
    SpectralState state = state_from(cfg, dom, trunc);
    MeanDynamics md = diagonal_mean_dynamics(state);

    CsvTable csv;
    csv.header = {"block", "component", "mean", "variance"};
    for (int l = 0; l < dom.n_assets; ++l) {
        real var = variance(state, position_operator_matrix(CoordBlock::x, l, dom, trunc));
        csv.add_row({"x", std::to_string(l + 1), format_real(md.x_mean[l]), format_real(var)});
    }
    for (int l = 0; l < dom.n_assets; ++l) {
        real var = variance(state, position_operator_matrix(CoordBlock::d, l, dom, trunc));
        csv.add_row({"d", std::to_string(l + 1), format_real(md.d_mean[l]), format_real(var)});
    }
    for (int l = 0; l < dom.n_assets; ++l)
        csv.add_row({"r", std::to_string(l + 1), format_real(md.r_mean[l]), ""});
    sink.add("moments.csv", csv.to_string());
}

void run_bubble(const RunConfig& cfg, OutputSink& sink, uint64_t seed) {
    MarketDomain dom = domain_from(cfg);
    const int n = dom.n_assets;
    const int n_paths = static_cast<int>(cfg.get_int("bubble.n_paths", 10000));
    if (n_paths < 2) fail_config("bubble.n_paths: need at least two paths");

    PathEnsemble ens;
    const std::string kind = cfg.get_string("model.kind", "uniform_terminal");
    if (kind == "uniform_terminal") {
        ens = uniform_terminal_ensemble(cfg, n, n_paths, seed);
    } else {
        ens = simulate_sde(model_from(cfg, n), initial_from(cfg, n), grid_from(cfg), n_paths,
                           seed, Exec::parallel);
    }
    const real tau = ens.grid.t_end();

    // Terminal deflator sample for the weight and the statistics.
    std::vector<vecN> terminal(static_cast<size_t>(ens.n_paths), zeros(n));
    const int last = ens.grid.n_points() - 1;
    for (int p = 0; p < ens.n_paths; ++p)
        for (int j = 0; j < n; ++j) terminal[static_cast<size_t>(p)][j] = ens.d(p, last, j);

    RadonNikodymWeight phi = RadonNikodymWeight::unit();
    const std::string wkind = cfg.get_string("weight.kind", "unit");
    if (wkind == "proportional") {
        phi.density = [](const vecN& d) {
            real prod = 1.0;
            for (real v : d) prod *= std::max(v, 0.0);
            return prod;
        };
        phi.renormalize(terminal);
    } else if (wkind != "unit") {
        fail_config("weight.kind: unknown weight '" + wkind + "'");
    }

    BubbleStats stats = bubble_discounted_stats(terminal, phi);
    CsvTable bt;
    bt.header = {"asset", "mean", "mean_se", "variance", "variance_se", "empirical_variance",
                 "n_samples"};
    for (int j = 0; j < n; ++j)
        bt.add_row({std::to_string(j + 1), format_real(stats.mean[j]),
                    format_real(stats.mean_se[j]), format_real(stats.variance[j]),
                    format_real(stats.variance_se[j]), format_real(stats.empirical_variance[j]),
                    std::to_string(stats.n_samples)});
    sink.add("bubble_stats.csv", bt.to_string());

    const real r0_const = cfg.get_real("bubble.r0", 0.0);
    RatePath r0 = [r0_const](real) { return r0_const; };
    const int n_claims = static_cast<int>(cfg.get_int("claim.count", 0));
    CsvTable ct;
    ct.header = {"name", "kind", "strike", "asset", "value", "se", "n_paths"};
    for (int c = 1; c <= n_claims; ++c) {
        const std::string pfx = "claim." + std::to_string(c) + ".";
        const std::string ckind = cfg.get_string(pfx + "kind");
        const real strike = cfg.get_real(pfx + "strike", 0.0);
        const int asset = static_cast<int>(cfg.get_int(pfx + "asset", 1)) - 1;
        ClaimSpec claim = make_claim(ckind, strike, asset, tau);
        claim.name = cfg.get_string(pfx + "name", ckind + "_" + std::to_string(c));
        McScalar v = claim_fundamental_value(ens, claim, phi, r0, 0.0);
        ct.add_row({claim.name, ckind, format_real(strike), std::to_string(asset + 1),
                    format_real(v.value), format_real(v.se), std::to_string(v.n_paths)});
    }
    sink.add("claims.csv", ct.to_string());
}

void run_feynman(const RunConfig& cfg, OutputSink& sink, uint64_t seed) {
    const int n = static_cast<int>(cfg.get_int("feynman.n", 2));
    if (n < 1) fail_config("feynman.n: must be a positive asset count");

    PathIntegralConfig pic;
    pic.n_paths = static_cast<int>(cfg.get_int("feynman.n_paths", 10000));
    pic.n_steps = static_cast<int>(cfg.get_int("feynman.n_steps", 50));
    const real t = cfg.get_real("feynman.t", 1.0);
    if (pic.n_steps < 1) fail_config("feynman.n_steps: must be positive");
    pic.ds = t / pic.n_steps;
    pic.seed = seed;
    pic.r_start = cfg.get_vec("feynman.r_start", vecN(n, 0.0));

    auto axes_from = [&](const char* lo_key, const char* hi_key, const char* bins_key,
                         real dlo, real dhi, int dbins) {
        vecN lo = cfg.get_vec(lo_key, vecN(n, dlo));
        vecN hi = cfg.get_vec(hi_key, vecN(n, dhi));
        std::vector<int> bins = cfg.get_int_vec(bins_key, std::vector<int>(n, dbins));
        if (lo.size() != static_cast<size_t>(n) || hi.size() != lo.size() ||
            bins.size() != lo.size())
            fail_config(std::string(lo_key) + ": need one entry per asset");
        std::vector<BinAxis> axes;
        for (int j = 0; j < n; ++j) axes.push_back({lo[j], hi[j], bins[j]});
        return axes;
    };
    pic.x_axes = axes_from("feynman.x_lo", "feynman.x_hi", "feynman.x_bins", 0.0, 1.0, 8);
    pic.d_axes = axes_from("feynman.d_lo", "feynman.d_hi", "feynman.d_bins", 0.5, 1.5, 2);

    PathIntegralModel model;
    model.metrics.sigma_x = cfg.get_vec("feynman.sigma_x", vecN(n, 0.1));
    model.metrics.sigma_d = cfg.get_vec("feynman.sigma_d", vecN(n, 0.0));
    model.metrics.sigma_r = cfg.get_vec("feynman.sigma_r", vecN(n, 0.0));
    if (cfg.has("feynman.rate")) {
        const real rate = cfg.get_real("feynman.rate");
        model.rates = [rate, n](real, const MarketPoint&) { return vecN(n, rate); };
    }

    std::function<complex(const MarketPoint&)> psi0;
    const std::string pk = cfg.get_string("feynman.psi0", "uniform");
    if (pk == "uniform") {
        psi0 = [](const MarketPoint&) { return complex{1.0, 0.0}; };
    } else if (pk == "gaussian") {
        vecN center = cfg.get_vec("feynman.center_x", vecN(n, 0.5));
        vecN width = cfg.get_vec("feynman.width_x", vecN(n, 0.1));
        if (center.size() != static_cast<size_t>(n) || width.size() != center.size())
            fail_config("feynman.center_x / feynman.width_x: need one entry per asset");
        psi0 = [center, width](const MarketPoint& q) {
            real expo = 0.0;
            for (size_t j = 0; j < center.size(); ++j) {
                real z = (q.x[j] - center[j]) / width[j];
                expo -= 0.5 * z * z;
            }
            return complex{std::exp(expo), 0.0};
        };
    } else if (pk == "mode") {
        std::vector<int> mode = cfg.get_int_vec("feynman.mode_i", std::vector<int>(n, 1));
        vecN a = cfg.get_vec("feynman.a", vecN(n, 1.0));
        if (mode.size() != static_cast<size_t>(n) || a.size() != mode.size())
            fail_config("feynman.mode_i / feynman.a: need one entry per asset");
        psi0 = [mode, a](const MarketPoint& q) -> complex {
            real phase = 0.0;
            for (size_t j = 0; j < mode.size(); ++j) {
                if (q.x[j] < 0.0 || q.x[j] > a[j]) return {0.0, 0.0};
                phase -= pi * mode[j] * q.x[j] / a[j];
            }
            return std::polar(1.0, phase);
        };
    } else {
        fail_config("feynman.psi0: unknown initial amplitude '" + pk + "'");
    }

    TerminalField field = evolve_via_path_integral(psi0, t, pic, model);

    CsvTable csv;
    for (int l = 1; l <= n; ++l) csv.header.push_back("x_" + std::to_string(l));
    for (int l = 1; l <= n; ++l) csv.header.push_back("d_" + std::to_string(l));
    csv.header.insert(csv.header.end(), {"re_psi", "im_psi", "abs2", "phase_re", "phase_im",
                                         "stderr", "n_effective"});
    std::vector<int> digit(2 * n, 0);
    for (size_t b = 0; b < field.size(); ++b) {
        std::vector<std::string> cells;
        for (size_t k = 0; k < field.axes.size(); ++k)
            cells.push_back(format_real(field.axes[k].center(digit[k])));
        const complex v = field.psi[b];
        const real mag = std::abs(v);
        cells.push_back(format_real(v.real()));
        cells.push_back(format_real(v.imag()));
        cells.push_back(format_real(std::norm(v)));
        cells.push_back(format_real(mag > 0.0 ? v.real() / mag : 0.0));
        cells.push_back(format_real(mag > 0.0 ? v.imag() / mag : 0.0));
        cells.push_back(format_real(std::hypot(field.se_re[b], field.se_im[b])));
        cells.push_back(std::to_string(field.n_effective[b]));
        csv.add_row(std::move(cells));
        for (size_t k = field.axes.size(); k-- > 0;) {
            if (++digit[k] < field.axes[k].count) break;
            digit[k] = 0;
        }
    }
    sink.add("terminal_field.csv", csv.to_string());
}

void run_curvature(const RunConfig& cfg, OutputSink& sink, uint64_t seed, const Flags& flags) {
    MarketDomain dom = domain_from(cfg);
    const int n = dom.n_assets;
    const int n_paths = static_cast<int>(cfg.get_int("curvature.n_paths", 1000));
    PathEnsemble ens = simulate_sde(model_from(cfg, n), initial_from(cfg, n), grid_from(cfg),
                                    n_paths, seed, Exec::parallel);
    std::vector<vecN> sample_xs;
    if (cfg.has("curvature.sample_x"))
        sample_xs.push_back(cfg.get_vec("curvature.sample_x"));
    else
        sample_xs.push_back(vecN(n, 1.0));
    real tol = flags.tol_set ? flags.tol : cfg.get_real("curvature.tol", 1e-8);
    CurvatureTestResult res = zero_curvature_test(ens, sample_xs, tol);

    CsvTable csv;
    csv.header = {"zero", "max_residual", "tol", "n_paths"};
    csv.add_row({bool_cell(res.zero), format_real(res.max_residual), format_real(tol),
                 std::to_string(n_paths)});
    sink.add("curvature.csv", csv.to_string());
}

void run_simulate(const RunConfig& cfg, OutputSink& sink, uint64_t seed) {
    MarketDomain dom = domain_from(cfg);
    const int n = dom.n_assets;
    const int n_paths = static_cast<int>(cfg.get_int("simulate.n_paths", 1000));
    TimeGrid grid = grid_from(cfg);
    PathEnsemble ens =
        simulate_sde(model_from(cfg, n), initial_from(cfg, n), grid, n_paths, seed,
                     Exec::parallel);

    CsvTable csv;
    csv.header = {"t", "coord", "mean", "sd"};
    const char* blocks[3] = {"x", "d", "r"};
    std::vector<real> vals(static_cast<size_t>(n_paths));
    for (int i = 0; i < grid.n_points(); ++i) {
        for (int b = 0; b < 3; ++b)
            for (int j = 0; j < n; ++j) {
                for (int p = 0; p < n_paths; ++p)
                    vals[static_cast<size_t>(p)] = ens.at(p, i, b * n + j);
                real mean = pairwise_mean(vals);
                std::vector<real> sq(vals.size());
                for (size_t p = 0; p < vals.size(); ++p)
                    sq[p] = (vals[p] - mean) * (vals[p] - mean);
                real sd = n_paths > 1 ? std::sqrt(pairwise_sum(sq) / (n_paths - 1)) : 0.0;
                csv.add_row({format_real(grid.time(i)),
                             std::string(blocks[b]) + std::to_string(j + 1), format_real(mean),
                             format_real(sd)});
            }
    }
    sink.add("ensemble_summary.csv", csv.to_string());
}

int exit_code_for(const Error& e) {
    switch (e.code()) {
        case Errc::config_error:
        case Errc::inconsistent_spec:
        case Errc::unsupported_dimension:
        case Errc::dimension_mismatch:
        case Errc::insufficient_paths:
            return 2;
        case Errc::not_converged:
        case Errc::truncation_too_small:
            return 3;
        default:
            return 4;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Arbitrage-market spectral and Monte-Carlo toolkit"};
    app.require_subcommand(1);

    Flags flags;
    const std::vector<std::string> commands = {"spectrum", "nupbr",   "evolve",    "moments",
                                               "bubble",   "feynman", "curvature", "simulate"};
    for (const std::string& name : commands) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", flags.config_path, "Path to the run configuration file")
            ->required();
        sub->add_option("--seed", flags.seed, "Override the run seed")
            ->each([&flags](const std::string&) { flags.seed_set = true; });
        sub->add_option("--out", flags.out_dir, "Override the output directory");
        sub->add_option("--tol", flags.tol, "Override the command tolerance")
            ->each([&flags](const std::string&) { flags.tol_set = true; });
        sub->add_option("--threads", flags.threads,
                        "Worker thread count (never changes results)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    const std::string command = app.get_subcommands().front()->get_name();

#ifdef _OPENMP
    if (flags.threads > 0) omp_set_num_threads(flags.threads);
#endif

    try {
        RunConfig cfg = RunConfig::from_file(flags.config_path);
        const uint64_t seed = flags.seed_set ? flags.seed : cfg.get_u64("run.seed", 12345);
        if (flags.seed_set) cfg.override_value("run.seed", std::to_string(flags.seed));
        std::string out_dir = !flags.out_dir.empty()
                                  ? flags.out_dir
                                  : cfg.get_string("run.out", command + "_out");
        OutputSink sink(out_dir);
        const auto t0 = std::chrono::steady_clock::now();

        if (command == "spectrum")
            run_spectrum(cfg, sink);
        else if (command == "nupbr")
            run_nupbr(cfg, sink, flags);
        else if (command == "evolve")
            run_evolve(cfg, sink);
        else if (command == "moments")
            run_moments(cfg, sink);
        else if (command == "bubble")
            run_bubble(cfg, sink, seed);
        else if (command == "feynman")
            run_feynman(cfg, sink, seed);
        else if (command == "curvature")
            run_curvature(cfg, sink, seed, flags);
        else if (command == "simulate")
            run_simulate(cfg, sink, seed);

        stage_manifest_and_commit(sink, command, cfg, seed, t0);
        std::cout << "wrote " << sink.dir() << "\n";
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}

// Benchmark: OpenMP path-simulation kernel vs. the serial reference that the
// tests validate against. Also asserts the two produce identical bytes, since
// per-path counter RNG makes the result independent of scheduling.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "qmarket/market_core.hpp"

using namespace qmkt;

namespace {

SdeModel make_ou_model(int n, real kappa, real mu, real vol) {
    SdeModel m;
    m.n_assets = n;
    m.k_noise = n;
    m.descriptor = "ou";
    m.drift_x = [](real, const MarketPoint&, vecN& out) {
        std::fill(out.begin(), out.end(), 0.0);
    };
    m.drift_d = [kappa, mu](real, const MarketPoint& q, vecN& out) {
        for (size_t j = 0; j < q.d.size(); ++j) out[j] = kappa * (mu - q.d[j]);
    };
    m.drift_r = m.drift_x;
    m.sigma_x = [n](const MarketPoint&, vecN& out) {
        std::fill(out.begin(), out.end(), 0.0);
        (void)n;
    };
    m.sigma_d = [n, vol](const MarketPoint&, vecN& out) {
        std::fill(out.begin(), out.end(), 0.0);
        for (int j = 0; j < n; ++j) out[j * n + j] = vol;
    };
    m.sigma_r = m.sigma_x;
    return m;
}

double run_once(const SdeModel& model, const InitialSpec& init, const TimeGrid& grid,
                int n_paths, Exec exec, PathEnsemble* out) {
    auto t0 = std::chrono::steady_clock::now();
    PathEnsemble ens = simulate_sde(model, init, grid, n_paths, 20260817u, exec);
    auto t1 = std::chrono::steady_clock::now();
    if (out) *out = std::move(ens);
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
    int scale = 1;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--scale") == 0 && i + 1 < argc) scale = std::atoi(argv[++i]);
    }
    if (scale < 1) scale = 1;

#ifdef _OPENMP
    std::printf("threads available: %d\n", omp_get_max_threads());
#else
    std::printf("threads available: 1 (compiled without OpenMP)\n");
#endif
    std::printf("%-8s %-8s %-8s %12s %12s %9s  %s\n", "assets", "paths", "steps", "serial_ms",
                "parallel_ms", "speedup", "identical");

    struct Case {
        int n, paths, steps;
    };
    const Case cases[] = {{2, 2000 * scale, 200}, {2, 8000 * scale, 200}, {4, 4000 * scale, 400}};

    bool all_identical = true;
    for (const Case& c : cases) {
        SdeModel model = make_ou_model(c.n, 1.0, 1.0, 0.2);
        InitialSpec init;
        init.point.x.assign(c.n, 1.0);
        init.point.d.assign(c.n, 1.0);
        init.point.r.assign(c.n, 0.0);
        TimeGrid grid{0.0, 1.0 / c.steps, c.steps};

        PathEnsemble warm;
        run_once(model, init, grid, c.paths / 4, Exec::parallel, &warm);  // warm-up

        PathEnsemble es, ep;
        double ms_s = run_once(model, init, grid, c.paths, Exec::serial, &es);
        double ms_p = run_once(model, init, grid, c.paths, Exec::parallel, &ep);
        bool same = es.data.size() == ep.data.size() &&
                    std::memcmp(es.data.data(), ep.data.data(),
                                es.data.size() * sizeof(real)) == 0;
        all_identical = all_identical && same;
        std::printf("%-8d %-8d %-8d %12.2f %12.2f %8.2fx  %s\n", c.n, c.paths, c.steps, ms_s,
                    ms_p, ms_s / ms_p, same ? "yes" : "NO");
    }
    if (!all_identical) {
        std::fprintf(stderr, "serial and parallel kernels disagree\n");
        return 1;
    }
    return 0;
}

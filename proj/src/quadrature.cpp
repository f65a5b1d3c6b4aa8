#include "qmarket/quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>

namespace qmkt {

GaussLegendre::GaussLegendre(int order) {
    if (order < 1) throw Error(Errc::domain_error, "Gauss-Legendre order must be >= 1");
    int n = order;
    nodes_.assign(n, 0.0);
    weights_.assign(n, 0.0);
    // Roots come in +/- pairs; walk the upper half and mirror.
    int half = (n + 1) / 2;
    for (int i = 0; i < half; ++i) {
        // Chebyshev-angle initial guess for the i-th root (descending order).
        double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            // Evaluate P_n(x) and P'_n(x) by the three-term recurrence.
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        // Recompute derivative at the converged node for the weight.
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
            double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        double w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes_[i] = -x;  // ascending order
        nodes_[n - 1 - i] = x;
        weights_[i] = w;
        weights_[n - 1 - i] = w;
    }
}

const GaussLegendre& GaussLegendre::cached(int order) {
    static std::mutex mtx;
    static std::map<int, GaussLegendre> cache;
    std::lock_guard<std::mutex> lock(mtx);
    auto it = cache.find(order);
    if (it == cache.end()) it = cache.emplace(order, GaussLegendre(order)).first;
    return it->second;
}

real integrate_box(const std::function<real(const vecN&)>& f, const Box& box, int order) {
    int dim = static_cast<int>(box.size());
    if (dim == 0) throw Error(Errc::domain_error, "integrate_box: empty box");
    const GaussLegendre& rule = GaussLegendre::cached(order);
    int n = rule.order();

    // Odometer walk over the tensor grid; no recursion, deterministic order.
    std::vector<int> idx(dim, 0);
    vecN point(dim);
    double jac = 1.0;
    for (const auto& [lo, hi] : box) jac *= 0.5 * (hi - lo);

    double sum = 0.0;
    while (true) {
        double w = 1.0;
        for (int a = 0; a < dim; ++a) {
            const auto& [lo, hi] = box[a];
            point[a] = 0.5 * (lo + hi) + 0.5 * (hi - lo) * rule.nodes()[idx[a]];
            w *= rule.weights()[idx[a]];
        }
        sum += w * f(point);
        int a = 0;
        while (a < dim && ++idx[a] == n) idx[a++] = 0;
        if (a == dim) break;
    }
    return jac * sum;
}

std::vector<Box> corner_shell_boxes(const vecN& upper) {
    int dim = static_cast<int>(upper.size());
    std::vector<Box> boxes;
    boxes.reserve((1u << dim) - 1);
    for (unsigned mask = 1; mask < (1u << dim); ++mask) {
        Box box(dim);
        for (int a = 0; a < dim; ++a) {
            double mid = 0.5 * upper[a];
            box[a] = (mask >> a) & 1u ? std::make_pair(mid, upper[a]) : std::make_pair(0.0, mid);
        }
        boxes.push_back(std::move(box));
    }
    return boxes;
}

real integrate_corner_refined(const std::function<real(const vecN&)>& f, const vecN& upper,
                              int order, int levels) {
    if (levels < 0) throw Error(Errc::domain_error, "integrate_corner_refined: levels must be >= 0");
    vecN cur = upper;
    double total = 0.0;
    for (int level = 0; level < levels; ++level) {
        for (const Box& box : corner_shell_boxes(cur)) total += integrate_box(f, box, order);
        for (auto& u : cur) u *= 0.5;
    }
    // Innermost core cube: plain tensor rule, nodes strictly interior.
    Box core(cur.size());
    for (size_t a = 0; a < cur.size(); ++a) core[a] = {0.0, cur[a]};
    total += integrate_box(f, core, order);
    return total;
}

}  // namespace qmkt

#include "ctdc/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "ctdc/error.hpp"

namespace ctdc::optimize {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Pair {
    std::vector<double> s, y;
    double rho;
};

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

class Evaluator {
public:
    explicit Evaluator(const Objective& obj) : obj_(obj) {}

    // f only; +inf when x is infeasible.
    double value(std::span<const double> x, std::span<double> g, bool& have_gradient) const {
        have_gradient = false;
        try {
            double f;
            if (obj_.value_and_gradient) {
                f = obj_.value_and_gradient(x, g);
                have_gradient = true;
            } else {
                f = obj_.value(x);
            }
            return std::isfinite(f) ? f : kInf;
        } catch (const Error&) {
            return kInf;
        }
    }

    void gradient(std::span<const double> x, double f, std::span<double> g) const { obj_.gradient(x, f, g); }

private:
    const Objective& obj_;
};

}  // namespace

Result minimize_bounded(const Objective& objective, std::vector<double> x0, const std::vector<double>& lower,
                        const std::vector<double>& upper, const Options& options) {
    const std::size_t n = x0.size();
    require(lower.size() == n && upper.size() == n, ErrorCode::dimension_mismatch,
            "bounds do not match the parameter vector");
    require(objective.value_and_gradient || (objective.value && objective.gradient),
            ErrorCode::invalid_argument, "objective needs a value and a gradient");
    for (std::size_t i = 0; i < n; ++i) {
        require(lower[i] <= upper[i], ErrorCode::invalid_argument, "empty box");
        x0[i] = std::clamp(x0[i], lower[i], upper[i]);
    }

    const Evaluator eval(objective);
    auto project = [&](std::vector<double>& x) {
        for (std::size_t i = 0; i < n; ++i) x[i] = std::clamp(x[i], lower[i], upper[i]);
    };
    auto projected_gradient = [&](const std::vector<double>& x, const std::vector<double>& g) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::abs(std::clamp(x[i] - g[i], lower[i], upper[i]) - x[i]));
        return m;
    };

    Result res;
    res.x = std::move(x0);
    res.gradient.assign(n, 0.0);
    bool have_g = false;
    res.f = eval.value(res.x, res.gradient, have_g);
    require(std::isfinite(res.f), ErrorCode::numeric, "objective is not finite at the starting point");
    if (!have_g) eval.gradient(res.x, res.f, res.gradient);

    std::deque<Pair> memory;
    std::vector<double> d(n), q(n), alpha(options.memory), xt(n), gt(n);
    std::vector<char> free_var(n);

    for (;;) {
        res.projected_gradient_norm = projected_gradient(res.x, res.gradient);
        if (res.projected_gradient_norm <= options.gtol) {
            res.converged = true;
            res.message = "projected gradient below tolerance";
            break;
        }
        if (res.iterations >= options.max_iterations) {
            res.message = "iteration limit reached";
            break;
        }

        // Variables pinned at a bound with the gradient pushing outward stay fixed.
        for (std::size_t i = 0; i < n; ++i) {
            const double span = std::max(1.0, std::abs(res.x[i]));
            const bool at_lo = res.x[i] <= lower[i] + 1e-12 * span && res.gradient[i] > 0.0;
            const bool at_hi = res.x[i] >= upper[i] - 1e-12 * span && res.gradient[i] < 0.0;
            free_var[i] = !(at_lo || at_hi);
        }

        bool accepted = false;
        for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
            if (attempt == 1) {
                if (memory.empty()) break;
                memory.clear();
            }
            // Two-loop recursion on the free subspace.
            for (std::size_t i = 0; i < n; ++i) q[i] = free_var[i] ? res.gradient[i] : 0.0;
            for (std::size_t m = memory.size(); m-- > 0;) {
                alpha[m] = memory[m].rho * dot(memory[m].s, q);
                for (std::size_t i = 0; i < n; ++i)
                    if (free_var[i]) q[i] -= alpha[m] * memory[m].y[i];
            }
            double scale = 1.0;
            if (!memory.empty()) {
                const auto& last = memory.back();
                scale = dot(last.s, last.y) / dot(last.y, last.y);
            }
            for (std::size_t i = 0; i < n; ++i) q[i] *= scale;
            for (std::size_t m = 0; m < memory.size(); ++m) {
                const double beta = memory[m].rho * dot(memory[m].y, q);
                for (std::size_t i = 0; i < n; ++i)
                    if (free_var[i]) q[i] += (alpha[m] - beta) * memory[m].s[i];
            }
            for (std::size_t i = 0; i < n; ++i) d[i] = free_var[i] ? -q[i] : 0.0;
            if (dot(d, res.gradient) >= 0.0) {
                memory.clear();
                for (std::size_t i = 0; i < n; ++i) d[i] = free_var[i] ? -res.gradient[i] : 0.0;
            }

            double t = 1.0;
            if (memory.empty()) {
                double dmax = 0.0;
                for (double di : d) dmax = std::max(dmax, std::abs(di));
                if (dmax > 1.0) t = 1.0 / dmax;
            }
            for (std::size_t b = 0; b < options.max_backtracks; ++b, t *= 0.5) {
                for (std::size_t i = 0; i < n; ++i) xt[i] = res.x[i] + t * d[i];
                project(xt);
                double decrease = 0.0;
                for (std::size_t i = 0; i < n; ++i) decrease += res.gradient[i] * (xt[i] - res.x[i]);
                if (decrease >= 0.0) continue;
                bool trial_g = false;
                const double ft = eval.value(xt, gt, trial_g);
                if (ft <= res.f + 1e-4 * decrease) {
                    if (!trial_g) eval.gradient(xt, ft, gt);
                    accepted = true;

                    Pair p{std::vector<double>(n), std::vector<double>(n), 0.0};
                    for (std::size_t i = 0; i < n; ++i) {
                        p.s[i] = xt[i] - res.x[i];
                        p.y[i] = gt[i] - res.gradient[i];
                    }
                    const double sy = dot(p.s, p.y);
                    if (sy > 1e-10 * std::sqrt(dot(p.s, p.s) * dot(p.y, p.y))) {
                        p.rho = 1.0 / sy;
                        memory.push_back(std::move(p));
                        if (memory.size() > options.memory) memory.pop_front();
                    }
                    const double f_old = res.f;
                    res.x = xt;
                    res.f = ft;
                    res.gradient = gt;
                    ++res.iterations;
                    if ((f_old - ft) <= options.ftol * std::max({std::abs(f_old), std::abs(ft), 1.0})) {
                        res.projected_gradient_norm = projected_gradient(res.x, res.gradient);
                        res.converged = true;
                        res.message = "relative reduction of f below tolerance";
                        return res;
                    }
                    break;
                }
            }
        }
        if (!accepted) {
            res.message = "line search failed";
            break;
        }
    }
    return res;
}

}  // namespace ctdc::optimize

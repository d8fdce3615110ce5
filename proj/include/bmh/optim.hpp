#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <span>
#include <vector>

namespace bmh {

struct LbfgsConfig {
    int max_iterations = 2000;
    double gradient_tolerance = 1e-5;          // max-norm of the gradient
    double relative_objective_tolerance = 1e-9;
    int stall_iterations = 5;
    int history = 10;
    double armijo_c1 = 1e-4;
    double backtracking_shrink = 0.5;
    int max_line_search_steps = 50;
};

struct LbfgsResult {
    std::vector<double> x;
    double objective = -std::numeric_limits<double>::infinity();
    double gradient_norm = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
    bool nonfinite_abort = false;
    std::vector<double> trace; // objective at each accepted step (ascending)
};

// Limited-memory BFGS with backtracking line search, maximizing f.
// f(x, grad) returns the objective and writes the gradient into grad.
// Non-finite trial values reject the step and shrink it; a persistently
// non-finite neighborhood aborts with nonfinite_abort set.
template <class F>
LbfgsResult lbfgs_maximize(F&& f, std::vector<double> x0, const LbfgsConfig& cfg = {}) {
    const std::size_t n = x0.size();
    LbfgsResult res;
    res.x = std::move(x0);
    std::vector<double> grad(n, 0.0);
    double fx = f(std::span<const double>(res.x), std::span<double>(grad));
    if (!std::isfinite(fx)) {
        res.nonfinite_abort = true;
        res.objective = fx;
        return res;
    }
    res.trace.push_back(fx);

    auto max_norm = [](std::span<const double> v) {
        double m = 0.0;
        for (double x : v) m = std::max(m, std::abs(x));
        return m;
    };
    auto two_norm = [](std::span<const double> v) {
        double s = 0.0;
        for (double x : v) s += x * x;
        return std::sqrt(s);
    };

    struct Pair {
        std::vector<double> s, y;
        double rho;
    };
    std::deque<Pair> hist;

    std::vector<double> dir(n), x_new(n), grad_new(n), alpha_buf;
    int stall = 0;
    int it = 0;
    for (; it < cfg.max_iterations; ++it) {
        res.gradient_norm = max_norm(grad);
        if (res.gradient_norm <= cfg.gradient_tolerance) {
            res.converged = true;
            break;
        }

        // Two-loop recursion on the ascent direction (gradients of f, not -f).
        dir = grad;
        alpha_buf.assign(hist.size(), 0.0);
        for (std::size_t h = hist.size(); h-- > 0;) {
            const Pair& p = hist[h];
            double a = 0.0;
            for (std::size_t i = 0; i < n; ++i) a += p.s[i] * dir[i];
            a *= p.rho;
            alpha_buf[h] = a;
            for (std::size_t i = 0; i < n; ++i) dir[i] -= a * p.y[i];
        }
        if (!hist.empty()) {
            const Pair& last = hist.back();
            double sy = 0.0, yy = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                sy += last.s[i] * last.y[i];
                yy += last.y[i] * last.y[i];
            }
            const double scale = sy / yy;
            for (double& d : dir) d *= scale;
        }
        for (std::size_t h = 0; h < hist.size(); ++h) {
            const Pair& p = hist[h];
            double b = 0.0;
            for (std::size_t i = 0; i < n; ++i) b += p.y[i] * dir[i];
            b *= p.rho;
            const double corr = alpha_buf[h] - b;
            for (std::size_t i = 0; i < n; ++i) dir[i] += corr * p.s[i];
        }

        double slope = 0.0;
        for (std::size_t i = 0; i < n; ++i) slope += dir[i] * grad[i];
        if (!(slope > 0.0)) {
            // Not an ascent direction; fall back to the gradient.
            dir = grad;
            slope = 0.0;
            for (double g : grad) slope += g * g;
        }

        double step = hist.empty() ? std::min(1.0, 1.0 / std::max(1.0, two_norm(grad))) : 1.0;
        bool accepted = false;
        double f_new = fx;
        for (int ls = 0; ls < cfg.max_line_search_steps; ++ls) {
            for (std::size_t i = 0; i < n; ++i) x_new[i] = res.x[i] + step * dir[i];
            f_new = f(std::span<const double>(x_new), std::span<double>(grad_new));
            if (std::isfinite(f_new) && f_new >= fx + cfg.armijo_c1 * step * slope) {
                accepted = true;
                break;
            }
            step *= cfg.backtracking_shrink;
        }
        if (!accepted) {
            // Either the neighborhood is non-finite or we are at numerical
            // resolution; both end the run.
            res.nonfinite_abort = !std::isfinite(f_new);
            break;
        }

        Pair p;
        p.s.resize(n);
        p.y.resize(n);
        double sy = 0.0, ss = 0.0, yy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            p.s[i] = x_new[i] - res.x[i];
            p.y[i] = grad[i] - grad_new[i]; // curvature pair of -f
            sy += p.s[i] * p.y[i];
            ss += p.s[i] * p.s[i];
            yy += p.y[i] * p.y[i];
        }
        if (sy > 1e-12 * std::sqrt(ss * yy)) {
            p.rho = 1.0 / sy;
            hist.push_back(std::move(p));
            if (static_cast<int>(hist.size()) > cfg.history) hist.pop_front();
        }

        const double rel_change = std::abs(f_new - fx) / std::max(1.0, std::abs(fx));
        res.x.swap(x_new);
        grad.swap(grad_new);
        fx = f_new;
        res.trace.push_back(fx);

        if (rel_change <= cfg.relative_objective_tolerance) {
            if (++stall >= cfg.stall_iterations) {
                res.converged = true;
                ++it;
                break;
            }
        } else {
            stall = 0;
        }
    }
    res.iterations = it;
    res.objective = fx;
    res.gradient_norm = max_norm(grad);
    if (res.gradient_norm <= cfg.gradient_tolerance) res.converged = true;
    return res;
}

} // namespace bmh

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace bmh {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double logistic(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw std::invalid_argument("logit requires p in (0,1)");
    }
    return std::log(p) - std::log1p(-p);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

inline double log_sum_exp(std::span<const double> v) {
    if (v.empty()) {
        return kNegInf;
    }
    double m = v[0];
    for (double x : v) {
        m = std::max(m, x);
    }
    if (!std::isfinite(m)) {
        return m;
    }
    double s = 0.0;
    for (double x : v) {
        s += std::exp(x - m);
    }
    return m + std::log(s);
}

// Turns logits into probabilities in place; returns log of the normalizer.
inline double softmax_inplace(std::span<double> v) {
    const double lse = log_sum_exp(v);
    for (double& x : v) {
        x = std::exp(x - lse);
    }
    return lse;
}

// Quantile with linear interpolation between order statistics (fixed rule:
// index h = (n-1)*p, value = v[floor(h)] + frac(h)*(v[floor(h)+1]-v[floor(h)])).
inline double quantile_linear(std::span<const double> sorted, double p) {
    if (sorted.empty()) {
        throw std::invalid_argument("quantile of empty sample");
    }
    if (p <= 0.0) return sorted.front();
    if (p >= 1.0) return sorted.back();
    const double h = static_cast<double>(sorted.size() - 1) * p;
    const std::size_t lo = static_cast<std::size_t>(h);
    const double frac = h - static_cast<double>(lo);
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

struct SummaryTriple {
    double median = 0.0;
    double q25 = 0.0;
    double q75 = 0.0;
};

inline SummaryTriple summarize_quartiles(std::vector<double> values) {
    if (values.empty()) {
        throw std::invalid_argument("quartile summary of empty sample");
    }
    std::sort(values.begin(), values.end());
    return SummaryTriple{quantile_linear(values, 0.5), quantile_linear(values, 0.25),
                         quantile_linear(values, 0.75)};
}

// Ordered vector transform: out[0] = u[0], out[k] = out[k-1] + exp(u[k]).
inline void ordered_from_unconstrained(std::span<const double> u, std::span<double> out) {
    if (u.empty()) return;
    out[0] = u[0];
    for (std::size_t k = 1; k < u.size(); ++k) {
        out[k] = out[k - 1] + std::exp(u[k]);
    }
}

inline void unconstrained_from_ordered(std::span<const double> ordered, std::span<double> u) {
    if (ordered.empty()) return;
    u[0] = ordered[0];
    for (std::size_t k = 1; k < ordered.size(); ++k) {
        const double gap = ordered[k] - ordered[k - 1];
        if (!(gap > 0.0)) {
            throw std::invalid_argument("ordered transform inverse requires strictly increasing input");
        }
        u[k] = std::log(gap);
    }
}

// Accumulates d(objective)/du given d(objective)/d(ordered output).
inline void ordered_backward(std::span<const double> u, std::span<const double> out_adj,
                             std::span<double> u_adj) {
    double suffix = 0.0;
    for (std::size_t k = u.size(); k-- > 0;) {
        suffix += out_adj[k];
        u_adj[k] += (k == 0) ? suffix : suffix * std::exp(u[k]);
    }
}

// Log densities used by the priors. Constants kept so posterior values are
// comparable across configurations.
inline double log_normal_pdf(double x, double mean, double sd) {
    const double z = (x - mean) / sd;
    return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * kPi);
}

inline double log_laplace_pdf(double x, double scale) {
    return -std::abs(x) / scale - std::log(2.0 * scale);
}

inline double log_half_normal_pdf(double x, double scale) {
    const double z = x / scale;
    return -0.5 * z * z + 0.5 * std::log(2.0 / kPi) - std::log(scale);
}

} // namespace bmh

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "bmh/math.hpp"
#include "bmh/rng.hpp"

namespace bmh {

// Memory kernel g(t | theta, d) = theta * d^theta * (t + d)^(-(1+theta)).
// Normalized: the integral over [0, inf) is 1 for any theta, d > 0.
struct PowerLawKernel {
    double theta = 1.0; // decay exponent
    double d = 1.0;     // offset, same units as event times (seconds)
};

inline void validate_kernel(const PowerLawKernel& k) {
    if (!(k.theta > 0.0) || !std::isfinite(k.theta) || !(k.d > 0.0) || !std::isfinite(k.d)) {
        throw std::invalid_argument("power-law kernel requires theta > 0 and d > 0");
    }
}

inline double kernel_value(double t, const PowerLawKernel& k) {
    if (t < 0.0) {
        throw std::invalid_argument("kernel_value requires t >= 0");
    }
    return k.theta * std::pow(k.d, k.theta) * std::pow(t + k.d, -(1.0 + k.theta));
}

// Mass of g on [0, t]: 1 - (d / (t + d))^theta.
inline double kernel_cdf(double t, const PowerLawKernel& k) {
    if (t < 0.0) return 0.0;
    return 1.0 - std::pow(k.d / (t + k.d), k.theta);
}

// Time by which half of the kernel mass has decayed: d * (2^(1/theta) - 1).
inline double kernel_half_life(const PowerLawKernel& k) {
    return k.d * (std::exp2(1.0 / k.theta) - 1.0);
}

// Inverse-CDF sampler for offspring delays; kernel_cdf(result) == u.
inline double sample_offspring_delay(const PowerLawKernel& k, double u) {
    if (!(u > 0.0 && u < 1.0)) {
        throw std::invalid_argument("sample_offspring_delay requires u in (0,1)");
    }
    return k.d * (std::pow(1.0 - u, -1.0 / k.theta) - 1.0);
}

// One diffusion cascade: event times in seconds, sorted, rebased so the seed
// is at 0. features_x carries the cascade-level predictors once standardized;
// follower_count keeps the raw seed-user followers for corpora that have not
// been standardized yet (-1 when absent).
struct Cascade {
    std::vector<double> event_times;
    std::vector<double> features_x;
    long follower_count = -1;

    int size() const { return static_cast<int>(event_times.size()); }
};

inline void validate_cascade(const Cascade& c) {
    if (c.event_times.empty()) {
        throw std::invalid_argument("cascade must contain at least the seed event");
    }
    if (c.event_times.front() != 0.0) {
        throw std::invalid_argument("cascade times must be rebased to seed time 0");
    }
    for (std::size_t i = 0; i < c.event_times.size(); ++i) {
        const double t = c.event_times[i];
        if (!std::isfinite(t) || t < 0.0) {
            throw std::invalid_argument("cascade times must be finite and non-negative");
        }
        if (i > 0 && t < c.event_times[i - 1]) {
            throw std::invalid_argument("cascade times must be sorted");
        }
    }
}

// Zero-background Hawkes process; mu is identically 0 (every event is spawned
// by the seed or one of its descendants), so subcriticality alpha < 1 is what
// keeps the expected size 1/(1-alpha) finite.
struct HawkesParams {
    double alpha = 0.5;
    PowerLawKernel kernel;
};

inline void validate_hawkes_params(const HawkesParams& p) {
    if (!(p.alpha > 0.0 && p.alpha < 1.0)) {
        throw std::invalid_argument("branching factor alpha must lie in (0,1)");
    }
    validate_kernel(p.kernel);
}

// ---- Borel distribution (cascade-size law of this branching process) ----

inline double borel_log_pmf(int n, double alpha) {
    if (n < 1) {
        throw std::invalid_argument("borel pmf requires n >= 1");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::invalid_argument("borel pmf requires alpha in (0,1)");
    }
    // log [e^{-alpha n} (alpha n)^{n-1} / n!], lgamma keeps n in the thousands safe
    return -alpha * n + (n - 1) * std::log(alpha * n) - std::lgamma(n + 1.0);
}

inline double borel_pmf(int n, double alpha) { return std::exp(borel_log_pmf(n, alpha)); }

// Size half of the separable log-likelihood: sum of (N-1) log alpha - N alpha.
// Differs from sum of borel_log_pmf by an alpha-independent constant.
inline double borel_log_likelihood(std::span<const int> sizes, double alpha) {
    if (sizes.empty()) {
        throw std::invalid_argument("borel_log_likelihood requires at least one cascade size");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::invalid_argument("borel_log_likelihood requires alpha in (0,1)");
    }
    const double log_alpha = std::log(alpha);
    double ll = 0.0;
    for (int n : sizes) {
        if (n < 1) throw std::invalid_argument("cascade sizes must be >= 1");
        ll += (n - 1) * log_alpha - n * alpha;
    }
    return ll;
}

// Closed-form maximizer of borel_log_likelihood: sum(N-1) / sum(N).
inline double borel_mle(std::span<const int> sizes) {
    if (sizes.empty()) {
        throw std::invalid_argument("borel_mle requires at least one cascade size");
    }
    double num = 0.0, den = 0.0;
    for (int n : sizes) {
        num += n - 1;
        den += n;
    }
    return num / den;
}

// ---- Kernel half of the separable log-likelihood ----

// All pairwise forward differences of a cascade, grouped by target event so
// the inner log-sum can be evaluated repeatedly against different kernels
// without re-walking the event list. Group j (0-based) covers event j+1.
struct InterEventTerms {
    std::vector<double> diffs;
    std::vector<std::uint32_t> offsets; // group j is diffs[offsets[j], offsets[j+1])
    int event_count = 0;                // events past the seed

    bool empty() const { return event_count == 0; }
};

inline InterEventTerms make_interevent_terms(const Cascade& c) {
    validate_cascade(c);
    InterEventTerms terms;
    const std::size_t n = c.event_times.size();
    terms.event_count = static_cast<int>(n) - 1;
    terms.offsets.reserve(n);
    terms.diffs.reserve(n * (n - 1) / 2);
    terms.offsets.push_back(0);
    for (std::size_t j = 1; j < n; ++j) {
        for (std::size_t z = 0; z < j; ++z) {
            terms.diffs.push_back(c.event_times[j] - c.event_times[z]);
        }
        terms.offsets.push_back(static_cast<std::uint32_t>(terms.diffs.size()));
    }
    return terms;
}

// sum_j log sum_{z<j} g(t_j - t_z); optionally accumulates d/dtheta, d/dd.
inline double kernel_log_likelihood_terms(const InterEventTerms& terms, double theta, double d,
                                          double* dtheta = nullptr, double* dd = nullptr) {
    const double log_theta = std::log(theta);
    const double log_d = std::log(d);
    double ll = 0.0;
    double gt = 0.0, gd = 0.0;
    static thread_local std::vector<double> log_g, log_td;
    for (std::size_t j = 0; j + 1 < terms.offsets.size(); ++j) {
        const std::uint32_t lo = terms.offsets[j];
        const std::uint32_t hi = terms.offsets[j + 1];
        log_g.resize(hi - lo);
        log_td.resize(hi - lo);
        double m = kNegInf;
        for (std::uint32_t z = lo; z < hi; ++z) {
            const double ltd = std::log(terms.diffs[z] + d);
            log_td[z - lo] = ltd;
            const double lg = log_theta + theta * log_d - (1.0 + theta) * ltd;
            log_g[z - lo] = lg;
            m = std::max(m, lg);
        }
        double s = 0.0;
        for (double lg : log_g) s += std::exp(lg - m);
        ll += m + std::log(s);
        if (dtheta != nullptr || dd != nullptr) {
            for (std::uint32_t z = lo; z < hi; ++z) {
                const double w = std::exp(log_g[z - lo] - m) / s;
                gt += w * (1.0 / theta + log_d - log_td[z - lo]);
                gd += w * (theta / d - (1.0 + theta) / (terms.diffs[z] + d));
            }
        }
    }
    if (dtheta != nullptr) *dtheta = gt;
    if (dd != nullptr) *dd = gd;
    return ll;
}

inline double kernel_log_likelihood(const Cascade& c, const PowerLawKernel& k) {
    validate_kernel(k);
    const InterEventTerms terms = make_interevent_terms(c);
    return kernel_log_likelihood_terms(terms, k.theta, k.d);
}

inline double kernel_log_likelihood(std::span<const Cascade> cascades, const PowerLawKernel& k) {
    validate_kernel(k);
    double ll = 0.0;
    for (const Cascade& c : cascades) {
        ll += kernel_log_likelihood(c, k);
    }
    return ll;
}

// ---- Simulator ----

struct SimulatedCascade {
    Cascade cascade;
    bool truncated = false;
};

// Breadth-first branching construction: each event spawns Poisson(alpha)
// children with delays drawn from the kernel. Events are expanded in
// generation order and the cascade is capped at max_size (reported via the
// truncated flag, not an error).
inline SimulatedCascade simulate_cascade(const HawkesParams& params, Rng& rng,
                                         int max_size = 100000) {
    validate_hawkes_params(params);
    if (max_size < 1) {
        throw std::invalid_argument("max_size must be >= 1");
    }
    SimulatedCascade out;
    std::vector<double>& times = out.cascade.event_times;
    times.push_back(0.0);
    std::size_t next = 0;
    while (next < times.size()) {
        const double parent = times[next++];
        const int children = rng.poisson(params.alpha);
        for (int c = 0; c < children; ++c) {
            if (static_cast<int>(times.size()) >= max_size) {
                out.truncated = true;
                break;
            }
            times.push_back(parent + sample_offspring_delay(params.kernel, rng.uniform_open()));
        }
        if (out.truncated) break;
    }
    std::sort(times.begin(), times.end());
    return out;
}

inline SimulatedCascade simulate_cascade(const HawkesParams& params, std::uint64_t rng_seed,
                                         int max_size = 100000) {
    Rng rng(rng_seed);
    return simulate_cascade(params, rng, max_size);
}

} // namespace bmh

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

#include "json.hpp"

#include "bmh/hawkes.hpp"
#include "bmh/math.hpp"
#include "bmh/optim.hpp"
#include "bmh/rng.hpp"

namespace bmh {

struct EmConfig {
    int max_iterations = 500;
    double rel_tolerance = 1e-7;
    int restarts = 5; // multi-start count including the deterministic start
    std::uint64_t seed = 0;
    double degenerate_weight = 1e-6;
    int mstep_max_iterations = 40;
};

struct EmPrunedComponent {
    int iteration = 0;
    int component = 0;
    double weight = 0.0;
};

struct EmReport {
    std::vector<double> ll_trace; // observed-data log-likelihood per iteration
    double final_ll = kNegInf;
    int iterations = 0;
    bool converged = false;
    bool boundary_fit = false;
    bool monotone = true;
    std::vector<EmPrunedComponent> pruned;
    std::vector<double> restart_lls;
};

struct BorelMixture {
    struct Component {
        double alpha = 0.5;
        double weight = 1.0;
    };
    std::vector<Component> components; // canonical order: alpha ascending
};

struct KernelMixture {
    struct Component {
        PowerLawKernel kernel;
        double weight = 1.0;
    };
    std::vector<Component> components; // canonical order: half-life ascending
};

struct DmmModel {
    BorelMixture borel;
    KernelMixture kernel;
    std::vector<std::vector<double>> product_weights; // [borel comp][kernel comp]
};

struct BmmResult {
    BorelMixture mixture;
    EmReport report;
};

struct KmmResult {
    KernelMixture mixture;
    EmReport report;
};

namespace detail {

inline void canonicalize(BorelMixture& m) {
    std::sort(m.components.begin(), m.components.end(),
              [](const auto& a, const auto& b) { return a.alpha < b.alpha; });
    double total = 0.0;
    for (const auto& c : m.components) total += c.weight;
    for (auto& c : m.components) c.weight /= total;
}

inline void canonicalize(KernelMixture& m) {
    std::sort(m.components.begin(), m.components.end(), [](const auto& a, const auto& b) {
        return kernel_half_life(a.kernel) < kernel_half_life(b.kernel);
    });
    double total = 0.0;
    for (const auto& c : m.components) total += c.weight;
    for (auto& c : m.components) c.weight /= total;
}

// Drops components whose weight collapsed; returns true if anything was
// removed. Pruning is a warning, not an abort.
template <class Mixture>
bool prune_degenerate(Mixture& m, int iteration, double threshold,
                      std::vector<EmPrunedComponent>& log) {
    if (m.components.size() <= 1) return false;
    bool pruned = false;
    for (std::size_t k = 0; k < m.components.size();) {
        if (m.components[k].weight < threshold && m.components.size() > 1) {
            log.push_back({iteration, static_cast<int>(k), m.components[k].weight});
            m.components.erase(m.components.begin() + static_cast<std::ptrdiff_t>(k));
            pruned = true;
        } else {
            ++k;
        }
    }
    if (pruned) {
        double total = 0.0;
        for (const auto& c : m.components) total += c.weight;
        for (auto& c : m.components) c.weight /= total;
    }
    return pruned;
}

} // namespace detail

// EM fit of a K-component Borel mixture to cascade sizes. E-step uses the
// full Borel pmf; the M-step alpha update is the closed-form weighted MLE.
inline BmmResult fit_bmm(std::span<const int> sizes, int k_components, const EmConfig& cfg = {}) {
    if (k_components < 1) throw std::invalid_argument("fit_bmm requires K >= 1");
    if (sizes.empty()) throw std::invalid_argument("fit_bmm requires at least one size");

    // compress repeated sizes
    std::map<int, double> hist;
    for (int n : sizes) {
        if (n < 1) throw std::invalid_argument("cascade sizes must be >= 1");
        hist[n] += 1.0;
    }
    if (static_cast<int>(hist.size()) < k_components && k_components > 1) {
        throw std::invalid_argument("fit_bmm requires at least K distinct sizes");
    }
    std::vector<int> uniq;
    std::vector<double> count;
    for (auto& [n, c] : hist) {
        uniq.push_back(n);
        count.push_back(c);
    }
    const double total_count = static_cast<double>(sizes.size());

    // deterministic quantile initialization from the per-cascade naive
    // estimates (N-1)/N
    std::vector<double> naive;
    naive.reserve(sizes.size());
    for (int n : sizes) naive.push_back((n - 1.0) / n);
    std::sort(naive.begin(), naive.end());

    auto run_once = [&](int restart) {
        Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(restart)));
        std::vector<double> alpha(k_components), weight(k_components, 1.0 / k_components);
        for (int k = 0; k < k_components; ++k) {
            double a = quantile_linear(naive, (k + 0.5) / k_components);
            a = std::clamp(a, 0.01, 0.95);
            if (restart > 0) a = logistic(logit(a) + 0.4 * rng.normal());
            alpha[k] = a;
        }
        std::sort(alpha.begin(), alpha.end());
        for (int k = 1; k < k_components; ++k) {
            if (alpha[k] <= alpha[k - 1] + 1e-4) alpha[k] = std::min(0.99, alpha[k - 1] + 0.05);
        }

        EmReport report;
        BorelMixture mix;
        mix.components.resize(alpha.size());
        for (std::size_t k = 0; k < alpha.size(); ++k) mix.components[k] = {alpha[k], weight[k]};

        double prev_ll = kNegInf;
        std::vector<double> lr;
        for (int iter = 0; iter < cfg.max_iterations; ++iter) {
            const std::size_t kk = mix.components.size();
            std::vector<double> num(kk, 0.0), den(kk, 0.0), wsum(kk, 0.0);
            double ll = 0.0;
            lr.resize(kk);
            for (std::size_t i = 0; i < uniq.size(); ++i) {
                for (std::size_t k = 0; k < kk; ++k) {
                    lr[k] = std::log(mix.components[k].weight) +
                            borel_log_pmf(uniq[i], mix.components[k].alpha);
                }
                const double lse = log_sum_exp(lr);
                ll += count[i] * lse;
                for (std::size_t k = 0; k < kk; ++k) {
                    const double r = count[i] * std::exp(lr[k] - lse);
                    num[k] += r * (uniq[i] - 1);
                    den[k] += r * uniq[i];
                    wsum[k] += r;
                }
            }
            report.ll_trace.push_back(ll);
            if (iter > 0 && ll < prev_ll - 1e-9) report.monotone = false;
            const bool done =
                iter > 0 && std::abs(ll - prev_ll) / (1.0 + std::abs(prev_ll)) < cfg.rel_tolerance;
            prev_ll = ll;
            report.iterations = iter + 1;
            if (done) {
                report.converged = true;
                break;
            }

            for (std::size_t k = 0; k < kk; ++k) {
                double a = den[k] > 0.0 ? num[k] / den[k] : 0.0;
                if (a <= 0.0) {
                    a = 1e-12;
                    report.boundary_fit = true;
                } else if (a >= 1.0) {
                    a = 1.0 - 1e-12;
                    report.boundary_fit = true;
                }
                mix.components[k].alpha = a;
                mix.components[k].weight = wsum[k] / total_count;
            }
            if (detail::prune_degenerate(mix, iter, cfg.degenerate_weight, report.pruned)) {
                prev_ll = kNegInf; // model changed discontinuously
            }
        }
        report.final_ll = prev_ll;
        detail::canonicalize(mix);
        return BmmResult{mix, report};
    };

    BmmResult best = run_once(0);
    best.report.restart_lls.push_back(best.report.final_ll);
    for (int r = 1; r < std::max(1, cfg.restarts); ++r) {
        BmmResult cand = run_once(r);
        best.report.restart_lls.push_back(cand.report.final_ll);
        if (cand.report.final_ll > best.report.final_ll) {
            const std::vector<double> lls = best.report.restart_lls;
            best = std::move(cand);
            best.report.restart_lls = lls;
        }
    }
    return best;
}

// EM fit of a K-component power-law kernel mixture to the interevent data of
// cascades with at least one non-seed event. The M-step maximizes the
// responsibility-weighted kernel log-likelihood in (log theta, log d).
inline KmmResult fit_kmm(std::span<const Cascade> cascades, int k_components,
                         const EmConfig& cfg = {}) {
    if (k_components < 1) throw std::invalid_argument("fit_kmm requires K >= 1");
    std::vector<InterEventTerms> terms;
    std::vector<double> medians;
    for (const Cascade& c : cascades) {
        if (c.size() < 2) continue;
        terms.push_back(make_interevent_terms(c));
        std::vector<double> gaps;
        for (int j = 1; j < c.size(); ++j) gaps.push_back(c.event_times[j] - c.event_times[j - 1]);
        std::sort(gaps.begin(), gaps.end());
        medians.push_back(std::max(quantile_linear(gaps, 0.5), 1e-9));
    }
    if (static_cast<int>(terms.size()) < k_components) {
        throw std::invalid_argument("fit_kmm requires at least K cascades of size >= 2");
    }
    std::sort(medians.begin(), medians.end());
    const std::size_t n_casc = terms.size();

    auto run_once = [&](int restart) {
        Rng rng(mix_seed(cfg.seed ^ 0x9e37ull, static_cast<std::uint64_t>(restart)));
        KernelMixture mix;
        mix.components.resize(k_components);
        for (int k = 0; k < k_components; ++k) {
            double d0 = quantile_linear(medians, (k + 0.5) / k_components);
            double lt = 0.0, ld = std::log(d0);
            if (restart > 0) {
                lt += 0.5 * rng.normal();
                ld += 0.5 * rng.normal();
            }
            if (k > 0 && ld <= std::log(mix.components[k - 1].kernel.d) + 1e-3) {
                ld = std::log(mix.components[k - 1].kernel.d) + 0.5;
            }
            mix.components[k] = {{std::exp(lt), std::exp(ld)}, 1.0 / k_components};
        }

        EmReport report;
        double prev_ll = kNegInf;
        std::vector<double> lr;
        std::vector<std::vector<double>> resp;
        for (int iter = 0; iter < cfg.max_iterations; ++iter) {
            const std::size_t kk = mix.components.size();
            resp.assign(kk, std::vector<double>(n_casc, 0.0));
            std::vector<double> wsum(kk, 0.0);
            double ll = 0.0;
            lr.resize(kk);
            for (std::size_t c = 0; c < n_casc; ++c) {
                for (std::size_t k = 0; k < kk; ++k) {
                    lr[k] = std::log(mix.components[k].weight) +
                            kernel_log_likelihood_terms(terms[c], mix.components[k].kernel.theta,
                                                        mix.components[k].kernel.d);
                }
                const double lse = log_sum_exp(lr);
                ll += lse;
                for (std::size_t k = 0; k < kk; ++k) {
                    resp[k][c] = std::exp(lr[k] - lse);
                    wsum[k] += resp[k][c];
                }
            }
            report.ll_trace.push_back(ll);
            if (iter > 0 && ll < prev_ll - 1e-9) report.monotone = false;
            const bool done =
                iter > 0 && std::abs(ll - prev_ll) / (1.0 + std::abs(prev_ll)) < cfg.rel_tolerance;
            prev_ll = ll;
            report.iterations = iter + 1;
            if (done) {
                report.converged = true;
                break;
            }

            for (std::size_t k = 0; k < kk; ++k) {
                // weighted kernel likelihood in log-parameter space
                auto objective = [&](std::span<const double> x, std::span<double> grad) {
                    const double theta = std::exp(x[0]);
                    const double d = std::exp(x[1]);
                    double q = 0.0, gt = 0.0, gd = 0.0;
                    for (std::size_t c = 0; c < n_casc; ++c) {
                        if (resp[k][c] < 1e-14) continue;
                        double dth = 0.0, ddd = 0.0;
                        q += resp[k][c] *
                             kernel_log_likelihood_terms(terms[c], theta, d, &dth, &ddd);
                        gt += resp[k][c] * dth;
                        gd += resp[k][c] * ddd;
                    }
                    if (!grad.empty()) {
                        grad[0] = gt * theta;
                        grad[1] = gd * d;
                    }
                    return q;
                };
                LbfgsConfig opt;
                opt.max_iterations = cfg.mstep_max_iterations;
                opt.gradient_tolerance = 1e-7;
                std::vector<double> x0{std::log(mix.components[k].kernel.theta),
                                       std::log(mix.components[k].kernel.d)};
                const LbfgsResult r = lbfgs_maximize(objective, std::move(x0), opt);
                mix.components[k].kernel.theta = std::exp(r.x[0]);
                mix.components[k].kernel.d = std::exp(r.x[1]);
                mix.components[k].weight = wsum[k] / static_cast<double>(n_casc);
            }
            if (detail::prune_degenerate(mix, iter, cfg.degenerate_weight, report.pruned)) {
                prev_ll = kNegInf;
            }
        }
        report.final_ll = prev_ll;
        for (const auto& comp : mix.components) {
            if (comp.kernel.theta > 1e2 || comp.kernel.theta < 1e-4 || comp.kernel.d > 1e10 ||
                comp.kernel.d < 1e-9) {
                report.boundary_fit = true;
            }
        }
        detail::canonicalize(mix);
        return KmmResult{mix, report};
    };

    KmmResult best = run_once(0);
    best.report.restart_lls.push_back(best.report.final_ll);
    for (int r = 1; r < std::max(1, cfg.restarts); ++r) {
        KmmResult cand = run_once(r);
        best.report.restart_lls.push_back(cand.report.final_ll);
        if (cand.report.final_ll > best.report.final_ll) {
            const std::vector<double> lls = best.report.restart_lls;
            best = std::move(cand);
            best.report.restart_lls = lls;
        }
    }
    return best;
}

// Cartesian product of the two mixtures.
inline DmmModel dmm_product(const BorelMixture& borel, const KernelMixture& kernel) {
    if (borel.components.empty() || kernel.components.empty()) {
        throw std::invalid_argument("dmm_product requires fitted mixtures");
    }
    DmmModel model{borel, kernel, {}};
    model.product_weights.resize(borel.components.size());
    for (std::size_t i = 0; i < borel.components.size(); ++i) {
        model.product_weights[i].resize(kernel.components.size());
        for (std::size_t j = 0; j < kernel.components.size(); ++j) {
            model.product_weights[i][j] =
                borel.components[i].weight * kernel.components[j].weight;
        }
    }
    return model;
}

// Mixture negative log-likelihood of held-out interevent data under the
// kernel mixture, component weights marginalized per cascade, normalized per
// non-seed event. Cascades without interevent information contribute nothing.
inline double dmm_holdout_nll(const DmmModel& model, std::span<const Cascade> cascades) {
    if (cascades.empty()) throw std::invalid_argument("dmm_holdout_nll requires cascades");
    double total = 0.0;
    double events = 0.0;
    std::vector<double> lr(model.kernel.components.size());
    for (const Cascade& c : cascades) {
        if (c.size() < 2) continue;
        const InterEventTerms terms = make_interevent_terms(c);
        for (std::size_t k = 0; k < model.kernel.components.size(); ++k) {
            const auto& comp = model.kernel.components[k];
            lr[k] = std::log(comp.weight) +
                    kernel_log_likelihood_terms(terms, comp.kernel.theta, comp.kernel.d);
        }
        total += log_sum_exp(lr);
        events += c.size() - 1;
    }
    if (events == 0.0) return 0.0;
    return -total / events;
}

// ---- JSON serialization (versioned model documents) ----

inline void to_json(nlohmann::json& j, const PowerLawKernel& k) {
    j = nlohmann::json{{"theta", k.theta}, {"d", k.d}};
}

inline void from_json(const nlohmann::json& j, PowerLawKernel& k) {
    j.at("theta").get_to(k.theta);
    j.at("d").get_to(k.d);
}

inline void to_json(nlohmann::json& j, const BorelMixture& m) {
    j = nlohmann::json::array();
    for (const auto& c : m.components) {
        j.push_back({{"alpha", c.alpha}, {"weight", c.weight}});
    }
}

inline void from_json(const nlohmann::json& j, BorelMixture& m) {
    m.components.clear();
    for (const auto& c : j) {
        m.components.push_back({c.at("alpha").get<double>(), c.at("weight").get<double>()});
    }
}

inline void to_json(nlohmann::json& j, const KernelMixture& m) {
    j = nlohmann::json::array();
    for (const auto& c : m.components) {
        j.push_back({{"kernel", c.kernel}, {"weight", c.weight}});
    }
}

inline void from_json(const nlohmann::json& j, KernelMixture& m) {
    m.components.clear();
    for (const auto& c : j) {
        m.components.push_back(
            {c.at("kernel").get<PowerLawKernel>(), c.at("weight").get<double>()});
    }
}

inline void to_json(nlohmann::json& j, const DmmModel& m) {
    j = nlohmann::json{{"schema", "bmh.model.dmm"},
                       {"version", 1},
                       {"borel", m.borel},
                       {"kernel", m.kernel},
                       {"product_weights", m.product_weights}};
}

inline void from_json(const nlohmann::json& j, DmmModel& m) {
    if (j.at("schema").get<std::string>() != "bmh.model.dmm") {
        throw std::invalid_argument("not a dmm model document");
    }
    j.at("borel").get_to(m.borel);
    j.at("kernel").get_to(m.kernel);
    j.at("product_weights").get_to(m.product_weights);
}

} // namespace bmh

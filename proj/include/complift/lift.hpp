#pragma once

// Per-condition lift estimation for 2D samples. The naive estimator re-noises
// each sample for T fresh trials; the cached estimator reuses the latents and
// predictions recorded during generation.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "complift/algebra.hpp"
#include "complift/energy_net.hpp"
#include "complift/error.hpp"
#include "complift/parallel.hpp"
#include "complift/rng.hpp"
#include "complift/sampler.hpp"
#include "complift/timestep_sampling.hpp"

namespace complift {

enum class noise_strategy { independent, shared_per_trial, shared_all };
enum class null_source { alpha_surrogate, cached_null, model_null };

inline const char* to_string(noise_strategy s) {
    switch (s) {
    case noise_strategy::independent: return "independent";
    case noise_strategy::shared_per_trial: return "shared_per_trial";
    case noise_strategy::shared_all: return "shared_all";
    }
    return "?";
}

inline noise_strategy parse_noise_strategy(const std::string& s) {
    if (s == "independent") return noise_strategy::independent;
    if (s == "shared_per_trial" || s == "shared-per-trial") return noise_strategy::shared_per_trial;
    if (s == "shared_all" || s == "shared-all") return noise_strategy::shared_all;
    throw config_error("unknown noise strategy '" + s + "'");
}

inline const char* to_string(null_source s) {
    switch (s) {
    case null_source::alpha_surrogate: return "alpha_surrogate";
    case null_source::cached_null: return "cached_null";
    case null_source::model_null: return "model_null";
    }
    return "?";
}

inline null_source parse_null_source(const std::string& s) {
    if (s == "alpha_surrogate" || s == "alpha") return null_source::alpha_surrogate;
    if (s == "cached_null") return null_source::cached_null;
    if (s == "model_null") return null_source::model_null;
    throw config_error("unknown unconditional source '" + s + "'");
}

struct lift_config {
    int trials = 1000;
    noise_strategy noise = noise_strategy::shared_per_trial;
    timestep_strategy tstrategy = timestep_strategy::uniform;
    int fixed_t = 1;
    std::optional<loss_history> history;  // consulted by the importance strategy
    null_source null = null_source::alpha_surrogate;
    double alpha = 0.9;
    bool keep_trials = false;
    std::uint64_t seed = 0;
    int jobs = 0;

    void validate() const {
        if (trials < 1) throw config_error("trials must be >= 1");
        if (null == null_source::alpha_surrogate && !(alpha > 0.0 && alpha <= 1.0))
            throw config_error("alpha must lie in (0, 1]");
    }
};

struct lift_trial {
    int t = 0;
    std::vector<double> diff;  // per condition
};

struct lift_report {
    std::vector<double> lift;  // per-condition mean over trials
    std::vector<lift_trial> trials;  // kept only on request
    double score = 0.0;  // composed lift, no zero floor
    bool accept = false;
};

// Stand-in for eps(x_t, null).
struct null_predictor {
    null_source source = null_source::alpha_surrogate;
    double alpha = 0.9;
    const energy_net* model = nullptr;

    void check() const {
        if (source == null_source::model_null && !model)
            throw config_error("model_null source requested but no unconditional model was given");
    }

    // cond_pred must be eps(x_t, c) at the same x_t.
    matrix_f operator()(const matrix_f& xt, std::span<const int> t, const matrix_f& cond_pred) const {
        switch (source) {
        case null_source::alpha_surrogate: return static_cast<float>(alpha) * cond_pred;
        case null_source::model_null: {
            check();
            matrix_f out;
            model->evaluate(xt, t, nullptr, &out);
            return out;
        }
        case null_source::cached_null: break;
        }
        throw config_error("cached_null source is only available when filtering from a prediction cache");
    }
};

inline null_predictor make_null_predictor(const lift_config& cfg, const energy_net* null_model) {
    null_predictor p{cfg.null, cfg.alpha, null_model};
    p.check();
    return p;
}

namespace detail {

inline void finish_report(lift_report& r, double inv_trials, const algebra::indexed_cnf& form) {
    for (auto& v : r.lift) v *= inv_trials;
    r.score = algebra::composed_lift(r.lift, form);
    r.accept = algebra::compose_verdict(r.lift, form);
}

// Squared column norms of a - b.
inline Eigen::VectorXd col_sqdist(const matrix_f& a, const matrix_f& b) {
    return (a - b).cast<double>().colwise().squaredNorm().transpose();
}

inline matrix_f noised(const diffusion_schedule& s, const matrix_f& x0, std::span<const int> t, const matrix_f& eps) {
    matrix_f out(x0.rows(), x0.cols());
    for (Eigen::Index j = 0; j < x0.cols(); ++j) {
        const double ab = s.alpha_bar(t[static_cast<std::size_t>(j)]);
        out.col(j) = static_cast<float>(std::sqrt(ab)) * x0.col(j) + static_cast<float>(std::sqrt(1.0 - ab)) * eps.col(j);
    }
    return out;
}

inline void draw_normal(matrix_f& m, std::span<rng_stream> streams) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index d = 0; d < m.rows(); ++d) m(d, j) = static_cast<float>(streams[static_cast<std::size_t>(j)].normal());
}

// Naive estimator over a batch; column j draws everything from streams[j].
// Per-trial draw order for one sample: timestep, then eps, then (independent
// only) the second eps.
inline std::vector<lift_report> naive_batch(const matrix_f& x0, std::span<const energy_net> models,
                                            const lift_config& cfg, const algebra::indexed_cnf& form,
                                            const null_predictor& null, std::span<rng_stream> streams) {
    const auto& schedule = models[0].schedule();
    const timestep_sampler sampler(cfg.tstrategy, schedule.steps(), cfg.fixed_t, cfg.history ? &*cfg.history : nullptr);
    const Eigen::Index n = x0.cols(), dim = x0.rows();
    const std::size_t nc = models.size();

    std::vector<lift_report> out(static_cast<std::size_t>(n));
    for (auto& r : out) {
        r.lift.assign(nc, 0.0);
        if (cfg.keep_trials) r.trials.reserve(static_cast<std::size_t>(cfg.trials));
    }

    const bool independent = cfg.noise == noise_strategy::independent;
    matrix_f eps(dim, n), eps2(dim, n);
    std::vector<int> t(static_cast<std::size_t>(n));
    matrix_f fixed_eps;
    if (cfg.noise == noise_strategy::shared_all) {
        fixed_eps.resize(dim, n);
        draw_normal(fixed_eps, streams);
    }

    matrix_f pred, pred2;
    for (int trial = 0; trial < cfg.trials; ++trial) {
        for (Eigen::Index j = 0; j < n; ++j) t[static_cast<std::size_t>(j)] = sampler(streams[static_cast<std::size_t>(j)]);
        if (cfg.noise == noise_strategy::shared_all) {
            eps = fixed_eps;
        } else {
            for (Eigen::Index j = 0; j < n; ++j) {
                auto& rng = streams[static_cast<std::size_t>(j)];
                for (Eigen::Index d = 0; d < dim; ++d) eps(d, j) = static_cast<float>(rng.normal());
                if (independent)
                    for (Eigen::Index d = 0; d < dim; ++d) eps2(d, j) = static_cast<float>(rng.normal());
            }
        }
        const matrix_f xt = noised(schedule, x0, t, eps);
        matrix_f xt2;
        if (independent) xt2 = noised(schedule, x0, t, eps2);
        const matrix_f& eps_null = independent ? eps2 : eps;

        std::optional<matrix_f> shared_null;
        if (null.source == null_source::model_null) shared_null = null(independent ? xt2 : xt, t, matrix_f());

        for (std::size_t k = 0; k < nc; ++k) {
            models[k].evaluate(xt, t, nullptr, &pred);
            matrix_f np;
            if (shared_null) {
                np = *shared_null;
            } else if (independent) {
                models[k].evaluate(xt2, t, nullptr, &pred2);
                np = null(xt2, t, pred2);
            } else {
                np = null(xt, t, pred);
            }
            const Eigen::VectorXd diff = col_sqdist(eps_null, np) - col_sqdist(eps, pred);
            for (Eigen::Index j = 0; j < n; ++j) out[static_cast<std::size_t>(j)].lift[k] += diff[j];
            if (cfg.keep_trials) {
                for (Eigen::Index j = 0; j < n; ++j) {
                    auto& tr = out[static_cast<std::size_t>(j)].trials;
                    if (k == 0) tr.push_back({t[static_cast<std::size_t>(j)], std::vector<double>(nc)});
                    tr.back().diff[k] = diff[j];
                }
            }
        }
    }
    for (auto& r : out) finish_report(r, 1.0 / cfg.trials, form);
    return out;
}

inline void check_models(std::span<const energy_net> models, std::span<const std::string> conditions) {
    if (models.empty()) throw config_error("lift estimation needs at least one condition model");
    if (models.size() != conditions.size()) throw config_error("one model per condition required");
    for (const auto& m : models)
        if (!(m.schedule() == models[0].schedule())) throw config_error("condition models must share one schedule");
}

}  // namespace detail

// Naive estimator for every column of `samples`; sample j uses rng stream
// (cfg.seed, j), so results do not depend on batching or thread count.
inline std::vector<lift_report> lift_naive(const matrix_f& samples, std::span<const energy_net> models,
                                           std::span<const std::string> conditions, const lift_config& cfg,
                                           const algebra::cnf& form, const energy_net* null_model = nullptr) {
    cfg.validate();
    detail::check_models(models, conditions);
    if (!samples.allFinite()) throw numerical_error("samples contain non-finite values");
    const auto bound = algebra::bind(form, conditions);
    const auto null = make_null_predictor(cfg, null_model);
    std::vector<lift_report> out(static_cast<std::size_t>(samples.cols()));
    parallel_ranges(static_cast<std::size_t>(samples.cols()), resolve_jobs(cfg.jobs), energy_net::block,
                    [&](std::size_t b, std::size_t e) {
                        auto streams = make_streams(cfg.seed, e - b, b);
                        auto part = detail::naive_batch(samples.middleCols(static_cast<Eigen::Index>(b),
                                                                           static_cast<Eigen::Index>(e - b)),
                                                        models, cfg, bound, null, streams);
                        std::move(part.begin(), part.end(), out.begin() + static_cast<std::ptrdiff_t>(b));
                    });
    return out;
}

// Single sample with a caller-owned stream.
inline lift_report lift_naive(const Eigen::Ref<const vector_f>& x0, std::span<const energy_net> models,
                              std::span<const std::string> conditions, const lift_config& cfg,
                              const algebra::cnf& form, rng_stream& rng, const energy_net* null_model = nullptr) {
    cfg.validate();
    detail::check_models(models, conditions);
    if (!x0.allFinite()) throw numerical_error("sample contains non-finite values");
    const matrix_f m = x0;
    return detail::naive_batch(m, models, cfg, algebra::bind(form, conditions), make_null_predictor(cfg, null_model),
                               std::span<rng_stream>(&rng, 1))
        .front();
}

// Cached estimator: one trial per recorded timestep, eps recovered from the
// cached x_t and the final sample. No model evaluations.
inline std::vector<lift_report> lift_cached(const prediction_cache& cache, const algebra::cnf& form,
                                            const lift_config& cfg) {
    cache.validate_complete();
    if (cfg.null == null_source::model_null)
        throw config_error("model_null needs live model evaluations; use cached_null or alpha_surrogate");
    if (cfg.null == null_source::alpha_surrogate && !(cfg.alpha > 0.0 && cfg.alpha <= 1.0))
        throw config_error("alpha must lie in (0, 1]");
    if (cfg.null == null_source::cached_null && cache.null_preds.size() != cache.timesteps.size())
        throw cache_error("cache has no unconditional predictions");
    const auto bound = algebra::bind(form, cache.conditions);
    const std::size_t nc = cache.conditions.size();
    const Eigen::Index n = cache.chains();

    std::vector<lift_report> out(static_cast<std::size_t>(n));
    for (auto& r : out) r.lift.assign(nc, 0.0);
    for (std::size_t j = 0; j < cache.timesteps.size(); ++j) {
        const int t = cache.timesteps[j];
        const matrix_f eps = cache.schedule.recover_eps(cache.latents[j], cache.final, t);
        for (std::size_t k = 0; k < nc; ++k) {
            const matrix_f& pred = cache.cond_preds[j][k];
            const matrix_f np =
                cfg.null == null_source::cached_null ? cache.null_preds[j] : (static_cast<float>(cfg.alpha) * pred).eval();
            const Eigen::VectorXd diff = detail::col_sqdist(eps, np) - detail::col_sqdist(eps, pred);
            for (Eigen::Index i = 0; i < n; ++i) {
                auto& r = out[static_cast<std::size_t>(i)];
                r.lift[k] += diff[i];
                if (cfg.keep_trials) {
                    if (k == 0) r.trials.push_back({t, std::vector<double>(nc)});
                    r.trials.back().diff[k] = diff[i];
                }
            }
        }
    }
    for (auto& r : out) detail::finish_report(r, 1.0 / static_cast<double>(cache.timesteps.size()), bound);
    return out;
}

inline double acceptance_ratio(std::span<const lift_report> reports) {
    if (reports.empty()) return 0.0;
    std::size_t n = 0;
    for (const auto& r : reports) n += r.accept ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(reports.size());
}

inline matrix_f accepted_columns(const matrix_f& samples, std::span<const lift_report> reports) {
    std::vector<Eigen::Index> keep;
    for (std::size_t i = 0; i < reports.size(); ++i)
        if (reports[i].accept) keep.push_back(static_cast<Eigen::Index>(i));
    matrix_f out(samples.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t i = 0; i < keep.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = samples.col(keep[i]);
    return out;
}

}  // namespace complift

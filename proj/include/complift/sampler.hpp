#pragma once

// Ancestral DDPM sampling from one component model or an algebraic
// composition of components, optionally recording every per-timestep
// prediction so cached lift estimation needs no extra model evaluations.

#include <algorithm>
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
#include "complift/schedule.hpp"

namespace complift {

using matrix_f = Eigen::MatrixXf;
using vector_f = Eigen::VectorXf;

enum class composition { single, product, mixture, negation };

inline const char* to_string(composition c) {
    switch (c) {
    case composition::single: return "single";
    case composition::product: return "product";
    case composition::mixture: return "mixture";
    case composition::negation: return "negation";
    }
    return "?";
}

struct composed_score_spec {
    composition kind = composition::single;
    double gamma = 1.0;        // negation weight
    double temperature = 1.0;  // mixture softmax temperature

    // product: a & b & ...; mixture: a | b | ...; negation: a & !b.
    // Condition order in the returned spec follows `conditions`.
    static composed_score_spec from_expression(const algebra::expr& e) {
        using algebra::node_kind;
        const auto all_literals = [](const algebra::expr& n) {
            return std::all_of(n.children.begin(), n.children.end(),
                               [](const algebra::expr& c) { return c.kind == node_kind::literal; });
        };
        composed_score_spec s;
        if (e.kind == node_kind::literal) {
            s.kind = composition::single;
        } else if (e.kind == node_kind::conjunction && all_literals(e)) {
            s.kind = composition::product;
        } else if (e.kind == node_kind::disjunction && all_literals(e)) {
            s.kind = composition::mixture;
        } else if (e.kind == node_kind::conjunction && e.children.size() == 2 &&
                   e.children[0].kind == node_kind::literal && e.children[1].kind == node_kind::negation &&
                   e.children[1].children[0].kind == node_kind::literal) {
            s.kind = composition::negation;
        } else {
            throw config_error("sampler supports a single literal, a&b&..., a|b|... or a&!b; got '" +
                               algebra::to_string(e) + "'");
        }
        return s;
    }
};

// Per-condition predictions (and energies when needed) at one timestep.
struct step_predictions {
    std::vector<matrix_f> per_condition;
    std::vector<vector_f> energies;  // filled for mixtures
    matrix_f composed;
};

// Evaluates every model once at (x, t) and combines the predictions:
//   product  -> sum of component predictions
//   negation -> eps_1 - gamma * eps_2
//   mixture  -> softmax(-E_i / temperature)-weighted sum
inline step_predictions composed_eps(std::span<const energy_net> models, const composed_score_spec& spec,
                                     const matrix_f& x, int t) {
    if (models.empty()) throw config_error("composition needs at least one model");
    step_predictions out;
    const bool need_energy = spec.kind == composition::mixture;
    out.per_condition.resize(models.size());
    if (need_energy) out.energies.resize(models.size());
    for (std::size_t k = 0; k < models.size(); ++k)
        models[k].evaluate(x, t, need_energy ? &out.energies[k] : nullptr, &out.per_condition[k]);

    switch (spec.kind) {
    case composition::single:
        out.composed = out.per_condition[0];
        break;
    case composition::product:
        out.composed = out.per_condition[0];
        for (std::size_t k = 1; k < models.size(); ++k) out.composed += out.per_condition[k];
        break;
    case composition::negation:
        if (models.size() != 2) throw config_error("negation composition needs exactly two models");
        out.composed = out.per_condition[0] - static_cast<float>(spec.gamma) * out.per_condition[1];
        break;
    case composition::mixture: {
        if (!(spec.temperature > 0.0)) throw config_error("mixture temperature must be positive");
        const Eigen::Index n = x.cols();
        out.composed = matrix_f::Zero(x.rows(), n);
        for (Eigen::Index j = 0; j < n; ++j) {
            double mx = -std::numeric_limits<double>::infinity();
            for (const auto& e : out.energies) mx = std::max(mx, -static_cast<double>(e[j]) / spec.temperature);
            double z = 0.0;
            std::vector<double> w(models.size());
            for (std::size_t k = 0; k < models.size(); ++k) {
                w[k] = std::exp(-static_cast<double>(out.energies[k][j]) / spec.temperature - mx);
                z += w[k];
            }
            for (std::size_t k = 0; k < models.size(); ++k)
                out.composed.col(j) += static_cast<float>(w[k] / z) * out.per_condition[k].col(j);
        }
        break;
    }
    }
    return out;
}

// x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(alpha_t) + sqrt(beta_t) z,
// with no noise at t = 1. Column j draws from streams[j].
inline matrix_f reverse_step(const matrix_f& xt, int t, const matrix_f& eps_hat, const diffusion_schedule& schedule,
                             std::span<rng_stream> streams) {
    const double beta = schedule.beta(t);
    const double coef = beta / std::sqrt(1.0 - schedule.alpha_bar(t));
    const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
    matrix_f out = ((xt - static_cast<float>(coef) * eps_hat) * static_cast<float>(inv_sqrt_alpha)).eval();
    if (t > 1) {
        if (streams.size() != static_cast<std::size_t>(xt.cols())) throw config_error("one rng stream per column required");
        const double sigma = std::sqrt(beta);
        for (Eigen::Index j = 0; j < out.cols(); ++j)
            for (Eigen::Index d = 0; d < out.rows(); ++d)
                out(d, j) += static_cast<float>(sigma * streams[static_cast<std::size_t>(j)].normal());
    }
    return out;
}

// Everything seen along the reverse chains of a batch; column j belongs to
// chain j. Read-only once generation returns.
struct prediction_cache {
    std::vector<std::string> conditions;
    diffusion_schedule schedule;
    std::vector<int> timesteps;                   // strictly decreasing
    std::vector<matrix_f> latents;                // x_{t_j}
    std::vector<std::vector<matrix_f>> cond_preds;  // [j][condition]
    std::vector<matrix_f> composed;               // [j]
    std::vector<matrix_f> null_preds;             // [j], empty when no null model
    matrix_f final;                               // x_0

    Eigen::Index chains() const { return final.cols(); }

    // Throws cache_error unless every timestep carries a latent and one
    // prediction per condition, with consistent shapes.
    void validate_complete() const {
        if (timesteps.empty()) throw cache_error("cache has no timesteps");
        if (latents.size() != timesteps.size() || cond_preds.size() != timesteps.size())
            throw cache_error("cache is missing timesteps");
        for (std::size_t j = 0; j + 1 < timesteps.size(); ++j)
            if (timesteps[j] <= timesteps[j + 1]) throw cache_error("cache timesteps are not strictly decreasing");
        for (std::size_t j = 0; j < timesteps.size(); ++j) {
            if (cond_preds[j].size() != conditions.size())
                throw cache_error("cache is missing a condition prediction at t=" + std::to_string(timesteps[j]));
            const auto same = [&](const matrix_f& m) { return m.rows() == final.rows() && m.cols() == final.cols(); };
            if (!same(latents[j])) throw cache_error("latent shape mismatch at t=" + std::to_string(timesteps[j]));
            for (const auto& p : cond_preds[j])
                if (!same(p)) throw cache_error("prediction shape mismatch at t=" + std::to_string(timesteps[j]));
        }
    }
};

struct generation_result {
    matrix_f samples;  // d x n
    std::optional<prediction_cache> cache;
};

struct generate_options {
    std::uint64_t seed = 0;
    bool record = false;
    int jobs = 0;
    std::vector<std::string> conditions;  // names recorded in the cache
};

// n independent chains x_T ~ N(0, I) -> x_0. Chain j uses rng stream (seed, j).
inline generation_result generate(std::span<const energy_net> models, const composed_score_spec& spec, int n,
                                  const generate_options& opt) {
    if (n < 1) throw config_error("sample count must be >= 1");
    if (models.empty()) throw config_error("no models");
    const auto& schedule = models[0].schedule();
    for (const auto& m : models)
        if (!(m.schedule() == schedule)) throw config_error("composed models must share one schedule");
    const Eigen::Index dim = models[0].architecture().input_dim;
    const int steps = schedule.steps();

    generation_result res;
    res.samples.resize(dim, n);
    if (opt.record) {
        prediction_cache c;
        c.conditions = opt.conditions;
        if (c.conditions.empty())
            for (const auto& m : models) c.conditions.push_back(m.condition());
        if (c.conditions.size() != models.size()) throw config_error("condition names must match model count");
        c.schedule = schedule;
        for (int t = steps; t >= 1; --t) c.timesteps.push_back(t);
        c.latents.assign(static_cast<std::size_t>(steps), matrix_f(dim, n));
        c.composed.assign(static_cast<std::size_t>(steps), matrix_f(dim, n));
        c.cond_preds.assign(static_cast<std::size_t>(steps), std::vector<matrix_f>(models.size(), matrix_f(dim, n)));
        res.cache = std::move(c);
    }

    parallel_ranges(static_cast<std::size_t>(n), resolve_jobs(opt.jobs), energy_net::block,
                    [&](std::size_t begin, std::size_t end) {
                        const auto len = static_cast<Eigen::Index>(end - begin);
                        auto streams = make_streams(opt.seed, end - begin, begin);
                        matrix_f x(dim, len);
                        for (Eigen::Index j = 0; j < len; ++j)
                            for (Eigen::Index d = 0; d < dim; ++d)
                                x(d, j) = static_cast<float>(streams[static_cast<std::size_t>(j)].normal());
                        const auto b = static_cast<Eigen::Index>(begin);
                        for (int t = steps; t >= 1; --t) {
                            auto pred = composed_eps(models, spec, x, t);
                            if (res.cache) {
                                const auto j = static_cast<std::size_t>(steps - t);
                                res.cache->latents[j].middleCols(b, len) = x;
                                res.cache->composed[j].middleCols(b, len) = pred.composed;
                                for (std::size_t k = 0; k < models.size(); ++k)
                                    res.cache->cond_preds[j][k].middleCols(b, len) = pred.per_condition[k];
                            }
                            x = reverse_step(x, t, pred.composed, schedule, streams);
                        }
                        res.samples.middleCols(b, len) = x;
                    });
    if (res.cache) res.cache->final = res.samples;
    return res;
}

}  // namespace complift

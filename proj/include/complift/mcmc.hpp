#pragma once

// Annealed MCMC baselines over composed energies: ULA, unadjusted HMC, MALA
// and HMC. Chains are the columns of a d x n matrix and move in lockstep;
// Metropolis decisions are made per column.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "complift/energy_net.hpp"
#include "complift/error.hpp"
#include "complift/parallel.hpp"
#include "complift/rng.hpp"
#include "complift/sampler.hpp"

namespace complift::mcmc {

enum class sampler_kind { ula, uhmc, mala, hmc };

inline const char* to_string(sampler_kind k) {
    switch (k) {
    case sampler_kind::ula: return "ula";
    case sampler_kind::uhmc: return "uhmc";
    case sampler_kind::mala: return "mala";
    case sampler_kind::hmc: return "hmc";
    }
    return "?";
}

inline sampler_kind parse_sampler_kind(const std::string& s) {
    if (s == "ula") return sampler_kind::ula;
    if (s == "uhmc" || s == "u-hmc") return sampler_kind::uhmc;
    if (s == "mala") return sampler_kind::mala;
    if (s == "hmc") return sampler_kind::hmc;
    throw config_error("unknown MCMC sampler '" + s + "'");
}

struct mcmc_config {
    sampler_kind kind = sampler_kind::hmc;
    int steps_per_level = 10;
    double step_size = 0.05;  // scaled by (1 - alpha_bar_t) at each level
    int leapfrog = 5;
    double mass = 1.0;
    std::uint64_t seed = 0;
    int jobs = 0;

    void validate() const {
        if (steps_per_level < 0) throw config_error("steps per level must be >= 0");
        if (!(step_size > 0.0)) throw config_error("step size must be positive");
        if (leapfrog < 1) throw config_error("leapfrog steps must be >= 1");
        if (!(mass > 0.0)) throw config_error("mass must be positive");
    }
};

// Energies (one per column) and their gradients at x.
using energy_fn = std::function<void(const matrix_f& x, Eigen::VectorXd& energy, matrix_f& grad)>;

namespace detail {

inline void add_noise(matrix_f& m, double scale, std::span<rng_stream> rngs) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index d = 0; d < m.rows(); ++d)
            m(d, j) += static_cast<float>(scale * rngs[static_cast<std::size_t>(j)].normal());
}

inline matrix_f normal(Eigen::Index rows, Eigen::Index cols, double scale, std::span<rng_stream> rngs) {
    matrix_f m = matrix_f::Zero(rows, cols);
    add_noise(m, scale, rngs);
    return m;
}

inline void check_rngs(const matrix_f& x, std::span<rng_stream> rngs) {
    if (rngs.size() != static_cast<std::size_t>(x.cols())) throw config_error("one rng stream per chain required");
}

// Per-column Metropolis test; keeps columns of `proposal` where accepted.
inline std::size_t metropolis(matrix_f& x, const matrix_f& proposal, const Eigen::VectorXd& log_ratio,
                              std::span<rng_stream> rngs) {
    std::size_t accepted = 0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double u = rngs[static_cast<std::size_t>(j)].uniform();
        const double lr = log_ratio[j];
        if (std::isfinite(lr) && proposal.col(j).allFinite() && std::log(u) < lr) {
            x.col(j) = proposal.col(j);
            ++accepted;
        }
    }
    return accepted;
}

}  // namespace detail

// x' = x - (eta/2) grad E(x) + sqrt(eta) xi
inline void ula_step(matrix_f& x, const energy_fn& f, double eta, std::span<rng_stream> rngs) {
    detail::check_rngs(x, rngs);
    if (eta < 0.0) throw config_error("step size must be >= 0");
    Eigen::VectorXd e;
    matrix_f g;
    f(x, e, g);
    x -= static_cast<float>(eta / 2.0) * g;
    detail::add_noise(x, std::sqrt(eta), rngs);
}

// ULA proposal with Metropolis-Hastings correction. Returns accepted count.
inline std::size_t mala_step(matrix_f& x, const energy_fn& f, double eta, std::span<rng_stream> rngs) {
    detail::check_rngs(x, rngs);
    if (!(eta > 0.0)) throw config_error("step size must be positive");
    Eigen::VectorXd e0, e1;
    matrix_f g0, g1;
    f(x, e0, g0);
    matrix_f prop = x - static_cast<float>(eta / 2.0) * g0;
    detail::add_noise(prop, std::sqrt(eta), rngs);
    f(prop, e1, g1);
    Eigen::VectorXd log_ratio(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        // log q(x | x') - log q(x' | x)
        const Eigen::VectorXd fwd = (prop.col(j) - x.col(j) + static_cast<float>(eta / 2.0) * g0.col(j)).cast<double>();
        const Eigen::VectorXd bwd = (x.col(j) - prop.col(j) + static_cast<float>(eta / 2.0) * g1.col(j)).cast<double>();
        const double q = (fwd.squaredNorm() - bwd.squaredNorm()) / (2.0 * eta);
        log_ratio[j] = e0[j] - e1[j] + q;
    }
    return detail::metropolis(x, prop, log_ratio, rngs);
}

// L leapfrog steps of size eps with p ~ N(0, mass I). With `metropolis`
// set, accepts with min(1, exp(-dH)); non-finite dH rejects. Returns the
// accepted count (all columns when unadjusted).
inline std::size_t hmc_step(matrix_f& x, const energy_fn& f, double eps, int L, bool metropolis,
                            std::span<rng_stream> rngs, double mass = 1.0, Eigen::VectorXd* delta_h = nullptr) {
    detail::check_rngs(x, rngs);
    if (L < 1) throw config_error("leapfrog steps must be >= 1");
    if (eps < 0.0) throw config_error("step size must be >= 0");
    matrix_f p = detail::normal(x.rows(), x.cols(), std::sqrt(mass), rngs);
    Eigen::VectorXd e0, e1;
    matrix_f g;
    f(x, e0, g);
    const Eigen::VectorXd k0 = p.cast<double>().colwise().squaredNorm().transpose() / (2.0 * mass);

    matrix_f q = x;
    const float h = static_cast<float>(eps);
    p -= 0.5f * h * g;
    for (int l = 0; l < L; ++l) {
        q += (h / static_cast<float>(mass)) * p;
        f(q, e1, g);
        if (l + 1 < L) p -= h * g;
    }
    p -= 0.5f * h * g;
    const Eigen::VectorXd k1 = p.cast<double>().colwise().squaredNorm().transpose() / (2.0 * mass);
    const Eigen::VectorXd dh = (e1 + k1) - (e0 + k0);
    if (delta_h) *delta_h = dh;
    if (!metropolis) {
        x = q;
        return static_cast<std::size_t>(x.cols());
    }
    return detail::metropolis(x, q, -dh, rngs);
}

// One sampler move of the configured kind at step size eta (Langevin
// scale); HMC variants use leapfrog step sqrt(eta).
inline std::size_t step(matrix_f& x, const energy_fn& f, double eta, const mcmc_config& cfg, std::span<rng_stream> rngs) {
    switch (cfg.kind) {
    case sampler_kind::ula: ula_step(x, f, eta, rngs); return static_cast<std::size_t>(x.cols());
    case sampler_kind::mala: return mala_step(x, f, eta, rngs);
    case sampler_kind::uhmc: return hmc_step(x, f, std::sqrt(eta), cfg.leapfrog, false, rngs, cfg.mass);
    case sampler_kind::hmc: return hmc_step(x, f, std::sqrt(eta), cfg.leapfrog, true, rngs, cfg.mass);
    }
    return 0;
}

// Composed noisy energy at level t: the component energy combination divided
// by sqrt(1 - alpha_bar_t), so that its gradient is the composed score of the
// noised density.
//   product  -> sum E_i
//   negation -> E_1 - gamma E_2
//   mixture  -> -temperature * logsumexp(-E_i / temperature)
inline energy_fn composed_energy(std::span<const energy_net> models, const composed_score_spec& spec, int t) {
    if (models.empty()) throw config_error("composition needs at least one model");
    if (spec.kind == composition::negation && models.size() != 2)
        throw config_error("negation composition needs exactly two models");
    if (spec.kind == composition::mixture && !(spec.temperature > 0.0))
        throw config_error("mixture temperature must be positive");
    const double inv_sigma = 1.0 / models[0].schedule().sigma(t);
    return [models, spec, t, inv_sigma](const matrix_f& x, Eigen::VectorXd& energy, matrix_f& grad) {
        const std::size_t m = models.size();
        std::vector<vector_f> es(m);
        std::vector<matrix_f> gs(m);
        for (std::size_t k = 0; k < m; ++k) models[k].evaluate(x, t, &es[k], &gs[k]);
        energy.resize(x.cols());
        grad.resize(x.rows(), x.cols());
        switch (spec.kind) {
        case composition::single:
            energy = es[0].cast<double>();
            grad = gs[0];
            break;
        case composition::product:
            energy = es[0].cast<double>();
            grad = gs[0];
            for (std::size_t k = 1; k < m; ++k) {
                energy += es[k].cast<double>();
                grad += gs[k];
            }
            break;
        case composition::negation:
            energy = es[0].cast<double>() - spec.gamma * es[1].cast<double>();
            grad = gs[0] - static_cast<float>(spec.gamma) * gs[1];
            break;
        case composition::mixture: {
            const double T = spec.temperature;
            grad.setZero();
            for (Eigen::Index j = 0; j < x.cols(); ++j) {
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t k = 0; k < m; ++k) mx = std::max(mx, -static_cast<double>(es[k][j]) / T);
                double z = 0.0;
                std::vector<double> w(m);
                for (std::size_t k = 0; k < m; ++k) {
                    w[k] = std::exp(-static_cast<double>(es[k][j]) / T - mx);
                    z += w[k];
                }
                energy[j] = -T * (mx + std::log(z));
                for (std::size_t k = 0; k < m; ++k) grad.col(j) += static_cast<float>(w[k] / z) * gs[k].col(j);
            }
            break;
        }
        }
        energy *= inv_sigma;
        grad *= static_cast<float>(inv_sigma);
    };
}

struct anneal_result {
    matrix_f samples;
    std::size_t proposals = 0;
    std::size_t accepted = 0;
    double acceptance_rate() const { return proposals ? static_cast<double>(accepted) / static_cast<double>(proposals) : 0.0; }
};

// x ~ N(0, I), then K sampler moves at each level t = T..1 with
// eta_t = step_size * (1 - alpha_bar_t). Chain j uses rng stream (seed, j).
inline anneal_result annealed_sample(std::span<const energy_net> models, const composed_score_spec& spec, int n,
                                     const mcmc_config& cfg) {
    cfg.validate();
    if (n < 1) throw config_error("sample count must be >= 1");
    if (models.empty()) throw config_error("no models");
    const auto& schedule = models[0].schedule();
    for (const auto& m : models)
        if (!(m.schedule() == schedule)) throw config_error("composed models must share one schedule");
    const Eigen::Index dim = models[0].architecture().input_dim;

    anneal_result res;
    res.samples.resize(dim, n);
    std::vector<std::size_t> acc_parts, prop_parts;
    std::mutex mu;
    parallel_ranges(static_cast<std::size_t>(n), resolve_jobs(cfg.jobs), energy_net::block,
                    [&](std::size_t b, std::size_t e) {
                        auto rngs = make_streams(cfg.seed, e - b, b);
                        const auto len = static_cast<Eigen::Index>(e - b);
                        matrix_f x = detail::normal(dim, len, 1.0, rngs);
                        std::size_t accepted = 0, proposals = 0;
                        for (int t = schedule.steps(); t >= 1; --t) {
                            if (cfg.steps_per_level == 0) break;
                            const auto f = composed_energy(models, spec, t);
                            const double eta = cfg.step_size * (1.0 - schedule.alpha_bar(t));
                            for (int k = 0; k < cfg.steps_per_level; ++k) {
                                accepted += step(x, f, eta, cfg, rngs);
                                proposals += static_cast<std::size_t>(len);
                            }
                        }
                        res.samples.middleCols(static_cast<Eigen::Index>(b), len) = x;
                        std::lock_guard lock(mu);
                        res.accepted += accepted;
                        res.proposals += proposals;
                    });
    return res;
}

}  // namespace complift::mcmc

#pragma once

// Benchmark and ablation harness for the 2D scenarios: every method draws
// 8000 samples, results are scored by accuracy, Chamfer distance to a
// reference draw of the composed truth, acceptance ratio and wall time.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "complift/algebra.hpp"
#include "complift/distributions.hpp"
#include "complift/energy_net.hpp"
#include "complift/lift.hpp"
#include "complift/mcmc.hpp"
#include "complift/metrics.hpp"
#include "complift/sampler.hpp"

namespace complift::bench {

inline const std::vector<std::string>& all_methods() {
    static const std::vector<std::string> m{"baseline", "cached", "naive_t50", "naive_t1000", "ula", "uhmc", "mala", "hmc"};
    return m;
}

struct result_row {
    std::string scenario;
    std::string method;
    std::optional<double> acc;      // percent
    std::optional<double> chamfer;
    std::optional<double> ratio;    // percent, filtering methods only
    double wall_ms = 0.0;
    std::uint64_t seed = 0;
};

struct bench_config {
    int samples = 8000;
    int reference_size = 8000;
    std::uint64_t seed = 0;
    std::vector<std::string> methods = all_methods();
    lift_config lift;  // trials is overridden per method
    mcmc::mcmc_config mcmc;
    double gamma = 1.0;
    double temperature = 1.0;
    int hist_bins = 50;
    int jobs = 1;
};

struct scenario_outcome {
    std::vector<result_row> rows;
    // Composed lift of every baseline sample under the naive T=1000 estimate
    // (or the largest naive run requested), split by ground-truth membership.
    std::vector<double> scores;
    std::vector<bool> membership;
    eval::histogram hist;
    std::optional<double> mean_member_score;
    std::optional<double> mean_non_member_score;
    matrix_f baseline_samples;
    std::vector<lift_report> naive_reports;
    std::vector<lift_report> cached_reports;
};

inline double elapsed_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

inline std::optional<double> percent(std::optional<double> v) {
    if (!v) return std::nullopt;
    return *v * 100.0;
}

// Reference point cloud from the composed ground truth; empty when the
// composition has no support.
inline Eigen::MatrixXd reference_dataset(const eval::scenario_spec& sc, int n, std::uint64_t seed) {
    if (sc.composed_empty()) return Eigen::MatrixXd(2, 0);
    rng_stream rng(seed, 0x5eed);
    return eval::sample_dataset(sc.composed, n, rng);
}

inline std::optional<double> chamfer_or_null(const matrix_f& samples, const Eigen::MatrixXd& ref) {
    if (samples.cols() == 0 || ref.cols() == 0) return std::nullopt;
    return eval::chamfer(samples.cast<double>(), ref);
}

inline bool wants(const bench_config& cfg, const std::string& m) {
    return std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end();
}

inline scenario_outcome run_scenario(const eval::scenario_spec& sc, std::span<const energy_net> models,
                                     const bench_config& cfg) {
    for (const auto& m : cfg.methods)
        if (std::find(all_methods().begin(), all_methods().end(), m) == all_methods().end())
            throw config_error("unknown benchmark method '" + m + "'");
    if (models.size() != 2) throw config_error("each scenario needs exactly two component models");
    const auto expr = algebra::parse(sc.expression());
    const auto form = algebra::to_cnf(expr);
    const auto conditions = eval::scenario_spec::conditions();
    auto spec = composed_score_spec::from_expression(expr);
    spec.gamma = cfg.gamma;
    spec.temperature = cfg.temperature;
    const auto ref = reference_dataset(sc, cfg.reference_size, cfg.seed);

    scenario_outcome out;
    const auto row = [&](const std::string& method, const matrix_f& s, std::optional<double> ratio, double ms) {
        out.rows.push_back({sc.id, method, percent(eval::accuracy(s, sc)), chamfer_or_null(s, ref), ratio, ms, cfg.seed});
    };

    generate_options go;
    go.seed = cfg.seed;
    go.jobs = cfg.jobs;
    go.conditions = conditions;
    auto t0 = std::chrono::steady_clock::now();
    auto base = generate(models, spec, cfg.samples, go);
    const double base_ms = elapsed_ms(t0);
    out.baseline_samples = base.samples;
    if (wants(cfg, "baseline")) row("baseline", base.samples, std::nullopt, base_ms);

    if (wants(cfg, "cached")) {
        go.record = true;
        t0 = std::chrono::steady_clock::now();
        auto rec = generate(models, spec, cfg.samples, go);
        auto lc = cfg.lift;
        out.cached_reports = lift_cached(*rec.cache, form, lc);
        const double ms = elapsed_ms(t0);
        row("cached", accepted_columns(rec.samples, out.cached_reports), 100.0 * acceptance_ratio(out.cached_reports), ms);
    }

    for (const auto& [name, trials] : {std::pair<std::string, int>{"naive_t50", 50}, {"naive_t1000", 1000}}) {
        if (!wants(cfg, name)) continue;
        auto lc = cfg.lift;
        lc.trials = trials;
        lc.jobs = cfg.jobs;
        t0 = std::chrono::steady_clock::now();
        auto reports = lift_naive(base.samples, models, conditions, lc, form);
        const double ms = base_ms + elapsed_ms(t0);
        row(name, accepted_columns(base.samples, reports), 100.0 * acceptance_ratio(reports), ms);
        if (out.naive_reports.empty() || trials == 1000) out.naive_reports = std::move(reports);
    }

    for (const auto* name : {"ula", "uhmc", "mala", "hmc"}) {
        if (!wants(cfg, name)) continue;
        auto mc = cfg.mcmc;
        mc.kind = mcmc::parse_sampler_kind(name);
        mc.seed = cfg.seed;
        mc.jobs = cfg.jobs;
        t0 = std::chrono::steady_clock::now();
        auto res = mcmc::annealed_sample(models, spec, cfg.samples, mc);
        row(name, res.samples, std::nullopt, elapsed_ms(t0));
    }

    const auto& score_src = out.naive_reports.empty() ? out.cached_reports : out.naive_reports;
    if (!score_src.empty()) {
        double sm = 0.0, sn = 0.0;
        std::size_t nm = 0, nn = 0;
        for (std::size_t i = 0; i < score_src.size(); ++i) {
            const bool m = sc.member(base.samples.col(static_cast<Eigen::Index>(i)).cast<double>());
            out.scores.push_back(score_src[i].score);
            out.membership.push_back(m);
            (m ? sm : sn) += score_src[i].score;
            ++(m ? nm : nn);
        }
        out.hist = eval::split_histogram(out.scores, out.membership, cfg.hist_bins);
        if (nm) out.mean_member_score = sm / static_cast<double>(nm);
        if (nn) out.mean_non_member_score = sn / static_cast<double>(nn);
    }
    return out;
}

struct ablation_row {
    std::string scenario;
    std::string strategy;  // noise strategy or timestep strategy label
    int trials = 0;
    std::optional<double> acc;
    std::optional<double> ratio;
    double wall_ms = 0.0;
};

// Filters one fixed batch of composed samples with each (strategy, trials)
// pair; `configure` applies the strategy to a lift config.
inline std::vector<ablation_row> run_ablation(const eval::scenario_spec& sc, std::span<const energy_net> models,
                                              const matrix_f& samples, const lift_config& base,
                                              const std::vector<std::pair<std::string, std::function<void(lift_config&)>>>& strategies,
                                              const std::vector<int>& trial_grid) {
    const auto form = algebra::to_cnf(algebra::parse(sc.expression()));
    const auto conditions = eval::scenario_spec::conditions();
    std::vector<ablation_row> rows;
    for (const auto& [label, configure] : strategies)
        for (int trials : trial_grid) {
            auto lc = base;
            lc.trials = trials;
            configure(lc);
            const auto t0 = std::chrono::steady_clock::now();
            const auto reports = lift_naive(samples, models, conditions, lc, form);
            const double ms = elapsed_ms(t0);
            rows.push_back({sc.id, label, trials, percent(eval::accuracy(accepted_columns(samples, reports), sc)),
                            100.0 * acceptance_ratio(reports), ms});
        }
    return rows;
}

inline std::vector<std::pair<std::string, std::function<void(lift_config&)>>> noise_strategies() {
    std::vector<std::pair<std::string, std::function<void(lift_config&)>>> out;
    for (auto s : {noise_strategy::independent, noise_strategy::shared_per_trial, noise_strategy::shared_all})
        out.emplace_back(to_string(s), [s](lift_config& c) { c.noise = s; });
    return out;
}

// uniform, importance (needs cfg.history), and fixed t for each listed t.
inline std::vector<std::pair<std::string, std::function<void(lift_config&)>>> timestep_strategies(
    const std::vector<int>& fixed) {
    std::vector<std::pair<std::string, std::function<void(lift_config&)>>> out;
    out.emplace_back("uniform", [](lift_config& c) { c.tstrategy = timestep_strategy::uniform; });
    out.emplace_back("importance", [](lift_config& c) { c.tstrategy = timestep_strategy::importance; });
    for (int t : fixed)
        out.emplace_back("fixed_t" + std::to_string(t), [t](lift_config& c) {
            c.tstrategy = timestep_strategy::fixed;
            c.fixed_t = t;
        });
    return out;
}

inline std::string fmt(std::optional<double> v, int precision = 4) {
    if (!v) return "null";
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << *v;
    return os.str();
}

inline void write_results_csv(std::ostream& os, std::span<const result_row> rows) {
    os << "scenario,method,acc,chamfer,ratio,wall_ms,seed\n";
    for (const auto& r : rows)
        os << r.scenario << ',' << r.method << ',' << fmt(r.acc, 2) << ',' << fmt(r.chamfer, 4) << ',' << fmt(r.ratio, 2)
           << ',' << fmt(r.wall_ms, 1) << ',' << r.seed << '\n';
}

inline void write_ablation_csv(std::ostream& os, std::span<const ablation_row> rows) {
    os << "scenario,strategy,trials,acc,ratio,wall_ms\n";
    for (const auto& r : rows)
        os << r.scenario << ',' << r.strategy << ',' << r.trials << ',' << fmt(r.acc, 2) << ',' << fmt(r.ratio, 2) << ','
           << fmt(r.wall_ms, 1) << '\n';
}

inline void write_histogram_csv(std::ostream& os, const eval::histogram& h) {
    os << "bin_lo,bin_hi,members,non_members\n";
    for (std::size_t i = 0; i < h.members.size(); ++i)
        os << fmt(h.edges[i], 6) << ',' << fmt(h.edges[i + 1], 6) << ',' << h.members[i] << ',' << h.non_members[i] << '\n';
}

}  // namespace complift::bench

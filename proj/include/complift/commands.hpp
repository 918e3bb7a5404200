#pragma once

// Command implementations behind the `complift` executable. Each command reads
// its inputs from files, writes its outputs plus a manifest.json into an
// output directory, and reports failures through complift::error subclasses
// whose exit_code() is the process status.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "complift/algebra.hpp"
#include "complift/bench.hpp"
#include "complift/checkpoint.hpp"
#include "complift/distributions.hpp"
#include "complift/energy_net.hpp"
#include "complift/error.hpp"
#include "complift/lift.hpp"
#include "complift/mcmc.hpp"
#include "complift/metrics.hpp"
#include "complift/pixellift.hpp"
#include "complift/sampler.hpp"
#include "complift/schedule.hpp"

#ifndef COMPLIFT_VERSION
#define COMPLIFT_VERSION "0.0.0"
#endif

namespace complift::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ---------------------------------------------------------------- file helpers

inline void write_points_csv(const fs::path& p, const matrix_f& pts) {
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw error("cannot write " + p.string());
    out << "x,y\n" << std::setprecision(9);
    for (Eigen::Index j = 0; j < pts.cols(); ++j) out << pts(0, j) << ',' << pts(1, j) << '\n';
}

inline matrix_f read_points_csv(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw missing_input_error("cannot open samples file " + p.string());
    std::string line;
    std::vector<std::pair<float, float>> rows;
    if (!std::getline(in, line)) throw config_error("empty samples file " + p.string());
    if (line != "x,y") throw config_error("samples file must start with the header 'x,y'");
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto comma = line.find(',');
        try {
            if (comma == std::string::npos) throw std::invalid_argument("no comma");
            std::size_t used = 0;
            const float x = std::stof(line.substr(0, comma), &used);
            const float y = std::stof(line.substr(comma + 1));
            rows.emplace_back(x, y);
        } catch (const std::exception&) {
            throw config_error("malformed sample at " + p.string() + ":" + std::to_string(lineno));
        }
    }
    if (rows.empty()) throw config_error("samples file " + p.string() + " has no rows");
    matrix_f m(2, static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        m(0, static_cast<Eigen::Index>(i)) = rows[i].first;
        m(1, static_cast<Eigen::Index>(i)) = rows[i].second;
    }
    if (!m.allFinite()) throw numerical_error("samples file contains non-finite values");
    return m;
}

inline void write_text(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw error("cannot write " + p.string());
    out << s;
}

inline json backend_info() {
    json b;
#if defined(__clang__)
    b["compiler"] = "clang " __clang_version__;
#elif defined(__GNUC__)
    b["compiler"] = "gcc " __VERSION__;
#else
    b["compiler"] = "unknown";
#endif
    b["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
    b["simd"] = Eigen::SimdInstructionSetsInUse();
    b["hardware_threads"] = std::thread::hardware_concurrency();
    return b;
}

// manifest.json: command, version, full configuration, backend identifiers
// and the list of files written.
inline void write_manifest(const fs::path& out, const std::string& command, const json& config,
                           const std::vector<std::string>& outputs) {
    json m;
    m["command"] = command;
    m["version"] = COMPLIFT_VERSION;
    m["config"] = config;
    m["backend"] = backend_info();
    m["outputs"] = outputs;
    write_text(out / "manifest.json", m.dump(2) + "\n");
}

inline fs::path checkpoint_path(const fs::path& dir, const std::string& scenario, int k) {
    return dir / (scenario + "_c" + std::to_string(k) + ".ckpt");
}

inline std::vector<energy_net> load_scenario_models(const fs::path& dir, const std::string& scenario) {
    std::vector<energy_net> models;
    for (int k = 1; k <= 2; ++k) {
        const auto p = checkpoint_path(dir, scenario, k);
        if (!fs::exists(p)) throw missing_input_error("missing model checkpoint " + p.string());
        models.push_back(load_checkpoint(p));
    }
    return models;
}

// ---------------------------------------------------------------- options

struct lift_options {
    int trials = 1000;
    std::string noise = "shared_per_trial";
    std::string tstrategy = "uniform";
    int fixed_t = 1;
    std::string null = "alpha_surrogate";
    double alpha = 0.9;
    std::uint64_t seed = 0;

    lift_config to_config(int jobs) const {
        lift_config c;
        c.trials = trials;
        c.noise = parse_noise_strategy(noise);
        c.tstrategy = parse_timestep_strategy(tstrategy);
        c.fixed_t = fixed_t;
        c.null = parse_null_source(null);
        c.alpha = alpha;
        c.seed = seed;
        c.jobs = jobs;
        c.validate();
        return c;
    }

    json to_json() const {
        return {{"trials", trials}, {"noise", noise}, {"tstrategy", tstrategy}, {"fixed_t", fixed_t},
                {"null", null},     {"alpha", alpha}, {"seed", seed}};
    }
};

struct mcmc_options {
    std::string sampler = "hmc";
    int steps_per_level = 10;
    double step_size = 0.05;
    int leapfrog = 5;
    double mass = 1.0;

    mcmc::mcmc_config to_config(std::uint64_t seed, int jobs) const {
        mcmc::mcmc_config c;
        c.kind = mcmc::parse_sampler_kind(sampler);
        c.steps_per_level = steps_per_level;
        c.step_size = step_size;
        c.leapfrog = leapfrog;
        c.mass = mass;
        c.seed = seed;
        c.jobs = jobs;
        c.validate();
        return c;
    }

    json to_json() const {
        return {{"sampler", sampler}, {"steps_per_level", steps_per_level}, {"step_size", step_size},
                {"leapfrog", leapfrog}, {"mass", mass}};
    }
};

struct train_options {
    std::string scenario;
    fs::path out;
    int steps = 10000;
    int batch = 256;
    double lr = 1e-3;
    bool cosine = true;
    int timesteps = 50;
    int dataset_size = 8000;
    std::uint64_t seed = 0;
    int jobs = 0;

    json to_json() const {
        return {{"scenario", scenario}, {"steps", steps},   {"batch", batch},         {"lr", lr},
                {"cosine", cosine},     {"timesteps", timesteps}, {"dataset_size", dataset_size}, {"seed", seed}};
    }
};

struct sample_options {
    std::string scenario;
    fs::path models_dir;
    fs::path out;
    int n = 8000;
    bool record = false;
    double gamma = 1.0;
    double temperature = 1.0;
    std::uint64_t seed = 0;
    int jobs = 0;
};

struct filter_options {
    std::string scenario;
    fs::path models_dir;
    fs::path samples;  // naive
    fs::path cache;    // cached
    std::string method = "naive";
    fs::path out;
    lift_options lift;
    int jobs = 0;
};

struct mcmc_run_options {
    std::string scenario;
    fs::path models_dir;
    fs::path out;
    int n = 8000;
    mcmc_options mcmc;
    double gamma = 1.0;
    double temperature = 1.0;
    std::uint64_t seed = 0;
    int jobs = 0;
};

struct eval_options {
    std::string scenario;
    fs::path samples;
    fs::path out;
    int reference_size = 8000;
    std::uint64_t seed = 0;
};

struct bench_options {
    fs::path models_dir;
    fs::path out;
    std::vector<std::string> scenarios;  // empty = all nine
    std::vector<std::string> methods;    // empty = all eight
    int n = 8000;
    lift_options lift;
    mcmc_options mcmc;
    double gamma = 1.0;
    double temperature = 1.0;
    std::uint64_t seed = 0;
    int jobs = 1;
};

struct ablate_options {
    std::string kind = "noise";  // noise | timestep
    std::string scenario = "product_a";
    fs::path models_dir;
    fs::path out;
    std::vector<int> grid{5, 10, 50, 200, 1000};
    std::vector<int> fixed{1, 10, 25, 50};
    int n = 8000;
    lift_options lift;
    std::uint64_t seed = 0;
    int jobs = 0;
};

struct pixellift_options {
    fs::path cache;
    fs::path out;
    std::string expr;  // default: conjunction of all conditions
    std::int64_t tau = 250;
    bool raw_eps = false;
};

// ---------------------------------------------------------------- commands

inline void cmd_train(const train_options& o) {
    const auto sc = eval::find_scenario(o.scenario);
    fs::create_directories(o.out);
    const auto schedule = diffusion_schedule::linear(o.timesteps);
    std::vector<std::string> outputs;
    std::vector<std::optional<train_result>> results(2);
    // The two components are independent; with jobs > 1 they train concurrently.
    const auto work = [&](std::size_t k) {
        rng_stream data_rng(o.seed + 100 + k, 0);
        const auto data = eval::sample_dataset(sc.components[k], o.dataset_size, data_rng);
        train_config cfg;
        cfg.steps = o.steps;
        cfg.batch = o.batch;
        cfg.learning_rate = o.lr;
        cfg.cosine_decay = o.cosine;
        cfg.seed = o.seed + 7 + k;
        results[k] = train(data, schedule, cfg, "c" + std::to_string(k + 1));
    };
    parallel_ranges(2, std::min(resolve_jobs(o.jobs), 2), 1, [&](std::size_t b, std::size_t e) {
        for (std::size_t k = b; k < e; ++k) work(k);
    });
    for (std::size_t k = 0; k < 2; ++k) {
        checkpoint_info info;
        info.seed = o.seed + 7 + k;
        info.train = o.to_json();
        info.history = results[k]->history;
        const auto p = checkpoint_path(o.out, o.scenario, static_cast<int>(k) + 1);
        save_checkpoint(results[k]->model, p, info);
        outputs.push_back(p.filename().string());
    }
    json cfg = o.to_json();
    cfg["tail_loss"] = {results[0]->tail_loss(), results[1]->tail_loss()};
    write_manifest(o.out, "train", cfg, outputs);
}

inline composed_score_spec scenario_spec_for(const eval::scenario_spec& sc, double gamma, double temperature) {
    auto s = composed_score_spec::from_expression(algebra::parse(sc.expression()));
    s.gamma = gamma;
    s.temperature = temperature;
    return s;
}

inline void cmd_sample(const sample_options& o) {
    const auto sc = eval::find_scenario(o.scenario);
    const auto models = load_scenario_models(o.models_dir, o.scenario);
    fs::create_directories(o.out);
    generate_options go;
    go.seed = o.seed;
    go.record = o.record;
    go.jobs = o.jobs;
    go.conditions = eval::scenario_spec::conditions();
    const auto spec = scenario_spec_for(sc, o.gamma, o.temperature);
    const auto res = generate(models, spec, o.n, go);
    write_points_csv(o.out / "samples.csv", res.samples);
    std::vector<std::string> outputs{"samples.csv"};
    json cfg{{"scenario", o.scenario}, {"models_dir", o.models_dir.string()}, {"n", o.n},
             {"record", o.record},     {"expression", sc.expression()},     {"composition", to_string(spec.kind)},
             {"gamma", o.gamma},       {"temperature", o.temperature},       {"seed", o.seed}};
    if (res.cache) {
        auto lc = pixel::to_latent_cache(*res.cache);
        lc.metadata = {{"scenario", o.scenario}, {"expression", sc.expression()}, {"seed", o.seed},
                       {"gamma", o.gamma},       {"temperature", o.temperature}};
        pixel::write_cache(lc, o.out / "cache");
        outputs.push_back("cache/");
    }
    write_manifest(o.out, "sample", cfg, outputs);
}

inline void write_reports(const fs::path& out, const std::vector<lift_report>& reports,
                          const std::vector<std::string>& conditions) {
    std::ostringstream jl, csv;
    jl << std::setprecision(9);
    csv << std::setprecision(9) << "index";
    for (const auto& c : conditions) csv << ",lift_" << c;
    csv << ",score,accept\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        json j{{"index", i}, {"lift", r.lift}, {"score", r.score}, {"accept", r.accept}};
        if (!r.trials.empty()) {
            auto tr = json::array();
            for (const auto& t : r.trials) tr.push_back({{"t", t.t}, {"diff", t.diff}});
            j["trials"] = tr;
        }
        jl << j.dump() << '\n';
        csv << i;
        for (double v : r.lift) csv << ',' << v;
        csv << ',' << r.score << ',' << (r.accept ? 1 : 0) << '\n';
    }
    write_text(out / "verdicts.jsonl", jl.str());
    write_text(out / "summary.csv", csv.str());
}

// Returns the reports so callers (and tests) can compare with in-process runs.
inline std::vector<lift_report> cmd_filter(const filter_options& o) {
    const auto sc = eval::find_scenario(o.scenario);
    const auto form = algebra::to_cnf(algebra::parse(sc.expression()));
    const auto lc = o.lift.to_config(o.jobs);
    std::vector<lift_report> reports;
    matrix_f samples;
    if (o.method == "cached") {
        if (o.cache.empty()) throw config_error("cached filtering needs --cache");
        const auto pc = pixel::to_prediction_cache(pixel::read_cache(o.cache));
        samples = pc.final;
        reports = lift_cached(pc, form, lc);
    } else if (o.method == "naive") {
        if (o.samples.empty()) throw config_error("naive filtering needs --samples");
        samples = read_points_csv(o.samples);
        const auto models = load_scenario_models(o.models_dir, o.scenario);
        reports = lift_naive(samples, models, eval::scenario_spec::conditions(), lc, form);
    } else {
        throw config_error("unknown filter method '" + o.method + "' (naive | cached)");
    }
    fs::create_directories(o.out);
    write_reports(o.out, reports, eval::scenario_spec::conditions());
    write_points_csv(o.out / "accepted.csv", accepted_columns(samples, reports));
    json cfg{{"scenario", o.scenario},          {"method", o.method},   {"samples", o.samples.string()},
             {"cache", o.cache.string()},       {"models_dir", o.models_dir.string()},
             {"lift", o.lift.to_json()},        {"acceptance_ratio", acceptance_ratio(reports)}};
    write_manifest(o.out, "filter", cfg, {"verdicts.jsonl", "summary.csv", "accepted.csv"});
    return reports;
}

inline void cmd_mcmc(const mcmc_run_options& o) {
    const auto sc = eval::find_scenario(o.scenario);
    const auto models = load_scenario_models(o.models_dir, o.scenario);
    const auto cfg = o.mcmc.to_config(o.seed, o.jobs);
    const auto res = mcmc::annealed_sample(models, scenario_spec_for(sc, o.gamma, o.temperature), o.n, cfg);
    fs::create_directories(o.out);
    write_points_csv(o.out / "samples.csv", res.samples);
    json c{{"scenario", o.scenario}, {"models_dir", o.models_dir.string()}, {"n", o.n}, {"mcmc", o.mcmc.to_json()},
           {"gamma", o.gamma},       {"temperature", o.temperature},       {"seed", o.seed},
           {"acceptance_rate", res.acceptance_rate()}};
    write_manifest(o.out, "mcmc", c, {"samples.csv"});
}

inline json cmd_eval(const eval_options& o) {
    const auto sc = eval::find_scenario(o.scenario);
    const auto samples = read_points_csv(o.samples);
    const auto ref = bench::reference_dataset(sc, o.reference_size, o.seed);
    json metrics;
    metrics["scenario"] = o.scenario;
    metrics["count"] = samples.cols();
    const auto acc = eval::accuracy(samples, sc);
    metrics["acc"] = acc ? json(*acc * 100.0) : json(nullptr);
    const auto cd = bench::chamfer_or_null(samples, ref);
    metrics["chamfer"] = cd ? json(*cd) : json(nullptr);
    metrics["chamfer_convention"] = "symmetric mean nearest-neighbor euclidean distance";
    fs::create_directories(o.out);
    write_text(o.out / "metrics.json", metrics.dump(2) + "\n");
    write_manifest(o.out, "eval",
                   {{"scenario", o.scenario}, {"samples", o.samples.string()}, {"reference_size", o.reference_size},
                    {"seed", o.seed}},
                   {"metrics.json"});
    return metrics;
}

inline std::vector<bench::result_row> cmd_bench(const bench_options& o) {
    std::vector<std::string> ids = o.scenarios;
    if (ids.empty())
        for (const auto& s : eval::all_scenarios()) ids.push_back(s.id);
    bench::bench_config cfg;
    cfg.samples = o.n;
    cfg.seed = o.seed;
    if (!o.methods.empty()) cfg.methods = o.methods;
    cfg.lift = o.lift.to_config(o.jobs);
    cfg.mcmc = o.mcmc.to_config(o.seed, o.jobs);
    cfg.gamma = o.gamma;
    cfg.temperature = o.temperature;
    cfg.jobs = o.jobs;
    // Fail before any work if a checkpoint is missing.
    std::vector<std::vector<energy_net>> models;
    for (const auto& id : ids) {
        eval::find_scenario(id);
        models.push_back(load_scenario_models(o.models_dir, id));
    }
    fs::create_directories(o.out);
    std::vector<bench::result_row> rows;
    std::vector<std::string> outputs{"results.csv"};
    json separation = json::object();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto out = bench::run_scenario(eval::find_scenario(ids[i]), models[i], cfg);
        rows.insert(rows.end(), out.rows.begin(), out.rows.end());
        if (!out.scores.empty()) {
            std::ofstream h(o.out / ("hist_" + ids[i] + ".csv"), std::ios::trunc);
            bench::write_histogram_csv(h, out.hist);
            outputs.push_back("hist_" + ids[i] + ".csv");
            separation[ids[i]] = {
                {"mean_member_score", out.mean_member_score ? json(*out.mean_member_score) : json(nullptr)},
                {"mean_non_member_score", out.mean_non_member_score ? json(*out.mean_non_member_score) : json(nullptr)}};
        }
    }
    std::ofstream csv(o.out / "results.csv", std::ios::trunc);
    bench::write_results_csv(csv, rows);
    json c{{"models_dir", o.models_dir.string()}, {"scenarios", ids},       {"methods", cfg.methods},
           {"n", o.n},                            {"lift", o.lift.to_json()}, {"mcmc", o.mcmc.to_json()},
           {"gamma", o.gamma},                    {"temperature", o.temperature}, {"seed", o.seed},
           {"chamfer_convention", "symmetric mean nearest-neighbor euclidean distance"},
           {"histogram_separation", separation}};
    write_manifest(o.out, "bench", c, outputs);
    return rows;
}

inline std::vector<bench::ablation_row> cmd_ablate(const ablate_options& o) {
    const auto sc = eval::find_scenario(o.scenario);
    const auto models = load_scenario_models(o.models_dir, o.scenario);
    if (o.grid.empty()) throw config_error("ablation grid is empty");
    generate_options go;
    go.seed = o.seed;
    go.jobs = o.jobs;
    const auto samples = generate(models, scenario_spec_for(sc, 1.0, 1.0), o.n, go).samples;
    auto base = o.lift.to_config(o.jobs);
    std::vector<std::pair<std::string, std::function<void(lift_config&)>>> strategies;
    if (o.kind == "noise") {
        strategies = bench::noise_strategies();
    } else if (o.kind == "timestep") {
        strategies = bench::timestep_strategies(o.fixed);
        checkpoint_info info;
        load_checkpoint(checkpoint_path(o.models_dir, o.scenario, 1), &info);
        base.history = info.history;
    } else {
        throw config_error("unknown ablation kind '" + o.kind + "' (noise | timestep)");
    }
    const auto rows = bench::run_ablation(sc, models, samples, base, strategies, o.grid);
    fs::create_directories(o.out);
    std::ofstream csv(o.out / "ablation.csv", std::ios::trunc);
    bench::write_ablation_csv(csv, rows);
    json c{{"kind", o.kind}, {"scenario", o.scenario}, {"models_dir", o.models_dir.string()}, {"grid", o.grid},
           {"fixed", o.fixed}, {"n", o.n}, {"lift", o.lift.to_json()}, {"seed", o.seed}};
    write_manifest(o.out, "ablate", c, {"ablation.csv"});
    return rows;
}

inline pixel::prompt_verdict cmd_pixellift(const pixellift_options& o) {
    const auto cache = pixel::read_cache(o.cache);
    std::vector<std::string> tags;
    for (std::size_t k = 0; k < cache.conditions.size(); ++k) tags.push_back(pixel::tag_condition(k));
    std::string text = o.expr;
    if (text.empty()) {
        for (std::size_t k = 0; k < tags.size(); ++k) text += (k ? " & " : "") + tags[k];
    }
    const auto e = algebra::parse(text);
    // Identifiers may be condition names or their cond{k} tags.
    const auto ids = algebra::identifiers(e);
    const bool by_name = std::all_of(ids.begin(), ids.end(), [&](const std::string& id) {
        return std::find(cache.conditions.begin(), cache.conditions.end(), id) != cache.conditions.end();
    });
    const auto& names = by_name ? cache.conditions : tags;
    const auto form = algebra::to_cnf(e);
    pixel::pixel_lift_options opt;
    opt.raw_eps = o.raw_eps;
    std::vector<pixel::lift_map> maps;
    for (std::size_t k = 0; k < cache.conditions.size(); ++k) maps.push_back(pixel::per_pixel_lift(cache, k, opt));
    const auto v = pixel::verdict_from_maps(maps, names, form, o.tau);

    fs::create_directories(o.out);
    std::vector<std::string> outputs{"counts.csv", "verdict.json"};
    std::ostringstream counts;
    counts << "condition,tag,count,score\n";
    for (std::size_t k = 0; k < v.counts.size(); ++k) {
        std::string name = cache.conditions[k];
        if (name.find_first_of(",\"\n") != std::string::npos) {
            std::string q = "\"";
            for (char ch : name) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
            name = q + "\"";
        }
        counts << name << ',' << tags[k] << ',' << v.counts[k] << ',' << v.scores[k] << '\n';
    }
    write_text(o.out / "counts.csv", counts.str());
    for (std::size_t k = 0; k < maps.size(); ++k) {
        std::ostringstream grid;
        grid << std::setprecision(9);
        for (Eigen::Index y = 0; y < maps[k].rows(); ++y) {
            for (Eigen::Index x = 0; x < maps[k].cols(); ++x) grid << (x ? "," : "") << maps[k](y, x);
            grid << '\n';
        }
        const std::string name = "heatmap_" + tags[k] + ".csv";
        write_text(o.out / name, grid.str());
        outputs.push_back(name);
    }
    json verdict{{"expression", algebra::to_string(e)}, {"tau", o.tau},   {"raw_eps", o.raw_eps},
                 {"conditions", cache.conditions},        {"counts", v.counts}, {"scores", v.scores},
                 {"accept", v.accept}};
    write_text(o.out / "verdict.json", verdict.dump(2) + "\n");
    write_manifest(o.out, "pixellift",
                   {{"cache", o.cache.string()}, {"expression", text}, {"tau", o.tau}, {"raw_eps", o.raw_eps},
                    {"cache_metadata", cache.metadata}},
                   outputs);
    return v;
}

}  // namespace complift::cli

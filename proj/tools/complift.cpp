// complift: train component models, sample compositions, filter them with
// lift scores, run MCMC baselines, and benchmark everything.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "complift/commands.hpp"

namespace {

using complift::cli::json;

// --config file.json: a flat object whose keys are long option names of the
// selected subcommand (underscores or dashes). Arrays become repeated values.
class json_config : public CLI::Config {
public:
    explicit json_config(const CLI::App* app) : app_(app) {}

    std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
        json out = json::object();
        for (const CLI::Option* opt : app->get_options({})) {
            if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
            const auto& name = opt->get_lnames().front();
            if (opt->count() > 0) {
                const auto& r = opt->results();
                out[name] = r.size() == 1 ? json(r.front()) : json(r);
            } else if (default_also && !opt->get_default_str().empty()) {
                out[name] = opt->get_default_str();
            }
        }
        return out.dump(2) + "\n";
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
        json j;
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
        }
        if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
        std::vector<CLI::ConfigItem> items;
        for (const auto& [key, value] : j.items()) {
            CLI::ConfigItem item;
            if (const auto subs = app_->get_subcommands(); !subs.empty()) item.parents = {subs.front()->get_name()};
            item.name = key;
            for (auto& ch : item.name)
                if (ch == '_') ch = '-';
            const auto scalar = [&](const json& v) -> std::string {
                if (v.is_string()) return v.get<std::string>();
                if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
                if (v.is_number()) return v.dump();
                throw CLI::ConversionError("config key '" + key + "' must be a scalar or an array of scalars");
            };
            if (value.is_array())
                for (const auto& v : value) item.inputs.push_back(scalar(v));
            else
                item.inputs.push_back(scalar(value));
            items.push_back(std::move(item));
        }
        return items;
    }

private:
    const CLI::App* app_;
};

// CLI11 reads config files only at the top level; move `--config X` given
// after the subcommand to the front.
std::vector<std::string> hoist_config(int argc, char** argv) {
    std::vector<std::string> front{argv[0]}, rest;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" && i + 1 < argc) {
            front.push_back(a);
            front.push_back(argv[++i]);
        } else if (a.rfind("--config=", 0) == 0) {
            front.push_back(a);
        } else {
            rest.push_back(a);
        }
    }
    front.insert(front.end(), rest.begin(), rest.end());
    return front;
}

void add_lift(CLI::App* cmd, complift::cli::lift_options& l) {
    cmd->add_option("--trials", l.trials, "Monte Carlo trials per sample")->capture_default_str();
    cmd->add_option("--noise", l.noise, "independent | shared_per_trial | shared_all")->capture_default_str();
    cmd->add_option("--tstrategy", l.tstrategy, "uniform | importance | fixed")->capture_default_str();
    cmd->add_option("--fixed-t", l.fixed_t, "timestep for --tstrategy fixed")->capture_default_str();
    cmd->add_option("--null", l.null, "alpha_surrogate | cached_null | model_null")->capture_default_str();
    cmd->add_option("--alpha", l.alpha, "surrogate scale for the unconditional prediction")->capture_default_str();
    cmd->add_option("--lift-seed", l.seed, "seed for the lift estimator")->capture_default_str();
}

void add_mcmc(CLI::App* cmd, complift::cli::mcmc_options& m) {
    cmd->add_option("--sampler", m.sampler, "ula | uhmc | mala | hmc")->capture_default_str();
    cmd->add_option("--steps-per-level", m.steps_per_level)->capture_default_str();
    cmd->add_option("--step-size", m.step_size)->capture_default_str();
    cmd->add_option("--leapfrog", m.leapfrog)->capture_default_str();
    cmd->add_option("--mass", m.mass)->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    namespace cl = complift::cli;
    CLI::App app{"Lift-score rejection sampling for compositional diffusion"};
    app.set_version_flag("--version", std::string(COMPLIFT_VERSION));
    app.require_subcommand(1);
    app.set_config("--config", "", "JSON file with option values for the subcommand");
    app.config_formatter(std::make_shared<json_config>(&app));

    cl::train_options train;
    auto* c_train = app.add_subcommand("train", "Train both component models of a scenario");
    c_train->add_option("--scenario", train.scenario)->required();
    c_train->add_option("--out", train.out, "checkpoint directory")->required();
    c_train->add_option("--steps", train.steps)->capture_default_str();
    c_train->add_option("--batch", train.batch)->capture_default_str();
    c_train->add_option("--lr", train.lr)->capture_default_str();
    c_train->add_option("--cosine", train.cosine, "cosine learning-rate decay")->capture_default_str();
    c_train->add_option("--timesteps", train.timesteps)->capture_default_str();
    c_train->add_option("--dataset-size", train.dataset_size)->capture_default_str();
    c_train->add_option("--seed", train.seed)->capture_default_str();
    c_train->add_option("--jobs", train.jobs, "0 = all cores")->capture_default_str();

    cl::sample_options sample;
    auto* c_sample = app.add_subcommand("sample", "Generate composed samples");
    c_sample->add_option("--scenario", sample.scenario)->required();
    c_sample->add_option("--models-dir", sample.models_dir)->required();
    c_sample->add_option("--out", sample.out)->required();
    c_sample->add_option("-n,--n", sample.n)->capture_default_str();
    c_sample->add_flag("--record", sample.record, "write a prediction cache for cached filtering");
    c_sample->add_option("--gamma", sample.gamma, "negation weight")->capture_default_str();
    c_sample->add_option("--temperature", sample.temperature, "mixture temperature")->capture_default_str();
    c_sample->add_option("--seed", sample.seed)->capture_default_str();
    c_sample->add_option("--jobs", sample.jobs)->capture_default_str();

    cl::filter_options filter;
    auto* c_filter = app.add_subcommand("filter", "Accept or reject samples by composed lift");
    c_filter->add_option("--scenario", filter.scenario)->required();
    c_filter->add_option("--method", filter.method, "naive | cached")->capture_default_str();
    c_filter->add_option("--models-dir", filter.models_dir);
    c_filter->add_option("--samples", filter.samples, "samples.csv for naive filtering");
    c_filter->add_option("--cache", filter.cache, "cache directory for cached filtering");
    c_filter->add_option("--out", filter.out)->required();
    c_filter->add_option("--jobs", filter.jobs)->capture_default_str();
    add_lift(c_filter, filter.lift);

    cl::mcmc_run_options mcmc;
    auto* c_mcmc = app.add_subcommand("mcmc", "Annealed MCMC on composed energies");
    c_mcmc->add_option("--scenario", mcmc.scenario)->required();
    c_mcmc->add_option("--models-dir", mcmc.models_dir)->required();
    c_mcmc->add_option("--out", mcmc.out)->required();
    c_mcmc->add_option("-n,--n", mcmc.n)->capture_default_str();
    c_mcmc->add_option("--gamma", mcmc.gamma)->capture_default_str();
    c_mcmc->add_option("--temperature", mcmc.temperature)->capture_default_str();
    c_mcmc->add_option("--seed", mcmc.seed)->capture_default_str();
    c_mcmc->add_option("--jobs", mcmc.jobs)->capture_default_str();
    add_mcmc(c_mcmc, mcmc.mcmc);

    cl::eval_options ev;
    auto* c_eval = app.add_subcommand("eval", "Accuracy and Chamfer distance of a sample file");
    c_eval->add_option("--scenario", ev.scenario)->required();
    c_eval->add_option("--samples", ev.samples)->required();
    c_eval->add_option("--out", ev.out)->required();
    c_eval->add_option("--reference-size", ev.reference_size)->capture_default_str();
    c_eval->add_option("--seed", ev.seed)->capture_default_str();

    cl::bench_options bench;
    auto* c_bench = app.add_subcommand("bench", "Run every method on every scenario");
    c_bench->add_option("--models-dir", bench.models_dir)->required();
    c_bench->add_option("--out", bench.out)->required();
    c_bench->add_option("--scenario", bench.scenarios, "repeatable; default all");
    c_bench->add_option("--method", bench.methods, "repeatable; default all");
    c_bench->add_option("-n,--n", bench.n)->capture_default_str();
    c_bench->add_option("--gamma", bench.gamma)->capture_default_str();
    c_bench->add_option("--temperature", bench.temperature)->capture_default_str();
    c_bench->add_option("--seed", bench.seed)->capture_default_str();
    c_bench->add_option("--jobs", bench.jobs)->capture_default_str();
    add_lift(c_bench, bench.lift);
    add_mcmc(c_bench, bench.mcmc);

    cl::ablate_options ablate;
    auto* c_ablate = app.add_subcommand("ablate", "Noise or timestep strategy ablation");
    c_ablate->add_option("--kind", ablate.kind, "noise | timestep")->capture_default_str();
    c_ablate->add_option("--scenario", ablate.scenario)->capture_default_str();
    c_ablate->add_option("--models-dir", ablate.models_dir)->required();
    c_ablate->add_option("--out", ablate.out)->required();
    c_ablate->add_option("--grid", ablate.grid, "trial counts")->capture_default_str();
    c_ablate->add_option("--fixed", ablate.fixed, "fixed timesteps for --kind timestep")->capture_default_str();
    c_ablate->add_option("-n,--n", ablate.n)->capture_default_str();
    c_ablate->add_option("--seed", ablate.seed)->capture_default_str();
    c_ablate->add_option("--jobs", ablate.jobs)->capture_default_str();
    add_lift(c_ablate, ablate.lift);

    cl::pixellift_options pix;
    auto* c_pix = app.add_subcommand("pixellift", "Per-pixel lift counts and verdict from a latent cache");
    c_pix->add_option("--cache", pix.cache)->required();
    c_pix->add_option("--out", pix.out)->required();
    c_pix->add_option("--expr", pix.expr, "composition over condition names or cond{k}; default all conditions");
    c_pix->add_option("--tau", pix.tau, "activated-pixel threshold")->capture_default_str();
    c_pix->add_flag("--raw-eps", pix.raw_eps, "use the recorded noise instead of the implied noise");

    try {
        auto args = hoist_config(argc, argv);
        std::reverse(args.begin() + 1, args.end());
        args.erase(args.begin());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*c_train) cl::cmd_train(train);
        else if (*c_sample) cl::cmd_sample(sample);
        else if (*c_filter) cl::cmd_filter(filter);
        else if (*c_mcmc) cl::cmd_mcmc(mcmc);
        else if (*c_eval) std::cout << cl::cmd_eval(ev).dump(2) << '\n';
        else if (*c_bench) cl::cmd_bench(bench);
        else if (*c_ablate) cl::cmd_ablate(ablate);
        else if (*c_pix) std::cout << (cl::cmd_pixellift(pix).accept ? "accept" : "reject") << '\n';
    } catch (const complift::error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

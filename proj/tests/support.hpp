#pragma once

// Helpers shared by the test binaries: scratch directories, small trained
// models, expression enumeration and a reference boolean evaluator.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "complift/algebra.hpp"
#include "complift/distributions.hpp"
#include "complift/energy_net.hpp"
#include "complift/rng.hpp"
#include "complift/schedule.hpp"

namespace complift::fixtures {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class scratch_dir {
public:
    explicit scratch_dir(const std::string& tag = "t") {
        static std::atomic<int> counter{0};
        std::random_device rd;
        path_ = fs::temp_directory_path() /
                ("complift_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
        fs::create_directories(path_);
    }
    ~scratch_dir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    scratch_dir(const scratch_dir&) = delete;
    scratch_dir& operator=(const scratch_dir&) = delete;
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& s) const { return path_ / s; }

private:
    fs::path path_;
};

// Untrained-but-initialized network; enough for structural tests.
inline energy_net random_net(std::uint64_t seed, std::string condition = "c", int hidden = 32, int steps = 50) {
    energy_net n(net_architecture{2, hidden, 16}, diffusion_schedule::linear(steps), std::move(condition));
    n.initialize(seed);
    return n;
}

// A few hundred Adam steps on one component of a scenario.
inline energy_net quick_model(const std::string& scenario, int component, int steps = 300, std::uint64_t seed = 1) {
    const auto sc = eval::find_scenario(scenario);
    rng_stream data_rng(seed + 100 + static_cast<std::uint64_t>(component), 0);
    const auto data = eval::sample_dataset(sc.components[static_cast<std::size_t>(component)], 2000, data_rng);
    train_config cfg;
    cfg.steps = steps;
    cfg.seed = seed + 7 + static_cast<std::uint64_t>(component);
    cfg.arch = net_architecture{2, 32, 16};
    return train(data, diffusion_schedule::linear(50), cfg, "c" + std::to_string(component + 1)).model;
}

// Every expression with exactly `nodes` nodes over the given variables,
// using binary and/or and unary negation.
inline std::vector<algebra::expr> expressions_of_size(int nodes, const std::vector<std::string>& vars) {
    using algebra::expr;
    static std::map<std::pair<int, std::size_t>, std::vector<expr>> memo;
    const auto key = std::make_pair(nodes, vars.size());
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    std::vector<expr> out;
    if (nodes == 1) {
        for (const auto& v : vars) out.push_back(expr::literal(v));
    } else {
        for (const auto& c : expressions_of_size(nodes - 1, vars)) out.push_back(expr::negate(c));
        for (int left = 1; left <= nodes - 2; ++left) {
            const auto ls = expressions_of_size(left, vars);
            const auto rs = expressions_of_size(nodes - 1 - left, vars);
            for (const auto& l : ls)
                for (const auto& r : rs) {
                    out.push_back(expr::all_of({l, r}));
                    out.push_back(expr::any_of({l, r}));
                }
        }
    }
    memo[key] = out;
    return out;
}

// Truth-table semantics: a condition holds when its lift is positive.
inline bool truth_oracle(const algebra::expr& e, const std::map<std::string, double>& lifts) {
    using algebra::node_kind;
    switch (e.kind) {
    case node_kind::literal: return lifts.at(e.name) > 0.0;
    case node_kind::negation: return !truth_oracle(e.children[0], lifts);
    case node_kind::conjunction:
        for (const auto& c : e.children)
            if (!truth_oracle(c, lifts)) return false;
        return true;
    case node_kind::disjunction:
        for (const auto& c : e.children)
            if (truth_oracle(c, lifts)) return true;
        return false;
    }
    return false;
}

// Nonzero lifts with random sign and magnitude spread over several decades.
inline std::map<std::string, double> random_lifts(std::mt19937_64& g, const std::vector<std::string>& vars) {
    std::uniform_real_distribution<double> mag(-6.0, 2.0);
    std::bernoulli_distribution sign(0.5);
    std::map<std::string, double> out;
    for (const auto& v : vars) out[v] = (sign(g) ? 1.0 : -1.0) * std::pow(10.0, mag(g));
    return out;
}

}  // namespace complift::fixtures

#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <numeric>
#include <string>
#include <vector>

#include "complift/error.hpp"
#include "complift/rng.hpp"

namespace complift {

// Last `window` per-sample losses seen at each timestep.
class loss_history {
public:
    static constexpr std::size_t window = 10;

    loss_history() = default;
    explicit loss_history(int steps) : per_t_(static_cast<std::size_t>(steps)) {}

    int steps() const noexcept { return static_cast<int>(per_t_.size()); }

    void record(int t, double loss) {
        auto& q = per_t_.at(static_cast<std::size_t>(t - 1));
        q.push_back(loss);
        if (q.size() > window) q.pop_front();
    }

    const std::deque<double>& at(int t) const { return per_t_.at(static_cast<std::size_t>(t - 1)); }

    bool warmed_up() const {
        if (per_t_.empty()) return false;
        for (const auto& q : per_t_)
            if (q.size() < window) return false;
        return true;
    }

    // p_t proportional to sqrt(mean of squared recent losses).
    std::vector<double> importance_weights() const {
        std::vector<double> w(per_t_.size());
        for (std::size_t i = 0; i < per_t_.size(); ++i) {
            const auto& q = per_t_[i];
            double sq = 0.0;
            for (double v : q) sq += v * v;
            w[i] = q.empty() ? 0.0 : std::sqrt(sq / static_cast<double>(q.size()));
        }
        const double total = std::accumulate(w.begin(), w.end(), 0.0);
        if (total > 0.0)
            for (auto& v : w) v /= total;
        return w;
    }

private:
    std::vector<std::deque<double>> per_t_;
};

enum class timestep_strategy { uniform, fixed, importance };

inline const char* to_string(timestep_strategy s) {
    switch (s) {
    case timestep_strategy::uniform: return "uniform";
    case timestep_strategy::fixed: return "fixed";
    case timestep_strategy::importance: return "importance";
    }
    return "?";
}

inline timestep_strategy parse_timestep_strategy(const std::string& s) {
    if (s == "uniform") return timestep_strategy::uniform;
    if (s == "fixed") return timestep_strategy::fixed;
    if (s == "importance") return timestep_strategy::importance;
    throw config_error("unknown timestep strategy '" + s + "'");
}

// Draws ELBO-estimation timesteps in [1, steps]. Importance sampling falls
// back to uniform until every timestep has a full loss window.
class timestep_sampler {
public:
    timestep_sampler() = default;

    timestep_sampler(timestep_strategy strategy, int steps, int fixed_t = 1, const loss_history* history = nullptr)
        : strategy_(strategy), steps_(steps), fixed_t_(fixed_t) {
        if (steps < 1) throw config_error("timestep sampler needs steps >= 1");
        if (strategy == timestep_strategy::fixed && (fixed_t < 1 || fixed_t > steps))
            throw config_error("fixed timestep " + std::to_string(fixed_t) + " outside [1, " +
                               std::to_string(steps) + "]");
        if (strategy == timestep_strategy::importance) {
            if (history && history->steps() == steps && history->warmed_up()) {
                const auto w = history->importance_weights();
                cdf_.resize(w.size());
                std::partial_sum(w.begin(), w.end(), cdf_.begin());
            } else {
                strategy_ = timestep_strategy::uniform;
                fell_back_ = true;
            }
        }
    }

    timestep_strategy effective_strategy() const noexcept { return strategy_; }
    bool fell_back() const noexcept { return fell_back_; }
    int steps() const noexcept { return steps_; }

    // Probability of drawing t (exact, for tests and reporting).
    double probability(int t) const {
        switch (strategy_) {
        case timestep_strategy::uniform: return 1.0 / steps_;
        case timestep_strategy::fixed: return t == fixed_t_ ? 1.0 : 0.0;
        case timestep_strategy::importance: {
            const auto i = static_cast<std::size_t>(t - 1);
            return cdf_[i] - (i == 0 ? 0.0 : cdf_[i - 1]);
        }
        }
        return 0.0;
    }

    int operator()(rng_stream& rng) const {
        switch (strategy_) {
        case timestep_strategy::uniform: return rng.uniform_int(1, steps_);
        case timestep_strategy::fixed: return fixed_t_;
        case timestep_strategy::importance: {
            const double u = rng.uniform() * cdf_.back();
            std::size_t i = 0;
            while (i + 1 < cdf_.size() && cdf_[i] <= u) ++i;
            return static_cast<int>(i) + 1;
        }
        }
        return 1;
    }

private:
    timestep_strategy strategy_ = timestep_strategy::uniform;
    int steps_ = 1;
    int fixed_t_ = 1;
    bool fell_back_ = false;
    std::vector<double> cdf_;
};

}  // namespace complift

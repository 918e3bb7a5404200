#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "complift/error.hpp"

namespace complift {

// Discrete DDPM noise schedule. Timesteps are 1-based: t in [1, T].
class diffusion_schedule {
public:
    diffusion_schedule() = default;

    explicit diffusion_schedule(std::vector<double> betas) : betas_(std::move(betas)) {
        if (betas_.empty()) throw config_error("schedule needs at least one timestep");
        alpha_bar_.resize(betas_.size());
        double prod = 1.0;
        for (std::size_t i = 0; i < betas_.size(); ++i) {
            if (!(betas_[i] > 0.0 && betas_[i] < 1.0)) throw config_error("beta must lie in (0, 1)");
            prod *= 1.0 - betas_[i];
            alpha_bar_[i] = prod;
        }
    }

    static diffusion_schedule linear(int steps, double beta_min = 1e-4, double beta_max = 0.02) {
        if (steps < 1) throw config_error("schedule needs T >= 1");
        if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0))
            throw config_error("need 0 < beta_min <= beta_max < 1");
        std::vector<double> betas(static_cast<std::size_t>(steps));
        for (int i = 0; i < steps; ++i) {
            const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
            betas[static_cast<std::size_t>(i)] = beta_min + frac * (beta_max - beta_min);
        }
        return diffusion_schedule(std::move(betas));
    }

    int steps() const noexcept { return static_cast<int>(betas_.size()); }
    std::span<const double> betas() const noexcept { return betas_; }

    double beta(int t) const { return betas_[index(t)]; }
    double alpha(int t) const { return 1.0 - beta(t); }
    double alpha_bar(int t) const { return alpha_bar_[index(t)]; }
    // Convention: alpha_bar(0) == 1.
    double alpha_bar_prev(int t) const { return t <= 1 ? 1.0 : alpha_bar(t - 1); }
    double sigma(int t) const { return std::sqrt(1.0 - alpha_bar(t)); }

    // x_t = sqrt(abar) x0 + sqrt(1 - abar) eps
    template <class A, class B>
    auto add_noise(const Eigen::MatrixBase<A>& x0, int t, const Eigen::MatrixBase<B>& eps) const {
        using S = typename A::Scalar;
        const double ab = alpha_bar(t);
        return (static_cast<S>(std::sqrt(ab)) * x0 + static_cast<S>(std::sqrt(1.0 - ab)) * eps).eval();
    }

    // Inverse of add_noise: the noise implied by (x_t, x0).
    template <class A, class B>
    auto recover_eps(const Eigen::MatrixBase<A>& xt, const Eigen::MatrixBase<B>& x0, int t) const {
        using S = typename A::Scalar;
        const double ab = alpha_bar(t);
        if (!(ab < 1.0)) throw numerical_error("recover_eps: alpha_bar is 1 at t=" + std::to_string(t));
        return ((xt - static_cast<S>(std::sqrt(ab)) * x0) / static_cast<S>(std::sqrt(1.0 - ab))).eval();
    }

    friend bool operator==(const diffusion_schedule& a, const diffusion_schedule& b) {
        return a.betas_ == b.betas_;
    }

private:
    std::size_t index(int t) const {
        if (t < 1 || t > steps())
            throw config_error("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
        return static_cast<std::size_t>(t - 1);
    }

    std::vector<double> betas_;
    std::vector<double> alpha_bar_;
};

}  // namespace complift

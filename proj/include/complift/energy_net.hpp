#pragma once

// Energy-parameterized denoiser: a scalar MLP E(x, t) whose input gradient is
// the noise prediction eps(x, t) = dE/dx. Energy and input gradient are
// computed together by one explicit forward/backward sweep; training then
// differentiates that composite once more (reverse mode) with respect to the
// parameters.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "complift/error.hpp"
#include "complift/rng.hpp"
#include "complift/schedule.hpp"
#include "complift/timestep_sampling.hpp"

namespace complift {

struct net_architecture {
    int input_dim = 2;
    int hidden = 128;
    int time_dim = 32;  // sinusoidal, half sin / half cos

    friend bool operator==(const net_architecture&, const net_architecture&) = default;
};

template <class Scalar>
struct net_parameters {
    using matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    matrix w1;  // hidden x (input_dim + time_dim)
    vector b1;
    matrix w2;  // hidden x hidden
    vector b2;
    matrix w3;  // hidden x hidden
    vector b3;
    vector w4;  // hidden (output weights)
    Scalar b4 = 0;

    static net_parameters zeros(const net_architecture& a) {
        net_parameters p;
        p.w1 = matrix::Zero(a.hidden, a.input_dim + a.time_dim);
        p.b1 = vector::Zero(a.hidden);
        p.w2 = matrix::Zero(a.hidden, a.hidden);
        p.b2 = vector::Zero(a.hidden);
        p.w3 = matrix::Zero(a.hidden, a.hidden);
        p.b3 = vector::Zero(a.hidden);
        p.w4 = vector::Zero(a.hidden);
        p.b4 = 0;
        return p;
    }

    // Visits every tensor in declared order: w1 b1 w2 b2 w3 b3 w4 b4.
    // Matrices are handed out with their (rows, cols) so callers can emit
    // C-order data.
    template <class Fn>
    void for_each(Fn&& fn) {
        fn(w1.data(), w1.rows(), w1.cols());
        fn(b1.data(), b1.rows(), Eigen::Index{1});
        fn(w2.data(), w2.rows(), w2.cols());
        fn(b2.data(), b2.rows(), Eigen::Index{1});
        fn(w3.data(), w3.rows(), w3.cols());
        fn(b3.data(), b3.rows(), Eigen::Index{1});
        fn(w4.data(), w4.rows(), Eigen::Index{1});
        fn(&b4, Eigen::Index{1}, Eigen::Index{1});
    }
    template <class Fn>
    void for_each(Fn&& fn) const {
        const_cast<net_parameters*>(this)->for_each(
            [&](Scalar* p, Eigen::Index r, Eigen::Index c) { fn(static_cast<const Scalar*>(p), r, c); });
    }

    std::size_t size() const {
        std::size_t n = 0;
        for_each([&](const Scalar*, Eigen::Index r, Eigen::Index c) { n += static_cast<std::size_t>(r * c); });
        return n;
    }

    // Column-major storage, declared order; used by the optimizer.
    std::vector<Scalar> flatten() const {
        std::vector<Scalar> out;
        out.reserve(size());
        for_each([&](const Scalar* p, Eigen::Index r, Eigen::Index c) { out.insert(out.end(), p, p + r * c); });
        return out;
    }

    void unflatten(std::span<const Scalar> flat) {
        std::size_t off = 0;
        for_each([&](Scalar* p, Eigen::Index r, Eigen::Index c) {
            const auto n = static_cast<std::size_t>(r * c);
            std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                      flat.begin() + static_cast<std::ptrdiff_t>(off + n), p);
            off += n;
        });
    }

    bool all_finite() const {
        bool ok = true;
        for_each([&](const Scalar* p, Eigen::Index r, Eigen::Index c) {
            for (Eigen::Index i = 0; i < r * c; ++i) ok = ok && std::isfinite(static_cast<double>(p[i]));
        });
        return ok;
    }

    template <class U>
    net_parameters<U> cast() const {
        net_parameters<U> o;
        o.w1 = w1.template cast<U>();
        o.b1 = b1.template cast<U>();
        o.w2 = w2.template cast<U>();
        o.b2 = b2.template cast<U>();
        o.w3 = w3.template cast<U>();
        o.b3 = b3.template cast<U>();
        o.w4 = w4.template cast<U>();
        o.b4 = static_cast<U>(b4);
        return o;
    }
};

template <class Scalar>
class basic_energy_net {
public:
    using matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using params_type = net_parameters<Scalar>;

    // Columns are evaluated in fixed-width blocks (the last one zero-padded),
    // so a column's result never depends on the batch it arrived in.
    static constexpr Eigen::Index block = 256;

    basic_energy_net() = default;
    basic_energy_net(net_architecture arch, diffusion_schedule schedule, std::string condition)
        : arch_(arch), schedule_(std::move(schedule)), condition_(std::move(condition)),
          params_(params_type::zeros(arch)) {
        if (arch_.input_dim < 1 || arch_.hidden < 1 || arch_.time_dim < 2 || arch_.time_dim % 2 != 0)
            throw config_error("invalid network architecture");
    }

    const net_architecture& architecture() const noexcept { return arch_; }
    const diffusion_schedule& schedule() const noexcept { return schedule_; }
    const std::string& condition() const noexcept { return condition_; }
    void set_condition(std::string c) { condition_ = std::move(c); }
    params_type& params() noexcept { return params_; }
    const params_type& params() const noexcept { return params_; }

    // Uniform-ish fan-in initialization; output bias starts at zero.
    void initialize(std::uint64_t seed) {
        rng_stream rng(seed, 0x1217ULL);
        const auto fill = [&rng](auto& m, double fan_in) {
            const double bound = 1.0 / std::sqrt(fan_in);
            for (Eigen::Index i = 0; i < m.size(); ++i)
                m.data()[i] = static_cast<Scalar>((2.0 * rng.uniform() - 1.0) * bound);
        };
        const double in0 = arch_.input_dim + arch_.time_dim;
        fill(params_.w1, in0);
        fill(params_.b1, in0);
        fill(params_.w2, arch_.hidden);
        fill(params_.b2, arch_.hidden);
        fill(params_.w3, arch_.hidden);
        fill(params_.b3, arch_.hidden);
        fill(params_.w4, arch_.hidden);
        params_.b4 = 0;
    }

    static void time_embedding(int t, int dim, Scalar* out) {
        const int half = dim / 2;
        for (int k = 0; k < half; ++k) {
            const double freq = std::exp(-std::log(10000.0) * k / half);
            out[k] = static_cast<Scalar>(std::sin(t * freq));
            out[k + half] = static_cast<Scalar>(std::cos(t * freq));
        }
    }

    // Intermediates of one block, kept for the parameter backward pass.
    struct workspace {
        matrix h0, a1, a2, a3, h1, h2, h3, d1, d2, d3, g1, g2, g3, u1, u2;
        matrix score;
        vector energy;
    };

    // Fills ws.h0 from x (input_dim x n, n <= block) and per-column t, padded
    // to `block` columns.
    void load_block(workspace& ws, const Eigen::Ref<const matrix>& x, std::span<const int> t) const {
        const Eigen::Index n = x.cols();
        ws.h0.setZero(arch_.input_dim + arch_.time_dim, block);
        ws.h0.topLeftCorner(arch_.input_dim, n) = x;
        for (Eigen::Index j = 0; j < block; ++j) {
            const int tj = j < n ? t[static_cast<std::size_t>(j)] : t[0];
            time_embedding(tj, arch_.time_dim, ws.h0.col(j).data() + arch_.input_dim);
        }
    }

    // Energy and input-gradient for the block already loaded into ws.h0.
    void forward_block(workspace& ws) const {
        const auto act = [](const matrix& a, matrix& h, matrix& d) {
            const auto s = ((-a.array()).exp() + Scalar(1)).inverse().eval();
            h = (a.array() * s).matrix();
            d = (s * (Scalar(1) + a.array() * (Scalar(1) - s))).matrix();
        };
        const auto& p = params_;
        ws.a1.noalias() = p.w1 * ws.h0;
        ws.a1.colwise() += p.b1;
        act(ws.a1, ws.h1, ws.d1);
        ws.a2.noalias() = p.w2 * ws.h1;
        ws.a2.colwise() += p.b2;
        act(ws.a2, ws.h2, ws.d2);
        ws.a3.noalias() = p.w3 * ws.h2;
        ws.a3.colwise() += p.b3;
        act(ws.a3, ws.h3, ws.d3);
        ws.energy.noalias() = ws.h3.transpose() * p.w4;
        ws.energy.array() += p.b4;

        ws.g3 = (ws.d3.array().colwise() * p.w4.array()).matrix();
        ws.u2.noalias() = p.w3.transpose() * ws.g3;
        ws.g2 = (ws.u2.array() * ws.d2.array()).matrix();
        ws.u1.noalias() = p.w2.transpose() * ws.g2;
        ws.g1 = (ws.u1.array() * ws.d1.array()).matrix();
        ws.score.noalias() = p.w1.leftCols(arch_.input_dim).transpose() * ws.g1;
    }

    // Batched evaluation. x is input_dim x n; t has n entries (or one entry
    // shared by all columns). Either output may be null.
    void evaluate(const Eigen::Ref<const matrix>& x, std::span<const int> t, vector* energy, matrix* score) const {
        const Eigen::Index n = x.cols();
        if (x.rows() != arch_.input_dim) throw config_error("input has wrong dimensionality");
        if (t.size() != static_cast<std::size_t>(n) && t.size() != 1)
            throw config_error("timestep count must match column count");
        for (int tv : t)
            if (tv < 1 || tv > schedule_.steps()) throw config_error("timestep outside model range");
        if (energy) energy->resize(n);
        if (score) score->resize(arch_.input_dim, n);
        workspace ws;
        std::vector<int> tb(static_cast<std::size_t>(block));
        for (Eigen::Index c0 = 0; c0 < n; c0 += block) {
            const Eigen::Index len = std::min(block, n - c0);
            for (Eigen::Index j = 0; j < len; ++j)
                tb[static_cast<std::size_t>(j)] = t.size() == 1 ? t[0] : t[static_cast<std::size_t>(c0 + j)];
            load_block(ws, x.middleCols(c0, len), std::span<const int>(tb.data(), static_cast<std::size_t>(len)));
            forward_block(ws);
            if (energy) energy->segment(c0, len) = ws.energy.head(len);
            if (score) score->middleCols(c0, len) = ws.score.leftCols(len);
        }
    }

    void evaluate(const Eigen::Ref<const matrix>& x, int t, vector* energy, matrix* score) const {
        evaluate(x, std::span<const int>(&t, 1), energy, score);
    }

    Scalar energy(const Eigen::Ref<const vector>& x, int t) const {
        vector e;
        evaluate(matrix(x), t, &e, nullptr);
        return e[0];
    }

    vector score(const Eigen::Ref<const vector>& x, int t) const {
        matrix s;
        evaluate(matrix(x), t, nullptr, &s);
        return s.col(0);
    }

    // Reverse-mode pass of L = sum_j <r_j, score_j> over the block in ws
    // (r = dL/dscore, input_dim x block); accumulates into grad.
    void backward_block(const workspace& ws, const matrix& r, params_type& grad) const {
        const auto& p = params_;
        const Eigen::Index in = arch_.input_dim;
        const auto dd = [](const matrix& a) {
            // silu''(a) = s(1-s)(2 + a(1-2s)) with s = sigmoid(a)
            const auto s = ((-a.array()).exp() + Scalar(1)).inverse().eval();
            return (s * (Scalar(1) - s) * (Scalar(2) + a.array() * (Scalar(1) - Scalar(2) * s))).eval();
        };

        // score = w1x^T g1
        matrix gb1 = p.w1.leftCols(in) * r;
        grad.w1.leftCols(in).noalias() += ws.g1 * r.transpose();
        // g1 = u1 * d1
        matrix ub1 = (gb1.array() * ws.d1.array()).matrix();
        matrix ab1 = (gb1.array() * ws.u1.array() * dd(ws.a1)).matrix();
        // u1 = w2^T g2
        matrix gb2 = p.w2 * ub1;
        grad.w2.noalias() += ws.g2 * ub1.transpose();
        matrix ub2 = (gb2.array() * ws.d2.array()).matrix();
        matrix ab2 = (gb2.array() * ws.u2.array() * dd(ws.a2)).matrix();
        // u2 = w3^T g3
        matrix gb3 = p.w3 * ub2;
        grad.w3.noalias() += ws.g3 * ub2.transpose();
        // g3 = w4 * d3
        grad.w4 += (gb3.array() * ws.d3.array()).matrix().rowwise().sum();
        matrix ab3 = ((gb3.array().colwise() * p.w4.array()) * dd(ws.a3)).matrix();

        // Forward chain a3 = w3 h2 + b3, h2 = silu(a2), ...
        grad.b3 += ab3.rowwise().sum();
        grad.w3.noalias() += ab3 * ws.h2.transpose();
        ab2.array() += (p.w3.transpose() * ab3).array() * ws.d2.array();
        grad.b2 += ab2.rowwise().sum();
        grad.w2.noalias() += ab2 * ws.h1.transpose();
        ab1.array() += (p.w2.transpose() * ab2).array() * ws.d1.array();
        grad.b1 += ab1.rowwise().sum();
        grad.w1.noalias() += ab1 * ws.h0.transpose();
    }

    template <class U>
    basic_energy_net<U> cast() const {
        basic_energy_net<U> o(arch_, schedule_, condition_);
        o.params() = params_.template cast<U>();
        return o;
    }

private:
    net_architecture arch_;
    diffusion_schedule schedule_;
    std::string condition_;
    params_type params_;
};

using energy_net = basic_energy_net<float>;

struct train_config {
    int steps = 10000;
    int batch = 256;
    double learning_rate = 1e-3;
    bool cosine_decay = false;  // anneal the rate to zero over `steps`
    std::uint64_t seed = 0;
    net_architecture arch{};

    void validate() const {
        if (steps < 1 || batch < 1 || !(learning_rate > 0.0)) throw config_error("train config values must be positive");
    }
};

struct train_result {
    energy_net model;
    std::vector<double> losses;  // mean batch loss per step
    loss_history history;        // per-timestep per-sample losses
    double seconds = 0.0;

    // Mean batch loss over the first / last `frac` of steps.
    double head_loss(double frac = 0.1) const { return window_mean(0, span_len(frac)); }
    double tail_loss(double frac = 0.1) const {
        const std::size_t n = span_len(frac);
        return window_mean(losses.size() - n, n);
    }

private:
    std::size_t span_len(double frac) const {
        return std::max<std::size_t>(1, static_cast<std::size_t>(static_cast<double>(losses.size()) * frac));
    }
    double window_mean(std::size_t begin, std::size_t n) const {
        double s = 0.0;
        for (std::size_t i = begin; i < begin + n; ++i) s += losses[i];
        return s / static_cast<double>(n);
    }
};

// Adam, beta1 0.9, beta2 0.999, eps 1e-8.
template <class Scalar>
class adam {
public:
    explicit adam(std::size_t n, double lr) : lr_(lr), m_(n, 0.0), v_(n, 0.0) {}

    void set_learning_rate(double lr) { lr_ = lr; }

    void step(std::vector<Scalar>& theta, const std::vector<Scalar>& grad) {
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, t_);
        const double c2 = 1.0 - std::pow(b2_, t_);
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double g = grad[i];
            m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
            v_[i] = b2_ * v_[i] + (1.0 - b2_) * g * g;
            theta[i] = static_cast<Scalar>(theta[i] - lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + 1e-8));
        }
    }

private:
    double lr_;
    double b1_ = 0.9, b2_ = 0.999;
    int t_ = 0;
    std::vector<double> m_, v_;
};

// Minimizes E_{x0,t,eps} || dE/dx(x_t, t) - eps ||^2 with t uniform on [1, T]
// (unit weighting across timesteps). data is input_dim x N.
inline train_result train(const Eigen::MatrixXd& data, const diffusion_schedule& schedule, const train_config& cfg,
                          std::string condition = {}, const std::function<void(int, double)>& progress = {}) {
    cfg.validate();
    if (data.cols() == 0) throw config_error("training dataset is empty");
    if (!data.allFinite()) throw config_error("training dataset contains non-finite values");
    if (data.rows() != cfg.arch.input_dim) throw config_error("dataset dimensionality does not match architecture");
    using matrix = energy_net::matrix;
    const auto started = std::chrono::steady_clock::now();

    train_result out;
    out.model = energy_net(cfg.arch, schedule, std::move(condition));
    out.model.initialize(cfg.seed);
    out.history = loss_history(schedule.steps());
    out.losses.reserve(static_cast<std::size_t>(cfg.steps));

    rng_stream rng(cfg.seed, 1);
    auto theta = out.model.params().flatten();
    adam<float> opt(theta.size(), cfg.learning_rate);
    const Eigen::Index in = cfg.arch.input_dim;
    const Eigen::Index block = energy_net::block;

    energy_net::workspace ws;
    matrix xt(in, block), eps(in, block), r(in, block);
    std::vector<int> ts(static_cast<std::size_t>(block));
    std::vector<double> per_sample(static_cast<std::size_t>(cfg.batch));

    for (int step = 0; step < cfg.steps; ++step) {
        auto grad = energy_net::params_type::zeros(cfg.arch);
        double loss = 0.0;
        for (int c0 = 0; c0 < cfg.batch; c0 += static_cast<int>(block)) {
            const int len = std::min<int>(static_cast<int>(block), cfg.batch - c0);
            for (int j = 0; j < len; ++j) {
                const int idx = rng.uniform_int(0, static_cast<int>(data.cols()) - 1);
                const int t = rng.uniform_int(1, schedule.steps());
                ts[static_cast<std::size_t>(j)] = t;
                const double sa = std::sqrt(schedule.alpha_bar(t));
                const double sn = std::sqrt(1.0 - schedule.alpha_bar(t));
                for (Eigen::Index d = 0; d < in; ++d) {
                    const double e = rng.normal();
                    eps(d, j) = static_cast<float>(e);
                    xt(d, j) = static_cast<float>(sa * data(d, idx) + sn * e);
                }
            }
            out.model.load_block(ws, xt.leftCols(len), std::span<const int>(ts.data(), static_cast<std::size_t>(len)));
            out.model.forward_block(ws);
            r.setZero();
            for (int j = 0; j < len; ++j) {
                const auto diff = (ws.score.col(j) - eps.col(j)).eval();
                const double l = diff.squaredNorm();
                loss += l;
                per_sample[static_cast<std::size_t>(c0 + j)] = l;
                r.col(j) = diff * (2.0f / static_cast<float>(cfg.batch));
            }
            for (int j = 0; j < len; ++j) out.history.record(ts[static_cast<std::size_t>(j)], per_sample[static_cast<std::size_t>(c0 + j)]);
            out.model.backward_block(ws, r, grad);
        }
        loss /= cfg.batch;
        if (!std::isfinite(loss))
            throw numerical_error("training diverged: non-finite loss at step " + std::to_string(step));
        out.losses.push_back(loss);
        if (cfg.cosine_decay)
            opt.set_learning_rate(0.5 * cfg.learning_rate * (1.0 + std::cos(std::numbers::pi * step / cfg.steps)));
        opt.step(theta, grad.flatten());
        out.model.params().unflatten(theta);
        if (progress) progress(step, loss);
    }
    if (!out.model.params().all_finite()) throw numerical_error("training produced non-finite parameters");
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return out;
}

}  // namespace complift

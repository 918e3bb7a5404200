#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

#include "complift/checkpoint.hpp"
#include "complift/energy_net.hpp"
#include "support.hpp"

namespace {

using namespace complift;
using dnet = basic_energy_net<double>;

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double score_fd_max_rel_error(const dnet& net, int points, std::uint64_t seed) {
    rng_stream r(seed);
    double worst = 0.0;
    const double h = 1e-5;
    for (int i = 0; i < points; ++i) {
        Eigen::Vector2d x(2.0 * r.normal(), 2.0 * r.normal());
        const int t = r.uniform_int(1, net.schedule().steps());
        const Eigen::VectorXd an = net.score(x, t);
        Eigen::VectorXd fd(2);
        for (int d = 0; d < 2; ++d) {
            Eigen::Vector2d xp = x, xm = x;
            xp[d] += h;
            xm[d] -= h;
            fd[d] = (net.energy(xp, t) - net.energy(xm, t)) / (2.0 * h);
        }
        worst = std::max(worst, (fd - an).norm() / std::max(an.norm(), 1e-8));
    }
    return worst;
}

TEST(EnergyNet, ScoreMatchesFiniteDifferenceAtRandomInit) {
    const auto net = fixtures::random_net(3).cast<double>();
    EXPECT_LT(score_fd_max_rel_error(net, 100, 17), 1e-4);
}

TEST(EnergyNet, ScoreMatchesFiniteDifferenceAfterTraining) {
    const auto net = fixtures::quick_model("product_a", 0, 200).cast<double>();
    EXPECT_LT(score_fd_max_rel_error(net, 100, 18), 1e-4);
}

TEST(EnergyNet, ParameterGradientMatchesFiniteDifference) {
    const auto net = fixtures::random_net(5, "c", 16).cast<double>();
    rng_stream r(2);
    const Eigen::Index n = 7;
    Eigen::MatrixXd x(2, n), res = Eigen::MatrixXd::Zero(2, dnet::block);
    std::vector<int> ts(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) {
        x(0, j) = r.normal();
        x(1, j) = r.normal();
        res(0, j) = r.normal();
        res(1, j) = r.normal();
        ts[static_cast<std::size_t>(j)] = r.uniform_int(1, 50);
    }
    const auto loss = [&](const dnet& m) {
        Eigen::MatrixXd s;
        m.evaluate(x, ts, nullptr, &s);
        return (s.array() * res.leftCols(n).array()).sum();
    };
    dnet::workspace ws;
    net.load_block(ws, x, ts);
    net.forward_block(ws);
    auto grad = dnet::params_type::zeros(net.architecture());
    net.backward_block(ws, res, grad);
    const auto g = grad.flatten();
    const auto theta = net.params().flatten();
    const double h = 1e-6;
    double worst = 0.0;
    for (std::size_t i = 0; i < theta.size(); i += 7) {
        dnet p = net, m = net;
        auto tp = theta, tm = theta;
        tp[i] += h;
        tm[i] -= h;
        p.params().unflatten(tp);
        m.params().unflatten(tm);
        const double fd = (loss(p) - loss(m)) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-6}));
    }
    EXPECT_LT(worst, 1e-5);
}

TEST(EnergyNet, BatchAndSingleEvaluationsAreBitIdentical) {
    const auto net = fixtures::random_net(7);
    rng_stream r(1);
    energy_net::matrix x(2, 600);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(r.normal());
    std::vector<int> ts(600);
    for (auto& t : ts) t = r.uniform_int(1, 50);
    energy_net::vector e;
    energy_net::matrix s;
    net.evaluate(x, ts, &e, &s);
    for (Eigen::Index j : {0, 1, 255, 256, 300, 599}) {
        const auto col = net.score(x.col(j), ts[static_cast<std::size_t>(j)]);
        EXPECT_EQ(col[0], s(0, j));
        EXPECT_EQ(col[1], s(1, j));
        EXPECT_EQ(net.energy(x.col(j), ts[static_cast<std::size_t>(j)]), e[j]);
    }
    // A sub-batch gives the same bits as the full batch.
    energy_net::matrix s2;
    net.evaluate(x.middleCols(100, 50), std::span<const int>(ts.data() + 100, 50), nullptr, &s2);
    EXPECT_TRUE((s2.array() == s.middleCols(100, 50).array()).all());
}

TEST(EnergyNet, RejectsBadInputs) {
    const auto net = fixtures::random_net(7);
    energy_net::matrix x(3, 4);
    x.setZero();
    EXPECT_THROW(net.evaluate(x, 1, nullptr, nullptr), config_error);
    energy_net::matrix y = energy_net::matrix::Zero(2, 4);
    EXPECT_THROW(net.evaluate(y, 0, nullptr, nullptr), config_error);
    EXPECT_THROW(net.evaluate(y, 51, nullptr, nullptr), config_error);
    std::vector<int> ts{1, 2};
    EXPECT_THROW(net.evaluate(y, ts, nullptr, nullptr), config_error);
    EXPECT_THROW(energy_net(net_architecture{2, 8, 3}, diffusion_schedule::linear(5), "c"), config_error);
}

TEST(Training, LossDecreases) {
    const auto sc = eval::find_scenario("product_a");
    rng_stream dr(1);
    const auto data = eval::sample_dataset(sc.components[0], 2000, dr);
    train_config cfg;
    cfg.steps = 400;
    cfg.arch = net_architecture{2, 32, 16};
    const auto res = train(data, diffusion_schedule::linear(50), cfg, "c1");
    EXPECT_LT(res.tail_loss(), res.head_loss());
    EXPECT_TRUE(res.history.warmed_up());
}

TEST(Training, SameSeedGivesIdenticalCheckpointBytes) {
    fixtures::scratch_dir dir("det");
    for (const auto* name : {"a.ckpt", "b.ckpt"}) {
        const auto m = fixtures::quick_model("negation_a", 1, 150, 42);
        save_checkpoint(m, dir / name, checkpoint_info{42, {}, std::nullopt});
    }
    const auto a = slurp(dir / "a.ckpt"), b = slurp(dir / "b.ckpt");
    ASSERT_FALSE(a.empty());
    EXPECT_EQ(a, b);
    const auto c = fixtures::quick_model("negation_a", 1, 150, 43);
    save_checkpoint(c, dir / "c.ckpt", checkpoint_info{43, {}, std::nullopt});
    EXPECT_NE(a, slurp(dir / "c.ckpt"));
}

TEST(Training, CosineDecayChangesTheResult) {
    const auto sc = eval::find_scenario("product_a");
    rng_stream dr(1);
    const auto data = eval::sample_dataset(sc.components[0], 500, dr);
    train_config cfg;
    cfg.steps = 50;
    cfg.arch = net_architecture{2, 16, 8};
    const auto plain = train(data, diffusion_schedule::linear(10), cfg);
    cfg.cosine_decay = true;
    const auto cosine = train(data, diffusion_schedule::linear(10), cfg);
    EXPECT_EQ(plain.losses.front(), cosine.losses.front());
    EXPECT_NE(plain.model.params().flatten(), cosine.model.params().flatten());
}

TEST(Training, RejectsBadConfig) {
    Eigen::MatrixXd data = Eigen::MatrixXd::Zero(2, 10);
    train_config cfg;
    cfg.steps = 0;
    EXPECT_THROW(train(data, diffusion_schedule::linear(5), cfg), config_error);
    cfg.steps = 1;
    EXPECT_THROW(train(Eigen::MatrixXd(2, 0), diffusion_schedule::linear(5), cfg), config_error);
    data(0, 0) = std::nan("");
    EXPECT_THROW(train(data, diffusion_schedule::linear(5), cfg), config_error);
}

TEST(Checkpoint, RoundTripPreservesEverything) {
    fixtures::scratch_dir dir("ckpt");
    const auto sc = eval::find_scenario("product_a");
    rng_stream dr(1);
    train_config cfg;
    cfg.steps = 30;
    cfg.arch = net_architecture{2, 16, 8};
    const auto res = train(eval::sample_dataset(sc.components[0], 300, dr), diffusion_schedule::linear(20), cfg, "c1");
    checkpoint_info info;
    info.seed = 9;
    info.train = {{"steps", 30}};
    info.history = res.history;
    save_checkpoint(res.model, dir / "m.ckpt", info);
    checkpoint_info back;
    const auto m = load_checkpoint(dir / "m.ckpt", &back);
    EXPECT_EQ(m.params().flatten(), res.model.params().flatten());
    EXPECT_EQ(m.condition(), "c1");
    EXPECT_TRUE(m.schedule() == res.model.schedule());
    EXPECT_EQ(back.seed, 9u);
    EXPECT_EQ(back.train["steps"], 30);
    ASSERT_TRUE(back.history);
    for (int t = 1; t <= 20; ++t) EXPECT_EQ(back.history->at(t), res.history.at(t));
}

TEST(Checkpoint, CorruptionIsReported) {
    fixtures::scratch_dir dir("ckpt");
    const auto net = fixtures::random_net(1);
    save_checkpoint(net, dir / "m.ckpt");
    const auto bytes = slurp(dir / "m.ckpt");
    {
        std::ofstream out(dir / "trunc.ckpt", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 8));
    }
    EXPECT_THROW(load_checkpoint(dir / "trunc.ckpt"), config_error);
    {
        std::ofstream out(dir / "junk.ckpt", std::ios::binary);
        out << "not json\n";
    }
    EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), config_error);
    try {
        load_checkpoint(dir / "absent.ckpt");
        FAIL();
    } catch (const error& e) {
        EXPECT_EQ(e.exit_code(), 3);
    }
}

}  // namespace

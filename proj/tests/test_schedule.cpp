#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "complift/rng.hpp"
#include "complift/schedule.hpp"
#include "complift/timestep_sampling.hpp"

namespace {

using namespace complift;

TEST(Schedule, LinearEndpointsAndAlphaBar) {
    const auto s = diffusion_schedule::linear(50);
    EXPECT_EQ(s.steps(), 50);
    EXPECT_DOUBLE_EQ(s.beta(1), 1e-4);
    EXPECT_DOUBLE_EQ(s.beta(50), 0.02);
    double prod = 1.0;
    for (int t = 1; t <= 50; ++t) {
        prod *= 1.0 - s.beta(t);
        EXPECT_NEAR(s.alpha_bar(t), prod, 1e-15);
        if (t > 1) EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    }
    EXPECT_DOUBLE_EQ(s.alpha_bar_prev(1), 1.0);
}

TEST(Schedule, RejectsBadInput) {
    EXPECT_THROW(diffusion_schedule::linear(0), config_error);
    EXPECT_THROW(diffusion_schedule(std::vector<double>{0.1, 1.0}), config_error);
    EXPECT_THROW(diffusion_schedule(std::vector<double>{}), config_error);
    EXPECT_THROW(diffusion_schedule::linear(10).alpha_bar(0), config_error);
    EXPECT_THROW(diffusion_schedule::linear(10).alpha_bar(11), config_error);
}

TEST(Schedule, AddNoiseRecoverEpsRoundTrip) {
    const auto s = diffusion_schedule::linear(50);
    rng_stream r(3);
    Eigen::MatrixXd x0(2, 40), eps(2, 40);
    for (Eigen::Index i = 0; i < x0.size(); ++i) {
        x0.data()[i] = 3.0 * r.normal();
        eps.data()[i] = r.normal();
    }
    for (int t = 1; t <= 50; ++t) {
        const auto xt = s.add_noise(x0, t, eps);
        const auto back = s.recover_eps(xt, x0, t);
        EXPECT_LT((back - eps).cwiseAbs().maxCoeff() / eps.cwiseAbs().maxCoeff(), 1e-6) << t;
    }
}

TEST(TimestepSampler, UniformChiSquare) {
    timestep_sampler ts(timestep_strategy::uniform, 50);
    rng_stream r(5);
    std::vector<int> hist(50, 0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++hist[static_cast<std::size_t>(ts(r) - 1)];
    double chi2 = 0.0;
    const double expect = n / 50.0;
    for (int c : hist) chi2 += (c - expect) * (c - expect) / expect;
    // 49 degrees of freedom; p = 0.001 critical value is about 85.4.
    EXPECT_LT(chi2, 85.4);
}

TEST(TimestepSampler, FixedAlwaysReturnsT) {
    timestep_sampler ts(timestep_strategy::fixed, 50, 17);
    rng_stream r(5);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(ts(r), 17);
    EXPECT_EQ(r.int_draws(), 0u);
    EXPECT_THROW(timestep_sampler(timestep_strategy::fixed, 50, 51), config_error);
}

TEST(TimestepSampler, ImportanceFollowsLossWeights) {
    loss_history h(4);
    for (int k = 0; k < 10; ++k) {
        h.record(1, 1.0);
        h.record(2, 2.0);
        h.record(3, 3.0);
        h.record(4, 4.0);
    }
    timestep_sampler ts(timestep_strategy::importance, 4, 1, &h);
    ASSERT_EQ(ts.effective_strategy(), timestep_strategy::importance);
    for (int t = 1; t <= 4; ++t) EXPECT_NEAR(ts.probability(t), t / 10.0, 1e-12);
    rng_stream r(9);
    std::vector<int> hist(4, 0);
    const int n = 200000;
    for (int i = 0; i < n; ++i) ++hist[static_cast<std::size_t>(ts(r) - 1)];
    double chi2 = 0.0;
    for (int t = 1; t <= 4; ++t) {
        const double e = n * t / 10.0;
        chi2 += (hist[static_cast<std::size_t>(t - 1)] - e) * (hist[static_cast<std::size_t>(t - 1)] - e) / e;
    }
    EXPECT_LT(chi2, 16.27);  // 3 dof, p = 0.001
}

TEST(TimestepSampler, ImportanceFallsBackBeforeWarmUp) {
    loss_history h(4);
    h.record(1, 1.0);
    timestep_sampler ts(timestep_strategy::importance, 4, 1, &h);
    EXPECT_TRUE(ts.fell_back());
    EXPECT_EQ(ts.effective_strategy(), timestep_strategy::uniform);
    timestep_sampler none(timestep_strategy::importance, 4);
    EXPECT_TRUE(none.fell_back());
}

TEST(LossHistory, KeepsLastWindow) {
    loss_history h(2);
    for (int k = 0; k < 25; ++k) h.record(1, k);
    ASSERT_EQ(h.at(1).size(), loss_history::window);
    EXPECT_DOUBLE_EQ(h.at(1).front(), 15.0);
    EXPECT_FALSE(h.warmed_up());
}

TEST(Rng, StreamsIndependentOfBatching) {
    auto a = make_streams(4, 10);
    auto b = make_streams(4, 5, 5);
    for (int k = 0; k < 5; ++k) EXPECT_EQ(a[5 + static_cast<std::size_t>(k)].next_u64(), b[static_cast<std::size_t>(k)].next_u64());
    rng_stream x(1, 2), y(1, 2), z(1, 3);
    EXPECT_EQ(x.next_u64(), y.next_u64());
    EXPECT_NE(rng_stream(1, 2).next_u64(), z.next_u64());
}

}  // namespace

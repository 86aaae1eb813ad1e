#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "archtune/controller/controller.hpp"
#include "gradcheck.hpp"

namespace arch = archtune::arch;
namespace ctrl = archtune::ctrl;
namespace nk = archtune::nk;

namespace {

ctrl::ControllerPolicy make_policy(std::size_t k, std::uint64_t seed, ctrl::ControllerConfig cfg = {}) {
    return ctrl::ControllerPolicy(std::vector<int>(k, 2), cfg, nk::Rng(seed));
}

// Gives the classifier random weights so distributions are not uniform.
void randomize_classifier(ctrl::ControllerPolicy& p, nk::Rng& rng, double scale = 1.0) {
    for (auto* prm : p.parameters()) {
        if (prm->name.rfind("ctrl.fc", 0) == 0) {
            for (auto& v : prm->value.data()) v = scale * rng.normal();
        }
    }
}

}  // namespace

TEST(Controller, ZeroClassifierIsUniform) {
    auto policy = make_policy(4, 1);
    nk::Rng rng(2);
    std::vector<int> ones(4, 0);
    const int episodes = 10000;
    for (int e = 0; e < episodes; ++e) {
        const auto traj = ctrl::sample_episode(policy, rng);
        for (std::size_t i = 0; i < 4; ++i) {
            ones[i] += traj.actions[i];
            EXPECT_DOUBLE_EQ(traj.probs[i][0], 0.5);
        }
    }
    for (int n : ones) {
        const double f = static_cast<double>(n) / episodes;
        EXPECT_GE(f, 0.47);
        EXPECT_LE(f, 0.53);
    }
}

TEST(Controller, SamplingIsSeedDeterministic) {
    auto policy = make_policy(8, 3);
    nk::Rng init(4);
    randomize_classifier(policy, init);
    nk::Rng a(9), b(9);
    for (int e = 0; e < 20; ++e) EXPECT_EQ(ctrl::sample_episode(policy, a).actions, ctrl::sample_episode(policy, b).actions);
}

TEST(Controller, DistributionsNormalizeAndLogProbsMatch) {
    auto policy = make_policy(6, 5);
    nk::Rng rng(6);
    randomize_classifier(policy, rng, 3.0);
    for (int e = 0; e < 50; ++e) {
        const auto traj = ctrl::sample_episode(policy, rng);
        ASSERT_EQ(traj.log_probs.size(), 6u);
        double sum_log = 0, prod = 1;
        for (std::size_t t = 0; t < 6; ++t) {
            EXPECT_NEAR(std::accumulate(traj.probs[t].begin(), traj.probs[t].end(), 0.0), 1.0, 1e-12);
            EXPECT_LE(traj.log_probs[t], 0.0);
            sum_log += traj.log_probs[t];
            prod *= traj.probs[t][static_cast<std::size_t>(traj.actions[t])];
        }
        EXPECT_NEAR(std::exp(sum_log), prod, 1e-12);
    }
}

TEST(Controller, GreedyTieBreaksLow) {
    auto policy = make_policy(5, 1);
    EXPECT_EQ(ctrl::greedy_episode(policy).actions, arch::ActionVector::zeros(5));
}

TEST(Controller, GreedyInvariantToTemperatureAndIsTheColdLimit) {
    auto policy = make_policy(8, 7);
    nk::Rng rng(8);
    randomize_classifier(policy, rng, 2.0);
    const auto greedy = ctrl::greedy_episode(policy).actions;
    for (double t : {0.1, 0.5, 2.0, 10.0}) {
        policy.set_temperature(t);
        EXPECT_EQ(ctrl::greedy_episode(policy).actions, greedy);
    }
    policy.set_temperature(1e-9);
    for (int e = 0; e < 20; ++e) EXPECT_EQ(ctrl::sample_episode(policy, rng).actions, greedy);
    EXPECT_THROW(policy.set_temperature(0.0), std::invalid_argument);
}

TEST(Controller, ReturnsFollowTerminalConvention) {
    EXPECT_EQ(ctrl::compute_returns(0.8, 4, 1.0), (std::vector<double>{0.8, 0.8, 0.8, 0.8}));
    EXPECT_EQ(ctrl::compute_returns(1.0, 2, 0.5), (std::vector<double>{0.5, 1.0}));
    EXPECT_EQ(ctrl::compute_returns(0.0, 3, 0.7), (std::vector<double>{0.0, 0.0, 0.0}));
    EXPECT_THROW(ctrl::compute_returns(1.0, 2, 0.0), std::invalid_argument);
    EXPECT_THROW(ctrl::compute_returns(1.0, 2, 1.5), std::invalid_argument);
}

TEST(Controller, RewardIsIdentityOfAccuracy) {
    EXPECT_EQ(ctrl::reward_from_accuracy(0.5), 0.5);
    EXPECT_GT(ctrl::reward_from_accuracy(0.61), ctrl::reward_from_accuracy(0.6));
    EXPECT_THROW(ctrl::reward_from_accuracy(1.2), std::invalid_argument);
}

TEST(Controller, RelativeTotalRewardIsMinMaxOfCumulative) {
    const auto r = ctrl::relative_total_reward({0.5, 0.25, 0.25});
    EXPECT_DOUBLE_EQ(r[0], 0.0);
    EXPECT_DOUBLE_EQ(r[1], 0.5);
    EXPECT_DOUBLE_EQ(r[2], 1.0);
}

TEST(Controller, BaselineIsSeededThenExponential) {
    ctrl::RewardBaseline b(0.5);
    EXPECT_EQ(b.advantage(0.4), 0.0);
    b.update(0.4);
    EXPECT_DOUBLE_EQ(b.advantage(0.8), 0.4);
    b.update(0.8);
    EXPECT_DOUBLE_EQ(*b.value(), 0.6);
}

TEST(Controller, PolicyGradientMatchesFiniteDifferences) {
    nk::Rng rng(10);
    for (int trial = 0; trial < 3; ++trial) {
        ctrl::ControllerConfig cfg;
        cfg.embed_dim = 5;
        cfg.hidden_dim = 4;
        cfg.gamma = trial == 0 ? 1.0 : 0.8;
        auto policy = make_policy(2, 20 + static_cast<std::uint64_t>(trial), cfg);
        randomize_classifier(policy, rng);
        const auto actions = ctrl::sample_episode(policy, rng).actions;
        const double adv = rng.uniform(-1, 1);
        ctrl::objective_gradient(policy, actions, adv);
        double worst = 0;
        const double h = 1e-5;
        for (auto* p : policy.parameters()) {
            for (std::size_t i = 0; i < p->value.size(); ++i) {
                const double orig = p->value[i];
                p->value[i] = orig + h;
                const double up = ctrl::objective(policy, actions, adv);
                p->value[i] = orig - h;
                const double down = ctrl::objective(policy, actions, adv);
                p->value[i] = orig;
                worst = std::max(worst, archtune::testing::rel_error(p->grad[i], (up - down) / (2 * h)));
            }
        }
        EXPECT_LE(worst, 1e-6);
    }
}

TEST(Controller, ZeroAdvantageLeavesPolicyUntouched) {
    auto policy = make_policy(4, 11);
    nk::Rng rng(12);
    randomize_classifier(policy, rng);
    auto opt = ctrl::make_controller_optimizer(policy.config());
    ctrl::RewardBaseline baseline;
    // Prime the optimizer so momentum would otherwise move parameters.
    auto t0 = ctrl::sample_episode(policy, rng);
    t0.reward = 0.3;
    ctrl::reinforce_update(policy, t0, baseline, *opt);
    auto t1 = ctrl::sample_episode(policy, rng);
    t1.reward = 0.9;
    ctrl::reinforce_update(policy, t1, baseline, *opt);
    const auto before = policy.store().checksum();
    auto t2 = ctrl::sample_episode(policy, rng);
    t2.reward = *baseline.value();
    EXPECT_EQ(ctrl::reinforce_update(policy, t2, baseline, *opt), 0.0);
    EXPECT_EQ(policy.store().checksum(), before);
}

TEST(Controller, GreedyTrajectoryRejected) {
    auto policy = make_policy(2, 1);
    auto opt = ctrl::make_controller_optimizer(policy.config());
    ctrl::RewardBaseline baseline;
    auto g = ctrl::greedy_episode(policy);
    EXPECT_THROW(ctrl::reinforce_update(policy, g, baseline, *opt), std::invalid_argument);
}

TEST(Controller, BanditConvergesWithinThreeHundredUpdates) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto policy = make_policy(1, seed);
        auto opt = ctrl::make_controller_optimizer(policy.config());
        ctrl::RewardBaseline baseline;
        nk::Rng rng = nk::Rng(seed).split("bandit");
        for (int u = 0; u < 300; ++u) {
            auto traj = ctrl::sample_episode(policy, rng);
            traj.reward = traj.actions[0] == 1 ? 1.0 : 0.0;
            ctrl::reinforce_update(policy, traj, baseline, *opt);
        }
        EXPECT_GE(ctrl::greedy_episode(policy).probs[0][1], 0.95) << "seed " << seed;
    }
}

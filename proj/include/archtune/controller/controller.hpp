#pragma once

#include <optional>
#include <vector>

#include "archtune/archspace/archspace.hpp"
#include "archtune/numkernel/optim.hpp"
#include "archtune/numkernel/rng.hpp"
#include "archtune/supernet/network.hpp"

namespace archtune::ctrl {

struct ControllerConfig {
    int embed_dim = 64;
    int hidden_dim = 64;
    int layers = 2;
    double temperature = 1.0;
    double gamma = 1.0;
    double baseline_decay = 0.95;
    double learning_rate = 3.5e-4;
    /// One classifier per site instead of one shared across steps; needed
    /// when sites have different candidate counts.
    bool per_site_classifier = false;
};

/// Stacked-LSTM policy emitting one categorical choice per mutable site.
///
/// The classifier starts at zero, so every step's initial distribution is
/// uniform. Each step feeds back the embedding of the previous action; the
/// first step reads a learned start token.
class ControllerPolicy {
public:
    ControllerPolicy(std::vector<int> candidates_per_site, ControllerConfig cfg, const nk::Rng& init_rng);

    std::size_t num_sites() const noexcept { return candidates_.size(); }
    int candidates(std::size_t site) const { return candidates_.at(site); }
    const ControllerConfig& config() const noexcept { return cfg_; }
    void set_temperature(double t);

    net::ParamStore& store() noexcept { return store_; }
    const net::ParamStore& store() const noexcept { return store_; }
    std::vector<nk::Parameter*> parameters() const;

private:
    friend struct EpisodeRunner;
    std::vector<int> candidates_;
    ControllerConfig cfg_;
    net::ParamStore store_;
};

enum class EpisodeMode { sampled, greedy };

struct Trajectory {
    arch::ActionVector actions;
    std::vector<double> log_probs;
    /// Step distributions, one row per site.
    std::vector<std::vector<double>> probs;
    double reward = 0;
    std::vector<double> returns;
    EpisodeMode mode = EpisodeMode::sampled;
};

Trajectory sample_episode(const ControllerPolicy& policy, nk::Rng& rng);
/// Argmax at every step, ties toward the lower index.
Trajectory greedy_episode(const ControllerPolicy& policy);

/// Terminal-reward returns G_i = gamma^(K-i) * reward.
std::vector<double> compute_returns(double reward, std::size_t k, double gamma);

/// Identity map from accuracy to raw reward.
double reward_from_accuracy(double acc);

/// Exponential moving average of raw rewards, seeded by the first reward.
class RewardBaseline {
public:
    explicit RewardBaseline(double decay = 0.95);
    /// reward - b, where b is seeded with `reward` on first use.
    double advantage(double reward);
    void update(double reward);
    std::optional<double> value() const noexcept { return b_; }
    void set_value(std::optional<double> b) noexcept { b_ = b; }

private:
    double decay_;
    std::optional<double> b_;
};

/// J = sum_t log pi(a_t) * gamma^(K-t) * advantage for fixed actions.
double objective(const ControllerPolicy& policy, const arch::ActionVector& actions, double advantage);

/// Gradient of objective() with respect to every policy parameter, written
/// into each parameter's grad. Returns J.
double objective_gradient(ControllerPolicy& policy, const arch::ActionVector& actions, double advantage);

/// One REINFORCE ascent step on `traj` (which must be sampled), then the
/// baseline update. A zero advantage leaves the policy and optimizer state
/// untouched. Returns J; fills traj.returns.
double reinforce_update(ControllerPolicy& policy, Trajectory& traj, RewardBaseline& baseline, nk::Optimizer& opt);

/// Adam at the configured controller learning rate.
std::unique_ptr<nk::Optimizer> make_controller_optimizer(const ControllerConfig& cfg);

/// Min-max normalization of cumulative raw reward to [0,1].
std::vector<double> relative_total_reward(const std::vector<double>& raw_rewards);

}  // namespace archtune::ctrl

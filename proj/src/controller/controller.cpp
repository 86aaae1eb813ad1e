#include "archtune/controller/controller.hpp"

#include <algorithm>
#include <cmath>

#include "archtune/numkernel/ops.hpp"

namespace archtune::ctrl {

namespace ops = nk::ops;
using nk::NdArray;
using nk::Tape;
using nk::Var;

ControllerPolicy::ControllerPolicy(std::vector<int> candidates_per_site, ControllerConfig cfg, const nk::Rng& init_rng)
    : candidates_(std::move(candidates_per_site)), cfg_(cfg) {
    if (candidates_.empty()) throw std::invalid_argument("controller needs at least one site");
    if (cfg_.embed_dim <= 0 || cfg_.hidden_dim <= 0 || cfg_.layers <= 0) {
        throw std::invalid_argument("controller dimensions must be positive");
    }
    if (!(cfg_.gamma > 0 && cfg_.gamma <= 1)) throw std::invalid_argument("gamma must lie in (0, 1]");
    set_temperature(cfg_.temperature);
    const int cmax = *std::max_element(candidates_.begin(), candidates_.end());
    if (*std::min_element(candidates_.begin(), candidates_.end()) < 2) {
        throw std::invalid_argument("every site needs at least two candidates");
    }
    if (!cfg_.per_site_classifier && cmax != *std::min_element(candidates_.begin(), candidates_.end())) {
        throw std::invalid_argument("shared classifier needs equal candidate counts; enable per_site_classifier");
    }
    const auto e = static_cast<std::size_t>(cfg_.embed_dim);
    const auto h = static_cast<std::size_t>(cfg_.hidden_dim);
    auto uniform = [&](const std::string& name, nk::Shape shape) {
        NdArray a(std::move(shape));
        nk::Rng r = init_rng.split(name);
        for (auto& v : a.data()) v = r.uniform(-0.1, 0.1);
        store_.add(name, std::move(a));
    };
    uniform("ctrl.start", {1, e});
    uniform("ctrl.embed", {static_cast<std::size_t>(cmax), e});
    for (int l = 0; l < cfg_.layers; ++l) {
        const std::string p = "ctrl.lstm" + std::to_string(l);
        uniform(p + ".w_ih", {4 * h, l == 0 ? e : h});
        uniform(p + ".w_hh", {4 * h, h});
        NdArray bias({4 * h}, 0.0);
        for (std::size_t i = h; i < 2 * h; ++i) bias[i] = 1.0;
        store_.add(p + ".bias", std::move(bias));
    }
    const std::size_t heads = cfg_.per_site_classifier ? candidates_.size() : 1;
    for (std::size_t s = 0; s < heads; ++s) {
        const std::string p = cfg_.per_site_classifier ? "ctrl.fc" + std::to_string(s) : std::string("ctrl.fc");
        const auto c = static_cast<std::size_t>(candidates_[s]);
        store_.add(p + ".weight", NdArray({c, h}, 0.0));
        store_.add(p + ".bias", NdArray({c}, 0.0));
    }
}

void ControllerPolicy::set_temperature(double t) {
    if (!(t > 0) || !std::isfinite(t)) throw std::invalid_argument("temperature must be positive");
    cfg_.temperature = t;
}

std::vector<nk::Parameter*> ControllerPolicy::parameters() const {
    return {store_.all().begin(), store_.all().end()};
}

// Unrolls the policy on a tape; `choose` picks each action from the step
// distribution and the chosen action's log-probability node is recorded.
struct EpisodeRunner {
    template <class Choose>
    static std::vector<Var> run(Tape& t, const ControllerPolicy& p, Choose&& choose, Trajectory& traj) {
        auto& store = const_cast<net::ParamStore&>(p.store_);
        const auto layers = static_cast<std::size_t>(p.cfg_.layers);
        const auto h = static_cast<std::size_t>(p.cfg_.hidden_dim);
        std::vector<nk::ops::LstmWeights> cells;
        for (std::size_t l = 0; l < layers; ++l) {
            const std::string pre = "ctrl.lstm" + std::to_string(l);
            cells.push_back({t.param(store.at(pre + ".w_ih")), t.param(store.at(pre + ".w_hh")),
                             t.param(store.at(pre + ".bias"))});
        }
        std::vector<Var> hs(layers, t.constant(NdArray({1, h}))), cs(layers, t.constant(NdArray({1, h})));
        Var embed = t.param(store.at("ctrl.embed"));
        Var x = t.param(store.at("ctrl.start"));
        Var fc_w, fc_b;
        if (!p.cfg_.per_site_classifier) {
            fc_w = t.param(store.at("ctrl.fc.weight"));
            fc_b = t.param(store.at("ctrl.fc.bias"));
        }
        std::vector<Var> log_probs;
        std::vector<int> actions;
        for (std::size_t site = 0; site < p.num_sites(); ++site) {
            Var in = x;
            for (std::size_t l = 0; l < layers; ++l) {
                std::tie(hs[l], cs[l]) = ops::lstm_cell(t, in, hs[l], cs[l], cells[l]);
                in = hs[l];
            }
            if (p.cfg_.per_site_classifier) {
                const std::string pre = "ctrl.fc" + std::to_string(site);
                fc_w = t.param(store.at(pre + ".weight"));
                fc_b = t.param(store.at(pre + ".bias"));
            }
            Var logits = ops::scale(t, ops::linear(t, in, fc_w, fc_b), 1.0 / p.cfg_.temperature);
            Var logp = ops::log_softmax(t, logits);
            const NdArray& lp = t.value(logp);
            std::vector<double> probs(lp.size());
            for (std::size_t i = 0; i < lp.size(); ++i) probs[i] = std::exp(lp[i]);
            const int a = choose(site, probs);
            if (a < 0 || a >= static_cast<int>(probs.size())) {
                throw std::out_of_range("action " + std::to_string(a) + " out of range at site " + std::to_string(site));
            }
            log_probs.push_back(ops::pick(t, logp, 0, static_cast<std::size_t>(a)));
            traj.log_probs.push_back(lp[static_cast<std::size_t>(a)]);
            traj.probs.push_back(std::move(probs));
            actions.push_back(a);
            x = ops::gather_row(t, embed, static_cast<std::size_t>(a));
        }
        traj.actions = arch::ActionVector(std::move(actions));
        return log_probs;
    }
};

Trajectory sample_episode(const ControllerPolicy& policy, nk::Rng& rng) {
    Tape t(false);
    Trajectory traj;
    EpisodeRunner::run(
        t, policy,
        [&](std::size_t, const std::vector<double>& probs) {
            const double u = rng.uniform();
            double cum = 0;
            for (std::size_t i = 0; i < probs.size(); ++i) {
                cum += probs[i];
                if (u < cum) return static_cast<int>(i);
            }
            return static_cast<int>(probs.size()) - 1;
        },
        traj);
    traj.mode = EpisodeMode::sampled;
    return traj;
}

Trajectory greedy_episode(const ControllerPolicy& policy) {
    Tape t(false);
    Trajectory traj;
    EpisodeRunner::run(
        t, policy,
        [](std::size_t, const std::vector<double>& probs) {
            return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
        },
        traj);
    traj.mode = EpisodeMode::greedy;
    return traj;
}

std::vector<double> compute_returns(double reward, std::size_t k, double gamma) {
    if (!(gamma > 0 && gamma <= 1)) throw std::invalid_argument("gamma must lie in (0, 1]");
    if (!std::isfinite(reward)) throw std::invalid_argument("reward must be finite");
    std::vector<double> g(k);
    double w = 1.0;
    for (std::size_t i = k; i-- > 0;) {
        g[i] = w * reward;
        w *= gamma;
    }
    return g;
}

double reward_from_accuracy(double acc) {
    if (!(acc >= 0 && acc <= 1)) throw std::invalid_argument("accuracy outside [0,1]");
    return acc;
}

RewardBaseline::RewardBaseline(double decay) : decay_(decay) {
    if (!(decay > 0 && decay < 1)) throw std::invalid_argument("baseline decay must lie in (0,1)");
}

double RewardBaseline::advantage(double reward) {
    if (!b_) b_ = reward;
    return reward - *b_;
}

void RewardBaseline::update(double reward) { b_ = b_ ? decay_ * *b_ + (1 - decay_) * reward : reward; }

namespace {

Var build_objective(Tape& t, const ControllerPolicy& policy, const arch::ActionVector& actions, double advantage) {
    if (actions.size() != policy.num_sites()) throw std::invalid_argument("action vector length differs from site count");
    Trajectory scratch;
    auto log_probs = EpisodeRunner::run(
        t, policy, [&](std::size_t site, const std::vector<double>&) { return actions[site]; }, scratch);
    const auto weights = compute_returns(advantage, policy.num_sites(), policy.config().gamma);
    return ops::weighted_sum(t, log_probs, weights);
}

}  // namespace

double objective(const ControllerPolicy& policy, const arch::ActionVector& actions, double advantage) {
    Tape t(false);
    return t.value(build_objective(t, policy, actions, advantage)).item();
}

double objective_gradient(ControllerPolicy& policy, const arch::ActionVector& actions, double advantage) {
    for (auto* p : policy.parameters()) p->zero_grad();
    Tape t;
    Var j = build_objective(t, policy, actions, advantage);
    t.backward(j);
    return t.value(j).item();
}

double reinforce_update(ControllerPolicy& policy, Trajectory& traj, RewardBaseline& baseline, nk::Optimizer& opt) {
    if (traj.mode != EpisodeMode::sampled) throw std::invalid_argument("reinforce_update needs a sampled trajectory");
    const double adv = baseline.advantage(traj.reward);
    traj.returns = compute_returns(traj.reward, policy.num_sites(), policy.config().gamma);
    double j = 0;
    if (adv != 0) {
        j = objective_gradient(policy, traj.actions, adv);
        // The optimizer descends; ascend J by negating its gradient.
        auto params = policy.parameters();
        for (auto* p : params) {
            for (auto& g : p->grad.data()) g = -g;
        }
        opt.step(params);
    }
    baseline.update(traj.reward);
    return j;
}

std::unique_ptr<nk::Optimizer> make_controller_optimizer(const ControllerConfig& cfg) {
    nk::OptimizerConfig oc;
    oc.kind = nk::OptimizerKind::adam;
    oc.learning_rate = cfg.learning_rate;
    return nk::make_optimizer(oc);
}

std::vector<double> relative_total_reward(const std::vector<double>& raw_rewards) {
    std::vector<double> cum(raw_rewards.size());
    double s = 0;
    for (std::size_t i = 0; i < raw_rewards.size(); ++i) cum[i] = s += raw_rewards[i];
    if (cum.empty()) return cum;
    const auto [lo, hi] = std::minmax_element(cum.begin(), cum.end());
    const double a = *lo, b = *hi;
    for (auto& v : cum) v = b > a ? (v - a) / (b - a) : 0.0;
    return cum;
}

}  // namespace archtune::ctrl

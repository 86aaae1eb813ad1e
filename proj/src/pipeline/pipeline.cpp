#include "archtune/pipeline/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

namespace archtune::pipe {

nk::OptimizerConfig sgd_config(double lr, double momentum) {
    nk::OptimizerConfig c;
    c.kind = nk::OptimizerKind::sgd;
    c.learning_rate = lr;
    c.momentum = momentum;
    return c;
}

ctrl::ControllerConfig controller_config(const RunConfig& cfg) {
    ctrl::ControllerConfig c;
    c.embed_dim = cfg.embed_dim;
    c.hidden_dim = cfg.hidden_dim;
    c.layers = cfg.lstm_layers;
    c.per_site_classifier = cfg.per_site_classifier;
    c.temperature = cfg.temperature;
    c.gamma = cfg.gamma;
    c.baseline_decay = cfg.baseline_decay;
    c.learning_rate = cfg.controller_lr;
    return c;
}

BatchStream::BatchStream(std::size_t n, nk::Rng rng) : n_(n), rng_(rng), perm_(n) {
    if (n == 0) throw std::invalid_argument("BatchStream over an empty set");
    reshuffle();
}

void BatchStream::reshuffle() {
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    for (std::size_t i = n_; i-- > 1;) std::swap(perm_[i], perm_[rng_.below(i + 1)]);
    pos_ = 0;
}

std::vector<std::size_t> BatchStream::next(std::size_t batch) {
    batch = std::min(batch, n_);
    if (pos_ + batch > n_) reshuffle();
    std::vector<std::size_t> out(perm_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 perm_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch));
    pos_ += batch;
    return out;
}

PretrainResult pretrain_source(const RunConfig& cfg, net::Network& net, const net::LabeledSet& train) {
    PretrainResult r;
    for (auto* p : net.parameters()) p->frozen = false;
    if (cfg.pretrain_epochs == 0) {
        r.train_accuracy = net::evaluate(net, train);
        r.reached_target = r.train_accuracy >= cfg.pretrain_target;
        return r;
    }
    auto opt = nk::make_optimizer(sgd_config(cfg.pretrain_lr, cfg.momentum));
    BatchStream stream(train.size(), nk::Rng(cfg.seed).split("pretrain/batches"));
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    const std::size_t steps = std::max<std::size_t>(1, train.size() / batch);
    std::vector<nk::NdArray> best;
    double best_acc = -1;
    for (int epoch = 1; epoch <= cfg.pretrain_epochs; ++epoch) {
        for (std::size_t s = 0; s < steps; ++s) {
            const auto rows = stream.next(batch);
            net::train_step(net, train.gather(rows), *opt);
        }
        r.epochs_run = epoch;
        const double acc = net::evaluate(net, train);
        if (acc > best_acc) {
            best_acc = acc;
            best.clear();
            for (const auto* p : net.store().all()) best.push_back(p->value);
        }
        if (acc >= cfg.pretrain_target) break;
    }
    for (std::size_t i = 0; i < best.size(); ++i) net.store().all()[i]->value = best[i];
    r.train_accuracy = best_acc;
    r.reached_target = best_acc >= cfg.pretrain_target;
    return r;
}

namespace {

std::size_t binary_code(const arch::ActionVector& a) {
    std::size_t code = 0;
    for (int v : a.values()) {
        if (v != 0 && v != 1) throw std::out_of_range("tabular oracle takes binary action vectors");
        code = (code << 1) | static_cast<std::size_t>(v);
    }
    return code;
}

}  // namespace

double TabularOracle::reward(const arch::ActionVector& a) const {
    if (a.size() != optimum.size()) throw std::invalid_argument("action vector length differs from oracle size");
    return table.at(binary_code(a));
}

TabularOracle make_tabular_oracle(std::size_t k, std::uint64_t seed) {
    if (k == 0 || k > 12) throw std::invalid_argument("tabular oracle supports 1..12 sites");
    static constexpr double kByDistance[] = {0.9, 0.6, 0.45, 0.3, 0.2};
    nk::Rng rng = nk::Rng(seed).split("oracle");
    std::vector<int> best(k);
    for (auto& v : best) v = static_cast<int>(rng.below(2));
    TabularOracle o{std::vector<double>(std::size_t{1} << k), arch::ActionVector(best)};
    const std::size_t opt_code = binary_code(o.optimum);
    for (std::size_t code = 0; code < o.table.size(); ++code) {
        const auto dist = static_cast<std::size_t>(std::popcount(code ^ opt_code));
        const double base = dist < std::size(kByDistance) ? kByDistance[dist] : 0.1;
        o.table[code] = base + rng.uniform(0.0, 0.04);
    }
    return o;
}

RewardFn supernet_reward(const RunConfig& cfg, net::Supernet& sn, const net::LabeledSet& train,
                         const net::LabeledSet& val, int start_stage, nk::Optimizer& opt, BatchStream& stream) {
    return [&cfg, &sn, &train, &val, start_stage, &opt, &stream](const arch::ActionVector& a) {
        auto view = sn.activate(a);
        std::vector<net::LabeledSet> batches;
        for (int i = 0; i < cfg.subnet_batches; ++i) {
            batches.push_back(train.gather(stream.next(static_cast<std::size_t>(cfg.batch_size))));
        }
        RewardSample s;
        s.train_loss = net::train_subnet(view, batches, opt, start_stage);
        s.accuracy = net::evaluate(view, val, start_stage);
        return s;
    };
}

SearchResult stage1_search(const RunConfig& cfg, ctrl::ControllerPolicy& policy, const RewardFn& reward) {
    SearchResult out;
    std::vector<int> candidates;
    for (std::size_t s = 0; s < policy.num_sites(); ++s) candidates.push_back(policy.candidates(s));
    stop::ActionHistory hist(candidates, static_cast<std::size_t>(cfg.window));
    ctrl::RewardBaseline baseline(cfg.baseline_decay);
    auto opt = ctrl::make_controller_optimizer(policy.config());
    nk::Rng rng = nk::Rng(cfg.seed).split("controller/sample");
    for (int round = 1; round <= cfg.budget; ++round) {
        RoundLog log;
        log.round = static_cast<std::size_t>(round);
        try {
            auto traj = ctrl::sample_episode(policy, rng);
            const RewardSample r = reward(traj.actions);
            traj.reward = ctrl::reward_from_accuracy(r.accuracy);
            log.raw_accuracy = traj.reward;
            log.train_loss = r.train_loss;
            log.baselined_reward = traj.reward - baseline.value().value_or(traj.reward);
            ctrl::reinforce_update(policy, traj, baseline, *opt);
            log.sampled = traj.actions;
        } catch (const nk::NumericError& e) {
            throw nk::NumericError("round " + std::to_string(round) + ": " + e.what());
        }
        log.greedy = ctrl::greedy_episode(policy).actions;
        hist.record(log.sampled, log.greedy);
        log.heatmap = hist.heatmap_row();
        log.stable = stop::is_stable(hist, cfg.p_stop);
        out.rounds.push_back(std::move(log));
        if (out.rounds.back().stable) {
            out.decision = stop::finalize(hist, policy, stop::StopReason::stable);
            return out;
        }
    }
    out.decision = stop::finalize(hist, policy, stop::StopReason::budget_exhausted);
    return out;
}

Curve finetune(const RunConfig& cfg, net::Network& net, const net::LabeledSet& train, const net::LabeledSet& test,
               int start_stage) {
    Curve c;
    auto opt = nk::make_optimizer(sgd_config(cfg.finetune_lr, cfg.momentum));
    BatchStream stream(train.size(), nk::Rng(cfg.seed).split("finetune/batches"));
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    const long total = static_cast<long>(cfg.finetune_epochs) * static_cast<long>(std::max<std::size_t>(1, train.size() / batch));
    auto record = [&](long it) {
        c.iterations.push_back(it);
        c.accuracy.push_back(net::evaluate(net, test, start_stage));
    };
    record(0);
    for (long it = 1; it <= total; ++it) {
        net::train_step(net, train.gather(stream.next(batch)), *opt, start_stage);
        if (it % cfg.eval_every == 0 || it == total) record(it);
    }
    return c;
}

std::optional<FinetuneSaving> finetune_saving(const Curve& searched, const Curve& vanilla) {
    if (searched.accuracy.empty() || vanilla.accuracy.empty()) return std::nullopt;
    FinetuneSaving f;
    f.level = std::min(*std::max_element(searched.accuracy.begin(), searched.accuracy.end()),
                       *std::max_element(vanilla.accuracy.begin(), vanilla.accuracy.end()));
    auto first_reach = [&](const Curve& c) {
        for (std::size_t i = 0; i < c.accuracy.size(); ++i) {
            if (c.accuracy[i] >= f.level) return c.iterations[i];
        }
        return -1L;
    };
    f.searched_iterations = first_reach(searched);
    f.vanilla_iterations = first_reach(vanilla);
    if (f.vanilla_iterations <= 0) return std::nullopt;
    f.saving = 1.0 - static_cast<double>(f.searched_iterations) / static_cast<double>(f.vanilla_iterations);
    return f;
}

}  // namespace archtune::pipe

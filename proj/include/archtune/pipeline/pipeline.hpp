#pragma once

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "archtune/controller/controller.hpp"
#include "archtune/earlystop/earlystop.hpp"
#include "archtune/pipeline/config.hpp"
#include "archtune/pipeline/datasets.hpp"
#include "archtune/supernet/checkpoint.hpp"
#include "archtune/supernet/supernet.hpp"

namespace archtune::pipe {

/// Accuracy against optimizer iterations, sampled at a fixed cadence.
struct Curve {
    std::vector<long> iterations;
    std::vector<double> accuracy;
};

struct PretrainResult {
    int epochs_run = 0;
    double train_accuracy = 0;
    bool reached_target = false;
};

/// Trains every layer of `net` on the source training split until the
/// training accuracy reaches the target or the epoch budget runs out. Leaves
/// the best epoch's weights in `net`.
PretrainResult pretrain_source(const RunConfig& cfg, net::Network& net, const net::LabeledSet& train);

/// Shuffled minibatch indices, reshuffled at every pass over the data.
class BatchStream {
public:
    BatchStream(std::size_t n, nk::Rng rng);
    std::vector<std::size_t> next(std::size_t batch);

private:
    void reshuffle();
    std::size_t n_;
    nk::Rng rng_;
    std::vector<std::size_t> perm_;
    std::size_t pos_ = 0;
};

/// Stand-in reward: a fixed table over all 2^K binary vectors.
struct TabularOracle {
    std::vector<double> table;  // indexed by the vector read as a binary number, site 0 first
    arch::ActionVector optimum;

    double reward(const arch::ActionVector& a) const;
};

/// Reward falls with the Hamming distance to a seed-chosen optimum
/// (0.9, 0.6, 0.45, 0.3, 0.2, then 0.1), plus noise below 0.04. The optimum
/// leads the runner-up by at least 0.2.
TabularOracle make_tabular_oracle(std::size_t k, std::uint64_t seed);

struct RewardSample {
    double accuracy = 0;
    double train_loss = 0;
};

using RewardFn = std::function<RewardSample(const arch::ActionVector&)>;

/// Supernet-backed reward: trains the activated subnet on `m` minibatches of
/// `train`, then scores it on `val`. Both sets hold activations entering
/// `start_stage`.
RewardFn supernet_reward(const RunConfig& cfg, net::Supernet& sn, const net::LabeledSet& train,
                         const net::LabeledSet& val, int start_stage, nk::Optimizer& opt, BatchStream& stream);

struct RoundLog {
    std::size_t round = 0;
    double raw_accuracy = 0;
    double baselined_reward = 0;
    double train_loss = 0;
    arch::ActionVector sampled;
    arch::ActionVector greedy;
    std::vector<double> heatmap;
    bool stable = false;
};

struct SearchResult {
    stop::StopDecision decision;
    std::vector<RoundLog> rounds;
};

/// Stage 1: sample, score, update the controller, decode greedily, record,
/// and stop on stability or budget.
SearchResult stage1_search(const RunConfig& cfg, ctrl::ControllerPolicy& policy, const RewardFn& reward);

ctrl::ControllerConfig controller_config(const RunConfig& cfg);
nk::OptimizerConfig sgd_config(double lr, double momentum);

/// Trains the in-scope layers of `net` on `train` for the configured epochs,
/// scoring `test` at iteration 0, every `eval_every` iterations, and at the
/// end. Both sets hold activations entering `start_stage`.
Curve finetune(const RunConfig& cfg, net::Network& net, const net::LabeledSet& train, const net::LabeledSet& test,
               int start_stage);

struct FinetuneSaving {
    double level = 0;
    long searched_iterations = 0;
    long vanilla_iterations = 0;
    double saving = 0;
};

/// Iterations each curve needs to first reach the highest accuracy both
/// reach; empty when that is undefined.
std::optional<FinetuneSaving> finetune_saving(const Curve& searched, const Curve& vanilla);

/// Files of one run.
struct RunPaths {
    std::string dir;
    std::string file(const std::string& name) const { return dir + "/" + name; }
};

/// `<root>/<config hash>-s<seed>`; root from ARCHTUNE_RUN_ROOT, else "runs".
std::string default_run_dir(const RunConfig& cfg);

/// Failure inside a phase; what() starts with the phase name.
class PhaseError : public std::runtime_error {
public:
    PhaseError(std::string phase, const std::string& msg)
        : std::runtime_error(phase + ": " + msg), phase_(std::move(phase)) {}
    const std::string& phase() const noexcept { return phase_; }

private:
    std::string phase_;
};

inline const std::vector<std::string>& phase_names() {
    static const std::vector<std::string> names{"gen-data", "pretrain", "search", "finetune", "baseline", "report"};
    return names;
}

/// Runs one phase unconditionally and writes its marker.
void run_phase(const std::string& phase, const RunConfig& cfg, const RunPaths& paths, std::ostream& log);

/// Every phase in order, skipping those whose marker exists.
void run_all(const RunConfig& cfg, const RunPaths& paths, std::ostream& log);

}  // namespace archtune::pipe

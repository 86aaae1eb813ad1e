#pragma once

#include <memory>
#include <span>
#include <string>
#include <unordered_map>

#include "archtune/numkernel/tape.hpp"

namespace archtune::nk {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::sgd;
    double learning_rate = 5e-2;
    double momentum = 0.0;  // SGD only
    double beta1 = 0.9;     // Adam only
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Applies one update to each parameter in the span. Frozen parameters and
/// buffers (trainable == false) are skipped. A non-finite gradient aborts the
/// step before any parameter is modified.
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}
    virtual ~Optimizer() = default;

    const OptimizerConfig& config() const noexcept { return cfg_; }
    void set_learning_rate(double lr) noexcept { cfg_.learning_rate = lr; }

    void step(std::span<Parameter* const> params);

protected:
    virtual void update(Parameter& p) = 0;
    OptimizerConfig cfg_;
};

class Sgd final : public Optimizer {
public:
    explicit Sgd(OptimizerConfig cfg);

private:
    void update(Parameter& p) override;
    std::unordered_map<const Parameter*, NdArray> velocity_;
};

class Adam final : public Optimizer {
public:
    explicit Adam(OptimizerConfig cfg);

    /// Number of completed updates of `p` (the bias-correction step index).
    long steps(const Parameter& p) const;

private:
    struct Moments {
        NdArray m;
        NdArray v;
        long t = 0;
    };
    void update(Parameter& p) override;
    std::unordered_map<const Parameter*, Moments> moments_;
};

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& cfg);

}  // namespace archtune::nk

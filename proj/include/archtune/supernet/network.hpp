#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "archtune/archspace/archspace.hpp"
#include "archtune/numkernel/optim.hpp"
#include "archtune/numkernel/rng.hpp"
#include "archtune/numkernel/tape.hpp"

namespace archtune::net {

using nk::NdArray;
using nk::Parameter;

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.9;

/// Images [N,C,H,W] (or cached activations) with one label per row.
struct LabeledSet {
    NdArray x;
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
    /// Rows [begin, begin + count).
    LabeledSet slice(std::size_t begin, std::size_t count) const;
    /// Rows in the given order.
    LabeledSet gather(std::span<const std::size_t> rows) const;
};

/// Named parameters with stable addresses, kept in insertion order.
class ParamStore {
public:
    Parameter& add(std::string name, NdArray value, bool trainable = true);
    Parameter* find(std::string_view name);
    const Parameter* find(std::string_view name) const;
    Parameter& at(std::string_view name);
    const Parameter& at(std::string_view name) const;
    std::span<Parameter* const> all() const noexcept { return order_; }
    std::size_t size() const noexcept { return order_.size(); }
    /// Order-sensitive FNV digest over names and values.
    std::uint64_t checksum() const;

private:
    std::map<std::string, std::unique_ptr<Parameter>, std::less<>> by_name_;
    std::vector<Parameter*> order_;
};

/// Weights of one concrete architecture, however they are stored.
class Model {
public:
    virtual ~Model() = default;
    virtual const arch::ArchitectureSpec& arch() const = 0;
    /// Kernel of the conv at `layer_path`; `kernel` is the size the
    /// architecture declares there.
    virtual Parameter& conv_weight(const std::string& layer_path, int kernel) = 0;
    /// Any other parameter: norm affine/statistics, stem, head.
    virtual Parameter& named(const std::string& name) = 0;
    /// Every parameter the forward pass can reach, in forward order.
    virtual std::vector<Parameter*> parameters() = 0;
};

/// Adds conv/norm/head parameters for `a` to `store`, initialized from
/// per-name streams of `rng` so values do not depend on creation order.
/// Convs at paths in `skip_convs` are left to the caller.
void init_parameters(ParamStore& store, const arch::ArchitectureSpec& a, const nk::Rng& rng,
                     std::span<const std::string> skip_convs = {});
NdArray init_conv(const std::string& name, int out_ch, int in_ch, int kernel, const nk::Rng& rng);

/// Every parameter `m` can reach, in forward order.
std::vector<Parameter*> collect_parameters(Model& m);

/// Stage index encoded in a parameter name: -1 for the stem, the number of
/// stages for the head.
int param_stage(std::string_view name, std::size_t num_stages);

/// Freezes the stem and every stage before `first_stage`; unfreezes the rest.
/// Returns the number of frozen parameters (buffers included).
std::size_t freeze_before(Model& m, std::size_t first_stage);

/// A standalone network owning its parameters.
class Network final : public Model {
public:
    explicit Network(arch::ArchitectureSpec a);
    Network(arch::ArchitectureSpec a, const nk::Rng& init_rng);

    const arch::ArchitectureSpec& arch() const override { return arch_; }
    Parameter& conv_weight(const std::string& layer_path, int kernel) override;
    Parameter& named(const std::string& name) override { return store_.at(name); }
    std::vector<Parameter*> parameters() override;

    ParamStore& store() noexcept { return store_; }
    const ParamStore& store() const noexcept { return store_; }

private:
    arch::ArchitectureSpec arch_;
    ParamStore store_;
};

struct ForwardOptions {
    /// Batch statistics and running-stat updates for norms whose scale is
    /// not frozen. Frozen norms always use running statistics.
    bool training = false;
    /// -1: input is images and the stem runs. s >= 0: input is the
    /// activation entering stage s.
    int start_stage = -1;
    /// Stop before this stage and return its input activation (no head).
    int stop_stage = -1;
};

nk::Var forward(nk::Tape& t, Model& m, nk::Var x, const ForwardOptions& opt);

/// Eval-mode activations entering `stage`, computed in chunks without gradients.
LabeledSet features(Model& m, const LabeledSet& data, int stage, std::size_t chunk = 100);

/// Eval-mode logits [N, classes].
NdArray predict(Model& m, const LabeledSet& data, int start_stage = -1, std::size_t chunk = 100);

/// Fraction of argmax-correct rows; side-effect-free.
double evaluate(Model& m, const LabeledSet& data, int start_stage = -1);

/// One optimizer step on one batch; returns the batch loss.
double train_step(Model& m, const LabeledSet& batch, nk::Optimizer& opt, int start_stage = -1);

}  // namespace archtune::net

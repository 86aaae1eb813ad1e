#pragma once

#include <cstdint>
#include <map>
#include <span>

#include "archtune/supernet/network.hpp"

namespace archtune::net {

class Supernet;

/// One subnet of a supernet: resolves every conv to the bank chosen by its
/// action vector. Holds no weights of its own.
class SubnetView final : public Model {
public:
    const arch::ArchitectureSpec& arch() const override { return subnet_.arch; }
    Parameter& conv_weight(const std::string& layer_path, int kernel) override;
    Parameter& named(const std::string& name) override;
    std::vector<Parameter*> parameters() override;

    const arch::ActionVector& actions() const noexcept { return actions_; }
    const arch::SubnetSpec& subnet() const noexcept { return subnet_; }
    /// False once another activation has superseded this view.
    bool current() const noexcept;

private:
    friend class Supernet;
    SubnetView(Supernet& sn, arch::ActionVector a, arch::SubnetSpec s, std::uint64_t gen)
        : sn_(&sn), actions_(std::move(a)), subnet_(std::move(s)), generation_(gen) {}

    Supernet* sn_;
    arch::ActionVector actions_;
    arch::SubnetSpec subnet_;
    std::uint64_t generation_;
};

/// Weight-sharing store: backbone parameters plus one conv bank per
/// candidate kernel at every mutable site (`<site>.k<kernel>.weight`).
class Supernet {
public:
    /// Random initialization.
    Supernet(arch::SupernetSpec spec, const nk::Rng& init_rng);
    /// Backbone and candidate-0 banks from a base-network checkpoint; other
    /// banks fresh from `init_rng`. Throws CheckpointError naming the path on
    /// a missing or mismatched tensor.
    Supernet(arch::SupernetSpec spec, const std::map<std::string, NdArray, std::less<>>& pretrained,
             const nk::Rng& init_rng);

    const arch::SupernetSpec& spec() const noexcept { return spec_; }
    ParamStore& store() noexcept { return store_; }
    const ParamStore& store() const noexcept { return store_; }

    /// Throws on a wrong length or out-of-range index. Invalidates older views.
    SubnetView activate(const arch::ActionVector& a);

    /// Standalone copy of the subnet's weights, named like the base network.
    Network extract(const arch::ActionVector& a) const;

    static std::string bank_name(const std::string& site_path, int kernel);

    std::size_t frozen_count() const;

private:
    friend class SubnetView;
    void build(const nk::Rng& init_rng, const std::map<std::string, NdArray, std::less<>>* pretrained);

    arch::SupernetSpec spec_;
    ParamStore store_;
    std::uint64_t generation_ = 0;
};

/// Trains `view` on `batches` in order, one optimizer step each; returns the
/// mean training loss. Throws std::logic_error for a superseded view and
/// nk::NumericError (naming the action vector and step) on a non-finite loss.
double train_subnet(SubnetView& view, std::span<const LabeledSet> batches, nk::Optimizer& opt, int start_stage = -1);

}  // namespace archtune::net

#include "archtune/supernet/supernet.hpp"

#include "archtune/supernet/checkpoint.hpp"

namespace archtune::net {

std::string Supernet::bank_name(const std::string& site_path, int kernel) {
    return site_path + ".k" + std::to_string(kernel) + ".weight";
}

Supernet::Supernet(arch::SupernetSpec spec, const nk::Rng& init_rng) : spec_(std::move(spec)) {
    build(init_rng, nullptr);
}

Supernet::Supernet(arch::SupernetSpec spec, const TensorMap& pretrained, const nk::Rng& init_rng)
    : spec_(std::move(spec)) {
    build(init_rng, &pretrained);
}

namespace {

void copy_checked(Parameter& dst, const TensorMap& src, const std::string& key) {
    auto it = src.find(key);
    if (it == src.end()) throw CheckpointError("checkpoint is missing " + key);
    if (it->second.shape() != dst.value.shape()) {
        throw CheckpointError("shape mismatch at " + key + ": checkpoint " + nk::shape_to_string(it->second.shape()) +
                              ", model " + nk::shape_to_string(dst.value.shape()));
    }
    dst.value = it->second;
}

}  // namespace

void Supernet::build(const nk::Rng& init_rng, const TensorMap* pretrained) {
    std::vector<std::string> site_paths;
    for (const auto& site : spec_.sites) site_paths.push_back(site.path);
    init_parameters(store_, spec_.base, init_rng, site_paths);
    if (pretrained) {
        for (Parameter* p : store_.all()) copy_checked(*p, *pretrained, p->name);
    }
    for (const auto& site : spec_.sites) {
        const auto& layer = spec_.base.stages[site.stage].blocks[site.block].layers[site.layer];
        for (std::size_t c = 0; c < site.candidate_kernels.size(); ++c) {
            const int k = site.candidate_kernels[c];
            const std::string name = bank_name(site.path, k);
            Parameter& p = store_.add(name, init_conv(name, layer.out_channels, layer.in_channels, k, init_rng));
            if (pretrained && c == 0) copy_checked(p, *pretrained, site.path + ".weight");
        }
    }
    const auto first = static_cast<int>(spec_.first_scope_stage());
    for (Parameter* p : store_.all()) p->frozen = param_stage(p->name, spec_.base.stages.size()) < first;
}

SubnetView Supernet::activate(const arch::ActionVector& a) {
    arch::SubnetSpec s = arch::decode_action_vector(spec_, a);
    return SubnetView(*this, a, std::move(s), ++generation_);
}

Network Supernet::extract(const arch::ActionVector& a) const {
    const arch::SubnetSpec s = arch::decode_action_vector(spec_, a);
    Network net(s.arch);
    for (Parameter* p : net.store().all()) {
        std::string source = p->name;
        const std::string_view path = std::string_view(p->name).substr(0, p->name.size() - 7);
        if (p->name.ends_with(".weight")) {
            if (auto i = spec_.site_index(path)) source = bank_name(std::string(path), s.site_kernels[*i]);
        }
        const Parameter& src = store_.at(source);
        p->value = src.value;
        p->frozen = src.frozen;
    }
    return net;
}

std::size_t Supernet::frozen_count() const {
    std::size_t n = 0;
    for (const Parameter* p : store_.all()) n += p->frozen;
    return n;
}

bool SubnetView::current() const noexcept { return sn_->generation_ == generation_; }

Parameter& SubnetView::conv_weight(const std::string& layer_path, int kernel) {
    if (sn_->spec_.site_index(layer_path)) return sn_->store_.at(Supernet::bank_name(layer_path, kernel));
    return sn_->store_.at(layer_path + ".weight");
}

Parameter& SubnetView::named(const std::string& name) { return sn_->store_.at(name); }

std::vector<Parameter*> SubnetView::parameters() { return collect_parameters(*this); }

double train_subnet(SubnetView& view, std::span<const LabeledSet> batches, nk::Optimizer& opt, int start_stage) {
    if (batches.empty()) throw std::invalid_argument("train_subnet needs at least one minibatch");
    if (!view.current()) throw std::logic_error("subnet view superseded by a later activation");
    double total = 0;
    for (std::size_t i = 0; i < batches.size(); ++i) {
        try {
            total += train_step(view, batches[i], opt, start_stage);
        } catch (const nk::NumericError& e) {
            throw nk::NumericError(std::string(e.what()) + " (A=" + view.actions().to_string() + ", step " +
                                   std::to_string(i) + ")");
        }
    }
    return total / static_cast<double>(batches.size());
}

}  // namespace archtune::net

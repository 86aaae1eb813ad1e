#include "archtune/supernet/network.hpp"

#include <charconv>
#include <cmath>

#include "archtune/numkernel/init.hpp"
#include "archtune/numkernel/ops.hpp"

namespace archtune::net {

namespace ops = nk::ops;
using nk::Tape;
using nk::Var;

LabeledSet LabeledSet::slice(std::size_t begin, std::size_t count) const {
    if (begin + count > size() || count == 0) throw std::out_of_range("LabeledSet::slice out of range");
    const std::size_t row = x.size() / size();
    nk::Shape shape = x.shape();
    shape[0] = count;
    std::vector<double> data(x.data().begin() + static_cast<std::ptrdiff_t>(begin * row),
                             x.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * row));
    return {NdArray(shape, std::move(data)),
            std::vector<int>(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                             labels.begin() + static_cast<std::ptrdiff_t>(begin + count))};
}

LabeledSet LabeledSet::gather(std::span<const std::size_t> rows) const {
    if (rows.empty()) throw std::out_of_range("LabeledSet::gather of no rows");
    const std::size_t row = x.size() / size();
    nk::Shape shape = x.shape();
    shape[0] = rows.size();
    LabeledSet out{NdArray(shape), {}};
    out.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::size_t r = rows[i];
        if (r >= size()) throw std::out_of_range("LabeledSet::gather row out of range");
        std::copy_n(x.raw() + r * row, row, out.x.raw() + i * row);
        out.labels.push_back(labels[r]);
    }
    return out;
}

Parameter& ParamStore::add(std::string name, NdArray value, bool trainable) {
    if (by_name_.count(name)) throw std::logic_error("duplicate parameter " + name);
    auto p = std::make_unique<Parameter>(name, std::move(value), trainable);
    Parameter& ref = *p;
    by_name_.emplace(std::move(name), std::move(p));
    order_.push_back(&ref);
    return ref;
}

Parameter* ParamStore::find(std::string_view name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second.get();
}

const Parameter* ParamStore::find(std::string_view name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second.get();
}

Parameter& ParamStore::at(std::string_view name) {
    if (auto* p = find(name)) return *p;
    throw std::out_of_range("no parameter named " + std::string(name));
}

const Parameter& ParamStore::at(std::string_view name) const {
    if (auto* p = find(name)) return *p;
    throw std::out_of_range("no parameter named " + std::string(name));
}

std::uint64_t ParamStore::checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ull;
        }
    };
    for (const Parameter* p : order_) {
        mix(nk::Rng::hash_tag(p->name));
        mix(p->value.checksum());
    }
    return h;
}

namespace {

std::string norm_prefix(const std::string& block, std::size_t layer) { return block + ".bn" + std::to_string(layer + 1); }

void add_norm(ParamStore& store, const std::string& prefix, int channels) {
    const nk::Shape s{static_cast<std::size_t>(channels)};
    store.add(prefix + ".gamma", NdArray(s, 1.0));
    store.add(prefix + ".beta", NdArray(s, 0.0));
    store.add(prefix + ".running_mean", NdArray(s, 0.0), false);
    store.add(prefix + ".running_var", NdArray(s, 1.0), false);
}

template <class Conv, class Norm, class Head>
void walk(const arch::ArchitectureSpec& a, Conv&& conv, Norm&& norm, Head&& head) {
    conv(std::string("stem.conv"), a.stem_channels, a.input_shape[0], a.stem_kernel);
    norm(std::string("stem.bn"), a.stem_channels);
    for (std::size_t s = 0; s < a.stages.size(); ++s) {
        for (std::size_t b = 0; b < a.stages[s].blocks.size(); ++b) {
            const auto& blk = a.stages[s].blocks[b];
            const std::string bp = arch::block_path(s, b);
            for (std::size_t l = 0; l < blk.layers.size(); ++l) {
                const auto& layer = blk.layers[l];
                conv(bp + "." + layer.name, layer.out_channels, layer.in_channels, layer.kernel);
                norm(norm_prefix(bp, l), layer.out_channels);
            }
            if (blk.projection) {
                conv(bp + ".proj", blk.projection->out_channels, blk.projection->in_channels, 1);
                norm(bp + ".proj_bn", blk.projection->out_channels);
            }
        }
    }
    head();
}

}  // namespace

NdArray init_conv(const std::string& name, int out_ch, int in_ch, int kernel, const nk::Rng& rng) {
    const auto k = static_cast<std::size_t>(kernel);
    NdArray w({static_cast<std::size_t>(out_ch), static_cast<std::size_t>(in_ch), k, k});
    nk::Rng r = rng.split(name);
    nk::fan_in_uniform(w, static_cast<std::size_t>(in_ch) * k * k, std::sqrt(6.0), r);
    return w;
}

void init_parameters(ParamStore& store, const arch::ArchitectureSpec& a, const nk::Rng& rng,
                     std::span<const std::string> skip_convs) {
    walk(
        a,
        [&](const std::string& path, int out_ch, int in_ch, int kernel) {
            if (std::find(skip_convs.begin(), skip_convs.end(), path) != skip_convs.end()) return;
            const std::string name = path + ".weight";
            store.add(name, init_conv(name, out_ch, in_ch, kernel, rng));
        },
        [&](const std::string& prefix, int ch) { add_norm(store, prefix, ch); },
        [&] {
            const auto f = static_cast<std::size_t>(a.head_in_features());
            NdArray w({static_cast<std::size_t>(a.classes), f});
            nk::Rng r = rng.split("head.weight");
            nk::fan_in_uniform(w, f, 1.0, r);
            store.add("head.weight", std::move(w));
            store.add("head.bias", NdArray({static_cast<std::size_t>(a.classes)}, 0.0));
        });
}

std::vector<Parameter*> collect_parameters(Model& m) {
    std::vector<Parameter*> out;
    walk(
        m.arch(), [&](const std::string& path, int, int, int kernel) { out.push_back(&m.conv_weight(path, kernel)); },
        [&](const std::string& prefix, int) {
            for (const char* suffix : {".gamma", ".beta", ".running_mean", ".running_var"}) {
                out.push_back(&m.named(prefix + suffix));
            }
        },
        [&] {
            out.push_back(&m.named("head.weight"));
            out.push_back(&m.named("head.bias"));
        });
    return out;
}

int param_stage(std::string_view name, std::size_t num_stages) {
    if (name.substr(0, 5) == "stem.") return -1;
    if (name.size() > 1 && name[0] == 's') {
        int stage = 0;
        const auto dot = name.find('.');
        auto res = std::from_chars(name.data() + 1, name.data() + dot, stage);
        if (res.ec == std::errc{} && res.ptr == name.data() + dot && stage >= 1) return stage - 1;
    }
    return static_cast<int>(num_stages);
}

std::size_t freeze_before(Model& m, std::size_t first_stage) {
    std::size_t frozen = 0;
    for (Parameter* p : collect_parameters(m)) {
        p->frozen = param_stage(p->name, m.arch().stages.size()) < static_cast<int>(first_stage);
        frozen += p->frozen;
    }
    return frozen;
}

Network::Network(arch::ArchitectureSpec a) : Network(std::move(a), nk::Rng(0)) {}

Network::Network(arch::ArchitectureSpec a, const nk::Rng& init_rng) : arch_(std::move(a)) {
    arch::validate(arch_);
    init_parameters(store_, arch_, init_rng);
}

Parameter& Network::conv_weight(const std::string& layer_path, int kernel) {
    Parameter& p = store_.at(layer_path + ".weight");
    if (p.value.dim(2) != static_cast<std::size_t>(kernel)) {
        throw nk::ShapeError(layer_path + ": stored kernel " + std::to_string(p.value.dim(2)) + " but architecture declares " +
                             std::to_string(kernel));
    }
    return p;
}

std::vector<Parameter*> Network::parameters() { return collect_parameters(*this); }

namespace {

Var norm(Tape& t, Model& m, const std::string& prefix, Var x, bool training) {
    Parameter& gamma = m.named(prefix + ".gamma");
    Parameter& beta = m.named(prefix + ".beta");
    Parameter& rm = m.named(prefix + ".running_mean");
    Parameter& rv = m.named(prefix + ".running_var");
    if (!training || gamma.frozen) {
        return ops::batch_norm_eval(t, x, t.param(gamma), t.param(beta), rm.value, rv.value, kBnEps);
    }
    NdArray bm, bv;
    Var y = ops::batch_norm_train(t, x, t.param(gamma), t.param(beta), kBnEps, &bm, &bv);
    const auto& shape = t.value(x).shape();
    const double n = static_cast<double>(shape[0] * shape[2] * shape[3]);
    const double unbias = n > 1 ? n / (n - 1) : 1.0;
    for (std::size_t c = 0; c < bm.size(); ++c) {
        rm.value[c] = kBnMomentum * rm.value[c] + (1 - kBnMomentum) * bm[c];
        rv.value[c] = kBnMomentum * rv.value[c] + (1 - kBnMomentum) * bv[c] * unbias;
    }
    return y;
}

}  // namespace

Var forward(Tape& t, Model& m, Var x, const ForwardOptions& opt) {
    const auto& a = m.arch();
    const int stages = static_cast<int>(a.stages.size());
    const int stop = opt.stop_stage < 0 ? stages : opt.stop_stage;
    if (opt.start_stage >= stages || stop > stages || (opt.stop_stage >= 0 && stop < opt.start_stage)) {
        throw std::out_of_range("forward: invalid stage range");
    }
    if (opt.start_stage < 0) {
        x = ops::conv2d(t, x, t.param(m.conv_weight("stem.conv", a.stem_kernel)), a.stem_stride, a.stem_kernel / 2);
        x = ops::relu(t, norm(t, m, "stem.bn", x, opt.training));
    }
    for (int s = std::max(opt.start_stage, 0); s < stop; ++s) {
        const auto& stage = a.stages[static_cast<std::size_t>(s)];
        for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
            const auto& blk = stage.blocks[b];
            const std::string bp = arch::block_path(static_cast<std::size_t>(s), b);
            Var h = x;
            for (std::size_t l = 0; l < blk.layers.size(); ++l) {
                const auto& layer = blk.layers[l];
                h = ops::conv2d(t, h, t.param(m.conv_weight(bp + "." + layer.name, layer.kernel)), layer.stride,
                                layer.padding());
                h = norm(t, m, norm_prefix(bp, l), h, opt.training);
                if (l + 1 < blk.layers.size()) h = ops::relu(t, h);
            }
            Var shortcut = x;
            if (blk.projection) {
                shortcut = ops::conv2d(t, x, t.param(m.conv_weight(bp + ".proj", 1)), blk.projection->stride, 0);
                shortcut = norm(t, m, bp + ".proj_bn", shortcut, opt.training);
            }
            x = ops::relu(t, ops::add(t, h, shortcut));
        }
    }
    if (opt.stop_stage >= 0) return x;
    Var pooled = ops::global_avg_pool(t, x);
    return ops::linear(t, pooled, t.param(m.named("head.weight")), t.param(m.named("head.bias")));
}

namespace {

template <class F>
NdArray chunked(const LabeledSet& data, std::size_t chunk, F&& run) {
    if (data.size() == 0) throw std::invalid_argument("empty dataset");
    NdArray out;
    std::size_t row_out = 0;
    for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
        const std::size_t n = std::min(chunk, data.size() - begin);
        const NdArray part = run(data.slice(begin, n).x);
        if (out.empty()) {
            nk::Shape shape = part.shape();
            shape[0] = data.size();
            out = NdArray(shape);
            row_out = part.size() / n;
        }
        std::copy_n(part.raw(), part.size(), out.raw() + begin * row_out);
    }
    return out;
}

}  // namespace

LabeledSet features(Model& m, const LabeledSet& data, int stage, std::size_t chunk) {
    NdArray x = chunked(data, chunk, [&](const NdArray& in) {
        Tape t(false);
        return t.value(forward(t, m, t.constant(in), {false, -1, stage}));
    });
    return {std::move(x), data.labels};
}

NdArray predict(Model& m, const LabeledSet& data, int start_stage, std::size_t chunk) {
    return chunked(data, chunk, [&](const NdArray& in) {
        Tape t(false);
        return t.value(forward(t, m, t.constant(in), {false, start_stage, -1}));
    });
}

double evaluate(Model& m, const LabeledSet& data, int start_stage) {
    const NdArray logits = predict(m, data, start_stage);
    const std::size_t k = logits.dim(1);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double* row = logits.raw() + i * k;
        const auto arg = static_cast<int>(std::max_element(row, row + k) - row);
        correct += arg == data.labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

double train_step(Model& m, const LabeledSet& batch, nk::Optimizer& opt, int start_stage) {
    const auto params = collect_parameters(m);
    for (Parameter* p : params) p->zero_grad();
    Tape t;
    Var logits = forward(t, m, t.constant(batch.x), {true, start_stage, -1});
    Var loss = ops::cross_entropy(t, logits, batch.labels);
    const double value = t.value(loss).item();
    if (!std::isfinite(value)) throw nk::NumericError("non-finite training loss");
    t.backward(loss);
    opt.step(params);
    return value;
}

}  // namespace archtune::net

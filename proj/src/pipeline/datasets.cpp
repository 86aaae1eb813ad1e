#include "archtune/pipeline/datasets.hpp"

#include <cmath>
#include <numbers>

#include "archtune/supernet/checkpoint.hpp"

namespace archtune::pipe {

namespace {

constexpr double kSourcePeriods[] = {3.0, 5.0};
constexpr double kTargetPeriods[] = {6.0, 10.0};

net::LabeledSet make_split(const DataSpec& spec, int n, const nk::Rng& base, std::string_view split) {
    const auto c = static_cast<std::size_t>(spec.shape[0]);
    const auto h = static_cast<std::size_t>(spec.shape[1]);
    const auto w = static_cast<std::size_t>(spec.shape[2]);
    net::LabeledSet out{nk::NdArray({static_cast<std::size_t>(n), c, h, w}), {}};
    nk::Rng rng = base.split(split);
    const double pi = std::numbers::pi;
    const bool target = spec.kind == TaskKind::target;
    for (int i = 0; i < n; ++i) {
        const int label = i % spec.classes;
        out.labels.push_back(label);
        const double period = (target ? kTargetPeriods : kSourcePeriods)[label / 5] * rng.uniform(0.9, 1.1);
        const double theta = (label % 5) * pi / 5 + (target ? pi / 10 : 0.0) + rng.uniform(-0.08, 0.08);
        const double phase = rng.uniform(0, 2 * pi);
        const double amp = rng.uniform(0.6, 1.0);
        const double offset = rng.uniform(-0.2, 0.2);
        const double fx = std::cos(theta) * 2 * pi / period;
        const double fy = std::sin(theta) * 2 * pi / period;
        double* img = out.x.raw() + static_cast<std::size_t>(i) * c * h * w;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double weight = rng.uniform(0.4, 1.0);
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    const double v = std::sin(fx * static_cast<double>(x) + fy * static_cast<double>(y) + phase);
                    img[(ch * h + y) * w + x] = offset + amp * weight * v + spec.noise * rng.normal();
                }
            }
        }
    }
    return out;
}

}  // namespace

Dataset generate_dataset(const DataSpec& spec) {
    if (spec.classes != 10) throw std::invalid_argument("synthetic textures define exactly 10 classes");
    const nk::Rng base = nk::Rng(spec.seed).split(spec.kind == TaskKind::source ? "source" : "target");
    return {make_split(spec, spec.train_size, base, "train"), make_split(spec, spec.val_size, base, "val"),
            make_split(spec, spec.test_size, base, "test")};
}

void save_dataset(const std::string& path, const Dataset& d) {
    std::vector<nk::Parameter> tensors;
    auto add = [&](const std::string& split, const net::LabeledSet& s) {
        tensors.emplace_back(split + ".x", s.x, false);
        tensors.emplace_back(split + ".y",
                             nk::NdArray({s.size()}, std::vector<double>(s.labels.begin(), s.labels.end())), false);
    };
    add("train", d.train);
    add("val", d.val);
    add("test", d.test);
    std::vector<nk::Parameter*> ptrs;
    for (auto& t : tensors) ptrs.push_back(&t);
    net::save_checkpoint(path, "dataset", ptrs);
}

Dataset load_dataset(const std::string& path) {
    const auto ck = net::load_checkpoint(path);
    if (ck.arch_name != "dataset") throw net::CheckpointError(path + " is not a dataset file");
    auto get = [&](const std::string& split) {
        auto x = ck.tensors.find(split + ".x");
        auto y = ck.tensors.find(split + ".y");
        if (x == ck.tensors.end() || y == ck.tensors.end()) throw net::CheckpointError(path + " lacks split " + split);
        net::LabeledSet s{x->second, {}};
        for (double v : y->second.data()) s.labels.push_back(static_cast<int>(v));
        return s;
    };
    return {get("train"), get("val"), get("test")};
}

}  // namespace archtune::pipe

#include <gtest/gtest.h>

#include <cmath>

#include "archtune/numkernel/ops.hpp"
#include "archtune/supernet/checkpoint.hpp"
#include "archtune/supernet/supernet.hpp"

namespace arch = archtune::arch;
namespace nk = archtune::nk;
namespace net = archtune::net;

namespace {

arch::SupernetSpec mini_spec(arch::ScopeLevel level = arch::ScopeLevel::small) {
    return arch::compile_search_space(arch::load_architecture("mini18"), arch::load_mutation_rule("kernel3to5"),
                                      arch::SearchScope{level});
}

net::LabeledSet random_set(std::size_t n, nk::Rng& rng, int classes = 10) {
    net::LabeledSet s{nk::NdArray({n, 3, 16, 16}), {}};
    for (auto& v : s.x.data()) v = rng.normal();
    for (std::size_t i = 0; i < n; ++i) s.labels.push_back(static_cast<int>(i % static_cast<std::size_t>(classes)));
    return s;
}

std::vector<arch::ActionVector> all_vectors(std::size_t k) {
    std::vector<arch::ActionVector> out;
    for (std::size_t code = 0; code < (std::size_t{1} << k); ++code) {
        std::vector<int> a(k);
        for (std::size_t i = 0; i < k; ++i) a[i] = static_cast<int>((code >> (k - 1 - i)) & 1);
        out.emplace_back(a);
    }
    return out;
}

double max_abs_diff(const nk::NdArray& a, const nk::NdArray& b) {
    EXPECT_EQ(a.shape(), b.shape());
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

std::map<std::string, std::uint64_t> checksums(const net::ParamStore& s) {
    std::map<std::string, std::uint64_t> out;
    for (const auto* p : s.all()) out[p->name] = p->value.checksum();
    return out;
}

// Make running statistics non-trivial so eval-mode paths are exercised.
void perturb_norms(net::ParamStore& s, nk::Rng& rng) {
    for (auto* p : s.all()) {
        if (p->name.ends_with(".running_var") || p->name.ends_with(".gamma")) {
            for (auto& v : p->value.data()) v = rng.uniform(0.5, 1.5);
        } else if (p->name.ends_with(".running_mean") || p->name.ends_with(".beta")) {
            for (auto& v : p->value.data()) v = rng.uniform(-0.2, 0.2);
        }
    }
}

nk::OptimizerConfig sgd(double lr) {
    nk::OptimizerConfig c;
    c.kind = nk::OptimizerKind::sgd;
    c.learning_rate = lr;
    c.momentum = 0.9;
    return c;
}

}  // namespace

TEST(Network, ParameterNamesFollowLayerPaths) {
    net::Network n(arch::load_architecture("mini18"), nk::Rng(1));
    EXPECT_NE(n.store().find("stem.conv.weight"), nullptr);
    EXPECT_NE(n.store().find("s2.b0.proj.weight"), nullptr);
    EXPECT_NE(n.store().find("s2.b0.proj_bn.running_var"), nullptr);
    EXPECT_EQ(n.store().find("s1.b0.proj.weight"), nullptr);
    EXPECT_EQ(n.store().at("s4.b1.conv2.weight").value.shape(), (nk::Shape{64, 64, 3, 3}));
    EXPECT_EQ(n.store().at("head.weight").value.shape(), (nk::Shape{10, 64}));
    EXPECT_FALSE(n.store().at("s1.b0.bn1.running_mean").trainable);
    EXPECT_EQ(n.parameters().size(), n.store().size());
}

TEST(Supernet, RandomInitIsDeterministic) {
    net::Supernet a(mini_spec(), nk::Rng(7));
    net::Supernet b(mini_spec(), nk::Rng(7));
    net::Supernet c(mini_spec(), nk::Rng(8));
    EXPECT_EQ(a.store().checksum(), b.store().checksum());
    EXPECT_NE(a.store().checksum(), c.store().checksum());
}

TEST(Supernet, FrozenCountMatchesOutOfScopeEnumeration) {
    const auto base = arch::load_architecture("mini18");
    for (auto level : {arch::ScopeLevel::small, arch::ScopeLevel::medium, arch::ScopeLevel::large, arch::ScopeLevel::full}) {
        const auto spec = mini_spec(level);
        // Stem conv + norm (4 tensors), then every conv and its norm per block.
        std::size_t expected = 5;
        for (std::size_t s = 0; s < spec.first_scope_stage(); ++s) {
            for (const auto& b : base.stages[s].blocks) expected += 5 * (b.layers.size() + (b.projection ? 1 : 0));
        }
        net::Supernet sn(spec, nk::Rng(1));
        EXPECT_EQ(sn.frozen_count(), expected);
        EXPECT_FALSE(sn.store().at("head.weight").frozen);
        EXPECT_TRUE(sn.store().at("stem.conv.weight").frozen);
    }
}

TEST(Supernet, BanksAreDistinctPerCandidate) {
    net::Supernet sn(mini_spec(), nk::Rng(3));
    for (const auto& site : sn.spec().sites) {
        const auto& k3 = sn.store().at(net::Supernet::bank_name(site.path, 3));
        const auto& k5 = sn.store().at(net::Supernet::bank_name(site.path, 5));
        EXPECT_EQ(k3.value.dim(2), 3u);
        EXPECT_EQ(k5.value.dim(2), 5u);
        EXPECT_EQ(sn.store().find(site.path + ".weight"), nullptr);
    }
}

TEST(Supernet, PretrainedZeroActionMatchesBaseNetwork) {
    nk::Rng rng(11);
    net::Network base(arch::load_architecture("mini18"), nk::Rng(5));
    perturb_norms(base.store(), rng);
    const auto bytes = net::encode_checkpoint("mini18", base.store().all());
    const auto ck = net::decode_checkpoint(bytes);
    net::Supernet sn(mini_spec(arch::ScopeLevel::medium), ck.tensors, nk::Rng(9));
    auto view = sn.activate(arch::ActionVector::zeros(sn.spec().num_sites()));
    const auto data = random_set(12, rng);
    EXPECT_LE(max_abs_diff(net::predict(view, data), net::predict(base, data)), 1e-9);
}

TEST(Supernet, PretrainedShapeMismatchNamesPath) {
    net::Network base(arch::load_architecture("mini18"), nk::Rng(5));
    auto ck = net::decode_checkpoint(net::encode_checkpoint("mini18", base.store().all()));
    ck.tensors["s4.b1.conv2.weight"] = nk::NdArray({64, 64, 5, 5});
    try {
        net::Supernet sn(mini_spec(), ck.tensors, nk::Rng(1));
        FAIL();
    } catch (const net::CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find("s4.b1.conv2.weight"), std::string::npos);
    }
    ck.tensors.erase("s1.b0.bn1.gamma");
    EXPECT_THROW(net::Supernet(mini_spec(), ck.tensors, nk::Rng(1)), net::CheckpointError);
}

TEST(Supernet, SubnetViewMatchesStandaloneOracleForEveryVector) {
    nk::Rng rng(21);
    net::Supernet sn(mini_spec(), nk::Rng(4));
    perturb_norms(sn.store(), rng);
    const auto data = random_set(6, rng);
    for (const auto& a : all_vectors(sn.spec().num_sites())) {
        auto view = sn.activate(a);
        net::Network standalone = sn.extract(a);
        EXPECT_LE(max_abs_diff(net::predict(view, data), net::predict(standalone, data)), 1e-9) << a.to_string();
        for (const auto& site : sn.spec().sites) {
            const int k = view.subnet().site_kernels[*sn.spec().site_index(site.path)];
            EXPECT_EQ(&view.conv_weight(site.path, k), &sn.store().at(net::Supernet::bank_name(site.path, k)));
        }
    }
}

TEST(Supernet, TrainingIsolatesUnselectedBanksAndFrozenParameters) {
    nk::Rng rng(2);
    const auto data = random_set(16, rng);
    for (const auto& a : all_vectors(4)) {
        net::Supernet sn(mini_spec(), nk::Rng(6));
        const auto before = checksums(sn.store());
        auto view = sn.activate(a);
        auto opt = nk::make_optimizer(sgd(0.05));
        const net::LabeledSet batches[] = {data};
        net::train_subnet(view, batches, *opt);
        std::set<const nk::Parameter*> reachable;
        for (auto* p : view.parameters()) reachable.insert(p);
        std::size_t changed_banks = 0;
        for (const auto* p : sn.store().all()) {
            const bool same = p->value.checksum() == before.at(p->name);
            if (p->frozen || !reachable.count(p)) {
                EXPECT_TRUE(same) << p->name << " A=" << a.to_string();
            } else if (p->name.find(".k") != std::string::npos) {
                changed_banks += !same;
            }
        }
        EXPECT_EQ(changed_banks, 4u);
    }
}

TEST(Supernet, WeightSharingWritesThrough) {
    nk::Rng rng(3);
    net::Supernet sn(mini_spec(), nk::Rng(6));
    const arch::ActionVector a({1, 0, 1, 0});
    auto first = sn.activate(a);
    const std::string bank = net::Supernet::bank_name(sn.spec().sites[0].path, 5);
    const auto before = sn.store().at(bank).value.checksum();
    auto opt = nk::make_optimizer(sgd(0.05));
    const net::LabeledSet batches[] = {random_set(8, rng)};
    net::train_subnet(first, batches, *opt);
    auto second = sn.activate(a);
    EXPECT_NE(second.conv_weight(sn.spec().sites[0].path, 5).value.checksum(), before);
    EXPECT_EQ(&second.conv_weight(sn.spec().sites[0].path, 5), &first.conv_weight(sn.spec().sites[0].path, 5));
    EXPECT_FALSE(first.current());
    EXPECT_THROW(net::train_subnet(first, batches, *opt), std::logic_error);
}

TEST(Supernet, ZeroLearningRateLeavesTrainableParametersUnchanged) {
    nk::Rng rng(4);
    net::Supernet sn(mini_spec(), nk::Rng(6));
    const auto before = checksums(sn.store());
    auto view = sn.activate(arch::ActionVector({1, 1, 0, 0}));
    auto opt = nk::make_optimizer(sgd(0.0));
    const net::LabeledSet batches[] = {random_set(8, rng)};
    net::train_subnet(view, batches, *opt);
    for (const auto* p : sn.store().all()) {
        if (p->trainable) {
            EXPECT_EQ(p->value.checksum(), before.at(p->name)) << p->name;
        }
    }
}

TEST(Supernet, FrozenBackboneUnchangedOverManySteps) {
    nk::Rng rng(5);
    net::Supernet sn(mini_spec(arch::ScopeLevel::medium), nk::Rng(6));
    std::map<std::string, std::uint64_t> frozen;
    for (const auto* p : sn.store().all()) {
        if (p->frozen) frozen[p->name] = p->value.checksum();
    }
    auto opt = nk::make_optimizer(sgd(0.02));
    const auto data = random_set(8, rng);
    for (int step = 0; step < 100; ++step) {
        std::vector<int> a(sn.spec().num_sites());
        for (auto& v : a) v = static_cast<int>(rng.below(2));
        auto view = sn.activate(arch::ActionVector(a));
        const net::LabeledSet batches[] = {data};
        net::train_subnet(view, batches, *opt);
    }
    for (const auto& [name, sum] : frozen) EXPECT_EQ(sn.store().at(name).value.checksum(), sum) << name;
}

TEST(Supernet, CachedPrefixTrainingMatchesFullForward) {
    nk::Rng rng(8);
    const auto data = random_set(16, rng);
    net::Supernet full(mini_spec(arch::ScopeLevel::medium), nk::Rng(6));
    net::Supernet cached(mini_spec(arch::ScopeLevel::medium), nk::Rng(6));
    perturb_norms(full.store(), rng);
    for (std::size_t i = 0; i < full.store().size(); ++i) cached.store().all()[i]->value = full.store().all()[i]->value;
    const int first = static_cast<int>(full.spec().first_scope_stage());
    const arch::ActionVector a({0, 1, 1, 0, 1, 0, 0, 1});
    auto vf = full.activate(a);
    auto vc = cached.activate(a);
    const auto feats = net::features(vc, data, first);
    auto of = nk::make_optimizer(sgd(0.05));
    auto oc = nk::make_optimizer(sgd(0.05));
    for (int step = 0; step < 3; ++step) {
        const double lf = net::train_step(vf, data, *of);
        const double lc = net::train_step(vc, feats, *oc, first);
        EXPECT_NEAR(lf, lc, 1e-10);
    }
    for (std::size_t i = 0; i < full.store().size(); ++i) {
        EXPECT_LE(max_abs_diff(full.store().all()[i]->value, cached.store().all()[i]->value), 1e-10)
            << full.store().all()[i]->name;
    }
    EXPECT_NEAR(net::evaluate(vf, data), net::evaluate(vc, feats, first), 0.0);
}

TEST(Supernet, LossDecreasesOnSeparableToySet) {
    const auto a = arch::parse_architecture(
        "name toy\ninput 3x8x8\nclasses 2\nstem 4\n[stage 1]\nblock basic 4 1\n[stage 2]\nblock basic 8 2\n");
    const auto spec = arch::compile_search_space(a, arch::load_mutation_rule("kernel3to5"), {arch::ScopeLevel::medium});
    net::Supernet sn(spec, nk::Rng(1));
    for (auto* p : sn.store().all()) p->frozen = false;
    nk::Rng rng(12);
    net::LabeledSet data{nk::NdArray({32, 3, 8, 8}), {}};
    for (std::size_t i = 0; i < 32; ++i) {
        const int y = static_cast<int>(i % 2);
        data.labels.push_back(y);
        for (std::size_t j = 0; j < 192; ++j) data.x[i * 192 + j] = (y ? 1.0 : -1.0) * ((j / 8) % 2 ? 1.0 : 0.2) + 0.3 * rng.normal();
    }
    auto opt = nk::make_optimizer(sgd(0.05));
    std::vector<double> losses;
    for (int step = 0; step < 50; ++step) {
        auto view = sn.activate(arch::ActionVector({1, 0, 1, 0}));
        const net::LabeledSet batches[] = {data};
        losses.push_back(net::train_subnet(view, batches, *opt));
    }
    double head = 0, tail = 0;
    for (int i = 0; i < 10; ++i) {
        head += losses[static_cast<std::size_t>(i)];
        tail += losses[losses.size() - 1 - static_cast<std::size_t>(i)];
    }
    EXPECT_LT(tail, 0.5 * head);
}

TEST(Supernet, NonFiniteLossReportsActionVector) {
    nk::Rng rng(1);
    net::Supernet sn(mini_spec(), nk::Rng(6));
    sn.store().at("head.bias").value[0] = std::nan("");
    auto view = sn.activate(arch::ActionVector({0, 1, 1, 0}));
    auto opt = nk::make_optimizer(sgd(0.05));
    const net::LabeledSet batches[] = {random_set(4, rng), random_set(4, rng)};
    try {
        net::train_subnet(view, batches, *opt);
        FAIL();
    } catch (const nk::NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("A=0110, step 0"), std::string::npos);
    }
}

TEST(Evaluate, ConstantPredictorScoresOneTenth) {
    net::Network n(arch::load_architecture("mini18"), nk::Rng(1));
    n.store().at("head.weight").value.fill(0.0);
    n.store().at("head.bias").value[0] = 1.0;
    nk::Rng rng(3);
    EXPECT_DOUBLE_EQ(net::evaluate(n, random_set(50, rng)), 0.1);
}

TEST(Evaluate, MatchesPerSampleCountingOracleAndHasNoSideEffects) {
    nk::Rng rng(4);
    net::Network n(arch::load_architecture("mini18"), nk::Rng(2));
    perturb_norms(n.store(), rng);
    auto data = random_set(32, rng);
    for (auto& y : data.labels) y = static_cast<int>(rng.below(3));
    const auto before = n.store().checksum();
    const double acc = net::evaluate(n, data);
    EXPECT_EQ(n.store().checksum(), before);
    int correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        nk::Tape t(false);
        const auto logits = t.value(net::forward(t, n, t.constant(data.slice(i, 1).x), {}));
        int best = 0;
        for (int c = 1; c < 10; ++c) {
            if (logits[static_cast<std::size_t>(c)] > logits[static_cast<std::size_t>(best)]) best = c;
        }
        correct += best == data.labels[i];
    }
    EXPECT_DOUBLE_EQ(acc, correct / 32.0);
    EXPECT_THROW(net::evaluate(n, net::LabeledSet{}), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsExact) {
    net::Supernet sn(mini_spec(), nk::Rng(6));
    const auto bytes = net::encode_checkpoint("mini18", sn.store().all());
    const auto ck = net::decode_checkpoint(bytes);
    EXPECT_EQ(ck.arch_name, "mini18");
    EXPECT_EQ(ck.tensors.size(), sn.store().size());
    net::Supernet other(mini_spec(), nk::Rng(99));
    net::restore(other.store(), ck.tensors);
    EXPECT_EQ(other.store().checksum(), sn.store().checksum());
    EXPECT_EQ(net::encode_checkpoint("mini18", other.store().all()), bytes);
}

TEST(Checkpoint, CorruptionIsDetected) {
    net::Network n(arch::load_architecture("mini18"), nk::Rng(1));
    auto bytes = net::encode_checkpoint("mini18", n.store().all());
    EXPECT_THROW(net::decode_checkpoint(bytes.substr(0, bytes.size() - 3)), net::CheckpointError);
    bytes[bytes.size() / 2] ^= 1;
    EXPECT_THROW(net::decode_checkpoint(bytes), net::CheckpointError);
    EXPECT_THROW(net::decode_checkpoint("not a checkpoint at all"), net::CheckpointError);
}

TEST(Checkpoint, FileRoundTrip) {
    net::Network n(arch::load_architecture("mini18"), nk::Rng(1));
    const std::string path = testing::TempDir() + "/net.ckpt";
    net::save_checkpoint(path, "mini18", n.store().all());
    net::Network m(arch::load_architecture("mini18"), nk::Rng(2));
    net::restore(m.store(), net::load_checkpoint(path).tensors);
    EXPECT_EQ(m.store().checksum(), n.store().checksum());
}

// Acceptance suite: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "archtune/pipeline/pipeline.hpp"
#include "gradcheck.hpp"
#include "op_cases.hpp"
#include "traces.hpp"

namespace fs = std::filesystem;
using namespace archtune;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::map<std::string, std::string> key_values(const fs::path& p) {
    std::map<std::string, std::string> kv;
    std::istringstream in(slurp(p));
    std::string line;
    while (std::getline(in, line)) {
        auto eq = line.find(" = ");
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return kv;
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

Outcome search_space_counts() {
    const auto t0 = Clock::now();
    const auto rule = arch::load_mutation_rule("kernel3to5");
    const std::map<std::string, std::vector<int>> expected{{"resnet18", {4, 8, 12, 16}}, {"resnet50", {3, 9, 13, 16}}};
    const arch::ScopeLevel levels[] = {arch::ScopeLevel::small, arch::ScopeLevel::medium, arch::ScopeLevel::large,
                                       arch::ScopeLevel::full};
    bool ok = true;
    std::string got;
    for (const auto& [name, exps] : expected) {
        const auto a = arch::load_architecture(name);
        got += name + ":";
        for (std::size_t i = 0; i < 4; ++i) {
            const int log2 = arch::count_subnets(arch::compile_search_space(a, rule, arch::SearchScope{levels[i]})).exact_log2();
            got += " 2^" + std::to_string(log2);
            ok = ok && log2 == exps[i];
        }
        got += "; ";
    }
    const double secs = seconds_since(t0);
    return {ok && secs < 1.0, got + num(secs) + " s"};
}

Outcome gradient_checks() {
    const auto t0 = Clock::now();
    nk::Rng rng(7);
    auto cases = testing::make_op_cases(rng, 20);
    double worst = 0;
    std::string worst_name;
    std::set<std::string> ops;
    std::size_t elements = 0;
    for (auto& c : cases) {
        const auto r = testing::check_gradients(c.params(), c.loss);
        elements += r.checked;
        ops.insert(c.name.substr(0, c.name.find(' ')));
        if (r.max_rel_error > worst) {
            worst = r.max_rel_error;
            worst_name = c.name;
        }
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-6 && secs < 120.0,
            std::to_string(cases.size()) + " cases over " + std::to_string(ops.size()) + " op groups, " +
                std::to_string(elements) + " elements, max rel error " + num(worst) + " (" + worst_name + "), " +
                num(secs) + " s"};
}

Outcome reinforce() {
    nk::Rng rng(10);
    double worst = 0;
    for (int trial = 0; trial < 3; ++trial) {
        ctrl::ControllerConfig cfg;
        cfg.embed_dim = 5;
        cfg.hidden_dim = 4;
        cfg.gamma = trial == 0 ? 1.0 : 0.8;
        ctrl::ControllerPolicy policy({2, 2}, cfg, nk::Rng(static_cast<std::uint64_t>(30 + trial)));
        for (auto* p : policy.parameters()) {
            if (p->name.rfind("ctrl.fc", 0) == 0) {
                for (auto& v : p->value.data()) v = rng.normal();
            }
        }
        const auto actions = ctrl::sample_episode(policy, rng).actions;
        const double adv = rng.uniform(-1, 1);
        ctrl::objective_gradient(policy, actions, adv);
        const double h = 1e-5;
        for (auto* p : policy.parameters()) {
            for (std::size_t i = 0; i < p->value.size(); ++i) {
                const double orig = p->value[i];
                p->value[i] = orig + h;
                const double up = ctrl::objective(policy, actions, adv);
                p->value[i] = orig - h;
                const double down = ctrl::objective(policy, actions, adv);
                p->value[i] = orig;
                worst = std::max(worst, testing::rel_error(p->grad[i], (up - down) / (2 * h)));
            }
        }
    }

    ctrl::ControllerPolicy policy({2, 2, 2, 2}, {}, nk::Rng(11));
    auto opt = ctrl::make_controller_optimizer(policy.config());
    ctrl::RewardBaseline baseline;
    for (double reward : {0.3, 0.9}) {
        auto t = ctrl::sample_episode(policy, rng);
        t.reward = reward;
        ctrl::reinforce_update(policy, t, baseline, *opt);
    }
    const auto before = policy.store().checksum();
    auto t = ctrl::sample_episode(policy, rng);
    t.reward = *baseline.value();
    const double j = ctrl::reinforce_update(policy, t, baseline, *opt);
    const bool zero_ok = j == 0.0 && policy.store().checksum() == before;

    int converged = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        ctrl::ControllerPolicy bandit({2}, {}, nk::Rng(seed));
        auto bopt = ctrl::make_controller_optimizer(bandit.config());
        ctrl::RewardBaseline b;
        nk::Rng r = nk::Rng(seed).split("bandit");
        for (int u = 0; u < 300; ++u) {
            auto tr = ctrl::sample_episode(bandit, r);
            tr.reward = tr.actions[0] == 1 ? 1.0 : 0.0;
            ctrl::reinforce_update(bandit, tr, b, *bopt);
        }
        converged += ctrl::greedy_episode(bandit).probs[0][1] >= 0.95;
    }
    return {worst <= 1e-6 && zero_ok && converged == 10,
            "FD max rel error " + num(worst) + ", zero-advantage step " + (zero_ok ? "exact" : "NOT zero") +
                ", bandit " + std::to_string(converged) + "/10"};
}

Outcome weight_sharing() {
    const auto spec = arch::compile_search_space(arch::load_architecture("mini18"),
                                                 arch::load_mutation_rule("kernel3to5"), arch::SearchScope{});
    nk::Rng rng(21);
    net::LabeledSet data{nk::NdArray({6, 3, 16, 16}), {0, 1, 2, 3, 4, 5}};
    for (auto& v : data.x.data()) v = rng.normal();
    net::Supernet sn(spec, nk::Rng(4));
    for (auto* p : sn.store().all()) {
        if (p->name.ends_with(".running_var") || p->name.ends_with(".gamma")) {
            for (auto& v : p->value.data()) v = rng.uniform(0.5, 1.5);
        } else if (p->name.ends_with(".running_mean") || p->name.ends_with(".beta")) {
            for (auto& v : p->value.data()) v = rng.uniform(-0.2, 0.2);
        }
    }
    double worst = 0;
    for (const auto& a : all_vectors(spec.num_sites())) {
        auto view = sn.activate(a);
        net::Network standalone = sn.extract(a);
        const auto pa = net::predict(view, data);
        const auto pb = net::predict(standalone, data);
        for (std::size_t i = 0; i < pa.size(); ++i) worst = std::max(worst, std::abs(pa[i] - pb[i]));
    }

    std::size_t violations = 0;
    for (const auto& a : all_vectors(spec.num_sites())) {
        net::Supernet fresh(spec, nk::Rng(6));
        std::map<std::string, std::uint64_t> before;
        for (const auto* p : fresh.store().all()) before[p->name] = p->value.checksum();
        auto view = fresh.activate(a);
        nk::OptimizerConfig oc;
        oc.kind = nk::OptimizerKind::sgd;
        oc.learning_rate = 0.05;
        oc.momentum = 0.9;
        auto opt = nk::make_optimizer(oc);
        const net::LabeledSet batches[] = {data, data};
        net::train_subnet(view, batches, *opt);
        std::set<const nk::Parameter*> reachable;
        for (auto* p : view.parameters()) reachable.insert(p);
        for (const auto* p : fresh.store().all()) {
            if ((p->frozen || !reachable.count(p)) && p->value.checksum() != before.at(p->name)) ++violations;
        }
    }
    return {worst <= 1e-9 && violations == 0, "16 subnets, max |view - standalone| " + num(worst) +
                                                  ", changed unselected/frozen tensors " + std::to_string(violations)};
}

Outcome early_stopping() {
    const auto fixed = arch::ActionVector::from_string("11100001");
    const auto trace = testing::fixing_trace(fixed, 140, 180, 220, 5);
    auto first_stop = [&](std::size_t window) -> std::size_t {
        stop::ActionHistory h(std::vector<int>(fixed.size(), 2), window);
        for (std::size_t r = 0; r < trace.sampled.size(); ++r) {
            h.record(trace.sampled[r], trace.greedy[r]);
            if (stop::is_stable(h, 0.9)) return h.round();
        }
        return 0;
    };
    const std::size_t s20 = first_stop(20), s40 = first_stop(40), s10 = first_stop(10), s1 = first_stop(1);
    stop::StopDecision d{true, s20, fixed, stop::StopReason::stable};
    const double saving20 = stop::search_saving(d, 180);
    d.stop_round = 140;
    const double bound = stop::search_saving(d, 180);
    const bool ok = s20 == 160 && s40 == 180 && s10 == 150 && s1 == 141 && std::abs(saving20 - 20.0 / 180.0) < 1e-15 &&
                    std::abs(bound - 40.0 / 180.0) < 1e-15 && std::lround(bound * 1000) == 222;
    return {ok, "stops W=40:" + std::to_string(s40) + " W=20:" + std::to_string(s20) + " W=10:" + std::to_string(s10) +
                    " W=1:" + std::to_string(s1) + ", saving at W=20 " + num(100 * saving20, 3) +
                    "%, stop 140 of 180 gives " + num(100 * bound, 3) + "%"};
}

Outcome controller_convergence(const fs::path& work) {
    const auto t0 = Clock::now();
    int recovered = 0;
    std::string rounds;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        pipe::RunConfig cfg;
        cfg.oracle = true;
        cfg.seed = seed;
        const pipe::RunPaths run{(work / ("oracle-s" + std::to_string(seed))).string()};
        fs::remove_all(run.dir);
        std::ostringstream log;
        pipe::run_all(cfg, run, log);
        const auto rep = key_values(run.file("report.txt"));
        const bool ok = rep.at("stop_reason") == "stable" && rep.at("oracle_match") == "yes" &&
                        std::stoi(rep.at("stop_round")) <= 500;
        recovered += ok;
        rounds += (rounds.empty() ? "" : ",") + rep.at("stop_round") + (ok ? "" : "!");
    }
    const double secs = seconds_since(t0);
    return {recovered >= 9 && secs < 60.0, std::to_string(recovered) + "/10 seeds stable at the optimum (rounds " +
                                               rounds + "), " + num(secs) + " s"};
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome full_pipeline(const fs::path& work, int seeds) {
    std::vector<double> searched, vanilla;
    double slowest = 0;
    bool frozen_ok = true, saving_ok = true;
    std::string savings;
    for (int seed = 1; seed <= seeds; ++seed) {
        pipe::RunConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(seed);
        const pipe::RunPaths run{(work / ("desk-s" + std::to_string(seed))).string()};
        fs::remove_all(run.dir);
        std::ostringstream log;
        const auto t0 = Clock::now();
        pipe::run_all(cfg, run, log);
        slowest = std::max(slowest, seconds_since(t0));
        const auto rep = key_values(run.file("report.txt"));
        searched.push_back(std::stod(rep.at("searched_final_accuracy")));
        vanilla.push_back(std::stod(rep.at("vanilla_final_accuracy")));
        savings += (savings.empty() ? "" : ",") + rep.at("finetune_saving");
        saving_ok = saving_ok && rep.count("finetune_saving");
        for (const char* f : {"stage2_searched.txt", "stage2_vanilla.txt"}) {
            const auto kv = key_values(run.file(f));
            frozen_ok = frozen_ok && kv.at("frozen_checksum_source") == kv.at("frozen_checksum_after");
        }
    }
    const auto f = pipe::finetune_saving(pipe::Curve{{0, 46000, 68000}, {0.1, 0.9, 0.9}},
                                         pipe::Curve{{0, 46000, 68000}, {0.1, 0.8, 0.9}});
    const bool arithmetic_ok = f && std::abs(f->saving - 0.323529411764706) < 1e-12;
    const double ms = median(searched), mv = median(vanilla);
    const bool ok = slowest <= 900.0 && frozen_ok && ms >= mv - 0.01 && saving_ok && arithmetic_ok;
    return {ok, std::to_string(seeds) + " seeds, slowest run-all " + num(slowest) + " s, frozen layers " +
                    (frozen_ok ? "bit-identical" : "CHANGED") + ", median accuracy searched " + num(ms) + " vs vanilla " +
                    num(mv) + ", finetune_saving [" + savings + "], 4.6e4/6.8e4 -> " +
                    (f ? num(f->saving, 6) : std::string("undefined"))};
}

Outcome determinism(const fs::path& work) {
    pipe::RunConfig cfg;
    cfg.seed = 1;
    const pipe::RunPaths a{(work / "desk-s1").string()};
    const pipe::RunPaths b{(work / "desk-s1-repeat").string()};
    fs::remove_all(b.dir);
    std::ostringstream log;
    if (!fs::exists(a.file("report.done"))) pipe::run_all(cfg, a, log);
    pipe::run_all(cfg, b, log);
    std::size_t compared = 0;
    std::vector<std::string> differing;
    for (const auto& e : fs::directory_iterator(a.dir)) {
        const std::string name = e.path().filename().string();
        if (!(name.ends_with(".csv") || name.ends_with(".txt"))) continue;
        ++compared;
        if (slurp(e.path()) != slurp(b.file(name))) differing.push_back(name);
    }
    std::string detail = std::to_string(compared) + " CSV/report files compared";
    for (const auto& d : differing) detail += ", differs: " + d;
    return {differing.empty() && compared >= 8, detail};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::string work = "acceptance_runs";
    int seeds = 5;
    std::vector<int> only;
    app.add_option("--work-dir", work, "scratch directory for pipeline runs");
    app.add_option("--seeds", seeds, "paired seeds for the desk run")->check(CLI::PositiveNumber);
    app.add_option("--only", only, "criterion numbers to run");
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(work);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"search-space counts", search_space_counts},
        {"numerical-kernel gradients", gradient_checks},
        {"REINFORCE correctness", reinforce},
        {"weight sharing and equivalence", weight_sharing},
        {"early-stopping behavior", early_stopping},
        {"controller convergence (oracle)", [&] { return controller_convergence(work); }},
        {"full pipeline desk run", [&] { return full_pipeline(work, seeds); }},
        {"determinism", [&] { return determinism(work); }},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << ". " << criteria[i].first << ": " << o.detail
                  << std::endl;
    }
    return failed == 0 ? 0 : 1;
}

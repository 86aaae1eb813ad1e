#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "archtune/pipeline/pipeline.hpp"

namespace archtune::pipe {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_file(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out << content;
        if (!out) throw std::runtime_error("write failed for " + tmp);
    }
    fs::rename(tmp, path);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

using KeyValues = std::map<std::string, std::string>;

KeyValues read_key_values(const std::string& path) {
    KeyValues kv;
    std::istringstream in(read_file(path));
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find(" = ");
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return kv;
}

std::string get(const KeyValues& kv, const std::string& key, const std::string& file) {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error(file + " lacks " + key);
    return it->second;
}

using Table = std::vector<std::vector<std::string>>;

Table read_csv(const std::string& path) {
    Table rows;
    std::istringstream in(read_file(path));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

std::string curve_csv(const Curve& c) {
    std::string out = "iteration,accuracy\n";
    for (std::size_t i = 0; i < c.iterations.size(); ++i) {
        out += std::to_string(c.iterations[i]) + "," + fmt(c.accuracy[i]) + "\n";
    }
    return out;
}

Curve read_curve(const std::string& path) {
    Curve c;
    for (const auto& row : read_csv(path)) {
        c.iterations.push_back(std::stol(row.at(0)));
        c.accuracy.push_back(std::stod(row.at(1)));
    }
    return c;
}

struct Context {
    const RunConfig& cfg;
    const RunPaths& paths;
    std::ostream& log;
    arch::ArchitectureSpec arch;
    arch::SupernetSpec spec;
};

Context make_context(const RunConfig& cfg, const RunPaths& paths, std::ostream& log) {
    auto a = arch::load_architecture(cfg.arch);
    auto spec = arch::compile_search_space(a, arch::load_mutation_rule(cfg.rule), arch::SearchScope{*arch::parse_scope(cfg.scope)});
    return {cfg, paths, log, std::move(a), std::move(spec)};
}

void gen_data(Context& c) {
    if (c.cfg.oracle) return;
    DataSpec d;
    d.shape = c.arch.input_shape;
    d.classes = c.arch.classes;
    d.train_size = c.cfg.train_size;
    d.val_size = c.cfg.val_size;
    d.test_size = c.cfg.test_size;
    d.noise = c.cfg.data_noise;
    d.seed = c.cfg.seed;
    d.kind = TaskKind::source;
    save_dataset(c.paths.file("source.ds"), generate_dataset(d));
    d.kind = TaskKind::target;
    save_dataset(c.paths.file("target.ds"), generate_dataset(d));
}

void pretrain(Context& c) {
    if (c.cfg.oracle) return;
    const Dataset source = load_dataset(c.paths.file("source.ds"));
    net::Network model(c.arch, nk::Rng(c.cfg.seed).split("pretrain/init"));
    const PretrainResult r = pretrain_source(c.cfg, model, source.train);
    const double test_acc = net::evaluate(model, source.test);
    c.log << "pretrain: " << r.epochs_run << " epochs, train accuracy " << r.train_accuracy << ", test accuracy "
          << test_acc << (r.reached_target ? "" : " (target not reached)") << "\n";
    net::save_checkpoint(c.paths.file("source.ckpt"), c.arch.name, model.store().all());
    write_file(c.paths.file("pretrain.txt"), "epochs_run = " + std::to_string(r.epochs_run) +
                                                 "\ntrain_accuracy = " + fmt(r.train_accuracy) +
                                                 "\nreached_target = " + (r.reached_target ? "true" : "false") +
                                                 "\nsource_test_accuracy = " + fmt(test_acc) + "\n");
}

std::vector<int> site_candidates(const arch::SupernetSpec& spec) {
    std::vector<int> out;
    for (const auto& s : spec.sites) out.push_back(static_cast<int>(s.candidate_kernels.size()));
    return out;
}

net::Supernet pretrained_supernet(Context& c) {
    const auto ck = net::load_checkpoint(c.paths.file("source.ckpt"));
    if (ck.arch_name != c.arch.name) {
        throw net::CheckpointError("source.ckpt was written for " + ck.arch_name + ", not " + c.arch.name);
    }
    return net::Supernet(c.spec, ck.tensors, nk::Rng(c.cfg.seed).split("supernet/init"));
}

void write_search_logs(Context& c, const SearchResult& r) {
    std::vector<double> raw;
    for (const auto& row : r.rounds) raw.push_back(row.raw_accuracy);
    const auto rel = ctrl::relative_total_reward(raw);
    std::string reward = "round,raw_accuracy,baselined_reward,cumulative_raw,relative_total_reward\n";
    std::string actions = "round";
    for (std::size_t s = 0; s < c.spec.num_sites(); ++s) actions += ",p_a" + std::to_string(s + 1);
    actions += ",greedy,stable\n";
    std::string losses = "round,train_loss\n";
    double cum = 0;
    for (std::size_t i = 0; i < r.rounds.size(); ++i) {
        const auto& row = r.rounds[i];
        cum += row.raw_accuracy;
        reward += std::to_string(row.round) + "," + fmt(row.raw_accuracy) + "," + fmt(row.baselined_reward) + "," +
                  fmt(cum) + "," + fmt(rel[i]) + "\n";
        actions += std::to_string(row.round);
        for (double p : row.heatmap) actions += "," + fmt(p);
        actions += "," + row.greedy.to_string() + "," + (row.stable ? "1" : "0") + "\n";
        losses += std::to_string(row.round) + "," + fmt(row.train_loss) + "\n";
    }
    write_file(c.paths.file("reward.csv"), reward);
    write_file(c.paths.file("actions.csv"), actions);
    if (!c.cfg.oracle) write_file(c.paths.file("supernet_loss.csv"), losses);
}

void search(Context& c) {
    ctrl::ControllerPolicy policy(site_candidates(c.spec), controller_config(c.cfg),
                                  nk::Rng(c.cfg.seed).split("controller/init"));
    std::string extra;
    SearchResult result;
    if (c.cfg.oracle) {
        const TabularOracle oracle = make_tabular_oracle(c.spec.num_sites(), c.cfg.seed);
        result = stage1_search(c.cfg, policy, [&](const arch::ActionVector& a) { return RewardSample{oracle.reward(a), 0.0}; });
        extra = "oracle_optimum = " + oracle.optimum.to_string() + "\nminibatches = 0\n";
    } else {
        net::Supernet sn = pretrained_supernet(c);
        const Dataset target = load_dataset(c.paths.file("target.ds"));
        const int first = static_cast<int>(c.spec.first_scope_stage());
        auto zero = sn.activate(arch::ActionVector::zeros(c.spec.num_sites()));
        const auto train = net::features(zero, target.train, first);
        const auto val = net::features(zero, target.val, first);
        auto opt = nk::make_optimizer(sgd_config(c.cfg.supernet_lr, c.cfg.momentum));
        BatchStream stream(train.size(), nk::Rng(c.cfg.seed).split("supernet/batches"));
        const RewardFn fn = supernet_reward(c.cfg, sn, train, val, first, *opt, stream);
        result = stage1_search(c.cfg, policy, fn);
        net::save_checkpoint(c.paths.file("supernet.ckpt"), c.arch.name, sn.store().all());
        extra = "minibatches = " + std::to_string(result.rounds.size() * static_cast<std::size_t>(c.cfg.subnet_batches)) + "\n";
    }
    net::save_checkpoint(c.paths.file("controller.ckpt"), "controller", policy.store().all());
    write_search_logs(c, result);
    const auto& d = result.decision;
    c.log << "search: " << stop::to_string(d.reason) << " at round " << d.stop_round << ", A* = " << d.a_star.to_string()
          << "\n";
    write_file(c.paths.file("search.txt"),
               "sites = " + std::to_string(c.spec.num_sites()) + "\nsubnets = " + arch::count_subnets(c.spec).to_string() +
                   "\nstop_reason = " + std::string(stop::to_string(d.reason)) + "\nstop_round = " +
                   std::to_string(d.stop_round) + "\nbudget = " + std::to_string(c.cfg.budget) + "\na_star = " +
                   d.a_star.to_string() + "\nsearch_saving = " +
                   fmt(stop::search_saving(d, static_cast<std::size_t>(c.cfg.budget))) + "\n" + extra);
}

std::uint64_t frozen_digest(std::span<nk::Parameter* const> params, const net::TensorMap* source) {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto* p : params) {
        if (!p->frozen) continue;
        const nk::NdArray& v = source ? source->at(p->name) : p->value;
        h = (h ^ v.checksum()) * 1099511628211ull;
        h = (h ^ nk::Rng::hash_tag(p->name)) * 1099511628211ull;
    }
    return h;
}

void stage2(Context& c, bool searched) {
    if (c.cfg.oracle) return;
    const auto search = read_key_values(c.paths.file("search.txt"));
    const auto a_star = searched ? arch::ActionVector::from_string(get(search, "a_star", "search.txt"))
                                 : arch::ActionVector::zeros(c.spec.num_sites());
    if (a_star.size() != c.spec.num_sites()) throw std::runtime_error("A* length does not match the search scope");
    const auto ck = net::load_checkpoint(c.paths.file("source.ckpt"));
    net::Supernet sn = pretrained_supernet(c);
    if (searched && c.cfg.stage2_init == "supernet") net::restore(sn.store(), net::load_checkpoint(c.paths.file("supernet.ckpt")).tensors);
    net::Network model = sn.extract(a_star);
    const int first = static_cast<int>(c.spec.first_scope_stage());
    net::freeze_before(model, static_cast<std::size_t>(first));
    const std::string arch_before = arch::to_text(model.arch());
    const Dataset target = load_dataset(c.paths.file("target.ds"));
    const auto train = net::features(model, target.train, first);
    const auto test = net::features(model, target.test, first);
    const Curve curve = finetune(c.cfg, model, train, test, first);
    if (arch::to_text(model.arch()) != arch_before) throw std::logic_error("architecture changed during stage 2");
    const std::string tag = searched ? "searched" : "vanilla";
    write_file(c.paths.file("curve_" + tag + ".csv"), curve_csv(curve));
    char before[32], after[32];
    std::snprintf(before, sizeof before, "%016llx", static_cast<unsigned long long>(frozen_digest(model.store().all(), &ck.tensors)));
    std::snprintf(after, sizeof after, "%016llx", static_cast<unsigned long long>(frozen_digest(model.store().all(), nullptr)));
    write_file(c.paths.file("stage2_" + tag + ".txt"), "actions = " + a_star.to_string() + "\nfrozen_checksum_source = " +
                                                           before + "\nfrozen_checksum_after = " + after +
                                                           "\nfinal_accuracy = " + fmt(curve.accuracy.back()) + "\n");
    c.log << tag << " finetune: final test accuracy " << curve.accuracy.back() << "\n";
}

void report(Context& c) {
    std::vector<std::string> needed{"search.txt", "reward.csv", "actions.csv"};
    if (!c.cfg.oracle) {
        needed.insert(needed.end(), {"pretrain.txt", "curve_searched.csv", "curve_vanilla.csv"});
    }
    std::string missing;
    for (const auto& f : needed) {
        if (!fs::exists(c.paths.file(f))) missing += (missing.empty() ? "" : ", ") + f;
    }
    if (!missing.empty()) throw std::runtime_error("missing logs: " + missing);

    const auto search = read_key_values(c.paths.file("search.txt"));
    const auto rewards = read_csv(c.paths.file("reward.csv"));
    const auto actions = read_csv(c.paths.file("actions.csv"));
    if (rewards.size() != actions.size()) throw std::runtime_error("reward.csv and actions.csv disagree on round count");
    const std::size_t rounds = rewards.size();
    const auto budget = std::stoul(get(search, "budget", "search.txt"));
    const std::string reason = get(search, "stop_reason", "search.txt");
    stop::StopDecision d{true, rounds, arch::ActionVector::from_string(get(search, "a_star", "search.txt")),
                         reason == "stable" ? stop::StopReason::stable : stop::StopReason::budget_exhausted};
    const std::size_t tail = std::min<std::size_t>(rounds, static_cast<std::size_t>(c.cfg.window));
    double tail_reward = 0;
    for (std::size_t i = rounds - tail; i < rounds; ++i) tail_reward += std::stod(rewards[i].at(1));
    tail_reward = tail ? tail_reward / static_cast<double>(tail) : 0.0;

    std::string out;
    auto line = [&out](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
    line("arch", c.arch.name);
    line("scope", c.cfg.scope);
    line("seed", std::to_string(c.cfg.seed));
    line("mode", c.cfg.oracle ? "oracle" : "supernet");
    line("sites", std::to_string(c.spec.num_sites()));
    line("subnets", arch::count_subnets(c.spec).to_string());
    line("stop_reason", reason);
    line("stop_round", std::to_string(rounds));
    line("budget", std::to_string(budget));
    line("a_star", d.a_star.to_string());
    line("search_saving", fmt(stop::search_saving(d, budget)));
    line("minibatches", get(search, "minibatches", "search.txt"));
    line("mean_reward_last_window", fmt(tail_reward));
    if (c.cfg.oracle) {
        const std::string opt = get(search, "oracle_optimum", "search.txt");
        line("oracle_optimum", opt);
        line("oracle_match", opt == d.a_star.to_string() ? "yes" : "no");
        for (const char* k : {"pretrain_train_accuracy", "searched_final_accuracy", "vanilla_final_accuracy",
                              "finetune_saving"}) {
            line(k, "n/a");
        }
    } else {
        const Curve s = read_curve(c.paths.file("curve_searched.csv"));
        const Curve v = read_curve(c.paths.file("curve_vanilla.csv"));
        if (s.iterations != v.iterations) throw std::runtime_error("searched and vanilla curves use different cadences");
        std::string merged = "iteration,searched_acc,vanilla_acc\n";
        for (std::size_t i = 0; i < s.iterations.size(); ++i) {
            merged += std::to_string(s.iterations[i]) + "," + fmt(s.accuracy[i]) + "," + fmt(v.accuracy[i]) + "\n";
        }
        write_file(c.paths.file("finetune.csv"), merged);
        const auto pre = read_key_values(c.paths.file("pretrain.txt"));
        line("pretrain_train_accuracy", get(pre, "train_accuracy", "pretrain.txt"));
        line("searched_final_accuracy", fmt(s.accuracy.back()));
        line("vanilla_final_accuracy", fmt(v.accuracy.back()));
        if (auto f = finetune_saving(s, v)) {
            line("finetune_saving", fmt(f->saving));
            line("finetune_level", fmt(f->level));
            line("searched_iterations_to_level", std::to_string(f->searched_iterations));
            line("vanilla_iterations_to_level", std::to_string(f->vanilla_iterations));
        } else {
            line("finetune_saving", "undefined");
        }
    }
    write_file(c.paths.file("report.txt"), out);
}

}  // namespace

std::string default_run_dir(const RunConfig& cfg) {
    const char* root = std::getenv("ARCHTUNE_RUN_ROOT");
    const std::string base = root && *root ? root : "runs";
    return base + "/" + config_hash(cfg) + "-s" + std::to_string(cfg.seed);
}

namespace {

void prepare_dir(const RunConfig& cfg, const RunPaths& paths) {
    fs::create_directories(paths.dir);
    const std::string resolved = to_text(cfg);
    const std::string path = paths.file("config.resolved");
    if (fs::exists(path) && read_file(path) != resolved) {
        throw ConfigError("", "run directory " + paths.dir + " holds a different configuration");
    }
    write_file(path, resolved);
}

}  // namespace

void run_phase(const std::string& phase, const RunConfig& cfg, const RunPaths& paths, std::ostream& log) {
    if (std::find(phase_names().begin(), phase_names().end(), phase) == phase_names().end()) {
        throw ConfigError("", "unknown phase " + phase);
    }
    prepare_dir(cfg, paths);
    try {
        Context c = make_context(cfg, paths, log);
        if (phase == "gen-data") {
            gen_data(c);
        } else if (phase == "pretrain") {
            pretrain(c);
        } else if (phase == "search") {
            search(c);
        } else if (phase == "finetune") {
            stage2(c, true);
        } else if (phase == "baseline") {
            stage2(c, false);
        } else {
            report(c);
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw PhaseError(phase, e.what());
    }
    write_file(paths.file(phase + ".done"), "");
}

void run_all(const RunConfig& cfg, const RunPaths& paths, std::ostream& log) {
    prepare_dir(cfg, paths);
    for (const auto& phase : phase_names()) {
        if (fs::exists(paths.file(phase + ".done"))) {
            log << phase << ": already done, skipping\n";
            continue;
        }
        log << phase << ": running\n";
        run_phase(phase, cfg, paths, log);
    }
}

}  // namespace archtune::pipe

#include "archtune/pipeline/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <variant>

#include "archtune/archspace/archspace.hpp"
#include "archtune/numkernel/rng.hpp"

namespace archtune::pipe {

namespace {

using Slot = std::variant<std::string*, std::uint64_t*, int*, double*, bool*>;

struct Field {
    const char* key;
    Slot slot;
};

std::vector<Field> fields(RunConfig& c) {
    return {
        {"arch", &c.arch},
        {"rule", &c.rule},
        {"scope", &c.scope},
        {"seed", &c.seed},
        {"train_size", &c.train_size},
        {"val_size", &c.val_size},
        {"test_size", &c.test_size},
        {"data_noise", &c.data_noise},
        {"pretrain_epochs", &c.pretrain_epochs},
        {"pretrain_target", &c.pretrain_target},
        {"pretrain_lr", &c.pretrain_lr},
        {"budget", &c.budget},
        {"subnet_batches", &c.subnet_batches},
        {"batch_size", &c.batch_size},
        {"supernet_lr", &c.supernet_lr},
        {"momentum", &c.momentum},
        {"controller_lr", &c.controller_lr},
        {"embed_dim", &c.embed_dim},
        {"hidden_dim", &c.hidden_dim},
        {"lstm_layers", &c.lstm_layers},
        {"per_site_classifier", &c.per_site_classifier},
        {"temperature", &c.temperature},
        {"gamma", &c.gamma},
        {"baseline_decay", &c.baseline_decay},
        {"window", &c.window},
        {"p_stop", &c.p_stop},
        {"oracle", &c.oracle},
        {"finetune_epochs", &c.finetune_epochs},
        {"finetune_lr", &c.finetune_lr},
        {"eval_every", &c.eval_every},
        {"stage2_init", &c.stage2_init},
    };
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

template <class T>
T parse_number(std::string_view key, std::string_view v, const char* type) {
    T out{};
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size() || v.empty()) {
        throw ConfigError(std::string(key), "expected " + std::string(type) + ", got '" + std::string(v) + "'");
    }
    return out;
}

std::string format(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace

std::vector<std::string> config_keys() {
    RunConfig c;
    std::vector<std::string> out;
    for (const auto& f : fields(c)) out.emplace_back(f.key);
    return out;
}

void set_value(RunConfig& cfg, std::string_view key, std::string_view value) {
    for (auto& f : fields(cfg)) {
        if (key != f.key) continue;
        std::visit(
            [&](auto* p) {
                using T = std::remove_pointer_t<decltype(p)>;
                if constexpr (std::is_same_v<T, std::string>) {
                    if (value.empty()) throw ConfigError(std::string(key), "empty value");
                    *p = std::string(value);
                } else if constexpr (std::is_same_v<T, bool>) {
                    if (value == "true" || value == "1") {
                        *p = true;
                    } else if (value == "false" || value == "0") {
                        *p = false;
                    } else {
                        throw ConfigError(std::string(key), "expected true or false, got '" + std::string(value) + "'");
                    }
                } else if constexpr (std::is_same_v<T, double>) {
                    *p = parse_number<double>(key, value, "a number");
                } else {
                    *p = parse_number<T>(key, value, "an integer");
                }
            },
            f.slot);
        return;
    }
    throw ConfigError(std::string(key), "unknown key");
}

RunConfig parse_config(std::string_view text) {
    RunConfig cfg;
    std::size_t pos = 0;
    int lineno = 0;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        ++lineno;
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("", "line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        set_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    validate(cfg);
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open config " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) {
        throw ConfigError(std::string(assignment), "override must look like key=value");
    }
    set_value(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void validate(const RunConfig& c) {
    auto positive = [](const char* key, double v) {
        if (!(v > 0)) throw ConfigError(key, "must be positive");
    };
    if (!arch::parse_scope(c.scope)) throw ConfigError("scope", "expected small, medium, large or full");
    if (c.stage2_init != "supernet" && c.stage2_init != "checkpoint") {
        throw ConfigError("stage2_init", "expected supernet or checkpoint");
    }
    positive("train_size", c.train_size);
    positive("val_size", c.val_size);
    positive("test_size", c.test_size);
    if (!(c.data_noise >= 0)) throw ConfigError("data_noise", "must be non-negative");
    if (c.pretrain_epochs < 0) throw ConfigError("pretrain_epochs", "must be non-negative");
    if (!(c.pretrain_target > 0 && c.pretrain_target <= 1)) throw ConfigError("pretrain_target", "must lie in (0,1]");
    positive("pretrain_lr", c.pretrain_lr);
    positive("budget", c.budget);
    positive("subnet_batches", c.subnet_batches);
    positive("batch_size", c.batch_size);
    positive("supernet_lr", c.supernet_lr);
    if (!(c.momentum >= 0 && c.momentum < 1)) throw ConfigError("momentum", "must lie in [0,1)");
    positive("controller_lr", c.controller_lr);
    positive("embed_dim", c.embed_dim);
    positive("hidden_dim", c.hidden_dim);
    positive("lstm_layers", c.lstm_layers);
    positive("temperature", c.temperature);
    if (!(c.gamma > 0 && c.gamma <= 1)) throw ConfigError("gamma", "must lie in (0,1]");
    if (!(c.baseline_decay > 0 && c.baseline_decay < 1)) throw ConfigError("baseline_decay", "must lie in (0,1)");
    positive("window", c.window);
    if (!(c.p_stop > 0.5 && c.p_stop <= 1)) throw ConfigError("p_stop", "must lie in (0.5,1]");
    if (c.finetune_epochs < 0) throw ConfigError("finetune_epochs", "must be non-negative");
    positive("finetune_lr", c.finetune_lr);
    positive("eval_every", c.eval_every);

    arch::ArchitectureSpec a;
    try {
        a = arch::load_architecture(c.arch);
    } catch (const std::exception& e) {
        throw ConfigError("arch", e.what());
    }
    arch::MutationRule r;
    try {
        r = arch::load_mutation_rule(c.rule);
    } catch (const std::exception& e) {
        throw ConfigError("rule", e.what());
    }
    std::size_t sites = 0;
    try {
        sites = arch::compile_search_space(a, r, arch::SearchScope{*arch::parse_scope(c.scope)}).num_sites();
    } catch (const std::exception& e) {
        throw ConfigError("scope", e.what());
    }
    if (c.oracle && sites > 12) throw ConfigError("oracle", "tabular oracle supports at most 12 sites");
}

std::string to_text(const RunConfig& cfg) {
    RunConfig copy = cfg;
    std::string out;
    for (const auto& f : fields(copy)) {
        out += f.key;
        out += " = ";
        std::visit(
            [&](auto* p) {
                using T = std::remove_pointer_t<decltype(p)>;
                if constexpr (std::is_same_v<T, std::string>) {
                    out += *p;
                } else if constexpr (std::is_same_v<T, bool>) {
                    out += *p ? "true" : "false";
                } else if constexpr (std::is_same_v<T, double>) {
                    out += format(*p);
                } else {
                    out += std::to_string(*p);
                }
            },
            f.slot);
        out += "\n";
    }
    return out;
}

std::string config_hash(const RunConfig& cfg) {
    RunConfig c = cfg;
    c.seed = 0;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(nk::Rng::hash_tag(to_text(c))));
    return std::string(buf, 12);
}

}  // namespace archtune::pipe

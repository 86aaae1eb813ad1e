#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "archtune/pipeline/pipeline.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kPhaseError = 3;

}  // namespace

int main(int argc, char** argv) {
    using namespace archtune::pipe;

    CLI::App app{"Two-stage architectural fine-tuning with early-stopped supernet search"};
    app.require_subcommand(1, 1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    std::string run_dir;

    std::vector<std::string> commands = phase_names();
    commands.insert(commands.end() - 1, "run-all");
    for (const auto& name : commands) {
        auto* sub = app.add_subcommand(name, name == "run-all" ? "run every phase, skipping completed ones"
                                                               : "run the " + name + " phase");
        sub->add_option("-c,--config", config_path, "config file of key = value lines");
        sub->add_option("--set", overrides, "override one key, as key=value")->allow_extra_args(false);
        sub->add_option("--seed", seed, "experiment seed");
        sub->add_option("--run-dir", run_dir, "run directory (default: <ARCHTUNE_RUN_ROOT or runs>/<hash>-s<seed>)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kConfigError;
    }
    const std::string command = app.get_subcommands().front()->get_name();
    const bool seed_given = app.get_subcommands().front()->count("--seed") > 0;

    RunConfig cfg;
    try {
        if (!config_path.empty()) cfg = load_config(config_path);
        for (const auto& o : overrides) apply_override(cfg, o);
        if (seed_given) cfg.seed = seed;
        validate(cfg);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    }

    const RunPaths paths{run_dir.empty() ? default_run_dir(cfg) : run_dir};
    try {
        if (command == "run-all") {
            run_all(cfg, paths, std::cerr);
        } else {
            run_phase(command, cfg, paths, std::cerr);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const PhaseError& e) {
        std::cerr << "phase " << e.what() << "\n";
        return kPhaseError;
    } catch (const std::exception& e) {
        std::cerr << command << ": " << e.what() << "\n";
        return kPhaseError;
    }
    std::cout << paths.dir << "\n";
    return 0;
}

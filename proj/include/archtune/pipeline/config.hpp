#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace archtune::pipe {

/// Bad key or value; `key()` names the offending entry.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& msg)
        : std::runtime_error(key.empty() ? msg : key + ": " + msg), key_(std::move(key)) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

struct RunConfig {
    std::string arch = "mini18";
    std::string rule = "kernel3to5";
    std::string scope = "small";
    std::uint64_t seed = 1;

    // Synthetic data.
    int train_size = 2000;
    int val_size = 500;
    int test_size = 500;
    double data_noise = 1.0;

    // Source pretraining.
    int pretrain_epochs = 20;
    double pretrain_target = 0.95;
    double pretrain_lr = 0.05;

    // Stage 1.
    int budget = 500;
    int subnet_batches = 4;
    int batch_size = 64;
    double supernet_lr = 0.05;
    double momentum = 0.9;
    double controller_lr = 3.5e-4;
    int embed_dim = 64;
    int hidden_dim = 64;
    int lstm_layers = 2;
    bool per_site_classifier = true;
    double temperature = 1.0;
    double gamma = 1.0;
    double baseline_decay = 0.95;
    int window = 20;
    double p_stop = 0.9;
    bool oracle = false;

    // Stage 2 and the vanilla baseline.
    int finetune_epochs = 8;
    double finetune_lr = 0.05;
    int eval_every = 16;
    std::string stage2_init = "supernet";
};

/// Parses `key = value` lines with `#` comments on top of the defaults.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::string& path);
/// Applies one `key=value` override.
void apply_override(RunConfig& cfg, std::string_view assignment);
void set_value(RunConfig& cfg, std::string_view key, std::string_view value);
/// Throws ConfigError on inconsistent values.
void validate(const RunConfig& cfg);

/// Every key with its value in effect, one `key = value` per line.
std::string to_text(const RunConfig& cfg);
std::vector<std::string> config_keys();

/// Hex digest of the resolved config without the seed.
std::string config_hash(const RunConfig& cfg);

}  // namespace archtune::pipe

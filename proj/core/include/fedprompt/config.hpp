#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "fedprompt/datagen.hpp"
#include "fedprompt/federation.hpp"

namespace fedprompt {

/// Flat experiment configuration. Defaults are the reference operating point;
/// every field can be overridden from the JSON config file.
struct ExperimentConfig {
    std::uint64_t seed = 1;

    // Encoder geometry.
    std::size_t embed_dim = 32;
    std::size_t hidden_dim = 64;
    std::size_t feature_dim = 16;
    std::size_t prompt_len = 4;
    double tau = 0.07;

    // Synthetic data.
    std::size_t num_domains = 4;  // total, including the held-out target
    std::size_t num_classes = 5;
    double shift_strength = 1.5;
    double noise_sigma = 0.4;
    std::size_t samples_per_domain_class = 60;

    // Federation schedule.
    std::size_t num_clients = 20;
    std::size_t clients_per_round = 5;
    std::size_t rounds = 100;
    std::size_t local_iters = 1;
    std::size_t batch_size = 16;
    double lambda = 1.0;
    double momentum_beta = 0.2;
    double learning_rate = 5e-4;
    double tau_cont = 1.0;

    std::string partition_mode = "one_domain_iid";  // or "mixed"

    /// Held-out domain; empty means "sweep over all domains".
    std::optional<std::size_t> target_domain;

    // Ablation switches.
    bool no_g_prompt = false;
    bool no_d_prompts = false;
    bool no_contrastive = false;
    bool static_query = false;
    bool no_ensemble = false;
    bool no_kl = false;
    bool no_mse = false;
    bool use_domain_labels = false;

    // Interpretation switches for underspecified corners.
    bool qprompt_mse_all_classes = false;
    bool broadcast_momentum_dprompts = false;
};

/// Parses a JSON object with the fields above. Unknown keys and wrong types
/// are rejected with a field-level ConfigError; missing keys keep defaults.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Field-level sanity checks; throws ConfigError naming the offending field.
void validate(const ExperimentConfig& cfg);

/// Canonical JSON echo (fixed key order, 17-significant-digit floats); a
/// saved echo parses back to an identical config.
std::string serialize_config(const ExperimentConfig& cfg);
void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg);

DataConfig data_config(const ExperimentConfig& cfg);
FederationConfig federation_config(const ExperimentConfig& cfg);
PartitionMode partition_mode_of(const ExperimentConfig& cfg);

}  // namespace fedprompt

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fedprompt/config.hpp"

namespace fedprompt {

struct ModeAccuracy {
    double ensemble = 0.0;
    double g_only = 0.0;
    double top_domain_only = 0.0;
};

struct RunResult {
    std::size_t target_domain = 0;
    std::size_t n_test = 0;
    ModeAccuracy accuracy;
    Vec mean_domain_weights;
    double mean_query_accuracy = 0.0;  // train-mode routing vs latent labels
    std::string headline_mode;
    double headline_accuracy = 0.0;
    std::filesystem::path run_dir;
};

/// Trains and evaluates one leave-one-domain-out experiment, writing
/// config.json, metrics.jsonl, checkpoint.json, evaluation.json, and
/// timings.txt into `out_dir`. Everything except timings.txt is byte-stable
/// for a fixed config. Requires a concrete target_domain.
RunResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

struct SweepResult {
    std::vector<RunResult> runs;  // one per target domain, ascending
    ModeAccuracy mean_accuracy;
    double mean_query_accuracy = 0.0;
};

/// Runs every domain as the held-out target (into target_<m>/ subdirs) and
/// writes a summary.json beside them.
SweepResult run_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace fedprompt

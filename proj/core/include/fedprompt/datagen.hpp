#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "fedprompt/common.hpp"
#include "fedprompt/encoders.hpp"
#include "fedprompt/rng.hpp"

namespace fedprompt {

struct DataConfig {
    std::size_t num_domains_total = 4;         // includes the eventual target
    std::size_t num_classes = 5;
    std::size_t feature_dim = 16;
    std::size_t samples_per_domain_class = 60;
    double shift_strength = 1.5;  // gamma
    double noise_sigma = 0.4;
};

/// Geometry of the synthetic problem: per-(domain, class) sample mean is
/// prototypes[j] + shift_strength * shifts[m].
///
/// The prototypes and shifts are not free Gaussians: they are pulled back
/// through the frozen image map from the text side's class and domain
/// embedding directions. This plays the role of large-scale image-text
/// pretraining -- the frozen encoders already "know" the classes and domains
/// -- and is what lets template-based querying work from the start.
///
/// The two vector families are additionally decorrelated through the image
/// map's adjoint: prototypes excite no domain-offset direction and shifts
/// excite no class-differential direction, so a sample's style component
/// shifts its embedding without biasing the class readout, and vice versa.
struct DomainSpec {
    DataConfig cfg;
    std::vector<Vec> prototypes;  // C unit-norm vectors in feature space
    std::vector<Vec> shifts;      // M_total unit-norm vectors in feature space
};

/// `prompt_len` is the runtime query-prompt length, so the anchor sequences
/// here match the shape the query mechanism will actually compare against.
DomainSpec make_domain_spec(const DataConfig& cfg, const TokenVocab& vocab,
                            const FrozenEncoders& enc, std::size_t prompt_len);

struct DomainDataset {
    std::size_t domain_id = 0;
    std::vector<Sample> train;
    std::vector<Sample> test;
};

/// Gaussian clouds around each mu_{j,m}, split 80/20 per (domain, class) by a
/// seeded shuffle.
std::vector<DomainDataset> generate(const DomainSpec& spec, const Rng& base);

struct LeaveOneOut {
    std::vector<std::size_t> source_ids;  // protocol slot -> vocabulary domain id
    std::size_t target_id = 0;
    std::vector<Sample> target_test;
};

LeaveOneOut leave_one_out(const std::vector<DomainDataset>& datasets, std::size_t target);

enum class PartitionMode { one_domain_iid, mixed };

struct ClientShard {
    std::size_t client_id = 0;
    std::vector<Sample> samples;
    std::vector<std::size_t> domains_present;  // vocabulary ids, ascending
};

/// Splits source training data across K clients. one_domain_iid assigns each
/// client a single domain round-robin and deals that domain's data per class;
/// mixed pools everything and deals per class across all clients.
std::vector<ClientShard> partition(const std::vector<DomainDataset>& datasets,
                                   const std::vector<std::size_t>& source_ids, std::size_t k,
                                   PartitionMode mode, const Rng& base);

/// Debug dump of generated data as JSON (17-significant-digit floats).
void save_datasets(const std::filesystem::path& path, const DomainSpec& spec,
                   const std::vector<DomainDataset>& datasets);

}  // namespace fedprompt

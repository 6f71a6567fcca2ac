#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "fedprompt/common.hpp"
#include "fedprompt/encoders.hpp"
#include "fedprompt/rng.hpp"

namespace fedprompt {

struct PromptDims {
    std::size_t prompt_len = 0;   // L
    std::size_t embed_dim = 0;    // d
    std::size_t num_domains = 0;  // M (source domains in the current protocol)
    std::size_t num_classes = 0;  // C

    bool operator==(const PromptDims&) const = default;
};

/// One domain-specific prompt: L learnable rows plus the id of the frozen
/// domain token it is paired with. The token itself lives in the vocabulary
/// and is never trained.
struct DomainPrompt {
    Mat tokens;                 // L x d, learnable
    std::size_t domain_id = 0;  // vocabulary domain index

    bool operator==(const DomainPrompt&) const = default;
};

/// The three prompt families one party trains: shared global rows, one block
/// per source domain, and the latent-domain query rows.
struct PromptBank {
    PromptDims dims;
    Mat g_prompt;                         // L x d
    std::vector<DomainPrompt> d_prompts;  // M entries, protocol order
    Mat q_prompt;                         // L x d

    bool operator==(const PromptBank&) const = default;
};

enum class PromptKind { global, domain, query };

/// Fresh bank: global and domain rows ~ N(0, 0.02^2) from labeled streams;
/// query rows copy the template-word embeddings, cycled to exactly L rows.
/// `source_domain_ids[m]` maps protocol slot m to its vocabulary domain id.
PromptBank init_prompt_bank(const PromptDims& dims,
                            const std::vector<std::size_t>& source_domain_ids,
                            const TokenVocab& vocab, const Rng& base);

/// Token sequence fed to the text encoder:
///   global    -> [L prompt rows, c_j]
///   domain m  -> [L prompt rows, s_m, c_j]   (m indexes bank.d_prompts)
///   query m   -> [L prompt rows, c_j, s_m]   (m indexes bank.d_prompts)
/// The result owns its storage; later bank mutations do not leak into it.
Mat assemble_text_input(const PromptBank& bank, PromptKind kind, std::size_t class_j,
                        std::optional<std::size_t> m, const TokenVocab& vocab);

/// Flattened template-word rows used as the contrastive anchor for domain
/// prompt m: per class, take the L template embeddings (class/domain slots
/// excluded), flatten, then average over classes. With this vocabulary the
/// average collapses to the template itself; the loop stays so an encoder
/// with class-dependent context could slot in.
Vec handcrafted_positive(const TokenVocab& vocab, std::size_t m, std::size_t num_classes,
                         std::size_t prompt_len);

/// Row-major copy of a matrix as one flat vector.
Vec flatten(const Mat& m);

/// Checkpoint round-trip. JSON with 17-significant-digit floats so the
/// decimal form restores identical bits.
struct Checkpoint {
    PromptBank bank;
    std::uint64_t seed = 0;
    std::size_t round = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fedprompt

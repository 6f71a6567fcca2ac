#pragma once

#include <optional>
#include <span>
#include <vector>

#include "fedprompt/common.hpp"
#include "fedprompt/encoders.hpp"
#include "fedprompt/prompts.hpp"

namespace fedprompt {

/// Class posterior from image embedding and per-class text embeddings:
/// softmax over cosine similarities at temperature tau.
Vec class_probs(std::span<const double> image_emb, const std::vector<Vec>& text_embs, double tau);

/// Loss value plus gradient with respect to one L x d prompt block.
struct PromptGrad {
    double loss = 0.0;
    Mat grad;
};

/// Mean cross-entropy over the batch with global-prompt text inputs.
/// Gradient flows to the global prompt rows only.
PromptGrad loss_g_and_grad(const PromptBank& bank, const FrozenEncoders& enc,
                           const TokenVocab& vocab, std::span<const Sample> batch);

/// Domain loss for slot m: cross-entropy with domain-m text inputs plus a
/// contrastive pull toward the hand-crafted template (numerator) against all
/// domain prompts including self (denominator), on flattened learnable rows.
/// Only slot m's rows receive gradient; other slots are held constant.
struct DomainLossGrad {
    double loss_ce = 0.0;
    double loss_cont = 0.0;
    double total = 0.0;
    Mat grad;
};

DomainLossGrad loss_d_and_grad(const PromptBank& bank, const FrozenEncoders& enc,
                               const TokenVocab& vocab, std::span<const Sample> batch,
                               std::size_t m, double tau_cont, bool with_contrastive = true);

/// Joint class-domain table: softmax over all C*M cosine similarities between
/// the image embedding and query-prompt text embeddings. Row j, column m.
Mat qprompt_match(const PromptBank& bank, const FrozenEncoders& enc, const TokenVocab& vocab,
                  std::span<const double> image_emb);

/// Domain selection from the joint table. With a ground-truth label: argmax
/// over that row. Without: argmax over the whole table, returning the column.
/// Ties resolve to the smallest domain index.
std::size_t query_domain(const Mat& table, std::optional<std::size_t> label);

/// Self-consistency loss for the query prompt against its momentum copy:
/// summed per-domain MSE between current and momentum text embeddings at the
/// sample's class, plus KL between the two induced domain posteriors.
/// `mse_all_classes` widens the MSE sum over every class instead of the
/// ground-truth one.
struct QueryLossGrad {
    double loss_mse = 0.0;
    double loss_kl = 0.0;
    double total = 0.0;
    Mat grad;
};

QueryLossGrad loss_q_and_grad(const PromptBank& bank, const Mat& momentum_q,
                              const FrozenEncoders& enc, const TokenVocab& vocab,
                              std::span<const Sample> batch, bool mse_all_classes = false,
                              bool with_mse = true, bool with_kl = true);

/// Combined per-batch objective L_G + lambda * L_D^(m_s), with each sample s
/// routed to its queried domain m_s. Domains with no routed samples are
/// untouched and report a zero gradient.
struct LocalObjective {
    double loss_g = 0.0;
    std::vector<double> loss_d_ce;    // per domain slot, mean over routed samples
    std::vector<double> loss_d_cont;  // per domain slot
    std::vector<std::size_t> routed;  // samples routed to each slot
    double total = 0.0;
    Mat g_grad;
    std::vector<Mat> d_grads;
    std::vector<bool> touched;
};

LocalObjective local_objective(const PromptBank& bank, const FrozenEncoders& enc,
                               const TokenVocab& vocab, std::span<const Sample> batch,
                               double lambda, std::span<const std::size_t> m_per_sample,
                               double tau_cont, bool with_contrastive = true);

}  // namespace fedprompt

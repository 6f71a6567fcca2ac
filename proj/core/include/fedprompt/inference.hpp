#pragma once

#include <functional>
#include <span>
#include <vector>

#include "fedprompt/common.hpp"
#include "fedprompt/encoders.hpp"
#include "fedprompt/prompts.hpp"

namespace fedprompt {

/// Precomputed per-class text embeddings for the global prompt and every
/// domain prompt. `global_weight` scales the global term in the ensemble
/// (1 by default, 0 for a no-global-prompt ablation).
struct EnsembleCache {
    std::vector<Vec> z_global;             // C entries
    std::vector<std::vector<Vec>> z_dom;   // M x C entries
    double tau = 0.07;
    double global_weight = 1.0;
};

EnsembleCache build_ensemble_cache(const Mat& g_prompt, const std::vector<DomainPrompt>& d_prompts,
                                   const PromptDims& dims, const FrozenEncoders& enc,
                                   const TokenVocab& vocab, double global_weight = 1.0);

struct EnsembleWeights {
    Vec per_domain;          // sums to 1, entries >= 0
    double global = 1.0;
    bool shifted = false;    // scores were offset by +1 to clear negatives
    bool degenerate = false; // all scores vanished; fell back to uniform
};

/// Per-domain weights from the best class match under each domain prompt.
EnsembleWeights ensemble_weights(std::span<const double> image_emb, const EnsembleCache& cache);

struct Prediction {
    Vec probs;
    std::size_t predicted = 0;
};

/// Classify with the weighted combination of domain and global text
/// embeddings. Ties in the final argmax go to the smallest class index.
Prediction ensemble_predict(std::span<const double> x, const EnsembleCache& cache,
                            const FrozenEncoders& enc);

enum class PredictMode { ensemble, g_only, top_domain_only };

std::size_t predict_ablation(std::span<const double> x, const EnsembleCache& cache,
                             const FrozenEncoders& enc, PredictMode mode);

/// Fraction of samples where predictor(x) equals the label.
double evaluate(std::span<const Sample> dataset,
                const std::function<std::size_t(const Vec&)>& predictor);

}  // namespace fedprompt

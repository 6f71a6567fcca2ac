#include "fedprompt/inference.hpp"

#include <algorithm>

#include "fedprompt/numerics.hpp"
#include "fedprompt/objectives.hpp"

namespace fedprompt {

EnsembleCache build_ensemble_cache(const Mat& g_prompt, const std::vector<DomainPrompt>& d_prompts,
                                   const PromptDims& dims, const FrozenEncoders& enc,
                                   const TokenVocab& vocab, double global_weight) {
    PromptBank bank;
    bank.dims = dims;
    bank.dims.num_domains = d_prompts.size();
    bank.g_prompt = g_prompt;
    bank.d_prompts = d_prompts;
    bank.q_prompt = Mat(dims.prompt_len, dims.embed_dim);  // unused for these kinds

    EnsembleCache cache;
    cache.tau = enc.tau();
    cache.global_weight = global_weight;
    cache.z_global.reserve(dims.num_classes);
    for (std::size_t j = 0; j < dims.num_classes; ++j) {
        cache.z_global.push_back(
            enc.encode_text(assemble_text_input(bank, PromptKind::global, j, std::nullopt, vocab)));
    }
    cache.z_dom.resize(d_prompts.size());
    for (std::size_t m = 0; m < d_prompts.size(); ++m) {
        cache.z_dom[m].reserve(dims.num_classes);
        for (std::size_t j = 0; j < dims.num_classes; ++j) {
            cache.z_dom[m].push_back(
                enc.encode_text(assemble_text_input(bank, PromptKind::domain, j, m, vocab)));
        }
    }
    for (const Vec& z : cache.z_global) ensure_finite(z, "ensemble cache (global)");
    for (const auto& per_dom : cache.z_dom) {
        for (const Vec& z : per_dom) ensure_finite(z, "ensemble cache (domain)");
    }
    return cache;
}

EnsembleWeights ensemble_weights(std::span<const double> image_emb, const EnsembleCache& cache) {
    const std::size_t m_count = cache.z_dom.size();
    if (m_count == 0) {
        throw std::runtime_error("ensemble_weights: no domain prompts");
    }
    EnsembleWeights w;
    w.global = cache.global_weight;
    w.per_domain.assign(m_count, 0.0);
    Vec scores(m_count);
    for (std::size_t m = 0; m < m_count; ++m) {
        double best = -2.0;
        for (const Vec& z : cache.z_dom[m]) {
            best = std::max(best, cosine_sim(image_emb, z));
        }
        scores[m] = best;
    }
    // Cosines can be negative; a +1 offset keeps weights in [0, 1] without
    // changing which domain ranks highest.
    double lo = *std::min_element(scores.begin(), scores.end());
    if (lo <= 0.0) {
        w.shifted = true;
        for (double& s : scores) s += 1.0;
    }
    double total = 0.0;
    for (double s : scores) total += s;
    if (total <= 0.0) {
        w.degenerate = true;
        double uniform = 1.0 / static_cast<double>(m_count);
        for (double& e : w.per_domain) e = uniform;
        return w;
    }
    for (std::size_t m = 0; m < m_count; ++m) w.per_domain[m] = scores[m] / total;
    return w;
}

Prediction ensemble_predict(std::span<const double> x, const EnsembleCache& cache,
                            const FrozenEncoders& enc) {
    Vec img = enc.encode_image(x);
    EnsembleWeights w = ensemble_weights(img, cache);
    const std::size_t C = cache.z_global.size();
    const std::size_t d = enc.embed_dim();
    std::vector<Vec> combined(C, Vec(d, 0.0));
    for (std::size_t j = 0; j < C; ++j) {
        for (std::size_t m = 0; m < cache.z_dom.size(); ++m) {
            for (std::size_t i = 0; i < d; ++i) {
                combined[j][i] += w.per_domain[m] * cache.z_dom[m][j][i];
            }
        }
        for (std::size_t i = 0; i < d; ++i) {
            combined[j][i] += w.global * cache.z_global[j][i];
        }
    }
    Prediction pred;
    pred.probs = class_probs(img, combined, cache.tau);
    pred.predicted = 0;
    for (std::size_t j = 1; j < C; ++j) {
        if (pred.probs[j] > pred.probs[pred.predicted]) pred.predicted = j;
    }
    return pred;
}

std::size_t predict_ablation(std::span<const double> x, const EnsembleCache& cache,
                             const FrozenEncoders& enc, PredictMode mode) {
    if (mode == PredictMode::ensemble) {
        return ensemble_predict(x, cache, enc).predicted;
    }
    Vec img = enc.encode_image(x);
    const std::vector<Vec>* embs = nullptr;
    if (mode == PredictMode::g_only) {
        embs = &cache.z_global;
    } else {
        EnsembleWeights w = ensemble_weights(img, cache);
        std::size_t best_m = 0;
        for (std::size_t m = 1; m < w.per_domain.size(); ++m) {
            if (w.per_domain[m] > w.per_domain[best_m]) best_m = m;
        }
        embs = &cache.z_dom[best_m];
    }
    Vec probs = class_probs(img, *embs, cache.tau);
    std::size_t best = 0;
    for (std::size_t j = 1; j < probs.size(); ++j) {
        if (probs[j] > probs[best]) best = j;
    }
    return best;
}

double evaluate(std::span<const Sample> dataset,
                const std::function<std::size_t(const Vec&)>& predictor) {
    if (dataset.empty()) {
        throw std::runtime_error("evaluate: empty dataset");
    }
    std::size_t correct = 0;
    for (const Sample& s : dataset) {
        if (predictor(s.x) == s.label) correct += 1;
    }
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

}  // namespace fedprompt

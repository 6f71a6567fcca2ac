#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedprompt/common.hpp"
#include "fedprompt/rng.hpp"

namespace fedprompt {

/// Deterministic toy vocabulary: unit-norm Gaussian embeddings for class
/// tokens, domain tokens, and the words of the fixed template phrase
/// "a photo of a [class] with the domain of [domain]". Repeated words share
/// one embedding. Immutable after construction.
class TokenVocab {
public:
    TokenVocab(std::size_t embed_dim, std::size_t num_classes, std::size_t num_domains,
               const Rng& base);

    std::size_t embed_dim() const { return d_; }
    std::size_t num_classes() const { return num_classes_; }
    std::size_t num_domains() const { return num_domains_; }

    const Vec& class_token(std::size_t j) const;
    const Vec& domain_token(std::size_t m) const;
    const Vec& word_token(const std::string& word) const;

    /// Template words in phrase order (class/domain slots excluded).
    const std::vector<std::string>& template_words() const { return template_words_; }

private:
    std::size_t d_;
    std::size_t num_classes_;
    std::size_t num_domains_;
    std::vector<Vec> class_tokens_;
    std::vector<Vec> domain_tokens_;
    std::unordered_map<std::string, Vec> word_tokens_;
    std::vector<std::string> template_words_;
};

/// Frozen dual encoders shared by the server and every client. The image side
/// is a fixed linear map; the text side is mean-pool -> tanh -> linear, with
/// an exact handwritten backward pass through to the input tokens.
class FrozenEncoders {
public:
    FrozenEncoders(std::size_t embed_dim, std::size_t hidden_dim, std::size_t feature_dim,
                   double tau, const Rng& base);

    std::size_t embed_dim() const { return d_; }
    std::size_t hidden_dim() const { return h_; }
    std::size_t feature_dim() const { return p_; }
    double tau() const { return tau_; }

    /// I = W_f x.
    Vec encode_image(std::span<const double> x) const;

    /// Z = W2 tanh(W1 meanpool(tokens)); tokens are the rows of the input.
    Vec encode_text(const Mat& tokens) const;

    /// Exact gradient of (upstream . Z) with respect to every input token.
    /// Mean pooling makes all rows of the result identical.
    Mat encode_text_backward(const Mat& tokens, std::span<const double> upstream) const;

    const Mat& image_weights() const { return w_f_; }
    const Mat& text_weights_in() const { return w1_; }
    const Mat& text_weights_out() const { return w2_; }

private:
    std::size_t d_;
    std::size_t h_;
    std::size_t p_;
    double tau_;
    Mat w_f_;  // d x p
    Mat w1_;   // h x d
    Mat w2_;   // d x h
};

}  // namespace fedprompt

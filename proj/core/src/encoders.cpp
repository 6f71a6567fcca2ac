#include "fedprompt/encoders.hpp"

#include <cmath>
#include <stdexcept>

#include "fedprompt/numerics.hpp"

namespace fedprompt {

namespace {

Vec unit_gaussian(std::size_t d, Rng rng) {
    Vec v(d);
    double norm_sq = 0.0;
    for (double& e : v) {
        e = rng.gaussian();
        norm_sq += e * e;
    }
    // A d-dimensional Gaussian draw is zero with probability zero, but a
    // deterministic artifact should not rely on that.
    if (norm_sq == 0.0) {
        v[0] = 1.0;
        norm_sq = 1.0;
    }
    double inv = 1.0 / std::sqrt(norm_sq);
    for (double& e : v) e *= inv;
    return v;
}

Mat scaled_gaussian(std::size_t rows, std::size_t cols, Rng rng) {
    Mat w(rows, cols);
    double scale = 1.0 / std::sqrt(static_cast<double>(cols));  // 1/sqrt(fan-in)
    for (double& e : w.data) e = scale * rng.gaussian();
    return w;
}

}  // namespace

TokenVocab::TokenVocab(std::size_t embed_dim, std::size_t num_classes, std::size_t num_domains,
                       const Rng& base)
    : d_(embed_dim),
      num_classes_(num_classes),
      num_domains_(num_domains),
      template_words_{"a", "photo", "of", "a", "with", "the", "domain", "of"} {
    class_tokens_.reserve(num_classes);
    for (std::size_t j = 0; j < num_classes; ++j) {
        class_tokens_.push_back(unit_gaussian(d_, base.child("vocab/class_" + std::to_string(j))));
    }
    domain_tokens_.reserve(num_domains);
    for (std::size_t m = 0; m < num_domains; ++m) {
        domain_tokens_.push_back(unit_gaussian(d_, base.child("vocab/domain_" + std::to_string(m))));
    }
    for (const std::string& w : template_words_) {
        if (!word_tokens_.contains(w)) {
            word_tokens_.emplace(w, unit_gaussian(d_, base.child("vocab/word_" + w)));
        }
    }
}

const Vec& TokenVocab::class_token(std::size_t j) const {
    if (j >= class_tokens_.size()) {
        throw std::runtime_error("TokenVocab: class index " + std::to_string(j) + " out of range");
    }
    return class_tokens_[j];
}

const Vec& TokenVocab::domain_token(std::size_t m) const {
    if (m >= domain_tokens_.size()) {
        throw std::runtime_error("TokenVocab: domain index " + std::to_string(m) + " out of range");
    }
    return domain_tokens_[m];
}

const Vec& TokenVocab::word_token(const std::string& word) const {
    auto it = word_tokens_.find(word);
    if (it == word_tokens_.end()) {
        throw std::runtime_error("TokenVocab: unknown template word '" + word + "'");
    }
    return it->second;
}

FrozenEncoders::FrozenEncoders(std::size_t embed_dim, std::size_t hidden_dim,
                               std::size_t feature_dim, double tau, const Rng& base)
    : d_(embed_dim),
      h_(hidden_dim),
      p_(feature_dim),
      tau_(tau),
      w_f_(scaled_gaussian(embed_dim, feature_dim, base.child("encoder/w_f"))),
      w1_(scaled_gaussian(hidden_dim, embed_dim, base.child("encoder/w1"))),
      w2_(scaled_gaussian(embed_dim, hidden_dim, base.child("encoder/w2"))) {
    if (tau <= 0.0) {
        throw ConfigError("FrozenEncoders: tau must be positive");
    }
}

Vec FrozenEncoders::encode_image(std::span<const double> x) const {
    if (x.size() != p_) {
        throw std::runtime_error("encode_image: expected " + std::to_string(p_) +
                                 " features, got " + std::to_string(x.size()));
    }
    ensure_finite(x, "encode_image input");
    return matvec(w_f_, x);
}

Vec FrozenEncoders::encode_text(const Mat& tokens) const {
    if (tokens.rows == 0) {
        throw std::runtime_error("encode_text: empty token sequence");
    }
    if (tokens.cols != d_) {
        throw std::runtime_error("encode_text: token dim " + std::to_string(tokens.cols) +
                                 " does not match embed dim " + std::to_string(d_));
    }
    Vec pool(d_, 0.0);
    for (std::size_t i = 0; i < tokens.rows; ++i) {
        auto row = tokens.row(i);
        for (std::size_t j = 0; j < d_; ++j) pool[j] += row[j];
    }
    double inv_n = 1.0 / static_cast<double>(tokens.rows);
    for (double& v : pool) v *= inv_n;
    Vec hidden = matvec(w1_, pool);
    for (double& v : hidden) v = std::tanh(v);
    return matvec(w2_, hidden);
}

Mat FrozenEncoders::encode_text_backward(const Mat& tokens, std::span<const double> upstream) const {
    if (tokens.rows == 0) {
        throw std::runtime_error("encode_text_backward: empty token sequence");
    }
    if (tokens.cols != d_ || upstream.size() != d_) {
        throw std::runtime_error("encode_text_backward: dimension mismatch");
    }
    Vec pool(d_, 0.0);
    for (std::size_t i = 0; i < tokens.rows; ++i) {
        auto row = tokens.row(i);
        for (std::size_t j = 0; j < d_; ++j) pool[j] += row[j];
    }
    double inv_n = 1.0 / static_cast<double>(tokens.rows);
    for (double& v : pool) v *= inv_n;

    Vec pre = matvec(w1_, pool);               // h
    Vec back = matvec_transposed(w2_, upstream);  // h, = W2^T upstream
    for (std::size_t i = 0; i < h_; ++i) {
        double t = std::tanh(pre[i]);
        back[i] *= 1.0 - t * t;
    }
    Vec g_pool = matvec_transposed(w1_, back);  // d
    for (double& v : g_pool) v *= inv_n;

    Mat grads(tokens.rows, d_);
    for (std::size_t i = 0; i < tokens.rows; ++i) {
        auto row = grads.row(i);
        for (std::size_t j = 0; j < d_; ++j) row[j] = g_pool[j];
    }
    return grads;
}

}  // namespace fedprompt

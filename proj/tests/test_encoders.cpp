// Token vocabulary and the frozen dual encoders: normalization, determinism,
// linear image map, mean-pool text path, and the handwritten backward pass.

#include <doctest.h>

#include <cmath>
#include <cstddef>
#include <vector>

#include "fedprompt/encoders.hpp"
#include "fedprompt/numerics.hpp"
#include "fedprompt/rng.hpp"

using namespace fedprompt;

namespace {

double norm(const Vec& v) {
    double s = 0.0;
    for (double e : v) s += e * e;
    return std::sqrt(s);
}

Mat template_token_matrix(const TokenVocab& vocab) {
    const auto& words = vocab.template_words();
    Mat tokens(words.size(), vocab.embed_dim());
    for (std::size_t i = 0; i < words.size(); ++i) {
        const Vec& e = vocab.word_token(words[i]);
        for (std::size_t c = 0; c < e.size(); ++c) tokens(i, c) = e[c];
    }
    return tokens;
}

}  // namespace

TEST_CASE("vocabulary embeddings are unit norm and deterministic") {
    Rng base(42);
    TokenVocab vocab(16, 5, 4, base);

    for (std::size_t j = 0; j < 5; ++j) {
        CHECK(norm(vocab.class_token(j)) == doctest::Approx(1.0).epsilon(1e-12));
    }
    for (std::size_t m = 0; m < 4; ++m) {
        CHECK(norm(vocab.domain_token(m)) == doctest::Approx(1.0).epsilon(1e-12));
    }
    for (const auto& word : vocab.template_words()) {
        CHECK(norm(vocab.word_token(word)) == doctest::Approx(1.0).epsilon(1e-12));
    }

    TokenVocab again(16, 5, 4, Rng(42));
    for (std::size_t j = 0; j < 5; ++j) CHECK(vocab.class_token(j) == again.class_token(j));
    for (std::size_t m = 0; m < 4; ++m) CHECK(vocab.domain_token(m) == again.domain_token(m));

    CHECK_THROWS_AS((void)vocab.class_token(5), std::runtime_error);
    CHECK_THROWS_AS((void)vocab.domain_token(4), std::runtime_error);
    CHECK_THROWS_AS((void)vocab.word_token("nonexistent"), std::runtime_error);
}

TEST_CASE("repeated template words share one embedding") {
    Rng base(7);
    TokenVocab vocab(8, 3, 2, base);
    const auto& words = vocab.template_words();
    REQUIRE(words.size() == 8);
    // Phrase skeleton: a photo of a with the domain of
    CHECK(words[0] == "a");
    CHECK(words[3] == "a");
    CHECK(words[2] == "of");
    CHECK(words[7] == "of");

    Mat tokens = template_token_matrix(vocab);
    CHECK(std::vector<double>(tokens.row(0).begin(), tokens.row(0).end()) ==
          std::vector<double>(tokens.row(3).begin(), tokens.row(3).end()));
    CHECK(std::vector<double>(tokens.row(2).begin(), tokens.row(2).end()) ==
          std::vector<double>(tokens.row(7).begin(), tokens.row(7).end()));
}

TEST_CASE("encode_image is the fixed linear map") {
    Rng base(3);
    FrozenEncoders enc(8, 6, 5, 0.07, base);

    Vec zero(5, 0.0);
    Vec out = enc.encode_image(zero);
    for (double e : out) CHECK(e == 0.0);

    Rng rng(11);
    Vec x(5), y(5);
    for (double& e : x) e = rng.gaussian();
    for (double& e : y) e = rng.gaussian();
    Vec ex = enc.encode_image(x);
    Vec ey = enc.encode_image(y);
    Vec combo(5);
    for (std::size_t i = 0; i < 5; ++i) combo[i] = 2.0 * x[i] - 0.5 * y[i];
    Vec ecombo = enc.encode_image(combo);
    for (std::size_t i = 0; i < ecombo.size(); ++i) {
        CHECK(ecombo[i] == doctest::Approx(2.0 * ex[i] - 0.5 * ey[i]).epsilon(1e-12));
    }

    Vec wrong(4, 0.0);
    CHECK_THROWS_AS((void)enc.encode_image(wrong), std::runtime_error);
}

TEST_CASE("encode_text pools over tokens") {
    Rng base(3);
    FrozenEncoders enc(8, 6, 5, 0.07, base);
    Rng rng(12);

    Mat tokens(4, 8);
    for (double& e : tokens.data) e = rng.gaussian();

    SUBCASE("row order does not matter") {
        Mat perm(4, 8);
        const std::size_t order[] = {2, 0, 3, 1};
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t c = 0; c < 8; ++c) perm(i, c) = tokens(order[i], c);
        Vec a = enc.encode_text(tokens);
        Vec b = enc.encode_text(perm);
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-12));
        }
    }

    SUBCASE("single token matches the explicit two-layer formula") {
        Mat one(1, 8);
        for (std::size_t c = 0; c < 8; ++c) one(0, c) = tokens(0, c);
        Vec hidden = matvec(enc.text_weights_in(), one.row(0));
        for (double& e : hidden) e = std::tanh(e);
        Vec expected = matvec(enc.text_weights_out(), hidden);
        Vec got = enc.encode_text(one);
        for (std::size_t i = 0; i < expected.size(); ++i) {
            CHECK(got[i] == doctest::Approx(expected[i]).epsilon(1e-12));
        }
    }

    SUBCASE("appending the mean token leaves the embedding unchanged") {
        Mat extended(5, 8);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t c = 0; c < 8; ++c) extended(i, c) = tokens(i, c);
        for (std::size_t c = 0; c < 8; ++c) {
            double mean = 0.0;
            for (std::size_t i = 0; i < 4; ++i) mean += tokens(i, c);
            extended(4, c) = mean / 4.0;
        }
        Vec a = enc.encode_text(tokens);
        Vec b = enc.encode_text(extended);
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-12));
        }
    }

    SUBCASE("empty token list is rejected") {
        Mat empty(0, 8);
        CHECK_THROWS_AS((void)enc.encode_text(empty), std::runtime_error);
    }
}

TEST_CASE("encode_text_backward is the exact adjoint") {
    Rng base(9);
    FrozenEncoders enc(6, 5, 4, 0.07, base);
    Rng rng(21);

    Mat tokens(3, 6);
    for (double& e : tokens.data) e = rng.gaussian();
    Vec upstream(6);
    for (double& e : upstream) e = rng.gaussian();

    SUBCASE("zero upstream gives zero gradient") {
        Vec zero(6, 0.0);
        Mat g = enc.encode_text_backward(tokens, zero);
        for (double e : g.data) CHECK(e == 0.0);
    }

    SUBCASE("all token rows receive the same gradient") {
        Mat g = enc.encode_text_backward(tokens, upstream);
        REQUIRE(g.rows == 3);
        for (std::size_t i = 1; i < g.rows; ++i) {
            for (std::size_t c = 0; c < g.cols; ++c) CHECK(g(i, c) == g(0, c));
        }
    }

    SUBCASE("matches central finite differences") {
        Mat g = enc.encode_text_backward(tokens, upstream);
        Vec flat_params = tokens.data;
        Vec flat_grad = g.data;
        auto loss = [&](const Vec& p) {
            Mat t(3, 6);
            t.data = p;
            Vec z = enc.encode_text(t);
            double s = 0.0;
            for (std::size_t i = 0; i < z.size(); ++i) s += upstream[i] * z[i];
            return s;
        };
        CHECK(finite_diff_check(loss, flat_params, flat_grad, 1e-5) < 1e-6);
    }

    SUBCASE("duplicating every token halves each per-position gradient") {
        Mat doubled(6, 6);
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t c = 0; c < 6; ++c) {
                doubled(i, c) = tokens(i, c);
                doubled(i + 3, c) = tokens(i, c);
            }
        }
        Mat g1 = enc.encode_text_backward(tokens, upstream);
        Mat g2 = enc.encode_text_backward(doubled, upstream);
        for (std::size_t c = 0; c < 6; ++c) {
            CHECK(g2(0, c) == doctest::Approx(0.5 * g1(0, c)).epsilon(1e-12));
        }
    }
}

TEST_CASE("encoder weights are frozen functions of the seed") {
    FrozenEncoders a(8, 6, 5, 0.07, Rng(123));
    FrozenEncoders b(8, 6, 5, 0.07, Rng(123));
    CHECK(a.image_weights() == b.image_weights());
    CHECK(a.text_weights_in() == b.text_weights_in());
    CHECK(a.text_weights_out() == b.text_weights_out());
    CHECK(a.tau() == 0.07);
    CHECK(a.embed_dim() == 8);
    CHECK(a.hidden_dim() == 6);
    CHECK(a.feature_dim() == 5);

    FrozenEncoders c(8, 6, 5, 0.07, Rng(124));
    CHECK(a.image_weights() != c.image_weights());
}

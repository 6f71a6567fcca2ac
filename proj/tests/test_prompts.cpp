// Prompt bank construction, text-sequence assembly, the contrastive anchor,
// and byte-exact checkpoint round-trips.

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <vector>

#include "fedprompt/encoders.hpp"
#include "fedprompt/prompts.hpp"
#include "fedprompt/rng.hpp"

using namespace fedprompt;

namespace {

struct Fixture {
    Rng base{42};
    TokenVocab vocab{16, 5, 4, base};
    PromptDims dims{.prompt_len = 4, .embed_dim = 16, .num_domains = 3, .num_classes = 5};
    std::vector<std::size_t> ids{0, 1, 3};  // slot -> vocabulary domain id
    PromptBank bank = init_prompt_bank(dims, ids, vocab, base);
};

bool row_equals(const Mat& m, std::size_t row, const Vec& v) {
    if (m.cols != v.size()) return false;
    for (std::size_t c = 0; c < m.cols; ++c) {
        if (m(row, c) != v[c]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("init_prompt_bank layout and determinism") {
    Fixture f;
    CHECK(f.bank.g_prompt.rows == 4);
    CHECK(f.bank.g_prompt.cols == 16);
    CHECK(f.bank.d_prompts.size() == 3);
    CHECK(f.bank.q_prompt.rows == 4);

    // Same seed, same bank, bit for bit.
    Fixture g;
    CHECK(f.bank == g.bank);

    // Different base seed changes the learned blocks.
    Rng other(43);
    TokenVocab vocab2(16, 5, 4, other);
    PromptBank different = init_prompt_bank(f.dims, f.ids, vocab2, other);
    CHECK(different.g_prompt != f.bank.g_prompt);

    // Slot to vocabulary-id mapping is preserved verbatim.
    CHECK(f.bank.d_prompts[0].domain_id == 0);
    CHECK(f.bank.d_prompts[1].domain_id == 1);
    CHECK(f.bank.d_prompts[2].domain_id == 3);

    // Domain blocks come from distinct streams.
    CHECK(f.bank.d_prompts[0].tokens != f.bank.d_prompts[1].tokens);
    CHECK(f.bank.d_prompts[1].tokens != f.bank.d_prompts[2].tokens);
    CHECK(f.bank.g_prompt != f.bank.d_prompts[0].tokens);
}

TEST_CASE("learned prompt rows start near zero") {
    Fixture f;
    double max_abs = 0.0;
    double sq = 0.0;
    for (double v : f.bank.g_prompt.data) {
        max_abs = std::max(max_abs, std::abs(v));
        sq += v * v;
    }
    CHECK(max_abs > 0.0);     // not degenerate-zero
    CHECK(max_abs < 0.2);     // scale 0.02, so 10 sigma is far out
    double rms = std::sqrt(sq / static_cast<double>(f.bank.g_prompt.size()));
    CHECK(rms > 0.005);
    CHECK(rms < 0.08);
}

TEST_CASE("query rows copy the template words in phrase order") {
    Fixture f;
    const auto& words = f.vocab.template_words();
    for (std::size_t i = 0; i < f.bank.q_prompt.rows; ++i) {
        CHECK(row_equals(f.bank.q_prompt, i, f.vocab.word_token(words[i % words.size()])));
    }

    // Longer prompts cycle through the phrase.
    PromptDims wide = f.dims;
    wide.prompt_len = 10;
    PromptBank bank = init_prompt_bank(wide, f.ids, f.vocab, Rng(42));
    CHECK(row_equals(bank.q_prompt, 8, f.vocab.word_token(words[0])));
    CHECK(row_equals(bank.q_prompt, 9, f.vocab.word_token(words[1])));
}

TEST_CASE("init_prompt_bank rejects inconsistent dimensions") {
    Fixture f;
    std::vector<std::size_t> short_ids{0, 1};
    CHECK_THROWS_AS((void)init_prompt_bank(f.dims, short_ids, f.vocab, Rng(1)), ConfigError);
    PromptDims bad = f.dims;
    bad.embed_dim = 8;
    CHECK_THROWS_AS((void)init_prompt_bank(bad, f.ids, f.vocab, Rng(1)), ConfigError);
}

TEST_CASE("assemble_text_input builds the documented sequences") {
    Fixture f;
    const std::size_t L = f.dims.prompt_len;

    SUBCASE("global: prompt rows then class token") {
        Mat seq = assemble_text_input(f.bank, PromptKind::global, 2, std::nullopt, f.vocab);
        REQUIRE(seq.rows == L + 1);
        for (std::size_t i = 0; i < L; ++i) {
            CHECK(row_equals(seq, i, Vec(f.bank.g_prompt.row(i).begin(),
                                         f.bank.g_prompt.row(i).end())));
        }
        CHECK(row_equals(seq, L, f.vocab.class_token(2)));
    }

    SUBCASE("domain: prompt rows, domain token, class token") {
        Mat seq = assemble_text_input(f.bank, PromptKind::domain, 1, 2, f.vocab);
        REQUIRE(seq.rows == L + 2);
        for (std::size_t i = 0; i < L; ++i) {
            CHECK(row_equals(seq, i, Vec(f.bank.d_prompts[2].tokens.row(i).begin(),
                                         f.bank.d_prompts[2].tokens.row(i).end())));
        }
        CHECK(row_equals(seq, L, f.vocab.domain_token(3)));  // slot 2 -> vocab id 3
        CHECK(row_equals(seq, L + 1, f.vocab.class_token(1)));
    }

    SUBCASE("query: prompt rows, class token, domain token") {
        Mat seq = assemble_text_input(f.bank, PromptKind::query, 4, 0, f.vocab);
        REQUIRE(seq.rows == L + 2);
        CHECK(row_equals(seq, L, f.vocab.class_token(4)));
        CHECK(row_equals(seq, L + 1, f.vocab.domain_token(0)));
    }

    SUBCASE("class index changes exactly one row") {
        Mat a = assemble_text_input(f.bank, PromptKind::global, 0, std::nullopt, f.vocab);
        Mat b = assemble_text_input(f.bank, PromptKind::global, 1, std::nullopt, f.vocab);
        for (std::size_t i = 0; i < L; ++i) {
            for (std::size_t c = 0; c < a.cols; ++c) CHECK(a(i, c) == b(i, c));
        }
        bool differs = false;
        for (std::size_t c = 0; c < a.cols; ++c) differs |= (a(L, c) != b(L, c));
        CHECK(differs);
    }

    SUBCASE("domain and query kinds need a valid slot") {
        CHECK_THROWS_AS(
            (void)assemble_text_input(f.bank, PromptKind::domain, 0, std::nullopt, f.vocab),
            std::runtime_error);
        CHECK_THROWS_AS((void)assemble_text_input(f.bank, PromptKind::query, 0, 3, f.vocab),
                        std::runtime_error);
        CHECK_THROWS_AS(
            (void)assemble_text_input(f.bank, PromptKind::global, 5, std::nullopt, f.vocab),
            std::runtime_error);
    }

    SUBCASE("result owns its storage") {
        Mat seq = assemble_text_input(f.bank, PromptKind::global, 0, std::nullopt, f.vocab);
        Mat copy = seq;
        f.bank.g_prompt(0, 0) += 1.0;
        CHECK(seq == copy);
    }
}

TEST_CASE("handcrafted_positive is class-count independent and deterministic") {
    Fixture f;
    Vec a = handcrafted_positive(f.vocab, 1, 5, 4);
    CHECK(a.size() == 4 * 16);

    Vec b = handcrafted_positive(f.vocab, 1, 1, 4);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    }

    Vec again = handcrafted_positive(f.vocab, 1, 5, 4);
    CHECK(a == again);

    double sq = 0.0;
    for (double v : a) sq += v * v;
    CHECK(sq > 0.0);

    CHECK_THROWS_AS((void)handcrafted_positive(f.vocab, 4, 5, 4), std::runtime_error);
    CHECK_THROWS_AS((void)handcrafted_positive(f.vocab, 0, 0, 4), std::runtime_error);
}

TEST_CASE("flatten is row major") {
    Mat m(2, 3);
    double v = 1.0;
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j) m(i, j) = v++;
    Vec flat = flatten(m);
    CHECK(flat == Vec{1, 2, 3, 4, 5, 6});
}

TEST_CASE("checkpoint round-trips bit for bit") {
    Fixture f;
    // Adversarial values whose shortest decimal forms need full precision.
    f.bank.g_prompt(0, 0) = 0.1 + 0.2;
    f.bank.g_prompt(0, 1) = 1.0 / 3.0;
    f.bank.g_prompt(1, 0) = 1e-300;
    f.bank.g_prompt(1, 1) = -4.9999999999999994e-1;
    f.bank.d_prompts[1].tokens(2, 3) = 2.2250738585072014e-308;

    Checkpoint ckpt;
    ckpt.bank = f.bank;
    ckpt.seed = 987654321;
    ckpt.round = 17;

    auto path = std::filesystem::temp_directory_path() / "fedprompt_test_ckpt.json";
    save_checkpoint(path, ckpt);
    Checkpoint back = load_checkpoint(path);
    std::filesystem::remove(path);

    CHECK(back.bank == ckpt.bank);
    CHECK(back.seed == ckpt.seed);
    CHECK(back.round == ckpt.round);
}

TEST_CASE("load_checkpoint rejects malformed input") {
    auto path = std::filesystem::temp_directory_path() / "fedprompt_bad_ckpt.json";
    {
        std::FILE* out = std::fopen(path.string().c_str(), "wb");
        REQUIRE(out != nullptr);
        std::fputs("{\"dims\": {\"prompt_len\": 2}}", out);
        std::fclose(out);
    }
    CHECK_THROWS_AS((void)load_checkpoint(path), std::runtime_error);
    std::filesystem::remove(path);
    CHECK_THROWS_AS((void)load_checkpoint(path), std::runtime_error);
}

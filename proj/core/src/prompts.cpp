#include "fedprompt/prompts.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fedprompt/jsonio.hpp"

namespace fedprompt {

namespace {

Mat gaussian_rows(std::size_t rows, std::size_t cols, double stddev, Rng rng) {
    Mat m(rows, cols);
    for (double& e : m.data) e = stddev * rng.gaussian();
    return m;
}

Mat template_rows(const TokenVocab& vocab, std::size_t prompt_len) {
    const auto& words = vocab.template_words();
    Mat m(prompt_len, vocab.embed_dim());
    for (std::size_t i = 0; i < prompt_len; ++i) {
        const Vec& emb = vocab.word_token(words[i % words.size()]);
        auto row = m.row(i);
        for (std::size_t j = 0; j < emb.size(); ++j) row[j] = emb[j];
    }
    return m;
}

void copy_row(Mat& dst, std::size_t row, std::span<const double> src) {
    auto r = dst.row(row);
    for (std::size_t j = 0; j < src.size(); ++j) r[j] = src[j];
}

Mat mat_from_flat(const nlohmann::json& arr, std::size_t rows, std::size_t cols,
                  const char* field) {
    if (!arr.is_array() || arr.size() != rows * cols) {
        throw std::runtime_error(std::string("checkpoint: field '") + field +
                                 "' has wrong length");
    }
    Mat m(rows, cols);
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = arr[i].get<double>();
    return m;
}

}  // namespace

PromptBank init_prompt_bank(const PromptDims& dims,
                            const std::vector<std::size_t>& source_domain_ids,
                            const TokenVocab& vocab, const Rng& base) {
    if (dims.prompt_len == 0 || dims.embed_dim == 0 || dims.num_classes == 0) {
        throw ConfigError("init_prompt_bank: degenerate dimensions");
    }
    if (source_domain_ids.size() != dims.num_domains || dims.num_domains == 0) {
        throw ConfigError("init_prompt_bank: need one vocabulary id per source domain");
    }
    if (vocab.embed_dim() != dims.embed_dim) {
        throw ConfigError("init_prompt_bank: vocabulary dim does not match prompt dims");
    }
    PromptBank bank;
    bank.dims = dims;
    bank.g_prompt = gaussian_rows(dims.prompt_len, dims.embed_dim, 0.02, base.child("prompt/g"));
    bank.d_prompts.reserve(dims.num_domains);
    for (std::size_t m = 0; m < dims.num_domains; ++m) {
        DomainPrompt dp;
        dp.tokens = gaussian_rows(dims.prompt_len, dims.embed_dim, 0.02,
                                  base.child("prompt/d_" + std::to_string(m)));
        dp.domain_id = source_domain_ids[m];
        bank.d_prompts.push_back(std::move(dp));
    }
    bank.q_prompt = template_rows(vocab, dims.prompt_len);
    return bank;
}

Mat assemble_text_input(const PromptBank& bank, PromptKind kind, std::size_t class_j,
                        std::optional<std::size_t> m, const TokenVocab& vocab) {
    const std::size_t L = bank.dims.prompt_len;
    const std::size_t d = bank.dims.embed_dim;
    if (class_j >= bank.dims.num_classes) {
        throw std::runtime_error("assemble_text_input: class index out of range");
    }
    auto need_domain = [&]() -> const DomainPrompt& {
        if (!m.has_value() || *m >= bank.d_prompts.size()) {
            throw std::runtime_error("assemble_text_input: missing or invalid domain slot");
        }
        return bank.d_prompts[*m];
    };
    switch (kind) {
        case PromptKind::global: {
            Mat seq(L + 1, d);
            for (std::size_t i = 0; i < L; ++i) copy_row(seq, i, bank.g_prompt.row(i));
            copy_row(seq, L, vocab.class_token(class_j));
            return seq;
        }
        case PromptKind::domain: {
            const DomainPrompt& dp = need_domain();
            Mat seq(L + 2, d);
            for (std::size_t i = 0; i < L; ++i) copy_row(seq, i, dp.tokens.row(i));
            copy_row(seq, L, vocab.domain_token(dp.domain_id));
            copy_row(seq, L + 1, vocab.class_token(class_j));
            return seq;
        }
        case PromptKind::query: {
            const DomainPrompt& dp = need_domain();
            Mat seq(L + 2, d);
            for (std::size_t i = 0; i < L; ++i) copy_row(seq, i, bank.q_prompt.row(i));
            copy_row(seq, L, vocab.class_token(class_j));
            copy_row(seq, L + 1, vocab.domain_token(dp.domain_id));
            return seq;
        }
    }
    throw std::runtime_error("assemble_text_input: unknown prompt kind");
}

Vec handcrafted_positive(const TokenVocab& vocab, std::size_t m, std::size_t num_classes,
                         std::size_t prompt_len) {
    if (m >= vocab.num_domains()) {
        throw std::runtime_error("handcrafted_positive: domain index out of range");
    }
    if (num_classes == 0) {
        throw std::runtime_error("handcrafted_positive: need at least one class");
    }
    Mat base = template_rows(vocab, prompt_len);
    Vec accum(base.size(), 0.0);
    for (std::size_t j = 0; j < num_classes; ++j) {
        // The template rows carry no class or domain slot, so each class
        // contributes the same flat vector here.
        for (std::size_t i = 0; i < base.size(); ++i) accum[i] += base.data[i];
    }
    double inv = 1.0 / static_cast<double>(num_classes);
    for (double& v : accum) v *= inv;
    return accum;
}

Vec flatten(const Mat& m) { return m.data; }

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ostringstream os;
    const PromptDims& dm = ckpt.bank.dims;
    os << "{\n";
    os << "  \"dims\": {\"prompt_len\": " << dm.prompt_len << ", \"embed_dim\": " << dm.embed_dim
       << ", \"num_domains\": " << dm.num_domains << ", \"num_classes\": " << dm.num_classes
       << "},\n";
    os << "  \"g_prompt\": ";
    write_double_array(os, ckpt.bank.g_prompt.data);
    os << ",\n  \"d_prompts\": [";
    for (std::size_t m = 0; m < ckpt.bank.d_prompts.size(); ++m) {
        if (m > 0) os << ", ";
        os << "{\"domain_id\": " << ckpt.bank.d_prompts[m].domain_id << ", \"tokens\": ";
        write_double_array(os, ckpt.bank.d_prompts[m].tokens.data);
        os << "}";
    }
    os << "],\n  \"q_prompt\": ";
    write_double_array(os, ckpt.bank.q_prompt.data);
    os << ",\n  \"seed\": " << ckpt.seed << ",\n  \"round\": " << ckpt.round << "\n}\n";

    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("save_checkpoint: cannot open " + path.string());
    }
    out << os.str();
    if (!out) {
        throw std::runtime_error("save_checkpoint: write failed for " + path.string());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("load_checkpoint: cannot open " + path.string());
    }
    // Parse and field extraction share one guard so missing or mistyped keys
    // surface as the same error type as syntax problems.
    try {
        nlohmann::json j;
        in >> j;
        Checkpoint ckpt;
        const auto& dims = j.at("dims");
        ckpt.bank.dims.prompt_len = dims.at("prompt_len").get<std::size_t>();
        ckpt.bank.dims.embed_dim = dims.at("embed_dim").get<std::size_t>();
        ckpt.bank.dims.num_domains = dims.at("num_domains").get<std::size_t>();
        ckpt.bank.dims.num_classes = dims.at("num_classes").get<std::size_t>();
        const std::size_t L = ckpt.bank.dims.prompt_len;
        const std::size_t d = ckpt.bank.dims.embed_dim;
        ckpt.bank.g_prompt = mat_from_flat(j.at("g_prompt"), L, d, "g_prompt");
        const auto& dp_arr = j.at("d_prompts");
        if (!dp_arr.is_array() || dp_arr.size() != ckpt.bank.dims.num_domains) {
            throw std::runtime_error("load_checkpoint: d_prompts count does not match dims");
        }
        for (const auto& entry : dp_arr) {
            DomainPrompt dp;
            dp.domain_id = entry.at("domain_id").get<std::size_t>();
            dp.tokens = mat_from_flat(entry.at("tokens"), L, d, "d_prompts.tokens");
            ckpt.bank.d_prompts.push_back(std::move(dp));
        }
        ckpt.bank.q_prompt = mat_from_flat(j.at("q_prompt"), L, d, "q_prompt");
        ckpt.seed = j.at("seed").get<std::uint64_t>();
        ckpt.round = j.at("round").get<std::size_t>();
        return ckpt;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_checkpoint: malformed checkpoint " + path.string() + ": " +
                                 e.what());
    }
}

}  // namespace fedprompt

#include "fedprompt/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "fedprompt/numerics.hpp"

namespace fedprompt {

namespace {

void add_scaled(std::span<double> dst, std::span<const double> src, double w) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * src[i];
}

double norm(std::span<const double> v) {
    double s = 0.0;
    for (double e : v) s += e * e;
    return std::sqrt(s);
}

/// d cos(a, b) / d b, with a held fixed.
Vec cosine_grad_wrt_b(std::span<const double> a, std::span<const double> b) {
    double na = norm(a), nb = norm(b);
    if (na == 0.0 || nb == 0.0) {
        throw std::runtime_error("cosine gradient: zero-norm operand");
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    double c = dot / (na * nb);
    Vec g(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) {
        g[i] = a[i] / (na * nb) - c * b[i] / (nb * nb);
    }
    return g;
}

/// Mean cross-entropy of a batch against per-class text sequences whose first
/// `L` rows are the learnable block. Returns the loss and the gradient summed
/// into those rows. Shared by the global and per-domain CE paths.
PromptGrad ce_over_batch(const FrozenEncoders& enc, const std::vector<Mat>& class_seqs,
                         std::span<const Sample> batch, std::size_t L) {
    const std::size_t C = class_seqs.size();
    const std::size_t d = enc.embed_dim();
    const double tau = enc.tau();
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    std::vector<Vec> z(C);
    for (std::size_t j = 0; j < C; ++j) z[j] = enc.encode_text(class_seqs[j]);

    // encode_text_backward is linear in the upstream vector, so upstream is
    // accumulated per class across the batch and backward runs once per class.
    std::vector<Vec> upstream(C, Vec(d, 0.0));
    double loss = 0.0;
    Vec sims(C);
    for (const Sample& s : batch) {
        Vec img = enc.encode_image(s.x);
        for (std::size_t j = 0; j < C; ++j) sims[j] = cosine_sim(img, z[j]);
        Vec probs = softmax_temp(sims, tau);
        loss += inv_b * cross_entropy(probs, s.label);
        for (std::size_t j = 0; j < C; ++j) {
            double dl_ds = (probs[j] - (j == s.label ? 1.0 : 0.0)) / tau;
            Vec dz = cosine_grad_wrt_b(img, z[j]);
            add_scaled(upstream[j], dz, inv_b * dl_ds);
        }
    }

    PromptGrad out;
    out.loss = loss;
    out.grad = Mat(L, d);
    for (std::size_t j = 0; j < C; ++j) {
        Mat token_grads = enc.encode_text_backward(class_seqs[j], upstream[j]);
        for (std::size_t r = 0; r < L; ++r) {
            add_scaled(out.grad.row(r), token_grads.row(r), 1.0);
        }
    }
    return out;
}

/// Contrastive pull of slot m's flattened rows toward the template anchor,
/// normalized against similarities to every slot (self included). Batch
/// independent. Gradient only into slot m; other slots act as constants.
struct ContrastiveResult {
    double loss = 0.0;
    Vec grad;  // flat L*d
};

ContrastiveResult contrastive_term(const PromptBank& bank, const TokenVocab& vocab, std::size_t m,
                                   double tau_cont) {
    if (tau_cont <= 0.0) {
        throw ConfigError("contrastive temperature must be positive");
    }
    const std::size_t M = bank.d_prompts.size();
    Vec v_m = flatten(bank.d_prompts[m].tokens);
    Vec anchor = handcrafted_positive(vocab, bank.d_prompts[m].domain_id, bank.dims.num_classes,
                                      bank.dims.prompt_len);

    double s_pos = cosine_sim(v_m, anchor) / tau_cont;
    Vec s(M);
    for (std::size_t i = 0; i < M; ++i) {
        s[i] = cosine_sim(v_m, flatten(bank.d_prompts[i].tokens)) / tau_cont;
    }
    double hi = *std::max_element(s.begin(), s.end());
    double total = 0.0;
    for (double e : s) total += std::exp(e - hi);
    double logsum = hi + std::log(total);

    ContrastiveResult out;
    out.loss = logsum - s_pos;
    out.grad.assign(v_m.size(), 0.0);
    add_scaled(out.grad, cosine_grad_wrt_b(anchor, v_m), -1.0 / tau_cont);
    for (std::size_t i = 0; i < M; ++i) {
        if (i == m) continue;  // cos(v, v) is constant 1; zero gradient
        double w = std::exp(s[i] - logsum) / tau_cont;
        add_scaled(out.grad, cosine_grad_wrt_b(flatten(bank.d_prompts[i].tokens), v_m), w);
    }
    return out;
}

Mat query_sequence(const Mat& q_rows, const Vec& class_tok, const Vec& domain_tok) {
    const std::size_t L = q_rows.rows;
    const std::size_t d = q_rows.cols;
    Mat seq(L + 2, d);
    std::copy(q_rows.data.begin(), q_rows.data.end(), seq.data.begin());
    std::copy(class_tok.begin(), class_tok.end(), seq.row(L).begin());
    std::copy(domain_tok.begin(), domain_tok.end(), seq.row(L + 1).begin());
    return seq;
}

}  // namespace

Vec class_probs(std::span<const double> image_emb, const std::vector<Vec>& text_embs, double tau) {
    if (text_embs.empty()) {
        throw std::runtime_error("class_probs: no text embeddings");
    }
    Vec sims(text_embs.size());
    for (std::size_t j = 0; j < text_embs.size(); ++j) {
        sims[j] = cosine_sim(image_emb, text_embs[j]);
    }
    return softmax_temp(sims, tau);
}

PromptGrad loss_g_and_grad(const PromptBank& bank, const FrozenEncoders& enc,
                           const TokenVocab& vocab, std::span<const Sample> batch) {
    if (batch.empty()) {
        throw std::runtime_error("loss_g_and_grad: empty batch");
    }
    const std::size_t C = bank.dims.num_classes;
    std::vector<Mat> seqs;
    seqs.reserve(C);
    for (std::size_t j = 0; j < C; ++j) {
        seqs.push_back(assemble_text_input(bank, PromptKind::global, j, std::nullopt, vocab));
    }
    return ce_over_batch(enc, seqs, batch, bank.dims.prompt_len);
}

DomainLossGrad loss_d_and_grad(const PromptBank& bank, const FrozenEncoders& enc,
                               const TokenVocab& vocab, std::span<const Sample> batch,
                               std::size_t m, double tau_cont, bool with_contrastive) {
    if (batch.empty()) {
        throw std::runtime_error("loss_d_and_grad: empty batch");
    }
    if (m >= bank.d_prompts.size()) {
        throw std::runtime_error("loss_d_and_grad: domain slot out of range");
    }
    const std::size_t C = bank.dims.num_classes;
    std::vector<Mat> seqs;
    seqs.reserve(C);
    for (std::size_t j = 0; j < C; ++j) {
        seqs.push_back(assemble_text_input(bank, PromptKind::domain, j, m, vocab));
    }
    PromptGrad ce = ce_over_batch(enc, seqs, batch, bank.dims.prompt_len);

    DomainLossGrad out;
    out.loss_ce = ce.loss;
    out.grad = std::move(ce.grad);
    if (with_contrastive) {
        ContrastiveResult cont = contrastive_term(bank, vocab, m, tau_cont);
        out.loss_cont = cont.loss;
        for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad.data[i] += cont.grad[i];
    }
    out.total = out.loss_ce + out.loss_cont;
    return out;
}

Mat qprompt_match(const PromptBank& bank, const FrozenEncoders& enc, const TokenVocab& vocab,
                  std::span<const double> image_emb) {
    const std::size_t C = bank.dims.num_classes;
    const std::size_t M = bank.d_prompts.size();
    Vec sims(C * M);
    for (std::size_t j = 0; j < C; ++j) {
        for (std::size_t m = 0; m < M; ++m) {
            Mat seq = assemble_text_input(bank, PromptKind::query, j, m, vocab);
            sims[j * M + m] = cosine_sim(image_emb, enc.encode_text(seq));
        }
    }
    Vec probs = softmax_temp(sims, enc.tau());
    Mat table(C, M);
    table.data = std::move(probs);
    return table;
}

std::size_t query_domain(const Mat& table, std::optional<std::size_t> label) {
    const std::size_t C = table.rows;
    const std::size_t M = table.cols;
    if (label.has_value()) {
        if (*label >= C) {
            throw std::runtime_error("query_domain: label out of range");
        }
        std::size_t best = 0;
        for (std::size_t m = 1; m < M; ++m) {
            if (table(*label, m) > table(*label, best)) best = m;
        }
        return best;
    }
    // Columns scanned in the outer loop so ties land on the smallest domain.
    std::size_t best_m = 0;
    double best_p = -1.0;
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t j = 0; j < C; ++j) {
            if (table(j, m) > best_p) {
                best_p = table(j, m);
                best_m = m;
            }
        }
    }
    return best_m;
}

QueryLossGrad loss_q_and_grad(const PromptBank& bank, const Mat& momentum_q,
                              const FrozenEncoders& enc, const TokenVocab& vocab,
                              std::span<const Sample> batch, bool mse_all_classes, bool with_mse,
                              bool with_kl) {
    if (batch.empty()) {
        throw std::runtime_error("loss_q_and_grad: empty batch");
    }
    if (!momentum_q.same_shape(bank.q_prompt)) {
        throw std::runtime_error("loss_q_and_grad: momentum shape mismatch");
    }
    const std::size_t C = bank.dims.num_classes;
    const std::size_t M = bank.d_prompts.size();
    const std::size_t L = bank.dims.prompt_len;
    const std::size_t d = enc.embed_dim();
    const double tau = enc.tau();
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const double inv_d = 1.0 / static_cast<double>(d);

    // Current and momentum text embeddings for every (class, domain) cell.
    std::vector<Mat> seqs(C * M);
    std::vector<Vec> z(C * M), z_bar(C * M);
    for (std::size_t j = 0; j < C; ++j) {
        for (std::size_t m = 0; m < M; ++m) {
            const Vec& ct = vocab.class_token(j);
            const Vec& dt = vocab.domain_token(bank.d_prompts[m].domain_id);
            seqs[j * M + m] = query_sequence(bank.q_prompt, ct, dt);
            z[j * M + m] = enc.encode_text(seqs[j * M + m]);
            z_bar[j * M + m] = enc.encode_text(query_sequence(momentum_q, ct, dt));
        }
    }

    std::vector<std::size_t> label_count(C, 0);
    for (const Sample& s : batch) {
        if (s.label >= C) {
            throw std::runtime_error("loss_q_and_grad: label out of range");
        }
        label_count[s.label] += 1;
    }

    QueryLossGrad out;
    std::vector<Vec> upstream(C * M, Vec(d, 0.0));

    // MSE term: constant per class, so it is weighted by class frequency
    // rather than recomputed per sample.
    for (std::size_t j = 0; with_mse && j < C; ++j) {
        double w = mse_all_classes ? 1.0 : label_count[j] * inv_b;
        if (w == 0.0) continue;
        for (std::size_t m = 0; m < M; ++m) {
            const Vec& cur = z[j * M + m];
            const Vec& ref = z_bar[j * M + m];
            out.loss_mse += w * mse(cur, ref);
            Vec diff(d);
            for (std::size_t i = 0; i < d; ++i) diff[i] = 2.0 * inv_d * (cur[i] - ref[i]);
            add_scaled(upstream[j * M + m], diff, w);
        }
    }

    // KL term: per-sample domain posteriors at the ground-truth class.
    Vec sims(M), sims_bar(M);
    for (std::size_t si = 0; with_kl && si < batch.size(); ++si) {
        const Sample& s = batch[si];
        Vec img = enc.encode_image(s.x);
        for (std::size_t m = 0; m < M; ++m) {
            sims[m] = cosine_sim(img, z[s.label * M + m]);
            sims_bar[m] = cosine_sim(img, z_bar[s.label * M + m]);
        }
        Vec p = softmax_temp(sims, tau);
        Vec q = softmax_temp(sims_bar, tau);
        double kl = kl_div(p, q);
        out.loss_kl += inv_b * kl;
        for (std::size_t m = 0; m < M; ++m) {
            double dl_ds = p[m] * (std::log(std::max(p[m], 1e-300) / std::max(q[m], 1e-300)) - kl) / tau;
            Vec dz = cosine_grad_wrt_b(img, z[s.label * M + m]);
            add_scaled(upstream[s.label * M + m], dz, inv_b * dl_ds);
        }
    }

    out.total = out.loss_mse + out.loss_kl;
    out.grad = Mat(L, d);
    for (std::size_t j = 0; j < C; ++j) {
        for (std::size_t m = 0; m < M; ++m) {
            Mat token_grads = enc.encode_text_backward(seqs[j * M + m], upstream[j * M + m]);
            for (std::size_t r = 0; r < L; ++r) {
                add_scaled(out.grad.row(r), token_grads.row(r), 1.0);
            }
        }
    }
    return out;
}

LocalObjective local_objective(const PromptBank& bank, const FrozenEncoders& enc,
                               const TokenVocab& vocab, std::span<const Sample> batch,
                               double lambda, std::span<const std::size_t> m_per_sample,
                               double tau_cont, bool with_contrastive) {
    if (batch.empty()) {
        throw std::runtime_error("local_objective: empty batch");
    }
    if (m_per_sample.size() != batch.size()) {
        throw std::runtime_error("local_objective: one routed domain required per sample");
    }
    const std::size_t M = bank.d_prompts.size();
    const std::size_t L = bank.dims.prompt_len;
    const std::size_t d = bank.dims.embed_dim;
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    LocalObjective out;
    out.loss_d_ce.assign(M, 0.0);
    out.loss_d_cont.assign(M, 0.0);
    out.routed.assign(M, 0);
    out.touched.assign(M, false);
    out.d_grads.assign(M, Mat(L, d));

    PromptGrad g = loss_g_and_grad(bank, enc, vocab, batch);
    out.loss_g = g.loss;
    out.g_grad = std::move(g.grad);
    out.total = g.loss;

    for (std::size_t s = 0; s < batch.size(); ++s) {
        if (m_per_sample[s] >= M) {
            throw std::runtime_error("local_objective: routed domain out of range");
        }
        out.routed[m_per_sample[s]] += 1;
    }
    if (lambda == 0.0) return out;

    std::vector<std::vector<Sample>> routed_batches(M);
    for (std::size_t s = 0; s < batch.size(); ++s) {
        routed_batches[m_per_sample[s]].push_back(batch[s]);
    }
    for (std::size_t m = 0; m < M; ++m) {
        if (routed_batches[m].empty()) continue;
        DomainLossGrad dl =
            loss_d_and_grad(bank, enc, vocab, routed_batches[m], m, tau_cont, with_contrastive);
        double w = lambda * static_cast<double>(routed_batches[m].size()) * inv_b;
        out.loss_d_ce[m] = dl.loss_ce;
        out.loss_d_cont[m] = dl.loss_cont;
        out.total += w * dl.total;
        out.touched[m] = true;
        for (std::size_t i = 0; i < dl.grad.size(); ++i) {
            out.d_grads[m].data[i] = w * dl.grad.data[i];
        }
    }
    return out;
}

}  // namespace fedprompt

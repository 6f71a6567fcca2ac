#include "fedprompt/federation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fedprompt/jsonio.hpp"

namespace fedprompt {

namespace {

std::vector<const ClientUpdate*> sorted_by_client(const std::vector<ClientUpdate>& updates) {
    std::vector<const ClientUpdate*> out;
    out.reserve(updates.size());
    for (const ClientUpdate& u : updates) out.push_back(&u);
    std::sort(out.begin(), out.end(), [](const ClientUpdate* a, const ClientUpdate* b) {
        return a->client_id < b->client_id;
    });
    return out;
}

bool mats_differ(const Mat& a, const Mat& b) { return !(a == b); }

}  // namespace

MomentumAverager::MomentumAverager(Mat init, std::size_t horizon, double beta)
    : avg_(std::move(init)), horizon_(horizon), beta_(beta) {
    if (beta <= 0.0) {
        throw ConfigError("MomentumAverager: beta must be positive");
    }
    weight_sum_ = slot_weight(0);
}

double MomentumAverager::slot_weight(std::size_t slot) const {
    double pos = (static_cast<double>(slot) + 0.5) / (static_cast<double>(horizon_) + 1.0);
    return beta_pdf(pos, beta_);
}

void MomentumAverager::update(const Mat& v_new, std::size_t slot) {
    if (slot == 0 || slot > horizon_) {
        throw std::runtime_error("MomentumAverager: slot " + std::to_string(slot) +
                                 " outside 1.." + std::to_string(horizon_));
    }
    if (!v_new.same_shape(avg_)) {
        throw std::runtime_error("MomentumAverager: shape mismatch");
    }
    double alpha = slot_weight(slot);
    double w = alpha / (weight_sum_ + alpha);
    for (std::size_t i = 0; i < avg_.size(); ++i) {
        avg_.data[i] += w * (v_new.data[i] - avg_.data[i]);
    }
    weight_sum_ += alpha;
}

std::string serialize_update(const ClientUpdate& update) {
    std::ostringstream os;
    os << "{\"client_id\": " << update.client_id << ", \"round\": " << update.round
       << ", \"n_samples\": " << update.n_samples << ", \"g_prompt\": ";
    write_double_array(os, update.g_prompt.data);
    os << ", \"d_prompts\": [";
    for (std::size_t m = 0; m < update.d_prompts.size(); ++m) {
        if (m > 0) os << ", ";
        os << "{\"domain_id\": " << update.d_prompts[m].domain_id
           << ", \"touched\": " << (update.touched[m] ? "true" : "false") << ", \"tokens\": ";
        write_double_array(os, update.d_prompts[m].tokens.data);
        os << "}";
    }
    os << "]}";
    return os.str();
}

std::vector<std::size_t> sample_clients(Rng& rng, std::size_t k, std::size_t h) {
    if (h == 0 || h > k) {
        throw ConfigError("sample_clients: need 1 <= H <= K, got H=" + std::to_string(h) +
                          ", K=" + std::to_string(k));
    }
    std::vector<std::size_t> ids(k);
    for (std::size_t i = 0; i < k; ++i) ids[i] = i;
    // Partial Fisher-Yates: the first h entries end up a uniform sample
    // without replacement.
    for (std::size_t i = 0; i < h; ++i) {
        std::size_t j = i + rng.next_below(k - i);
        std::swap(ids[i], ids[j]);
    }
    ids.resize(h);
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::pair<ClientUpdate, ClientRoundStats> run_client(
    ClientState& client, const Mat& g_in, const std::vector<DomainPrompt>& d_in,
    const FrozenEncoders& enc, const TokenVocab& vocab, const PromptDims& dims,
    const FederationConfig& cfg, std::size_t round) {
    if (client.shard.empty()) {
        throw std::runtime_error("run_client: client " + std::to_string(client.id) +
                                 " has an empty shard");
    }
    const std::size_t m_count = d_in.size();
    PromptBank bank;
    bank.dims = dims;
    bank.dims.num_domains = m_count;
    bank.g_prompt = g_in;
    bank.d_prompts = d_in;
    bank.q_prompt = client.q_prompt;

    ClientRoundStats stats;
    stats.touch_counts.assign(m_count, 0);
    std::vector<bool> touched_any(m_count, false);
    const double lambda_eff = cfg.no_d_prompts ? 0.0 : cfg.lambda;
    const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);

    std::vector<Sample> batch;
    std::vector<std::size_t> routed;
    for (std::size_t t = 0; t < cfg.local_iters; ++t) {
        batch.clear();
        for (std::size_t i = 0; i < cfg.batch_size; ++i) {
            if (client.cursor >= client.order.size()) {
                client.order.resize(client.shard.size());
                for (std::size_t s = 0; s < client.order.size(); ++s) client.order[s] = s;
                shuffle(client.order, client.rng);
                client.cursor = 0;
            }
            batch.push_back(client.shard[client.order[client.cursor++]]);
        }

        if (!cfg.static_query) {
            QueryLossGrad q =
                loss_q_and_grad(bank, client.q_momentum.average(), enc, vocab, batch,
                                cfg.qprompt_mse_all_classes, !cfg.no_mse, !cfg.no_kl);
            if (!std::isfinite(q.total)) {
                throw std::runtime_error("run_client: non-finite query loss at client " +
                                         std::to_string(client.id) + ", iteration " +
                                         std::to_string(t));
            }
            adam_step(client.adam_q, bank.q_prompt.data, q.grad.data,
                      "q_prompt@client" + std::to_string(client.id));
            client.q_slot += 1;
            client.q_momentum.update(bank.q_prompt, client.q_slot);
            stats.loss_q_sum += q.total;
        }

        routed.assign(batch.size(), 0);
        for (std::size_t s = 0; s < batch.size(); ++s) {
            std::size_t slot = 0;
            if (cfg.use_domain_labels) {
                bool found = false;
                for (std::size_t m = 0; m < m_count; ++m) {
                    if (d_in[m].domain_id == batch[s].domain) {
                        slot = m;
                        found = true;
                        break;
                    }
                }
                if (!found) {
                    throw std::runtime_error("run_client: sample domain " +
                                             std::to_string(batch[s].domain) +
                                             " has no prompt slot");
                }
            } else {
                Vec img = enc.encode_image(batch[s].x);
                Mat table = qprompt_match(bank, enc, vocab, img);
                slot = query_domain(table, batch[s].label);
            }
            routed[s] = slot;
            stats.touch_counts[slot] += 1;
            stats.query_total += 1;
            if (bank.d_prompts[slot].domain_id == batch[s].domain) stats.query_correct += 1;
        }

        LocalObjective lo = local_objective(bank, enc, vocab, batch, lambda_eff, routed,
                                            cfg.tau_cont, !cfg.no_contrastive);
        if (!std::isfinite(lo.total)) {
            throw std::runtime_error("run_client: non-finite loss at client " +
                                     std::to_string(client.id) + ", iteration " +
                                     std::to_string(t));
        }
        stats.loss_g_sum += lo.loss_g;
        for (std::size_t m = 0; m < m_count; ++m) {
            stats.loss_d_sum += static_cast<double>(lo.routed[m]) * inv_b *
                                (lo.loss_d_ce[m] + lo.loss_d_cont[m]);
        }
        if (!cfg.no_g_prompt) {
            adam_step(client.adam_g, bank.g_prompt.data, lo.g_grad.data,
                      "g_prompt@client" + std::to_string(client.id));
        }
        for (std::size_t m = 0; m < m_count; ++m) {
            if (!lo.touched[m]) continue;
            adam_step(client.adam_d[m], bank.d_prompts[m].tokens.data, lo.d_grads[m].data,
                      "d_prompt" + std::to_string(m) + "@client" + std::to_string(client.id));
            touched_any[m] = true;
        }
        stats.iters += 1;
    }

    client.q_prompt = bank.q_prompt;

    ClientUpdate update;
    update.client_id = client.id;
    update.round = round;
    update.g_prompt = std::move(bank.g_prompt);
    update.d_prompts = std::move(bank.d_prompts);
    update.touched = std::move(touched_any);
    update.n_samples = client.shard.size();
    return {std::move(update), std::move(stats)};
}

Mat aggregate_gprompt(const Mat& prev, const std::vector<ClientUpdate>& updates) {
    if (updates.empty()) {
        throw std::runtime_error("aggregate_gprompt: no updates");
    }
    double total = 0.0;
    for (const ClientUpdate& u : updates) {
        if (!u.g_prompt.same_shape(prev)) {
            throw std::runtime_error("aggregate_gprompt: shape mismatch from client " +
                                     std::to_string(u.client_id));
        }
        total += static_cast<double>(u.n_samples);
    }
    if (total <= 0.0) {
        throw std::runtime_error("aggregate_gprompt: zero total weight");
    }
    if (updates.size() == 1) return updates[0].g_prompt;

    // Delta form around prev: an all-equal-to-prev round leaves prev
    // bit-identical, and a shared drift never amplifies roundoff.
    Mat out = prev;
    for (const ClientUpdate* u : sorted_by_client(updates)) {
        double w = static_cast<double>(u->n_samples) / total;
        for (std::size_t i = 0; i < out.size(); ++i) {
            out.data[i] += w * (u->g_prompt.data[i] - prev.data[i]);
        }
    }
    return out;
}

std::vector<DomainPrompt> aggregate_dprompts(const std::vector<DomainPrompt>& prev,
                                             const std::vector<ClientUpdate>& updates,
                                             TouchRule rule) {
    std::vector<const ClientUpdate*> ordered = sorted_by_client(updates);
    for (const ClientUpdate* u : ordered) {
        if (u->d_prompts.size() != prev.size() || u->touched.size() != prev.size()) {
            throw std::runtime_error("aggregate_dprompts: malformed update from client " +
                                     std::to_string(u->client_id));
        }
        for (std::size_t m = 0; m < prev.size(); ++m) {
            if (u->d_prompts[m].domain_id != prev[m].domain_id) {
                throw std::runtime_error("aggregate_dprompts: domain id mismatch from client " +
                                         std::to_string(u->client_id));
            }
        }
    }

    std::vector<DomainPrompt> out;
    out.reserve(prev.size());
    for (std::size_t m = 0; m < prev.size(); ++m) {
        std::vector<const ClientUpdate*> touching;
        double total = 0.0;
        for (const ClientUpdate* u : ordered) {
            bool touched = rule == TouchRule::structural
                               ? u->touched[m]
                               : mats_differ(u->d_prompts[m].tokens, prev[m].tokens);
            if (!touched) continue;
            touching.push_back(u);
            total += static_cast<double>(u->n_samples);
        }
        DomainPrompt agg;
        agg.domain_id = prev[m].domain_id;
        if (touching.empty() || total <= 0.0) {
            agg.tokens = prev[m].tokens;  // untouched: bit-identical carry-over
        } else if (touching.size() == 1) {
            agg.tokens = touching[0]->d_prompts[m].tokens;
        } else {
            agg.tokens = prev[m].tokens;
            for (const ClientUpdate* u : touching) {
                double w = static_cast<double>(u->n_samples) / total;
                for (std::size_t i = 0; i < agg.tokens.size(); ++i) {
                    agg.tokens.data[i] +=
                        w * (u->d_prompts[m].tokens.data[i] - prev[m].tokens.data[i]);
                }
            }
        }
        out.push_back(std::move(agg));
    }
    return out;
}

TrainingResult run_training(const FederationConfig& cfg, const PromptBank& init,
                            const FrozenEncoders& enc, const TokenVocab& vocab,
                            const std::vector<ClientShard>& shards, const Rng& base,
                            const RoundObserver& observer) {
    if (shards.size() != cfg.num_clients) {
        throw ConfigError("run_training: expected one shard per client");
    }
    if (cfg.clients_per_round == 0 || cfg.clients_per_round > cfg.num_clients) {
        throw ConfigError("run_training: clients_per_round outside 1..num_clients");
    }
    if (cfg.batch_size == 0) {
        throw ConfigError("run_training: batch_size must be positive");
    }
    const std::size_t m_count = init.d_prompts.size();
    const std::size_t block = init.dims.prompt_len * init.dims.embed_dim;
    const std::size_t q_horizon = cfg.rounds * cfg.local_iters;

    std::vector<ClientState> clients(cfg.num_clients);
    for (std::size_t k = 0; k < cfg.num_clients; ++k) {
        ClientState& c = clients[k];
        c.id = k;
        c.shard = shards[k].samples;
        c.q_prompt = init.q_prompt;
        c.q_momentum = MomentumAverager(init.q_prompt, q_horizon, cfg.momentum_beta);
        c.adam_g = AdamState(block, cfg.learning_rate);
        c.adam_q = AdamState(block, cfg.learning_rate);
        c.adam_d.assign(m_count, AdamState(block, cfg.learning_rate));
        c.rng = base.child("client/" + std::to_string(k));
    }

    Mat g = init.g_prompt;
    std::vector<DomainPrompt> d_raw = init.d_prompts;
    std::vector<MomentumAverager> d_mom;
    d_mom.reserve(m_count);
    for (std::size_t m = 0; m < m_count; ++m) {
        d_mom.emplace_back(init.d_prompts[m].tokens, cfg.rounds, cfg.momentum_beta);
    }

    Rng server_rng = base.child("server/sampling");
    TrainingResult result;
    result.metrics.reserve(cfg.rounds);

    std::vector<DomainPrompt> d_download;
    for (std::size_t r = 0; r < cfg.rounds; ++r) {
        std::vector<std::size_t> ids =
            sample_clients(server_rng, cfg.num_clients, cfg.clients_per_round);

        const std::vector<DomainPrompt>* download = &d_raw;
        if (cfg.broadcast_momentum_dprompts) {
            d_download = d_raw;
            for (std::size_t m = 0; m < m_count; ++m) d_download[m].tokens = d_mom[m].average();
            download = &d_download;
        }

        std::vector<ClientUpdate> updates;
        updates.reserve(ids.size());
        RoundMetrics rm;
        rm.round = r;
        rm.touch_counts.assign(m_count, 0);
        double lg = 0.0, ld = 0.0, lq = 0.0;
        std::size_t iters = 0, q_ok = 0, q_all = 0;
        for (std::size_t id : ids) {
            auto [update, stats] =
                run_client(clients[id], g, *download, enc, vocab, init.dims, cfg, r);
            lg += stats.loss_g_sum;
            ld += stats.loss_d_sum;
            lq += stats.loss_q_sum;
            iters += stats.iters;
            q_ok += stats.query_correct;
            q_all += stats.query_total;
            for (std::size_t m = 0; m < m_count; ++m) {
                if (update.touched[m]) rm.touch_counts[m] += 1;
            }
            updates.push_back(std::move(update));
        }

        g = aggregate_gprompt(g, updates);
        d_raw = aggregate_dprompts(d_raw, updates);
        for (std::size_t m = 0; m < m_count; ++m) d_mom[m].update(d_raw[m].tokens, r + 1);

        if (iters > 0) {
            rm.mean_loss_g = lg / static_cast<double>(iters);
            rm.mean_loss_d = ld / static_cast<double>(iters);
            rm.mean_loss_q = lq / static_cast<double>(iters);
        }
        if (q_all > 0) {
            rm.query_accuracy = static_cast<double>(q_ok) / static_cast<double>(q_all);
        }
        result.metrics.push_back(std::move(rm));
        if (observer) observer(r, g, d_raw);
    }

    result.g_prompt = std::move(g);
    result.d_momentum = d_raw;  // domain ids; token bits replaced below
    for (std::size_t m = 0; m < m_count; ++m) {
        result.d_momentum[m].tokens = d_mom[m].average();
    }
    result.d_raw = std::move(d_raw);
    return result;
}

}  // namespace fedprompt

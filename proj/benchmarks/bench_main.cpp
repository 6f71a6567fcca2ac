// Microbenchmarks for the hot paths of one federated round: text encoding,
// the global objective, latent-domain matching, momentum folding, and a full
// client step at the default operating shape.

#include <benchmark/benchmark.h>

#include <vector>

#include "fedprompt/encoders.hpp"
#include "fedprompt/federation.hpp"
#include "fedprompt/objectives.hpp"
#include "fedprompt/prompts.hpp"
#include "fedprompt/rng.hpp"

namespace {

using namespace fedprompt;

// Default operating shape: 32-dim embeddings, 64-dim hidden, 16-dim features,
// 4 prompt rows, 5 classes, 3 source domains.
struct Workbench {
    Rng base{1234};
    TokenVocab vocab{32, 5, 4, base.child("vocab")};
    FrozenEncoders enc{32, 64, 16, 0.07, base.child("enc")};
    PromptDims dims{4, 32, 3, 5};
    PromptBank bank = init_prompt_bank(dims, {0, 1, 2}, vocab, base.child("bank"));

    std::vector<Sample> batch;

    Workbench() {
        Rng data = base.child("data");
        for (std::size_t i = 0; i < 16; ++i) {
            Sample s;
            s.x.resize(enc.feature_dim());
            for (double& v : s.x) v = data.gaussian();
            s.label = data.next_below(dims.num_classes);
            s.domain = data.next_below(dims.num_domains);
            batch.push_back(std::move(s));
        }
    }
};

Workbench& bench_world() {
    static Workbench w;
    return w;
}

void bm_encode_text(benchmark::State& state) {
    Workbench& w = bench_world();
    Mat seq = assemble_text_input(w.bank, PromptKind::global, 0, std::nullopt, w.vocab);
    for (auto _ : state) {
        benchmark::DoNotOptimize(w.enc.encode_text(seq));
    }
}
BENCHMARK(bm_encode_text);

void bm_global_loss_grad(benchmark::State& state) {
    Workbench& w = bench_world();
    for (auto _ : state) {
        benchmark::DoNotOptimize(loss_g_and_grad(w.bank, w.enc, w.vocab, w.batch));
    }
}
BENCHMARK(bm_global_loss_grad);

void bm_qprompt_match(benchmark::State& state) {
    Workbench& w = bench_world();
    Vec img = w.enc.encode_image(w.batch[0].x);
    for (auto _ : state) {
        benchmark::DoNotOptimize(qprompt_match(w.bank, w.enc, w.vocab, img));
    }
}
BENCHMARK(bm_qprompt_match);

void bm_momentum_update(benchmark::State& state) {
    Workbench& w = bench_world();
    Mat next = w.bank.g_prompt;
    for (double& v : next.data) v += 1e-3;
    for (auto _ : state) {
        state.PauseTiming();
        MomentumAverager avg(w.bank.g_prompt, 64, 0.2);
        state.ResumeTiming();
        for (std::size_t slot = 1; slot <= 64; ++slot) avg.update(next, slot);
        benchmark::DoNotOptimize(avg.average());
    }
}
BENCHMARK(bm_momentum_update);

void bm_client_round(benchmark::State& state) {
    Workbench& w = bench_world();
    FederationConfig cfg;
    cfg.num_clients = 1;
    cfg.clients_per_round = 1;
    cfg.rounds = 1;
    cfg.local_iters = 1;
    cfg.batch_size = 16;

    for (auto _ : state) {
        state.PauseTiming();
        ClientState client;
        client.id = 0;
        client.shard = w.batch;
        client.q_prompt = w.bank.q_prompt;
        client.q_momentum = MomentumAverager(w.bank.q_prompt, 64, cfg.momentum_beta);
        std::size_t block = w.dims.prompt_len * w.dims.embed_dim;
        client.adam_g = AdamState(block, cfg.learning_rate);
        client.adam_q = AdamState(block, cfg.learning_rate);
        client.adam_d.assign(w.dims.num_domains, AdamState(block, cfg.learning_rate));
        client.rng = w.base.child("bench_client");
        state.ResumeTiming();

        auto out = run_client(client, w.bank.g_prompt, w.bank.d_prompts, w.enc, w.vocab, w.dims,
                              cfg, 0);
        benchmark::DoNotOptimize(out);
    }
}
BENCHMARK(bm_client_round);

}  // namespace

BENCHMARK_MAIN();

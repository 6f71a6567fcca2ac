#pragma once

#include <functional>
#include <vector>

#include "fedprompt/common.hpp"
#include "fedprompt/datagen.hpp"
#include "fedprompt/encoders.hpp"
#include "fedprompt/numerics.hpp"
#include "fedprompt/objectives.hpp"
#include "fedprompt/prompts.hpp"
#include "fedprompt/rng.hpp"

namespace fedprompt {

struct FederationConfig {
    std::size_t num_clients = 20;       // K
    std::size_t clients_per_round = 5;  // H
    std::size_t rounds = 100;           // R
    std::size_t local_iters = 1;        // T
    std::size_t batch_size = 16;
    double lambda = 1.0;
    double momentum_beta = 0.2;
    double learning_rate = 5e-4;
    double tau_cont = 1.0;

    // Ablation switches (all off = full method).
    bool no_g_prompt = false;
    bool no_d_prompts = false;
    bool no_contrastive = false;
    bool static_query = false;
    bool no_kl = false;
    bool no_mse = false;
    bool use_domain_labels = false;

    // Interpretation switches for underspecified corners.
    bool qprompt_mse_all_classes = false;
    bool broadcast_momentum_dprompts = false;
};

/// Running weighted average over a fixed schedule of update slots. The weight
/// of slot i is the symmetric beta density at the slot's relative position,
/// so early and late updates dominate for shape < 1. Slot 0 is consumed by
/// the initialization value at construction.
class MomentumAverager {
public:
    MomentumAverager() = default;
    MomentumAverager(Mat init, std::size_t horizon, double beta);

    /// Folds in the value for slot i (1 <= i <= horizon). Performed in delta
    /// form, so an input bit-equal to the current average leaves it bit-equal.
    void update(const Mat& v_new, std::size_t slot);

    const Mat& average() const { return avg_; }
    double weight_sum() const { return weight_sum_; }
    std::size_t horizon() const { return horizon_; }

    /// Weight assigned to slot i under this schedule.
    double slot_weight(std::size_t slot) const;

private:
    Mat avg_;
    double weight_sum_ = 0.0;
    std::size_t horizon_ = 0;
    double beta_ = 1.0;
};

/// Everything a client keeps between rounds: its shard, the never-uploaded
/// query prompt with its momentum copy, and per-block Adam accumulators.
struct ClientState {
    std::size_t id = 0;
    std::vector<Sample> shard;
    Mat q_prompt;
    MomentumAverager q_momentum;
    std::size_t q_slot = 0;  // cumulative local iterations consumed
    AdamState adam_g;
    AdamState adam_q;
    std::vector<AdamState> adam_d;
    Rng rng{0};
    std::vector<std::size_t> order;  // shuffled shard traversal
    std::size_t cursor = 0;
};

/// What a client uploads after its local round. Deliberately excludes the
/// query prompt; tests assert its serialized form carries no such bytes.
struct ClientUpdate {
    std::size_t client_id = 0;
    std::size_t round = 0;
    Mat g_prompt;
    std::vector<DomainPrompt> d_prompts;
    std::vector<bool> touched;  // slot m received >= 1 routed sample
    std::size_t n_samples = 0;  // |D_i|
};

/// Wire form of an update (JSON). Used by the schema-level protocol checks.
std::string serialize_update(const ClientUpdate& update);

/// Per-round training diagnostics from one client (never leaves the metrics
/// path; not part of the protocol payload).
struct ClientRoundStats {
    double loss_g_sum = 0.0;
    double loss_d_sum = 0.0;  // lambda-weighted sample mean of domain terms
    double loss_q_sum = 0.0;
    std::size_t iters = 0;
    std::size_t query_correct = 0;
    std::size_t query_total = 0;
    std::vector<std::size_t> touch_counts;  // routed samples per slot
};

/// H distinct ids drawn uniformly without replacement, sorted ascending.
std::vector<std::size_t> sample_clients(Rng& rng, std::size_t k, std::size_t h);

/// One client round: T local iterations of query-prompt self-training,
/// latent-domain routing, and the combined global/domain objective step.
/// Mutates the persistent client state; returns the upload and diagnostics.
std::pair<ClientUpdate, ClientRoundStats> run_client(
    ClientState& client, const Mat& g_in, const std::vector<DomainPrompt>& d_in,
    const FrozenEncoders& enc, const TokenVocab& vocab, const PromptDims& dims,
    const FederationConfig& cfg, std::size_t round);

/// Sample-count-weighted average of uploaded global prompts, accumulated in
/// ascending client-id order.
Mat aggregate_gprompt(const Mat& prev, const std::vector<ClientUpdate>& updates);

enum class TouchRule {
    structural,  // use the uploaded touched flags
    numeric      // infer touched from any element differing from prev
};

/// Per-domain weighted-delta aggregation restricted to touching clients; a
/// domain no client touched keeps its previous bits.
std::vector<DomainPrompt> aggregate_dprompts(const std::vector<DomainPrompt>& prev,
                                             const std::vector<ClientUpdate>& updates,
                                             TouchRule rule = TouchRule::structural);

struct RoundMetrics {
    std::size_t round = 0;
    double mean_loss_g = 0.0;
    double mean_loss_d = 0.0;
    double mean_loss_q = 0.0;
    double query_accuracy = 0.0;            // train-mode routing vs latent labels
    std::vector<std::size_t> touch_counts;  // clients touching each slot
};

struct TrainingResult {
    Mat g_prompt;
    std::vector<DomainPrompt> d_raw;       // final plain aggregates
    std::vector<DomainPrompt> d_momentum;  // beta-momentum averages, for inference
    std::vector<RoundMetrics> metrics;
};

/// Called after each round's aggregation with the canonical server prompts.
using RoundObserver =
    std::function<void(std::size_t round, const Mat& g, const std::vector<DomainPrompt>& d)>;

/// Full federated loop: R rounds of client sampling, local training, global
/// averaging, domain-wise delta aggregation, and momentum updates.
TrainingResult run_training(const FederationConfig& cfg, const PromptBank& init,
                            const FrozenEncoders& enc, const TokenVocab& vocab,
                            const std::vector<ClientShard>& shards, const Rng& base,
                            const RoundObserver& observer = nullptr);

}  // namespace fedprompt

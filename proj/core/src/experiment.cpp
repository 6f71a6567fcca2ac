#include "fedprompt/experiment.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

#include "fedprompt/inference.hpp"
#include "fedprompt/jsonio.hpp"

namespace fedprompt {

namespace {

namespace fs = std::filesystem;

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    out << text;
    if (!out) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

std::string metrics_lines(const std::vector<RoundMetrics>& metrics) {
    std::ostringstream os;
    for (const RoundMetrics& rm : metrics) {
        os << "{\"round\": " << rm.round << ", \"loss_g\": " << format_double(rm.mean_loss_g)
           << ", \"loss_d\": " << format_double(rm.mean_loss_d)
           << ", \"loss_q\": " << format_double(rm.mean_loss_q)
           << ", \"query_acc\": " << format_double(rm.query_accuracy) << ", \"touches\": [";
        for (std::size_t m = 0; m < rm.touch_counts.size(); ++m) {
            if (m > 0) os << ", ";
            os << rm.touch_counts[m];
        }
        os << "]}\n";
    }
    return os.str();
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir) {
    validate(cfg);
    if (!cfg.target_domain.has_value()) {
        throw ConfigError("run_experiment needs a concrete target_domain (use the sweep mode "
                          "for \"sweep\")");
    }
    auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(out_dir);

    Rng base(cfg.seed);
    TokenVocab vocab(cfg.embed_dim, cfg.num_classes, cfg.num_domains, base);
    FrozenEncoders enc(cfg.embed_dim, cfg.hidden_dim, cfg.feature_dim, cfg.tau, base);
    DomainSpec spec = make_domain_spec(data_config(cfg), vocab, enc, cfg.prompt_len);
    std::vector<DomainDataset> datasets = generate(spec, base);
    LeaveOneOut loo = leave_one_out(datasets, *cfg.target_domain);
    std::vector<ClientShard> shards =
        partition(datasets, loo.source_ids, cfg.num_clients, partition_mode_of(cfg), base);

    PromptDims dims{cfg.prompt_len, cfg.embed_dim, loo.source_ids.size(), cfg.num_classes};
    PromptBank bank = init_prompt_bank(dims, loo.source_ids, vocab, base);

    TrainingResult trained =
        run_training(federation_config(cfg), bank, enc, vocab, shards, base);
    auto t_train = std::chrono::steady_clock::now();

    double global_weight = cfg.no_g_prompt ? 0.0 : 1.0;
    EnsembleCache cache = build_ensemble_cache(trained.g_prompt, trained.d_momentum, dims, enc,
                                               vocab, global_weight);

    RunResult res;
    res.target_domain = *cfg.target_domain;
    res.n_test = loo.target_test.size();
    res.run_dir = out_dir;
    res.accuracy.ensemble = evaluate(loo.target_test, [&](const Vec& x) {
        return predict_ablation(x, cache, enc, PredictMode::ensemble);
    });
    res.accuracy.g_only = evaluate(loo.target_test, [&](const Vec& x) {
        return predict_ablation(x, cache, enc, PredictMode::g_only);
    });
    res.accuracy.top_domain_only = evaluate(loo.target_test, [&](const Vec& x) {
        return predict_ablation(x, cache, enc, PredictMode::top_domain_only);
    });

    res.mean_domain_weights.assign(loo.source_ids.size(), 0.0);
    for (const Sample& s : loo.target_test) {
        Vec img = enc.encode_image(s.x);
        EnsembleWeights w = ensemble_weights(img, cache);
        for (std::size_t m = 0; m < w.per_domain.size(); ++m) {
            res.mean_domain_weights[m] += w.per_domain[m] / static_cast<double>(res.n_test);
        }
    }

    double q_sum = 0.0;
    std::size_t q_rounds = 0;
    for (const RoundMetrics& rm : trained.metrics) {
        q_sum += rm.query_accuracy;
        q_rounds += 1;
    }
    res.mean_query_accuracy = q_rounds > 0 ? q_sum / static_cast<double>(q_rounds) : 0.0;

    if (cfg.no_d_prompts) {
        res.headline_mode = "g_only";
        res.headline_accuracy = res.accuracy.g_only;
    } else if (cfg.no_ensemble) {
        res.headline_mode = "top_domain_only";
        res.headline_accuracy = res.accuracy.top_domain_only;
    } else {
        res.headline_mode = "ensemble";
        res.headline_accuracy = res.accuracy.ensemble;
    }

    // Run directory artifacts. Wall times go to their own file so everything
    // else is byte-stable for identical configs.
    save_config(out_dir / "config.json", cfg);
    write_text(out_dir / "metrics.jsonl", metrics_lines(trained.metrics));

    Checkpoint ckpt;
    ckpt.bank.dims = dims;
    ckpt.bank.g_prompt = trained.g_prompt;
    ckpt.bank.d_prompts = trained.d_momentum;
    ckpt.bank.q_prompt = bank.q_prompt;  // query prompts never reach the server
    ckpt.seed = cfg.seed;
    ckpt.round = cfg.rounds;
    save_checkpoint(out_dir / "checkpoint.json", ckpt);

    std::ostringstream ev;
    ev << "{\n  \"target_domain\": " << res.target_domain << ",\n  \"n_samples\": " << res.n_test
       << ",\n  \"accuracy\": {\"ensemble\": " << format_double(res.accuracy.ensemble)
       << ", \"g_only\": " << format_double(res.accuracy.g_only)
       << ", \"top_domain_only\": " << format_double(res.accuracy.top_domain_only)
       << "},\n  \"headline_mode\": \"" << res.headline_mode
       << "\",\n  \"headline_accuracy\": " << format_double(res.headline_accuracy)
       << ",\n  \"mean_domain_weights\": ";
    write_double_array(ev, res.mean_domain_weights);
    ev << ",\n  \"mean_query_accuracy_train\": " << format_double(res.mean_query_accuracy)
       << "\n}\n";
    write_text(out_dir / "evaluation.json", ev.str());

    auto t1 = std::chrono::steady_clock::now();
    auto ms = [](auto a, auto b) {
        return std::chrono::duration_cast<std::chrono::milliseconds>(b - a).count();
    };
    std::ostringstream tm;
    tm << "train_ms " << ms(t0, t_train) << "\n"
       << "total_ms " << ms(t0, t1) << "\n";
    write_text(out_dir / "timings.txt", tm.str());
    return res;
}

SweepResult run_sweep(const ExperimentConfig& cfg, const fs::path& out_dir) {
    validate(cfg);
    fs::create_directories(out_dir);
    SweepResult sweep;
    for (std::size_t target = 0; target < cfg.num_domains; ++target) {
        ExperimentConfig sub = cfg;
        sub.target_domain = target;
        sweep.runs.push_back(
            run_experiment(sub, out_dir / ("target_" + std::to_string(target))));
    }
    const double n = static_cast<double>(sweep.runs.size());
    for (const RunResult& r : sweep.runs) {
        sweep.mean_accuracy.ensemble += r.accuracy.ensemble / n;
        sweep.mean_accuracy.g_only += r.accuracy.g_only / n;
        sweep.mean_accuracy.top_domain_only += r.accuracy.top_domain_only / n;
        sweep.mean_query_accuracy += r.mean_query_accuracy / n;
    }

    std::ostringstream os;
    os << "{\n  \"targets\": [\n";
    for (std::size_t i = 0; i < sweep.runs.size(); ++i) {
        const RunResult& r = sweep.runs[i];
        os << "    {\"target_domain\": " << r.target_domain
           << ", \"ensemble\": " << format_double(r.accuracy.ensemble)
           << ", \"g_only\": " << format_double(r.accuracy.g_only)
           << ", \"top_domain_only\": " << format_double(r.accuracy.top_domain_only)
           << ", \"query_acc\": " << format_double(r.mean_query_accuracy) << "}"
           << (i + 1 < sweep.runs.size() ? "," : "") << "\n";
    }
    os << "  ],\n  \"mean\": {\"ensemble\": " << format_double(sweep.mean_accuracy.ensemble)
       << ", \"g_only\": " << format_double(sweep.mean_accuracy.g_only)
       << ", \"top_domain_only\": " << format_double(sweep.mean_accuracy.top_domain_only)
       << ", \"query_acc\": " << format_double(sweep.mean_query_accuracy) << "}\n}\n";
    write_text(out_dir / "summary.json", os.str());
    return sweep;
}

}  // namespace fedprompt

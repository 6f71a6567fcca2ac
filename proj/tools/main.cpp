#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "fedprompt/experiment.hpp"
#include "fedprompt/gradcheck.hpp"

namespace {

int do_run(const std::string& config_path, const std::string& out_dir) {
    fedprompt::ExperimentConfig cfg = fedprompt::load_config(config_path);
    fedprompt::RunResult res = fedprompt::run_experiment(cfg, out_dir);
    std::printf("target domain %zu (%zu test samples)\n", res.target_domain, res.n_test);
    std::printf("  ensemble        %.4f\n", res.accuracy.ensemble);
    std::printf("  g_only          %.4f\n", res.accuracy.g_only);
    std::printf("  top_domain_only %.4f\n", res.accuracy.top_domain_only);
    std::printf("  train query acc %.4f\n", res.mean_query_accuracy);
    std::printf("run directory: %s\n", res.run_dir.string().c_str());
    return 0;
}

int do_sweep(const std::string& config_path, const std::string& out_dir) {
    fedprompt::ExperimentConfig cfg = fedprompt::load_config(config_path);
    fedprompt::SweepResult sweep = fedprompt::run_sweep(cfg, out_dir);
    std::printf("%-8s %-10s %-10s %-16s %s\n", "target", "ensemble", "g_only", "top_domain_only",
                "query_acc");
    for (const fedprompt::RunResult& r : sweep.runs) {
        std::printf("%-8zu %-10.4f %-10.4f %-16.4f %.4f\n", r.target_domain, r.accuracy.ensemble,
                    r.accuracy.g_only, r.accuracy.top_domain_only, r.mean_query_accuracy);
    }
    std::printf("%-8s %-10.4f %-10.4f %-16.4f %.4f\n", "mean", sweep.mean_accuracy.ensemble,
                sweep.mean_accuracy.g_only, sweep.mean_accuracy.top_domain_only,
                sweep.mean_query_accuracy);
    std::printf("sweep directory: %s\n", out_dir.c_str());
    return 0;
}

int do_gradcheck(std::uint64_t seed, std::size_t configs, double tolerance, double step,
                 double perturb) {
    fedprompt::GradcheckReport report =
        fedprompt::run_gradcheck(seed, configs, step, tolerance, perturb);
    std::fputs(report.summary().c_str(), stdout);
    if (!report.pass()) {
        throw fedprompt::VerificationError("gradient check exceeded tolerance");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated prompt-tuning simulator for domain generalization"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "run_out";
    CLI::App* run = app.add_subcommand("run", "Train and evaluate one target domain");
    run->add_option("--config", config_path, "Experiment config (JSON)")->required();
    run->add_option("--out", out_dir, "Output directory");

    std::string sweep_config;
    std::string sweep_out = "sweep_out";
    CLI::App* sweep = app.add_subcommand("sweep", "Hold out every domain in turn");
    sweep->add_option("--config", sweep_config, "Experiment config (JSON)")->required();
    sweep->add_option("--out", sweep_out, "Output directory");

    std::uint64_t gc_seed = 7;
    std::size_t gc_configs = 20;
    double gc_tol = 1e-4;
    double gc_step = 1e-5;
    double gc_perturb = 0.0;
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "Verify analytic gradients against finite differences");
    gradcheck->add_option("--seed", gc_seed, "Base seed");
    gradcheck->add_option("--configs", gc_configs, "Number of random configurations");
    gradcheck->add_option("--tolerance", gc_tol, "Max allowed relative error");
    gradcheck->add_option("--step", gc_step, "Finite-difference step");
    gradcheck->add_option("--perturb", gc_perturb, "Corrupt one gradient component (test hook)")
        ->group("");  // hidden

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (run->parsed()) return do_run(config_path, out_dir);
        if (sweep->parsed()) return do_sweep(sweep_config, sweep_out);
        return do_gradcheck(gc_seed, gc_configs, gc_tol, gc_step, gc_perturb);
    } catch (const fedprompt::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const fedprompt::VerificationError& e) {
        std::fprintf(stderr, "verification failure: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}

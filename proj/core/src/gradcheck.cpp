#include "fedprompt/gradcheck.hpp"

#include <algorithm>
#include <sstream>

#include "fedprompt/numerics.hpp"
#include "fedprompt/objectives.hpp"

namespace fedprompt {

namespace {

struct Instance {
    TokenVocab vocab;
    FrozenEncoders enc;
    PromptBank bank;
    Mat momentum_q;
    std::vector<Sample> batch;
    std::vector<std::size_t> routing;
    double tau_cont = 1.0;
    double lambda = 1.0;
};

Instance make_instance(const Rng& base) {
    Rng dice = base.child("dims");
    std::size_t d = 6 + dice.next_below(6);
    std::size_t h = 8 + dice.next_below(8);
    std::size_t p = 4 + dice.next_below(5);
    std::size_t L = 2 + dice.next_below(3);
    std::size_t C = 2 + dice.next_below(3);
    std::size_t M = 1 + dice.next_below(3);
    double tau = 0.1 + 0.9 * dice.next_double();

    Instance inst{
        TokenVocab(d, C, M, base.child("vocab_root")),
        FrozenEncoders(d, h, p, tau, base.child("enc_root")),
        {},
        {},
        {},
        {},
        0.5 + dice.next_double(),
        0.25 + 1.5 * dice.next_double(),
    };
    std::vector<std::size_t> ids(M);
    for (std::size_t m = 0; m < M; ++m) ids[m] = m;
    inst.bank = init_prompt_bank({L, d, M, C}, ids, inst.vocab, base.child("bank"));

    Rng noise = base.child("momentum_noise");
    inst.momentum_q = inst.bank.q_prompt;
    for (double& v : inst.momentum_q.data) v += 0.1 * noise.gaussian();

    Rng data = base.child("data");
    std::size_t b = 3 + data.next_below(4);
    inst.batch.resize(b);
    inst.routing.resize(b);
    for (std::size_t s = 0; s < b; ++s) {
        inst.batch[s].x.resize(p);
        for (double& v : inst.batch[s].x) v = data.gaussian();
        inst.batch[s].label = data.next_below(C);
        inst.batch[s].domain = data.next_below(M);
        inst.routing[s] = data.next_below(M);
    }
    return inst;
}

}  // namespace

std::string GradcheckReport::summary() const {
    std::ostringstream os;
    os << "gradient check over " << configs << " random configurations (tolerance "
       << format_double(tolerance) << ")\n";
    os << "  global CE          max rel err " << format_double(max_err_g) << "\n";
    os << "  domain CE+contrast max rel err " << format_double(max_err_d) << "\n";
    os << "  query MSE+KL       max rel err " << format_double(max_err_q) << "\n";
    os << "  combined objective max rel err " << format_double(max_err_combined) << "\n";
    os << (pass() ? "PASS" : "FAIL") << "\n";
    return os.str();
}

GradcheckReport run_gradcheck(std::uint64_t seed, std::size_t num_configs, double h,
                              double tolerance, double perturb) {
    GradcheckReport report;
    report.configs = num_configs;
    report.tolerance = tolerance;
    Rng root(seed);

    for (std::size_t i = 0; i < num_configs; ++i) {
        Instance inst = make_instance(root.child("cfg/" + std::to_string(i)));
        const std::size_t M = inst.bank.d_prompts.size();
        const std::size_t B = inst.batch.size();

        {
            PromptGrad g = loss_g_and_grad(inst.bank, inst.enc, inst.vocab, inst.batch);
            Vec analytic = g.grad.data;
            if (perturb != 0.0) analytic[0] += perturb;
            auto f = [&](const Vec& v) {
                PromptBank bank = inst.bank;
                bank.g_prompt.data = v;
                return loss_g_and_grad(bank, inst.enc, inst.vocab, inst.batch).loss;
            };
            report.max_err_g = std::max(
                report.max_err_g, finite_diff_check(f, inst.bank.g_prompt.data, analytic, h));
        }

        {
            std::size_t m = inst.batch[0].domain % M;
            DomainLossGrad dl = loss_d_and_grad(inst.bank, inst.enc, inst.vocab, inst.batch, m,
                                                inst.tau_cont, true);
            auto f = [&](const Vec& v) {
                PromptBank bank = inst.bank;
                bank.d_prompts[m].tokens.data = v;
                return loss_d_and_grad(bank, inst.enc, inst.vocab, inst.batch, m, inst.tau_cont,
                                       true)
                    .total;
            };
            report.max_err_d =
                std::max(report.max_err_d,
                         finite_diff_check(f, inst.bank.d_prompts[m].tokens.data, dl.grad.data, h));
        }

        {
            QueryLossGrad q = loss_q_and_grad(inst.bank, inst.momentum_q, inst.enc, inst.vocab,
                                              inst.batch);
            auto f = [&](const Vec& v) {
                PromptBank bank = inst.bank;
                bank.q_prompt.data = v;
                return loss_q_and_grad(bank, inst.momentum_q, inst.enc, inst.vocab, inst.batch)
                    .total;
            };
            report.max_err_q = std::max(
                report.max_err_q, finite_diff_check(f, inst.bank.q_prompt.data, q.grad.data, h));
        }

        {
            LocalObjective lo = local_objective(inst.bank, inst.enc, inst.vocab, inst.batch,
                                                inst.lambda, inst.routing, inst.tau_cont, true);
            auto f_g = [&](const Vec& v) {
                PromptBank bank = inst.bank;
                bank.g_prompt.data = v;
                return local_objective(bank, inst.enc, inst.vocab, inst.batch, inst.lambda,
                                       inst.routing, inst.tau_cont, true)
                    .total;
            };
            report.max_err_combined =
                std::max(report.max_err_combined,
                         finite_diff_check(f_g, inst.bank.g_prompt.data, lo.g_grad.data, h));

            // Domain blocks are held constant for every other slot inside one
            // local step, so each slot's gradient is checked against its own
            // routed share of the objective.
            for (std::size_t m = 0; m < M; ++m) {
                if (lo.routed[m] == 0) continue;
                std::vector<Sample> routed;
                for (std::size_t s = 0; s < B; ++s) {
                    if (inst.routing[s] == m) routed.push_back(inst.batch[s]);
                }
                double share = inst.lambda * static_cast<double>(routed.size()) /
                               static_cast<double>(B);
                auto f_m = [&](const Vec& v) {
                    PromptBank bank = inst.bank;
                    bank.d_prompts[m].tokens.data = v;
                    return share * loss_d_and_grad(bank, inst.enc, inst.vocab, routed, m,
                                                   inst.tau_cont, true)
                                       .total;
                };
                report.max_err_combined = std::max(
                    report.max_err_combined,
                    finite_diff_check(f_m, inst.bank.d_prompts[m].tokens.data,
                                      lo.d_grads[m].data, h));
            }
        }
    }
    return report;
}

}  // namespace fedprompt

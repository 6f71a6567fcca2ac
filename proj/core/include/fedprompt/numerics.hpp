#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>

#include "fedprompt/common.hpp"

namespace fedprompt {

/// w x for row-major w.
Vec matvec(const Mat& w, std::span<const double> x);

/// w^T x for row-major w.
Vec matvec_transposed(const Mat& w, std::span<const double> x);

/// Solves A y = b for symmetric positive-definite A via Cholesky.
Vec solve_spd(const Mat& a, const Vec& b);

/// a.b / (|a||b|). Throws on shape mismatch or zero-norm input; never yields NaN.
double cosine_sim(std::span<const double> a, std::span<const double> b);

/// Softmax of scores/tau with max-subtraction. tau must be positive.
Vec softmax_temp(std::span<const double> scores, double tau);

/// -log probs[label]. probs[label] is floored at 1e-30; crossing the floor
/// increments the global clamp counter.
double cross_entropy(std::span<const double> probs, std::size_t label);

/// sum_i p_i log(p_i / q_i) with q floored at 1e-30 and 0*log(0) = 0.
double kl_div(std::span<const double> p, std::span<const double> q);

/// Mean of squared element differences.
double mse(std::span<const double> a, std::span<const double> b);

/// Number of probability-floor clamps since the last reset. Healthy runs
/// should report zero.
std::uint64_t clamp_count();
void reset_clamp_count();

/// Adam accumulators plus hyperparameters for one parameter block.
struct AdamState {
    Vec m;  // first moment
    Vec v;  // second moment
    std::int64_t step = 0;
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    AdamState(std::size_t n, double learning_rate)
        : m(n, 0.0), v(n, 0.0), lr(learning_rate) {}
};

/// In-place Adam update with bias correction. `block` names the parameter
/// block in error messages when a non-finite gradient shows up.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads,
               std::string_view block);

/// log Gamma(x) for x > 0 via the Lanczos approximation (g = 7, 9 terms).
double log_gamma(double x);

/// Symmetric beta density x^(b-1)(1-x)^(b-1) / Beta(b,b) on the open interval.
double beta_pdf(double x, double beta);

/// Max over coordinates of the relative gap between central differences of
/// `loss_fn` and the supplied analytic gradient. Purely diagnostic.
double finite_diff_check(const std::function<double(const Vec&)>& loss_fn, const Vec& params,
                         const Vec& analytic, double h);

}  // namespace fedprompt

#include "fedprompt/numerics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace fedprompt {

namespace {

constexpr double kProbFloor = 1e-30;

std::atomic<std::uint64_t> g_clamp_count{0};

void require_same_size(std::span<const double> a, std::span<const double> b, const char* op) {
    if (a.size() != b.size()) {
        throw std::runtime_error(std::string(op) + ": size mismatch " +
                                 std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
}

}  // namespace

void ensure_finite(std::span<const double> values, const std::string& context) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw std::runtime_error("non-finite value in " + context);
        }
    }
}

void ensure_finite(double value, const std::string& context) {
    if (!std::isfinite(value)) {
        throw std::runtime_error("non-finite value in " + context);
    }
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

Vec matvec(const Mat& w, std::span<const double> x) {
    if (x.size() != w.cols) {
        throw std::runtime_error("matvec: size mismatch");
    }
    Vec out(w.rows, 0.0);
    for (std::size_t i = 0; i < w.rows; ++i) {
        double acc = 0.0;
        const double* row = w.data.data() + i * w.cols;
        for (std::size_t j = 0; j < w.cols; ++j) acc += row[j] * x[j];
        out[i] = acc;
    }
    return out;
}

Vec matvec_transposed(const Mat& w, std::span<const double> x) {
    if (x.size() != w.rows) {
        throw std::runtime_error("matvec_transposed: size mismatch");
    }
    Vec out(w.cols, 0.0);
    for (std::size_t i = 0; i < w.rows; ++i) {
        const double* row = w.data.data() + i * w.cols;
        for (std::size_t j = 0; j < w.cols; ++j) out[j] += row[j] * x[i];
    }
    return out;
}

Vec solve_spd(const Mat& a, const Vec& b) {
    const std::size_t n = a.rows;
    if (a.cols != n || b.size() != n) {
        throw std::runtime_error("solve_spd: shape mismatch");
    }
    // Cholesky factor L with A = L L^T, then two triangular solves.
    Mat l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                if (s <= 0.0) {
                    throw std::runtime_error("solve_spd: matrix not positive definite");
                }
                l(i, j) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    Vec y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
        y[i] = s / l(i, i);
    }
    Vec x(n);
    for (std::size_t ii = n; ii-- > 0;) {
        double s = y[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
        x[ii] = s / l(ii, ii);
    }
    return x;
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
    require_same_size(a, b, "cosine_sim");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        throw std::runtime_error("cosine_sim: zero-norm input");
    }
    double c = dot / (std::sqrt(na) * std::sqrt(nb));
    // Shave off rounding excursions so downstream acos/comparison logic can
    // rely on the mathematical range.
    return std::clamp(c, -1.0, 1.0);
}

Vec softmax_temp(std::span<const double> scores, double tau) {
    if (tau <= 0.0) {
        throw ConfigError("softmax_temp: tau must be positive, got " + format_double(tau));
    }
    if (scores.empty()) {
        throw std::runtime_error("softmax_temp: empty score vector");
    }
    ensure_finite(scores, "softmax_temp scores");
    double hi = *std::max_element(scores.begin(), scores.end());
    Vec out(scores.size());
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = std::exp((scores[i] - hi) / tau);
        total += out[i];
    }
    for (double& p : out) p /= total;
    return out;
}

double cross_entropy(std::span<const double> probs, std::size_t label) {
    if (label >= probs.size()) {
        throw std::runtime_error("cross_entropy: label " + std::to_string(label) +
                                 " out of range for " + std::to_string(probs.size()) + " classes");
    }
    double p = probs[label];
    if (p < kProbFloor) {
        p = kProbFloor;
        g_clamp_count.fetch_add(1, std::memory_order_relaxed);
    }
    return -std::log(p);
}

double kl_div(std::span<const double> p, std::span<const double> q) {
    require_same_size(p, q, "kl_div");
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;  // 0 * log(0) contributes nothing
        double qi = q[i];
        if (qi < kProbFloor) {
            qi = kProbFloor;
            g_clamp_count.fetch_add(1, std::memory_order_relaxed);
        }
        total += p[i] * std::log(p[i] / qi);
    }
    return total;
}

double mse(std::span<const double> a, std::span<const double> b) {
    require_same_size(a, b, "mse");
    if (a.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        total += d * d;
    }
    return total / static_cast<double>(a.size());
}

std::uint64_t clamp_count() { return g_clamp_count.load(std::memory_order_relaxed); }

void reset_clamp_count() { g_clamp_count.store(0, std::memory_order_relaxed); }

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads,
               std::string_view block) {
    if (params.size() != grads.size() || params.size() != state.m.size() ||
        params.size() != state.v.size()) {
        throw std::runtime_error("adam_step: shape mismatch in block '" + std::string(block) + "'");
    }
    for (double g : grads) {
        if (!std::isfinite(g)) {
            throw std::runtime_error("adam_step: non-finite gradient in block '" +
                                     std::string(block) + "'");
        }
    }
    state.step += 1;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        double mhat = state.m[i] / bc1;
        double vhat = state.v[i] / bc2;
        params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
}

double log_gamma(double x) {
    if (!(x > 0.0)) {
        throw std::runtime_error("log_gamma: requires x > 0, got " + format_double(x));
    }
    // Lanczos approximation, g = 7, 9 coefficients.
    static constexpr double kCoef[9] = {
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    };
    if (x < 0.5) {
        // Reflection keeps the series in its accurate range.
        return std::log(std::numbers::pi / std::sin(std::numbers::pi * x)) - log_gamma(1.0 - x);
    }
    double z = x - 1.0;
    double acc = kCoef[0];
    for (int i = 1; i < 9; ++i) acc += kCoef[i] / (z + i);
    double t = z + 7.5;
    return 0.5 * std::log(2.0 * std::numbers::pi) + (z + 0.5) * std::log(t) - t + std::log(acc);
}

double beta_pdf(double x, double beta) {
    if (!(x > 0.0 && x < 1.0)) {
        throw std::runtime_error("beta_pdf: x must lie strictly inside (0,1), got " +
                                 format_double(x));
    }
    if (!(beta > 0.0)) {
        throw std::runtime_error("beta_pdf: shape must be positive, got " + format_double(beta));
    }
    double log_norm = 2.0 * log_gamma(beta) - log_gamma(2.0 * beta);
    return std::exp((beta - 1.0) * (std::log(x) + std::log1p(-x)) - log_norm);
}

double finite_diff_check(const std::function<double(const Vec&)>& loss_fn, const Vec& params,
                         const Vec& analytic, double h) {
    if (params.size() != analytic.size()) {
        throw std::runtime_error("finite_diff_check: gradient size mismatch");
    }
    double worst = 0.0;
    Vec probe = params;
    for (std::size_t i = 0; i < params.size(); ++i) {
        probe[i] = params[i] + h;
        double up = loss_fn(probe);
        probe[i] = params[i] - h;
        double down = loss_fn(probe);
        probe[i] = params[i];
        double fd = (up - down) / (2.0 * h);
        double rel = std::abs(fd - analytic[i]) / std::max(1e-8, std::abs(fd) + std::abs(analytic[i]));
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace fedprompt

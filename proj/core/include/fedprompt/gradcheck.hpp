#pragma once

#include <cstdint>
#include <string>

namespace fedprompt {

/// Outcome of the finite-difference sweep over the four gradient families:
/// global CE, per-domain CE + contrastive, query self-consistency, and the
/// combined weighted objective.
struct GradcheckReport {
    double max_err_g = 0.0;
    double max_err_d = 0.0;
    double max_err_q = 0.0;
    double max_err_combined = 0.0;
    std::size_t configs = 0;
    double tolerance = 1e-4;

    bool pass() const {
        return max_err_g < tolerance && max_err_d < tolerance && max_err_q < tolerance &&
               max_err_combined < tolerance;
    }
    std::string summary() const;
};

/// Compares every analytic gradient against central differences across
/// `num_configs` randomized small problem instances. `perturb`, when nonzero,
/// corrupts one analytic component -- a hook for verifying the check fails
/// when it should.
GradcheckReport run_gradcheck(std::uint64_t seed, std::size_t num_configs = 20, double h = 1e-5,
                              double tolerance = 1e-4, double perturb = 0.0);

}  // namespace fedprompt

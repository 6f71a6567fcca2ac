#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedprompt {

using Vec = std::vector<double>;

/// Dense row-major matrix of 64-bit floats. Shape is fixed at construction;
/// there is deliberately no resize API.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    bool operator==(const Mat& o) const = default;
};

/// One labeled example: raw image features, class label, and the vocabulary
/// id of the domain that generated it.
struct Sample {
    Vec x;
    std::size_t label = 0;
    std::size_t domain = 0;
};

/// Raised for malformed experiment configuration (CLI maps this to exit code 1).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Raised when a self-check (e.g. gradient verification) fails (exit code 3).
struct VerificationError : std::runtime_error {
    explicit VerificationError(const std::string& msg) : std::runtime_error(msg) {}
};

void ensure_finite(std::span<const double> values, const std::string& context);
void ensure_finite(double value, const std::string& context);

/// Formats a double with 17 significant digits so the decimal round-trips to
/// the identical bit pattern.
std::string format_double(double v);

}  // namespace fedprompt

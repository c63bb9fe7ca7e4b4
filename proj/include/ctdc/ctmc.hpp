#pragma once

// Finite-state continuous-time Markov chains: generator validation,
// uniformization, Poisson truncation and the action of exp(delta * Q) on a
// vector, optionally together with its parameter derivatives.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "ctdc/sparse.hpp"

namespace ctdc::ctmc {

/// Absolute row-sum tolerance for generators, scaled up for rows whose
/// entries exceed 1 in magnitude.
inline constexpr double kRowSumTolerance = 1e-12;

/// Above this value of eta * delta, exp(-eta * delta) underflows too far for
/// the plain uniformization sum to be trusted.
inline constexpr double kMaxPoissonRate = 700.0;

/// A validated intensity (generator) matrix: square, nonnegative
/// off-diagonals, nonpositive diagonal, zero row sums.
class IntensityMatrix {
public:
    IntensityMatrix() = default;

    const sparse::CsrMatrix& matrix() const { return q_; }
    std::size_t size() const { return q_.rows(); }
    /// max_k |q_kk|
    double max_exit_rate() const { return max_exit_rate_; }
    /// |q_kk| for every state.
    std::vector<double> exit_rates() const;

private:
    friend IntensityMatrix validate_generator(sparse::CsrMatrix q);
    explicit IntensityMatrix(sparse::CsrMatrix q, double max_exit)
        : q_(std::move(q)), max_exit_rate_(max_exit) {}

    sparse::CsrMatrix q_;
    double max_exit_rate_ = 0.0;
};

IntensityMatrix validate_generator(sparse::CsrMatrix q);

struct UniformizedChain {
    double eta = 0.0;
    sparse::CsrMatrix sigma;  // I + Q / eta, full diagonal stored
};

/// max_k |q_kk| plus a relative pad of 1e-8 * max(1, max_k |q_kk|).
double default_uniform_rate(const IntensityMatrix& q);

/// Throws when `eta` is below max_k |q_kk|.
UniformizedChain uniformize(const IntensityMatrix& q, std::optional<double> eta = std::nullopt);

/// Smallest J with 1 - PoissonCDF(J; rate) < eps. Requires rate <= 700.
std::size_t truncation_point(double rate, double eps);

/// Reusable uniformization kernel for a fixed (Q, delta, eps): holds
/// eta * delta * Sigma = delta * Q + eta * delta * I and the truncation point.
class Uniformization {
public:
    Uniformization(const IntensityMatrix& q, double delta, double eps,
                   std::optional<double> eta = std::nullopt);

    double eta() const { return eta_; }
    double eta_delta() const { return eta_ * delta_; }
    std::size_t terms() const { return terms_; }
    std::size_t size() const { return scaled_sigma_.rows(); }

    /// exp(delta * Q) v
    std::vector<double> apply(std::span<const double> v) const;

    /// exp(delta * Q)^T p, i.e. the distribution p' exp(delta * Q) after
    /// delta time units. For a probability vector the lost mass is <= eps.
    std::vector<double> apply_transpose(std::span<const double> p) const;

    /// exp(delta * Q) v and d/dalpha exp(delta * Q) v for each dQ/dalpha.
    /// `mu` is produced by exactly the arithmetic of apply().
    void apply_with_derivatives(std::span<const sparse::CsrMatrix> dq, std::span<const double> v,
                                std::vector<double>& mu,
                                std::vector<std::vector<double>>& mu_alpha) const;

private:
    double delta_;
    double eta_;
    std::size_t terms_;
    sparse::CsrMatrix scaled_sigma_;
};

std::vector<double> expmv(const IntensityMatrix& q, double delta, std::span<const double> v,
                          double eps, std::optional<double> eta = std::nullopt);

/// p' exp(delta * Q) as a column vector, through the stored transpose.
std::vector<double> propagate(const IntensityMatrix& q, double delta, std::span<const double> p, double eps,
                              std::optional<double> eta = std::nullopt);

struct ExpmvdResult {
    std::vector<double> mu;
    std::vector<std::vector<double>> mu_alpha;  // one vector per parameter
};

ExpmvdResult expmvd(const IntensityMatrix& q, std::span<const sparse::CsrMatrix> dq, double delta,
                    std::span<const double> v, double eps, std::optional<double> eta = std::nullopt);

/// Dense K x K row-major matrix.
struct DenseMatrix {
    std::size_t n = 0;
    std::vector<double> data;

    double operator()(std::size_t r, std::size_t c) const { return data[r * n + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data[r * n + c]; }
};

inline constexpr std::size_t kDenseOracleMaxStates = 200;

/// exp(delta * Q) by scaling and squaring of a truncated Taylor series in
/// dense arithmetic. Reference only; K must not exceed kDenseOracleMaxStates.
DenseMatrix dense_expm_oracle(const IntensityMatrix& q, double delta);

}  // namespace ctdc::ctmc

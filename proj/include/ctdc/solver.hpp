#pragma once

// Value functions for fixed beliefs about rivals: the Bellman optimality
// operator and value iteration, the uniform (discrete-time style)
// representation V = U(sigma) + beta_bar Sigma(sigma) V, policy evaluation,
// Newton-Kantorovich and relative value iteration.

#include <cstddef>
#include <span>
#include <vector>

#include "ctdc/model.hpp"
#include "ctdc/sparse.hpp"

namespace ctdc::solver {

struct ConvergenceReport {
    std::size_t iterations = 0;
    double final_residual = 0.0;
    std::vector<double> residuals;  // one entry per iteration
    bool converged = false;
};

struct SolveResult {
    std::vector<double> value;
    ConvergenceReport report;
};

/// eta_bar = sum_m lambda_m + max_k sum_{l!=k} q0_kl, eta_low likewise with min_k.
struct RateBounds {
    double eta_bar = 0.0;
    double eta_low = 0.0;
};

RateBounds rate_bounds(const model::GameSpec& spec);

/// eta_bar / (rho_i + eta_low): the sup-norm modulus of the Bellman operator.
/// Can be >= 1 when nature's exit rates vary a lot across states.
double bellman_modulus(const model::GameSpec& spec, std::size_t player);

/// eta_bar / (rho_i + eta_bar) < 1.
double uniform_modulus(const model::GameSpec& spec, std::size_t player);

/// One application of the Bellman optimality operator for `player`. Only the
/// rivals' entries of `beliefs` are read.
std::vector<double> bellman_apply(const model::GameSpec& spec, const model::CcpProfile& beliefs,
                                  std::size_t player, std::span<const double> v);

/// The same fixed point written with the common rate eta_bar:
/// [u + lambda_i Emax(V) + (eta_bar I + Q_{-i} - lambda_i I) V] / (rho_i + eta_bar).
std::vector<double> uniform_bellman_apply(const model::GameSpec& spec, const model::CcpProfile& beliefs,
                                          std::size_t player, std::span<const double> v);

struct IterationOptions {
    double tol = 1e-10;
    std::size_t max_iterations = 1'000'000;
};

/// Iterates bellman_apply until the successive change is at most
/// tol * (1 - b) / b, b the Bellman modulus (uniform modulus when the former
/// is not below one), so that the distance to the fixed point is at most tol.
SolveResult value_iterate(const model::GameSpec& spec, const model::CcpProfile& beliefs,
                          std::size_t player, std::span<const double> v0,
                          const IterationOptions& options = {});

struct UniformRepresentation {
    std::vector<double> u_eff;  // U_i(sigma)
    double beta_bar = 0.0;
    sparse::CsrMatrix sigma_matrix;  // I + Q(sigma) / eta_bar, row-stochastic
    double eta_bar = 0.0;
};

/// Requires every CCP of `player` strictly inside (0, 1).
UniformRepresentation uniform_representation(const model::GameSpec& spec, const model::CcpProfile& sigma,
                                             std::size_t player);

/// C_i(sigma)_k = sum_j sigma_ijk (psi_ijk + e_ijk(sigma)).
std::vector<double> expected_choice_payoff(const model::GameSpec& spec, const model::CcpProfile& sigma,
                                           std::size_t player);

enum class PolicyEvaluation { iterative, direct };

/// Iterative: V <- U + beta_bar Sigma V from zero, stopped like value_iterate
/// with modulus beta_bar. Direct: sparse LU solve of (I - beta_bar Sigma) V = U.
SolveResult policy_evaluate(const UniformRepresentation& rep, PolicyEvaluation method,
                            const IterationOptions& options = {});

struct NewtonOptions {
    double tol = 1e-10;
    std::size_t max_iterations = 100;
    std::size_t warm_start_sweeps = 0;  // value-iteration sweeps before the first Newton step
};

/// Newton-Kantorovich on (I - T)V = 0 for the uniform optimality operator,
/// whose derivative at V is beta_bar Sigma(sigma(V)). Residuals are
/// ||V - T V||_inf, one per evaluation; stops once a residual is <= tol.
/// Throws ErrorCode::numeric after three consecutive residual increases.
SolveResult newton_kantorovich(const model::GameSpec& spec, const model::CcpProfile& beliefs,
                               std::size_t player, std::span<const double> v0,
                               const NewtonOptions& options = {});

/// Relative value iteration anchored at state 0: W <- T W - (T W)_0 1 for the
/// policy operator T V = U + beta_bar Sigma V. Residuals record the span of
/// successive differences; stops when their sup-norm is <= tol and returns
/// V = W + (T W)_0 / (1 - beta_bar), which then satisfies ||V - T V|| <= tol.
/// Assumes Sigma is ergodic; this is not checked.
SolveResult relative_value_iterate(const UniformRepresentation& rep, std::span<const double> v0,
                                   const IterationOptions& options = {});

/// Best-response CCPs of `player` at V as a J x K block (action-major).
std::vector<double> ccp_from_value(const model::GameSpec& spec, std::size_t player, std::span<const double> v);

/// `beliefs` with player's block replaced by ccp_from_value(spec, player, v).
model::CcpProfile best_response(const model::GameSpec& spec, const model::CcpProfile& beliefs,
                                std::size_t player, std::span<const double> v);

double sup_norm(std::span<const double> x);
double span_seminorm(std::span<const double> x);

}  // namespace ctdc::solver

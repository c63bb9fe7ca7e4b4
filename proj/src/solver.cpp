#include "ctdc/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include "ctdc/ctmc.hpp"
#include "ctdc/error.hpp"

namespace ctdc::solver {

using model::CcpProfile;
using model::GameSpec;

namespace {

void check_inputs(const GameSpec& spec, const CcpProfile& beliefs, std::size_t player, std::size_t v_size) {
    require(player < spec.n_players, ErrorCode::invalid_argument, "player index out of range");
    require(v_size == spec.n_states, ErrorCode::dimension_mismatch, "value function has the wrong length");
    require(beliefs.n_players() == spec.n_players && beliefs.n_actions() == spec.n_actions &&
                beliefs.n_states() == spec.n_states,
            ErrorCode::dimension_mismatch, "beliefs do not match the game dimensions");
}

void check_finite(std::span<const double> v, const char* where) {
    for (double x : v)
        require(std::isfinite(x), ErrorCode::numeric, std::string(where) + ": non-finite value");
}

std::vector<double> nature_exit_rates(const GameSpec& spec) {
    const auto& q0 = spec.nature.matrix();
    const auto rp = q0.row_ptr();
    const auto ci = q0.col_idx();
    const auto qv = q0.values();
    std::vector<double> out(spec.n_states, 0.0);
    for (std::size_t k = 0; k < spec.n_states; ++k)
        for (auto p = rp[k]; p < rp[k + 1]; ++p)
            if (ci[p] != k) out[k] += qv[p];
    return out;
}

// Terms of the value recursion that do not involve the player's own choice:
// inflow sum_{l!=k} q0_kl V_l + sum_{m!=i} lambda_m sum_j sigma_mjk V_l(m,j,k),
// and the matching total rate.
struct OtherFlows {
    std::vector<double> inflow;
    std::vector<double> rate;
};

OtherFlows other_flows(const GameSpec& spec, const CcpProfile& beliefs, std::size_t player,
                       std::span<const double> v) {
    const std::size_t K = spec.n_states;
    OtherFlows f{std::vector<double>(K, 0.0), std::vector<double>(K, 0.0)};
    const auto& q0 = spec.nature.matrix();
    const auto rp = q0.row_ptr();
    const auto ci = q0.col_idx();
    const auto qv = q0.values();
    for (std::size_t k = 0; k < K; ++k) {
        for (auto p = rp[k]; p < rp[k + 1]; ++p) {
            if (ci[p] == k) continue;
            f.inflow[k] += qv[p] * v[ci[p]];
            f.rate[k] += qv[p];
        }
        for (std::size_t m = 0; m < spec.n_players; ++m) {
            if (m == player) continue;
            double expected = 0.0;
            for (std::size_t j = 0; j < spec.n_actions; ++j)
                expected += beliefs(m, j, k) * v[spec.next_state(m, j, k)];
            f.inflow[k] += spec.lambda[m] * expected;
            f.rate[k] += spec.lambda[m];
        }
    }
    return f;
}

double state_emax(const GameSpec& spec, std::size_t player, std::size_t k, std::span<const double> v,
                  std::vector<double>& x) {
    for (std::size_t j = 0; j < spec.n_actions; ++j)
        x[j] = spec.psi(player, j, k) + v[spec.next_state(player, j, k)];
    return model::emax(spec.shock, x);
}

double stopping_threshold(double tol, double modulus) {
    return modulus <= 0.0 ? tol : tol * (1.0 - modulus) / modulus;
}

Eigen::SparseMatrix<double> identity_minus_scaled(const sparse::CsrMatrix& s, double beta) {
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(s.nnz() + s.rows());
    const auto rp = s.row_ptr();
    const auto ci = s.col_idx();
    const auto sv = s.values();
    for (std::size_t r = 0; r < s.rows(); ++r) {
        trips.emplace_back(static_cast<int>(r), static_cast<int>(r), 1.0);
        for (auto p = rp[r]; p < rp[r + 1]; ++p)
            trips.emplace_back(static_cast<int>(r), static_cast<int>(ci[p]), -beta * sv[p]);
    }
    const auto n = static_cast<Eigen::Index>(s.rows());
    Eigen::SparseMatrix<double> a(n, n);
    a.setFromTriplets(trips.begin(), trips.end());
    a.makeCompressed();
    return a;
}

std::vector<double> solve_linear(const Eigen::SparseMatrix<double>& a, std::span<const double> rhs) {
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.analyzePattern(a);
    lu.factorize(a);
    require(lu.info() == Eigen::Success, ErrorCode::numeric, "sparse LU factorization failed");
    Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(rhs.data(), static_cast<Eigen::Index>(rhs.size()));
    Eigen::VectorXd x = lu.solve(b);
    require(lu.info() == Eigen::Success, ErrorCode::numeric, "sparse LU solve failed");
    return {x.data(), x.data() + x.size()};
}

}  // namespace

double sup_norm(std::span<const double> x) {
    double m = 0.0;
    for (double xi : x) m = std::max(m, std::abs(xi));
    return m;
}

double span_seminorm(std::span<const double> x) {
    if (x.empty()) return 0.0;
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    return *hi - *lo;
}

RateBounds rate_bounds(const GameSpec& spec) {
    const auto exits = nature_exit_rates(spec);
    double lam = 0.0;
    for (double l : spec.lambda) lam += l;
    const auto [lo, hi] = std::minmax_element(exits.begin(), exits.end());
    return {lam + *hi, lam + *lo};
}

double bellman_modulus(const GameSpec& spec, std::size_t player) {
    require(player < spec.n_players, ErrorCode::invalid_argument, "player index out of range");
    const auto b = rate_bounds(spec);
    return b.eta_bar / (spec.rho[player] + b.eta_low);
}

double uniform_modulus(const GameSpec& spec, std::size_t player) {
    require(player < spec.n_players, ErrorCode::invalid_argument, "player index out of range");
    const auto b = rate_bounds(spec);
    return b.eta_bar / (spec.rho[player] + b.eta_bar);
}

std::vector<double> bellman_apply(const GameSpec& spec, const CcpProfile& beliefs, std::size_t player,
                                  std::span<const double> v) {
    check_inputs(spec, beliefs, player, v.size());
    const auto f = other_flows(spec, beliefs, player, v);
    const double lam = spec.lambda[player];
    const double rho = spec.rho[player];
    std::vector<double> x(spec.n_actions), out(spec.n_states);
    for (std::size_t k = 0; k < spec.n_states; ++k) {
        const double e = state_emax(spec, player, k, v, x);
        out[k] = (spec.u(player, k) + f.inflow[k] + lam * e) / (rho + f.rate[k] + lam);
    }
    check_finite(out, "bellman_apply");
    return out;
}

std::vector<double> uniform_bellman_apply(const GameSpec& spec, const CcpProfile& beliefs,
                                          std::size_t player, std::span<const double> v) {
    check_inputs(spec, beliefs, player, v.size());
    const auto f = other_flows(spec, beliefs, player, v);
    const double eta = rate_bounds(spec).eta_bar;
    const double lam = spec.lambda[player];
    const double denom = spec.rho[player] + eta;
    std::vector<double> x(spec.n_actions), out(spec.n_states);
    for (std::size_t k = 0; k < spec.n_states; ++k) {
        const double e = state_emax(spec, player, k, v, x);
        out[k] = (spec.u(player, k) + lam * e + f.inflow[k] + (eta - f.rate[k] - lam) * v[k]) / denom;
    }
    check_finite(out, "uniform_bellman_apply");
    return out;
}

SolveResult value_iterate(const GameSpec& spec, const CcpProfile& beliefs, std::size_t player,
                          std::span<const double> v0, const IterationOptions& options) {
    require(options.tol > 0.0, ErrorCode::invalid_argument, "tolerance must be positive");
    double modulus = bellman_modulus(spec, player);
    if (modulus >= 1.0) modulus = uniform_modulus(spec, player);
    const double threshold = stopping_threshold(options.tol, modulus);

    SolveResult res{std::vector<double>(v0.begin(), v0.end()), {}};
    check_finite(res.value, "value_iterate");
    while (res.report.iterations < options.max_iterations) {
        auto next = bellman_apply(spec, beliefs, player, res.value);
        double change = 0.0;
        for (std::size_t k = 0; k < next.size(); ++k) change = std::max(change, std::abs(next[k] - res.value[k]));
        res.value = std::move(next);
        res.report.residuals.push_back(change);
        ++res.report.iterations;
        if (change <= threshold) {
            res.report.converged = true;
            break;
        }
    }
    res.report.final_residual = res.report.residuals.empty() ? 0.0 : res.report.residuals.back();
    return res;
}

std::vector<double> expected_choice_payoff(const GameSpec& spec, const CcpProfile& sigma, std::size_t player) {
    require(player < spec.n_players, ErrorCode::invalid_argument, "player index out of range");
    std::vector<double> c(spec.n_states, 0.0);
    for (std::size_t k = 0; k < spec.n_states; ++k)
        for (std::size_t j = 0; j < spec.n_actions; ++j) {
            const double p = sigma(player, j, k);
            // p * e_j(p) -> 0 as p -> 0 for both shock families.
            if (p == 0.0) continue;
            c[k] += p * (spec.psi(player, j, k) + model::expected_shock(spec.shock, j, p));
        }
    return c;
}

UniformRepresentation uniform_representation(const GameSpec& spec, const CcpProfile& sigma, std::size_t player) {
    require(player < spec.n_players, ErrorCode::invalid_argument, "player index out of range");
    // assemble_q checks that every CCP lies in [0, 1] and sums to one.
    const auto assembled = model::assemble_q(spec, sigma);
    const double eta_bar = rate_bounds(spec).eta_bar;
    require(eta_bar > 0.0, ErrorCode::invalid_argument, "uniform representation needs a positive rate");

    UniformRepresentation rep;
    rep.eta_bar = eta_bar;
    rep.beta_bar = eta_bar / (spec.rho[player] + eta_bar);
    // Round-off in the CCP sums can push an exit rate a few ulps past eta_bar.
    rep.sigma_matrix = ctmc::uniformize(assembled.q, std::max(eta_bar, assembled.q.max_exit_rate())).sigma;
    const auto c = expected_choice_payoff(spec, sigma, player);
    rep.u_eff.resize(spec.n_states);
    for (std::size_t k = 0; k < spec.n_states; ++k)
        rep.u_eff[k] = (spec.u(player, k) + spec.lambda[player] * c[k]) / (spec.rho[player] + eta_bar);
    check_finite(rep.u_eff, "uniform_representation");
    return rep;
}

SolveResult policy_evaluate(const UniformRepresentation& rep, PolicyEvaluation method,
                            const IterationOptions& options) {
    const std::size_t K = rep.u_eff.size();
    require(rep.sigma_matrix.rows() == K, ErrorCode::dimension_mismatch, "representation size mismatch");
    SolveResult res;

    if (method == PolicyEvaluation::direct) {
        res.value = solve_linear(identity_minus_scaled(rep.sigma_matrix, rep.beta_bar), rep.u_eff);
        check_finite(res.value, "policy_evaluate");
        std::vector<double> sv = sparse::spmv(rep.sigma_matrix, res.value);
        double r = 0.0;
        for (std::size_t k = 0; k < K; ++k)
            r = std::max(r, std::abs(res.value[k] - rep.u_eff[k] - rep.beta_bar * sv[k]));
        res.report = {1, r, {r}, true};
        return res;
    }

    require(options.tol > 0.0, ErrorCode::invalid_argument, "tolerance must be positive");
    const double threshold = stopping_threshold(options.tol, rep.beta_bar);
    res.value.assign(K, 0.0);
    std::vector<double> next(K);
    while (res.report.iterations < options.max_iterations) {
        sparse::spmv(rep.sigma_matrix, res.value, next);
        double change = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            next[k] = rep.u_eff[k] + rep.beta_bar * next[k];
            change = std::max(change, std::abs(next[k] - res.value[k]));
        }
        std::swap(res.value, next);
        check_finite(res.value, "policy_evaluate");
        res.report.residuals.push_back(change);
        ++res.report.iterations;
        if (change <= threshold) {
            res.report.converged = true;
            break;
        }
    }
    res.report.final_residual = res.report.residuals.empty() ? 0.0 : res.report.residuals.back();
    return res;
}

SolveResult newton_kantorovich(const GameSpec& spec, const CcpProfile& beliefs, std::size_t player,
                               std::span<const double> v0, const NewtonOptions& options) {
    check_inputs(spec, beliefs, player, v0.size());
    require(options.tol > 0.0, ErrorCode::invalid_argument, "tolerance must be positive");
    SolveResult res{std::vector<double>(v0.begin(), v0.end()), {}};
    check_finite(res.value, "newton_kantorovich");
    for (std::size_t s = 0; s < options.warm_start_sweeps; ++s)
        res.value = uniform_bellman_apply(spec, beliefs, player, res.value);

    const std::size_t K = spec.n_states;
    std::vector<double> r(K);
    int increases = 0;
    while (res.report.iterations < options.max_iterations) {
        const auto tv = uniform_bellman_apply(spec, beliefs, player, res.value);
        for (std::size_t k = 0; k < K; ++k) r[k] = res.value[k] - tv[k];
        const double norm = sup_norm(r);
        if (!res.report.residuals.empty() && norm > res.report.residuals.back()) {
            if (++increases >= 3)
                fail(ErrorCode::numeric,
                     "Newton-Kantorovich diverged (residual grew three times in a row); "
                     "increase the number of warm-start value-iteration sweeps");
        } else {
            increases = 0;
        }
        res.report.residuals.push_back(norm);
        ++res.report.iterations;
        if (norm <= options.tol) {
            res.report.converged = true;
            break;
        }
        if (res.report.iterations >= options.max_iterations) break;

        // (I - T') d = (I - T) V with T' = beta_bar Sigma(sigma(V)).
        const auto sigma = best_response(spec, beliefs, player, res.value);
        const auto rep = uniform_representation(spec, sigma, player);
        const auto d = solve_linear(identity_minus_scaled(rep.sigma_matrix, rep.beta_bar), r);
        for (std::size_t k = 0; k < K; ++k) res.value[k] -= d[k];
        check_finite(res.value, "newton_kantorovich");
    }
    res.report.final_residual = res.report.residuals.empty() ? 0.0 : res.report.residuals.back();
    return res;
}

SolveResult relative_value_iterate(const UniformRepresentation& rep, std::span<const double> v0,
                                   const IterationOptions& options) {
    const std::size_t K = rep.u_eff.size();
    require(v0.size() == K && K > 0, ErrorCode::dimension_mismatch, "value function has the wrong length");
    require(options.tol > 0.0, ErrorCode::invalid_argument, "tolerance must be positive");

    std::vector<double> w(v0.begin(), v0.end());
    const double anchor = w[0];
    for (auto& x : w) x -= anchor;
    std::vector<double> tw(K), diff(K);
    SolveResult res;
    while (res.report.iterations < options.max_iterations) {
        sparse::spmv(rep.sigma_matrix, w, tw);
        for (std::size_t k = 0; k < K; ++k) tw[k] = rep.u_eff[k] + rep.beta_bar * tw[k];
        const double gain = tw[0];
        for (std::size_t k = 0; k < K; ++k) diff[k] = (tw[k] - gain) - w[k];
        check_finite(tw, "relative_value_iterate");
        res.report.residuals.push_back(span_seminorm(diff));
        ++res.report.iterations;
        if (sup_norm(diff) <= options.tol) {
            res.report.converged = true;
            res.value.resize(K);
            for (std::size_t k = 0; k < K; ++k) res.value[k] = w[k] + gain / (1.0 - rep.beta_bar);
            break;
        }
        for (std::size_t k = 0; k < K; ++k) w[k] = tw[k] - gain;
    }
    if (!res.report.converged) {
        sparse::spmv(rep.sigma_matrix, w, tw);
        const double gain = rep.u_eff[0] + rep.beta_bar * tw[0];
        res.value.resize(K);
        for (std::size_t k = 0; k < K; ++k) res.value[k] = w[k] + gain / (1.0 - rep.beta_bar);
    }
    res.report.final_residual = res.report.residuals.empty() ? 0.0 : res.report.residuals.back();
    return res;
}

std::vector<double> ccp_from_value(const GameSpec& spec, std::size_t player, std::span<const double> v) {
    require(player < spec.n_players, ErrorCode::invalid_argument, "player index out of range");
    require(v.size() == spec.n_states, ErrorCode::dimension_mismatch, "value function has the wrong length");
    const std::size_t J = spec.n_actions, K = spec.n_states;
    std::vector<double> block(J * K), x(J), p(J);
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t j = 0; j < J; ++j) x[j] = spec.psi(player, j, k) + v[spec.next_state(player, j, k)];
        model::choice_probabilities(spec.shock, x, p);
        for (std::size_t j = 0; j < J; ++j) block[j * K + k] = p[j];
    }
    return block;
}

CcpProfile best_response(const GameSpec& spec, const CcpProfile& beliefs, std::size_t player,
                         std::span<const double> v) {
    CcpProfile out = beliefs;
    out.set_player(player, ccp_from_value(spec, player, v));
    return out;
}

}  // namespace ctdc::solver

#include "ctdc/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "ctdc/error.hpp"

namespace ctdc::model {

using sparse::CsrMatrix;
using sparse::Index;
using sparse::SlotKey;

namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143268;

double logistic(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double probit_spread(const ShockSpec& shock) {
    const double v = shock.var0 + shock.var1 - 2.0 * shock.cov;
    require(v > 0.0, ErrorCode::invalid_argument, "probit: var(eps_1 - eps_0) must be positive");
    return std::sqrt(v);
}

double normal_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Index of each stored Q0 entry inside Q's value array (diagonals map to the
// diagonal slot, which is recomputed from row sums anyway).
std::vector<Index> nature_addresses(const GameSpec& spec, const sparse::SparsityPattern& pattern) {
    const CsrMatrix& q0 = spec.nature.matrix();
    const auto rp = q0.row_ptr();
    const auto ci = q0.col_idx();
    std::vector<Index> out(q0.nnz());
    for (Index r = 0; r < q0.rows(); ++r)
        for (Index p = rp[r]; p < rp[r + 1]; ++p)
            out[p] = ci[p] == r ? pattern.address(SlotKey::diagonal(r))
                                : pattern.address(SlotKey::nature(r, ci[p]));
    return out;
}

// Fill the diagonal with minus the off-diagonal row sums.
void close_rows(const sparse::SparsityPattern& pattern, std::vector<double>& values) {
    const auto& s = *pattern.structure();
    for (Index r = 0; r < s.n_rows; ++r) {
        double off = 0.0;
        Index diag = s.row_ptr[r];
        for (Index p = s.row_ptr[r]; p < s.row_ptr[r + 1]; ++p) {
            if (s.col_idx[p] == r)
                diag = p;
            else
                off += values[p];
        }
        values[diag] = -off;
    }
}

void check_ccp_shape(const CcpProfile& sigma, const GameSpec& spec) {
    require(sigma.n_players() == spec.n_players && sigma.n_states() == spec.n_states &&
                (spec.n_players == 0 || sigma.n_actions() == spec.n_actions),
            ErrorCode::dimension_mismatch, "CCP profile does not match the game dimensions");
}

void validate_ccp(const CcpProfile& sigma, const GameSpec& spec, bool open_interval) {
    check_ccp_shape(sigma, spec);
    for (std::size_t i = 0; i < spec.n_players; ++i)
        for (std::size_t k = 0; k < spec.n_states; ++k) {
            double sum = 0.0;
            for (std::size_t j = 0; j < spec.n_actions; ++j) {
                const double p = sigma(i, j, k);
                const bool ok = open_interval ? (p > 0.0 && p < 1.0) || (spec.n_actions == 1 && p == 1.0)
                                              : p >= 0.0 && p <= 1.0;
                require(ok, ErrorCode::invalid_argument,
                        "CCP sigma(" + std::to_string(i) + "," + std::to_string(j) + "," +
                            std::to_string(k) + ") = " + std::to_string(p) + " out of range");
                sum += p;
            }
            require(std::abs(sum - 1.0) <= 1e-10, ErrorCode::invalid_argument,
                    "CCPs for player " + std::to_string(i) + " in state " + std::to_string(k) +
                        " sum to " + std::to_string(sum));
        }
}

}  // namespace

// ---------------------------------------------------------------------------
// Shocks

double expected_shock(const ShockSpec& shock, std::size_t action, double prob) {
    require(prob > 0.0 && prob <= 1.0, ErrorCode::invalid_argument,
            "expected_shock: choice probability must lie in (0, 1]");
    if (shock.family == ShockFamily::logit) return shock.scale * (kEulerGamma - std::log(prob));

    require(action < 2, ErrorCode::invalid_argument, "probit shocks are binary");
    const double var = action == 0 ? shock.var0 : shock.var1;
    const double z = boost::math::quantile(boost::math::normal(), std::min(prob, 1.0 - 1e-16));
    return (var - shock.cov) / probit_spread(shock) * normal_pdf(z) / prob;
}

double emax(const ShockSpec& shock, std::span<const double> x) {
    if (shock.family == ShockFamily::logit) {
        const double m = *std::max_element(x.begin(), x.end());
        double s = 0.0;
        for (double xi : x) s += std::exp((xi - m) / shock.scale);
        return m + shock.scale * (std::log(s) + kEulerGamma);
    }
    require(x.size() == 2, ErrorCode::invalid_argument, "probit shocks are binary");
    const double s = probit_spread(shock);
    const double d = x[1] - x[0];
    return x[0] + d * normal_cdf(d / s) + s * normal_pdf(d / s);
}

void choice_probabilities(const ShockSpec& shock, std::span<const double> x, std::span<double> out) {
    if (shock.family == ShockFamily::logit) {
        const double m = *std::max_element(x.begin(), x.end());
        double s = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) s += out[j] = std::exp((x[j] - m) / shock.scale);
        for (auto& p : out) p /= s;
        return;
    }
    require(x.size() == 2, ErrorCode::invalid_argument, "probit shocks are binary");
    const double z = (x[1] - x[0]) / probit_spread(shock);
    out[1] = normal_cdf(z);
    out[0] = normal_cdf(-z);
}

// ---------------------------------------------------------------------------
// Game primitives

void validate(const GameSpec& spec) {
    const std::size_t N = spec.n_players, J = spec.n_actions, K = spec.n_states;
    require(K >= 1 && J >= 1, ErrorCode::invalid_argument, "game needs at least one state and action");
    require(spec.nature.size() == K, ErrorCode::dimension_mismatch,
            "nature generator size does not match the state space");
    require(spec.rho.size() == N && spec.lambda.size() == N && spec.transitions.size() == N * J * K &&
                spec.flow_payoff.size() == N * K && spec.choice_payoff.size() == N * J * K &&
                spec.inert_action.size() == N * J * K,
            ErrorCode::dimension_mismatch, "game arrays do not match (players, actions, states)");
    for (std::size_t i = 0; i < N; ++i) {
        require(std::isfinite(spec.rho[i]) && spec.rho[i] > 0.0, ErrorCode::invalid_argument,
                "discount rates must be positive");
        require(std::isfinite(spec.lambda[i]) && spec.lambda[i] > 0.0, ErrorCode::invalid_argument,
                "move arrival rates must be positive and finite");
    }
    for (double u : spec.flow_payoff)
        require(std::isfinite(u), ErrorCode::invalid_argument, "flow payoffs must be finite");
    for (double psi : spec.choice_payoff)
        require(std::isfinite(psi), ErrorCode::invalid_argument, "choice payoffs must be finite");
    if (spec.shock.family == ShockFamily::logit) {
        require(spec.shock.scale > 0.0, ErrorCode::invalid_argument, "shock scale must be positive");
    } else {
        require(N == 0 || J == 2, ErrorCode::invalid_argument, "probit shocks require two actions");
        probit_spread(spec.shock);
    }

    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t k = 0; k < K; ++k) {
            require(spec.next_state(i, 0, k) == k && spec.psi(i, 0, k) == 0.0,
                    ErrorCode::invalid_argument,
                    "continuation action must be costless and leave the state unchanged");
            for (std::size_t j = 0; j < J; ++j) {
                const std::size_t l = spec.next_state(i, j, k);
                require(l < K, ErrorCode::invalid_argument,
                        "transition map points outside the state space");
                if (spec.inert(i, j, k)) {
                    require(j > 0 && l == k, ErrorCode::invalid_argument,
                            "only actions j > 0 that keep the state may be marked inert");
                    continue;
                }
                for (std::size_t j2 = 0; j2 < j; ++j2) {
                    if (spec.inert(i, j2, k)) continue;
                    require(spec.next_state(i, j2, k) != l, ErrorCode::invalid_argument,
                            "actions " + std::to_string(j2) + " and " + std::to_string(j) +
                                " of player " + std::to_string(i) + " lead to the same state from " +
                                std::to_string(k));
                }
            }
        }
}

CcpProfile CcpProfile::uniform(std::size_t players, std::size_t actions, std::size_t states) {
    CcpProfile p(players, actions, states);
    std::fill(p.p_.begin(), p.p_.end(), 1.0 / static_cast<double>(actions));
    return p;
}

void CcpProfile::set_player(std::size_t i, std::span<const double> block) {
    require(i < players_ && block.size() == actions_ * states_, ErrorCode::dimension_mismatch,
            "set_player: block size mismatch");
    std::copy(block.begin(), block.end(), p_.begin() + static_cast<std::ptrdiff_t>(i * actions_ * states_));
}

void validate(const CcpProfile& sigma, const GameSpec& spec) { validate_ccp(sigma, spec, true); }

std::size_t ParameterVector::index_of(std::string_view name) const {
    auto it = std::find(names.begin(), names.end(), name);
    require(it != names.end(), ErrorCode::invalid_argument,
            "unknown parameter '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - names.begin());
}

// ---------------------------------------------------------------------------
// Generator assembly

sparse::SparsityPattern generator_pattern(const GameSpec& spec) {
    const std::size_t K = spec.n_states;
    std::vector<sparse::SlotEntry> entries;
    const CsrMatrix& q0 = spec.nature.matrix();
    const auto rp = q0.row_ptr();
    const auto ci = q0.col_idx();
    for (Index r = 0; r < K; ++r) {
        entries.push_back({SlotKey::diagonal(r), r, r});
        for (Index p = rp[r]; p < rp[r + 1]; ++p)
            if (ci[p] != r) entries.push_back({SlotKey::nature(r, ci[p]), r, ci[p]});
    }
    for (std::size_t i = 0; i < spec.n_players; ++i)
        for (std::size_t j = 1; j < spec.n_actions; ++j)
            for (std::size_t k = 0; k < K; ++k) {
                if (spec.inert(i, j, k)) continue;
                entries.push_back({SlotKey::player(i, j, k), k, spec.next_state(i, j, k)});
            }
    return sparse::SparsityPattern::build(K, K, entries);
}

AssembledGenerator assemble_q(const GameSpec& spec, const CcpProfile& sigma,
                              const sparse::SparsityPattern* pattern) {
    validate_ccp(sigma, spec, false);
    sparse::SparsityPattern pat = pattern ? *pattern : generator_pattern(spec);
    require(pat.structure()->n_rows == spec.n_states, ErrorCode::pattern,
            "assemble_q: pattern was built for a different state space");

    std::vector<double> values(pat.nnz(), 0.0);
    const CsrMatrix& q0 = spec.nature.matrix();
    const auto rp = q0.row_ptr();
    const auto ci = q0.col_idx();
    const auto qv = q0.values();
    for (Index r = 0; r < q0.rows(); ++r)
        for (Index p = rp[r]; p < rp[r + 1]; ++p)
            if (ci[p] != r) values[pat.address(SlotKey::nature(r, ci[p]))] = qv[p];
    for (std::size_t i = 0; i < spec.n_players; ++i)
        for (std::size_t j = 1; j < spec.n_actions; ++j)
            for (std::size_t k = 0; k < spec.n_states; ++k) {
                if (spec.inert(i, j, k)) continue;
                values[pat.address(SlotKey::player(i, j, k))] = spec.lambda[i] * sigma(i, j, k);
            }
    close_rows(pat, values);
    auto q = ctmc::validate_generator(CsrMatrix(pat.structure(), std::move(values)));
    return {std::move(q), std::move(pat)};
}

std::vector<CsrMatrix> assemble_q_derivatives(const GameSpec& spec, const CcpProfile& sigma,
                                              std::span<const GameDerivative> derivatives,
                                              const sparse::SparsityPattern& pattern) {
    check_ccp_shape(sigma, spec);
    const std::vector<Index> nature_pos = nature_addresses(spec, pattern);
    const CsrMatrix& q0 = spec.nature.matrix();

    std::vector<CsrMatrix> out;
    out.reserve(derivatives.size());
    for (const auto& d : derivatives) {
        require(d.nature.empty() || d.nature.size() == q0.nnz(), ErrorCode::dimension_mismatch,
                "nature derivative does not align with Q0");
        require(d.lambda.empty() || d.lambda.size() == spec.n_players, ErrorCode::dimension_mismatch,
                "rate derivative has the wrong length");
        require(d.ccp.empty() || d.ccp.size() == sigma.data().size(), ErrorCode::dimension_mismatch,
                "CCP derivative has the wrong length");

        std::vector<double> values(pattern.nnz(), 0.0);
        if (!d.nature.empty()) {
            const auto rp = q0.row_ptr();
            const auto ci = q0.col_idx();
            for (Index r = 0; r < q0.rows(); ++r)
                for (Index p = rp[r]; p < rp[r + 1]; ++p)
                    if (ci[p] != r) values[nature_pos[p]] = d.nature[p];
        }
        for (std::size_t i = 0; i < spec.n_players; ++i) {
            const double dlam = d.lambda.empty() ? 0.0 : d.lambda[i];
            for (std::size_t j = 1; j < spec.n_actions; ++j)
                for (std::size_t k = 0; k < spec.n_states; ++k) {
                    if (spec.inert(i, j, k)) continue;
                    const double dsig = d.ccp.empty() ? 0.0 : d.ccp[spec.slot(i, j, k)];
                    values[pattern.address(SlotKey::player(i, j, k))] =
                        dlam * sigma(i, j, k) + spec.lambda[i] * dsig;
                }
        }
        close_rows(pattern, values);
        out.emplace_back(pattern.structure(), std::move(values));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Renewal

namespace {

// Q0 of the renewal model at gamma = 1; the generator is linear in gamma.
CsrMatrix renewal_nature_unit(std::size_t K) {
    sparse::CooMatrix coo(K, K);
    for (std::size_t k = 0; k < K; ++k) {
        if (k + 1 < K) {
            coo.push_back(k, k, -1.0);
            coo.push_back(k, k + 1, 1.0);
        } else {
            coo.push_back(k, k, 0.0);
        }
    }
    return sparse::coo_to_csr(coo);
}

CsrMatrix scaled(const CsrMatrix& base, double factor) {
    std::vector<double> v(base.values().begin(), base.values().end());
    for (auto& x : v) x *= factor;
    return CsrMatrix(base.structure(), std::move(v));
}

GameSpec renewal_spec(const RenewalParams& p, const CsrMatrix& nature_unit) {
    require(p.states >= 2, ErrorCode::invalid_argument, "renewal model needs K >= 2");
    require(p.gamma > 0.0 && p.lambda > 0.0 && p.rho > 0.0 && p.shock_scale > 0.0,
            ErrorCode::invalid_argument, "renewal rates and shock scale must be positive");
    const std::size_t K = p.states;
    GameSpec s;
    s.n_players = 1;
    s.n_actions = 2;
    s.n_states = K;
    s.rho = {p.rho};
    s.lambda = {p.lambda};
    s.nature = ctmc::validate_generator(scaled(nature_unit, p.gamma));
    s.transitions.resize(2 * K);
    s.flow_payoff.resize(K);
    s.choice_payoff.assign(2 * K, 0.0);
    s.inert_action.assign(2 * K, 0);
    for (std::size_t k = 0; k < K; ++k) {
        s.transitions[s.slot(0, 0, k)] = k;
        s.transitions[s.slot(0, 1, k)] = 0;
        s.flow_payoff[k] = p.beta * static_cast<double>(k + 1);
        s.choice_payoff[s.slot(0, 1, k)] = -p.mu;
    }
    // Replacing a new engine resets to the state it is already in.
    s.inert_action[s.slot(0, 1, 0)] = 1;
    s.shock.scale = p.shock_scale;
    validate(s);
    return s;
}

}  // namespace

GameSpec build_renewal(const RenewalParams& params) {
    require(params.states >= 2, ErrorCode::invalid_argument, "renewal model needs K >= 2");
    return renewal_spec(params, renewal_nature_unit(params.states));
}

CcpProfile renewal_ccps(std::span<const double> replace) {
    CcpProfile p(1, 2, replace.size());
    for (std::size_t k = 0; k < replace.size(); ++k) {
        p(0, 1, k) = replace[k];
        p(0, 0, k) = 1.0 - replace[k];
    }
    return p;
}

RenewalModel::RenewalModel(RenewalParams params, std::vector<double> replace)
    : params_(params), replace_(std::move(replace)) {
    require(params_.states >= 2, ErrorCode::invalid_argument, "renewal model needs K >= 2");
    nature_unit_ = renewal_nature_unit(params_.states);
    require(replace_.size() == params_.states, ErrorCode::invalid_argument,
            "renewal model needs one replacement probability per state");
    for (double r : replace_)
        require(r >= 0.0 && r <= 1.0, ErrorCode::invalid_argument,
                "replacement probabilities must lie in [0, 1]");
}

ParameterVector RenewalModel::parameters() const {
    return {{"gamma", "lambda"}, {params_.gamma, params_.lambda}, {1e-4, 1e-4}, {100.0, 100.0}};
}

ModelInstance RenewalModel::instantiate(std::span<const double> theta, bool with_derivatives) const {
    require(theta.size() == 2, ErrorCode::dimension_mismatch, "renewal model has 2 parameters");
    RenewalParams p = params_;
    p.gamma = theta[0];
    p.lambda = theta[1];
    ModelInstance out{renewal_spec(p, nature_unit_), renewal_ccps(replace_), {}};
    if (with_derivatives) {
        GameDerivative d_gamma;
        d_gamma.nature.assign(nature_unit_.values().begin(), nature_unit_.values().end());
        GameDerivative d_lambda;
        d_lambda.lambda = {1.0};
        out.derivatives = {std::move(d_gamma), std::move(d_lambda)};
    }
    return out;
}

// ---------------------------------------------------------------------------
// Entry-exit

double activity_probability(double theta_ec, double theta_rn, double theta_d, std::size_t n_active,
                            std::size_t demand_level) {
    return logistic(theta_ec + theta_rn * static_cast<double>(n_active) +
                    theta_d * static_cast<double>(demand_level));
}

namespace {

CsrMatrix demand_nature_unit(std::size_t players, std::size_t D) {
    const std::size_t K = entry_exit_states(players, D);
    sparse::CooMatrix coo(K, K);
    for (std::size_t k = 0; k < K; ++k) {
        const auto s = decode_entry_exit(k, D);
        double out_rate = 0.0;
        if (s.demand + 1 < D) {
            coo.push_back(k, encode_entry_exit({s.mask, s.demand + 1}, D), 1.0);
            out_rate += 1.0;
        }
        if (s.demand > 0) {
            coo.push_back(k, encode_entry_exit({s.mask, s.demand - 1}, D), 1.0);
            out_rate += 1.0;
        }
        coo.push_back(k, k, -out_rate);
    }
    return sparse::coo_to_csr(coo);
}

void check_entry_exit(const EntryExitParams& p) {
    require(p.players >= 1 && p.demand >= 1, ErrorCode::invalid_argument,
            "entry-exit model needs N >= 1 and D >= 1");
    require(p.players <= 20, ErrorCode::invalid_argument, "entry-exit model supports N <= 20");
    require(p.lambda > 0.0 && p.gamma > 0.0 && p.rho > 0.0 && p.shock_scale > 0.0,
            ErrorCode::invalid_argument, "entry-exit rates and shock scale must be positive");
}

GameSpec entry_exit_spec(const EntryExitParams& p, const CsrMatrix& nature_unit) {
    check_entry_exit(p);
    const std::size_t N = p.players, D = p.demand, K = entry_exit_states(N, D);
    GameSpec s;
    s.n_players = N;
    s.n_actions = 2;
    s.n_states = K;
    s.rho.assign(N, p.rho);
    s.lambda.assign(N, p.lambda);
    s.nature = ctmc::validate_generator(scaled(nature_unit, p.gamma));
    s.transitions.resize(N * 2 * K);
    s.flow_payoff.assign(N * K, 0.0);
    s.choice_payoff.assign(N * 2 * K, 0.0);
    s.inert_action.assign(N * 2 * K, 0);
    for (std::size_t k = 0; k < K; ++k) {
        const auto st = decode_entry_exit(k, D);
        const auto n_active = static_cast<double>(std::popcount(st.mask));
        for (std::size_t i = 0; i < N; ++i) {
            const bool active = (st.mask >> i) & 1U;
            s.transitions[s.slot(i, 0, k)] = k;
            s.transitions[s.slot(i, 1, k)] = encode_entry_exit({st.mask ^ (std::size_t{1} << i), st.demand}, D);
            if (active) {
                s.flow_payoff[i * K + k] =
                    p.theta_d * static_cast<double>(st.demand + 1) + p.theta_rn * (n_active - 1.0);
            } else {
                s.choice_payoff[s.slot(i, 1, k)] = p.theta_ec;
            }
        }
    }
    s.shock.scale = p.shock_scale;
    validate(s);
    return s;
}

}  // namespace

GameSpec build_entry_exit(const EntryExitParams& params) {
    check_entry_exit(params);
    return entry_exit_spec(params, demand_nature_unit(params.players, params.demand));
}

CcpProfile entry_exit_ccps(const EntryExitParams& p) {
    check_entry_exit(p);
    const std::size_t N = p.players, D = p.demand, K = entry_exit_states(N, D);
    CcpProfile sigma(N, 2, K);
    for (std::size_t k = 0; k < K; ++k) {
        const auto st = decode_entry_exit(k, D);
        const double x = p.theta_ec + p.theta_rn * static_cast<double>(std::popcount(st.mask)) +
                         p.theta_d * static_cast<double>(st.demand + 1);
        const double enter = logistic(x), stay_out = logistic(-x);
        for (std::size_t i = 0; i < N; ++i) {
            const bool active = (st.mask >> i) & 1U;
            // Action 1 toggles: entry with probability p, exit with 1 - p.
            sigma(i, 1, k) = active ? stay_out : enter;
            sigma(i, 0, k) = active ? enter : stay_out;
        }
    }
    return sigma;
}

EntryExitModel::EntryExitModel(EntryExitParams params) : params_(params) {
    check_entry_exit(params_);
    nature_unit_ = demand_nature_unit(params_.players, params_.demand);
}

ParameterVector EntryExitModel::parameters() const {
    return {{"theta_ec", "theta_rn", "theta_d", "lambda", "gamma"},
            {params_.theta_ec, params_.theta_rn, params_.theta_d, params_.lambda, params_.gamma},
            {-10.0, -10.0, -10.0, 1e-4, 1e-4},
            {10.0, 10.0, 10.0, 100.0, 100.0}};
}

ModelInstance EntryExitModel::instantiate(std::span<const double> theta, bool with_derivatives) const {
    require(theta.size() == 5, ErrorCode::dimension_mismatch, "entry-exit model has 5 parameters");
    EntryExitParams p = params_;
    p.theta_ec = theta[0];
    p.theta_rn = theta[1];
    p.theta_d = theta[2];
    p.lambda = theta[3];
    p.gamma = theta[4];

    ModelInstance out{entry_exit_spec(p, nature_unit_), entry_exit_ccps(p), {}};
    if (!with_derivatives) return out;

    const std::size_t N = p.players, D = p.demand, K = out.spec.n_states;
    std::vector<GameDerivative> d(5);
    for (int c = 0; c < 3; ++c) d[c].ccp.assign(N * 2 * K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        const auto st = decode_entry_exit(k, D);
        const auto n_active = static_cast<double>(std::popcount(st.mask));
        const double x = p.theta_ec + p.theta_rn * n_active + p.theta_d * static_cast<double>(st.demand + 1);
        const double slope = logistic(x) * logistic(-x);
        const double z[3] = {1.0, n_active, static_cast<double>(st.demand + 1)};
        for (std::size_t i = 0; i < N; ++i) {
            const double sign = ((st.mask >> i) & 1U) ? -1.0 : 1.0;
            for (int c = 0; c < 3; ++c) {
                d[c].ccp[out.spec.slot(i, 1, k)] = sign * slope * z[c];
                d[c].ccp[out.spec.slot(i, 0, k)] = -sign * slope * z[c];
            }
        }
    }
    d[3].lambda.assign(N, 1.0);
    d[4].nature.assign(nature_unit_.values().begin(), nature_unit_.values().end());
    out.derivatives = std::move(d);
    return out;
}

// ---------------------------------------------------------------------------
// Two-state chain

TwoStateModel::TwoStateModel(double alpha, double beta) : alpha_(alpha), beta_(beta) {
    sparse::CooMatrix coo(2, 2);
    for (Index r = 0; r < 2; ++r)
        for (Index c = 0; c < 2; ++c) coo.push_back(r, c, 0.0);
    structure_ = sparse::coo_to_csr(coo).structure();
}

ParameterVector TwoStateModel::parameters() const {
    return {{"alpha", "beta"}, {alpha_, beta_}, {1e-4, 1e-4}, {100.0, 100.0}};
}

ModelInstance TwoStateModel::instantiate(std::span<const double> theta, bool with_derivatives) const {
    require(theta.size() == 2, ErrorCode::dimension_mismatch, "two-state model has 2 parameters");
    const double a = theta[0], b = theta[1];
    require(a >= 0.0 && b >= 0.0, ErrorCode::invalid_argument, "two-state rates must be nonnegative");
    ModelInstance out;
    out.spec.n_players = 0;
    out.spec.n_actions = 1;
    out.spec.n_states = 2;
    out.spec.nature = ctmc::validate_generator(CsrMatrix(structure_, {-a, a, b, -b}));
    out.ccp = CcpProfile(0, 1, 2);
    if (with_derivatives) {
        GameDerivative da, db;
        da.nature = {-1.0, 1.0, 0.0, 0.0};
        db.nature = {0.0, 0.0, 1.0, -1.0};
        out.derivatives = {std::move(da), std::move(db)};
    }
    return out;
}

std::vector<CsrMatrix> assemble_q_derivatives(const StructuralModel& model, const ParameterVector& theta,
                                              std::span<const std::string> wrt) {
    const ParameterVector known = model.parameters();
    std::vector<std::size_t> which;
    for (const auto& name : wrt) which.push_back(known.index_of(name));
    const ModelInstance inst = model.instantiate(theta.values, true);
    std::vector<GameDerivative> chosen;
    for (std::size_t w : which) chosen.push_back(inst.derivatives[w]);
    const auto pattern = generator_pattern(inst.spec);
    return assemble_q_derivatives(inst.spec, inst.ccp, chosen, pattern);
}

}  // namespace ctdc::model

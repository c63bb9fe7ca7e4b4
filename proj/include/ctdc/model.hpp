#pragma once

// Continuous-time dynamic discrete choice games: the game specification,
// conditional choice probabilities, assembly of the aggregate generator
// Q = Q0 + sum_i Q_i on a precomputed sparsity pattern, its parameter
// derivatives, and the built-in renewal and entry-exit models.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctdc/ctmc.hpp"
#include "ctdc/sparse.hpp"

namespace ctdc::model {

inline constexpr double kEulerGamma = 0.57721566490153286;

enum class ShockFamily { logit, probit };

/// Distribution of the choice-specific shocks. `scale` is the type-1 extreme
/// value scale; the variances and covariance describe (eps_0, eps_1) for the
/// binary probit.
struct ShockSpec {
    ShockFamily family = ShockFamily::logit;
    double scale = 1.0;
    double var0 = 1.0;
    double var1 = 1.0;
    double cov = 0.0;
};

/// E[eps_j | action j chosen] when j is chosen with probability `prob`.
double expected_shock(const ShockSpec& shock, std::size_t action, double prob);

/// E max_j {x_j + eps_j}. Logit uses a max-shifted logsumexp; probit requires J = 2.
double emax(const ShockSpec& shock, std::span<const double> x);

/// Choice probabilities implied by utilities `x` (softmax for logit).
void choice_probabilities(const ShockSpec& shock, std::span<const double> x, std::span<double> out);

struct GameSpec {
    std::size_t n_players = 0;
    std::size_t n_actions = 1;
    std::size_t n_states = 0;
    std::vector<double> rho;     // discount rate per player
    std::vector<double> lambda;  // move arrival rate per player
    ctmc::IntensityMatrix nature;
    std::vector<std::size_t> transitions;  // l(i,j,k) at slot(i,j,k)
    std::vector<double> flow_payoff;       // u_ik at i*K + k
    std::vector<double> choice_payoff;     // psi_ijk at slot(i,j,k)
    /// Nonzero where an action j > 0 is allowed to leave the state unchanged
    /// (e.g. replacing an engine that is already new). Such actions carry no
    /// generator entry and are exempt from the distinct-actions check.
    std::vector<std::uint8_t> inert_action;
    ShockSpec shock;

    std::size_t slot(std::size_t i, std::size_t j, std::size_t k) const {
        return (i * n_actions + j) * n_states + k;
    }
    std::size_t next_state(std::size_t i, std::size_t j, std::size_t k) const {
        return transitions[slot(i, j, k)];
    }
    double psi(std::size_t i, std::size_t j, std::size_t k) const { return choice_payoff[slot(i, j, k)]; }
    double u(std::size_t i, std::size_t k) const { return flow_payoff[i * n_states + k]; }
    bool inert(std::size_t i, std::size_t j, std::size_t k) const { return inert_action[slot(i, j, k)] != 0; }
};

/// Checks sizes, rates, payoffs, costless continuation and distinct actions.
void validate(const GameSpec& spec);

class CcpProfile {
public:
    CcpProfile() = default;
    CcpProfile(std::size_t players, std::size_t actions, std::size_t states)
        : players_(players), actions_(actions), states_(states), p_(players * actions * states, 0.0) {}

    static CcpProfile uniform(std::size_t players, std::size_t actions, std::size_t states);

    std::size_t n_players() const { return players_; }
    std::size_t n_actions() const { return actions_; }
    std::size_t n_states() const { return states_; }

    double operator()(std::size_t i, std::size_t j, std::size_t k) const { return p_[index(i, j, k)]; }
    double& operator()(std::size_t i, std::size_t j, std::size_t k) { return p_[index(i, j, k)]; }

    std::span<const double> data() const { return p_; }
    /// Player i's J x K block (action-major).
    std::span<const double> player(std::size_t i) const {
        return std::span<const double>(p_).subspan(i * actions_ * states_, actions_ * states_);
    }
    void set_player(std::size_t i, std::span<const double> block);

private:
    std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
        return (i * actions_ + j) * states_ + k;
    }

    std::size_t players_ = 0;
    std::size_t actions_ = 0;
    std::size_t states_ = 0;
    std::vector<double> p_;
};

/// Each entry in (0, 1) and each (i, k) slice summing to one within 1e-10.
void validate(const CcpProfile& sigma, const GameSpec& spec);

struct ParameterVector {
    std::vector<std::string> names;
    std::vector<double> values;
    std::vector<double> lower;
    std::vector<double> upper;

    std::size_t size() const { return names.size(); }
    /// Throws ErrorCode::invalid_argument for unknown names.
    std::size_t index_of(std::string_view name) const;
    double operator[](std::string_view name) const { return values[index_of(name)]; }
    void set(std::string_view name, double value) { values[index_of(name)] = value; }
};

/// Derivative of the game primitives that enter Q with respect to one
/// parameter. Empty vectors mean "no dependence".
struct GameDerivative {
    std::vector<double> nature;  // aligned with spec.nature.matrix().values()
    std::vector<double> lambda;  // per player
    std::vector<double> ccp;     // aligned with CcpProfile::data()
};

/// The pattern of Q: nature off-diagonals, one entry per non-inert player
/// action, and the full diagonal. Address keys are SlotKey::nature(k, l),
/// SlotKey::player(i, j, k) and SlotKey::diagonal(k).
sparse::SparsityPattern generator_pattern(const GameSpec& spec);

struct AssembledGenerator {
    ctmc::IntensityMatrix q;
    sparse::SparsityPattern pattern;
};

/// Q = Q0 + sum_i Q_i with lambda_i sigma_ijk at (k, l(i,j,k)) for j > 0.
/// When `pattern` is given it must come from generator_pattern() for the same
/// topology; only a value array is then produced.
AssembledGenerator assemble_q(const GameSpec& spec, const CcpProfile& sigma,
                              const sparse::SparsityPattern* pattern = nullptr);

/// dQ/dalpha for each derivative record, on the pattern of Q. Rows sum to zero.
std::vector<sparse::CsrMatrix> assemble_q_derivatives(const GameSpec& spec, const CcpProfile& sigma,
                                                      std::span<const GameDerivative> derivatives,
                                                      const sparse::SparsityPattern& pattern);

// ---------------------------------------------------------------------------
// Built-in models

struct RenewalParams {
    std::size_t states = 5;
    double gamma = 0.2;   // mileage increment rate
    double lambda = 1.0;  // decision rate
    double beta = -0.25;  // per-mileage operating cost (flow payoff beta * k)
    double mu = 1.5;      // replacement cost
    double rho = 0.05;
    double shock_scale = 1.0;
};

/// Single-agent engine replacement. States are mileage levels 1..K stored
/// 0-based; action 1 resets to state 0, which is inert in state 0.
GameSpec build_renewal(const RenewalParams& params);

/// Profile with replacement probability replace[k] in state k.
CcpProfile renewal_ccps(std::span<const double> replace);

struct EntryExitParams {
    std::size_t players = 5;
    std::size_t demand = 5;
    double theta_ec = -0.5;
    double theta_rn = -0.05;
    double theta_d = 0.1;
    double lambda = 1.0;
    double gamma = 0.3;
    double rho = 0.05;
    double shock_scale = 1.0;
};

/// State k = mask * D + d with firm i active iff bit i of mask is set and
/// demand level d in 0..D-1.
struct EntryExitState {
    std::size_t mask;
    std::size_t demand;
};

inline std::size_t entry_exit_states(std::size_t players, std::size_t demand) {
    return (std::size_t{1} << players) * demand;
}
inline std::size_t encode_entry_exit(EntryExitState s, std::size_t demand) {
    return s.mask * demand + s.demand;
}
inline EntryExitState decode_entry_exit(std::size_t k, std::size_t demand) {
    return {k / demand, k % demand};
}

/// logistic(theta_ec + theta_rn * n_active + theta_d * demand_level), with
/// demand_level counted from 1.
double activity_probability(double theta_ec, double theta_rn, double theta_d, std::size_t n_active,
                            std::size_t demand_level);

/// N symmetric firms, action 1 toggles activity; demand is a birth-death
/// chain with rate gamma in each direction, reflecting at the boundaries.
GameSpec build_entry_exit(const EntryExitParams& params);

/// Myopic CCPs: an inactive firm enters with probability p, an active firm
/// exits with probability 1 - p, p = activity_probability(...) evaluated with
/// n_active counting every active firm in the state.
CcpProfile entry_exit_ccps(const EntryExitParams& params);

// ---------------------------------------------------------------------------
// Parameterized families used for estimation

struct ModelInstance {
    GameSpec spec;
    CcpProfile ccp;
    std::vector<GameDerivative> derivatives;  // one per parameter, in parameters() order
};

class StructuralModel {
public:
    virtual ~StructuralModel() = default;

    virtual std::string name() const = 0;
    /// Estimable parameters with their defaults and bounds.
    virtual ParameterVector parameters() const = 0;
    virtual std::size_t n_states() const = 0;
    virtual ModelInstance instantiate(std::span<const double> theta, bool with_derivatives) const = 0;
};

/// Myopic entry-exit game in (theta_ec, theta_rn, theta_d, lambda, gamma).
class EntryExitModel final : public StructuralModel {
public:
    explicit EntryExitModel(EntryExitParams params);

    std::string name() const override { return "entry_exit"; }
    ParameterVector parameters() const override;
    std::size_t n_states() const override { return entry_exit_states(params_.players, params_.demand); }
    ModelInstance instantiate(std::span<const double> theta, bool with_derivatives) const override;

    const EntryExitParams& params() const { return params_; }

private:
    EntryExitParams params_;
    sparse::CsrMatrix nature_unit_;  // Q0 at gamma = 1, built once
};

/// Renewal model in (gamma, lambda) with replacement CCPs held fixed.
class RenewalModel final : public StructuralModel {
public:
    RenewalModel(RenewalParams params, std::vector<double> replace);

    std::string name() const override { return "renewal"; }
    ParameterVector parameters() const override;
    std::size_t n_states() const override { return params_.states; }
    ModelInstance instantiate(std::span<const double> theta, bool with_derivatives) const override;

    const RenewalParams& params() const { return params_; }
    const std::vector<double>& replace_probabilities() const { return replace_; }

private:
    RenewalParams params_;
    std::vector<double> replace_;
    sparse::CsrMatrix nature_unit_;
};

/// Two-state chain [[-alpha, alpha], [beta, -beta]] with no players.
class TwoStateModel final : public StructuralModel {
public:
    TwoStateModel(double alpha, double beta);

    std::string name() const override { return "two_state"; }
    ParameterVector parameters() const override;
    std::size_t n_states() const override { return 2; }
    ModelInstance instantiate(std::span<const double> theta, bool with_derivatives) const override;

private:
    double alpha_;
    double beta_;
    std::shared_ptr<const sparse::CsrStructure> structure_;
};

/// dQ/dtheta for the named parameters at `theta`; unknown names throw.
std::vector<sparse::CsrMatrix> assemble_q_derivatives(const StructuralModel& model,
                                                      const ParameterVector& theta,
                                                      std::span<const std::string> wrt);

}  // namespace ctdc::model

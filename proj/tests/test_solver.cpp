#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ctdc/error.hpp"
#include "ctdc/model.hpp"
#include "ctdc/solver.hpp"
#include "oracles.hpp"

using namespace ctdc;
using namespace ctdc::model;
using namespace ctdc::solver;

namespace {

// rho above the nature rate keeps eta_bar / (rho + eta_low) below one.
RenewalParams renewal_params(double rho = 0.3) {
    RenewalParams p;
    p.rho = rho;
    return p;
}

EntryExitParams entry_exit_params() {
    EntryExitParams p;
    p.players = 3;
    p.demand = 3;
    p.rho = 0.5;
    return p;
}

CcpProfile renewal_beliefs(std::size_t K) { return CcpProfile::uniform(1, 2, K); }

// One state, continuation only: V = (u + lambda (V + gamma_EM)) / (rho + lambda).
GameSpec single_state(double u, double lambda, double rho) {
    GameSpec g;
    g.n_players = 1;
    g.n_actions = 1;
    g.n_states = 1;
    g.rho = {rho};
    g.lambda = {lambda};
    sparse::CooMatrix coo(1, 1);
    coo.push_back(0, 0, 0.0);
    g.nature = ctmc::validate_generator(sparse::coo_to_csr(coo));
    g.transitions = {0};
    g.flow_payoff = {u};
    g.choice_payoff = {0.0};
    g.inert_action = {0};
    validate(g);
    return g;
}

// Per-step rate from a least-squares fit of log r against the iteration
// count, over entries above `floor`. Single-step ratios oscillate when the
// subdominant eigenvalues are complex, so one ratio is not the rate.
double asymptotic_ratio(const std::vector<double>& r, double floor) {
    double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t k = 0; k < r.size() && r[k] > floor; ++k) {
        const double x = static_cast<double>(k), y = std::log(r[k]);
        n += 1, sx += x, sy += y, sxx += x * x, sxy += x * y;
    }
    return std::exp((n * sxy - sx * sy) / (n * sxx - sx * sx));
}

double sup_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

void expect_ratios_below(const std::vector<double>& r, double bound, const char* what) {
    ASSERT_GE(r.size(), 50u) << what;
    for (std::size_t k = 1; k < r.size(); ++k) {
        if (r[k - 1] < 1e-11) break;
        // Absolute allowance of a few ulps of values of order 100.
        EXPECT_LE(r[k], bound * r[k - 1] + 1e-12) << what << " iteration " << k;
    }
}

}  // namespace

TEST(Bellman, SingleStateClosedForm) {
    const auto g = single_state(1.0, 1.0, 0.05);
    const auto beliefs = CcpProfile::uniform(1, 1, 1);
    const auto r = value_iterate(g, beliefs, 0, std::vector<double>{0.0}, {1e-10});
    EXPECT_TRUE(r.report.converged);
    EXPECT_NEAR(r.value[0], (1.0 + 0.5772156649015329) / 0.05, 1e-9);
    EXPECT_NEAR(r.value[0], 31.54431329803066, 1e-9);

    const auto nk = newton_kantorovich(g, beliefs, 0, std::vector<double>{0.0});
    EXPECT_EQ(nk.report.iterations, 2u);  // one Newton step, then the check
    EXPECT_NEAR(nk.value[0], 31.54431329803066, 1e-10);
}

TEST(Bellman, Deterministic) {
    const auto g = build_renewal(renewal_params());
    const std::vector<double> v{1, -2, 0.5, 3, 0};
    EXPECT_EQ(bellman_apply(g, renewal_beliefs(5), 0, v), bellman_apply(g, renewal_beliefs(5), 0, v));
}

TEST(Bellman, MatchesScalarReference) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> nd(0.0, 3.0);
    for (double scale : {1.0, 0.5}) {
        auto p = renewal_params(0.1);
        p.shock_scale = scale;
        const auto g = build_renewal(p);
        for (int t = 0; t < 10; ++t) {
            std::vector<double> v(5);
            for (auto& x : v) x = nd(rng);
            EXPECT_LE(sup_diff(bellman_apply(g, renewal_beliefs(5), 0, v), oracle::scalar_bellman(g, v)), 1e-12);
        }
    }
}

TEST(Bellman, DimensionMismatch) {
    const auto g = build_renewal(renewal_params());
    EXPECT_THROW(bellman_apply(g, renewal_beliefs(5), 0, std::vector<double>(4, 0.0)), Error);
    EXPECT_THROW(bellman_apply(g, renewal_beliefs(5), 1, std::vector<double>(5, 0.0)), Error);
}

TEST(Moduli, RenewalValues) {
    const auto g = build_renewal(renewal_params(0.3));
    const auto b = rate_bounds(g);
    EXPECT_DOUBLE_EQ(b.eta_bar, 1.2);
    EXPECT_DOUBLE_EQ(b.eta_low, 1.0);
    EXPECT_DOUBLE_EQ(bellman_modulus(g, 0), 1.2 / 1.3);
    EXPECT_DOUBLE_EQ(uniform_modulus(g, 0), 1.2 / 1.5);
}

TEST(Contraction, BellmanOperatorCertificate) {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> nd(0.0, 5.0);
    const auto rg = build_renewal(renewal_params());
    const auto ep = entry_exit_params();
    const auto eg = build_entry_exit(ep);
    const auto ebel = entry_exit_ccps(ep);
    for (int t = 0; t < 1000; ++t) {
        const bool renewal = t % 2 == 0;
        const auto& g = renewal ? rg : eg;
        const auto& bel = renewal ? renewal_beliefs(5) : ebel;
        const double b = bellman_modulus(g, 0);
        ASSERT_LT(b, 1.0);
        std::vector<double> v(g.n_states), w(g.n_states);
        for (auto& x : v) x = nd(rng);
        for (auto& x : w) x = nd(rng);
        const double lhs = sup_diff(bellman_apply(g, bel, 0, v), bellman_apply(g, bel, 0, w));
        EXPECT_LE(lhs, b * sup_diff(v, w) * (1 + 1e-12));
    }
}

TEST(Contraction, PolicyOperatorCertificate) {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> nd(0.0, 5.0);
    const auto ep = entry_exit_params();
    const auto rep = uniform_representation(build_entry_exit(ep), entry_exit_ccps(ep), 0);
    const std::size_t K = rep.u_eff.size();
    auto apply = [&](const std::vector<double>& v) {
        auto y = sparse::spmv(rep.sigma_matrix, v);
        for (std::size_t k = 0; k < K; ++k) y[k] = rep.u_eff[k] + rep.beta_bar * y[k];
        return y;
    };
    for (int t = 0; t < 1000; ++t) {
        std::vector<double> v(K), w(K);
        for (auto& x : v) x = nd(rng);
        for (auto& x : w) x = nd(rng);
        EXPECT_LE(sup_diff(apply(v), apply(w)), rep.beta_bar * sup_diff(v, w) * (1 + 1e-12));
    }
}

TEST(ValueIteration, PerIterationRatiosBelowModulus) {
    const auto rg = build_renewal(renewal_params());
    const auto r = value_iterate(rg, renewal_beliefs(5), 0, std::vector<double>(5, 0.0));
    EXPECT_TRUE(r.report.converged);
    expect_ratios_below(r.report.residuals, bellman_modulus(rg, 0), "renewal");

    const auto ep = entry_exit_params();
    const auto eg = build_entry_exit(ep);
    const auto e = value_iterate(eg, entry_exit_ccps(ep), 1, std::vector<double>(eg.n_states, 0.0));
    EXPECT_TRUE(e.report.converged);
    expect_ratios_below(e.report.residuals, bellman_modulus(eg, 1), "entry-exit");
}

TEST(ValueIteration, FixedPointStartStopsImmediately) {
    const auto g = build_renewal(renewal_params());
    const auto bel = renewal_beliefs(5);
    const auto star = value_iterate(g, bel, 0, std::vector<double>(5, 0.0), {1e-13});
    const auto again = value_iterate(g, bel, 0, star.value, {1e-10});
    EXPECT_EQ(again.report.iterations, 1u);
    EXPECT_LE(again.report.final_residual, 1e-10);
}

TEST(ValueIteration, DifferentStartsAgree) {
    const auto g = build_renewal(renewal_params());
    const auto bel = renewal_beliefs(5);
    const double tol = 1e-9;
    const auto a = value_iterate(g, bel, 0, std::vector<double>(5, 0.0), {tol});
    const auto b = value_iterate(g, bel, 0, std::vector<double>{100, -50, 3, 7, -20}, {tol});
    EXPECT_LE(sup_diff(a.value, b.value), 2 * tol);
}

TEST(ValueIteration, FallsBackToUniformModulusForStopping) {
    const auto g = build_renewal(renewal_params(0.05));
    ASSERT_GE(bellman_modulus(g, 0), 1.0);
    const double tol = 1e-8;
    const auto r = value_iterate(g, renewal_beliefs(5), 0, std::vector<double>(5, 0.0), {tol});
    EXPECT_TRUE(r.report.converged);
    const auto ref = newton_kantorovich(g, renewal_beliefs(5), 0, r.value, {1e-12});
    EXPECT_LE(sup_diff(r.value, ref.value), tol);
}

TEST(UniformRepresentation, RenewalDecomposition) {
    const auto p = renewal_params();
    const auto g = build_renewal(p);
    const std::vector<double> rep_prob{0.2, 0.1, 0.4, 0.6, 0.9};
    const auto rep = uniform_representation(g, renewal_ccps(rep_prob), 0);
    const double eta0 = p.gamma, eta1 = p.lambda;
    ASSERT_DOUBLE_EQ(rep.eta_bar, eta0 + eta1);
    // Sigma_0 = I + Q0 / eta0, Sigma_1 = I + Q1 / eta1.
    const auto s = oracle::dense(rep.sigma_matrix);
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(5, 5);
    const Eigen::MatrixXd s0 = I + oracle::dense(g.nature.matrix()) / eta0;
    Eigen::MatrixXd q1 = Eigen::MatrixXd::Zero(5, 5);
    for (int k = 1; k < 5; ++k) {
        q1(k, 0) = p.lambda * rep_prob[static_cast<std::size_t>(k)];
        q1(k, k) = -q1(k, 0);
    }
    const Eigen::MatrixXd s1 = I + q1 / eta1;
    const Eigen::MatrixXd mix = eta0 / (eta0 + eta1) * s0 + eta1 / (eta0 + eta1) * s1;
    EXPECT_LE((s - mix).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_GE(mix.minCoeff(), 0.0);
    EXPECT_LE((s.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
    EXPECT_DOUBLE_EQ(rep.beta_bar, 1.2 / 1.5);
}

TEST(UniformRepresentation, ExpectedPayoffForUniformBinaryChoice) {
    auto p = renewal_params();
    p.mu = 0.0;
    const auto g = build_renewal(p);
    const auto c = expected_choice_payoff(g, CcpProfile::uniform(1, 2, 5), 0);
    for (double x : c) EXPECT_NEAR(x, kEulerGamma + std::log(2.0), 1e-15);
}

TEST(UniformRepresentation, LargeDiscountRateLimit) {
    const auto g = build_renewal(renewal_params(1e6));
    const auto rep = uniform_representation(g, CcpProfile::uniform(1, 2, 5), 0);
    EXPECT_LT(rep.beta_bar, 2e-6);
    const auto v = policy_evaluate(rep, PolicyEvaluation::direct);
    EXPECT_LE(sup_diff(v.value, rep.u_eff), 1e-5 * solver::sup_norm(rep.u_eff));
}

TEST(UniformRepresentation, SharesPatternPlusDiagonal) {
    const auto ep = entry_exit_params();
    const auto g = build_entry_exit(ep);
    const auto s = entry_exit_ccps(ep);
    const auto rep = uniform_representation(g, s, 0);
    const auto q = assemble_q(g, s).q;
    EXPECT_EQ(*rep.sigma_matrix.structure(), *q.matrix().structure());
}

TEST(PolicyEvaluation, TrivialCases) {
    UniformRepresentation rep;
    rep.u_eff = {0.0, 0.0};
    rep.beta_bar = 0.9;
    rep.sigma_matrix = sparse::CsrMatrix::identity(2);
    rep.eta_bar = 1.0;
    for (auto m : {PolicyEvaluation::iterative, PolicyEvaluation::direct})
        for (double x : policy_evaluate(rep, m).value) EXPECT_EQ(x, 0.0);

    rep.u_eff = {2.0};
    rep.sigma_matrix = sparse::CsrMatrix::identity(1);
    EXPECT_NEAR(policy_evaluate(rep, PolicyEvaluation::direct).value[0], 20.0, 1e-12);
    EXPECT_NEAR(policy_evaluate(rep, PolicyEvaluation::iterative).value[0], 20.0, 1e-10);
}

TEST(PolicyEvaluation, IterativeAndDirectAgree) {
    const auto g = build_renewal(renewal_params(0.05));
    const auto rep = uniform_representation(g, renewal_ccps(std::vector<double>{0.2, 0.1, 0.4, 0.6, 0.9}), 0);
    const auto it = policy_evaluate(rep, PolicyEvaluation::iterative, {1e-11});
    const auto di = policy_evaluate(rep, PolicyEvaluation::direct);
    EXPECT_LE(sup_diff(it.value, di.value), 1e-10);
    expect_ratios_below(it.report.residuals, rep.beta_bar, "renewal policy evaluation");

    const auto ep = entry_exit_params();
    const auto erep = uniform_representation(build_entry_exit(ep), entry_exit_ccps(ep), 2);
    const auto eit = policy_evaluate(erep, PolicyEvaluation::iterative, {1e-11});
    EXPECT_LE(sup_diff(eit.value, policy_evaluate(erep, PolicyEvaluation::direct).value), 1e-10);
    expect_ratios_below(eit.report.residuals, erep.beta_bar, "entry-exit policy evaluation");
}

TEST(Newton, AgreesWithValueIterationAndConvergesQuadratically) {
    const auto g = build_renewal(renewal_params(0.05));
    const auto bel = renewal_beliefs(5);
    const auto vi = value_iterate(g, bel, 0, std::vector<double>(5, 0.0), {1e-12});
    NewtonOptions opt;
    opt.warm_start_sweeps = 20;
    opt.tol = 1e-10;
    const auto nk = newton_kantorovich(g, bel, 0, std::vector<double>(5, 0.0), opt);
    EXPECT_TRUE(nk.report.converged);
    EXPECT_LE(nk.report.iterations, 11u);  // at most 10 Newton steps plus the final check
    EXPECT_LE(sup_diff(vi.value, nk.value), 1e-10);

    // Fixed-point start: one evaluation.
    const auto again = newton_kantorovich(g, bel, 0, nk.value, {1e-8});
    EXPECT_EQ(again.report.iterations, 1u);
}

TEST(Newton, ResidualRoughlySquares) {
    const auto g = build_renewal(renewal_params(0.05));
    const auto r = newton_kantorovich(g, renewal_beliefs(5), 0, std::vector<double>(5, 0.0), {1e-14});
    const auto& res = r.report.residuals;
    std::vector<double> slopes;
    for (std::size_t k = 2; k < res.size(); ++k) {
        if (res[k] < 1e-13 || res[k - 1] > 0.1) continue;
        slopes.push_back((std::log(res[k]) - std::log(res[k - 1])) / (std::log(res[k - 1]) - std::log(res[k - 2])));
    }
    ASSERT_FALSE(slopes.empty());
    EXPECT_GE(slopes.back(), 1.7);
}

TEST(FixedPoint, ThreeMethodsAgreeAtBestResponse) {
    struct Case {
        GameSpec g;
        CcpProfile beliefs;
    };
    const auto ep = entry_exit_params();
    std::vector<Case> cases{{build_renewal(renewal_params(0.05)), renewal_beliefs(5)},
                            {build_entry_exit(ep), entry_exit_ccps(ep)}};
    for (const auto& c : cases) {
        const std::size_t K = c.g.n_states;
        const auto vi = value_iterate(c.g, c.beliefs, 0, std::vector<double>(K, 0.0), {1e-11});
        const auto nk = newton_kantorovich(c.g, c.beliefs, 0, std::vector<double>(K, 0.0), {1e-11, 100, 20});
        const auto sigma = best_response(c.g, c.beliefs, 0, nk.value);
        const auto pe = policy_evaluate(uniform_representation(c.g, sigma, 0), PolicyEvaluation::direct);
        EXPECT_LE(sup_diff(vi.value, nk.value), 1e-8);
        EXPECT_LE(sup_diff(pe.value, nk.value), 1e-8);
        // The uniform operator has the same fixed point.
        EXPECT_LE(sup_diff(uniform_bellman_apply(c.g, c.beliefs, 0, nk.value), nk.value), 1e-9);
    }
}

TEST(Rvi, SpanContractionRateAndLevel) {
    const auto g = build_renewal(renewal_params(0.05));
    const std::vector<double> prob{0.3, 0.1, 0.4, 0.6, 0.9};
    const auto rep = uniform_representation(g, renewal_ccps(prob), 0);
    const double gamma2 = oracle::second_eigen_modulus(oracle::dense(rep.sigma_matrix));
    const auto r = relative_value_iterate(rep, std::vector<double>(5, 0.0), {1e-11});
    ASSERT_TRUE(r.report.converged);
    const auto& res = r.report.residuals;
    const double ratio = asymptotic_ratio(res, 1e-10);
    EXPECT_LE(ratio, rep.beta_bar * gamma2 + 0.01);
    const auto direct = policy_evaluate(rep, PolicyEvaluation::direct);
    EXPECT_LE(sup_diff(r.value, direct.value), 1e-8);
}

TEST(Rvi, FasterThanPolicyEvaluationNearNoDiscounting) {
    const auto g = build_renewal(renewal_params(1e-4));
    const std::vector<double> prob{0.3, 0.1, 0.4, 0.6, 0.9};
    const auto rep = uniform_representation(g, renewal_ccps(prob), 0);
    const auto rvi = relative_value_iterate(rep, std::vector<double>(5, 0.0), {1e-8});
    const auto pe = policy_evaluate(rep, PolicyEvaluation::iterative, {1e-8});
    EXPECT_TRUE(rvi.report.converged);
    EXPECT_LT(rvi.report.iterations, pe.report.iterations);
}

TEST(Rvi, FixedPointStart) {
    const auto g = build_renewal(renewal_params(0.05));
    const auto rep = uniform_representation(g, CcpProfile::uniform(1, 2, 5), 0);
    const auto v = policy_evaluate(rep, PolicyEvaluation::direct).value;
    const auto r = relative_value_iterate(rep, v, {1e-9});
    EXPECT_EQ(r.report.iterations, 1u);
    EXPECT_LE(sup_diff(r.value, v), 1e-9);
}

TEST(Ccp, FromValue) {
    auto p = renewal_params();
    p.mu = 0.0;
    const auto g = build_renewal(p);
    // All continuation and replacement values equal -> 1/2.
    const auto flat = ccp_from_value(g, 0, std::vector<double>(5, 1.0));
    for (double x : flat) EXPECT_DOUBLE_EQ(x, 0.5);

    p.shock_scale = 0.7;
    const auto g2 = build_renewal(p);
    const std::vector<double> v{2.0, 0.0, 0.5, 1.0, -1.0};
    const auto c = ccp_from_value(g2, 0, v);
    for (std::size_t k = 0; k < 5; ++k) {
        EXPECT_NEAR(c[5 + k], oracle::logistic((v[0] - v[k]) / 0.7), 1e-15);
        EXPECT_NEAR(c[k] + c[5 + k], 1.0, 1e-15);
    }
}

TEST(Ccp, SelfConsistencyAtOptimum) {
    const auto g = build_renewal(renewal_params(0.05));
    const auto bel = renewal_beliefs(5);
    const auto nk = newton_kantorovich(g, bel, 0, std::vector<double>(5, 0.0), {1e-12, 100, 20});
    const auto sigma = best_response(g, bel, 0, nk.value);
    const auto rep = uniform_representation(g, sigma, 0);
    EXPECT_LE(sup_diff(policy_evaluate(rep, PolicyEvaluation::iterative, {1e-11}).value, nk.value), 1e-8);
}

TEST(Norms, SupAndSpan) {
    const std::vector<double> x{-3.0, 1.0, 2.5};
    EXPECT_EQ(sup_norm(x), 3.0);
    EXPECT_EQ(span_seminorm(x), 5.5);
}

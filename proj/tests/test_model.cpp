#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <random>

#include "ctdc/error.hpp"
#include "ctdc/model.hpp"
#include "oracles.hpp"

using namespace ctdc;
using namespace ctdc::model;
using sparse::CsrMatrix;

namespace {

const std::vector<double> kReplace{0.0, 0.1, 0.4, 0.6, 0.9};

// Dense generator of the myopic entry-exit game, one (i, k) at a time.
Eigen::MatrixXd entry_exit_dense(const EntryExitParams& p) {
    const std::size_t D = p.demand, K = entry_exit_states(p.players, D);
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(K));
    for (std::size_t mask = 0; mask < (std::size_t{1} << p.players); ++mask)
        for (std::size_t d = 0; d < D; ++d) {
            const auto k = static_cast<Eigen::Index>(mask * D + d);
            if (d + 1 < D) q(k, k + 1) += p.gamma;
            if (d > 0) q(k, k - 1) += p.gamma;
            const double pr = oracle::logistic(p.theta_ec + p.theta_rn * std::popcount(mask) +
                                               p.theta_d * static_cast<double>(d + 1));
            for (std::size_t i = 0; i < p.players; ++i) {
                const bool active = (mask >> i) & 1U;
                const auto l = static_cast<Eigen::Index>((mask ^ (std::size_t{1} << i)) * D + d);
                q(k, l) += p.lambda * (active ? 1.0 - pr : pr);
            }
            q(k, k) = -(q.row(k).sum() - q(k, k));
        }
    return q;
}

double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).cwiseAbs().maxCoeff(); }

std::vector<double> theta_of(const EntryExitParams& p) {
    return {p.theta_ec, p.theta_rn, p.theta_d, p.lambda, p.gamma};
}

}  // namespace

TEST(Shocks, LogitExpectedShock) {
    const ShockSpec logit;
    EXPECT_NEAR(expected_shock(logit, 0, 1.0), 0.577215665, 1e-9);
    EXPECT_NEAR(expected_shock(logit, 1, 0.5), 1.270362845, 1e-9);
    ShockSpec scaled;
    scaled.scale = 2.0;
    EXPECT_NEAR(expected_shock(scaled, 1, 0.5), 2.0 * (kEulerGamma + std::log(2.0)), 1e-12);
    EXPECT_THROW(expected_shock(logit, 0, 0.0), Error);
    EXPECT_THROW(expected_shock(logit, 0, 1.5), Error);
}

TEST(Shocks, ProbitExpectedShock) {
    ShockSpec probit;
    probit.family = ShockFamily::probit;
    EXPECT_NEAR(expected_shock(probit, 1, 0.5), 0.5641895835, 1e-9);
    // E[eps_1 | 1 chosen] + E[eps_0 | 0 chosen] at p = 0.5 by symmetry.
    EXPECT_NEAR(expected_shock(probit, 0, 0.5), 0.5641895835, 1e-9);
    EXPECT_THROW(expected_shock(probit, 2, 0.5), Error);
}

TEST(Shocks, EmaxAndChoiceProbabilities) {
    const ShockSpec logit;
    const std::vector<double> x{1.0, -0.5, 2.0};
    double s = 0.0;
    for (double xi : x) s += std::exp(xi);
    EXPECT_NEAR(emax(logit, x), std::log(s) + kEulerGamma, 1e-14);
    // Large utilities do not overflow.
    const std::vector<double> big{1000.0, 1000.0};
    EXPECT_NEAR(emax(logit, big), 1000.0 + std::log(2.0) + kEulerGamma, 1e-10);

    std::vector<double> p(3);
    choice_probabilities(logit, x, p);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(p[j], std::exp(x[j]) / s, 1e-15);

    const std::vector<double> gap{0.0, 0.7};
    std::vector<double> p2(2);
    choice_probabilities(logit, gap, p2);
    EXPECT_NEAR(p2[1], oracle::logistic(0.7), 1e-15);

    ShockSpec probit;
    probit.family = ShockFamily::probit;
    const std::vector<double> zero{0.0, 0.0};
    EXPECT_NEAR(emax(probit, zero), 1.0 / std::sqrt(M_PI), 1e-12);
    choice_probabilities(probit, gap, p2);
    EXPECT_NEAR(p2[1], 0.5 * std::erfc(-0.7 / std::sqrt(2.0) / std::sqrt(2.0)), 1e-12);
}

TEST(Renewal, NatureIsBanded) {
    RenewalParams rp;
    rp.gamma = 0.2;
    const auto g = build_renewal(rp);
    const auto q0 = oracle::dense(g.nature.matrix());
    for (int k = 0; k < 5; ++k)
        for (int l = 0; l < 5; ++l) {
            double expect = 0.0;
            if (k < 4 && l == k) expect = -0.2;
            if (k < 4 && l == k + 1) expect = 0.2;
            EXPECT_DOUBLE_EQ(q0(k, l), expect);
        }
    EXPECT_EQ(g.next_state(0, 1, 3), 0u);
    EXPECT_EQ(g.u(0, 2), rp.beta * 3);
    EXPECT_EQ(g.psi(0, 1, 4), -rp.mu);
    EXPECT_TRUE(g.inert(0, 1, 0));
    EXPECT_NO_THROW(validate(g));
}

TEST(Renewal, SmallestChain) {
    RenewalParams rp;
    rp.states = 2;
    const auto g = build_renewal(rp);
    EXPECT_DOUBLE_EQ(g.nature.matrix().at(0, 1), rp.gamma);
    EXPECT_DOUBLE_EQ(g.nature.matrix().at(1, 0), 0.0);
    EXPECT_DOUBLE_EQ(g.nature.matrix().at(1, 1), 0.0);
    rp.states = 1;
    EXPECT_THROW(build_renewal(rp), Error);
}

TEST(Renewal, AggregateGeneratorReferenceValues) {
    RenewalParams rp;
    rp.gamma = 0.2;
    rp.lambda = 1.0;
    const auto g = build_renewal(rp);
    const auto a = assemble_q(g, renewal_ccps(kReplace));
    const auto& q = a.q.matrix();
    const std::vector<double> values{-0.2, 0.2, 0.1, -0.3, 0.2, 0.4, -0.6, 0.2, 0.6, -0.8, 0.2, 0.9, -0.9};
    EXPECT_EQ(std::vector<std::size_t>(q.row_ptr().begin(), q.row_ptr().end()),
              (std::vector<std::size_t>{0, 2, 5, 8, 11, 13}));
    EXPECT_EQ(std::vector<std::size_t>(q.col_idx().begin(), q.col_idx().end()),
              (std::vector<std::size_t>{0, 1, 0, 1, 2, 0, 2, 3, 0, 3, 4, 0, 4}));
    for (std::size_t p = 0; p < values.size(); ++p) EXPECT_NEAR(q.values()[p], values[p], 1e-15);
}

TEST(Renewal, ContinuationLimitRecoversNature) {
    const auto g = build_renewal({});
    const std::vector<double> tiny(5, 1e-12);
    const auto q = oracle::dense(assemble_q(g, renewal_ccps(tiny)).q.matrix());
    EXPECT_LE(max_abs_diff(q, oracle::dense(g.nature.matrix())), 2e-12);
}

TEST(Renewal, GammaDerivative) {
    const RenewalModel m({}, kReplace);
    auto theta = m.parameters();
    const std::vector<std::string> wrt{"gamma"};
    const auto d = oracle::dense(assemble_q_derivatives(m, theta, wrt)[0]);
    for (int k = 0; k < 5; ++k)
        for (int l = 0; l < 5; ++l) {
            double expect = 0.0;
            if (k < 4 && l == k + 1) expect = 1.0;
            if (k < 4 && l == k) expect = -1.0;
            EXPECT_DOUBLE_EQ(d(k, l), expect);
        }
    const std::vector<std::string> bad{"mu"};
    EXPECT_THROW(assemble_q_derivatives(m, theta, bad), Error);
}

TEST(EntryExit, StateCounts) {
    EntryExitParams p;
    EXPECT_EQ(build_entry_exit(p).n_states, 160u);
    p.players = 1;
    p.demand = 1;
    const auto g = build_entry_exit(p);
    EXPECT_EQ(g.n_states, 2u);
    EXPECT_EQ(g.nature.matrix().nnz(), 2u);  // diagonal only
    const auto q = oracle::dense(assemble_q(g, entry_exit_ccps(p)).q.matrix());
    EXPECT_GT(q(0, 1), 0.0);
    EXPECT_GT(q(1, 0), 0.0);
}

TEST(EntryExit, ActivityProbability) {
    EXPECT_NEAR(activity_probability(-0.5, -0.05, 0.1, 0, 1), 0.401312339887548, 1e-12);
    for (std::size_t n = 0; n < 4; ++n)
        for (std::size_t d = 1; d < 4; ++d) EXPECT_EQ(activity_probability(0, 0, 0, n, d), 0.5);
}

TEST(EntryExit, GeneratorMatchesBruteForce) {
    EntryExitParams p;
    p.players = 2;
    p.demand = 2;
    const auto g = build_entry_exit(p);
    ASSERT_EQ(g.n_states, 8u);
    const auto a = assemble_q(g, entry_exit_ccps(p));
    EXPECT_LE(max_abs_diff(oracle::dense(a.q.matrix()), entry_exit_dense(p)), 1e-15);
    const auto& q = a.q.matrix();
    for (std::size_t k = 0; k < 8; ++k) {
        const auto off = q.row_ptr()[k + 1] - q.row_ptr()[k] - 1;
        EXPECT_LE(off, p.players + 2);
    }
}

TEST(EntryExit, DiagonalBoundedByUniformRate) {
    for (std::size_t n = 1; n <= 4; ++n) {
        EntryExitParams p;
        p.players = n;
        p.demand = 3;
        p.lambda = 1.3;
        p.gamma = 0.7;
        const auto q = assemble_q(build_entry_exit(p), entry_exit_ccps(p)).q;
        EXPECT_LE(q.max_exit_rate(), n * p.lambda + 2 * p.gamma + 1e-12);
    }
}

TEST(EntryExit, CcpsSumToOne) {
    const EntryExitParams p;
    const auto s = entry_exit_ccps(p);
    const auto g = build_entry_exit(p);
    EXPECT_NO_THROW(validate(s, g));
    for (std::size_t i = 0; i < p.players; ++i)
        for (std::size_t k = 0; k < g.n_states; ++k) EXPECT_NEAR(s(i, 0, k) + s(i, 1, k), 1.0, 1e-15);
}

TEST(EntryExit, DerivativesMatchFiniteDifferences) {
    EntryExitParams p;
    p.players = 3;
    p.demand = 3;
    const EntryExitModel m(p);
    const auto params = m.parameters();
    const auto theta = theta_of(p);
    const auto d = assemble_q_derivatives(m, params, params.names);
    ASSERT_EQ(d.size(), 5u);
    const auto inst = m.instantiate(theta, false);
    const auto pattern = generator_pattern(inst.spec);
    const double h = 1e-7;
    for (std::size_t a = 0; a < 5; ++a) {
        EXPECT_TRUE(d[a].structure() == pattern.structure() || d[a].nnz() <= pattern.nnz());
        auto up = theta, dn = theta;
        up[a] += h;
        dn[a] -= h;
        const auto iu = m.instantiate(up, false), id = m.instantiate(dn, false);
        const Eigen::MatrixXd fd = (oracle::dense(assemble_q(iu.spec, iu.ccp).q.matrix()) -
                                    oracle::dense(assemble_q(id.spec, id.ccp).q.matrix())) /
                                   (2 * h);
        const auto an = oracle::dense(d[a]);
        EXPECT_LE(max_abs_diff(an, fd), 1e-7) << params.names[a];
        EXPECT_LE(an.rowwise().sum().cwiseAbs().maxCoeff(), 1e-14) << params.names[a];
    }
}

TEST(EntryExit, EntryCostDerivativeHasLogisticSlope) {
    EntryExitParams p;
    p.players = 2;
    p.demand = 2;
    const EntryExitModel m(p);
    const std::vector<std::string> wrt{"theta_ec"};
    const auto d = oracle::dense(assemble_q_derivatives(m, m.parameters(), wrt)[0]);
    // State mask 0, demand level 1 -> mask 1.
    const double pr = activity_probability(p.theta_ec, p.theta_rn, p.theta_d, 0, 1);
    EXPECT_NEAR(d(0, 2), p.lambda * pr * (1 - pr), 1e-15);
    // State mask 1 (firm 0 active), demand level 1 -> exit to mask 0.
    const double p1 = activity_probability(p.theta_ec, p.theta_rn, p.theta_d, 1, 1);
    EXPECT_NEAR(d(2, 0), -p.lambda * p1 * (1 - p1), 1e-15);
}

TEST(EntryExit, VacuousParameterGivesZeroMatrix) {
    EntryExitParams p;
    p.players = 2;
    p.demand = 1;
    const EntryExitModel m(p);
    const std::vector<std::string> wrt{"gamma"};
    const auto d = assemble_q_derivatives(m, m.parameters(), wrt)[0];
    for (double v : d.values()) EXPECT_EQ(v, 0.0);
}

TEST(Assembly, PatternReuseOnlyRewritesValues) {
    EntryExitParams p;
    p.players = 3;
    p.demand = 2;
    const EntryExitModel m(p);
    const auto i1 = m.instantiate(theta_of(p), false);
    const auto pattern = generator_pattern(i1.spec);
    const auto q1 = assemble_q(i1.spec, i1.ccp, &pattern);
    const auto builds = sparse::structure_builds();
    auto theta = theta_of(p);
    theta[0] = 0.4;
    theta[4] = 1.1;
    const auto i2 = m.instantiate(theta, false);
    const auto q2 = assemble_q(i2.spec, i2.ccp, &pattern);
    EXPECT_EQ(sparse::structure_builds(), builds);
    EXPECT_TRUE(q1.q.matrix().shares_structure_with(q2.q.matrix()));
    EXPECT_NE(std::vector<double>(q1.q.matrix().values().begin(), q1.q.matrix().values().end()),
              std::vector<double>(q2.q.matrix().values().begin(), q2.q.matrix().values().end()));

    // Fresh patterns for two parameter values are equal arrays.
    EXPECT_EQ(*assemble_q(i1.spec, i1.ccp).q.matrix().structure(), *assemble_q(i2.spec, i2.ccp).q.matrix().structure());
}

TEST(Assembly, RandomCcpsGiveValidGenerators) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    EntryExitParams p;
    p.players = 3;
    p.demand = 4;
    const auto g = build_entry_exit(p);
    for (int t = 0; t < 20; ++t) {
        CcpProfile s(g.n_players, 2, g.n_states);
        for (std::size_t i = 0; i < g.n_players; ++i)
            for (std::size_t k = 0; k < g.n_states; ++k) {
                s(i, 1, k) = u(rng);
                s(i, 0, k) = 1.0 - s(i, 1, k);
            }
        EXPECT_NO_THROW({
            const auto a = assemble_q(g, s);
            ctmc::validate_generator(a.q.matrix());
        });
    }
}

TEST(Assembly, RejectsBadInputs) {
    const auto g = build_renewal({});
    CcpProfile bad = renewal_ccps(kReplace);
    bad(0, 1, 2) = 0.7;  // row no longer sums to one
    EXPECT_THROW(assemble_q(g, bad), Error);
    EXPECT_THROW(assemble_q(g, CcpProfile(1, 2, 4)), Error);

    auto broken = g;
    broken.transitions[broken.slot(0, 1, 3)] = 9;
    EXPECT_THROW(validate(broken), Error);
}

TEST(Validation, GameSpecRules) {
    auto g = build_renewal({});
    auto cont = g;
    cont.transitions[cont.slot(0, 0, 2)] = 3;
    EXPECT_THROW(validate(cont), Error);
    auto costly = g;
    costly.choice_payoff[costly.slot(0, 0, 2)] = 1.0;
    EXPECT_THROW(validate(costly), Error);
    auto same = g;
    same.inert_action[same.slot(0, 1, 0)] = 0;  // replace in state 0 collides with continuation
    EXPECT_THROW(validate(same), Error);
    auto rate = g;
    rate.lambda[0] = 0.0;
    EXPECT_THROW(validate(rate), Error);
    auto disc = g;
    disc.rho[0] = -1.0;
    EXPECT_THROW(validate(disc), Error);
}

TEST(Validation, CcpProfileOpenInterval) {
    const auto g = build_renewal({});
    EXPECT_THROW(validate(renewal_ccps(kReplace), g), Error);  // replace prob 0 in state 0
    std::vector<double> inside{0.05, 0.1, 0.4, 0.6, 0.9};
    EXPECT_NO_THROW(validate(renewal_ccps(inside), g));
}

TEST(Parameters, NamesAndBounds) {
    const EntryExitModel m(EntryExitParams{});
    const auto p = m.parameters();
    EXPECT_EQ(p.names, (std::vector<std::string>{"theta_ec", "theta_rn", "theta_d", "lambda", "gamma"}));
    EXPECT_EQ(p["lambda"], 1.0);
    EXPECT_EQ(p.lower[3], 1e-4);
    EXPECT_EQ(p.upper[0], 10.0);
    EXPECT_THROW(p.index_of("delta"), Error);
}

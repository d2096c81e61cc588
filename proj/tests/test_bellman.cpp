#include <gtest/gtest.h>

#include <random>

#include <cvar/bellman.hpp>
#include <cvar/crater_walk.hpp>

#include "test_models.hpp"

using namespace cvar;

namespace {

QTable random_table(const TabularMdp& mdp, const BudgetGrid& g, std::mt19937_64& rng, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    QTable q(mdp.n_states, g, mdp.n_actions);
    for (double& v : q.data()) v = u(rng);
    return q;
}

/// Random table that is non-decreasing along the budget axis for every (s, a).
QTable random_monotone_table(const TabularMdp& mdp, const BudgetGrid& g, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> step(0.0, 1.0), start(-100.0, 0.0);
    QTable q(mdp.n_states, g, mdp.n_actions);
    for (state_t s = 0; s < mdp.n_states; ++s)
        for (action_t a = 0; a < mdp.n_actions; ++a) {
            double v = start(rng);
            for (budget_t k = 0; k < g.size(); ++k) {
                q(s, k, a) = v;
                v += step(rng) * (step(rng) < 0.3 ? 0.0 : 1.0);
            }
        }
    return q;
}

}  // namespace

TEST(SweepTe, ZeroTableOnAbsorbingStateStaysZero) {
    const auto mdp = models::single_absorbing();
    const BudgetGrid g(10.0, 5);
    for (auto mode : {RoundingMode::Lower, RoundingMode::Upper}) {
        const auto res = sweep_T_e(mdp, g, mode, QTable(1, g, 1));
        EXPECT_EQ(res.q.sup_norm(), 0.0);
        EXPECT_EQ(res.delta_sup, 0.0);
    }
}

TEST(SweepTe, FromZeroGivesTransformedReward) {
    const auto mdp = build_crater_walk({});
    const BudgetGrid g(mdp.r_gamma(), 20);
    const auto res = sweep_T_e(mdp, g, RoundingMode::Lower, QTable(mdp.n_states, g, mdp.n_actions));
    for (state_t s = 0; s < mdp.n_states; ++s)
        for (budget_t k = 0; k < g.size(); ++k)
            for (action_t a = 0; a < mdp.n_actions; ++a)
                ASSERT_EQ(res.q(s, k, a), transformed_reward(g.value(k), mdp.reward[s][a]));
}

TEST(SweepTe, MatchesDirectFormulaOnRandomTable) {
    const auto mdp = models::risky_shortcut();
    const BudgetGrid g(mdp.r_gamma(), 9);
    std::mt19937_64 rng(1);
    const QTable q = random_table(mdp, g, rng, 30.0);
    for (auto mode : {RoundingMode::Lower, RoundingMode::Upper}) {
        const auto res = sweep_T_e(mdp, g, mode, q);
        for (state_t s = 0; s < mdp.n_states; ++s)
            for (budget_t k = 0; k < g.size(); ++k)
                for (action_t a = 0; a < mdp.n_actions; ++a) {
                    const double r = mdp.reward[s][a];
                    const budget_t kn = g.round(mode, g.project((r + g.value(k)) / mdp.gamma));
                    double expect = transformed_reward(g.value(k), r);
                    for (state_t sp = 0; sp < mdp.n_states; ++sp) {
                        double best = -1e300;
                        for (action_t b = 0; b < mdp.n_actions; ++b) best = std::max(best, q(sp, kn, b));
                        expect += mdp.gamma * mdp.transition[s][a][sp] * best;
                    }
                    EXPECT_NEAR(res.q(s, k, a), expect, 1e-12);
                }
    }
}

TEST(SweepTe, ContractionOnRandomPairs) {
    const auto mdp = build_crater_walk({});
    const BudgetGrid g(mdp.r_gamma(), 25);
    std::mt19937_64 rng(2024);
    AugmentedModel lower(mdp, g, RoundingMode::Lower), upper(mdp, g, RoundingMode::Upper);
    QTable o1, o2;
    for (int i = 0; i < 20; ++i) {
        const QTable q1 = random_table(mdp, g, rng, 100.0), q2 = random_table(mdp, g, rng, 100.0);
        const double d = sup_distance(q1, q2);
        for (const AugmentedModel* m : {&lower, &upper})
            for (auto scheme : {RewardScheme::Transformed, RewardScheme::Zero}) {
                m->sweep(q1, o1, scheme);
                m->sweep(q2, o2, scheme);
                EXPECT_LE(sup_distance(o1, o2), mdp.gamma * d + 1e-12);
            }
    }
}

TEST(SweepZeroReward, ZeroIsFixedAndConstantsScale) {
    const auto mdp = build_crater_walk({});
    const BudgetGrid g(mdp.r_gamma(), 10);
    const auto zero = sweep_zero_reward(mdp, g, RoundingMode::Lower, QTable(mdp.n_states, g, mdp.n_actions));
    EXPECT_EQ(zero.q.sup_norm(), 0.0);

    const double c = -7.5;
    const auto res = sweep_zero_reward(mdp, g, RoundingMode::Upper, QTable(mdp.n_states, g, mdp.n_actions, c));
    for (double v : res.q.data()) EXPECT_NEAR(v, mdp.gamma * c, 1e-12);
}

TEST(SweepZeroReward, DecaysGeometricallyToZero) {
    const auto mdp = build_crater_walk({});
    const BudgetGrid g(mdp.r_gamma(), 10);
    std::mt19937_64 rng(11);
    QTable q = random_table(mdp, g, rng, 100.0);
    const double start = q.sup_norm();
    AugmentedModel model(mdp, g, RoundingMode::Lower);
    QTable next;
    for (int k = 1; k <= 200; ++k) {
        model.sweep(q, next, RewardScheme::Zero);
        std::swap(q, next);
        ASSERT_LE(q.sup_norm(), std::pow(mdp.gamma, k) * start * (1 + 1e-12));
    }
}

TEST(SweepOrdering, LowerStaysBelowUpperFromZero) {
    const auto mdp = build_crater_walk({});
    const BudgetGrid g(mdp.r_gamma(), 15);
    AugmentedModel lower(mdp, g, RoundingMode::Lower), upper(mdp, g, RoundingMode::Upper);
    QTable ql(mdp.n_states, g, mdp.n_actions), qu = ql, tmp;
    for (int k = 0; k < 60; ++k) {
        lower.sweep(ql, tmp);
        std::swap(ql, tmp);
        upper.sweep(qu, tmp);
        std::swap(qu, tmp);
        for (std::size_t i = 0; i < ql.data().size(); ++i) ASSERT_LE(ql.data()[i], qu.data()[i] + 1e-12) << k;
    }
}

TEST(SweepMonotonicity, PreservesNonDecreasingBudgetAxis) {
    const auto mdp = build_crater_walk({});
    const BudgetGrid g(mdp.r_gamma(), 30);
    std::mt19937_64 rng(9);
    for (auto mode : {RoundingMode::Lower, RoundingMode::Upper}) {
        const QTable q = random_monotone_table(mdp, g, rng);
        const auto res = sweep_T_e(mdp, g, mode, q);
        for (state_t s = 0; s < mdp.n_states; ++s)
            for (action_t a = 0; a < mdp.n_actions; ++a)
                for (budget_t k = 1; k < g.size(); ++k) ASSERT_LE(res.q(s, k - 1, a), res.q(s, k, a) + 1e-12);
    }
}

TEST(AugmentedModel, SuccessorTableMatchesNextBudget) {
    const auto mdp = build_crater_walk({});
    const BudgetGrid g(mdp.r_gamma(), 40);
    const AugmentedModel m(mdp, g, RoundingMode::Upper);
    for (state_t s = 0; s < mdp.n_states; ++s)
        for (action_t a = 0; a < mdp.n_actions; ++a)
            for (budget_t k = 0; k < g.size(); ++k)
                ASSERT_EQ(m.successor(s, a, k), g.next_budget(RoundingMode::Upper, k, mdp.reward[s][a], mdp.gamma));
}

TEST(GreedyValues, MaxOverActions) {
    const auto one = models::self_loop(-1.0, 0.5);
    const BudgetGrid g(2.0, 2);
    QTable q(1, g, 1);
    for (budget_t k = 0; k < g.size(); ++k) q(0, k, 0) = static_cast<double>(k) - 3.0;
    const ValueTable v = greedy_values(q);
    for (budget_t k = 0; k < g.size(); ++k) EXPECT_EQ(v(0, k), q(0, k, 0));

    QTable q2(2, g, 3);
    for (state_t s = 0; s < 2; ++s)
        for (budget_t k = 0; k < g.size(); ++k)
            for (action_t a = 0; a < 3; ++a) q2(s, k, a) = (a == (s + k) % 3) ? 5.0 + k : -1.0 * a;
    const ValueTable v2 = greedy_values(q2);
    for (state_t s = 0; s < 2; ++s)
        for (budget_t k = 0; k < g.size(); ++k) EXPECT_EQ(v2(s, k), 5.0 + k);
}

TEST(QTableJson, RoundTrip) {
    const BudgetGrid g(100.0, 3);
    QTable q(2, g, 2);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-5, 5);
    for (double& v : q.data()) v = u(rng);
    const auto [back, h] = qtable_from_json(nlohmann::json::parse(to_json(q, {RoundingMode::Upper, 0.9, 42}).dump()));
    EXPECT_EQ(back.data(), q.data());
    EXPECT_EQ(back.n_points(), 7u);
    EXPECT_EQ(h.mode, RoundingMode::Upper);
    EXPECT_EQ(h.env_fingerprint, 42u);
}

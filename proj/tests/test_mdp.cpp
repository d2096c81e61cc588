#include <gtest/gtest.h>

#include <cvar/crater_walk.hpp>
#include <cvar/mdp.hpp>

#include "test_models.hpp"

using namespace cvar;

TEST(Validate, WellFormedModelHasNoViolations) {
    EXPECT_TRUE(validate(models::two_state()).empty());
    EXPECT_TRUE(validate(models::mixed_sign_chain()).empty());
}

TEST(Validate, RowNotSummingToOneIsReported) {
    auto m = models::two_state();
    m.transition[0][1] = {0.9, 0.0};
    const auto v = validate(m);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_NE(v[0].find("(s=0, a=1)"), std::string::npos) << v[0];
}

TEST(Validate, RewardBeyondBoundIsReported) {
    auto m = models::two_state();
    m.reward[0][0] = -m.r_max - 1.0;
    const auto v = validate(m);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_NE(v[0].find("(s=0, a=0)"), std::string::npos);
}

TEST(Validate, AbsorbingStateWithRewardIsReported) {
    auto m = models::two_state();
    m.reward[1][0] = -0.5;
    EXPECT_EQ(validate(m).size(), 1u);
}

TEST(Validate, NegativeProbabilityAndBadGamma) {
    auto m = models::two_state();
    m.transition[0][0] = {-0.1, 1.1};
    m.gamma = 1.0;
    EXPECT_EQ(validate(m).size(), 2u);
}

TEST(CraterWalk, ReturnBoundIsHundred) {
    const auto mdp = build_crater_walk({});
    EXPECT_EQ(mdp.n_states, 20u);
    EXPECT_EQ(mdp.n_actions, 4u);
    EXPECT_DOUBLE_EQ(mdp.r_max, 10.0);
    EXPECT_NEAR(mdp.r_gamma(), 100.0, 1e-12);
    EXPECT_TRUE(validate(mdp).empty());
}

TEST(CraterWalk, RewardsNonPositiveAndGoalAbsorbing) {
    CraterWalkConfig cfg;
    const auto mdp = build_crater_walk(cfg);
    EXPECT_TRUE(mdp.rewards_nonpositive());
    EXPECT_LE(mdp.max_abs_reward(), mdp.r_max);
    const state_t goal = cfg.index(cfg.goal_cell);
    EXPECT_TRUE(mdp.is_absorbing(goal));
    for (action_t a = 0; a < 4; ++a) {
        EXPECT_EQ(mdp.reward[goal][a], 0.0);
        EXPECT_EQ(mdp.transition[goal][a][goal], 1.0);
    }
    // craters charge the escape penalty on every action, other cells one step
    for (action_t a = 0; a < 4; ++a) {
        EXPECT_EQ(mdp.reward[cfg.index({2, 2})][a], -10.0);
        EXPECT_EQ(mdp.reward[cfg.index({0, 0})][a], -1.0);
    }
}

TEST(CraterWalk, DeterministicWhenNoSlip) {
    CraterWalkConfig cfg;
    cfg.slip_probability = 0.0;
    const auto mdp = build_crater_walk(cfg);
    const state_t s = cfg.index({1, 2});
    EXPECT_EQ(mdp.transition[s][static_cast<std::size_t>(Move::Up)][cfg.index({0, 2})], 1.0);
    EXPECT_EQ(mdp.transition[s][static_cast<std::size_t>(Move::Left)][cfg.index({1, 1})], 1.0);
}

TEST(CraterWalk, SlipSplitAndWallBumps) {
    CraterWalkConfig cfg;  // omega = 0.25
    const auto mdp = build_crater_walk(cfg);
    const double w = 0.25;
    const auto& up = mdp.transition[cfg.index({1, 2})][static_cast<std::size_t>(Move::Up)];
    EXPECT_NEAR(up[cfg.index({0, 2})], 1.0 - w, 1e-15);
    EXPECT_NEAR(up[cfg.index({1, 1})], 4 * w / 9, 1e-15);
    EXPECT_NEAR(up[cfg.index({1, 3})], 4 * w / 9, 1e-15);
    EXPECT_NEAR(up[cfg.index({2, 2})], w / 9, 1e-15);

    // top-left corner moving up: intended and left slip are blocked
    const auto& corner = mdp.transition[cfg.index({0, 0})][static_cast<std::size_t>(Move::Up)];
    EXPECT_NEAR(corner[cfg.index({0, 0})], 1.0 - w + 4 * w / 9, 1e-15);
    EXPECT_NEAR(corner[cfg.index({0, 1})], 4 * w / 9, 1e-15);
    EXPECT_NEAR(corner[cfg.index({1, 0})], w / 9, 1e-15);
}

TEST(CraterWalk, RowsSumToOneForAnySlip) {
    for (double w : {0.0, 0.1, 0.25, 0.5, 0.9, 0.999}) {
        CraterWalkConfig cfg;
        cfg.slip_probability = w;
        const auto mdp = build_crater_walk(cfg);
        for (state_t s = 0; s < mdp.n_states; ++s)
            for (action_t a = 0; a < 4; ++a) {
                double sum = 0.0;
                for (double p : mdp.transition[s][a]) sum += p;
                EXPECT_NEAR(sum, 1.0, 1e-12) << "w=" << w;
            }
    }
}

TEST(CraterWalk, RejectsSlipOutsideUnitInterval) {
    CraterWalkConfig cfg;
    cfg.slip_probability = 1.5;
    EXPECT_THROW(build_crater_walk(cfg), std::invalid_argument);
    cfg.slip_probability = 1.0;
    EXPECT_THROW(build_crater_walk(cfg), std::invalid_argument);
    cfg.slip_probability = -0.1;
    EXPECT_THROW(build_crater_walk(cfg), std::invalid_argument);
}

TEST(CraterWalk, MapTextMatchesDefaultLayout) {
    const auto cfg = crater_walk_from_map({".....", ".....", ".CCC.", "S...G"});
    const auto a = build_crater_walk(cfg);
    const auto b = build_crater_walk({});
    EXPECT_EQ(a.transition, b.transition);
    EXPECT_EQ(a.reward, b.reward);
    EXPECT_EQ(a.initial_state, b.initial_state);

    EXPECT_THROW(crater_walk_from_map({"S..", ".."}), std::invalid_argument);
    EXPECT_THROW(crater_walk_from_map({"S.X", "..G"}), std::invalid_argument);
    EXPECT_THROW(crater_walk_from_map({"S..", "..."}), std::invalid_argument);
}

TEST(RiskNeutral, AbsorbingStateIsZero) {
    const auto v = risk_neutral_value_iteration(models::single_absorbing(0.95), 1e-10);
    EXPECT_EQ(v[0], 0.0);
}

TEST(RiskNeutral, GeometricSeries) {
    const auto v = risk_neutral_value_iteration(models::self_loop(-1.0, 0.9), 1e-10);
    EXPECT_NEAR(v[0], -10.0, 1e-8);
}

TEST(RiskNeutral, CraterWalkIsBoundedFixedPoint) {
    const auto mdp = build_crater_walk({});
    const double tol = 1e-9;
    const auto v = risk_neutral_value_iteration(mdp, tol);
    for (double x : v) {
        EXPECT_LE(x, 0.0);
        EXPECT_GE(x, -100.0);
    }
    // one extra Bellman sweep, written out independently
    for (state_t s = 0; s < mdp.n_states; ++s) {
        double best = -1e300;
        for (action_t a = 0; a < mdp.n_actions; ++a) {
            double q = mdp.reward[s][a];
            for (state_t sp = 0; sp < mdp.n_states; ++sp) q += mdp.gamma * mdp.transition[s][a][sp] * v[sp];
            best = std::max(best, q);
        }
        EXPECT_NEAR(best, v[s], mdp.gamma * tol / (1 - mdp.gamma) + 1e-12);
    }
}

TEST(RiskNeutral, RejectsNonPositiveTolerance) {
    EXPECT_THROW(risk_neutral_value_iteration(models::two_state(), 0.0), std::invalid_argument);
}

TEST(SampleTransition, DeterministicAndAbsorbingRows) {
    const auto m = models::two_state();
    rng_t rng(7);
    for (int i = 0; i < 100; ++i) {
        const auto move = sample_transition(m, 0, 0, rng);
        EXPECT_EQ(move.first, 1u);
        EXPECT_EQ(move.second, -1.0);
        const auto stay = sample_transition(m, 1, 1, rng);
        EXPECT_EQ(stay.first, 1u);
        EXPECT_EQ(stay.second, 0.0);
    }
}

TEST(SampleTransition, FrequenciesMatchRow) {
    CraterWalkConfig cfg;
    const auto mdp = build_crater_walk(cfg);
    const state_t s = cfg.index({1, 2});
    const auto& row = mdp.transition[s][0];
    rng_t rng(12345);
    const int n = 100000;
    std::vector<int> counts(mdp.n_states, 0);
    for (int i = 0; i < n; ++i) ++counts[sample_transition(mdp, s, 0, rng).first];
    for (state_t sp = 0; sp < mdp.n_states; ++sp) {
        const double p = row[sp];
        const double sigma = std::sqrt(n * p * (1 - p));
        EXPECT_NEAR(counts[sp], n * p, 3 * sigma + 1e-9) << "successor " << sp;
    }
}

TEST(SampleTransition, SeedsReproduce) {
    const auto mdp = build_crater_walk({});
    rng_t a(99), b(99);
    for (int i = 0; i < 1000; ++i) {
        const auto s = static_cast<state_t>(i % 19);
        EXPECT_EQ(sample_transition(mdp, s, i % 4, a), sample_transition(mdp, s, i % 4, b));
    }
}

TEST(MdpJson, RoundTripPreservesModel) {
    const auto mdp = build_crater_walk({});
    const auto back = mdp_from_json(nlohmann::json::parse(to_json(mdp).dump()));
    EXPECT_EQ(back.transition, mdp.transition);
    EXPECT_EQ(back.reward, mdp.reward);
    EXPECT_EQ(back.absorbing_states, mdp.absorbing_states);
    EXPECT_EQ(fingerprint(back), fingerprint(mdp));
}

TEST(MdpJson, InvalidDocumentsAreRejected) {
    auto j = to_json(models::two_state());
    j["transition"][0][0] = {0.5, 0.4};
    EXPECT_THROW(mdp_from_json(j), std::invalid_argument);
    nlohmann::json missing = {{"n_states", 1}};
    EXPECT_THROW(mdp_from_json(missing), std::invalid_argument);
}

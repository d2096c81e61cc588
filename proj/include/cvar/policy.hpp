#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "bellman.hpp"
#include "budget_grid.hpp"
#include "mdp.hpp"
#include "q_table.hpp"

namespace cvar {

inline void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0))
        throw std::invalid_argument("risk level alpha must lie in (0, 1], got " + std::to_string(alpha));
}

/// Result of the scan over initial budgets.
struct OuterSolution {
    budget_t z_star = 0;
    double z_value = 0.0;
    double psi_hat = -std::numeric_limits<double>::infinity();
    RoundingMode mode = RoundingMode::Lower;
    double alpha = 1.0;
};

/// J(z) = -z + (-z_- + max_a q(s0, z, a)) / alpha
inline double outer_objective(const QTable& q, state_t s0, budget_t k, double alpha) {
    const double z = q.grid().value(k);
    return -z + (-negative_part(z) + q.max_value(s0, k)) / alpha;
}

/**
 * Exhaustive maximization of J over the grid.
 *
 * Values within 1e-12 (relative) of the running best count as ties; ties go
 * to the smallest |z|, then to the smaller index.
 */
inline OuterSolution outer_optimize(const QTable& q, double alpha, state_t initial_state,
                                    RoundingMode mode = RoundingMode::Lower) {
    check_alpha(alpha);
    if (initial_state >= q.n_states()) throw std::invalid_argument("initial state out of range");
    OuterSolution best;
    best.mode = mode;
    best.alpha = alpha;
    for (budget_t k = 0; k < q.n_points(); ++k) {
        const double j = outer_objective(q, initial_state, k, alpha);
        const double z = q.grid().value(k);
        const double tol = 1e-12 * std::max(1.0, std::abs(best.psi_hat));
        const bool better = k == 0 || j > best.psi_hat + tol;
        const bool tie_closer = std::abs(j - best.psi_hat) <= tol && std::abs(z) < std::abs(best.z_value);
        if (better || tie_closer) {
            best.psi_hat = j;
            best.z_star = k;
            best.z_value = z;
        }
    }
    return best;
}

/// Deterministic action map over (state, budget index).
class PolicyMap {
public:
    PolicyMap() = default;
    PolicyMap(std::size_t n_states, std::size_t n_points)
        : n_points_(n_points), actions_(n_states * n_points, 0) {}

    action_t operator()(state_t s, budget_t k) const { return actions_[s * n_points_ + k]; }
    action_t& operator()(state_t s, budget_t k) { return actions_[s * n_points_ + k]; }
    std::size_t n_points() const { return n_points_; }
    friend bool operator==(const PolicyMap&, const PolicyMap&) = default;

private:
    std::size_t n_points_ = 0;
    std::vector<action_t> actions_;
};

/// Per-entry argmax with ties to the lowest action index.
inline PolicyMap greedy_policy(const QTable& q) {
    PolicyMap pi(q.n_states(), q.n_points());
    for (state_t s = 0; s < q.n_states(); ++s)
        for (budget_t k = 0; k < q.n_points(); ++k) pi(s, k) = q.argmax(s, k);
    return pi;
}

/// Running budget zeta: z <- p(e((r + z) / gamma)) after every step.
class BudgetTracker {
public:
    BudgetTracker(const BudgetGrid& grid, RoundingMode mode, double gamma, budget_t start)
        : grid_(grid), mode_(mode), gamma_(gamma), current_(start) {
        if (start >= grid.size()) throw std::invalid_argument("start budget off the grid");
    }

    budget_t current() const { return current_; }
    double value() const { return grid_.value(current_); }

    budget_t update(double reward) {
        current_ = grid_.next_budget(mode_, current_, reward, gamma_);
        return current_;
    }

private:
    BudgetGrid grid_;
    RoundingMode mode_;
    double gamma_;
    budget_t current_;
};

/// A realized trajectory. states/budgets have one more entry than
/// actions/rewards (the final state and its budget).
struct RolloutRecord {
    std::vector<state_t> states;
    std::vector<action_t> actions;
    std::vector<double> rewards;
    std::vector<budget_t> budgets;
    double discounted_return = 0.0;
    std::size_t steps() const { return actions.size(); }
};

/// Runs the budget-tracked policy from (start_state, tracker's budget) until
/// an absorbing state or step_cap steps.
inline RolloutRecord execute(const TabularMdp& mdp, const PolicyMap& policy, BudgetTracker tracker,
                             state_t start_state, std::size_t step_cap, rng_t& rng) {
    RolloutRecord rec;
    state_t s = start_state;
    rec.states.push_back(s);
    rec.budgets.push_back(tracker.current());
    double discount = 1.0;
    while (!mdp.is_absorbing(s) && rec.actions.size() < step_cap) {
        const action_t a = policy(s, tracker.current());
        const auto [s_next, r] = sample_transition(mdp, s, a, rng);
        rec.actions.push_back(a);
        rec.rewards.push_back(r);
        rec.discounted_return += discount * r;
        discount *= mdp.gamma;
        tracker.update(r);
        s = s_next;
        rec.states.push_back(s);
        rec.budgets.push_back(tracker.current());
    }
    return rec;
}

/// One application of the rounded operator at an arbitrary real budget,
/// using grid values of q only for successors.
inline double evaluate_offgrid(const QTable& q, const TabularMdp& mdp, RoundingMode mode, state_t s,
                               double z_raw) {
    const BudgetGrid& grid = q.grid();
    double best = -std::numeric_limits<double>::infinity();
    for (action_t a = 0; a < mdp.n_actions; ++a) {
        const double r = mdp.reward[s][a];
        const budget_t kn = grid.round(mode, (r + z_raw) / mdp.gamma);
        double future = 0.0;
        for (state_t sp = 0; sp < mdp.n_states; ++sp) {
            const double p = mdp.transition[s][a][sp];
            if (p > 0.0) future += p * q.max_value(sp, kn);
        }
        best = std::max(best, transformed_reward(z_raw, r) + mdp.gamma * future);
    }
    return best;
}

}  // namespace cvar

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "budget_grid.hpp"
#include "mdp.hpp"
#include "q_table.hpp"

namespace cvar {

/// Per-step reward used by a sweep.
enum class RewardScheme {
    Transformed,  ///< z_- - (r + z)_-, the dense scheme
    Zero,         ///< identically zero (sparse baseline)
};

/**
 * The discretized augmented MDP (S x Z, A, P~, r~) for one rounding mode.
 *
 * Budget successors depend only on (s, a, k), never on the policy, so they
 * are computed once here. Transition rows are kept as sparse (s', p) lists.
 * The model holds a pointer to the nominal MDP; the MDP must outlive it.
 */
class AugmentedModel {
public:
    struct Outcome {
        state_t next;
        double prob;
    };

    AugmentedModel(const TabularMdp& mdp, const BudgetGrid& grid, RoundingMode mode)
        : mdp_(&mdp), grid_(grid), mode_(mode) {
        const std::size_t S = mdp.n_states, A = mdp.n_actions, N = grid.size();
        successor_.resize(S * A * N);
        outcomes_.resize(S * A);
        for (state_t s = 0; s < S; ++s)
            for (action_t a = 0; a < A; ++a) {
                const double r = mdp.reward[s][a];
                for (budget_t k = 0; k < N; ++k)
                    successor_[(s * A + a) * N + k] = grid.next_budget(mode, k, r, mdp.gamma);
                for (state_t sp = 0; sp < S; ++sp)
                    if (mdp.transition[s][a][sp] > 0.0)
                        outcomes_[s * A + a].push_back({sp, mdp.transition[s][a][sp]});
            }
    }

    const TabularMdp& mdp() const { return *mdp_; }
    const BudgetGrid& grid() const { return grid_; }
    RoundingMode mode() const { return mode_; }

    budget_t successor(state_t s, action_t a, budget_t k) const {
        return successor_[(s * mdp_->n_actions + a) * grid_.size() + k];
    }

    const std::vector<Outcome>& outcomes(state_t s, action_t a) const {
        return outcomes_[s * mdp_->n_actions + a];
    }

    /// One synchronous application of the operator: out is computed entirely
    /// from in. Returns ||out - in||_inf.
    double sweep(const QTable& in, QTable& out, RewardScheme scheme = RewardScheme::Transformed) const {
        const std::size_t S = mdp_->n_states, A = mdp_->n_actions, N = grid_.size();
        const double gamma = mdp_->gamma;
        if (!out.same_shape(in)) out = QTable(S, grid_, A);

        // v(s', k') = max_a' in(s', k', a')
        std::vector<double> v(S * N);
        for (state_t s = 0; s < S; ++s)
            for (budget_t k = 0; k < N; ++k) v[s * N + k] = in.max_value(s, k);

        double delta = 0.0;
        for (state_t s = 0; s < S; ++s)
            for (action_t a = 0; a < A; ++a) {
                const double r = mdp_->reward[s][a];
                const budget_t* succ = &successor_[(s * A + a) * N];
                const auto& outs = outcomes_[s * A + a];
                for (budget_t k = 0; k < N; ++k) {
                    const double step = scheme == RewardScheme::Transformed
                                            ? transformed_reward(grid_.value(k), r)
                                            : zero_reward(grid_.value(k), r);
                    double future = 0.0;
                    for (const auto& o : outs) future += o.prob * v[o.next * N + succ[k]];
                    const double q = step + gamma * future;
                    delta = std::max(delta, std::abs(q - in(s, k, a)));
                    out(s, k, a) = q;
                }
            }
        return delta;
    }

private:
    const TabularMdp* mdp_;
    BudgetGrid grid_;
    RoundingMode mode_;
    std::vector<budget_t> successor_;
    std::vector<std::vector<Outcome>> outcomes_;
};

struct SweepResult {
    QTable q;
    double delta_sup = 0.0;
};

/// One application of the rounded CVaR-Bellman operator.
inline SweepResult sweep_T_e(const TabularMdp& mdp, const BudgetGrid& grid, RoundingMode mode,
                             const QTable& q_in) {
    AugmentedModel model(mdp, grid, mode);
    SweepResult res;
    res.delta_sup = model.sweep(q_in, res.q, RewardScheme::Transformed);
    return res;
}

/// One application of the zero-reward baseline operator on the same grid.
inline SweepResult sweep_zero_reward(const TabularMdp& mdp, const BudgetGrid& grid, RoundingMode mode,
                                 const QTable& q_in) {
    AugmentedModel model(mdp, grid, mode);
    SweepResult res;
    res.delta_sup = model.sweep(q_in, res.q, RewardScheme::Zero);
    return res;
}

}  // namespace cvar

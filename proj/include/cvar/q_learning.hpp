#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "budget_grid.hpp"
#include "mdp.hpp"
#include "q_table.hpp"

namespace cvar {

/// beta(n) = max(kappa_min, kappa / (1 + lambda n)). kappa_min = 0 gives a
/// Robbins-Monro schedule; a positive floor does not.
struct StepSizeSchedule {
    double kappa = 1.0;
    double kappa_min = 1e-4;
    double lambda = 0.01;

    double operator()(std::size_t n) const {
        return std::max(kappa_min, kappa / (1.0 + lambda * static_cast<double>(n)));
    }

    bool robbins_monro() const { return kappa_min == 0.0 && lambda > 0.0; }
};

/// Linear decay from eps_start to eps_end over decay_steps global steps.
struct ExplorationSchedule {
    double eps_start = 1.0;
    double eps_end = 0.1;
    std::size_t decay_steps = 100000000;

    double operator()(std::size_t step) const {
        if (decay_steps == 0) return eps_end;
        const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(decay_steps));
        return eps_start + (eps_end - eps_start) * frac;
    }
};

struct LearnOptions {
    RoundingMode mode = RoundingMode::Lower;
    std::size_t episodes = 75000;
    std::size_t step_cap = 150;
    StepSizeSchedule step_size;
    ExplorationSchedule exploration;
    std::uint64_t seed = 0;
    /// Reset distribution (uniform over these states); empty means the MDP's
    /// initial state.
    std::vector<state_t> initial_states;
    std::size_t checkpoint_every = 1000;
    /// When set, each checkpoint records ||q - reference||_inf.
    const QTable* reference = nullptr;
};

struct LearnState {
    QTable q;
    std::vector<std::size_t> visit_counts;  ///< N(s, a), row-major
    std::size_t global_step = 0;
    std::size_t episode = 0;
    rng_t rng;

    std::size_t& visits(state_t s, action_t a) { return visit_counts[s * q.n_actions() + a]; }
    std::size_t visits(state_t s, action_t a) const { return visit_counts[s * q.n_actions() + a]; }
};

struct TracePoint {
    std::size_t step = 0;
    std::size_t episode = 0;
    double epsilon = 0.0;
    double mean_beta = 0.0;
    std::optional<double> sup_error;
};

/// One executed environment step, as seen by the learner.
struct StepEvent {
    state_t state;
    budget_t budget;  ///< behaviour budget z_k
    action_t action;
    double reward;
    state_t next_state;
    double beta;
};

struct LearnResult {
    QTable q;
    std::vector<std::size_t> visit_counts;
    std::size_t total_steps = 0;
    std::vector<TracePoint> trace;
};

/**
 * Relabeled update of the row (s, ., a) after observing (s, a, r, s').
 *
 * Every budget z~ on the grid is updated as if the episode had carried that
 * budget into this step: r~ = z~_- - (r + z~)_-, successor budget
 * p(e((r + z~)/gamma)). All targets are read from the table as it was before
 * the step, so the update is the same whether or not s' == s.
 * scratch is resized as needed and avoids reallocations in the hot loop.
 */
inline void block_update(QTable& q, RoundingMode mode, double gamma, state_t s, action_t a, double r,
                         state_t s_next, double beta, std::vector<double>& scratch) {
    const BudgetGrid& grid = q.grid();
    const std::size_t N = grid.size();
    scratch.resize(N);
    for (budget_t k = 0; k < N; ++k) {
        const budget_t kn = grid.next_budget(mode, k, r, gamma);
        const double target = transformed_reward(grid.value(k), r) + gamma * q.max_value(s_next, kn);
        scratch[k] = target;
    }
    for (budget_t k = 0; k < N; ++k) {
        double& entry = q(s, k, a);
        entry = entry + beta * (scratch[k] - entry);
    }
}

class QLearner {
public:
    using Observer = std::function<void(const StepEvent&)>;

    QLearner(const TabularMdp& mdp, const BudgetGrid& grid, LearnOptions opts)
        : mdp_(&mdp), grid_(grid), opts_(std::move(opts)) {
        if (opts_.episodes == 0) throw std::invalid_argument("need at least one episode");
        if (opts_.step_cap == 0) throw std::invalid_argument("step cap must be positive");
        if (opts_.initial_states.empty()) opts_.initial_states.push_back(mdp.initial_state);
        for (state_t s : opts_.initial_states)
            if (s >= mdp.n_states) throw std::invalid_argument("reset state out of range");
        state_.q = QTable(mdp.n_states, grid, mdp.n_actions, 0.0);
        state_.visit_counts.assign(mdp.n_states * mdp.n_actions, 0);
        state_.rng.seed(opts_.seed);
    }

    const LearnState& state() const { return state_; }
    const LearnOptions& options() const { return opts_; }

    /// Runs a single episode and returns the number of steps taken.
    std::size_t run_episode(const Observer& observer = {}) {
        const TabularMdp& mdp = *mdp_;
        rng_t& rng = state_.rng;
        state_t s = opts_.initial_states[uniform_index(rng, opts_.initial_states.size())];
        budget_t z = uniform_index(rng, grid_.size());
        std::size_t steps = 0;
        while (!mdp.is_absorbing(s) && steps < opts_.step_cap) {
            const double eps = opts_.exploration(state_.global_step);
            action_t a;
            if (uniform01(rng) < eps)
                a = uniform_index(rng, mdp.n_actions);
            else
                a = state_.q.argmax(s, z);

            const auto [s_next, r] = sample_transition(mdp, s, a, rng);
            // step size is read at the count before this visit
            std::size_t& n = state_.visits(s, a);
            const double beta = opts_.step_size(n);
            ++n;
            block_update(state_.q, opts_.mode, mdp.gamma, s, a, r, s_next, beta, scratch_);
            if (observer) observer({s, z, a, r, s_next, beta});

            beta_sum_ += beta;
            ++beta_count_;
            z = grid_.next_budget(opts_.mode, z, r, mdp.gamma);
            s = s_next;
            ++steps;
            ++state_.global_step;
            if (opts_.checkpoint_every && state_.global_step % opts_.checkpoint_every == 0) checkpoint();
        }
        ++state_.episode;
        return steps;
    }

    LearnResult run(const Observer& observer = {}) {
        checkpoint();
        for (std::size_t i = 0; i < opts_.episodes; ++i) run_episode(observer);
        if (trace_.empty() || trace_.back().step != state_.global_step) checkpoint();
        return {state_.q, state_.visit_counts, state_.global_step, trace_};
    }

private:
    void checkpoint() {
        TracePoint p;
        p.step = state_.global_step;
        p.episode = state_.episode;
        p.epsilon = opts_.exploration(state_.global_step);
        p.mean_beta = beta_count_ ? beta_sum_ / static_cast<double>(beta_count_) : 0.0;
        if (opts_.reference) p.sup_error = sup_distance(state_.q, *opts_.reference);
        trace_.push_back(p);
        beta_sum_ = 0.0;
        beta_count_ = 0;
    }

    const TabularMdp* mdp_;
    BudgetGrid grid_;
    LearnOptions opts_;
    LearnState state_;
    std::vector<double> scratch_;
    std::vector<TracePoint> trace_;
    double beta_sum_ = 0.0;
    std::size_t beta_count_ = 0;
};

/// Static CVaR Q-learning with budget relabeling.
inline LearnResult learn(const TabularMdp& mdp, const BudgetGrid& grid, const LearnOptions& opts) {
    return QLearner(mdp, grid, opts).run();
}

/// CSV columns: step, episode, epsilon, mean_beta, sup_error_vs_ref.
inline void write_trace_csv(std::ostream& out, const std::vector<TracePoint>& trace) {
    out << "step,episode,epsilon,mean_beta,sup_error_vs_ref\n";
    out.precision(10);
    for (const auto& p : trace) {
        out << p.step << ',' << p.episode << ',' << p.epsilon << ',' << p.mean_beta << ',';
        if (p.sup_error) out << *p.sup_error;
        out << '\n';
    }
}

}  // namespace cvar

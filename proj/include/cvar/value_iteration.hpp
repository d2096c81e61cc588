#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bellman.hpp"

namespace cvar {

/// Thrown when the sweep budget runs out before the stopping test passes.
class NonConvergence : public std::runtime_error {
public:
    NonConvergence(std::size_t iterations, double last_delta)
        : std::runtime_error("value iteration did not converge after " + std::to_string(iterations) +
                             " sweeps (last delta " + std::to_string(last_delta) + ")"),
          iterations_(iterations), last_delta_(last_delta) {}

    std::size_t iterations() const { return iterations_; }
    double last_delta() const { return last_delta_; }

private:
    std::size_t iterations_;
    double last_delta_;
};

struct SolveOptions {
    double epsilon = 1e-4;
    std::size_t max_iters = 0;  ///< 0 selects default_max_iters()
    std::size_t progress_every = 0;
    std::function<void(std::size_t iteration, double delta)> progress;
};

struct SolveReport {
    QTable q_star;
    std::size_t iterations = 0;
    double final_delta = 0.0;
    double certified_error = 0.0;  ///< gamma * final_delta / (1 - gamma)
    RoundingMode mode = RoundingMode::Lower;
    double wall_time = 0.0;
    bool rewards_nonpositive = true;
    std::vector<std::string> warnings;
};

/// ceil(log(eps (1 - gamma) / (2 r_gamma)) / log gamma) + 100
inline std::size_t default_max_iters(double epsilon, double gamma, double r_gamma) {
    if (gamma <= 0.0 || r_gamma <= 0.0) return 101;
    const double ratio = epsilon * (1.0 - gamma) / (2.0 * r_gamma);
    if (ratio >= 1.0) return 101;
    return static_cast<std::size_t>(std::ceil(std::log(ratio) / std::log(gamma))) + 100;
}

/// Q-value iteration on the discretized augmented MDP from the zero table.
/// Stops at the first sweep whose sup-norm change is below epsilon; the
/// returned table is within certified_error of the fixed point.
inline SolveReport solve(const TabularMdp& mdp, const BudgetGrid& grid, RoundingMode mode,
                         const SolveOptions& opts = {}) {
    if (!(opts.epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
    require_valid(mdp);
    const auto start = std::chrono::steady_clock::now();

    SolveReport rep;
    rep.mode = mode;
    rep.rewards_nonpositive = mdp.rewards_nonpositive();
    if (!rep.rewards_nonpositive)
        rep.warnings.emplace_back("rewards are not all non-positive; ordering and monotonicity "
                                  "guarantees do not apply");

    const std::size_t max_iters =
        opts.max_iters ? opts.max_iters : default_max_iters(opts.epsilon, mdp.gamma, mdp.r_gamma());

    AugmentedModel model(mdp, grid, mode);
    QTable cur(mdp.n_states, grid, mdp.n_actions, 0.0);
    QTable next(mdp.n_states, grid, mdp.n_actions, 0.0);
    double delta = 0.0;
    std::size_t k = 0;
    while (true) {
        if (k >= max_iters) throw NonConvergence(k, delta);
        delta = model.sweep(cur, next);
        std::swap(cur, next);
        ++k;
        if (opts.progress && opts.progress_every && k % opts.progress_every == 0) opts.progress(k, delta);
        if (delta < opts.epsilon) break;
    }

    rep.q_star = std::move(cur);
    rep.iterations = k;
    rep.final_delta = delta;
    rep.certified_error = mdp.gamma * delta / (1.0 - mdp.gamma);
    rep.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

inline nlohmann::json report_json(const SolveReport& rep, double epsilon) {
    return {
        {"mode", to_string(rep.mode)},
        {"iterations", rep.iterations},
        {"epsilon", epsilon},
        {"final_delta", rep.final_delta},
        {"certified_error", rep.certified_error},
        {"wall_time", rep.wall_time},
        {"rewards_nonpositive", rep.rewards_nonpositive},
        {"warnings", rep.warnings},
        {"grid", rep.q_star.grid().summary()},
    };
}

}  // namespace cvar

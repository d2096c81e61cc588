#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "budget_grid.hpp"
#include "mdp.hpp"
#include "policy.hpp"
#include "q_table.hpp"
#include "value_iteration.hpp"

namespace cvar {

struct ReturnSample {
    std::vector<double> returns;
    std::vector<std::uint64_t> seeds;
    double alpha = 1.0;
    RoundingMode mode = RoundingMode::Lower;
    std::size_t bins = 0;
    std::string policy_id;
};

/// Number of tail samples used by the estimator: max(1, ceil(alpha N)).
/// The 1e-9 guard keeps products such as 0.05 * 10000 from rounding up.
inline std::size_t tail_count(std::size_t n, double alpha) {
    const double m = std::ceil(alpha * static_cast<double>(n) - 1e-9);
    return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(m, 1.0)), 1, n);
}

/// Mean of the ceil(alpha N) smallest returns.
inline double empirical_cvar(std::vector<double> returns, double alpha) {
    check_alpha(alpha);
    if (returns.empty()) throw std::invalid_argument("empirical CVaR of an empty sample");
    const std::size_t m = tail_count(returns.size(), alpha);
    std::nth_element(returns.begin(), returns.begin() + static_cast<long>(m) - 1, returns.end());
    std::sort(returns.begin(), returns.begin() + static_cast<long>(m));
    return std::accumulate(returns.begin(), returns.begin() + static_cast<long>(m), 0.0) / static_cast<double>(m);
}

/// Asymptotic standard error of the tail-mean estimator,
/// sd((VaR - X)_+) / (alpha sqrt(N)).
inline double cvar_standard_error(std::vector<double> returns, double alpha) {
    check_alpha(alpha);
    if (returns.size() < 2) return 0.0;
    const std::size_t n = returns.size();
    const std::size_t m = tail_count(n, alpha);
    std::sort(returns.begin(), returns.end());
    const double var = returns[m - 1];
    double mean = 0.0, sq = 0.0;
    for (double x : returns) {
        const double e = std::max(var - x, 0.0);
        mean += e;
        sq += e * e;
    }
    mean /= static_cast<double>(n);
    const double variance = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
    return std::sqrt(variance) / (alpha * std::sqrt(static_cast<double>(n)));
}

struct MeanEstimate {
    double mean = 0.0;
    double standard_error = 0.0;
};

inline MeanEstimate mean_with_error(const std::vector<double>& xs) {
    MeanEstimate e;
    if (xs.empty()) return e;
    const double n = static_cast<double>(xs.size());
    e.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - e.mean) * (x - e.mean);
        e.standard_error = std::sqrt(ss / (n - 1.0) / n);
    }
    return e;
}

/// Sum over t of gamma^t [r_t <= threshold].
inline double discounted_crater_entries(const RolloutRecord& rec, double threshold, double gamma) {
    double total = 0.0, discount = 1.0;
    for (double r : rec.rewards) {
        if (r <= threshold) total += discount;
        discount *= gamma;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Exact oracle

/// CVaR of a finite distribution, lower-tail mean with a fractional atom at
/// the VaR: (1/alpha) * integral_0^alpha F^{-1}(u) du.
inline double exact_cvar(std::vector<std::pair<double, double>> outcomes, double alpha) {
    check_alpha(alpha);
    std::sort(outcomes.begin(), outcomes.end());
    double remaining = alpha, acc = 0.0;
    for (const auto& [x, p] : outcomes) {
        const double take = std::min(p, remaining);
        acc += take * x;
        remaining -= take;
        if (remaining <= 0.0) break;
    }
    // any leftover mass (probabilities summing slightly below alpha) sits on
    // the largest outcome
    if (remaining > 0.0 && !outcomes.empty()) acc += remaining * outcomes.back().first;
    return acc / alpha;
}

struct OracleResult {
    double exact_cvar = 0.0;
    std::size_t truncation_horizon = 0;
    double truncation_bound = 0.0;  ///< gamma^H r_max / (1 - gamma)
    std::size_t enumerated_paths = 0;
    double total_probability = 0.0;
    std::vector<std::pair<double, double>> distribution;  ///< (return, probability)
};

/// Raised when enumeration would exceed the path budget.
class PathBudgetExceeded : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * Enumerates every trajectory of the budget-tracked policy up to depth H and
 * returns the exact CVaR of the truncated return. Paths stop at absorbing
 * states; paths alive at depth H are cut and the true infinite-horizon
 * value lies within truncation_bound of the result.
 */
inline OracleResult exact_policy_cvar(const TabularMdp& mdp, const PolicyMap& policy, const BudgetGrid& grid,
                                      RoundingMode mode, state_t start_state, budget_t z_start, double alpha,
                                      std::size_t H, std::size_t max_paths = 2'000'000) {
    check_alpha(alpha);
    OracleResult res;
    res.truncation_horizon = H;
    res.truncation_bound = std::pow(mdp.gamma, static_cast<double>(H)) * mdp.r_max / (1.0 - mdp.gamma);

    struct Frame {
        state_t s;
        budget_t k;
        std::size_t depth;
        double prob;
        double ret;
        double discount;
    };
    std::vector<Frame> stack{{start_state, z_start, 0, 1.0, 0.0, 1.0}};
    while (!stack.empty()) {
        const Frame f = stack.back();
        stack.pop_back();
        if (mdp.is_absorbing(f.s) || f.depth == H) {
            if (++res.enumerated_paths > max_paths)
                throw PathBudgetExceeded("trajectory enumeration exceeds " + std::to_string(max_paths) + " paths");
            res.distribution.emplace_back(f.ret, f.prob);
            res.total_probability += f.prob;
            continue;
        }
        const action_t a = policy(f.s, f.k);
        const double r = mdp.reward[f.s][a];
        const budget_t kn = grid.next_budget(mode, f.k, r, mdp.gamma);
        for (state_t sp = 0; sp < mdp.n_states; ++sp) {
            const double p = mdp.transition[f.s][a][sp];
            if (p <= 0.0) continue;
            stack.push_back({sp, kn, f.depth + 1, f.prob * p, f.ret + f.discount * r, f.discount * mdp.gamma});
        }
        if (stack.size() > max_paths)
            throw PathBudgetExceeded("trajectory enumeration frontier exceeds " + std::to_string(max_paths));
    }
    res.exact_cvar = exact_cvar(res.distribution, alpha);
    return res;
}

// ---------------------------------------------------------------------------
// Rollouts and sweeps

struct RolloutOptions {
    std::size_t n_rollouts = 10000;
    std::size_t step_cap = 150;
    std::uint64_t seed = 0;
    double crater_threshold = -10.0;
};

struct RolloutBatch {
    ReturnSample sample;
    std::vector<double> crater_entries;
    std::vector<std::size_t> steps;
};

/// Executes n_rollouts budget-tracked episodes from the MDP's initial state.
inline RolloutBatch run_rollouts(const TabularMdp& mdp, const QTable& q, RoundingMode mode, budget_t z_start,
                                 const RolloutOptions& opts, std::uint64_t stream = 0) {
    const PolicyMap pi = greedy_policy(q);
    std::seed_seq seq{opts.seed, stream};
    rng_t rng(seq);
    RolloutBatch batch;
    batch.sample.mode = mode;
    batch.sample.bins = q.n_points();
    batch.sample.returns.reserve(opts.n_rollouts);
    for (std::size_t i = 0; i < opts.n_rollouts; ++i) {
        BudgetTracker tracker(q.grid(), mode, mdp.gamma, z_start);
        const RolloutRecord rec = execute(mdp, pi, tracker, mdp.initial_state, opts.step_cap, rng);
        batch.sample.returns.push_back(rec.discounted_return);
        batch.sample.seeds.push_back(opts.seed);
        batch.crater_entries.push_back(discounted_crater_entries(rec, opts.crater_threshold, mdp.gamma));
        batch.steps.push_back(rec.steps());
    }
    return batch;
}

struct SweepRow {
    double alpha = 1.0;
    double z_star = 0.0;
    std::optional<double> psi_lower;
    std::optional<double> psi_upper;
    double cvar_empirical = 0.0;
    double cvar_standard_error = 0.0;
    double mean_return = 0.0;
    double crater_entries_mean = 0.0;
    double crater_entries_standard_error = 0.0;
    std::size_t n_rollouts = 0;
    std::size_t bins = 0;
    std::uint64_t seed = 0;
};

/// Tables the sweep draws on. The policy is taken from the lower table when
/// present, otherwise from the upper one.
struct BoundTables {
    const QTable* lower = nullptr;
    const QTable* upper = nullptr;
};

inline const std::vector<double>& default_alphas() {
    static const std::vector<double> a{0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    return a;
}

/// For each alpha: outer optimization on the solved table(s), rollouts of the
/// induced policy, and summary statistics. One table serves every alpha.
inline std::vector<SweepRow> alpha_sweep(const TabularMdp& mdp, const BoundTables& tables,
                                         const std::vector<double>& alphas, const RolloutOptions& opts) {
    if (!tables.lower && !tables.upper) throw std::invalid_argument("alpha sweep needs at least one table");
    const QTable& policy_table = tables.lower ? *tables.lower : *tables.upper;
    const RoundingMode policy_mode = tables.lower ? RoundingMode::Lower : RoundingMode::Upper;

    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        const double alpha = alphas[i];
        check_alpha(alpha);
        SweepRow row;
        row.alpha = alpha;
        row.n_rollouts = opts.n_rollouts;
        row.bins = policy_table.n_points();
        row.seed = opts.seed;
        if (tables.lower) row.psi_lower = outer_optimize(*tables.lower, alpha, mdp.initial_state).psi_hat;
        if (tables.upper)
            row.psi_upper = outer_optimize(*tables.upper, alpha, mdp.initial_state, RoundingMode::Upper).psi_hat;
        const OuterSolution sol = outer_optimize(policy_table, alpha, mdp.initial_state, policy_mode);
        row.z_star = sol.z_value;

        const RolloutBatch batch = run_rollouts(mdp, policy_table, policy_mode, sol.z_star, opts, i);
        row.cvar_empirical = empirical_cvar(batch.sample.returns, alpha);
        row.cvar_standard_error = cvar_standard_error(batch.sample.returns, alpha);
        row.mean_return = mean_with_error(batch.sample.returns).mean;
        const MeanEstimate craters = mean_with_error(batch.crater_entries);
        row.crater_entries_mean = craters.mean;
        row.crater_entries_standard_error = craters.standard_error;
        rows.push_back(row);
    }
    return rows;
}

/// CSV columns: alpha, z_star, psi_lower, psi_upper, cvar_empirical,
/// mean_return, crater_entries_mean, n_rollouts, bins, seed.
inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
    out << "alpha,z_star,psi_lower,psi_upper,cvar_empirical,mean_return,crater_entries_mean,n_rollouts,bins,seed\n";
    out.precision(12);
    for (const auto& r : rows) {
        out << r.alpha << ',' << r.z_star << ',';
        if (r.psi_lower) out << *r.psi_lower;
        out << ',';
        if (r.psi_upper) out << *r.psi_upper;
        out << ',' << r.cvar_empirical << ',' << r.mean_return << ',' << r.crater_entries_mean << ','
            << r.n_rollouts << ',' << r.bins << ',' << r.seed << '\n';
    }
}

/// CSV columns: seed, episode, return, steps, crater_entries_discounted.
inline void write_rollouts_csv(std::ostream& out, const RolloutBatch& b) {
    out << "seed,episode,return,steps,crater_entries_discounted\n";
    out.precision(12);
    for (std::size_t i = 0; i < b.sample.returns.size(); ++i)
        out << b.sample.seeds[i] << ',' << i << ',' << b.sample.returns[i] << ',' << b.steps[i] << ','
            << b.crater_entries[i] << '\n';
}

/// Single-column CSV of returns.
inline void write_returns_csv(std::ostream& out, const ReturnSample& s) {
    out << "return\n";
    out.precision(12);
    for (double x : s.returns) out << x << '\n';
}

/// Memo of value-iteration solves keyed by (environment, bins, mode, epsilon).
class SolveCache {
public:
    const SolveReport& get(const TabularMdp& mdp, const BudgetGrid& grid, RoundingMode mode,
                           const SolveOptions& opts) {
        const Key key{fingerprint(mdp), grid.size(), grid.lo(), grid.hi(), static_cast<int>(mode), opts.epsilon};
        auto it = cache_.find(key);
        if (it == cache_.end()) it = cache_.emplace(key, solve(mdp, grid, mode, opts)).first;
        return it->second;
    }

    std::size_t size() const { return cache_.size(); }

private:
    using Key = std::tuple<std::uint64_t, std::size_t, double, double, int, double>;
    std::map<Key, SolveReport> cache_;
};

struct BoundsRow {
    std::size_t bins = 0;
    double delta = 0.0;
    double alpha = 1.0;
    double psi_lower = 0.0;
    double psi_upper = 0.0;
    double gap_bound = 0.0;  ///< 2 gamma delta / ((1 - gamma) alpha)
};

/// Psi^l and Psi^u at the initial state for every (bins, alpha) pair.
inline std::vector<BoundsRow> bounds_vs_resolution(const TabularMdp& mdp, const std::vector<std::size_t>& bins_list,
                                                   const std::vector<double>& alphas, const SolveOptions& opts,
                                                   SolveCache& cache) {
    std::vector<BoundsRow> rows;
    for (std::size_t bins : bins_list) {
        const BudgetGrid grid(mdp.r_gamma(), BudgetGrid::k_for_bins(bins));
        const SolveReport& lo = cache.get(mdp, grid, RoundingMode::Lower, opts);
        const SolveReport& up = cache.get(mdp, grid, RoundingMode::Upper, opts);
        for (double alpha : alphas) {
            BoundsRow row;
            row.bins = grid.size();
            row.delta = grid.delta();
            row.alpha = alpha;
            row.psi_lower = outer_optimize(lo.q_star, alpha, mdp.initial_state).psi_hat;
            row.psi_upper = outer_optimize(up.q_star, alpha, mdp.initial_state, RoundingMode::Upper).psi_hat;
            row.gap_bound = 2.0 * mdp.gamma * grid.delta() / ((1.0 - mdp.gamma) * alpha);
            rows.push_back(row);
        }
    }
    return rows;
}

inline void write_bounds_csv(std::ostream& out, const std::vector<BoundsRow>& rows) {
    out << "bins,delta,alpha,psi_lower,psi_upper,gap,gap_bound\n";
    out.precision(12);
    for (const auto& r : rows)
        out << r.bins << ',' << r.delta << ',' << r.alpha << ',' << r.psi_lower << ',' << r.psi_upper << ','
            << (r.psi_upper - r.psi_lower) << ',' << r.gap_bound << '\n';
}

}  // namespace cvar

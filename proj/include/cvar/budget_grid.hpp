#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace cvar {

using budget_t = std::size_t;  ///< index into the budget grid

/// Which envelope of the identity is used to snap budgets onto the grid.
enum class RoundingMode { Lower, Upper };

inline const char* to_string(RoundingMode m) { return m == RoundingMode::Lower ? "lower" : "upper"; }

inline RoundingMode rounding_mode_from_string(const std::string& s) {
    if (s == "lower") return RoundingMode::Lower;
    if (s == "upper") return RoundingMode::Upper;
    throw std::invalid_argument("unknown rounding mode '" + s + "'");
}

/**
 * Uniform grid over the budget axis.
 *
 * The default grid is Z = {k * delta : k = -K..K} with delta = r_gamma / K,
 * so it has 2K+1 points, contains 0, and ends exactly at +-r_gamma. A grid
 * built by with_range() instead spans an arbitrary [lo, hi] with the same
 * number of points; it is only meant for replicating experiment settings.
 *
 * Index i maps to value (i - center) * delta + shift. For the default grid
 * center = K and shift = 0, which keeps grid values exact multiples of delta.
 */
class BudgetGrid {
public:
    BudgetGrid() = default;

    BudgetGrid(double r_gamma, std::size_t K)
        : K_(K), r_gamma_(r_gamma), n_points_(2 * K + 1), center_(static_cast<double>(K)) {
        if (K == 0) throw std::invalid_argument("grid needs K >= 1");
        if (!(r_gamma > 0.0) || !std::isfinite(r_gamma))
            throw std::invalid_argument("grid needs a positive finite r_gamma");
        delta_ = r_gamma / static_cast<double>(K);
        lo_ = -r_gamma;
        hi_ = r_gamma;
    }

    /// Grid with n_points (2K+1) points on [lo, hi].
    static BudgetGrid with_range(double lo, double hi, std::size_t K) {
        if (!(hi > lo)) throw std::invalid_argument("grid range must satisfy lo < hi");
        BudgetGrid g(std::max(std::abs(lo), std::abs(hi)), K);
        g.delta_ = (hi - lo) / static_cast<double>(g.n_points_ - 1);
        g.lo_ = lo;
        g.hi_ = hi;
        g.center_ = 0.0;
        g.shift_ = lo;
        g.custom_range_ = true;
        return g;
    }

    /// K that gives the requested number of points, rounded to the nearest
    /// admissible odd count 2K+1 (5000 -> K = 2500, i.e. 5001 points).
    static std::size_t k_for_bins(std::size_t bins) {
        if (bins < 2) return 1;
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround((static_cast<double>(bins) - 1.0) / 2.0)));
    }

    std::size_t K() const { return K_; }
    double delta() const { return delta_; }
    double r_gamma() const { return r_gamma_; }
    std::size_t size() const { return n_points_; }
    double lo() const { return lo_; }
    double hi() const { return hi_; }
    bool custom_range() const { return custom_range_; }

    double value(budget_t i) const {
        return (static_cast<double>(i) - center_) * delta_ + shift_;
    }

    /// Index of the point 0 (default grid only).
    budget_t zero_index() const { return K_; }

    /// Clamp onto [lo, hi].
    double project(double x) const { return std::max(lo_, std::min(x, hi_)); }

    /// Snap x (assumed inside [lo, hi]) to a grid index with the chosen
    /// envelope; values within 1e-9 relative of a grid point snap onto it.
    budget_t round(RoundingMode mode, double x) const {
        return clamp_index(mode == RoundingMode::Lower ? floor_index(x) : ceil_index(x));
    }

    /// Index of p(e((r + z_k) / gamma)).
    budget_t next_budget(RoundingMode mode, budget_t k, double r, double gamma) const {
        const double x = (r + value(k)) / gamma;
        // e is applied on the whole line and the result clamped; on a grid
        // whose ends are grid points this equals p(e(x)).
        return clamp_index(mode == RoundingMode::Lower ? floor_index(x) : ceil_index(x));
    }

    nlohmann::json summary() const {
        nlohmann::json j{{"delta", delta_}, {"K", K_}, {"r_gamma", r_gamma_}, {"n_points", n_points_}};
        if (custom_range_) j["range"] = {lo_, hi_};
        return j;
    }

private:
    double grid_units(double x) const { return (x - shift_) / delta_ + center_; }

    static double slack(double t) { return 1e-9 * std::max(1.0, std::abs(t)); }

    long long floor_index(double x) const {
        const double t = grid_units(x);
        return static_cast<long long>(std::floor(t + slack(t)));
    }

    long long ceil_index(double x) const {
        const double t = grid_units(x);
        return static_cast<long long>(std::ceil(t - slack(t)));
    }

    budget_t clamp_index(long long i) const {
        if (i < 0) return 0;
        if (i >= static_cast<long long>(n_points_)) return n_points_ - 1;
        return static_cast<budget_t>(i);
    }

    std::size_t K_ = 1;
    double r_gamma_ = 1.0;
    std::size_t n_points_ = 3;
    double center_ = 1.0;
    double delta_ = 1.0;
    double shift_ = 0.0;
    double lo_ = -1.0;
    double hi_ = 1.0;
    bool custom_range_ = false;
};

/// x_- = -min(x, 0)
inline double negative_part(double x) { return -std::min(x, 0.0); }

/// Dense per-step reward of the augmented MDP: z_- - (r + z)_-.
inline double transformed_reward(double z, double r) {
    return std::min(0.0, r + z) - std::min(0.0, z);
}

/// Per-step reward of the sparse baseline augmentation: always zero.
inline double zero_reward(double /*z*/, double /*r*/) { return 0.0; }

}  // namespace cvar

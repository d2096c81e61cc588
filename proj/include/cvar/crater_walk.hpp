#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdp.hpp"

namespace cvar {

/// Grid coordinate; row 0 is the top of the map.
struct Cell {
    std::size_t row = 0;
    std::size_t col = 0;
    friend bool operator==(const Cell&, const Cell&) = default;
};

/**
 * Stochastic gridworld where a robot walks from S to G around a crater.
 *
 * Default map (5 wide, 4 high):
 *
 *     . . . . .
 *     . . . . .
 *     . C C C .
 *     S . . . G
 *
 * The bottom row is the short corridor; lateral slips push the robot into the
 * crater. The top rows form a longer, safer route.
 */
struct CraterWalkConfig {
    std::size_t width = 5;
    std::size_t height = 4;
    double slip_probability = 0.25;
    double step_penalty = -1.0;
    double crater_penalty = -10.0;
    std::vector<Cell> crater_cells{{2, 1}, {2, 2}, {2, 3}};
    Cell start_cell{3, 0};
    Cell goal_cell{3, 4};
    double gamma = 0.9;

    std::size_t index(Cell c) const { return c.row * width + c.col; }
    bool is_crater(Cell c) const {
        for (const auto& k : crater_cells)
            if (k == c) return true;
        return false;
    }
};

/// Action ids, in compass order.
enum class Move : std::size_t { Up = 0, Right = 1, Down = 2, Left = 3 };

inline void check_config(const CraterWalkConfig& cfg) {
    if (!(cfg.slip_probability >= 0.0 && cfg.slip_probability < 1.0))
        throw std::invalid_argument("slip probability must lie in [0, 1), got " +
                                    std::to_string(cfg.slip_probability));
    if (!(cfg.gamma >= 0.0 && cfg.gamma < 1.0))
        throw std::invalid_argument("gamma must lie in [0, 1)");
    if (cfg.step_penalty > 0.0 || cfg.crater_penalty > 0.0)
        throw std::invalid_argument("crater walk penalties must be non-positive");
    if (cfg.width == 0 || cfg.height == 0) throw std::invalid_argument("empty grid");
    auto inside = [&](Cell c) { return c.row < cfg.height && c.col < cfg.width; };
    if (!inside(cfg.start_cell) || !inside(cfg.goal_cell))
        throw std::invalid_argument("start/goal cell outside the grid");
    for (const auto& c : cfg.crater_cells)
        if (!inside(c)) throw std::invalid_argument("crater cell outside the grid");
    if (cfg.start_cell == cfg.goal_cell) throw std::invalid_argument("start and goal coincide");
    if (cfg.is_crater(cfg.goal_cell) || cfg.is_crater(cfg.start_cell))
        throw std::invalid_argument("start/goal cannot be crater cells");
}

/// Builds the nominal MDP. Rewards attach to the cell being left: a crater
/// cell costs crater_penalty for any action, every other non-goal cell costs
/// step_penalty, and the goal is absorbing at zero.
inline TabularMdp build_crater_walk(const CraterWalkConfig& cfg) {
    check_config(cfg);
    const std::size_t n = cfg.width * cfg.height;
    const double w = cfg.slip_probability;

    TabularMdp mdp;
    mdp.n_states = n;
    mdp.n_actions = 4;
    mdp.gamma = cfg.gamma;
    mdp.r_max = std::max(std::abs(cfg.step_penalty), std::abs(cfg.crater_penalty));
    mdp.initial_state = cfg.index(cfg.start_cell);
    mdp.absorbing_states.insert(cfg.index(cfg.goal_cell));
    mdp.transition.assign(n, std::vector<numvec>(4, numvec(n, 0.0)));
    mdp.reward.assign(n, numvec(4, 0.0));

    constexpr std::array<int, 4> drow{-1, 0, 1, 0};
    constexpr std::array<int, 4> dcol{0, 1, 0, -1};

    for (std::size_t r = 0; r < cfg.height; ++r) {
        for (std::size_t c = 0; c < cfg.width; ++c) {
            const Cell here{r, c};
            const std::size_t s = cfg.index(here);
            for (std::size_t a = 0; a < 4; ++a) {
                numvec& row = mdp.transition[s][a];
                if (here == cfg.goal_cell) {
                    row[s] = 1.0;
                    continue;
                }
                mdp.reward[s][a] = cfg.is_crater(here) ? cfg.crater_penalty : cfg.step_penalty;

                // intended, the two laterals, and the opposite direction
                const std::array<std::pair<std::size_t, double>, 4> parts{{
                    {a, 1.0 - w},
                    {(a + 1) % 4, 4.0 * w / 9.0},
                    {(a + 3) % 4, 4.0 * w / 9.0},
                    {(a + 2) % 4, w / 9.0},
                }};
                for (const auto& [dir, p] : parts) {
                    if (p == 0.0) continue;
                    const long nr = static_cast<long>(r) + drow[dir];
                    const long nc = static_cast<long>(c) + dcol[dir];
                    std::size_t target = s;
                    if (nr >= 0 && nc >= 0 && nr < static_cast<long>(cfg.height) &&
                        nc < static_cast<long>(cfg.width))
                        target = cfg.index({static_cast<std::size_t>(nr), static_cast<std::size_t>(nc)});
                    row[target] += p;
                }
                // 1 - w + 8w/9 + w/9 can miss 1 by an ulp; put the residue on the
                // intended outcome so rows sum to one exactly.
                double sum = 0.0;
                for (double p : row) sum += p;
                std::size_t fix = s;
                {
                    const long nr = static_cast<long>(r) + drow[a];
                    const long nc = static_cast<long>(c) + dcol[a];
                    if (nr >= 0 && nc >= 0 && nr < static_cast<long>(cfg.height) &&
                        nc < static_cast<long>(cfg.width))
                        fix = cfg.index({static_cast<std::size_t>(nr), static_cast<std::size_t>(nc)});
                }
                row[fix] += 1.0 - sum;
            }
        }
    }
    require_valid(mdp);
    return mdp;
}

/// Reads the layout from text rows ('S' start, 'G' goal, 'C' crater, '.'
/// free); all other fields are taken from base.
inline CraterWalkConfig crater_walk_from_map(const std::vector<std::string>& rows, CraterWalkConfig base = {}) {
    if (rows.empty() || rows.front().empty()) throw std::invalid_argument("empty crater walk map");
    base.height = rows.size();
    base.width = rows.front().size();
    base.crater_cells.clear();
    int starts = 0, goals = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != base.width) throw std::invalid_argument("map rows differ in length");
        for (std::size_t c = 0; c < base.width; ++c) {
            switch (rows[r][c]) {
                case 'S': base.start_cell = {r, c}; ++starts; break;
                case 'G': base.goal_cell = {r, c}; ++goals; break;
                case 'C': base.crater_cells.push_back({r, c}); break;
                case '.': break;
                default:
                    throw std::invalid_argument(std::string("unknown map symbol '") + rows[r][c] + "'");
            }
        }
    }
    if (starts != 1 || goals != 1) throw std::invalid_argument("map needs exactly one S and one G");
    check_config(base);
    return base;
}

/// Cells used as training resets: everything except craters and the goal.
inline std::vector<state_t> crater_walk_safe_states(const CraterWalkConfig& cfg) {
    std::vector<state_t> out;
    for (std::size_t r = 0; r < cfg.height; ++r)
        for (std::size_t c = 0; c < cfg.width; ++c) {
            const Cell cell{r, c};
            if (!cfg.is_crater(cell) && !(cell == cfg.goal_cell)) out.push_back(cfg.index(cell));
        }
    return out;
}

}  // namespace cvar

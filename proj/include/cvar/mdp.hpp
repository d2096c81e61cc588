#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace cvar {

using state_t = std::size_t;
using action_t = std::size_t;
using numvec = std::vector<double>;

/// Deterministic generator used by every sampler in the library.
using rng_t = std::mt19937_64;

/// Uniform draw in [0, 1) built from the top 53 bits, so sequences do not
/// depend on the standard library's distribution implementations.
inline double uniform01(rng_t& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n).
inline std::size_t uniform_index(rng_t& rng, std::size_t n) {
    return std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)), n - 1);
}

/**
 * Nominal finite MDP with dense transitions.
 *
 * Transition rows are stored as transition[s][a][s'] and rewards as
 * reward[s][a]. Absorbing states must loop onto themselves with zero reward.
 * The object is treated as immutable once validated; solvers only read it.
 */
struct TabularMdp {
    std::size_t n_states = 0;
    std::size_t n_actions = 0;
    std::vector<std::vector<numvec>> transition;
    std::vector<numvec> reward;
    double gamma = 0.9;
    double r_max = 0.0;
    state_t initial_state = 0;
    std::set<state_t> absorbing_states;

    /// r_max / (1 - gamma), the bound on any discounted return.
    double r_gamma() const { return r_max / (1.0 - gamma); }

    bool is_absorbing(state_t s) const { return absorbing_states.count(s) > 0; }

    /// True when every reward is non-positive.
    bool rewards_nonpositive() const {
        for (const auto& row : reward)
            for (double r : row)
                if (r > 0.0) return false;
        return true;
    }

    double max_abs_reward() const {
        double m = 0.0;
        for (const auto& row : reward)
            for (double r : row) m = std::max(m, std::abs(r));
        return m;
    }
};

/// Returns one human readable entry per broken invariant; empty means valid.
inline std::vector<std::string> validate(const TabularMdp& mdp) {
    std::vector<std::string> out;
    auto sa = [](std::size_t s, std::size_t a) {
        std::ostringstream os;
        os << "(s=" << s << ", a=" << a << ")";
        return os.str();
    };

    if (mdp.n_states == 0) out.emplace_back("n_states must be positive");
    if (mdp.n_actions == 0) out.emplace_back("n_actions must be positive");
    if (!(mdp.gamma >= 0.0 && mdp.gamma < 1.0))
        out.emplace_back("gamma must lie in [0, 1), got " + std::to_string(mdp.gamma));
    if (!(mdp.r_max >= 0.0) || !std::isfinite(mdp.r_max))
        out.emplace_back("r_max must be a finite nonnegative number");
    if (mdp.initial_state >= mdp.n_states)
        out.emplace_back("initial_state " + std::to_string(mdp.initial_state) + " out of range");
    for (state_t s : mdp.absorbing_states)
        if (s >= mdp.n_states) out.emplace_back("absorbing state " + std::to_string(s) + " out of range");

    if (mdp.transition.size() != mdp.n_states || mdp.reward.size() != mdp.n_states) {
        out.emplace_back("transition/reward tables do not have n_states rows");
        return out;
    }

    for (state_t s = 0; s < mdp.n_states; ++s) {
        if (mdp.transition[s].size() != mdp.n_actions || mdp.reward[s].size() != mdp.n_actions) {
            out.emplace_back("state " + std::to_string(s) + " does not have n_actions entries");
            continue;
        }
        const bool absorbing = mdp.is_absorbing(s);
        for (action_t a = 0; a < mdp.n_actions; ++a) {
            const numvec& row = mdp.transition[s][a];
            if (row.size() != mdp.n_states) {
                out.push_back("transition row " + sa(s, a) + " has wrong length");
                continue;
            }
            double sum = 0.0;
            bool negative = false;
            bool finite = true;
            for (double p : row) {
                sum += p;
                negative |= p < 0.0;
                finite &= std::isfinite(p);
            }
            if (!finite) out.push_back("transition row " + sa(s, a) + " has non-finite entries");
            if (negative) out.push_back("transition row " + sa(s, a) + " has negative entries");
            if (std::abs(sum - 1.0) > 1e-12)
                out.push_back("transition row " + sa(s, a) + " sums to " + std::to_string(sum));

            const double r = mdp.reward[s][a];
            if (!std::isfinite(r) || std::abs(r) > mdp.r_max)
                out.push_back("reward " + sa(s, a) + " = " + std::to_string(r) + " exceeds r_max");

            if (absorbing) {
                if (row[s] != 1.0) out.push_back("absorbing state " + sa(s, a) + " does not self-loop");
                if (r != 0.0) out.push_back("absorbing state " + sa(s, a) + " has nonzero reward");
            }
        }
    }
    return out;
}

/// Throws std::invalid_argument listing all violations, if any.
inline void require_valid(const TabularMdp& mdp) {
    auto v = validate(mdp);
    if (v.empty()) return;
    std::string msg = "invalid MDP:";
    for (const auto& e : v) msg += "\n  " + e;
    throw std::invalid_argument(msg);
}

/// Draws (next_state, reward) for the pair (s, a).
inline std::pair<state_t, double> sample_transition(const TabularMdp& mdp, state_t s, action_t a,
                                                    rng_t& rng) {
    const numvec& row = mdp.transition[s][a];
    const double u = uniform01(rng);
    double acc = 0.0;
    state_t last_nonzero = s;
    for (state_t sp = 0; sp < row.size(); ++sp) {
        if (row[sp] <= 0.0) continue;
        acc += row[sp];
        last_nonzero = sp;
        if (u < acc) return {sp, mdp.reward[s][a]};
    }
    // rounding slack at the top of the CDF
    return {last_nonzero, mdp.reward[s][a]};
}

/// Standard risk-neutral value iteration; used as an independent oracle.
inline numvec risk_neutral_value_iteration(const TabularMdp& mdp, double tol,
                                           std::size_t max_iters = 1000000) {
    if (!(tol > 0.0)) throw std::invalid_argument("tolerance must be positive");
    numvec v(mdp.n_states, 0.0), next(mdp.n_states, 0.0);
    for (std::size_t it = 0; it < max_iters; ++it) {
        double delta = 0.0;
        for (state_t s = 0; s < mdp.n_states; ++s) {
            double best = -std::numeric_limits<double>::infinity();
            for (action_t a = 0; a < mdp.n_actions; ++a) {
                double q = mdp.reward[s][a];
                for (state_t sp = 0; sp < mdp.n_states; ++sp)
                    q += mdp.gamma * mdp.transition[s][a][sp] * v[sp];
                best = std::max(best, q);
            }
            next[s] = best;
            delta = std::max(delta, std::abs(best - v[s]));
        }
        v.swap(next);
        if (delta < tol) return v;
    }
    throw std::runtime_error("risk-neutral value iteration did not converge");
}

// ---------------------------------------------------------------------------
// JSON layout: {n_states, n_actions, gamma, r_max, initial_state, absorbing,
// reward[s][a], transition[s][a][s']}

inline nlohmann::json to_json(const TabularMdp& mdp) {
    nlohmann::json j;
    j["n_states"] = mdp.n_states;
    j["n_actions"] = mdp.n_actions;
    j["gamma"] = mdp.gamma;
    j["r_max"] = mdp.r_max;
    j["initial_state"] = mdp.initial_state;
    j["absorbing"] = std::vector<state_t>(mdp.absorbing_states.begin(), mdp.absorbing_states.end());
    j["reward"] = mdp.reward;
    j["transition"] = mdp.transition;
    return j;
}

/// Parses and validates; throws std::invalid_argument on malformed input.
inline TabularMdp mdp_from_json(const nlohmann::json& j) {
    TabularMdp mdp;
    try {
        mdp.n_states = j.at("n_states").get<std::size_t>();
        mdp.n_actions = j.at("n_actions").get<std::size_t>();
        mdp.gamma = j.at("gamma").get<double>();
        mdp.r_max = j.at("r_max").get<double>();
        mdp.initial_state = j.at("initial_state").get<state_t>();
        for (auto s : j.at("absorbing").get<std::vector<state_t>>()) mdp.absorbing_states.insert(s);
        mdp.reward = j.at("reward").get<std::vector<numvec>>();
        mdp.transition = j.at("transition").get<std::vector<std::vector<numvec>>>();
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("malformed MDP document: ") + e.what());
    }
    require_valid(mdp);
    return mdp;
}

/// 64-bit FNV-1a of the canonical JSON dump; identifies an environment in
/// persisted artifacts.
inline std::uint64_t fingerprint(const TabularMdp& mdp) {
    const std::string text = to_json(mdp).dump();
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace cvar

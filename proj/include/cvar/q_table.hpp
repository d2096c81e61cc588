#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "budget_grid.hpp"
#include "mdp.hpp"

namespace cvar {

/// Action values over (state, budget index, action), stored row-major with
/// the action axis innermost.
class QTable {
public:
    QTable() = default;
    QTable(std::size_t n_states, const BudgetGrid& grid, std::size_t n_actions, double fill = 0.0)
        : n_states_(n_states), n_actions_(n_actions), grid_(grid),
          values_(n_states * grid.size() * n_actions, fill) {}

    std::size_t n_states() const { return n_states_; }
    std::size_t n_points() const { return grid_.size(); }
    std::size_t n_actions() const { return n_actions_; }
    const BudgetGrid& grid() const { return grid_; }

    double& operator()(state_t s, budget_t k, action_t a) { return values_[offset(s, k) + a]; }
    double operator()(state_t s, budget_t k, action_t a) const { return values_[offset(s, k) + a]; }

    /// The action values at (s, k).
    std::span<double> row(state_t s, budget_t k) { return {values_.data() + offset(s, k), n_actions_}; }
    std::span<const double> row(state_t s, budget_t k) const {
        return {values_.data() + offset(s, k), n_actions_};
    }

    /// max_a q(s, k, a)
    double max_value(state_t s, budget_t k) const {
        auto r = row(s, k);
        return *std::max_element(r.begin(), r.end());
    }

    /// argmax_a q(s, k, a), lowest index on ties.
    action_t argmax(state_t s, budget_t k) const {
        auto r = row(s, k);
        return static_cast<action_t>(std::max_element(r.begin(), r.end()) - r.begin());
    }

    std::vector<double>& data() { return values_; }
    const std::vector<double>& data() const { return values_; }

    bool same_shape(const QTable& o) const {
        return n_states_ == o.n_states_ && n_actions_ == o.n_actions_ && n_points() == o.n_points();
    }

    double sup_norm() const {
        double m = 0.0;
        for (double v : values_) m = std::max(m, std::abs(v));
        return m;
    }

    bool all_finite() const {
        return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
    }

private:
    std::size_t offset(state_t s, budget_t k) const { return (s * grid_.size() + k) * n_actions_; }

    std::size_t n_states_ = 0;
    std::size_t n_actions_ = 0;
    BudgetGrid grid_;
    std::vector<double> values_;
};

/// ||a - b||_inf over all entries.
inline double sup_distance(const QTable& a, const QTable& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("Q-tables have different shapes");
    double m = 0.0;
    const auto& x = a.data();
    const auto& y = b.data();
    for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
    return m;
}

/// State values over (state, budget index).
class ValueTable {
public:
    ValueTable() = default;
    ValueTable(std::size_t n_states, std::size_t n_points, double fill = 0.0)
        : n_states_(n_states), n_points_(n_points), values_(n_states * n_points, fill) {}

    std::size_t n_states() const { return n_states_; }
    std::size_t n_points() const { return n_points_; }

    double& operator()(state_t s, budget_t k) { return values_[s * n_points_ + k]; }
    double operator()(state_t s, budget_t k) const { return values_[s * n_points_ + k]; }

    std::span<const double> budget_axis(state_t s) const {
        return {values_.data() + s * n_points_, n_points_};
    }

    const std::vector<double>& data() const { return values_; }

private:
    std::size_t n_states_ = 0;
    std::size_t n_points_ = 0;
    std::vector<double> values_;
};

/// v(s, k) = max_a q(s, k, a)
inline ValueTable greedy_values(const QTable& q) {
    ValueTable v(q.n_states(), q.n_points());
    for (state_t s = 0; s < q.n_states(); ++s)
        for (budget_t k = 0; k < q.n_points(); ++k) v(s, k) = q.max_value(s, k);
    return v;
}

// ---------------------------------------------------------------------------
// Persistence. Header fields plus a flat row-major "values" array.

struct QTableHeader {
    RoundingMode mode = RoundingMode::Lower;
    double gamma = 0.0;
    std::uint64_t env_fingerprint = 0;
};

inline nlohmann::json to_json(const QTable& q, const QTableHeader& h) {
    nlohmann::json j;
    j["format"] = "cvar-qtable";
    j["version"] = 1;
    j["n_states"] = q.n_states();
    j["n_points"] = q.n_points();
    j["n_actions"] = q.n_actions();
    j["delta"] = q.grid().delta();
    j["K"] = q.grid().K();
    j["r_gamma"] = q.grid().r_gamma();
    if (q.grid().custom_range()) j["range"] = {q.grid().lo(), q.grid().hi()};
    j["gamma"] = h.gamma;
    j["mode"] = to_string(h.mode);
    j["env_fingerprint"] = h.env_fingerprint;
    j["values"] = q.data();
    return j;
}

inline std::pair<QTable, QTableHeader> qtable_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != "cvar-qtable")
            throw std::invalid_argument("not a Q-table document");
        const auto K = j.at("K").get<std::size_t>();
        const auto r_gamma = j.at("r_gamma").get<double>();
        BudgetGrid grid = j.contains("range")
                              ? BudgetGrid::with_range(j["range"][0].get<double>(), j["range"][1].get<double>(), K)
                              : BudgetGrid(r_gamma, K);
        QTable q(j.at("n_states").get<std::size_t>(), grid, j.at("n_actions").get<std::size_t>());
        if (q.n_points() != j.at("n_points").get<std::size_t>())
            throw std::invalid_argument("n_points does not match K");
        auto values = j.at("values").get<std::vector<double>>();
        if (values.size() != q.data().size()) throw std::invalid_argument("Q-table value count mismatch");
        q.data() = std::move(values);
        QTableHeader h;
        h.mode = rounding_mode_from_string(j.at("mode").get<std::string>());
        h.gamma = j.at("gamma").get<double>();
        h.env_fingerprint = j.value("env_fingerprint", std::uint64_t{0});
        return {std::move(q), h};
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("malformed Q-table document: ") + e.what());
    }
}

inline void save_qtable(const std::string& path, const QTable& q, const QTableHeader& h) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << to_json(q, h).dump() << '\n';
}

inline std::pair<QTable, QTableHeader> load_qtable(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(path + ": " + e.what());
    }
    return qtable_from_json(j);
}

}  // namespace cvar

// Batch front end: solve, learn, evaluate, compare-bounds.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 bad config, 3 value iteration
// did not converge, 4 table does not match the environment.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <cvar/cvar.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cvar;

namespace {

constexpr int kSchemaVersion = 1;

enum ExitCode { kOk = 0, kFailure = 1, kConfigError = 2, kNonConvergence = 3, kMismatch = 4 };

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ArtifactMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Config

struct QLearnSettings {
    std::size_t episodes = 75000;
    std::size_t step_cap = 150;
    StepSizeSchedule step_size;
    ExplorationSchedule exploration;
    std::size_t checkpoint_every = 1000;
};

struct RunConfig {
    fs::path source;
    TabularMdp mdp;
    std::optional<CraterWalkConfig> crater;  ///< set for the built-in environment
    BudgetGrid grid;
    std::vector<RoundingMode> modes;
    std::optional<SolveOptions> vi;
    std::optional<QLearnSettings> qlearn;
    std::vector<double> alphas = default_alphas();
    std::size_t n_rollouts = 10000;
    std::size_t rollout_step_cap = 150;
    double crater_threshold = -10.0;
    bool export_returns = false;
    std::vector<std::size_t> bins_list{100, 500, 1000, 5000};
    std::vector<std::uint64_t> seeds{0};
    fs::path output_dir = "cvar_out";
};

/// 1-based line of the first occurrence of "key" in the raw text, if any.
std::optional<std::size_t> line_of_key(const std::string& text, const std::string& key) {
    const auto pos = text.find('"' + key + '"');
    if (pos == std::string::npos) return std::nullopt;
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
}

class ConfigReader {
public:
    ConfigReader(std::string text, fs::path source) : text_(std::move(text)), source_(std::move(source)) {}

    [[noreturn]] void fail(const std::string& key, const std::string& what) const {
        std::ostringstream msg;
        msg << source_.string();
        if (auto line = line_of_key(text_, key)) msg << ':' << *line;
        msg << ": " << key << ": " << what;
        throw ConfigError(msg.str());
    }

    template <class T>
    T get(const json& obj, const std::string& key, T fallback) const {
        if (!obj.contains(key)) return fallback;
        try {
            return obj.at(key).get<T>();
        } catch (const json::exception&) {
            fail(key, "has the wrong type");
        }
    }

    template <class T>
    T positive(const json& obj, const std::string& key, T fallback) const {
        const T v = get<T>(obj, key, fallback);
        if (!(v > T{0})) fail(key, "must be positive");
        return v;
    }

    const json& object(const json& obj, const std::string& key) const {
        if (!obj.contains(key)) fail(key, "is required");
        if (!obj.at(key).is_object()) fail(key, "must be an object");
        return obj.at(key);
    }

    const std::string& text() const { return text_; }
    const fs::path& source() const { return source_; }

private:
    std::string text_;
    fs::path source_;
};

json parse_json_text(const std::string& text, const fs::path& source) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
        const std::size_t line = 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n'));
        throw ConfigError(source.string() + ":" + std::to_string(line) + ": malformed JSON: " + e.what());
    }
}

CraterWalkConfig read_crater(const ConfigReader& rd, const json& p) {
    CraterWalkConfig cfg;
    if (p.contains("map")) cfg = crater_walk_from_map(rd.get<std::vector<std::string>>(p, "map", {}));
    cfg.slip_probability = rd.get<double>(p, "slip", cfg.slip_probability);
    cfg.step_penalty = rd.get<double>(p, "step_penalty", cfg.step_penalty);
    cfg.crater_penalty = rd.get<double>(p, "crater_penalty", cfg.crater_penalty);
    cfg.gamma = rd.get<double>(p, "gamma", cfg.gamma);
    if (!(cfg.slip_probability >= 0.0 && cfg.slip_probability < 1.0)) rd.fail("slip", "must lie in [0, 1)");
    if (!(cfg.gamma >= 0.0 && cfg.gamma < 1.0)) rd.fail("gamma", "must lie in [0, 1)");
    if (cfg.step_penalty > 0.0) rd.fail("step_penalty", "must be non-positive");
    if (cfg.crater_penalty > 0.0) rd.fail("crater_penalty", "must be non-positive");
    return cfg;
}

RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot open config file");
    std::stringstream buf;
    buf << in.rdbuf();
    const ConfigReader rd(buf.str(), path);
    const json root = parse_json_text(rd.text(), path);
    if (!root.is_object()) throw ConfigError(path.string() + ":1: config must be a JSON object");

    RunConfig cfg;
    cfg.source = path;
    const int version = rd.get<int>(root, "schema_version", -1);
    if (version != kSchemaVersion)
        rd.fail("schema_version", "expected " + std::to_string(kSchemaVersion) + ", got " + std::to_string(version));

    try {
        const json& env = rd.object(root, "environment");
        if (env.contains("mdp_file")) {
            fs::path file = rd.get<std::string>(env, "mdp_file", "");
            if (file.is_relative()) file = path.parent_path() / file;
            std::ifstream mf(file);
            if (!mf) rd.fail("mdp_file", "cannot open " + file.string());
            std::stringstream mb;
            mb << mf.rdbuf();
            cfg.mdp = mdp_from_json(parse_json_text(mb.str(), file));
        } else {
            const std::string name = rd.get<std::string>(env, "name", "crater_walk");
            if (name != "crater_walk") rd.fail("name", "unknown environment '" + name + "'");
            cfg.crater = read_crater(rd, env.value("params", json::object()));
            cfg.mdp = build_crater_walk(*cfg.crater);
        }
    } catch (const std::invalid_argument& e) {
        rd.fail("environment", e.what());
    }

    const json grid = root.value("grid", json::object());
    std::size_t K = 0;
    if (grid.contains("K")) {
        K = rd.positive<std::size_t>(grid, "K", 1);
    } else {
        const auto bins = rd.get<std::size_t>(grid, "bins", 201);
        if (bins < 3) rd.fail("bins", "needs at least 3 points");
        K = BudgetGrid::k_for_bins(bins);
    }
    if (grid.contains("range")) {
        const auto range = rd.get<std::vector<double>>(grid, "range", {});
        if (range.size() != 2 || !(range[0] < range[1])) rd.fail("range", "must be [lo, hi] with lo < hi");
        cfg.grid = BudgetGrid::with_range(range[0], range[1], K);
    } else {
        cfg.grid = BudgetGrid(cfg.mdp.r_gamma(), K);
    }

    const std::string mode = rd.get<std::string>(root, "mode", "both");
    if (mode == "both")
        cfg.modes = {RoundingMode::Lower, RoundingMode::Upper};
    else if (mode == "lower" || mode == "upper")
        cfg.modes = {rounding_mode_from_string(mode)};
    else
        rd.fail("mode", "must be lower, upper or both");

    const json& solver = rd.object(root, "solver");
    if (solver.contains("vi") == solver.contains("qlearn")) rd.fail("solver", "needs exactly one of vi, qlearn");
    if (solver.contains("vi")) {
        const json& vi = rd.object(solver, "vi");
        SolveOptions o;
        o.epsilon = rd.positive<double>(vi, "epsilon", o.epsilon);
        o.max_iters = rd.get<std::size_t>(vi, "max_iters", 0);
        cfg.vi = o;
    } else {
        const json& ql = rd.object(solver, "qlearn");
        QLearnSettings s;
        s.episodes = rd.positive<std::size_t>(ql, "episodes", s.episodes);
        s.step_cap = rd.positive<std::size_t>(ql, "step_cap", s.step_cap);
        s.step_size.kappa = rd.positive<double>(ql, "kappa", s.step_size.kappa);
        s.step_size.kappa_min = rd.get<double>(ql, "kappa_min", s.step_size.kappa_min);
        s.step_size.lambda = rd.get<double>(ql, "lambda", s.step_size.lambda);
        s.exploration.eps_start = rd.get<double>(ql, "eps_start", s.exploration.eps_start);
        s.exploration.eps_end = rd.get<double>(ql, "eps_end", s.exploration.eps_end);
        s.exploration.decay_steps = rd.get<std::size_t>(ql, "decay_steps", s.exploration.decay_steps);
        s.checkpoint_every = rd.get<std::size_t>(ql, "checkpoint_every", s.checkpoint_every);
        if (s.step_size.kappa_min < 0.0) rd.fail("kappa_min", "must be non-negative");
        if (s.step_size.lambda < 0.0) rd.fail("lambda", "must be non-negative");
        for (const char* k : {"eps_start", "eps_end"}) {
            const double v = rd.get<double>(ql, k, 0.5);
            if (!(v >= 0.0 && v <= 1.0)) rd.fail(k, "must lie in [0, 1]");
        }
        cfg.qlearn = s;
    }

    const json ev = root.value("evaluation", json::object());
    cfg.alphas = rd.get<std::vector<double>>(ev, "alphas", cfg.alphas);
    for (double a : cfg.alphas)
        if (!(a > 0.0 && a <= 1.0)) rd.fail("alphas", "every alpha must lie in (0, 1]");
    cfg.n_rollouts = rd.positive<std::size_t>(ev, "n_rollouts", cfg.n_rollouts);
    cfg.rollout_step_cap = rd.positive<std::size_t>(ev, "step_cap", cfg.rollout_step_cap);
    cfg.bins_list = rd.get<std::vector<std::size_t>>(ev, "bins_list", cfg.bins_list);
    cfg.export_returns = rd.get<bool>(ev, "export_returns", false);
    if (cfg.crater) cfg.crater_threshold = cfg.crater->crater_penalty;
    cfg.crater_threshold = rd.get<double>(ev, "crater_threshold", cfg.crater_threshold);

    cfg.seeds = rd.get<std::vector<std::uint64_t>>(root, "seeds", cfg.seeds);
    if (cfg.seeds.empty()) rd.fail("seeds", "must list at least one seed");
    cfg.output_dir = rd.get<std::string>(root, "output_dir", cfg.output_dir.string());
    return cfg;
}

// ---------------------------------------------------------------------------
// Helpers

/// Runs tasks on up to `workers` threads; rethrows the first failure in task
/// order once all tasks have finished.
void run_parallel(const std::vector<std::function<void()>>& tasks, std::size_t workers) {
    std::vector<std::exception_ptr> errors(tasks.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < tasks.size(); i = next++) {
            try {
                tasks[i]();
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t n = std::max<std::size_t>(1, std::min(workers, tasks.size()));
    {
        std::vector<std::jthread> pool;
        for (std::size_t i = 1; i < n; ++i) pool.emplace_back(worker);
        worker();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

std::size_t worker_count(std::size_t requested) {
    std::size_t n = std::max<std::size_t>(1, requested);
    if (const char* cap = std::getenv("CVAR_MAX_WORKERS")) {
        try {
            n = std::min<std::size_t>(n, std::max(1ul, std::stoul(cap)));
        } catch (const std::exception&) {
            throw ConfigError("CVAR_MAX_WORKERS must be a positive integer");
        }
    }
    return n;
}

std::ofstream open_output(const fs::path& p) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    return out;
}

void write_json(const fs::path& p, const json& j) { open_output(p) << j.dump(2) << '\n'; }

fs::path table_path(const fs::path& dir, RoundingMode m) { return dir / ("qtable_" + std::string(to_string(m)) + ".json"); }

void save_table(const fs::path& dir, const QTable& q, const QTableHeader& h) {
    fs::create_directories(dir);
    save_qtable(table_path(dir, h.mode).string(), q, h);
}

std::mutex log_mutex;
void log(const std::string& msg) {
    std::lock_guard lock(log_mutex);
    std::cerr << msg << std::endl;
}

std::pair<QTable, QTableHeader> load_checked(const fs::path& p, const TabularMdp& mdp) {
    if (!fs::exists(p)) throw ArtifactMismatch("table file not found: " + p.string());
    auto loaded = load_qtable(p.string());
    const QTable& q = loaded.first;
    if (loaded.second.env_fingerprint != fingerprint(mdp))
        throw ArtifactMismatch(p.string() + " was produced for a different environment");
    if (q.n_states() != mdp.n_states || q.n_actions() != mdp.n_actions)
        throw ArtifactMismatch(p.string() + " has the wrong state/action shape");
    return loaded;
}

// ---------------------------------------------------------------------------
// Commands

struct Common {
    std::string config;
    std::int64_t seed_offset = 0;
    std::string out;
    std::size_t workers = 1;
};

int cmd_solve(const RunConfig& cfg, const Common& c) {
    if (!cfg.vi) throw ConfigError(cfg.source.string() + ": solve needs a solver.vi block");
    const std::uint64_t fp = fingerprint(cfg.mdp);
    std::vector<std::function<void()>> tasks;
    for (RoundingMode mode : cfg.modes)
        tasks.emplace_back([&, mode] {
            const SolveReport rep = solve(cfg.mdp, cfg.grid, mode, *cfg.vi);
            save_table(cfg.output_dir, rep.q_star, {mode, cfg.mdp.gamma, fp});
            json j = report_json(rep, cfg.vi->epsilon);
            j["env_fingerprint"] = fp;
            write_json(cfg.output_dir / ("report_" + std::string(to_string(mode)) + ".json"), j);
            std::ostringstream msg;
            msg << to_string(mode) << ": " << rep.iterations << " sweeps, certified error " << rep.certified_error;
            for (const auto& w : rep.warnings) msg << "\n  warning: " << w;
            log(msg.str());
        });
    run_parallel(tasks, worker_count(c.workers));
    return kOk;
}

int cmd_learn(const RunConfig& cfg, const Common& c, const std::string& reference) {
    if (!cfg.qlearn) throw ConfigError(cfg.source.string() + ": learn needs a solver.qlearn block");
    std::optional<QTable> ref;
    if (!reference.empty()) {
        ref = load_checked(reference, cfg.mdp).first;
        if (ref->grid().size() != cfg.grid.size() || ref->grid().lo() != cfg.grid.lo() ||
            ref->grid().hi() != cfg.grid.hi())
            throw ArtifactMismatch(reference + " uses a different budget grid");
    }
    const std::uint64_t fp = fingerprint(cfg.mdp);
    std::vector<state_t> resets;
    if (cfg.crater) resets = crater_walk_safe_states(*cfg.crater);

    std::vector<std::function<void()>> tasks;
    for (std::uint64_t base : cfg.seeds)
        for (RoundingMode mode : cfg.modes)
            tasks.emplace_back([&, base, mode] {
                const std::uint64_t seed = base + static_cast<std::uint64_t>(c.seed_offset);
                LearnOptions o;
                o.mode = mode;
                o.episodes = cfg.qlearn->episodes;
                o.step_cap = cfg.qlearn->step_cap;
                o.step_size = cfg.qlearn->step_size;
                o.exploration = cfg.qlearn->exploration;
                o.checkpoint_every = cfg.qlearn->checkpoint_every;
                o.seed = seed;
                o.initial_states = resets;
                if (ref) o.reference = &*ref;
                const LearnResult res = learn(cfg.mdp, cfg.grid, o);

                const fs::path dir = cfg.output_dir / ("seed_" + std::to_string(seed));
                const std::string m = to_string(mode);
                save_table(dir, res.q, {mode, cfg.mdp.gamma, fp});
                auto trace = open_output(dir / ("trace_" + m + ".csv"));
                write_trace_csv(trace, res.trace);
                json rep{{"mode", m},
                         {"seed", seed},
                         {"episodes", o.episodes},
                         {"total_steps", res.total_steps},
                         {"robbins_monro", o.step_size.robbins_monro()},
                         {"grid", cfg.grid.summary()},
                         {"env_fingerprint", fp}};
                if (ref) rep["final_sup_error"] = *res.trace.back().sup_error;
                write_json(dir / ("report_" + m + ".json"), rep);
                log("seed " + std::to_string(seed) + " " + m + ": " + std::to_string(res.total_steps) + " steps");
            });
    run_parallel(tasks, worker_count(c.workers));
    return kOk;
}

int cmd_evaluate(const RunConfig& cfg, const Common& c, std::vector<std::string> tables) {
    if (tables.empty())
        for (RoundingMode m : {RoundingMode::Lower, RoundingMode::Upper})
            if (fs::exists(table_path(cfg.output_dir, m))) tables.push_back(table_path(cfg.output_dir, m).string());
    if (tables.empty()) throw ArtifactMismatch("no table given and none found in " + cfg.output_dir.string());

    std::optional<QTable> lower, upper;
    for (const auto& t : tables) {
        auto [q, header] = load_checked(t, cfg.mdp);
        auto& slot = header.mode == RoundingMode::Lower ? lower : upper;
        if (slot) throw ConfigError("two " + std::string(to_string(header.mode)) + " tables given");
        slot = std::move(q);
    }
    if (lower && upper && lower->grid().size() != upper->grid().size())
        throw ArtifactMismatch("lower and upper tables use different grids");
    const BoundTables bt{lower ? &*lower : nullptr, upper ? &*upper : nullptr};
    const QTable& policy_table = lower ? *lower : *upper;
    const RoundingMode policy_mode = lower ? RoundingMode::Lower : RoundingMode::Upper;

    std::vector<std::vector<SweepRow>> per_seed(cfg.seeds.size());
    std::vector<std::function<void()>> tasks;
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
        tasks.emplace_back([&, i] {
            RolloutOptions o;
            o.n_rollouts = cfg.n_rollouts;
            o.step_cap = cfg.rollout_step_cap;
            o.seed = cfg.seeds[i] + static_cast<std::uint64_t>(c.seed_offset);
            o.crater_threshold = cfg.crater_threshold;
            per_seed[i] = alpha_sweep(cfg.mdp, bt, cfg.alphas, o);
            if (!cfg.export_returns) return;
            // same seed and stream as the sweep, so these are the swept samples
            for (std::size_t a = 0; a < cfg.alphas.size(); ++a) {
                const auto sol = outer_optimize(policy_table, cfg.alphas[a], cfg.mdp.initial_state, policy_mode);
                RolloutBatch b = run_rollouts(cfg.mdp, policy_table, policy_mode, sol.z_star, o, a);
                std::ostringstream name;
                name << "returns_seed" << o.seed << "_alpha" << cfg.alphas[a] << ".csv";
                auto out = open_output(cfg.output_dir / name.str());
                write_returns_csv(out, b.sample);
            }
        });
    run_parallel(tasks, worker_count(c.workers));

    std::vector<SweepRow> rows;
    for (auto& r : per_seed) rows.insert(rows.end(), r.begin(), r.end());
    auto out = open_output(cfg.output_dir / "sweep.csv");
    write_sweep_csv(out, rows);
    log("wrote " + (cfg.output_dir / "sweep.csv").string() + " (" + std::to_string(rows.size()) + " rows)");
    return kOk;
}

int cmd_compare_bounds(const RunConfig& cfg, const Common& c) {
    const SolveOptions opts = cfg.vi.value_or(SolveOptions{});
    // one solve per (bins, mode); spread over workers, then assemble in order
    std::vector<std::size_t> bins = cfg.bins_list;
    std::vector<std::pair<std::optional<SolveReport>, std::optional<SolveReport>>> solved(bins.size());
    std::vector<std::function<void()>> tasks;
    for (std::size_t i = 0; i < bins.size(); ++i)
        for (RoundingMode mode : {RoundingMode::Lower, RoundingMode::Upper})
            tasks.emplace_back([&, i, mode] {
                const BudgetGrid g(cfg.mdp.r_gamma(), BudgetGrid::k_for_bins(bins[i]));
                auto rep = solve(cfg.mdp, g, mode, opts);
                (mode == RoundingMode::Lower ? solved[i].first : solved[i].second) = std::move(rep);
            });
    run_parallel(tasks, worker_count(c.workers));

    std::vector<BoundsRow> rows;
    for (std::size_t i = 0; i < bins.size(); ++i) {
        const QTable& lo = solved[i].first->q_star;
        const QTable& up = solved[i].second->q_star;
        for (double alpha : cfg.alphas) {
            BoundsRow r;
            r.bins = lo.n_points();
            r.delta = lo.grid().delta();
            r.alpha = alpha;
            r.psi_lower = outer_optimize(lo, alpha, cfg.mdp.initial_state).psi_hat;
            r.psi_upper = outer_optimize(up, alpha, cfg.mdp.initial_state, RoundingMode::Upper).psi_hat;
            r.gap_bound = 2.0 * cfg.mdp.gamma * r.delta / ((1.0 - cfg.mdp.gamma) * alpha);
            rows.push_back(r);
        }
    }
    auto out = open_output(cfg.output_dir / "bounds.csv");
    write_bounds_csv(out, rows);
    log("wrote " + (cfg.output_dir / "bounds.csv").string());
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Static CVaR solvers on tabular MDPs"};
    app.require_subcommand(1);
    Common common;
    std::string reference;
    std::vector<std::string> tables;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "JSON run config")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed-offset", common.seed_offset, "added to every configured seed");
        sub->add_option("--out", common.out, "output directory (overrides config and CVAR_OUT_DIR)");
        sub->add_option("--workers", common.workers, "parallel seeds/modes (capped by CVAR_MAX_WORKERS)")
            ->check(CLI::PositiveNumber);
    };
    auto* solve_cmd = app.add_subcommand("solve", "value iteration per rounding mode");
    auto* learn_cmd = app.add_subcommand("learn", "Q-learning per seed and mode");
    auto* eval_cmd = app.add_subcommand("evaluate", "alpha sweep with policy rollouts");
    auto* bounds_cmd = app.add_subcommand("compare-bounds", "lower/upper bounds across grid sizes");
    for (auto* s : {solve_cmd, learn_cmd, eval_cmd, bounds_cmd}) add_common(s);
    learn_cmd->add_option("--reference", reference, "value-iteration table for the error trace");
    eval_cmd->add_option("--table", tables, "table file(s); defaults to the output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfigError;
    }

    try {
        RunConfig cfg = load_config(common.config);
        if (const char* env = std::getenv("CVAR_OUT_DIR"); env && *env) cfg.output_dir = env;
        if (!common.out.empty()) cfg.output_dir = common.out;

        if (*solve_cmd) return cmd_solve(cfg, common);
        if (*learn_cmd) return cmd_learn(cfg, common, reference);
        if (*eval_cmd) return cmd_evaluate(cfg, common, tables);
        return cmd_compare_bounds(cfg, common);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << std::endl;
        return kConfigError;
    } catch (const NonConvergence& e) {
        std::cerr << "non-convergence: " << e.what() << std::endl;
        return kNonConvergence;
    } catch (const ArtifactMismatch& e) {
        std::cerr << "artifact mismatch: " << e.what() << std::endl;
        return kMismatch;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kFailure;
    }
}

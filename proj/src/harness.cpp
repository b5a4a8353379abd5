#include "mpcimit/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <thread>

namespace mpcimit {

namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
    return out;
}

}  // namespace

const char* to_string(Algorithm a) {
    switch (a) {
        case Algorithm::BehaviorCloning: return "bc";
        case Algorithm::Forward: return "forward";
        case Algorithm::ForwardSwitch: return "forward_switch";
        case Algorithm::BcSwitch: return "bc_switch";
    }
    return "unknown";
}

const char* to_string(ExpertKind k) { return k == ExpertKind::Robust ? "robust" : "nominal"; }
const char* to_string(ASource s) { return s == ASource::Paper ? "paper" : "random"; }

std::uint64_t fnv1a_hash(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

void ExperimentConfig::validate() const {
    if (d < 2) throw ConfigError("config: d must be >= 2");
    if (n_horizon < 1) throw ConfigError("config: n_horizon must be >= 1");
    if (t_imitation < 1) throw ConfigError("config: t_imitation must be >= 1");
    if (!(eps > 0.0)) throw ConfigError("config: eps must be > 0");
    if (!(q_scale > 0.0) || !(r_scale > 0.0)) throw ConfigError("config: cost scales must be > 0");
    if (budgets.empty()) throw ConfigError("config: budgets must be nonempty");
    if (!std::is_sorted(budgets.begin(), budgets.end()))
        throw ConfigError("config: budgets must be sorted ascending");
    for (int b : budgets)
        if (b < 1) throw ConfigError("config: budgets must be positive");
    if (repeats < 1 || test_states < 1) throw ConfigError("config: repeats/test_states >= 1");
    if (ell < 1) throw ConfigError("config: ell must be >= 1");
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("config: delta in (0,1)");
    if (epochs < 1 || !(learning_rate > 0.0)) throw ConfigError("config: bad training params");
    if (algorithms.empty()) throw ConfigError("config: algorithms must be nonempty");
    const bool has_fs = std::find(algorithms.begin(), algorithms.end(), Algorithm::ForwardSwitch) !=
                        algorithms.end();
    const bool has_bcs = std::find(algorithms.begin(), algorithms.end(), Algorithm::BcSwitch) !=
                         algorithms.end();
    if (has_bcs && !has_fs)
        throw ConfigError("config: bc_switch requires forward_switch in the algorithm list");
    if (a_source == ASource::Paper && d != 3 && d != 5)
        throw ConfigError("config: paper matrices exist for d in {3, 5}");
}

std::string ExperimentConfig::to_text() const {
    std::ostringstream os;
    os << "d = " << d << "\n";
    os << "a_source = " << to_string(a_source) << "\n";
    os << "system_seed = " << system_seed << "\n";
    os << "q_scale = " << fmt_double(q_scale) << "\n";
    os << "r_scale = " << fmt_double(r_scale) << "\n";
    os << "n_horizon = " << n_horizon << "\n";
    os << "t_imitation = " << t_imitation << "\n";
    os << "eps = " << fmt_double(eps) << "\n";
    os << "schedule = " << to_string(schedule) << "\n";
    os << "ell = " << ell << "\n";
    os << "delta = " << fmt_double(delta) << "\n";
    os << "algorithms = ";
    for (std::size_t i = 0; i < algorithms.size(); ++i)
        os << (i ? "," : "") << to_string(algorithms[i]);
    os << "\n";
    os << "budgets = ";
    for (std::size_t i = 0; i < budgets.size(); ++i) os << (i ? "," : "") << budgets[i];
    os << "\n";
    os << "repeats = " << repeats << "\n";
    os << "test_states = " << test_states << "\n";
    os << "expert = " << to_string(expert) << "\n";
    os << "terminal_set = " << (terminal_set ? "on" : "off") << "\n";
    os << "epochs = " << epochs << "\n";
    os << "learning_rate = " << fmt_double(learning_rate) << "\n";
    os << "out_dir = " << out_dir << "\n";
    os << "root_seed = " << root_seed << "\n";
    return os.str();
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        try {
            if (key == "d") cfg.d = std::stoi(val);
            else if (key == "a_source") {
                if (val == "paper") cfg.a_source = ASource::Paper;
                else if (val == "random") cfg.a_source = ASource::Random;
                else throw ConfigError("config: a_source must be paper|random");
            } else if (key == "system_seed") cfg.system_seed = std::stoull(val);
            else if (key == "q_scale") cfg.q_scale = std::stod(val);
            else if (key == "r_scale") cfg.r_scale = std::stod(val);
            else if (key == "n_horizon") cfg.n_horizon = std::stoi(val);
            else if (key == "t_imitation") cfg.t_imitation = std::stoi(val);
            else if (key == "eps") cfg.eps = std::stod(val);
            else if (key == "schedule") {
                if (val == "flat") cfg.schedule = ScheduleMode::Flat;
                else if (val == "theory") cfg.schedule = ScheduleMode::Theory;
                else throw ConfigError("config: schedule must be flat|theory");
            } else if (key == "ell") cfg.ell = std::stoi(val);
            else if (key == "delta") cfg.delta = std::stod(val);
            else if (key == "algorithms") {
                cfg.algorithms.clear();
                for (const std::string& a : split(val, ',')) {
                    if (a == "bc") cfg.algorithms.push_back(Algorithm::BehaviorCloning);
                    else if (a == "forward") cfg.algorithms.push_back(Algorithm::Forward);
                    else if (a == "forward_switch") cfg.algorithms.push_back(Algorithm::ForwardSwitch);
                    else if (a == "bc_switch") cfg.algorithms.push_back(Algorithm::BcSwitch);
                    else throw ConfigError("config: unknown algorithm '" + a + "'");
                }
            } else if (key == "budgets") {
                cfg.budgets.clear();
                for (const std::string& b : split(val, ',')) cfg.budgets.push_back(std::stoi(b));
            } else if (key == "repeats") cfg.repeats = std::stoi(val);
            else if (key == "test_states") cfg.test_states = std::stoi(val);
            else if (key == "expert") {
                if (val == "robust") cfg.expert = ExpertKind::Robust;
                else if (val == "nominal") cfg.expert = ExpertKind::Nominal;
                else throw ConfigError("config: expert must be robust|nominal");
            } else if (key == "terminal_set") {
                if (val == "on") cfg.terminal_set = true;
                else if (val == "off") cfg.terminal_set = false;
                else throw ConfigError("config: terminal_set must be on|off");
            } else if (key == "epochs") cfg.epochs = std::stoi(val);
            else if (key == "learning_rate") cfg.learning_rate = std::stod(val);
            else if (key == "out_dir") cfg.out_dir = val;
            else if (key == "root_seed") cfg.root_seed = std::stoull(val);
            else throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("config line " + std::to_string(lineno) + ": bad value for '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

BenchmarkSystem make_benchmark_system(int d, ASource source, std::uint64_t seed) {
    if (d < 2) throw InvalidInput("make_benchmark_system: d must be >= 2");
    Matrix A = Matrix::Zero(d, d);
    for (int i = 0; i < d; ++i) A(i, i) = 1.1;
    if (source == ASource::Paper) {
        if (d == 3) {
            const double col[] = {0.86075747, 0.4110535};
            for (int j = 1; j < 3; ++j)
                for (int i = 0; i < j; ++i) A(i, j) = col[j - 1];
        } else if (d == 5) {
            const double col[] = {0.86075747, 0.4110535, 0.17953273, -0.3053808};
            for (int j = 1; j < 5; ++j)
                for (int i = 0; i < j; ++i) A(i, j) = col[j - 1];
        } else {
            throw UnknownDimension("make_benchmark_system: paper matrices exist for d in {3, 5}");
        }
    } else {
        Rng rng(seed);
        for (int j = 1; j < d; ++j) {
            const double v = rng.uniform(-2.0, 2.0);
            for (int i = 0; i < j; ++i) A(i, j) = v;
        }
    }
    Matrix B = Matrix::Zero(d, 1);
    B(d - 1, 0) = 1.0;
    return BenchmarkSystem{
        LinearSystem(A, B),
        Polytope::box(Vector::Constant(d, -100.0), Vector::Constant(d, 100.0)),
        Polytope::box(Vector::Constant(1, -10.0), Vector::Constant(1, 10.0)),
        InitialDistribution(Vector::Constant(d, 8.0), Vector::Constant(d, 10.0))};
}

std::vector<Aggregate> aggregate_rows(const std::vector<MetricRow>& rows) {
    std::map<std::pair<std::string, int>, std::vector<const MetricRow*>> groups;
    std::vector<std::pair<std::string, int>> order;
    for (const MetricRow& r : rows) {
        const auto key = std::make_pair(r.algorithm, r.demo_count);
        if (groups.find(key) == groups.end()) order.push_back(key);
        groups[key].push_back(&r);
    }
    std::vector<Aggregate> out;
    for (const auto& key : order) {
        const auto& g = groups[key];
        Aggregate a;
        a.algorithm = key.first;
        a.demo_count = key.second;
        a.repeats = static_cast<int>(g.size());
        double sc = 0.0, ss = 0.0;
        for (const MetricRow* r : g) {
            sc += r->normalized_cost;
            ss += r->constraint_satisfaction_ratio;
        }
        a.mean_cost = sc / a.repeats;
        a.mean_satisfaction = ss / a.repeats;
        if (a.repeats > 1) {
            double vc = 0.0, vs = 0.0;
            for (const MetricRow* r : g) {
                vc += std::pow(r->normalized_cost - a.mean_cost, 2);
                vs += std::pow(r->constraint_satisfaction_ratio - a.mean_satisfaction, 2);
            }
            const double inv = 1.0 / (a.repeats - 1);
            a.ci_cost = 1.96 * std::sqrt(vc * inv / a.repeats);
            a.ci_satisfaction = 1.96 * std::sqrt(vs * inv / a.repeats);
        }
        out.push_back(std::move(a));
    }
    return out;
}

void write_metrics_csv(const std::vector<MetricRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_metrics_csv: cannot open " + path);
    out << "algorithm,demo_count,normalized_cost,constraint_satisfaction_ratio,seed\n";
    for (const MetricRow& r : rows)
        out << r.algorithm << "," << r.demo_count << "," << fmt_double(r.normalized_cost) << ","
            << fmt_double(r.constraint_satisfaction_ratio) << "," << r.seed << "\n";
    if (!out) throw IoError("write_metrics_csv: write failed for " + path);
}

std::vector<MetricRow> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_metrics_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("read_metrics_csv: empty file " + path);
    std::vector<MetricRow> rows;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto parts = split(line, ',');
        if (parts.size() != 5) throw IoError("read_metrics_csv: malformed row in " + path);
        MetricRow r;
        r.algorithm = parts[0];
        r.demo_count = std::stoi(parts[1]);
        r.normalized_cost = std::stod(parts[2]);
        r.constraint_satisfaction_ratio = std::stod(parts[3]);
        r.seed = std::stoull(parts[4]);
        rows.push_back(std::move(r));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// SVG plotting
// ---------------------------------------------------------------------------

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

struct Series {
    std::string label;
    std::vector<double> x, y, err;
};

void write_svg_plot(const std::string& path, const std::string& title, const std::string& xlabel,
                    const std::string& ylabel, const std::vector<Series>& series, bool log_y) {
    const double W = 640, H = 440, ml = 70, mr = 160, mt = 40, mb = 55;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const Series& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            const double lo = s.y[i] - (s.err.empty() ? 0.0 : s.err[i]);
            const double hi = s.y[i] + (s.err.empty() ? 0.0 : s.err[i]);
            ymin = std::min(ymin, log_y ? std::max(lo, 1e-6) : lo);
            ymax = std::max(ymax, hi);
        }
    if (xmin > xmax) { xmin = 0; xmax = 1; }
    if (ymin > ymax) { ymin = 0; ymax = 1; }
    if (xmax - xmin < 1e-12) { xmax += 1; xmin -= 1; }
    auto ty = [&](double v) {
        if (log_y) v = std::log10(std::max(v, 1e-6));
        double lo = log_y ? std::log10(std::max(ymin, 1e-6)) : ymin;
        double hi = log_y ? std::log10(std::max(ymax, 1e-6)) : ymax;
        if (hi - lo < 1e-12) hi = lo + 1;
        return H - mb - (v - lo) / (hi - lo) * (H - mt - mb);
    };
    auto tx = [&](double v) { return ml + (v - xmin) / (xmax - xmin) * (W - ml - mr); };

    std::ofstream out(path);
    if (!out) throw IoError("write_svg_plot: cannot open " + path);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << W / 2 << "' y='22' text-anchor='middle' font-size='15'>" << title
        << "</text>\n";
    // axes
    out << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr << "' y2='" << H - mb
        << "' stroke='black'/>\n";
    out << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << H - mb
        << "' stroke='black'/>\n";
    out << "<text x='" << (ml + W - mr) / 2 << "' y='" << H - 14
        << "' text-anchor='middle' font-size='12'>" << xlabel << "</text>\n";
    out << "<text x='16' y='" << (mt + H - mb) / 2 << "' text-anchor='middle' font-size='12' "
        << "transform='rotate(-90 16 " << (mt + H - mb) / 2 << ")'>" << ylabel << "</text>\n";
    for (int k = 0; k <= 4; ++k) {  // ticks
        const double fx = xmin + (xmax - xmin) * k / 4.0;
        out << "<text x='" << tx(fx) << "' y='" << H - mb + 18
            << "' text-anchor='middle' font-size='10'>" << fx << "</text>\n";
        double fy;
        if (log_y) {
            const double lo = std::log10(std::max(ymin, 1e-6)), hi = std::log10(std::max(ymax, 1e-6));
            fy = std::pow(10.0, lo + (hi - lo) * k / 4.0);
        } else {
            fy = ymin + (ymax - ymin) * k / 4.0;
        }
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3g", fy);
        out << "<text x='" << ml - 8 << "' y='" << ty(fy) + 4
            << "' text-anchor='end' font-size='10'>" << buf << "</text>\n";
    }
    int ci = 0;
    for (const Series& s : series) {
        const char* color = kPalette[ci % 6];
        out << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
        for (std::size_t i = 0; i < s.x.size(); ++i) out << tx(s.x[i]) << "," << ty(s.y[i]) << " ";
        out << "'/>\n";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            out << "<circle cx='" << tx(s.x[i]) << "' cy='" << ty(s.y[i]) << "' r='3' fill='"
                << color << "'/>\n";
            if (!s.err.empty() && s.err[i] > 0) {
                const double x = tx(s.x[i]);
                out << "<line x1='" << x << "' y1='" << ty(s.y[i] - s.err[i]) << "' x2='" << x
                    << "' y2='" << ty(s.y[i] + s.err[i]) << "' stroke='" << color << "'/>\n";
                out << "<line x1='" << x - 3 << "' y1='" << ty(s.y[i] - s.err[i]) << "' x2='"
                    << x + 3 << "' y2='" << ty(s.y[i] - s.err[i]) << "' stroke='" << color
                    << "'/>\n";
                out << "<line x1='" << x - 3 << "' y1='" << ty(s.y[i] + s.err[i]) << "' x2='"
                    << x + 3 << "' y2='" << ty(s.y[i] + s.err[i]) << "' stroke='" << color
                    << "'/>\n";
            }
        }
        out << "<text x='" << W - mr + 12 << "' y='" << mt + 16 * ci + 10 << "' font-size='12' fill='"
            << color << "'>" << s.label << "</text>\n";
        ++ci;
    }
    out << "</svg>\n";
}

void write_trajectory_svg(const std::string& path,
                          const std::vector<std::pair<std::string, std::vector<Vector>>>& trajs) {
    std::vector<Series> series;
    for (const auto& [label, states] : trajs) {
        Series s;
        s.label = label;
        for (const Vector& x : states) {
            if (x.size() < 2) continue;
            s.x.push_back(x[0]);
            s.y.push_back(x[1]);
        }
        series.push_back(std::move(s));
    }
    // reuse the line plotter; x/y here are the first two state coordinates
    write_svg_plot(path, "sample trajectories (first two coordinates)", "x_1", "x_2", series,
                   /*log_y=*/false);
}

}  // namespace

// ---------------------------------------------------------------------------
// experiment runner
// ---------------------------------------------------------------------------

namespace {

struct ExpertBundle {
    std::shared_ptr<MpcController> nominal;
    std::shared_ptr<RmpcController> robust;
    ExpertPolicy expert;
    ControlFn control_fn;
};

ExpertBundle make_expert(const ExperimentConfig& cfg, const BenchmarkSystem& bench,
                         const Matrix& Q, const Matrix& R) {
    const TerminalMode mode = cfg.terminal_set ? TerminalMode::LqrCostAndSet : TerminalMode::LqrCost;
    ExpertBundle b;
    if (cfg.expert == ExpertKind::Nominal) {
        b.nominal = std::make_shared<MpcController>(
            make_mpc_spec(bench.sys, Q, R, cfg.n_horizon, bench.X, bench.U, mode));
        auto ctl = b.nominal;
        b.expert = ExpertPolicy{[ctl](const Vector& x) { return ctl->control(x); },
                                [ctl](const Vector& x) { return ctl->is_feasible(x); }, bench.X};
        b.control_fn = [ctl](int, const Vector& x) { return ctl->control(x); };
    } else {
        b.robust = std::make_shared<RmpcController>(
            make_rmpc_spec(bench.sys, Q, R, cfg.n_horizon, bench.X, bench.U, cfg.eps, mode));
        auto ctl = b.robust;
        b.expert = ExpertPolicy{[ctl](const Vector& x) { return ctl->control(x); },
                                [ctl](const Vector& x) { return ctl->is_feasible(x); }, bench.X};
        b.control_fn = [ctl](int, const Vector& x) { return ctl->control(x); };
    }
    return b;
}

struct Baseline {
    std::vector<Vector> test_states;
    std::vector<Trajectory> expert_trajs;
};

struct CellTask {
    int index = 0;
    Algorithm algorithm = Algorithm::BehaviorCloning;
    int budget = 0;
    int repeat = 0;
    std::uint64_t seed = 0;
};

struct CellOutput {
    MetricRow row;
    int tau_inf = -1;
    int labels = 0;
    double seconds = 0.0;
    std::vector<Vector> sample_states;  // rollout from the first test state
};

struct FsOutcome {
    int tau_inf = 0;
    int labels = 0;
};

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto t_start = std::chrono::steady_clock::now();

    const BenchmarkSystem bench = make_benchmark_system(cfg.d, cfg.a_source, cfg.system_seed);
    const Matrix Q = cfg.q_scale * Matrix::Identity(cfg.d, cfg.d);
    const Matrix R = cfg.r_scale * Matrix::Identity(1, 1);
    const QuadCost stage_cost(Q, R);
    const SimEnv env{bench.sys, stage_cost, bench.X, bench.U};
    const LqrSolution lqr = solve_dare(bench.sys, stage_cost);

    // level set for the switch test, over the sets the expert actually uses
    EllipsoidLevelSet O_test = [&] {
        if (cfg.expert == ExpertKind::Robust) {
            const StabilityEnvelope envl = stability_envelope(lqr.A_K);
            const Ball Z = min_disturbance_invariant_bound(envl, cfg.eps, cfg.d);
            const auto Xb = pontryagin_diff(bench.X, Z);
            const auto Ub = pontryagin_diff(bench.U, Ball(operator_norm(lqr.K) * Z.radius, 1));
            if (!Xb || !Ub) throw EmptyTightenedSet("run_experiment: eps too large");
            return lqr_levelset(lqr.P, lqr.K, *Xb, *Ub);
        }
        return lqr_levelset(lqr.P, lqr.K, bench.X, bench.U);
    }();

    // per-repeat test states and expert baselines
    std::vector<Baseline> baselines(cfg.repeats);
    for (int rep = 0; rep < cfg.repeats; ++rep) {
        Rng rng(derive_seed(cfg.root_seed, 500000 + rep));
        ExpertBundle bundle = make_expert(cfg, bench, Q, R);
        for (int i = 0; i < cfg.test_states; ++i) {
            const Vector x0 = bench.D.sample(rng);
            Trajectory traj = rollout(env, bundle.control_fn, x0, cfg.t_imitation);
            if (traj.failure)
                throw ExpertInfeasible("run_experiment: expert baseline failed at repeat " +
                                       std::to_string(rep) + ": " + traj.failure->reason);
            baselines[rep].test_states.push_back(x0);
            baselines[rep].expert_trajs.push_back(std::move(traj));
        }
    }

    // cells, algorithm-major; bc_switch runs in a second wave
    std::vector<CellTask> wave1, wave2;
    int cell_index = 0;
    for (Algorithm a : cfg.algorithms)
        for (int b : cfg.budgets)
            for (int rep = 0; rep < cfg.repeats; ++rep) {
                CellTask t{cell_index, a, b, rep, derive_seed(cfg.root_seed, cell_index)};
                ++cell_index;
                (a == Algorithm::BcSwitch ? wave2 : wave1).push_back(t);
            }
    const int n_cells = cell_index;
    std::vector<CellOutput> outputs(n_cells);
    std::vector<std::exception_ptr> errors(n_cells);
    std::map<std::pair<int, int>, FsOutcome> fs_outcomes;  // (budget, repeat)

    const auto run_cell = [&](const CellTask& task, const std::map<std::pair<int, int>, FsOutcome>* fs) {
        const auto t0 = std::chrono::steady_clock::now();
        CellOutput out;
        TrainConfig tc;
        tc.learning_rate = cfg.learning_rate;
        tc.epochs = cfg.epochs;
        tc.rng_seed = task.seed;

        ExpertBundle bundle = make_expert(cfg, bench, Q, R);
        const int per_stage = std::max(1, task.budget / cfg.t_imitation);

        ControlFn policy_fn;
        int labels = 0;
        int tau_inf = -1;
        if (task.algorithm == Algorithm::BehaviorCloning) {
            const int n_traj = std::max(1, task.budget / cfg.t_imitation);
            ImitationReport rep;
            auto policy = std::make_shared<MlpPolicy>(behavior_cloning(
                bundle.expert, bench.sys, bench.D, n_traj, cfg.t_imitation, tc, bench.U, &rep));
            labels = rep.expert_labels;
            policy_fn = [policy](int, const Vector& x) { return policy->forward(x); };
        } else if (task.algorithm == Algorithm::Forward) {
            ScheduleParams params{per_stage, 0.0, cfg.t_imitation, cfg.ell, cfg.eps, cfg.delta};
            auto policy = std::make_shared<TimeVaryingPolicy>(forward_train(
                bundle.expert, bench.sys, bench.D, params, cfg.schedule, tc, bench.U));
            labels = policy->report.expert_labels;
            policy_fn = [policy](int t, const Vector& x) { return policy->control(t, x); };
        } else if (task.algorithm == Algorithm::ForwardSwitch) {
            ScheduleParams params{per_stage, 0.0, cfg.t_imitation, cfg.ell, cfg.eps, cfg.delta};
            auto policy = std::make_shared<TimeVaryingPolicy>(
                forward_switch(bundle.expert, bench.sys, bench.D, params, cfg.schedule, tc,
                               bench.U, O_test, lqr.K));
            labels = policy->report.expert_labels;
            tau_inf = policy->report.tau_inf;
            policy_fn = [policy](int t, const Vector& x) { return policy->control(t, x); };
        } else {  // BcSwitch: BC trained over tau steps, LQR tail afterwards
            FsOutcome fo{std::min(12, cfg.t_imitation), 0};
            if (fs) {
                const auto it = fs->find({task.budget, task.repeat});
                if (it == fs->end())
                    throw ConfigError("run_experiment: bc_switch requires a forward_switch cell");
                fo = it->second;
            }
            const int tau = std::max(1, fo.tau_inf);
            const int n_traj = std::max(1, fo.labels > 0 ? fo.labels / tau : task.budget / tau);
            ImitationReport rep;
            auto policy = std::make_shared<MlpPolicy>(
                behavior_cloning(bundle.expert, bench.sys, bench.D, n_traj, tau, tc, bench.U, &rep));
            labels = rep.expert_labels;
            tau_inf = tau;
            const Matrix K = lqr.K;
            const Polytope U = bench.U;
            policy_fn = [policy, K, U, tau](int t, const Vector& x) {
                if (t < tau) return policy->forward(x);
                const Vector raw = K * x;
                return Vector(raw.cwiseMax(U.lb).cwiseMin(U.ub));
            };
        }

        // evaluation on the repeat's shared test states
        const Baseline& base = baselines[task.repeat];
        double sum_cost = 0.0, sum_sat = 0.0;
        for (int i = 0; i < cfg.test_states; ++i) {
            const Trajectory traj = rollout(env, policy_fn, base.test_states[i], cfg.t_imitation);
            sum_cost += normalized_cost(traj, base.expert_trajs[i]);
            sum_sat += constraint_satisfaction(traj);
            if (i == 0) out.sample_states = traj.states;
        }

        out.row = MetricRow{to_string(task.algorithm), labels, sum_cost / cfg.test_states,
                            sum_sat / cfg.test_states, task.seed};
        out.tau_inf = tau_inf;
        out.labels = labels;
        out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return out;
    };

    const auto run_wave = [&](const std::vector<CellTask>& wave,
                              const std::map<std::pair<int, int>, FsOutcome>* fs) {
        std::atomic<std::size_t> next{0};
        const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
        const unsigned n_threads = std::min<unsigned>(hw, static_cast<unsigned>(wave.size()));
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < n_threads; ++w)
            pool.emplace_back([&] {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= wave.size()) return;
                    try {
                        outputs[wave[i].index] = run_cell(wave[i], fs);
                    } catch (...) {
                        errors[wave[i].index] = std::current_exception();
                    }
                }
            });
        for (auto& t : pool) t.join();
        for (const CellTask& task : wave)
            if (errors[task.index]) std::rethrow_exception(errors[task.index]);
    };

    run_wave(wave1, nullptr);
    for (const CellTask& task : wave1)
        if (task.algorithm == Algorithm::ForwardSwitch)
            fs_outcomes[{task.budget, task.repeat}] =
                FsOutcome{std::max(1, outputs[task.index].tau_inf), outputs[task.index].labels};
    run_wave(wave2, &fs_outcomes);

    ExperimentResult result;
    result.manifest.config_text = cfg.to_text();
    result.manifest.config_hash = fnv1a_hash(result.manifest.config_text);
    for (int i = 0; i < n_cells; ++i) {
        result.rows.push_back(outputs[i].row);
        result.manifest.cell_seeds.push_back(derive_seed(cfg.root_seed, i));
        result.manifest.cell_seconds.push_back(outputs[i].seconds);
    }

    // sample trajectories: expert plus each algorithm at the largest budget,
    // last repeat, first test state
    const Baseline& plot_base = baselines[cfg.repeats - 1];
    result.sample_trajectories.emplace_back("expert", plot_base.expert_trajs[0].states);
    for (Algorithm a : cfg.algorithms) {
        for (int i = n_cells - 1; i >= 0; --i) {
            const MetricRow& r = outputs[i].row;
            if (r.algorithm == to_string(a) && !outputs[i].sample_states.empty()) {
                result.sample_trajectories.emplace_back(r.algorithm, outputs[i].sample_states);
                break;
            }
        }
    }

    result.manifest.total_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
}

void emit_outputs(const ExperimentResult& result, const std::string& outdir) {
    if (result.rows.empty()) throw InvalidInput("emit_outputs: no rows");
    std::error_code ec;
    fs::create_directories(outdir, ec);
    if (ec) throw IoError("emit_outputs: cannot create " + outdir);

    write_metrics_csv(result.rows, (fs::path(outdir) / "metrics.csv").string());

    std::ofstream man(fs::path(outdir) / "manifest.txt");
    if (!man) throw IoError("emit_outputs: cannot write manifest");
    man << "config_hash = " << result.manifest.config_hash << "\n";
    man << "total_seconds = " << result.manifest.total_seconds << "\n";
    man << "cell_seeds =";
    for (std::uint64_t s : result.manifest.cell_seeds) man << " " << s;
    man << "\n";
    man << "cell_seconds =";
    for (double s : result.manifest.cell_seconds) man << " " << s;
    man << "\n";
    man << "--- config ---\n" << result.manifest.config_text;

    const auto aggs = aggregate_rows(result.rows);
    std::map<std::string, Series> cost_series, sat_series;
    std::vector<std::string> order;
    for (const Aggregate& a : aggs) {
        if (cost_series.find(a.algorithm) == cost_series.end()) {
            order.push_back(a.algorithm);
            cost_series[a.algorithm].label = a.algorithm;
            sat_series[a.algorithm].label = a.algorithm;
        }
        cost_series[a.algorithm].x.push_back(a.demo_count);
        cost_series[a.algorithm].y.push_back(a.mean_cost);
        cost_series[a.algorithm].err.push_back(a.ci_cost);
        sat_series[a.algorithm].x.push_back(a.demo_count);
        sat_series[a.algorithm].y.push_back(a.mean_satisfaction);
        sat_series[a.algorithm].err.push_back(a.ci_satisfaction);
    }
    std::vector<Series> cs, ss;
    for (const std::string& k : order) {
        cs.push_back(cost_series[k]);
        ss.push_back(sat_series[k]);
    }
    write_svg_plot((fs::path(outdir) / "cost_vs_budget.svg").string(),
                   "normalized cost vs demonstrations", "demonstrations", "normalized cost", cs,
                   /*log_y=*/true);
    write_svg_plot((fs::path(outdir) / "satisfaction_vs_budget.svg").string(),
                   "constraint satisfaction vs demonstrations", "demonstrations",
                   "satisfaction ratio", ss, /*log_y=*/false);
    if (!result.sample_trajectories.empty())
        write_trajectory_svg((fs::path(outdir) / "trajectories.svg").string(),
                             result.sample_trajectories);
}

}  // namespace mpcimit

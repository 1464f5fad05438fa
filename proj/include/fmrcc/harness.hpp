#pragma once

#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "fmrcc/baselines.hpp"
#include "fmrcc/io.hpp"
#include "fmrcc/monitor.hpp"
#include "fmrcc/simgen.hpp"

namespace fmrcc {

struct ExperimentGrid {
    std::vector<double> delta1s = {0.0, 0.33, 0.66, 1.0};
    std::vector<double> delta2s = {0.0, 0.5, 1.0};
    std::vector<std::string> shift_types = {"linear", "quadratic"};
    std::vector<double> severities = {0.0, 0.375, 0.75, 1.25, 1.5};
    std::vector<std::string> methods = {"fmrcc", "frcc", "fcc", "clust"};
    SimConfig base;  // sizes, grid, snr; deltas/shift/severity/seed are overwritten per cell
    double alpha = 0.05;
    double fve = 0.95;
    int n_runs = 10;
    std::uint64_t master_seed = 0;
};

struct CellResult {
    std::string method;
    double delta1 = 0.0;
    double delta2 = 0.0;
    std::string shift;
    double severity = 0.0;
    std::string metric;  // "FAR" when severity == 0, else "TDR"
    double mean = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    std::vector<double> per_run;
};

struct EvaluationReport {
    std::vector<CellResult> cells;       // canonical cell order
    std::vector<std::string> failures;   // one entry per failed (delta1, delta2, run)
    int n_runs = 0;
    double alpha = 0.05;
    std::uint64_t master_seed = 0;
    double wall_seconds = 0.0;  // in-memory only, never serialized
};

/// Percentile bootstrap interval for the mean of 0/1 alarm indicators.
inline std::pair<double, double> bootstrap_tdr_ci(const std::vector<bool>& indicators,
                                                  double level = 0.95, int n_boot = 1000,
                                                  std::uint64_t seed = 0) {
    require(!indicators.empty(), "bootstrap needs at least one indicator");
    require(level > 0.0 && level < 1.0, "level must lie in (0, 1)");
    const std::size_t n = indicators.size();
    Rng rng(seed);
    std::vector<double> means(n_boot);
    for (int b = 0; b < n_boot; ++b) {
        int hits = 0;
        for (std::size_t i = 0; i < n; ++i)
            hits += indicators[rng.below(n)] ? 1 : 0;
        means[b] = double(hits) / double(n);
    }
    std::sort(means.begin(), means.end());
    const double lo_q = (1.0 - level) / 2.0;
    auto rank = [&](double q) {
        int r = static_cast<int>(std::ceil(q * n_boot));
        return std::min(std::max(r, 1), n_boot) - 1;
    };
    return {means[rank(lo_q)], means[rank(1.0 - lo_q)]};
}

namespace detail {

inline int pool_size(std::size_t n_tasks) {
    int n = 0;
    if (const char* env = std::getenv("FMRCC_THREADS")) n = std::atoi(env);
    if (n < 1) n = static_cast<int>(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    return static_cast<int>(std::min<std::size_t>(n, n_tasks));
}

inline std::uint64_t cell_seed(std::uint64_t master, double d1, double d2, int run) {
    return mix(mix(mix(master, key_of(d1)), key_of(d2)), std::uint64_t(run));
}

// Alarms of every method over every (shift, severity) slice of one generated
// run; indexed [shift][severity][method].
struct RunAlarms {
    bool ok = false;
    std::string error;
    std::vector<std::vector<std::vector<std::vector<bool>>>> alarms;
};

inline RunAlarms evaluate_run(const ExperimentGrid& grid, double d1, double d2, int run) {
    RunAlarms out;
    try {
        SimConfig cfg = grid.base;
        cfg.delta1 = d1;
        cfg.delta2 = d2;
        cfg.severity = 0.0;
        cfg.seed = cell_seed(grid.master_seed, d1, d2, run);
        DatasetTriple data = gen_dataset(cfg);

        PipelineOptions popt;
        popt.alpha = grid.alpha;
        popt.fve = grid.fve;
        popt.em.seed = mix(cfg.seed, 101);
        EmOptions frcc_em;
        frcc_em.seed = mix(cfg.seed, 102);
        EmOptions clust_em;
        clust_em.seed = mix(cfg.seed, 103);

        std::vector<CurveSample> train_x = {data.train.x}, tune_x = {data.tune.x},
                                 test_x = {data.test.x};

        MonitoringPipeline fmrcc;
        FrccChart frcc;
        T2SpeChart fcc;
        ClusteredChart clust;
        bool need_fmrcc = false, need_frcc = false, need_fcc = false, need_clust = false;
        for (const auto& m : grid.methods) {
            need_fmrcc |= (m == "fmrcc");
            need_frcc |= (m == "frcc");
            need_fcc |= (m == "fcc");
            need_clust |= (m == "clust");
        }
        if (need_fmrcc)
            fmrcc = fit_monitoring_pipeline(train_x, data.train.y, tune_x, data.tune.y, popt);
        if (need_frcc)
            frcc = frcc_build(train_x, data.train.y, tune_x, data.tune.y, grid.alpha, grid.fve,
                              frcc_em);
        if (need_fcc) fcc = fcc_build(data.train.y, data.tune.y, grid.alpha, grid.fve);
        if (need_clust)
            clust = clust_build(data.train.y, data.tune.y, grid.alpha, grid.fve, {1, 2, 3, 4, 5},
                                clust_em);

        auto method_alarms = [&](const std::string& method,
                                 const CurveSample& y) -> std::vector<bool> {
            if (method == "fmrcc") {
                Eigen::VectorXd w = phase2_statistics(fmrcc, test_x, y);
                std::vector<bool> a(w.size());
                for (Eigen::Index i = 0; i < w.size(); ++i) a[i] = w[i] > fmrcc.chart.limit;
                return a;
            }
            if (method == "frcc") return frcc_alarms(frcc, test_x, y);
            if (method == "fcc") return fcc_alarms(fcc, y);
            if (method == "clust") return clust_alarms(clust, y);
            throw ArgumentError("unknown method: " + method);
        };

        // Severity 0 is shift-free; compute once and reuse for every shift type.
        std::vector<std::vector<bool>> ic_alarms(grid.methods.size());
        bool have_ic = false;

        out.alarms.resize(grid.shift_types.size());
        for (std::size_t s = 0; s < grid.shift_types.size(); ++s) {
            out.alarms[s].resize(grid.severities.size());
            for (std::size_t v = 0; v < grid.severities.size(); ++v) {
                const double severity = grid.severities[v];
                out.alarms[s][v].resize(grid.methods.size());
                if (severity == 0.0) {
                    if (!have_ic) {
                        for (std::size_t m = 0; m < grid.methods.size(); ++m)
                            ic_alarms[m] = method_alarms(grid.methods[m], data.test.y);
                        have_ic = true;
                    }
                    out.alarms[s][v] = ic_alarms;
                    continue;
                }
                Eigen::VectorXd delta =
                    gen_shift(grid.shift_types[s], severity, data.test.y.grid);
                CurveSample shifted(data.test.y.grid,
                                    data.test.y.values.rowwise() + delta.transpose());
                for (std::size_t m = 0; m < grid.methods.size(); ++m)
                    out.alarms[s][v][m] = method_alarms(grid.methods[m], shifted);
            }
        }
        out.ok = true;
    } catch (const std::exception& e) {
        out.ok = false;
        out.error = e.what();
    }
    return out;
}

inline std::uint64_t shift_key(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
    return h;
}

}  // namespace detail

/// Full grid evaluation: for every (delta1, delta2, run) a dataset is generated
/// and all methods fitted once; shifts are applied to the shared test set so
/// severities differ only by their mean shift. Tasks run on a pool capped by
/// FMRCC_THREADS; results land in preassigned slots and are assembled in a
/// fixed order, so the report is identical for any pool size.
inline EvaluationReport run_experiment(const ExperimentGrid& grid) {
    require(!grid.delta1s.empty() && !grid.delta2s.empty() && !grid.shift_types.empty() &&
                !grid.severities.empty() && !grid.methods.empty() && grid.n_runs >= 1,
            "experiment grid has an empty dimension");

    struct Task {
        double d1, d2;
        int run;
    };
    std::vector<Task> tasks;
    for (double d1 : grid.delta1s)
        for (double d2 : grid.delta2s)
            for (int r = 0; r < grid.n_runs; ++r) tasks.push_back({d1, d2, r});

    std::vector<detail::RunAlarms> results(tasks.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            results[i] = detail::evaluate_run(grid, tasks[i].d1, tasks[i].d2, tasks[i].run);
        }
    };
    const int n_threads = detail::pool_size(tasks.size());
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    EvaluationReport report;
    report.n_runs = grid.n_runs;
    report.alpha = grid.alpha;
    report.master_seed = grid.master_seed;

    auto task_index = [&](std::size_t i1, std::size_t i2, int run) {
        return (i1 * grid.delta2s.size() + i2) * std::size_t(grid.n_runs) + std::size_t(run);
    };
    for (std::size_t i1 = 0; i1 < grid.delta1s.size(); ++i1)
        for (std::size_t i2 = 0; i2 < grid.delta2s.size(); ++i2)
            for (int r = 0; r < grid.n_runs; ++r) {
                const detail::RunAlarms& ra = results[task_index(i1, i2, r)];
                if (!ra.ok) {
                    char buf[128];
                    std::snprintf(buf, sizeof(buf), "delta1=%g delta2=%g run=%d: ",
                                  grid.delta1s[i1], grid.delta2s[i2], r);
                    report.failures.push_back(buf + ra.error);
                }
            }

    for (std::size_t i1 = 0; i1 < grid.delta1s.size(); ++i1)
        for (std::size_t i2 = 0; i2 < grid.delta2s.size(); ++i2)
            for (std::size_t s = 0; s < grid.shift_types.size(); ++s)
                for (std::size_t v = 0; v < grid.severities.size(); ++v)
                    for (std::size_t m = 0; m < grid.methods.size(); ++m) {
                        CellResult cell;
                        cell.method = grid.methods[m];
                        cell.delta1 = grid.delta1s[i1];
                        cell.delta2 = grid.delta2s[i2];
                        cell.shift = grid.shift_types[s];
                        cell.severity = grid.severities[v];
                        cell.metric = (cell.severity == 0.0) ? "FAR" : "TDR";
                        std::vector<bool> pooled;
                        for (int r = 0; r < grid.n_runs; ++r) {
                            const detail::RunAlarms& ra = results[task_index(i1, i2, r)];
                            if (!ra.ok) continue;
                            const std::vector<bool>& a = ra.alarms[s][v][m];
                            int hits = 0;
                            for (bool b : a) hits += b ? 1 : 0;
                            cell.per_run.push_back(double(hits) / double(a.size()));
                            pooled.insert(pooled.end(), a.begin(), a.end());
                        }
                        if (cell.per_run.empty()) continue;  // every run failed
                        double sum = 0.0;
                        for (double x : cell.per_run) sum += x;
                        cell.mean = sum / double(cell.per_run.size());
                        std::uint64_t ci_seed = detail::cell_seed(grid.master_seed, cell.delta1,
                                                                  cell.delta2, -1);
                        ci_seed = mix(ci_seed, detail::shift_key(cell.shift));
                        ci_seed = mix(ci_seed, key_of(cell.severity));
                        ci_seed = mix(ci_seed, std::uint64_t(m) + 1);
                        auto [lo, hi] = bootstrap_tdr_ci(pooled, 0.95, 1000, ci_seed);
                        cell.ci_lo = lo;
                        cell.ci_hi = hi;
                        report.cells.push_back(std::move(cell));
                    }
    return report;
}

/// Long-format report CSV: one mean row plus CI-bound rows per cell.
inline void write_report_csv(const std::string& path, const EvaluationReport& report) {
    std::ofstream f = detail::open_out(path);
    f << "method,delta1,delta2,shift,severity,metric,value\n";
    for (const CellResult& c : report.cells) {
        auto row = [&](const std::string& metric, double value) {
            f << c.method << "," << format_double(c.delta1) << "," << format_double(c.delta2)
              << "," << c.shift << "," << format_double(c.severity) << "," << metric << ","
              << format_double(value) << "\n";
        };
        row(c.metric, c.mean);
        row(c.metric + "_ci_lo", c.ci_lo);
        row(c.metric + "_ci_hi", c.ci_hi);
    }
    if (!f) throw DataError("write failed: " + path);
}

inline json report_to_json(const EvaluationReport& report) {
    json j;
    j["n_runs"] = report.n_runs;
    j["alpha"] = report.alpha;
    j["master_seed"] = report.master_seed;
    j["cells"] = json::array();
    for (const CellResult& c : report.cells) {
        json cj;
        cj["method"] = c.method;
        cj["delta1"] = c.delta1;
        cj["delta2"] = c.delta2;
        cj["shift"] = c.shift;
        cj["severity"] = c.severity;
        cj["metric"] = c.metric;
        cj["mean"] = c.mean;
        cj["ci_lo"] = c.ci_lo;
        cj["ci_hi"] = c.ci_hi;
        cj["per_run"] = c.per_run;
        j["cells"].push_back(cj);
    }
    j["failures"] = report.failures;
    return j;
}

inline json experiment_grid_to_json(const ExperimentGrid& g) {
    json j;
    j["delta1"] = g.delta1s;
    j["delta2"] = g.delta2s;
    j["shift_types"] = g.shift_types;
    j["severities"] = g.severities;
    j["methods"] = g.methods;
    j["base"] = sim_config_to_json(g.base);
    j["alpha"] = g.alpha;
    j["fve"] = g.fve;
    j["n_runs"] = g.n_runs;
    j["master_seed"] = g.master_seed;
    return j;
}

inline ExperimentGrid experiment_grid_from_json(const json& j) {
    ExperimentGrid g;
    if (j.contains("delta1")) g.delta1s = j.at("delta1").get<std::vector<double>>();
    if (j.contains("delta2")) g.delta2s = j.at("delta2").get<std::vector<double>>();
    if (j.contains("shift_types"))
        g.shift_types = j.at("shift_types").get<std::vector<std::string>>();
    if (j.contains("severities")) g.severities = j.at("severities").get<std::vector<double>>();
    if (j.contains("methods")) g.methods = j.at("methods").get<std::vector<std::string>>();
    if (j.contains("base")) g.base = sim_config_from_json(j.at("base"));
    if (j.contains("alpha")) g.alpha = j.at("alpha").get<double>();
    if (j.contains("fve")) g.fve = j.at("fve").get<double>();
    if (j.contains("n_runs")) g.n_runs = j.at("n_runs").get<int>();
    if (j.contains("master_seed")) g.master_seed = j.at("master_seed").get<std::uint64_t>();
    return g;
}

}  // namespace fmrcc

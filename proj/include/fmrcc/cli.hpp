#pragma once

#include <chrono>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fmrcc/harness.hpp"
#include "fmrcc/io.hpp"

namespace fmrcc {

namespace detail {

inline std::vector<int> parse_k_range(const std::string& text) {
    std::vector<int> out;
    auto dash = text.find('-');
    if (dash != std::string::npos && dash > 0) {
        int lo = std::stoi(text.substr(0, dash));
        int hi = std::stoi(text.substr(dash + 1));
        require(lo >= 1 && hi >= lo, "bad K range");
        for (int k = lo; k <= hi; ++k) out.push_back(k);
        return out;
    }
    std::istringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
    require(!out.empty(), "empty K range");
    for (int k : out) require(k >= 1, "K must be positive");
    return out;
}

inline std::string join_path(const std::string& dir, const std::string& name) {
    if (dir.empty() || dir == ".") return name;
    return (dir.back() == '/') ? dir + name : dir + "/" + name;
}

}  // namespace detail

inline int cmd_simulate(const std::string& config_path, const std::string& out_dir,
                        bool paper_scale, bool seed_set, std::uint64_t seed) {
    SimConfig cfg = sim_config_from_json(load_json_file(config_path));
    if (paper_scale) {
        cfg.n_train = 400;
        cfg.n_tune = 1000;
        cfg.n_test = 3000;
    }
    if (seed_set) cfg.seed = seed;
    DatasetTriple data = gen_dataset(cfg);

    const GeneratedDataset* phases[3] = {&data.train, &data.tune, &data.test};
    std::vector<std::string> manifest;
    for (const GeneratedDataset* d : phases) {
        std::string xp = detail::join_path(out_dir, d->phase + "_x.csv");
        std::string yp = detail::join_path(out_dir, d->phase + "_y.csv");
        write_curve_csv(xp, d->x);
        write_curve_csv(yp, d->y);
        manifest.push_back(xp);
        manifest.push_back(yp);
    }
    std::string lp = detail::join_path(out_dir, "labels.csv");
    write_labels_csv(lp, {&data.train, &data.tune, &data.test});
    manifest.push_back(lp);
    for (const std::string& p : manifest) std::cout << p << "\n";
    return 0;
}

inline int cmd_fit(const std::string& method, const std::string& train_x_path,
                   const std::string& train_y_path, const std::string& tune_x_path,
                   const std::string& tune_y_path, double alpha, double fve,
                   const std::string& k_range_text, bool studentized, std::uint64_t seed,
                   const std::string& out_path) {
    std::vector<int> k_range = detail::parse_k_range(k_range_text);
    CurveSample train_y = read_curve_csv(train_y_path);
    CurveSample tune_y = read_curve_csv(tune_y_path);
    json bundle;

    if (method == "fmrcc" || method == "frcc") {
        require(!train_x_path.empty() && !tune_x_path.empty(),
                "method " + method + " needs --train-x and --tune-x");
        std::vector<CurveSample> train_x = {read_curve_csv(train_x_path)};
        std::vector<CurveSample> tune_x = {read_curve_csv(tune_x_path)};
        if (method == "fmrcc") {
            PipelineOptions opt;
            opt.alpha = alpha;
            opt.fve = fve;
            opt.k_range = k_range;
            opt.studentized = studentized;
            opt.em.seed = seed;
            MonitoringPipeline p = fit_monitoring_pipeline(train_x, train_y, tune_x, tune_y, opt);
            bundle = pipeline_to_json(p);
            std::cout << "fmrcc bundle: K=" << p.mixture.K << " ("
                      << cov_param_tag(p.mixture.cov) << "), limit=" << format_double(p.chart.limit)
                      << "\n";
        } else {
            EmOptions em;
            em.seed = seed;
            FrccChart c = frcc_build(train_x, train_y, tune_x, tune_y, alpha, fve, em);
            bundle = frcc_to_json(c);
            std::cout << "frcc bundle: t2_limit=" << format_double(c.t2_limit)
                      << ", spe_limit=" << format_double(c.spe_limit) << "\n";
        }
    } else if (method == "fcc") {
        T2SpeChart c = fcc_build(train_y, tune_y, alpha, fve);
        bundle = t2spe_to_json(c);
        std::cout << "fcc bundle: t2_limit=" << format_double(c.t2_limit)
                  << ", spe_limit=" << format_double(c.spe_limit) << "\n";
    } else if (method == "clust") {
        EmOptions em;
        em.seed = seed;
        ClusteredChart c = clust_build(train_y, tune_y, alpha, fve, k_range, em);
        bundle = clust_to_json(c);
        std::cout << "clust bundle: K=" << c.gmm.K << "\n";
    } else {
        throw ArgumentError("unknown method: " + method);
    }
    write_json_file(out_path, bundle);
    std::cout << out_path << "\n";
    return 0;
}

inline int cmd_monitor(const std::string& bundle_path, const std::string& x_path,
                       const std::string& y_path, const std::string& out_path) {
    json bundle = load_json_file(bundle_path);
    const std::string method = bundle.at("method").get<std::string>();
    CurveSample y = read_curve_csv(y_path, /*allow_empty=*/true);

    std::vector<Verdict> verdicts;
    if (method == "fmrcc" || method == "frcc") {
        require(!x_path.empty(), "method " + method + " needs --x");
        CurveSample x = read_curve_csv(x_path, /*allow_empty=*/true);
        require(x.n() == y.n(), "x and y observation counts differ");
        if (method == "fmrcc") {
            MonitoringPipeline p = pipeline_from_json(bundle);
            for (Eigen::Index i = 0; i < y.n(); ++i)
                verdicts.push_back(phase2_monitor(p, {x.row(i)}, y.row(i)));
        } else {
            FrccChart c = frcc_from_json(bundle);
            for (Eigen::Index i = 0; i < y.n(); ++i)
                verdicts.push_back(frcc_monitor(c, {x.row(i)}, y.row(i)));
        }
    } else if (method == "fcc") {
        T2SpeChart c = t2spe_from_json(bundle);
        for (Eigen::Index i = 0; i < y.n(); ++i) verdicts.push_back(fcc_monitor(c, y.row(i)));
    } else if (method == "clust") {
        ClusteredChart c = clust_from_json(bundle);
        for (Eigen::Index i = 0; i < y.n(); ++i) verdicts.push_back(clust_monitor(c, y.row(i)));
    } else {
        throw DataError("unknown bundle method: " + method);
    }
    write_verdicts_csv(out_path, verdicts);
    std::size_t alarms = 0;
    for (const Verdict& v : verdicts) alarms += v.alarm ? 1 : 0;
    const double frac = verdicts.empty() ? 0.0 : double(alarms) / double(verdicts.size());
    std::cout << "observations=" << verdicts.size() << " alarms=" << alarms
              << " fraction=" << format_double(frac) << "\n";
    std::cout << out_path << "\n";
    return 0;
}

inline int cmd_evaluate(const std::string& config_path, const std::string& out_csv,
                        const std::string& out_json, bool paper_scale, bool seed_set,
                        std::uint64_t seed) {
    ExperimentGrid grid = experiment_grid_from_json(load_json_file(config_path));
    if (paper_scale) {
        grid.n_runs = 100;
        grid.base.n_train = 400;
        grid.base.n_tune = 1000;
        grid.base.n_test = 3000;
    }
    if (seed_set) grid.master_seed = seed;

    auto t0 = std::chrono::steady_clock::now();
    EvaluationReport report = run_experiment(grid);
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    write_report_csv(out_csv, report);
    json j = report_to_json(report);
    j["grid"] = experiment_grid_to_json(grid);
    write_json_file(out_json, j);

    std::cout << "cells=" << report.cells.size() << " failures=" << report.failures.size() << "\n";
    std::cout << out_csv << "\n" << out_json << "\n";
    std::fprintf(stderr, "evaluate wall time: %.1f s\n", report.wall_seconds);
    return 0;
}

inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Functional mixture regression control charts"};
    app.require_subcommand(1);

    std::string config_path, out_dir = ".";
    bool paper_scale = false;
    std::uint64_t seed = 0;

    auto* sim = app.add_subcommand("simulate", "Generate a simulated dataset triple");
    sim->add_option("--config", config_path, "SimConfig JSON")->required();
    sim->add_option("--out-dir", out_dir, "Output directory");
    auto* sim_seed = sim->add_option("--seed", seed, "Override the config seed");
    sim->add_flag("--paper-scale", paper_scale, "Full-scale sizes (400/1000/3000)");

    std::string method = "fmrcc", train_x, train_y, tune_x, tune_y, out_path = "bundle.json";
    std::string k_range = "1-5", studentized = "on";
    double alpha = 0.05, fve = 0.95;

    auto* fit = app.add_subcommand("fit", "Fit a monitoring pipeline on Phase I data");
    fit->add_option("--method", method, "fmrcc|frcc|fcc|clust");
    fit->add_option("--train-x", train_x, "Training covariate curve CSV");
    fit->add_option("--train-y", train_y, "Training response curve CSV")->required();
    fit->add_option("--tune-x", tune_x, "Tuning covariate curve CSV");
    fit->add_option("--tune-y", tune_y, "Tuning response curve CSV")->required();
    fit->add_option("--alpha", alpha, "Overall false alarm rate");
    fit->add_option("--fve", fve, "Fraction of variance explained");
    fit->add_option("--k-range", k_range, "Cluster candidates, e.g. 1-5 or 1,2,3");
    fit->add_option("--studentized", studentized, "on|off")
        ->check(CLI::IsMember({"on", "off"}));
    auto* fit_seed = fit->add_option("--seed", seed, "EM restart seed");
    fit->add_option("--out", out_path, "Bundle JSON path");
    (void)fit_seed;

    std::string bundle_path, x_path, y_path;
    auto* mon = app.add_subcommand("monitor", "Phase II monitoring of an observation file");
    mon->add_option("--bundle", bundle_path, "Pipeline bundle JSON")->required();
    mon->add_option("--x", x_path, "Covariate curve CSV");
    mon->add_option("--y", y_path, "Response curve CSV")->required();
    mon->add_option("--out", out_path, "Verdict CSV path");

    std::string out_csv = "report.csv", out_json = "report.json";
    auto* eval = app.add_subcommand("evaluate", "Run the simulation study grid");
    eval->add_option("--config", config_path, "ExperimentGrid JSON")->required();
    eval->add_option("--out-csv", out_csv, "Report CSV path");
    eval->add_option("--out-json", out_json, "Report JSON path");
    auto* eval_seed = eval->add_option("--seed", seed, "Override the master seed");
    eval->add_flag("--paper-scale", paper_scale, "Full-scale study (100 runs, 400/1000/3000)");

    try {
        app.parse(argc, argv);
        if (sim->parsed())
            return cmd_simulate(config_path, out_dir, paper_scale, sim_seed->count() > 0, seed);
        if (fit->parsed())
            return cmd_fit(method, train_x, train_y, tune_x, tune_y, alpha, fve, k_range,
                           studentized == "on", seed, out_path);
        if (mon->parsed()) {
            if (mon->count("--out") == 0) out_path = "verdicts.csv";
            return cmd_monitor(bundle_path, x_path, y_path, out_path);
        }
        if (eval->parsed())
            return cmd_evaluate(config_path, out_csv, out_json, paper_scale,
                                eval_seed->count() > 0, seed);
        return 2;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const json::parse_error& e) {
        std::fprintf(stderr, "error: malformed JSON: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const FitError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const json::exception& e) {
        std::fprintf(stderr, "error: bad config: %s\n", e.what());
        return 3;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}

inline int run_cli(const std::vector<std::string>& args) {
    std::vector<std::string> full;
    full.push_back("fmrcc");
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const std::string& s : full) argv.push_back(s.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace fmrcc

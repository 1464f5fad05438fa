#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fmrcc/cli.hpp"

using namespace fmrcc;

namespace {

struct CapturedRun {
    int exit_code = 0;
    std::string out;
};

CapturedRun run(const std::vector<std::string>& args) {
    std::ostringstream sink;
    std::streambuf* old = std::cout.rdbuf(sink.rdbuf());
    CapturedRun r;
    try {
        r.exit_code = run_cli(args);
    } catch (...) {
        std::cout.rdbuf(old);
        throw;
    }
    std::cout.rdbuf(old);
    r.out = sink.str();
    return r;
}

int count_lines(const std::string& path) {
    std::ifstream f(path);
    REQUIRE(f.good());
    int n = 0;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) ++n;
    return n;
}

const std::string dir = "/tmp/fmrcc_cli_test";
std::string at(const std::string& name) { return dir + "/" + name; }

}  // namespace

TEST_CASE("command line round trip: simulate, fit, monitor, evaluate") {
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);

    {
        std::ofstream cfg(at("sim.json"));
        cfg << R"({"delta1":1.0,"delta2":0.5,"n_train":40,"n_tune":40,"n_test":20,)"
            << R"("grid_size":120,"seed":3})";
    }

    CapturedRun sim = run({"simulate", "--config", at("sim.json"), "--out-dir", dir});
    REQUIRE(sim.exit_code == 0);
    for (const char* name : {"train_x.csv", "train_y.csv", "tune_x.csv", "tune_y.csv",
                             "test_x.csv", "test_y.csv", "labels.csv"}) {
        REQUIRE(std::filesystem::exists(at(name)));
        REQUIRE(sim.out.find(name) != std::string::npos);
    }
    REQUIRE(count_lines(at("labels.csv")) == 1 + 120 + 120 + 20);
    REQUIRE(count_lines(at("train_y.csv")) == 1 + 120);
    REQUIRE(count_lines(at("test_y.csv")) == 1 + 20);

    // deterministic regeneration
    std::filesystem::create_directories(at("again"));
    CapturedRun sim2 =
        run({"simulate", "--config", at("sim.json"), "--out-dir", at("again")});
    REQUIRE(sim2.exit_code == 0);
    REQUIRE(read_curve_csv(at("train_y.csv")).values ==
            read_curve_csv(at("again/train_y.csv")).values);

    CapturedRun fit = run({"fit", "--method", "fmrcc", "--train-x", at("train_x.csv"),
                           "--train-y", at("train_y.csv"), "--tune-x", at("tune_x.csv"),
                           "--tune-y", at("tune_y.csv"), "--k-range", "1-3", "--seed", "9",
                           "--out", at("fmrcc.json")});
    REQUIRE(fit.exit_code == 0);
    REQUIRE(fit.out.find("fmrcc bundle: K=") != std::string::npos);
    json bundle = load_json_file(at("fmrcc.json"));
    REQUIRE(bundle.at("method").get<std::string>() == "fmrcc");

    CapturedRun mon = run({"monitor", "--bundle", at("fmrcc.json"), "--x", at("test_x.csv"),
                           "--y", at("test_y.csv"), "--out", at("verdicts.csv")});
    REQUIRE(mon.exit_code == 0);
    REQUIRE(mon.out.find("observations=20") != std::string::npos);
    REQUIRE(count_lines(at("verdicts.csv")) == 1 + 20);

    // response-only methods skip --x entirely
    CapturedRun fit_fcc =
        run({"fit", "--method", "fcc", "--train-y", at("train_y.csv"), "--tune-y",
             at("tune_y.csv"), "--out", at("fcc.json")});
    REQUIRE(fit_fcc.exit_code == 0);
    CapturedRun mon_fcc = run({"monitor", "--bundle", at("fcc.json"), "--y",
                               at("test_y.csv"), "--out", at("verdicts_fcc.csv")});
    REQUIRE(mon_fcc.exit_code == 0);
    REQUIRE(count_lines(at("verdicts_fcc.csv")) == 1 + 20);

    CapturedRun fit_clust =
        run({"fit", "--method", "clust", "--train-y", at("train_y.csv"), "--tune-y",
             at("tune_y.csv"), "--k-range", "1,2,3", "--out", at("clust.json")});
    REQUIRE(fit_clust.exit_code == 0);
    REQUIRE(fit_clust.out.find("clust bundle: K=") != std::string::npos);

    CapturedRun fit_frcc = run({"fit", "--method", "frcc", "--train-x", at("train_x.csv"),
                                "--train-y", at("train_y.csv"), "--tune-x", at("tune_x.csv"),
                                "--tune-y", at("tune_y.csv"), "--out", at("frcc.json")});
    REQUIRE(fit_frcc.exit_code == 0);
    // a covariate-dependent bundle cannot monitor without --x
    CapturedRun mon_no_x =
        run({"monitor", "--bundle", at("frcc.json"), "--y", at("test_y.csv"), "--out",
             at("verdicts_frcc.csv")});
    REQUIRE(mon_no_x.exit_code == 3);

    {
        std::ofstream cfg(at("grid.json"));
        cfg << R"({"delta1":[1.0],"delta2":[0.5],"shift_types":["linear"],)"
            << R"("severities":[0.0,1.5],"methods":["fcc"],)"
            << R"("base":{"n_train":40,"n_tune":40,"n_test":20,"grid_size":120},)"
            << R"("n_runs":1,"master_seed":7})";
    }
    CapturedRun ev = run({"evaluate", "--config", at("grid.json"), "--out-csv",
                          at("report.csv"), "--out-json", at("report.json")});
    REQUIRE(ev.exit_code == 0);
    REQUIRE(ev.out.find("cells=2 failures=0") != std::string::npos);
    json report = load_json_file(at("report.json"));
    REQUIRE(report.at("cells").size() == 2);
    REQUIRE(report.contains("grid"));
    REQUIRE(count_lines(at("report.csv")) == 1 + 2 * 3);  // mean + two CI rows per cell

    std::filesystem::remove_all(dir);
}

TEST_CASE("command line error paths use documented exit codes") {
    std::filesystem::create_directories(dir);

    // usage errors exit 2
    REQUIRE(run({"frobnicate"}).exit_code == 2);
    REQUIRE(run({"simulate"}).exit_code == 2);  // missing --config
    REQUIRE(run({"fit", "--train-y", "a.csv", "--tune-y", "b.csv", "--studentized",
                 "banana"})
                .exit_code == 2);

    // malformed JSON config exits 2
    {
        std::ofstream bad(at("broken.json"));
        bad << "{ nope";
    }
    REQUIRE(run({"simulate", "--config", at("broken.json")}).exit_code == 2);

    // data errors exit 3
    REQUIRE(run({"fit", "--method", "fcc", "--train-y", at("missing.csv"), "--tune-y",
                 at("missing.csv")})
                .exit_code == 3);
    {
        std::ofstream fake(at("fake_bundle.json"));
        fake << R"({"method":"banana"})";
        std::ofstream y(at("tiny_y.csv"));
        y << "0,0.33,0.66,1\n1,2,3,4\n";
    }
    REQUIRE(run({"monitor", "--bundle", at("fake_bundle.json"), "--y", at("tiny_y.csv")})
                .exit_code == 3);

    // argument errors from values (not syntax) also exit 3
    {
        std::ofstream y(at("y.csv"));
        y << "0,0.33,0.66,1\n1,2,3,4\n";
    }
    REQUIRE(run({"fit", "--method", "banana", "--train-y", at("y.csv"), "--tune-y",
                 at("y.csv")})
                .exit_code == 3);
    REQUIRE(run({"fit", "--method", "fcc", "--train-y", at("y.csv"), "--tune-y", at("y.csv"),
                 "--k-range", "0-2"})
                .exit_code == 3);

    std::filesystem::remove_all(dir);
}

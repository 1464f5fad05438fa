#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fmrcc/baselines.hpp"
#include "fmrcc/errors.hpp"
#include "fmrcc/monitor.hpp"
#include "fmrcc/simgen.hpp"

namespace fmrcc {

using json = nlohmann::json;

/// Shortest exact decimal form (round-trips through strtod).
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace detail {

inline double parse_double(const std::string& tok, const std::string& where) {
    char* end = nullptr;
    double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0')
        throw DataError("not a number in " + where + ": '" + tok + "'");
    return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string tok;
    std::istringstream ss(line);
    while (std::getline(ss, tok, ',')) out.push_back(tok);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot open for writing: " + path);
    return f;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open for reading: " + path);
    return f;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Curve CSV: first row = grid points, each later row = one observation.
// ---------------------------------------------------------------------------

inline void write_curve_csv(const std::string& path, const CurveSample& sample) {
    std::ofstream f = detail::open_out(path);
    const Eigen::Index g = sample.grid.size();
    for (Eigen::Index j = 0; j < g; ++j)
        f << (j ? "," : "") << format_double(sample.grid.points()[j]);
    f << "\n";
    for (Eigen::Index i = 0; i < sample.n(); ++i) {
        for (Eigen::Index j = 0; j < g; ++j)
            f << (j ? "," : "") << format_double(sample.values(i, j));
        f << "\n";
    }
    if (!f) throw DataError("write failed: " + path);
}

inline CurveSample read_curve_csv(const std::string& path, bool allow_empty = false) {
    std::ifstream f = detail::open_in(path);
    std::string line;
    if (!std::getline(f, line)) throw DataError("empty curve file: " + path);
    std::vector<std::string> head = detail::split_csv_line(line);
    const Eigen::Index g = static_cast<Eigen::Index>(head.size());
    Eigen::VectorXd points(g);
    for (Eigen::Index j = 0; j < g; ++j) points[j] = detail::parse_double(head[j], path);
    Grid grid(points);

    std::vector<Eigen::VectorXd> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> toks = detail::split_csv_line(line);
        if (static_cast<Eigen::Index>(toks.size()) != g)
            throw DataError("row length mismatch in " + path);
        Eigen::VectorXd row(g);
        for (Eigen::Index j = 0; j < g; ++j) row[j] = detail::parse_double(toks[j], path);
        rows.push_back(std::move(row));
    }
    if (rows.empty() && !allow_empty) throw DataError("no observations in " + path);
    Eigen::MatrixXd values(static_cast<Eigen::Index>(rows.size()), g);
    for (std::size_t i = 0; i < rows.size(); ++i)
        values.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    return CurveSample(grid, std::move(values));
}

inline void write_labels_csv(const std::string& path,
                             const std::vector<const GeneratedDataset*>& phases) {
    std::ofstream f = detail::open_out(path);
    f << "index,cluster,phase,shift_type,severity\n";
    long idx = 0;
    for (const GeneratedDataset* d : phases)
        for (int label : d->labels)
            f << idx++ << "," << label << "," << d->phase << "," << d->shift_type << ","
              << format_double(d->severity) << "\n";
    if (!f) throw DataError("write failed: " + path);
}

inline void write_verdicts_csv(const std::string& path, const std::vector<Verdict>& verdicts) {
    std::ofstream f = detail::open_out(path);
    f << "index,w_star,limit,alarm,component\n";
    for (std::size_t i = 0; i < verdicts.size(); ++i) {
        const Verdict& v = verdicts[i];
        int comp = 0;
        if (v.component_posteriors.size() > 0) {
            Eigen::Index k;
            v.component_posteriors.maxCoeff(&k);
            comp = static_cast<int>(k) + 1;
        }
        f << i << "," << format_double(v.w_star) << "," << format_double(v.limit) << ","
          << (v.alarm ? 1 : 0) << "," << comp << "\n";
    }
    if (!f) throw DataError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// JSON building blocks.
// ---------------------------------------------------------------------------

inline json matrix_to_json(const Eigen::MatrixXd& m) {
    json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    j["data"] = data;
    return j;
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
    const Eigen::Index rows = j.at("rows").get<Eigen::Index>();
    const Eigen::Index cols = j.at("cols").get<Eigen::Index>();
    const auto& data = j.at("data");
    if (static_cast<Eigen::Index>(data.size()) != rows * cols)
        throw DataError("matrix data length mismatch in JSON");
    Eigen::MatrixXd m(rows, cols);
    std::size_t at = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[at++].get<double>();
    return m;
}

inline json vector_to_json(const Eigen::VectorXd& v) {
    return json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Eigen::VectorXd vector_from_json(const json& j) {
    std::vector<double> data = j.get<std::vector<double>>();
    return Eigen::Map<Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));
}

inline json scaling_to_json(const ScalingModel& m) {
    json j;
    j["grids"] = json::array();
    j["means"] = json::array();
    j["scales"] = json::array();
    for (Eigen::Index v = 0; v < m.n_variables(); ++v) {
        j["grids"].push_back(vector_to_json(m.mean_curves[v].grid.points()));
        j["means"].push_back(vector_to_json(m.mean_curves[v].values));
        j["scales"].push_back(vector_to_json(m.scale_curves[v].values));
    }
    return j;
}

inline ScalingModel scaling_from_json(const json& j) {
    ScalingModel m;
    const auto& grids = j.at("grids");
    for (std::size_t v = 0; v < grids.size(); ++v) {
        Grid g(vector_from_json(grids[v]));
        m.mean_curves.emplace_back(g, vector_from_json(j.at("means")[v]));
        m.scale_curves.emplace_back(g, vector_from_json(j.at("scales")[v]));
    }
    return m;
}

inline json fpca_to_json(const FpcaModel& m) {
    json j;
    j["scaling"] = scaling_to_json(m.scaling);
    j["eigenfunctions"] = matrix_to_json(m.eigenfunctions);
    j["eigenvalues"] = vector_to_json(m.eigenvalues);
    j["retained"] = m.retained;
    j["fve_target"] = m.fve_target;
    j["total_variance"] = m.total_variance;
    return j;
}

inline FpcaModel fpca_from_json(const json& j) {
    FpcaModel m;
    m.scaling = scaling_from_json(j.at("scaling"));
    for (const auto& c : m.scaling.mean_curves) m.grids.push_back(c.grid);
    m.eigenfunctions = matrix_from_json(j.at("eigenfunctions"));
    m.eigenvalues = vector_from_json(j.at("eigenvalues"));
    m.retained = j.at("retained").get<int>();
    m.fve_target = j.at("fve_target").get<double>();
    m.total_variance = j.at("total_variance").get<double>();
    return m;
}

inline json mixture_to_json(const MixtureModel& m) {
    json j;
    j["K"] = m.K;
    j["tag"] = cov_param_tag(m.cov);
    j["pi"] = vector_to_json(m.pi);
    j["B"] = json::array();
    j["Sigma"] = json::array();
    for (int k = 0; k < m.K; ++k) {
        j["B"].push_back(matrix_to_json(m.B[k]));
        j["Sigma"].push_back(matrix_to_json(m.Sigma[k]));
    }
    j["loglik"] = m.loglik;
    j["bic"] = m.bic;
    j["n_params"] = m.n_params;
    j["iterations"] = m.iterations;
    j["seed"] = m.seed;
    return j;
}

inline MixtureModel mixture_from_json(const json& j) {
    MixtureModel m;
    m.K = j.at("K").get<int>();
    m.cov = cov_param_from_tag(j.at("tag").get<std::string>());
    m.pi = vector_from_json(j.at("pi"));
    for (int k = 0; k < m.K; ++k) {
        m.B.push_back(matrix_from_json(j.at("B")[k]));
        m.Sigma.push_back(matrix_from_json(j.at("Sigma")[k]));
    }
    m.loglik = j.at("loglik").get<double>();
    m.bic = j.at("bic").get<double>();
    m.n_params = j.at("n_params").get<int>();
    m.iterations = j.at("iterations").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    return m;
}

inline json chart_to_json(const ControlChart& c) {
    json j;
    j["alpha"] = c.alpha;
    j["limit"] = c.limit;
    j["tuning_stats"] = vector_to_json(c.tuning_stats);
    j["studentized"] = c.studentized;
    return j;
}

inline ControlChart chart_from_json(const json& j) {
    ControlChart c;
    c.alpha = j.at("alpha").get<double>();
    c.limit = j.at("limit").get<double>();
    c.tuning_stats = vector_from_json(j.at("tuning_stats"));
    c.studentized = j.at("studentized").get<bool>();
    return c;
}

inline json coeff_cov_to_json(const CoefficientCovariance& cc) {
    json j;
    j["sandwich"] = json::array();
    j["sigma"] = json::array();
    for (int k = 0; k < cc.components(); ++k) {
        j["sandwich"].push_back(matrix_to_json(cc.sandwich[k]));
        j["sigma"].push_back(matrix_to_json(cc.sigma[k]));
    }
    return j;
}

inline CoefficientCovariance coeff_cov_from_json(const json& j) {
    CoefficientCovariance cc;
    for (const auto& s : j.at("sandwich")) cc.sandwich.push_back(matrix_from_json(s));
    for (const auto& s : j.at("sigma")) cc.sigma.push_back(matrix_from_json(s));
    return cc;
}

// ---------------------------------------------------------------------------
// Method bundles: one JSON shape with a method tag.
// ---------------------------------------------------------------------------

inline json pipeline_to_json(const MonitoringPipeline& p) {
    json j;
    j["method"] = "fmrcc";
    j["x_fpca"] = fpca_to_json(p.x_fpca);
    j["y_fpca"] = fpca_to_json(p.y_fpca);
    j["mixture"] = mixture_to_json(p.mixture);
    if (!p.coeff_cov.empty()) j["coeff_cov"] = coeff_cov_to_json(p.coeff_cov);
    j["chart"] = chart_to_json(p.chart);
    return j;
}

inline MonitoringPipeline pipeline_from_json(const json& j) {
    MonitoringPipeline p;
    p.x_fpca = fpca_from_json(j.at("x_fpca"));
    p.y_fpca = fpca_from_json(j.at("y_fpca"));
    p.mixture = mixture_from_json(j.at("mixture"));
    if (j.contains("coeff_cov")) p.coeff_cov = coeff_cov_from_json(j.at("coeff_cov"));
    p.chart = chart_from_json(j.at("chart"));
    if (p.chart.studentized && p.coeff_cov.empty())
        throw DataError("studentized bundle lacks coefficient covariance");
    return p;
}

inline json t2spe_to_json(const T2SpeChart& c) {
    json j;
    j["method"] = "fcc";
    j["score_model"] = fpca_to_json(c.score_model);
    j["t2_metric"] = vector_to_json(c.t2_metric);
    j["t2_limit"] = c.t2_limit;
    j["spe_limit"] = c.spe_limit;
    j["alpha"] = c.alpha;
    j["alpha_per_chart"] = c.alpha_per_chart;
    return j;
}

inline T2SpeChart t2spe_from_json(const json& j) {
    T2SpeChart c;
    c.score_model = fpca_from_json(j.at("score_model"));
    c.t2_metric = vector_from_json(j.at("t2_metric"));
    c.t2_limit = j.at("t2_limit").get<double>();
    c.spe_limit = j.at("spe_limit").get<double>();
    c.alpha = j.at("alpha").get<double>();
    c.alpha_per_chart = j.at("alpha_per_chart").get<double>();
    return c;
}

inline json frcc_to_json(const FrccChart& c) {
    json j;
    j["method"] = "frcc";
    j["x_fpca"] = fpca_to_json(c.x_fpca);
    j["y_fpca"] = fpca_to_json(c.y_fpca);
    j["flm"] = mixture_to_json(c.flm);
    j["resid_fpca"] = fpca_to_json(c.resid_fpca);
    j["t2_metric"] = vector_to_json(c.t2_metric);
    j["t2_limit"] = c.t2_limit;
    j["spe_limit"] = c.spe_limit;
    j["alpha"] = c.alpha;
    j["alpha_per_chart"] = c.alpha_per_chart;
    return j;
}

inline FrccChart frcc_from_json(const json& j) {
    FrccChart c;
    c.x_fpca = fpca_from_json(j.at("x_fpca"));
    c.y_fpca = fpca_from_json(j.at("y_fpca"));
    c.flm = mixture_from_json(j.at("flm"));
    c.resid_fpca = fpca_from_json(j.at("resid_fpca"));
    c.t2_metric = vector_from_json(j.at("t2_metric"));
    c.t2_limit = j.at("t2_limit").get<double>();
    c.spe_limit = j.at("spe_limit").get<double>();
    c.alpha = j.at("alpha").get<double>();
    c.alpha_per_chart = j.at("alpha_per_chart").get<double>();
    return c;
}

inline json clust_to_json(const ClusteredChart& c) {
    json j;
    j["method"] = "clust";
    j["y_fpca"] = fpca_to_json(c.y_fpca);
    j["gmm"] = mixture_to_json(c.gmm);
    j["t2_limits"] = c.t2_limits;
    j["spe_limits"] = c.spe_limits;
    j["alpha"] = c.alpha;
    j["alpha_per_chart"] = c.alpha_per_chart;
    return j;
}

inline ClusteredChart clust_from_json(const json& j) {
    ClusteredChart c;
    c.y_fpca = fpca_from_json(j.at("y_fpca"));
    c.gmm = mixture_from_json(j.at("gmm"));
    c.t2_limits = j.at("t2_limits").get<std::vector<double>>();
    c.spe_limits = j.at("spe_limits").get<std::vector<double>>();
    c.alpha = j.at("alpha").get<double>();
    c.alpha_per_chart = j.at("alpha_per_chart").get<double>();
    return c;
}

// ---------------------------------------------------------------------------
// SimConfig JSON.
// ---------------------------------------------------------------------------

inline json sim_config_to_json(const SimConfig& c) {
    json j;
    j["delta1"] = c.delta1;
    j["delta2"] = c.delta2;
    j["n_train"] = c.n_train;
    j["n_tune"] = c.n_tune;
    j["n_test"] = c.n_test;
    j["shift_type"] = c.shift_type;
    j["severity"] = c.severity;
    j["grid_size"] = c.grid_size;
    j["seed"] = c.seed;
    j["snr"] = c.snr;
    return j;
}

inline SimConfig sim_config_from_json(const json& j) {
    SimConfig c;
    if (j.contains("delta1")) c.delta1 = j.at("delta1").get<double>();
    if (j.contains("delta2")) c.delta2 = j.at("delta2").get<double>();
    if (j.contains("n_train")) c.n_train = j.at("n_train").get<int>();
    if (j.contains("n_tune")) c.n_tune = j.at("n_tune").get<int>();
    if (j.contains("n_test")) c.n_test = j.at("n_test").get<int>();
    if (j.contains("shift_type")) c.shift_type = j.at("shift_type").get<std::string>();
    if (j.contains("severity")) c.severity = j.at("severity").get<double>();
    if (j.contains("grid_size")) c.grid_size = j.at("grid_size").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("snr")) c.snr = j.at("snr").get<double>();
    return c;
}

inline json load_json_file(const std::string& path) {
    std::ifstream f = detail::open_in(path);
    return json::parse(f);  // parse_error propagates (usage-level failure)
}

inline void write_json_file(const std::string& path, const json& j) {
    std::ofstream f = detail::open_out(path);
    f << j.dump(2) << "\n";
    if (!f) throw DataError("write failed: " + path);
}

}  // namespace fmrcc

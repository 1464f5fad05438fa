#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fmrcc/errors.hpp"
#include "fmrcc/fpca.hpp"
#include "fmrcc/mixreg.hpp"

namespace fmrcc {

/// Coefficient-estimate covariance of a fitted mixture. The covariance between
/// coefficient columns r and h of component k factorizes into the response
/// covariance entry times one shared design-side sandwich matrix per component,
/// so only the sandwiches are stored; block() materializes any (k, r, h) pair.
struct CoefficientCovariance {
    std::vector<Eigen::MatrixXd> sandwich;  // K matrices, D x D
    std::vector<Eigen::MatrixXd> sigma;     // K matrices, M x M (component Sigma_k)

    int components() const { return static_cast<int>(sandwich.size()); }
    bool empty() const { return sandwich.empty(); }

    Eigen::MatrixXd block(int k, int r, int h) const {
        return sigma[k](r, h) * sandwich[k];
    }
};

struct ControlChart {
    double alpha = 0.05;
    double limit = 0.0;
    Eigen::VectorXd tuning_stats;  // sorted ascending
    bool studentized = false;
};

struct MonitoringPipeline {
    FpcaModel x_fpca;
    FpcaModel y_fpca;
    MixtureModel mixture;
    CoefficientCovariance coeff_cov;  // populated only for studentized charts
    ControlChart chart;
};

struct Verdict {
    double w_star = 0.0;
    double limit = 0.0;
    bool alarm = false;
    Eigen::VectorXd component_posteriors;
};

namespace detail {

// Per-component log pi_k + log-density of y under component k with the given
// covariance set; shared by the plain and studentized statistics.
inline Eigen::VectorXd component_log_weights(const MixtureModel& mixture,
                                             const std::vector<Eigen::MatrixXd>& covariances,
                                             const Eigen::VectorXd& design,
                                             const Eigen::VectorXd& y_scores) {
    const int K = mixture.K;
    const Eigen::Index M = y_scores.size();
    Eigen::VectorXd lw(K);
    for (int k = 0; k < K; ++k) {
        Eigen::LLT<Eigen::MatrixXd> chol(covariances[k]);
        if (chol.info() != Eigen::Success)
            throw NumericError("non-positive-definite covariance in statistic (component " +
                               std::to_string(k) + ")");
        Eigen::VectorXd r = y_scores - mixture.B[k].transpose() * design;
        double q = chol.matrixL().solve(r).squaredNorm();
        double log_det = 2.0 * chol.matrixLLT().diagonal().array().log().sum();
        lw[k] = std::log(mixture.pi[k]) - 0.5 * double(M) * std::log(2.0 * M_PI) -
                0.5 * log_det - 0.5 * q;
        if (!std::isfinite(lw[k]))
            throw NumericError("non-finite mixture density in statistic (component " +
                               std::to_string(k) + ")");
    }
    return lw;
}

inline double neg_log_sum_exp(const Eigen::VectorXd& lw) {
    double m = lw.maxCoeff();
    double w = -(m + std::log((lw.array() - m).exp().sum()));
    if (!std::isfinite(w)) throw NumericError("non-finite monitoring statistic");
    return w;
}

inline Eigen::VectorXd softmax(const Eigen::VectorXd& lw) {
    Eigen::VectorXd e = (lw.array() - lw.maxCoeff()).exp();
    return e / e.sum();
}

}  // namespace detail

/// W = -log sum_k pi_k phi(y; B_k' xi, Sigma_k), the likelihood-ratio statistic.
inline double monitoring_statistic(const MixtureModel& mixture, const Eigen::VectorXd& design,
                                   const Eigen::VectorXd& y_scores) {
    return detail::neg_log_sum_exp(
        detail::component_log_weights(mixture, mixture.Sigma, design, y_scores));
}

inline CoefficientCovariance coefficient_covariance(const MixtureModel& mixture,
                                                    const Eigen::MatrixXd& designs,
                                                    const Eigen::MatrixXd& tau) {
    const Eigen::Index D = designs.cols();
    require(tau.rows() == designs.rows() && tau.cols() == mixture.K,
            "posterior matrix does not match designs/mixture");
    CoefficientCovariance cc;
    cc.sandwich.resize(mixture.K);
    cc.sigma = mixture.Sigma;
    for (int k = 0; k < mixture.K; ++k) {
        Eigen::VectorXd t = tau.col(k);
        Eigen::MatrixXd bracket = designs.transpose() * (designs.array().colwise() * t.array()).matrix();
        const double ridge = 1e-10 * bracket.trace() / double(D);
        bracket.diagonal().array() += ridge;
        Eigen::MatrixXd mid =
            designs.transpose() * (designs.array().colwise() * t.array().square()).matrix();
        Eigen::LDLT<Eigen::MatrixXd> solver(bracket);
        Eigen::MatrixXd s = solver.solve(solver.solve(mid).transpose());
        cc.sandwich[k] = 0.5 * (s + s.transpose());
    }
    return cc;
}

/// Sigma_k inflated by coefficient-estimate uncertainty at the new design point:
/// entry (r,h) gains design' Cov{B_(r)k, B_(h)k} design.
inline Eigen::MatrixXd prediction_error_covariance(const CoefficientCovariance& coeff_cov, int k,
                                                   const Eigen::MatrixXd& sigma_k,
                                                   const Eigen::VectorXd& design) {
    require(k >= 0 && k < coeff_cov.components(), "component index out of range");
    const Eigen::Index M = sigma_k.rows();
    const double quad = design.dot(coeff_cov.sandwich[k] * design);
    if (quad == 0.0) return sigma_k;  // no estimation uncertainty: plain Sigma_k
    Eigen::MatrixXd out(M, M);
    for (Eigen::Index r = 0; r < M; ++r)
        for (Eigen::Index h = 0; h < M; ++h) out(r, h) = sigma_k(r, h) + sigma_k(r, h) * quad;
    return detail::floor_spd(out, 1e-8, 0.0);
}

inline double studentized_statistic(const MixtureModel& mixture,
                                    const CoefficientCovariance& coeff_cov,
                                    const Eigen::VectorXd& design,
                                    const Eigen::VectorXd& y_scores) {
    std::vector<Eigen::MatrixXd> inflated(mixture.K);
    for (int k = 0; k < mixture.K; ++k)
        inflated[k] = prediction_error_covariance(coeff_cov, k, mixture.Sigma[k], design);
    return detail::neg_log_sum_exp(
        detail::component_log_weights(mixture, inflated, design, y_scores));
}

/// Control limit = ceiling-rank (1 - alpha) empirical quantile of the tuning
/// statistics: the ceil((1-alpha)*n)-th order statistic.
inline ControlChart calibrate_limit(const Eigen::VectorXd& tuning_stats, double alpha) {
    const Eigen::Index n = tuning_stats.size();
    require(n >= 20, "calibration needs at least 20 tuning statistics");
    require(alpha > 0.0 && alpha <= 0.5, "alpha must lie in (0, 0.5]");
    ControlChart chart;
    chart.alpha = alpha;
    chart.tuning_stats = tuning_stats;
    std::sort(chart.tuning_stats.data(), chart.tuning_stats.data() + n);
    Eigen::Index rank = static_cast<Eigen::Index>(std::ceil((1.0 - alpha) * double(n)));
    rank = std::min(std::max<Eigen::Index>(rank, 1), n);
    chart.limit = chart.tuning_stats[rank - 1];
    return chart;
}

struct PipelineOptions {
    double alpha = 0.05;
    double fve = 0.95;
    std::vector<int> k_range = {1, 2, 3, 4, 5};
    std::vector<CovParam> cov_set = {CovParam::SphericalCommon, CovParam::SphericalPerComponent,
                                     CovParam::FullCommon, CovParam::FullPerComponent};
    bool studentized = true;
    EmOptions em;
};

namespace detail {

inline Eigen::MatrixXd stack_standardized(const FpcaModel& model,
                                          const std::vector<CurveSample>& raw) {
    require(static_cast<Eigen::Index>(raw.size()) == model.scaling.n_variables(),
            "variable count does not match pipeline");
    const Eigen::Index n = raw[0].n();
    Eigen::MatrixXd stacked(n, model.stacked_size());
    Eigen::Index at = 0;
    for (std::size_t v = 0; v < raw.size(); ++v) {
        require(raw[v].n() == n, "all variables need the same number of observations");
        require(raw[v].grid == model.grids[v], "grid does not match pipeline");
        CurveSample s = apply_scaling_sample(model.scaling, raw[v], Eigen::Index(v));
        stacked.middleCols(at, s.grid.size()) = s.values;
        at += s.grid.size();
    }
    return stacked;
}

inline Eigen::VectorXd stack_standardized_one(const FpcaModel& model,
                                              const std::vector<DiscreteCurve>& raw) {
    require(static_cast<Eigen::Index>(raw.size()) == model.scaling.n_variables(),
            "variable count does not match pipeline");
    Eigen::VectorXd stacked(model.stacked_size());
    Eigen::Index at = 0;
    for (std::size_t v = 0; v < raw.size(); ++v) {
        require(raw[v].grid == model.grids[v], "grid does not match pipeline");
        DiscreteCurve c = apply_scaling(model.scaling, raw[v], Eigen::Index(v));
        stacked.segment(at, c.grid.size()) = c.values;
        at += c.grid.size();
    }
    return stacked;
}

}  // namespace detail

/// Scores of raw Phase II observations under the Phase I scaling + eigenbasis.
inline Eigen::MatrixXd pipeline_scores(const FpcaModel& model,
                                       const std::vector<CurveSample>& raw) {
    return project_scores_sample(model, detail::stack_standardized(model, raw));
}

/// Statistic of one already-projected observation under the pipeline's chart mode.
inline double pipeline_statistic(const MonitoringPipeline& pipeline,
                                 const Eigen::VectorXd& design,
                                 const Eigen::VectorXd& y_scores) {
    if (pipeline.chart.studentized)
        return studentized_statistic(pipeline.mixture, pipeline.coeff_cov, design, y_scores);
    return monitoring_statistic(pipeline.mixture, design, y_scores);
}

inline MonitoringPipeline fit_monitoring_pipeline(const std::vector<CurveSample>& train_x,
                                                  const CurveSample& train_y,
                                                  const std::vector<CurveSample>& tune_x,
                                                  const CurveSample& tune_y,
                                                  const PipelineOptions& options = {}) {
    require(!train_x.empty() && !tune_x.empty(), "pipeline needs at least one covariate variable");

    MonitoringPipeline p;
    std::vector<CurveSample> std_x;
    ScalingModel x_scaling;
    for (const auto& sample : train_x) {
        auto [s, m] = standardize_sample(sample);
        std_x.push_back(std::move(s));
        x_scaling.mean_curves.push_back(m.mean_curves[0]);
        x_scaling.scale_curves.push_back(m.scale_curves[0]);
    }
    p.x_fpca = fit_fpca(std_x, x_scaling, options.fve);

    auto [std_y, y_scaling] = standardize_sample(train_y);
    p.y_fpca = fit_fpca(std_y, y_scaling, options.fve);

    Eigen::MatrixXd x_scores(train_y.n(), p.x_fpca.retained);
    {
        Eigen::MatrixXd stacked(train_y.n(), p.x_fpca.stacked_size());
        Eigen::Index at = 0;
        for (const auto& s : std_x) {
            stacked.middleCols(at, s.grid.size()) = s.values;
            at += s.grid.size();
        }
        x_scores = project_scores_sample(p.x_fpca, stacked);
    }
    Eigen::MatrixXd y_scores = project_scores_sample(p.y_fpca, std_y.values);
    Eigen::MatrixXd designs = assemble_design_matrix(x_scores);

    p.mixture = select_model(designs, y_scores, options.k_range, options.cov_set, options.em);
    if (options.studentized) {
        EStepResult es = e_step(p.mixture, designs, y_scores);
        p.coeff_cov = coefficient_covariance(p.mixture, designs, es.tau);
    }

    Eigen::MatrixXd tune_xs = pipeline_scores(p.x_fpca, tune_x);
    Eigen::MatrixXd tune_ys = pipeline_scores(p.y_fpca, {tune_y});
    Eigen::MatrixXd tune_designs = assemble_design_matrix(tune_xs);
    Eigen::VectorXd w(tune_designs.rows());
    p.chart.studentized = options.studentized;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        if (options.studentized)
            w[i] = studentized_statistic(p.mixture, p.coeff_cov, tune_designs.row(i).transpose(),
                                         tune_ys.row(i).transpose());
        else
            w[i] = monitoring_statistic(p.mixture, tune_designs.row(i).transpose(),
                                        tune_ys.row(i).transpose());
    }
    bool studentized = p.chart.studentized;
    p.chart = calibrate_limit(w, options.alpha);
    p.chart.studentized = studentized;
    return p;
}

/// Phase II statistics for a whole observation file (one W per row).
inline Eigen::VectorXd phase2_statistics(const MonitoringPipeline& pipeline,
                                         const std::vector<CurveSample>& x,
                                         const CurveSample& y) {
    Eigen::MatrixXd xs = pipeline_scores(pipeline.x_fpca, x);
    Eigen::MatrixXd ys = pipeline_scores(pipeline.y_fpca, {y});
    Eigen::MatrixXd designs = assemble_design_matrix(xs);
    Eigen::VectorXd w(designs.rows());
    for (Eigen::Index i = 0; i < w.size(); ++i)
        w[i] = pipeline_statistic(pipeline, designs.row(i).transpose(), ys.row(i).transpose());
    return w;
}

inline Verdict phase2_monitor(const MonitoringPipeline& pipeline,
                              const std::vector<DiscreteCurve>& x_curves,
                              const DiscreteCurve& y_curve) {
    Eigen::VectorXd xs = project_scores(
        pipeline.x_fpca, detail::stack_standardized_one(pipeline.x_fpca, x_curves));
    Eigen::VectorXd ys = project_scores(
        pipeline.y_fpca, detail::stack_standardized_one(pipeline.y_fpca, {y_curve}));
    Eigen::VectorXd design = assemble_design(xs, Eigen::VectorXd());

    Verdict v;
    v.limit = pipeline.chart.limit;
    Eigen::VectorXd lw;
    if (pipeline.chart.studentized) {
        std::vector<Eigen::MatrixXd> inflated(pipeline.mixture.K);
        for (int k = 0; k < pipeline.mixture.K; ++k)
            inflated[k] = prediction_error_covariance(pipeline.coeff_cov, k,
                                                      pipeline.mixture.Sigma[k], design);
        lw = detail::component_log_weights(pipeline.mixture, inflated, design, ys);
    } else {
        lw = detail::component_log_weights(pipeline.mixture, pipeline.mixture.Sigma, design, ys);
    }
    v.w_star = detail::neg_log_sum_exp(lw);
    v.component_posteriors = detail::softmax(lw);
    v.alarm = v.w_star > v.limit;
    return v;
}

}  // namespace fmrcc

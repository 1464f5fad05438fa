#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "fmrcc/errors.hpp"
#include "fmrcc/fpca.hpp"
#include "fmrcc/mixreg.hpp"
#include "fmrcc/monitor.hpp"

namespace fmrcc {

/// Overall false-alarm budget alpha shared by two charts fired in parallel:
/// each runs at alpha' with (1 - alpha')^2 = 1 - alpha.
inline double split_alpha(double alpha) { return 1.0 - std::sqrt(1.0 - alpha); }

/// Hotelling T^2 with the diagonal eigenvalue metric of FPCA scores.
inline double t2_statistic(const Eigen::VectorXd& scores, const Eigen::VectorXd& lambda) {
    require(scores.size() == lambda.size(), "score/metric length mismatch");
    const double floor = std::max(1e-12 * lambda.maxCoeff(), 1e-300);
    double t2 = 0.0;
    for (Eigen::Index l = 0; l < scores.size(); ++l)
        t2 += scores[l] * scores[l] / std::max(lambda[l], floor);
    return t2;
}

/// Hotelling T^2 of a deviation vector under a full covariance metric.
inline double t2_statistic(const Eigen::VectorXd& deviation, const Eigen::MatrixXd& cov) {
    require(deviation.size() == cov.rows(), "deviation/metric size mismatch");
    Eigen::LLT<Eigen::MatrixXd> chol(detail::floor_spd(cov, 1e-12, 1e-300));
    return chol.matrixL().solve(deviation).squaredNorm();
}

/// Squared prediction error: quadrature L^2 norm of the part of a standardized
/// observation outside the retained eigenspace.
inline double spe_statistic(const FpcaModel& model, const Eigen::VectorXd& stacked_std_obs) {
    require(stacked_std_obs.size() == model.stacked_size(), "observation/model grid mismatch");
    Eigen::VectorXd scores = project_scores(model, stacked_std_obs);
    Eigen::VectorXd resid = stacked_std_obs - reconstruct(model, scores);
    return resid.dot(model.stacked_weights().asDiagonal() * resid);
}

struct T2SpeChart {
    FpcaModel score_model;
    Eigen::VectorXd t2_metric;  // retained eigenvalues (diagonal T^2 metric)
    double t2_limit = 0.0;
    double spe_limit = 0.0;
    double alpha = 0.05;
    double alpha_per_chart = 0.0;
};

namespace detail {

inline void calibrate_t2_spe(T2SpeChart& chart, const Eigen::VectorXd& t2_vals,
                             const Eigen::VectorXd& spe_vals, double alpha) {
    chart.alpha = alpha;
    chart.alpha_per_chart = split_alpha(alpha);
    chart.t2_limit = calibrate_limit(t2_vals, chart.alpha_per_chart).limit;
    chart.spe_limit = calibrate_limit(spe_vals, chart.alpha_per_chart).limit;
}

inline Verdict t2_spe_verdict(double t2, double spe, double t2_limit, double spe_limit) {
    Verdict v;
    v.limit = 1.0;
    v.w_star = std::max(t2 / t2_limit, spe / spe_limit);
    v.alarm = t2 > t2_limit || spe > spe_limit;
    return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// FCC: T^2 / SPE on the response's own principal component scores.
// ---------------------------------------------------------------------------

inline T2SpeChart fcc_build(const CurveSample& train_y, const CurveSample& tune_y, double alpha,
                            double fve) {
    T2SpeChart chart;
    auto [std_y, scaling] = standardize_sample(train_y);
    chart.score_model = fit_fpca(std_y, scaling, fve);
    chart.t2_metric = chart.score_model.eigenvalues;

    CurveSample tune_std = apply_scaling_sample(chart.score_model.scaling, tune_y);
    Eigen::VectorXd t2(tune_std.n()), spe(tune_std.n());
    for (Eigen::Index i = 0; i < tune_std.n(); ++i) {
        Eigen::VectorXd obs = tune_std.row(i).values;
        t2[i] = t2_statistic(project_scores(chart.score_model, obs), chart.t2_metric);
        spe[i] = spe_statistic(chart.score_model, obs);
    }
    detail::calibrate_t2_spe(chart, t2, spe, alpha);
    return chart;
}

inline Verdict fcc_monitor(const T2SpeChart& chart, const DiscreteCurve& y) {
    Eigen::VectorXd obs = apply_scaling(chart.score_model.scaling, y).values;
    double t2 = t2_statistic(project_scores(chart.score_model, obs), chart.t2_metric);
    double spe = spe_statistic(chart.score_model, obs);
    return detail::t2_spe_verdict(t2, spe, chart.t2_limit, chart.spe_limit);
}

inline std::vector<bool> fcc_alarms(const T2SpeChart& chart, const CurveSample& y) {
    std::vector<bool> out(y.n());
    for (Eigen::Index i = 0; i < y.n(); ++i)
        out[i] = fcc_monitor(chart, y.row(i)).alarm;
    return out;
}

// ---------------------------------------------------------------------------
// FRCC: one global functional regression, then T^2 / SPE on the FPCA of its
// functional residuals.
// ---------------------------------------------------------------------------

struct FrccChart {
    FpcaModel x_fpca;
    FpcaModel y_fpca;
    MixtureModel flm;       // K = 1 score regression
    FpcaModel resid_fpca;   // FPCA of the Phase I residual curves
    Eigen::VectorXd t2_metric;
    double t2_limit = 0.0;
    double spe_limit = 0.0;
    double alpha = 0.05;
    double alpha_per_chart = 0.0;
};

namespace detail {

// Standardized-unit residual curves: y_std minus the reconstruction of the
// predicted response scores.
inline Eigen::MatrixXd frcc_residual_rows(const FrccChart& chart, const Eigen::MatrixXd& y_std,
                                          const Eigen::MatrixXd& designs) {
    Eigen::MatrixXd pred_scores = designs * chart.flm.B[0];
    return y_std - pred_scores * chart.y_fpca.eigenfunctions.transpose();
}

}  // namespace detail

inline FrccChart frcc_build(const std::vector<CurveSample>& train_x, const CurveSample& train_y,
                            const std::vector<CurveSample>& tune_x, const CurveSample& tune_y,
                            double alpha, double fve, const EmOptions& em = {}) {
    FrccChart chart;
    std::vector<CurveSample> std_x;
    ScalingModel x_scaling;
    for (const auto& sample : train_x) {
        auto [s, m] = standardize_sample(sample);
        std_x.push_back(std::move(s));
        x_scaling.mean_curves.push_back(m.mean_curves[0]);
        x_scaling.scale_curves.push_back(m.scale_curves[0]);
    }
    chart.x_fpca = fit_fpca(std_x, x_scaling, fve);
    auto [std_y, y_scaling] = standardize_sample(train_y);
    chart.y_fpca = fit_fpca(std_y, y_scaling, fve);

    Eigen::MatrixXd stacked_x(train_y.n(), chart.x_fpca.stacked_size());
    {
        Eigen::Index at = 0;
        for (const auto& s : std_x) {
            stacked_x.middleCols(at, s.grid.size()) = s.values;
            at += s.grid.size();
        }
    }
    Eigen::MatrixXd designs = assemble_design_matrix(project_scores_sample(chart.x_fpca, stacked_x));
    Eigen::MatrixXd y_scores = project_scores_sample(chart.y_fpca, std_y.values);
    chart.flm = em_fit(designs, y_scores, 1, CovParam::FullPerComponent, em);

    Eigen::MatrixXd resid = detail::frcc_residual_rows(chart, std_y.values, designs);
    auto [std_resid, resid_scaling] = standardize_sample(CurveSample(train_y.grid, resid));
    chart.resid_fpca = fit_fpca(std_resid, resid_scaling, fve);
    chart.t2_metric = chart.resid_fpca.eigenvalues;

    Eigen::MatrixXd tune_xs = pipeline_scores(chart.x_fpca, tune_x);
    Eigen::MatrixXd tune_y_std =
        detail::stack_standardized(chart.y_fpca, {tune_y});
    Eigen::MatrixXd tune_resid = detail::frcc_residual_rows(
        chart, tune_y_std, assemble_design_matrix(tune_xs));
    CurveSample tune_resid_std =
        apply_scaling_sample(chart.resid_fpca.scaling, CurveSample(tune_y.grid, tune_resid));
    Eigen::VectorXd t2(tune_resid_std.n()), spe(tune_resid_std.n());
    for (Eigen::Index i = 0; i < tune_resid_std.n(); ++i) {
        Eigen::VectorXd obs = tune_resid_std.row(i).values;
        t2[i] = t2_statistic(project_scores(chart.resid_fpca, obs), chart.t2_metric);
        spe[i] = spe_statistic(chart.resid_fpca, obs);
    }
    chart.alpha = alpha;
    chart.alpha_per_chart = split_alpha(alpha);
    chart.t2_limit = calibrate_limit(t2, chart.alpha_per_chart).limit;
    chart.spe_limit = calibrate_limit(spe, chart.alpha_per_chart).limit;
    return chart;
}

inline Verdict frcc_monitor(const FrccChart& chart, const std::vector<DiscreteCurve>& x_curves,
                            const DiscreteCurve& y_curve) {
    Eigen::VectorXd xs = project_scores(
        chart.x_fpca, detail::stack_standardized_one(chart.x_fpca, x_curves));
    Eigen::VectorXd y_std = detail::stack_standardized_one(chart.y_fpca, {y_curve});
    Eigen::VectorXd design = assemble_design(xs, Eigen::VectorXd());
    Eigen::VectorXd resid =
        y_std - chart.y_fpca.eigenfunctions * (chart.flm.B[0].transpose() * design);
    Eigen::VectorXd resid_std =
        apply_scaling(chart.resid_fpca.scaling, DiscreteCurve(chart.y_fpca.grids[0], resid)).values;
    double t2 = t2_statistic(project_scores(chart.resid_fpca, resid_std), chart.t2_metric);
    double spe = spe_statistic(chart.resid_fpca, resid_std);
    return detail::t2_spe_verdict(t2, spe, chart.t2_limit, chart.spe_limit);
}

inline std::vector<bool> frcc_alarms(const FrccChart& chart, const std::vector<CurveSample>& x,
                                     const CurveSample& y) {
    std::vector<bool> out(y.n());
    for (Eigen::Index i = 0; i < y.n(); ++i) {
        std::vector<DiscreteCurve> xc;
        for (const auto& s : x) xc.push_back(s.row(i));
        out[i] = frcc_monitor(chart, xc, y.row(i)).alarm;
    }
    return out;
}

// ---------------------------------------------------------------------------
// CLUST: Gaussian mixture over response scores, MAP cluster assignment, then a
// per-cluster T^2 (mixture covariance metric) plus a global-eigenspace SPE,
// each cluster calibrated at the overall alpha on its own tuning members.
// ---------------------------------------------------------------------------

struct ClusteredChart {
    FpcaModel y_fpca;
    MixtureModel gmm;  // design = [1]; B_k row 0 is the cluster mean
    std::vector<double> t2_limits;
    std::vector<double> spe_limits;
    double alpha = 0.05;
    double alpha_per_chart = 0.0;
};

namespace detail {

inline void drop_component(MixtureModel& gmm, int k) {
    gmm.B.erase(gmm.B.begin() + k);
    gmm.Sigma.erase(gmm.Sigma.begin() + k);
    Eigen::VectorXd pi(gmm.K - 1);
    for (int j = 0, at = 0; j < gmm.K; ++j)
        if (j != k) pi[at++] = gmm.pi[j];
    gmm.pi = pi / pi.sum();
    gmm.K -= 1;
}

}  // namespace detail

inline ClusteredChart clust_build(const CurveSample& train_y, const CurveSample& tune_y,
                                  double alpha, double fve,
                                  const std::vector<int>& k_range = {1, 2, 3, 4, 5},
                                  const EmOptions& em = {}) {
    ClusteredChart chart;
    auto [std_y, scaling] = standardize_sample(train_y);
    chart.y_fpca = fit_fpca(std_y, scaling, fve);
    Eigen::MatrixXd train_scores = project_scores_sample(chart.y_fpca, std_y.values);
    const Eigen::Index M = train_scores.cols();
    Eigen::MatrixXd ones_train = Eigen::MatrixXd::Ones(train_scores.rows(), 1);

    std::vector<CovParam> covs = {CovParam::SphericalCommon, CovParam::SphericalPerComponent,
                                  CovParam::FullCommon, CovParam::FullPerComponent};
    chart.gmm = select_model(ones_train, train_scores, k_range, covs, em);

    CurveSample tune_std = apply_scaling_sample(chart.y_fpca.scaling, tune_y);
    Eigen::MatrixXd tune_scores = project_scores_sample(chart.y_fpca, tune_std.values);
    Eigen::MatrixXd ones_tune = Eigen::MatrixXd::Ones(tune_scores.rows(), 1);

    // Clusters too small to estimate or calibrate get dissolved; their members
    // fall to the surviving clusters by MAP.
    std::vector<int> train_lab, tune_lab;
    for (;;) {
        train_lab = map_labels(e_step(chart.gmm, ones_train, train_scores).tau);
        tune_lab = map_labels(e_step(chart.gmm, ones_tune, tune_scores).tau);
        if (chart.gmm.K == 1) break;
        std::vector<int> train_n(chart.gmm.K, 0), tune_n(chart.gmm.K, 0);
        for (int l : train_lab) ++train_n[l];
        for (int l : tune_lab) ++tune_n[l];
        int worst = -1;
        for (int k = 0; k < chart.gmm.K; ++k)
            if (train_n[k] < int(M) + 1 || tune_n[k] < 20)
                if (worst < 0 || train_n[k] + tune_n[k] < train_n[worst] + tune_n[worst])
                    worst = k;
        if (worst < 0) break;
        detail::drop_component(chart.gmm, worst);
    }

    chart.alpha = alpha;
    chart.alpha_per_chart = split_alpha(alpha);
    chart.t2_limits.resize(chart.gmm.K);
    chart.spe_limits.resize(chart.gmm.K);
    for (int k = 0; k < chart.gmm.K; ++k) {
        std::vector<double> t2v, spev;
        for (Eigen::Index i = 0; i < tune_scores.rows(); ++i) {
            if (tune_lab[i] != k) continue;
            Eigen::VectorXd dev = tune_scores.row(i).transpose() - chart.gmm.B[k].row(0).transpose();
            t2v.push_back(t2_statistic(dev, chart.gmm.Sigma[k]));
            spev.push_back(spe_statistic(chart.y_fpca, tune_std.row(i).values));
        }
        Eigen::VectorXd t2e = Eigen::Map<Eigen::VectorXd>(t2v.data(), t2v.size());
        Eigen::VectorXd spee = Eigen::Map<Eigen::VectorXd>(spev.data(), spev.size());
        chart.t2_limits[k] = calibrate_limit(t2e, chart.alpha_per_chart).limit;
        chart.spe_limits[k] = calibrate_limit(spee, chart.alpha_per_chart).limit;
    }
    return chart;
}

inline Verdict clust_monitor(const ClusteredChart& chart, const DiscreteCurve& y) {
    Eigen::VectorXd obs = apply_scaling(chart.y_fpca.scaling, y).values;
    Eigen::VectorXd scores = project_scores(chart.y_fpca, obs);
    Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(1, 1);
    EStepResult es = e_step(chart.gmm, ones, scores.transpose());
    Eigen::Index k;
    es.tau.row(0).maxCoeff(&k);
    Eigen::VectorXd dev = scores - chart.gmm.B[k].row(0).transpose();
    double t2 = t2_statistic(dev, chart.gmm.Sigma[k]);
    double spe = spe_statistic(chart.y_fpca, obs);
    Verdict v = detail::t2_spe_verdict(t2, spe, chart.t2_limits[k], chart.spe_limits[k]);
    v.component_posteriors = es.tau.row(0).transpose();
    return v;
}

inline std::vector<bool> clust_alarms(const ClusteredChart& chart, const CurveSample& y) {
    std::vector<bool> out(y.n());
    for (Eigen::Index i = 0; i < y.n(); ++i)
        out[i] = clust_monitor(chart, y.row(i)).alarm;
    return out;
}

}  // namespace fmrcc

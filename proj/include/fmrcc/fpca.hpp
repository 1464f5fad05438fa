#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <utility>
#include <vector>

#include "fmrcc/curves.hpp"
#include "fmrcc/grid.hpp"

namespace fmrcc {

/// Truncated eigenbasis of a (possibly multivariate) functional sample.
/// Eigenfunctions are stored stacked across variables, one column per retained
/// component, orthonormal under the concatenated quadrature inner product.
struct FpcaModel {
    std::vector<Grid> grids;         // one per variable
    ScalingModel scaling;            // Phase I pointwise mean/scale per variable
    Eigen::MatrixXd eigenfunctions;  // (sum of grid sizes) x retained
    Eigen::VectorXd eigenvalues;     // retained, nonincreasing, >= 0
    int retained = 0;
    double fve_target = 0.0;
    double total_variance = 0.0;  // sum of the full spectrum (FVE denominator)

    Eigen::Index stacked_size() const {
        Eigen::Index s = 0;
        for (const auto& g : grids) s += g.size();
        return s;
    }

    /// Concatenated quadrature weights across variables.
    Eigen::VectorXd stacked_weights() const {
        Eigen::VectorXd w(stacked_size());
        Eigen::Index at = 0;
        for (const auto& g : grids) {
            w.segment(at, g.size()) = g.weights();
            at += g.size();
        }
        return w;
    }
};

/// Unbiased sample covariance of a standardized sample over the stacked grid.
inline Eigen::MatrixXd estimate_covariance(const Eigen::MatrixXd& stacked_values) {
    require(stacked_values.rows() >= 2, "covariance needs at least 2 observations");
    Eigen::RowVectorXd mean = stacked_values.colwise().mean();
    Eigen::MatrixXd centered = stacked_values.rowwise() - mean;
    return centered.transpose() * centered / double(stacked_values.rows() - 1);
}

inline Eigen::MatrixXd estimate_covariance(const CurveSample& sample) {
    return estimate_covariance(sample.values);
}

/// Eigendecomposition of the quadrature-weighted covariance; keeps the smallest
/// leading set of components whose cumulative eigenvalue fraction reaches
/// fve_target. Each eigenfunction is flipped so its entry of largest absolute
/// value is positive.
inline FpcaModel fit_fpca(const std::vector<CurveSample>& std_samples,
                          const ScalingModel& scaling, double fve_target) {
    require(fve_target > 0.0 && fve_target <= 1.0, "fve_target must be in (0, 1]");
    require(!std_samples.empty(), "fit_fpca needs at least one variable");
    const Eigen::Index n = std_samples[0].n();
    Eigen::Index total_g = 0;
    for (const auto& s : std_samples) {
        require(s.n() == n, "all variables need the same number of observations");
        total_g += s.grid.size();
    }
    Eigen::MatrixXd stacked(n, total_g);
    Eigen::VectorXd w(total_g);
    {
        Eigen::Index at = 0;
        for (const auto& s : std_samples) {
            stacked.middleCols(at, s.grid.size()) = s.values;
            w.segment(at, s.grid.size()) = s.grid.weights();
            at += s.grid.size();
        }
    }
    Eigen::MatrixXd C = estimate_covariance(stacked);
    Eigen::VectorXd sqw = w.array().sqrt();
    Eigen::MatrixXd A = sqw.asDiagonal() * C * sqw.asDiagonal();
    A = ((A + A.transpose()) / 2.0).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(A);
    require(eig.info() == Eigen::Success, "eigendecomposition failed");

    // Eigen returns ascending order; reverse and clamp rounding negatives.
    Eigen::VectorXd vals = eig.eigenvalues().reverse();
    Eigen::MatrixXd vecs = eig.eigenvectors().rowwise().reverse();
    for (Eigen::Index i = 0; i < vals.size(); ++i) vals[i] = std::max(vals[i], 0.0);
    const double total = vals.sum();
    if (total <= 0.0) throw DataError("degenerate sample: all-zero covariance");

    int retained = 0;
    double cum = 0.0;
    for (Eigen::Index i = 0; i < vals.size(); ++i) {
        cum += vals[i];
        ++retained;
        if (cum >= fve_target * total - 1e-12 * total) break;
    }

    FpcaModel model;
    for (const auto& s : std_samples) model.grids.push_back(s.grid);
    model.scaling = scaling;
    model.fve_target = fve_target;
    model.total_variance = total;
    model.retained = retained;
    model.eigenvalues = vals.head(retained);
    model.eigenfunctions.resize(total_g, retained);
    for (int l = 0; l < retained; ++l) {
        Eigen::VectorXd psi = vecs.col(l).array() / sqw.array();
        Eigen::Index arg = 0;
        psi.array().abs().maxCoeff(&arg);
        if (psi[arg] < 0.0) psi = -psi;
        model.eigenfunctions.col(l) = psi;
    }
    return model;
}

inline FpcaModel fit_fpca(const CurveSample& std_sample, const ScalingModel& scaling,
                          double fve_target) {
    return fit_fpca(std::vector<CurveSample>{std_sample}, scaling, fve_target);
}

/// Scores of one standardized observation: quadrature inner products with the
/// retained eigenfunctions (summed across variables through the stacked layout).
inline Eigen::VectorXd project_scores(const FpcaModel& model,
                                      const Eigen::VectorXd& stacked_observation) {
    require(stacked_observation.size() == model.stacked_size(),
            "observation length does not match model grids");
    Eigen::VectorXd w = model.stacked_weights();
    return model.eigenfunctions.transpose() * (w.asDiagonal() * stacked_observation);
}

/// Scores for every row of a standardized sample (single-variable convenience).
inline Eigen::MatrixXd project_scores_sample(const FpcaModel& model,
                                             const Eigen::MatrixXd& stacked_values) {
    require(stacked_values.cols() == model.stacked_size(),
            "sample columns do not match model grids");
    Eigen::VectorXd w = model.stacked_weights();
    return (stacked_values * w.asDiagonal()) * model.eigenfunctions;
}

/// Truncated reconstruction from scores, in standardized units.
inline Eigen::VectorXd reconstruct(const FpcaModel& model, const Eigen::VectorXd& scores) {
    require(scores.size() == model.retained, "score length does not match retained count");
    return model.eigenfunctions * scores;
}

/// Design vector [1, x-scores..., standardized scalar covariates...].
inline Eigen::VectorXd assemble_design(const Eigen::VectorXd& x_scores,
                                       const Eigen::VectorXd& scalar_covariates) {
    for (Eigen::Index i = 0; i < x_scores.size(); ++i)
        require(std::isfinite(x_scores[i]), "non-finite score in design");
    for (Eigen::Index i = 0; i < scalar_covariates.size(); ++i)
        require(std::isfinite(scalar_covariates[i]), "non-finite covariate in design");
    Eigen::VectorXd d(1 + x_scores.size() + scalar_covariates.size());
    d[0] = 1.0;
    d.segment(1, x_scores.size()) = x_scores;
    d.tail(scalar_covariates.size()) = scalar_covariates;
    return d;
}

/// Design matrix for a sample of score rows (scalar covariates optional).
inline Eigen::MatrixXd assemble_design_matrix(const Eigen::MatrixXd& x_scores,
                                              const Eigen::MatrixXd& scalars = Eigen::MatrixXd()) {
    const Eigen::Index n = x_scores.rows();
    const Eigen::Index q = scalars.size() == 0 ? 0 : scalars.cols();
    if (q > 0) require(scalars.rows() == n, "covariate rows must match score rows");
    Eigen::MatrixXd d(n, 1 + x_scores.cols() + q);
    d.col(0).setOnes();
    d.middleCols(1, x_scores.cols()) = x_scores;
    if (q > 0) d.rightCols(q) = scalars;
    return d;
}

}  // namespace fmrcc

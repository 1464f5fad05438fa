#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "fmrcc/grid.hpp"

namespace fmrcc {

/// B-spline basis on [a,b]: open knot vector with endpoint multiplicity degree+1
/// and evenly spaced interior knots, so n_basis = n_interior + degree + 1.
struct BasisSpec {
    int n_basis = 0;
    int degree = 3;
    Eigen::VectorXd knots;  // length n_basis + degree + 1, nondecreasing

    BasisSpec() = default;

    BasisSpec(int n_basis_, int degree_, double a, double b)
        : n_basis(n_basis_), degree(degree_) {
        require(degree >= 0, "degree must be nonnegative");
        require(b > a, "basis domain must be nonempty");
        const int n_interior = n_basis - degree - 1;
        require(n_interior >= 0, "n_basis must be at least degree + 1");
        knots.resize(n_basis + degree + 1);
        for (int i = 0; i <= degree; ++i) knots[i] = a;
        for (int i = 0; i < n_interior; ++i)
            knots[degree + 1 + i] = a + (b - a) * static_cast<double>(i + 1) / (n_interior + 1);
        for (int i = 0; i <= degree; ++i) knots[n_basis + i] = b;
    }

    double a() const { return knots[0]; }
    double b() const { return knots[knots.size() - 1]; }
};

/// A function represented by B-spline coefficients.
struct FunctionRep {
    BasisSpec basis;
    Eigen::VectorXd coefficients;
};

namespace detail {

// Index of the knot span containing t: knots[s] <= t < knots[s+1], with t at the
// right endpoint mapped into the last nonempty span.
inline int find_span(const BasisSpec& spec, double t) {
    const int p = spec.degree;
    const int high = spec.n_basis;  // last valid span index + 1
    if (t >= spec.knots[high]) return high - 1;
    int lo = p, hi = high;
    while (hi - lo > 1) {
        int mid = (lo + hi) / 2;
        if (t < spec.knots[mid]) hi = mid; else lo = mid;
    }
    return lo;
}

// Nonzero basis functions and derivatives at t, up to order n_der (the classic
// triangular-table algorithm). Row d of the result holds the d-th derivatives of
// the p+1 basis functions N_{span-p..span}.
inline Eigen::MatrixXd ders_basis_funs(const BasisSpec& spec, int span, double t, int n_der) {
    const int p = spec.degree;
    const Eigen::VectorXd& U = spec.knots;
    Eigen::MatrixXd ndu = Eigen::MatrixXd::Zero(p + 1, p + 1);
    Eigen::VectorXd left(p + 1), right(p + 1);
    ndu(0, 0) = 1.0;
    for (int j = 1; j <= p; ++j) {
        left[j] = t - U[span + 1 - j];
        right[j] = U[span + j] - t;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            ndu(j, r) = right[r + 1] + left[j - r];
            double temp = ndu(r, j - 1) / ndu(j, r);
            ndu(r, j) = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu(j, j) = saved;
    }
    const int nd = std::min(n_der, p);
    Eigen::MatrixXd ders = Eigen::MatrixXd::Zero(n_der + 1, p + 1);
    for (int j = 0; j <= p; ++j) ders(0, j) = ndu(j, p);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2, p + 1);
    for (int r = 0; r <= p; ++r) {
        int s1 = 0, s2 = 1;
        a(0, 0) = 1.0;
        for (int k = 1; k <= nd; ++k) {
            double d = 0.0;
            const int rk = r - k, pk = p - k;
            if (r >= k) {
                a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
                d = a(s2, 0) * ndu(rk, pk);
            }
            const int j1 = (rk >= -1) ? 1 : -rk;
            const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
            for (int j = j1; j <= j2; ++j) {
                a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
                d += a(s2, j) * ndu(rk + j, pk);
            }
            if (r <= pk) {
                a(s2, k) = -a(s1, k - 1) / ndu(pk + 1, r);
                d += a(s2, k) * ndu(r, pk);
            }
            ders(k, r) = d;
            std::swap(s1, s2);
        }
    }
    double r = p;
    for (int k = 1; k <= nd; ++k) {
        ders.row(k) *= r;
        r *= (p - k);
    }
    return ders;
}

}  // namespace detail

/// Basis (or derivative) values at a single point; returns the full-length row.
inline Eigen::VectorXd eval_basis_point(const BasisSpec& spec, double t, int der = 0) {
    require(t >= spec.a() - 1e-12 && t <= spec.b() + 1e-12, "point outside basis domain");
    t = std::clamp(t, spec.a(), spec.b());
    const int span = detail::find_span(spec, t);
    Eigen::MatrixXd ders = detail::ders_basis_funs(spec, span, t, der);
    Eigen::VectorXd row = Eigen::VectorXd::Zero(spec.n_basis);
    for (int j = 0; j <= spec.degree; ++j) row[span - spec.degree + j] = ders(der, j);
    return row;
}

/// Matrix of basis values: row r holds the n_basis spline values at grid point r.
inline Eigen::MatrixXd eval_basis(const BasisSpec& spec, const Grid& grid, int der = 0) {
    Eigen::MatrixXd out(grid.size(), spec.n_basis);
    for (Eigen::Index r = 0; r < grid.size(); ++r)
        out.row(r) = eval_basis_point(spec, grid.points()[r], der).transpose();
    return out;
}

inline DiscreteCurve eval_function(const FunctionRep& rep, const Grid& grid) {
    require(rep.coefficients.size() == rep.basis.n_basis, "coefficient count mismatch");
    Eigen::MatrixXd B = eval_basis(rep.basis, grid);
    return DiscreteCurve(grid, B * rep.coefficients);
}

/// Roughness penalty matrix P_ij = integral of B_i'' B_j'' over the domain,
/// by 7-point Gauss-Legendre per knot interval (exact for cubic splines).
inline Eigen::MatrixXd penalty_matrix(const BasisSpec& spec) {
    static const double gl_x[7] = {
        -0.9491079123427585245261897, -0.7415311855993944398638648,
        -0.4058451513773971669066064, 0.0,
        0.4058451513773971669066064,  0.7415311855993944398638648,
        0.9491079123427585245261897};
    static const double gl_w[7] = {
        0.1294849661688696932706114, 0.2797053914892766679014678,
        0.3818300505051189449503698, 0.4179591836734693877551020,
        0.3818300505051189449503698, 0.2797053914892766679014678,
        0.1294849661688696932706114};
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(spec.n_basis, spec.n_basis);
    for (int i = 0; i + 1 < spec.knots.size(); ++i) {
        const double lo = spec.knots[i], hi = spec.knots[i + 1];
        if (hi <= lo) continue;
        const double mid = (lo + hi) / 2.0, half = (hi - lo) / 2.0;
        for (int q = 0; q < 7; ++q) {
            const double t = mid + half * gl_x[q];
            Eigen::VectorXd d2 = eval_basis_point(spec, t, 2);
            P.noalias() += (half * gl_w[q]) * (d2 * d2.transpose());
        }
    }
    return P;
}

/// Penalized least-squares smoothing: coefficients minimize
/// sum_r (y_r - f(t_r))^2 + penalty * integral(f'')^2.
inline FunctionRep smooth_penalized(const DiscreteCurve& curve, const BasisSpec& spec,
                                    double penalty) {
    require(penalty >= 0.0, "penalty must be nonnegative");
    Eigen::MatrixXd B = eval_basis(spec, curve.grid);
    Eigen::MatrixXd A = B.transpose() * B;
    if (penalty > 0.0) A.noalias() += penalty * penalty_matrix(spec);
    if (penalty == 0.0 && spec.n_basis > curve.grid.size()) {
        Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
        if (lu.rank() < spec.n_basis)
            throw DataError("unpenalized normal system is rank deficient");
    }
    // Split off the least-squares affine part. Affine functions lie in the
    // penalty nullspace and have exact spline coefficients a + b * xi_i at the
    // Greville abscissae xi_i, so solving for the residual keeps the system
    // well scaled: large penalties otherwise push the affine component of the
    // solution through an ill-conditioned solve.
    const Eigen::Index n = curve.grid.size();
    Eigen::MatrixXd T(n, 2);
    T.col(0).setOnes();
    T.col(1) = curve.grid.points();
    if (spec.degree == 0) T.col(1).setZero();
    Eigen::VectorXd ab = T.colPivHouseholderQr().solve(curve.values);
    Eigen::VectorXd resid = curve.values - T * ab;

    Eigen::VectorXd rhs = B.transpose() * resid;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    Eigen::VectorXd coef = ldlt.solve(rhs);
    coef += ldlt.solve(rhs - A * coef);  // one refinement step

    for (int i = 0; i < spec.n_basis; ++i) {
        double greville = 0.0;
        if (spec.degree > 0) {
            for (int j = 1; j <= spec.degree; ++j) greville += spec.knots[i + j];
            greville /= spec.degree;
        }
        coef[i] += ab[0] + ab[1] * greville;
    }
    FunctionRep rep;
    rep.basis = spec;
    rep.coefficients = coef;
    return rep;
}

/// Default GCV candidate grid: 20 log-spaced penalties in [1e-8, 1e4].
inline std::vector<double> default_penalty_grid() {
    std::vector<double> out(20);
    const double lo = std::log10(1e-8), hi = std::log10(1e4);
    for (int i = 0; i < 20; ++i)
        out[i] = std::pow(10.0, lo + (hi - lo) * i / 19.0);
    return out;
}

/// GCV(lambda) = n * SSE / (n - tr H)^2 with H the smoothing hat matrix.
inline double gcv_objective(const DiscreteCurve& curve, const BasisSpec& spec, double penalty) {
    const Eigen::Index n = curve.grid.size();
    Eigen::MatrixXd B = eval_basis(spec, curve.grid);
    Eigen::MatrixXd G = B.transpose() * B;
    Eigen::MatrixXd A = G + penalty * penalty_matrix(spec);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    Eigen::VectorXd coef = ldlt.solve(B.transpose() * curve.values);
    const double sse = (curve.values - B * coef).squaredNorm();
    const double tr_h = ldlt.solve(G).trace();
    const double denom = static_cast<double>(n) - tr_h;
    return static_cast<double>(n) * sse / (denom * denom);
}

/// Minimizes GCV over the candidates; ties (and near-ties at the 1e-9 level,
/// which occur when SSE collapses to rounding noise) break toward the larger
/// penalty, i.e. the smoother fit.
inline double select_penalty_gcv(const DiscreteCurve& curve, const BasisSpec& spec,
                                 const std::vector<double>& candidates) {
    require(!candidates.empty(), "empty penalty candidate list");
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        require(candidates[i] > 0.0, "penalty candidates must be positive");
        if (i > 0) require(candidates[i] >= candidates[i - 1], "candidates must be sorted");
    }
    double best_pen = candidates[0];
    double best_gcv = gcv_objective(curve, spec, candidates[0]);
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        const double g = gcv_objective(curve, spec, candidates[i]);
        if (g <= best_gcv + 1e-9 * (1.0 + std::abs(best_gcv))) {
            best_gcv = std::min(best_gcv, g);
            best_pen = candidates[i];
        }
    }
    return best_pen;
}

/// Pointwise mean and standard-deviation curves estimated from a Phase I sample.
struct ScalingModel {
    std::vector<DiscreteCurve> mean_curves;   // one per functional variable
    std::vector<DiscreteCurve> scale_curves;  // strictly positive after flooring

    Eigen::Index n_variables() const { return static_cast<Eigen::Index>(mean_curves.size()); }
};

/// Pointwise standardization of one variable's sample: (x(t) - mean(t)) / scale(t)
/// with the scale floored at 1e-8 times its maximum (a degenerate all-constant
/// sample gets unit scale, so standardized values are exactly zero).
inline std::pair<CurveSample, ScalingModel> standardize_sample(const CurveSample& sample) {
    require(sample.n() >= 2, "standardization needs at least 2 observations");
    const Eigen::Index n = sample.n(), g = sample.grid.size();
    Eigen::VectorXd mean = sample.values.colwise().mean();
    Eigen::MatrixXd centered = sample.values.rowwise() - mean.transpose();
    Eigen::VectorXd var = centered.array().square().colwise().sum() / double(n - 1);
    Eigen::VectorXd scale = var.array().sqrt();
    const double max_scale = scale.maxCoeff();
    if (max_scale <= 0.0) {
        scale.setOnes();
    } else {
        const double floor = 1e-8 * max_scale;
        for (Eigen::Index j = 0; j < g; ++j) scale[j] = std::max(scale[j], floor);
    }
    Eigen::MatrixXd std_vals = centered.array().rowwise() / scale.transpose().array();
    ScalingModel model;
    model.mean_curves.emplace_back(sample.grid, mean);
    model.scale_curves.emplace_back(sample.grid, scale);
    return {CurveSample(sample.grid, std::move(std_vals)), model};
}

/// Standardizes a new curve with Phase I estimates only.
inline DiscreteCurve apply_scaling(const ScalingModel& model, const DiscreteCurve& curve,
                                   Eigen::Index variable_index = 0) {
    require(variable_index >= 0 && variable_index < model.n_variables(),
            "variable index out of range");
    const DiscreteCurve& mu = model.mean_curves[variable_index];
    const DiscreteCurve& sc = model.scale_curves[variable_index];
    require(curve.grid == mu.grid, "apply_scaling grid mismatch");
    Eigen::VectorXd v =
        (curve.values - mu.values).array() / sc.values.array();
    return DiscreteCurve(curve.grid, std::move(v));
}

inline DiscreteCurve invert_scaling(const ScalingModel& model, const DiscreteCurve& curve,
                                    Eigen::Index variable_index = 0) {
    require(variable_index >= 0 && variable_index < model.n_variables(),
            "variable index out of range");
    const DiscreteCurve& mu = model.mean_curves[variable_index];
    const DiscreteCurve& sc = model.scale_curves[variable_index];
    require(curve.grid == mu.grid, "invert_scaling grid mismatch");
    Eigen::VectorXd v = curve.values.array() * sc.values.array() + mu.values.array();
    return DiscreteCurve(curve.grid, std::move(v));
}

/// Row-wise standardization with a fitted model (sample version of apply_scaling).
inline CurveSample apply_scaling_sample(const ScalingModel& model, const CurveSample& sample,
                                        Eigen::Index variable_index = 0) {
    require(variable_index >= 0 && variable_index < model.n_variables(),
            "variable index out of range");
    const DiscreteCurve& mu = model.mean_curves[variable_index];
    const DiscreteCurve& sc = model.scale_curves[variable_index];
    require(sample.grid == mu.grid, "apply_scaling grid mismatch");
    Eigen::MatrixXd v = (sample.values.rowwise() - mu.values.transpose()).array().rowwise() /
                        sc.values.transpose().array();
    return CurveSample(sample.grid, std::move(v));
}

}  // namespace fmrcc

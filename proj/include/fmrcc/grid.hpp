#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "fmrcc/errors.hpp"

namespace fmrcc {

/// Common abscissae for functional observations. Strictly increasing, at least
/// 4 points, finite. Carries the trapezoidal quadrature weights for the grid.
class Grid {
public:
    Grid() = default;

    explicit Grid(Eigen::VectorXd points) : points_(std::move(points)) {
        require(points_.size() >= 4, "grid needs at least 4 points");
        for (Eigen::Index i = 0; i < points_.size(); ++i)
            require(std::isfinite(points_[i]), "grid points must be finite");
        for (Eigen::Index i = 1; i < points_.size(); ++i)
            require(points_[i] > points_[i - 1], "grid points must be strictly increasing");
        weights_.resize(points_.size());
        const Eigen::Index n = points_.size();
        weights_[0] = (points_[1] - points_[0]) / 2.0;
        for (Eigen::Index i = 1; i + 1 < n; ++i)
            weights_[i] = (points_[i + 1] - points_[i - 1]) / 2.0;
        weights_[n - 1] = (points_[n - 1] - points_[n - 2]) / 2.0;
    }

    static Grid uniform(double a, double b, Eigen::Index n) {
        require(n >= 4 && b > a, "uniform grid needs n >= 4 and b > a");
        return Grid(Eigen::VectorXd::LinSpaced(n, a, b));
    }

    const Eigen::VectorXd& points() const { return points_; }
    const Eigen::VectorXd& weights() const { return weights_; }
    Eigen::Index size() const { return points_.size(); }
    double a() const { return points_[0]; }
    double b() const { return points_[points_.size() - 1]; }

    bool operator==(const Grid& o) const {
        return points_.size() == o.points_.size() && points_ == o.points_;
    }
    bool operator!=(const Grid& o) const { return !(*this == o); }

private:
    Eigen::VectorXd points_;
    Eigen::VectorXd weights_;
};

/// One functional observation sampled on a grid.
struct DiscreteCurve {
    Grid grid;
    Eigen::VectorXd values;

    DiscreteCurve() = default;
    DiscreteCurve(Grid g, Eigen::VectorXd v) : grid(std::move(g)), values(std::move(v)) {
        require(values.size() == grid.size(), "curve length must match grid");
        for (Eigen::Index i = 0; i < values.size(); ++i)
            require(std::isfinite(values[i]), "curve values must be finite");
    }
};

/// A sample of curves on a shared grid; rows are observations.
struct CurveSample {
    Grid grid;
    Eigen::MatrixXd values;  // n x |grid|

    CurveSample() = default;
    CurveSample(Grid g, Eigen::MatrixXd v) : grid(std::move(g)), values(std::move(v)) {
        require(values.cols() == grid.size(), "sample columns must match grid");
    }

    Eigen::Index n() const { return values.rows(); }
    DiscreteCurve row(Eigen::Index i) const { return DiscreteCurve(grid, values.row(i).transpose()); }
};

/// Trapezoidal inner product of two curves on a common grid.
inline double inner_product(const DiscreteCurve& f, const DiscreteCurve& g) {
    require(f.grid == g.grid, "inner_product needs a common grid");
    return (f.values.array() * g.values.array() * f.grid.weights().array()).sum();
}

inline double l2_norm_sq(const DiscreteCurve& f) { return inner_product(f, f); }

}  // namespace fmrcc

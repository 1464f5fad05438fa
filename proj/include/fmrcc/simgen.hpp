#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fmrcc/curves.hpp"
#include "fmrcc/errors.hpp"
#include "fmrcc/grid.hpp"
#include "fmrcc/rng.hpp"

namespace fmrcc {

struct SimConfig {
    double delta1 = 1.0;  // cluster dissimilarity in [0, 1]
    double delta2 = 1.0;  // 0 = intercept-only, 1 = slope-only
    int n_train = 100;    // per cluster
    int n_tune = 250;     // per cluster
    int n_test = 500;     // OC phase, all from cluster 1
    std::string shift_type = "linear";
    double severity = 0.0;
    int grid_size = 500;
    std::uint64_t seed = 0;
    double snr = 10.0;
};

struct KernelEigensystem {
    Grid grid;
    double rho = 1.0;
    double nu = 0.5;
    Eigen::VectorXd eigenvalues;     // L*, nonincreasing, rescaled to the kernel trace
    Eigen::MatrixXd eigenfunctions;  // grid_size x L*, orthonormal under quadrature
};

struct ClusterCoefficients {
    std::vector<Eigen::VectorXd> intercepts;  // 3 curves on the grid
    std::vector<Eigen::MatrixXd> surfaces;    // 3 surfaces, (s index) x (t index)
};

struct GeneratedDataset {
    CurveSample x;
    CurveSample y;
    std::vector<int> labels;  // 1..3
    std::string phase;        // "train" | "tune" | "test"
    std::string shift_type;   // "none" when severity == 0
    double severity = 0.0;
};

struct DatasetTriple {
    GeneratedDataset train;
    GeneratedDataset tune;
    GeneratedDataset test;
};

/// Nystrom eigensystem of the powered-exponential kernel exp(-(|s-t|/rho)^nu).
/// The truncated spectrum is rescaled so its sum matches the kernel trace
/// integral (= domain length), compensating the mass lost to truncation.
inline KernelEigensystem kernel_eigen(const Grid& grid, double rho = 1.0, double nu = 0.5,
                                      int n_components = 50) {
    require(rho > 0.0, "rho must be positive");
    require(nu > 0.0 && nu <= 2.0, "nu must lie in (0, 2]");
    const Eigen::Index g = grid.size();
    require(n_components >= 1 && n_components <= g, "bad component count");

    Eigen::MatrixXd K(g, g);
    for (Eigen::Index i = 0; i < g; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) {
            double v = std::exp(-std::pow(std::abs(grid.points()[i] - grid.points()[j]) / rho, nu));
            K(i, j) = v;
            K(j, i) = v;
        }
    Eigen::VectorXd sqw = grid.weights().array().sqrt();
    Eigen::MatrixXd A = sqw.asDiagonal() * K * sqw.asDiagonal();
    A = ((A + A.transpose()) / 2.0).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(A);
    require(eig.info() == Eigen::Success, "kernel eigendecomposition failed");

    KernelEigensystem out;
    out.grid = grid;
    out.rho = rho;
    out.nu = nu;
    out.eigenvalues.resize(n_components);
    out.eigenfunctions.resize(g, n_components);
    for (int l = 0; l < n_components; ++l) {
        out.eigenvalues[l] = std::max(eig.eigenvalues()[g - 1 - l], 0.0);
        Eigen::VectorXd psi = eig.eigenvectors().col(g - 1 - l).array() / sqw.array();
        Eigen::Index arg = 0;
        psi.array().abs().maxCoeff(&arg);
        if (psi[arg] < 0.0) psi = -psi;
        out.eigenfunctions.col(l) = psi;
    }
    const double trace = grid.weights().sum();  // integral of K(t,t) = 1
    const double mass = out.eigenvalues.sum();
    if (mass > 0.0) out.eigenvalues *= trace / mass;
    return out;
}

/// n covariate curves X_i = sum_l xi_l psi_l, xi_l ~ N(0, lambda_l), one RNG
/// stream per observation so parallel and sequential generation agree.
inline CurveSample gen_covariates(const KernelEigensystem& eigen, int n, std::uint64_t seed) {
    require(n >= 1, "need at least one observation");
    const int L = static_cast<int>(eigen.eigenvalues.size());
    Eigen::VectorXd root = eigen.eigenvalues.array().sqrt();
    Eigen::MatrixXd values(n, eigen.grid.size());
    for (int i = 0; i < n; ++i) {
        Rng rng(mix(seed, std::uint64_t(i)));
        Eigen::VectorXd xi(L);
        for (int l = 0; l < L; ++l) xi[l] = root[l] * rng.normal();
        values.row(i) = (eigen.eigenfunctions * xi).transpose();
    }
    return CurveSample(eigen.grid, std::move(values));
}

/// Reference coefficient surfaces, one parameter row per cluster.
inline double beta_star(int k, double s, double t) {
    require(k >= 1 && k <= 3, "cluster index must be 1..3");
    static const double table[3][5] = {
        // a      b      c      d      e
        {0.3, 0.3, 0.3, 0.3, 5.0},
        {0.2, 0.15, 0.9, 0.9, -5.0},
        {0.9, 0.9, -0.3, -0.3, 5.0},
    };
    const double* p = table[k - 1];
    const double a = p[0], b = p[1], c = p[2], d = p[3], e = p[4];
    return std::pow((t - 0.5) / c, 3.0) + std::pow((s - 0.5) / d, 3.0) +
           std::pow((t - 0.5) / b, 2.0) - std::pow((s - 0.5) / a, 2.0) + e;
}

inline double intercept_warp(int k, double t, double t_min, double t_max) {
    static const double m[3] = {0.15, 0.4, 0.08};
    return (t - t_min) / (t_max - t_min) * (m[k - 1] - 0.0045) + 0.0045;
}

/// Reference intercepts shaped like a resistance curve.
inline double intercept_star(int k, double t, double t_min = 0.0, double t_max = 1.0) {
    require(k >= 1 && k <= 3, "cluster index must be 1..3");
    static const double table[3][3] = {
        // f       g       h
        {0.2074, 0.8217, 26.15},
        {0.187, 0.2, 27.0},
        {0.3, 4.0, 24.0},
    };
    const double f = table[k - 1][0], g = table[k - 1][1], h = table[k - 1][2];
    const double u = intercept_warp(k, t, t_min, t_max);
    return f + 0.3117 * std::exp(-371.4 * u) + 0.5284 * (1.0 - std::exp(g * u)) -
           423.3 * (1.0 + std::tanh(-h * u + 0.1715));
}

/// Cluster coefficients at dissimilarity delta1: cluster 1 keeps the reference
/// functions, clusters 2 and 3 interpolate between cluster 1's and their own.
inline ClusterCoefficients mix_coefficients(const Grid& grid, double delta1) {
    require(delta1 >= 0.0 && delta1 <= 1.0, "delta1 must lie in [0, 1]");
    const Eigen::Index g = grid.size();
    const double t_min = grid.points()[0], t_max = grid.points()[g - 1];
    ClusterCoefficients out;
    out.intercepts.resize(3);
    out.surfaces.resize(3);
    for (int k = 1; k <= 3; ++k) {
        Eigen::VectorXd b0(g);
        Eigen::MatrixXd beta(g, g);
        for (Eigen::Index it = 0; it < g; ++it) {
            const double t = grid.points()[it];
            const double ref0 = intercept_star(1, t, t_min, t_max);
            b0[it] = (k == 1) ? ref0
                              : (1.0 - delta1) * ref0 + delta1 * intercept_star(k, t, t_min, t_max);
            for (Eigen::Index is = 0; is < g; ++is) {
                const double s = grid.points()[is];
                const double ref = beta_star(1, s, t);
                beta(is, it) =
                    (k == 1) ? ref : (1.0 - delta1) * ref + delta1 * beta_star(k, s, t);
            }
        }
        out.intercepts[k - 1] = std::move(b0);
        out.surfaces[k - 1] = std::move(beta);
    }
    return out;
}

/// Additive Phase II mean shift on the response.
inline Eigen::VectorXd gen_shift(const std::string& shift_type, double severity,
                                 const Grid& grid) {
    require(severity >= 0.0, "severity must be nonnegative");
    Eigen::VectorXd d(grid.size());
    if (shift_type == "linear") {
        d = (severity * 1.2) * grid.points();
    } else if (shift_type == "quadratic") {
        d = (severity * 1.6) * grid.points().array().square().matrix();
    } else {
        throw ArgumentError("unknown shift type: " + shift_type);
    }
    return d;
}

/// Noise curves e(t) = c * sum_{i=1..20} e_i B_i(t) over evenly knotted cubic
/// B-splines, with c fixed so Var(signal)/Var(noise) averaged over the grid
/// equals target_snr. The signal sample is the matrix of conditional means.
inline Eigen::MatrixXd gen_noise(const Grid& grid, int n, double target_snr,
                                 const Eigen::MatrixXd& signal_sample, std::uint64_t seed) {
    require(target_snr > 0.0, "target SNR must be positive");
    const Eigen::Index g = grid.size();
    require(signal_sample.cols() == g, "signal sample does not match the grid");

    const double sig_mean = signal_sample.mean();
    const double sig_var =
        (signal_sample.array() - sig_mean).square().sum() / double(signal_sample.size());
    require(sig_var > 0.0, "signal sample has zero variance");

    BasisSpec spec(20, 3, grid.points()[0], grid.points()[g - 1]);
    Eigen::MatrixXd B = eval_basis(spec, grid);  // g x 20
    const double mean_basis_var = B.array().square().rowwise().sum().mean();
    const double c = std::sqrt(sig_var / (target_snr * mean_basis_var));

    Eigen::MatrixXd noise(n, g);
    for (int i = 0; i < n; ++i) {
        Rng rng(mix(seed, std::uint64_t(i)));
        Eigen::VectorXd e(20);
        for (int j = 0; j < 20; ++j) e[j] = rng.normal();
        noise.row(i) = c * (B * e).transpose();
    }
    return noise;
}

namespace detail {

inline GeneratedDataset gen_phase(const KernelEigensystem& eigen,
                                  const ClusterCoefficients& coef, const SimConfig& config,
                                  const std::string& phase, int n_per_cluster, int n_clusters,
                                  std::uint64_t phase_seed, double noise_scale,
                                  const Eigen::MatrixXd& noise_basis) {
    const Grid& grid = eigen.grid;
    const Eigen::Index g = grid.size();
    const int n = n_per_cluster * n_clusters;
    const int L = static_cast<int>(eigen.eigenvalues.size());
    Eigen::VectorXd root = eigen.eigenvalues.array().sqrt();

    GeneratedDataset out;
    out.phase = phase;
    out.severity = (phase == "test") ? config.severity : 0.0;
    out.shift_type = (out.severity > 0.0) ? config.shift_type : "none";
    out.labels.resize(n);

    Eigen::MatrixXd x(n, g), y(n, g);
    Eigen::VectorXd shift = Eigen::VectorXd::Zero(g);
    if (out.severity > 0.0) shift = gen_shift(config.shift_type, config.severity, grid);

    for (int i = 0; i < n; ++i) {
        const int cluster = (n_clusters == 1) ? 1 : (i / n_per_cluster) + 1;
        out.labels[i] = cluster;
        const std::uint64_t obs_seed = mix(phase_seed, std::uint64_t(i));

        Rng cov_rng(mix(obs_seed, 1));
        Eigen::VectorXd xi(L);
        for (int l = 0; l < L; ++l) xi[l] = root[l] * cov_rng.normal();
        Eigen::VectorXd xrow = eigen.eigenfunctions * xi;
        x.row(i) = xrow.transpose();

        Eigen::VectorXd weighted = xrow.array() * grid.weights().array();
        Eigen::VectorXd mean = (1.0 - config.delta2) * coef.intercepts[cluster - 1] +
                               config.delta2 * (coef.surfaces[cluster - 1].transpose() * weighted);

        Rng noise_rng(mix(obs_seed, 2));
        Eigen::VectorXd e(noise_basis.cols());
        for (Eigen::Index j = 0; j < e.size(); ++j) e[j] = noise_rng.normal();
        y.row(i) = (mean + shift + noise_scale * (noise_basis * e)).transpose();
    }
    out.x = CurveSample(grid, std::move(x));
    out.y = CurveSample(grid, std::move(y));
    return out;
}

// Conditional-mean rows of an IC phase, used only to fix the noise scale.
inline Eigen::MatrixXd conditional_means(const KernelEigensystem& eigen,
                                         const ClusterCoefficients& coef, const SimConfig& config,
                                         int n_per_cluster, std::uint64_t phase_seed) {
    const Grid& grid = eigen.grid;
    const int n = n_per_cluster * 3;
    const int L = static_cast<int>(eigen.eigenvalues.size());
    Eigen::VectorXd root = eigen.eigenvalues.array().sqrt();
    Eigen::MatrixXd means(n, grid.size());
    for (int i = 0; i < n; ++i) {
        const int cluster = (i / n_per_cluster) + 1;
        Rng cov_rng(mix(mix(phase_seed, std::uint64_t(i)), 1));
        Eigen::VectorXd xi(L);
        for (int l = 0; l < L; ++l) xi[l] = root[l] * cov_rng.normal();
        Eigen::VectorXd xrow = eigen.eigenfunctions * xi;
        Eigen::VectorXd weighted = xrow.array() * grid.weights().array();
        means.row(i) = ((1.0 - config.delta2) * coef.intercepts[cluster - 1] +
                        config.delta2 * (coef.surfaces[cluster - 1].transpose() * weighted))
                           .transpose();
    }
    return means;
}

}  // namespace detail

/// Train/tune/test triple. Train and tune are stratified in-control blocks over
/// the three clusters; the test phase draws from cluster 1 only and carries the
/// configured shift. The noise scale is fixed once per dataset from the pooled
/// train+tune conditional means, so every phase shares one SNR calibration.
inline DatasetTriple gen_dataset(const SimConfig& config) {
    require(config.n_train > 0 && config.n_tune > 0 && config.n_test > 0, "phase sizes positive");
    require(config.delta2 >= 0.0 && config.delta2 <= 1.0, "delta2 must lie in [0, 1]");
    Grid grid = Grid::uniform(0.0, 1.0, config.grid_size);
    KernelEigensystem eigen = kernel_eigen(grid, 1.0, 0.5, 50);
    ClusterCoefficients coef = mix_coefficients(grid, config.delta1);

    const std::uint64_t train_seed = mix(config.seed, 1);
    const std::uint64_t tune_seed = mix(config.seed, 2);
    const std::uint64_t test_seed = mix(config.seed, 3);

    Eigen::MatrixXd signal(3 * (config.n_train + config.n_tune), grid.size());
    signal.topRows(3 * config.n_train) =
        detail::conditional_means(eigen, coef, config, config.n_train, train_seed);
    signal.bottomRows(3 * config.n_tune) =
        detail::conditional_means(eigen, coef, config, config.n_tune, tune_seed);
    const double sig_mean = signal.mean();
    const double sig_var = (signal.array() - sig_mean).square().sum() / double(signal.size());
    if (sig_var <= 0.0) throw DataError("degenerate generator: zero signal variance");

    BasisSpec noise_spec(20, 3, 0.0, 1.0);
    Eigen::MatrixXd noise_basis = eval_basis(noise_spec, grid);
    const double mean_basis_var = noise_basis.array().square().rowwise().sum().mean();
    const double noise_scale = std::sqrt(sig_var / (config.snr * mean_basis_var));

    DatasetTriple out;
    out.train = detail::gen_phase(eigen, coef, config, "train", config.n_train, 3, train_seed,
                                  noise_scale, noise_basis);
    out.tune = detail::gen_phase(eigen, coef, config, "tune", config.n_tune, 3, tune_seed,
                                 noise_scale, noise_basis);
    out.test = detail::gen_phase(eigen, coef, config, "test", config.n_test, 1, test_seed,
                                 noise_scale, noise_basis);
    return out;
}

}  // namespace fmrcc

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "fmrcc/errors.hpp"
#include "fmrcc/rng.hpp"

namespace fmrcc {

enum class CovParam {
    SphericalCommon,        // Sigma_k = lambda I
    SphericalPerComponent,  // Sigma_k = lambda_k I
    FullCommon,             // Sigma_k = Sigma
    FullPerComponent,       // Sigma_k free
};

inline const char* cov_param_tag(CovParam c) {
    switch (c) {
        case CovParam::SphericalCommon: return "spherical_common";
        case CovParam::SphericalPerComponent: return "spherical_per_component";
        case CovParam::FullCommon: return "full_common";
        default: return "full_per_component";
    }
}

inline CovParam cov_param_from_tag(const std::string& tag) {
    if (tag == "spherical_common") return CovParam::SphericalCommon;
    if (tag == "spherical_per_component") return CovParam::SphericalPerComponent;
    if (tag == "full_common") return CovParam::FullCommon;
    if (tag == "full_per_component") return CovParam::FullPerComponent;
    throw DataError("unknown covariance parameterization tag: " + tag);
}

// Free covariance parameters contributed by each tag.
inline int cov_param_count(CovParam c, int K, int M) {
    switch (c) {
        case CovParam::SphericalCommon: return 1;
        case CovParam::SphericalPerComponent: return K;
        case CovParam::FullCommon: return M * (M + 1) / 2;
        default: return K * M * (M + 1) / 2;
    }
}

inline int mixture_n_params(int K, int D, int M, CovParam c) {
    return (K - 1) + K * D * M + cov_param_count(c, K, M);
}

struct MixtureModel {
    int K = 0;
    Eigen::VectorXd pi;
    std::vector<Eigen::MatrixXd> B;      // D x M, intercept row included
    std::vector<Eigen::MatrixXd> Sigma;  // M x M
    CovParam cov = CovParam::FullPerComponent;
    double loglik = -std::numeric_limits<double>::infinity();
    int n_params = 0;
    double bic = std::numeric_limits<double>::infinity();
    int iterations = 0;
    std::uint64_t seed = 0;
    std::vector<double> loglik_path;  // one entry per EM iteration of the winning restart
};

struct EmOptions {
    int max_iter = 500;
    double rel_loglik_tol = 1e-8;
    int n_restarts = 5;
    std::uint64_t seed = 0;
    double covariance_floor_rel = 1e-8;  // times tr(Sigma_k)/M
    // A component whose covariance collapses below this fraction of the pooled
    // response scale produces an unbounded likelihood spike; such restarts are
    // discarded rather than allowed to win on loglik.
    double degenerate_rel = 1e-6;
};

namespace detail {

inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& s) {
    return 0.5 * (s + s.transpose());
}

inline Eigen::MatrixXd floor_spd(const Eigen::MatrixXd& s, double rel_floor, double abs_floor) {
    Eigen::MatrixXd sym = symmetrize(s);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    const double m = static_cast<double>(s.rows());
    double fl = std::max(rel_floor * es.eigenvalues().sum() / m, abs_floor);
    if (es.eigenvalues().minCoeff() >= fl) return sym;  // nothing to clamp
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(fl);
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// tr(cov(responses))/M, the scale used for absolute floors and degeneracy tests.
inline double pooled_response_scale(const Eigen::MatrixXd& responses) {
    const Eigen::Index n = responses.rows();
    if (n < 2) return 0.0;
    Eigen::MatrixXd c = responses.rowwise() - responses.colwise().mean();
    return c.squaredNorm() / double(n - 1) / double(responses.cols());
}

// Weighted multivariate least squares with a ridge guard on the Gram matrix.
inline Eigen::MatrixXd weighted_ls(const Eigen::MatrixXd& designs, const Eigen::MatrixXd& responses,
                                   const Eigen::VectorXd& w) {
    Eigen::MatrixXd xw = designs.array().colwise() * w.array();
    Eigen::MatrixXd gram = designs.transpose() * xw;
    const double ridge = 1e-10 * gram.trace() / double(gram.rows());
    gram.diagonal().array() += ridge;
    return gram.ldlt().solve(xw.transpose() * responses);
}

}  // namespace detail

inline std::vector<Eigen::MatrixXd> constrain_covariance(const std::vector<Eigen::MatrixXd>& raw,
                                                         const Eigen::VectorXd& masses,
                                                         CovParam cov, double rel_floor = 1e-8,
                                                         double abs_floor = 0.0) {
    const int K = static_cast<int>(raw.size());
    require(K >= 1 && masses.size() == K, "constrain_covariance size mismatch");
    const Eigen::Index M = raw[0].rows();
    const double total = masses.sum();
    std::vector<Eigen::MatrixXd> out(K);
    switch (cov) {
        case CovParam::FullPerComponent:
            for (int k = 0; k < K; ++k) out[k] = detail::floor_spd(raw[k], rel_floor, abs_floor);
            break;
        case CovParam::FullCommon: {
            Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(M, M);
            for (int k = 0; k < K; ++k) pooled += (masses[k] / total) * raw[k];
            pooled = detail::floor_spd(pooled, rel_floor, abs_floor);
            for (int k = 0; k < K; ++k) out[k] = pooled;
            break;
        }
        case CovParam::SphericalPerComponent:
            for (int k = 0; k < K; ++k) {
                double lam = raw[k].trace() / double(M);
                lam = std::max(lam, std::max(rel_floor * lam, abs_floor));
                out[k] = lam * Eigen::MatrixXd::Identity(M, M);
            }
            break;
        case CovParam::SphericalCommon: {
            double lam = 0.0;
            for (int k = 0; k < K; ++k) lam += (masses[k] / total) * raw[k].trace() / double(M);
            lam = std::max(lam, std::max(rel_floor * lam, abs_floor));
            for (int k = 0; k < K; ++k) out[k] = lam * Eigen::MatrixXd::Identity(M, M);
            break;
        }
    }
    return out;
}

namespace detail {

/// k-means++ seeding followed by Lloyd iterations (50 max); empty clusters are
/// reseeded from the point farthest from its centroid.
inline std::vector<int> kmeans_partition(const Eigen::MatrixXd& points, int K,
                                         std::uint64_t seed) {
    const Eigen::Index N = points.rows();
    Rng rng(seed);
    std::vector<Eigen::Index> centers;
    centers.push_back(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(N))));
    Eigen::VectorXd d2 =
        (points.rowwise() - points.row(centers[0])).rowwise().squaredNorm();
    while (static_cast<int>(centers.size()) < K) {
        double total = d2.sum();
        Eigen::Index pick = 0;
        if (total > 0.0) {
            double u = rng.uniform() * total, acc = 0.0;
            for (Eigen::Index i = 0; i < N; ++i) {
                acc += d2[i];
                if (u < acc) { pick = i; break; }
                pick = i;
            }
        } else {
            pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(N)));
        }
        centers.push_back(pick);
        Eigen::VectorXd nd = (points.rowwise() - points.row(pick)).rowwise().squaredNorm();
        d2 = d2.cwiseMin(nd);
    }

    Eigen::MatrixXd centroids(K, points.cols());
    for (int k = 0; k < K; ++k) centroids.row(k) = points.row(centers[k]);

    std::vector<int> assign(N, 0);
    for (int iter = 0; iter < 50; ++iter) {
        bool changed = false;
        Eigen::VectorXd near_d2(N);
        for (Eigen::Index i = 0; i < N; ++i) {
            int best = 0;
            double bd = (points.row(i) - centroids.row(0)).squaredNorm();
            for (int k = 1; k < K; ++k) {
                double d = (points.row(i) - centroids.row(k)).squaredNorm();
                if (d < bd) { bd = d; best = k; }
            }
            near_d2[i] = bd;
            if (assign[i] != best) { assign[i] = best; changed = true; }
        }
        Eigen::VectorXd counts = Eigen::VectorXd::Zero(K);
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(K, points.cols());
        for (Eigen::Index i = 0; i < N; ++i) {
            counts[assign[i]] += 1.0;
            sums.row(assign[i]) += points.row(i);
        }
        for (int k = 0; k < K; ++k) {
            if (counts[k] > 0.0) {
                centroids.row(k) = sums.row(k) / counts[k];
            } else {
                Eigen::Index far;
                near_d2.maxCoeff(&far);
                centroids.row(k) = points.row(far);
                assign[far] = k;
                near_d2[far] = 0.0;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;
    }
    return assign;
}

/// Per-cluster least squares + residual covariance from a hard partition.
inline MixtureModel init_from_partition(const Eigen::MatrixXd& designs,
                                        const Eigen::MatrixXd& responses,
                                        const std::vector<int>& assign, int K,
                                        const EmOptions& options) {
    const Eigen::Index N = designs.rows(), M = responses.cols();
    MixtureModel model;
    model.K = K;
    model.cov = CovParam::FullPerComponent;
    model.pi = Eigen::VectorXd::Zero(K);
    model.B.resize(K);
    model.Sigma.resize(K);
    Eigen::VectorXd masses = Eigen::VectorXd::Zero(K);
    const double abs_floor = 1e-12 * std::max(detail::pooled_response_scale(responses), 0.0);
    std::vector<Eigen::MatrixXd> raw(K);
    for (int k = 0; k < K; ++k) {
        Eigen::VectorXd w = Eigen::VectorXd::Zero(N);
        for (Eigen::Index i = 0; i < N; ++i)
            if (assign[i] == k) w[i] = 1.0;
        masses[k] = w.sum();
        model.pi[k] = masses[k] / double(N);
        model.B[k] = detail::weighted_ls(designs, responses, w);
        Eigen::MatrixXd resid = responses - designs * model.B[k];
        Eigen::MatrixXd s = Eigen::MatrixXd::Zero(M, M);
        for (Eigen::Index i = 0; i < N; ++i)
            if (w[i] > 0.0) s += resid.row(i).transpose() * resid.row(i);
        raw[k] = s / std::max(masses[k], 1.0);
    }
    model.Sigma = constrain_covariance(raw, masses, model.cov, options.covariance_floor_rel,
                                       std::max(abs_floor, 1e-300));
    model.seed = options.seed;
    return model;
}

}  // namespace detail

inline MixtureModel kmeans_init(const Eigen::MatrixXd& designs, const Eigen::MatrixXd& responses,
                                int K, const EmOptions& options) {
    const Eigen::Index N = designs.rows(), D = designs.cols(), M = responses.cols();
    require(K >= 1 && N >= K, "kmeans_init needs at least K observations");
    require(responses.rows() == N, "designs/responses row mismatch");

    Eigen::MatrixXd joint(N, D + M);
    joint << designs, responses;
    std::vector<int> assign =
        detail::kmeans_partition(joint, K, mix(options.seed, 0x6b6d65616e73ULL));
    return detail::init_from_partition(designs, responses, assign, K, options);
}

struct EStepResult {
    Eigen::MatrixXd tau;  // N x K
    double loglik = 0.0;
};

inline EStepResult e_step(const MixtureModel& model, const Eigen::MatrixXd& designs,
                          const Eigen::MatrixXd& responses) {
    const Eigen::Index N = designs.rows(), M = responses.cols();
    const int K = model.K;
    std::vector<Eigen::LLT<Eigen::MatrixXd>> chol(K);
    Eigen::VectorXd log_norm(K);
    for (int k = 0; k < K; ++k) {
        chol[k].compute(model.Sigma[k]);
        if (chol[k].info() != Eigen::Success)
            throw NumericError("component covariance not positive definite (component " +
                               std::to_string(k) + ")");
        double log_det = 2.0 * chol[k].matrixLLT().diagonal().array().log().sum();
        log_norm[k] = -0.5 * double(M) * std::log(2.0 * M_PI) - 0.5 * log_det +
                      std::log(model.pi[k]);
    }
    EStepResult out;
    out.tau.resize(N, K);
    Eigen::VectorXd lw(K);
    for (Eigen::Index i = 0; i < N; ++i) {
        for (int k = 0; k < K; ++k) {
            Eigen::VectorXd r =
                responses.row(i).transpose() - model.B[k].transpose() * designs.row(i).transpose();
            double q = chol[k].matrixL().solve(r).squaredNorm();
            lw[k] = log_norm[k] - 0.5 * q;
            if (!std::isfinite(lw[k]))
                throw NumericError("non-finite mixture density (component " + std::to_string(k) +
                                   ")");
        }
        double m = lw.maxCoeff();
        Eigen::VectorXd e = (lw.array() - m).exp();
        double s = e.sum();
        out.tau.row(i) = (e / s).transpose();
        out.loglik += m + std::log(s);
    }
    return out;
}

inline MixtureModel m_step(const Eigen::MatrixXd& tau, const Eigen::MatrixXd& designs,
                           const Eigen::MatrixXd& responses, CovParam cov,
                           double covariance_floor_rel = 1e-8, double abs_floor = 0.0) {
    const Eigen::Index N = designs.rows(), M = responses.cols();
    const int K = static_cast<int>(tau.cols());
    Eigen::VectorXd masses = tau.colwise().sum();
    require(masses.minCoeff() > 0.0, "m_step needs positive component masses");

    MixtureModel model;
    model.K = K;
    model.cov = cov;
    model.pi = masses / double(N);
    model.B.resize(K);
    std::vector<Eigen::MatrixXd> raw(K);
    for (int k = 0; k < K; ++k) {
        Eigen::VectorXd w = tau.col(k);
        model.B[k] = detail::weighted_ls(designs, responses, w);
        Eigen::MatrixXd resid = responses - designs * model.B[k];
        Eigen::MatrixXd wr = resid.array().colwise() * w.array();
        raw[k] = (resid.transpose() * wr) / masses[k];
    }
    model.Sigma = constrain_covariance(raw, masses, cov, covariance_floor_rel, abs_floor);
    return model;
}

namespace detail {

struct RestartOutcome {
    bool ok = false;
    MixtureModel model;
};

inline RestartOutcome em_restart(const Eigen::MatrixXd& designs, const Eigen::MatrixXd& responses,
                                 int K, CovParam cov, const EmOptions& options,
                                 std::uint64_t restart_seed, double pooled_scale,
                                 bool response_only_init) {
    RestartOutcome out;
    EmOptions init_opts = options;
    init_opts.seed = restart_seed;
    const double abs_floor = std::max(1e-12 * pooled_scale, 1e-300);

    MixtureModel model;
    if (response_only_init) {
        // The covariate block is common across components and can drown the
        // response separation in the joint k-means metric, so alternate
        // restarts cluster on the response rows alone.
        std::vector<int> assign = kmeans_partition(
            responses, K, mix(restart_seed, 0x6b6d65616e73ULL));
        model = init_from_partition(designs, responses, assign, K, init_opts);
    } else {
        model = kmeans_init(designs, responses, K, init_opts);
    }
    model.cov = cov;
    model.Sigma = constrain_covariance(model.Sigma, model.pi * double(designs.rows()), cov,
                                       options.covariance_floor_rel, abs_floor);
    model.seed = restart_seed;

    double prev = -std::numeric_limits<double>::infinity();
    for (int iter = 1; iter <= options.max_iter; ++iter) {
        EStepResult es = e_step(model, designs, responses);
        if (es.tau.colwise().sum().minCoeff() < 1.0) return out;  // starved component
        MixtureModel next = m_step(es.tau, designs, responses, cov,
                                   options.covariance_floor_rel, abs_floor);
        next.seed = restart_seed;
        next.loglik_path = std::move(model.loglik_path);
        next.loglik_path.push_back(es.loglik);
        next.loglik = es.loglik;
        next.iterations = iter;
        model = std::move(next);
        if (std::abs(es.loglik - prev) / (std::abs(es.loglik) + 1.0) < options.rel_loglik_tol)
            break;
        prev = es.loglik;
    }
    for (int k = 0; k < K; ++k) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> se(symmetrize(model.Sigma[k]));
        if (se.eigenvalues().minCoeff() <= options.degenerate_rel * pooled_scale)
            return out;  // collapsed component: unbounded-likelihood spike
    }
    out.ok = true;
    out.model = std::move(model);
    return out;
}

}  // namespace detail

inline double bic(const MixtureModel& model, Eigen::Index N) {
    return -2.0 * model.loglik + double(model.n_params) * std::log(double(N));
}

inline MixtureModel em_fit(const Eigen::MatrixXd& designs, const Eigen::MatrixXd& responses, int K,
                           CovParam cov, const EmOptions& options = {}) {
    const Eigen::Index N = designs.rows(), D = designs.cols(), M = responses.cols();
    require(K >= 1, "K must be positive");
    require(N > D, "em_fit needs more observations than design columns");
    const double pooled_scale = detail::pooled_response_scale(responses);
    if (pooled_scale <= 0.0) throw DataError("responses have no variance");

    MixtureModel best;
    bool have = false;
    for (int r = 0; r < options.n_restarts; ++r) {
        detail::RestartOutcome res = detail::em_restart(
            designs, responses, K, cov, options, mix(options.seed, std::uint64_t(r)),
            pooled_scale, /*response_only_init=*/(K > 1 && r % 2 == 1));
        if (!res.ok) continue;
        if (!have || res.model.loglik > best.loglik) {
            best = std::move(res.model);
            have = true;
        }
    }
    if (!have)
        throw FitError("all EM restarts failed (K=" + std::to_string(K) + ", " +
                       cov_param_tag(cov) + ")");
    best.n_params = mixture_n_params(K, int(D), int(M), cov);
    best.bic = bic(best, N);
    return best;
}

inline MixtureModel select_model(const Eigen::MatrixXd& designs, const Eigen::MatrixXd& responses,
                                 const std::vector<int>& K_range,
                                 const std::vector<CovParam>& cov_set,
                                 const EmOptions& options = {}) {
    require(!K_range.empty() && !cov_set.empty(), "select_model needs nonempty candidate sets");
    MixtureModel best;
    bool have = false;
    const Eigen::Index M = responses.cols();
    for (int K : K_range) {
        for (CovParam cov : cov_set) {
            MixtureModel m;
            try {
                m = em_fit(designs, responses, K, cov, options);
            } catch (const FitError&) {
                continue;
            }
            if (!have) {
                best = std::move(m);
                have = true;
                continue;
            }
            bool better = m.bic < best.bic;
            if (m.bic == best.bic) {
                better = m.K < best.K ||
                         (m.K == best.K && cov_param_count(m.cov, m.K, int(M)) <
                                               cov_param_count(best.cov, best.K, int(M)));
            }
            if (better) best = std::move(m);
        }
    }
    if (!have) throw FitError("every (K, parameterization) candidate failed");
    return best;
}

inline std::vector<int> map_labels(const Eigen::MatrixXd& tau) {
    std::vector<int> labels(tau.rows());
    for (Eigen::Index i = 0; i < tau.rows(); ++i) {
        Eigen::Index k;
        tau.row(i).maxCoeff(&k);
        labels[i] = static_cast<int>(k);
    }
    return labels;
}

}  // namespace fmrcc

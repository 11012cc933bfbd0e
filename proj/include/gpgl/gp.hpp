#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <utility>

#include "gpgl/errors.hpp"

namespace gpgl {

// RBF kernel and factorization settings. length_scale defaults to the
// 10-class profile value; noise_variance keeps the factorization robust
// when anchors nearly coincide.
struct KernelConfig {
    double length_scale = 200.0;
    double noise_variance = 0.01;
    double jitter_start = 1e-10;
    double jitter_max = 1e-4;

    void validate() const {
        if (!(length_scale > 0.0))
            throw ConfigError("KernelConfig: length_scale must be > 0, got " +
                              std::to_string(length_scale));
        if (!(noise_variance >= 0.0))
            throw ConfigError("KernelConfig: noise_variance must be >= 0, got " +
                              std::to_string(noise_variance));
        if (!(jitter_start > 0.0) || !(jitter_start <= jitter_max))
            throw ConfigError("KernelConfig: need 0 < jitter_start <= jitter_max");
    }
};

// exp(-r^2 / (2 l^2)) with r^2 the squared Euclidean distance. Always in (0, 1].
inline double rbf_kernel(const Eigen::Ref<const Eigen::VectorXd>& a,
                         const Eigen::Ref<const Eigen::VectorXd>& b,
                         const KernelConfig& config) {
    if (a.size() != b.size())
        throw ShapeError("rbf_kernel: dimension mismatch " + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()));
    const double r2 = (a - b).squaredNorm();
    return std::exp(-r2 / (2.0 * config.length_scale * config.length_scale));
}

// Symmetric kernel matrix with an exactly-unit diagonal; entries mirrored
// so K(i, j) and K(j, i) are the same double.
inline Eigen::MatrixXd kernel_matrix(const Eigen::Ref<const Eigen::MatrixXd>& H,
                                     const KernelConfig& config) {
    const long n = H.rows();
    if (n < 1) throw ShapeError("kernel_matrix: empty input");
    Eigen::MatrixXd K(n, n);
    for (long i = 0; i < n; ++i) {
        K(i, i) = 1.0;
        for (long j = i + 1; j < n; ++j) {
            const double k = rbf_kernel(H.row(i).transpose(), H.row(j).transpose(), config);
            K(i, j) = k;
            K(j, i) = k;
        }
    }
    return K;
}

struct CholeskyResult {
    Eigen::MatrixXd factor;  // lower triangular
    double applied_jitter = 0.0;
};

// Factors K + noise*I, escalating diagonal jitter by x10 from jitter_start
// only when plain factorization fails. Throws past jitter_max.
inline CholeskyResult cholesky_with_jitter(const Eigen::Ref<const Eigen::MatrixXd>& K,
                                           double noise_variance, double jitter_start,
                                           double jitter_max) {
    const long n = K.rows();
    if (K.cols() != n) throw ShapeError("cholesky_with_jitter: matrix not square");

    Eigen::MatrixXd M = K;
    M.diagonal().array() += noise_variance;

    double jitter = 0.0;
    while (true) {
        Eigen::MatrixXd trial = M;
        if (jitter > 0.0) trial.diagonal().array() += jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(trial);
        if (llt.info() == Eigen::Success)
            return {Eigen::MatrixXd(llt.matrixL()), jitter};
        if (jitter == 0.0) {
            jitter = jitter_start;
        } else if (jitter * 10.0 <= jitter_max) {
            jitter *= 10.0;
        } else {
            throw NumericError("cholesky_with_jitter: " + std::to_string(n) + "x" +
                               std::to_string(n) +
                               " matrix not positive definite up to jitter " +
                               std::to_string(jitter_max));
        }
    }
}

struct Posterior {
    Eigen::VectorXd mean;  // raw per-class scores, pre-normalization
    double variance = 0.0; // scalar in [0, 1]
};

// Frozen per-epoch GP state: anchor features/labels with the Cholesky
// factor of K(H_A, H_A) + noise*I (+ jitter). Immutable after build;
// posterior queries are pure reads.
class GpSnapshot {
  public:
    static GpSnapshot build(Eigen::MatrixXd anchor_features, Eigen::MatrixXd anchor_labels,
                            const KernelConfig& config) {
        config.validate();
        if (anchor_features.rows() != anchor_labels.rows())
            throw ShapeError("GpSnapshot: " + std::to_string(anchor_features.rows()) +
                             " feature rows vs " + std::to_string(anchor_labels.rows()) +
                             " label rows");
        if (anchor_features.rows() < 1) throw ShapeError("GpSnapshot: no anchors");
        for (long i = 0; i < anchor_labels.rows(); ++i) {
            long nonzero = 0;
            double sum = 0.0;
            for (long j = 0; j < anchor_labels.cols(); ++j) {
                if (anchor_labels(i, j) != 0.0) ++nonzero;
                sum += anchor_labels(i, j);
            }
            if (nonzero != 1 || sum != 1.0)
                throw DomainError("GpSnapshot: anchor label row " + std::to_string(i) +
                                  " is not one-hot");
        }

        GpSnapshot snap;
        snap.features_ = std::move(anchor_features);
        snap.labels_ = std::move(anchor_labels);
        snap.config_ = config;
        const Eigen::MatrixXd K = kernel_matrix(snap.features_, config);
        auto chol = cholesky_with_jitter(K, config.noise_variance, config.jitter_start,
                                         config.jitter_max);
        snap.factor_ = std::move(chol.factor);
        snap.jitter_ = chol.applied_jitter;
        // (K + noise I)^{-1} Y_A, shared by every mean-gradient query
        snap.alpha_ = snap.factor_.triangularView<Eigen::Lower>().solve(snap.labels_);
        snap.factor_.triangularView<Eigen::Lower>().transpose().solveInPlace(snap.alpha_);
        return snap;
    }

    [[nodiscard]] long anchor_count() const { return features_.rows(); }
    [[nodiscard]] long feature_dim() const { return features_.cols(); }
    [[nodiscard]] long class_count() const { return labels_.cols(); }
    [[nodiscard]] const Eigen::MatrixXd& anchor_features() const { return features_; }
    [[nodiscard]] const Eigen::MatrixXd& anchor_labels() const { return labels_; }
    [[nodiscard]] const Eigen::MatrixXd& cholesky_factor() const { return factor_; }
    [[nodiscard]] const Eigen::MatrixXd& alpha() const { return alpha_; }
    [[nodiscard]] const KernelConfig& config() const { return config_; }
    [[nodiscard]] double applied_jitter() const { return jitter_; }

    [[nodiscard]] Eigen::VectorXd kernel_vector(const Eigen::Ref<const Eigen::VectorXd>& h) const {
        if (h.size() != features_.cols())
            throw ShapeError("GpSnapshot: query dim " + std::to_string(h.size()) +
                             " vs anchor dim " + std::to_string(features_.cols()));
        Eigen::VectorXd k(features_.rows());
        for (long i = 0; i < features_.rows(); ++i)
            k(i) = rbf_kernel(features_.row(i).transpose(), h, config_);
        return k;
    }

  private:
    Eigen::MatrixXd features_;  // |A| x d
    Eigen::MatrixXd labels_;    // |A| x C, one-hot rows
    Eigen::MatrixXd factor_;    // lower triangular
    Eigen::MatrixXd alpha_;     // |A| x C
    KernelConfig config_;
    double jitter_ = 0.0;
};

// Posterior mean and variance at a query feature, via two triangular
// solves against the stored factor. The variance 1 - |L^{-1} k|^2 cannot
// exceed 1 in floating point; tiny negative values from rounding (within
// -1e-10) are clamped to 0.
inline Posterior gp_posterior(const Eigen::Ref<const Eigen::VectorXd>& h,
                              const GpSnapshot& snap) {
    const Eigen::VectorXd k = snap.kernel_vector(h);
    const Eigen::MatrixXd& L = snap.cholesky_factor();
    Eigen::VectorXd z = L.triangularView<Eigen::Lower>().solve(k);
    double variance = 1.0 - z.squaredNorm();
    if (variance < 0.0) {
        if (variance < -1e-10)
            throw NumericError("gp_posterior: variance " + std::to_string(variance) +
                               " below rounding tolerance");
        variance = 0.0;
    }
    L.triangularView<Eigen::Lower>().transpose().solveInPlace(z);
    Posterior post;
    post.mean = snap.anchor_labels().transpose() * z;
    post.variance = variance;
    return post;
}

// d x C Jacobian of the posterior mean w.r.t. the query feature. Anchor
// features and the factor are epoch-frozen constants; only the kernel
// vector depends on h, with d k(h, a_i)/d h = k(h, a_i) (a_i - h) / l^2.
inline Eigen::MatrixXd gp_posterior_mean_grad(const Eigen::Ref<const Eigen::VectorXd>& h,
                                              const GpSnapshot& snap) {
    const Eigen::VectorXd k = snap.kernel_vector(h);
    const double inv_l2 =
        1.0 / (snap.config().length_scale * snap.config().length_scale);
    // rows scaled by k_i / l^2, then (H_A - 1 h^T)^T * (scaled alpha)
    const Eigen::MatrixXd scaled = (k * inv_l2).asDiagonal() * snap.alpha();  // |A| x C
    Eigen::MatrixXd J = snap.anchor_features().transpose() * scaled;          // d x C
    J.noalias() -= h * (k.transpose() * inv_l2 * snap.alpha());
    return J;
}

// ----- snapshot serialization -------------------------------------------
//
// Raw host-endian binary dump; round-trips bit-exactly.

namespace detail {
inline void put_i64(std::ostream& os, int64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void put_f64(std::ostream& os, double v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void put_mat(std::ostream& os, const Eigen::MatrixXd& m) {
    put_i64(os, m.rows());
    put_i64(os, m.cols());
    for (long i = 0; i < m.rows(); ++i)
        for (long j = 0; j < m.cols(); ++j) put_f64(os, m(i, j));
}
inline int64_t get_i64(std::istream& is) {
    int64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw Error("snapshot load: truncated stream");
    return v;
}
inline double get_f64(std::istream& is) {
    double v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw Error("snapshot load: truncated stream");
    return v;
}
inline Eigen::MatrixXd get_mat(std::istream& is) {
    const int64_t r = get_i64(is), c = get_i64(is);
    if (r < 0 || c < 0 || r * c > (1LL << 28))
        throw Error("snapshot load: implausible matrix size");
    Eigen::MatrixXd m(r, c);
    for (long i = 0; i < r; ++i)
        for (long j = 0; j < c; ++j) m(i, j) = get_f64(is);
    return m;
}
}  // namespace detail

inline void dump_snapshot(const GpSnapshot& snap, std::ostream& os) {
    os.write("GPGLSNP1", 8);
    detail::put_f64(os, snap.config().length_scale);
    detail::put_f64(os, snap.config().noise_variance);
    detail::put_f64(os, snap.config().jitter_start);
    detail::put_f64(os, snap.config().jitter_max);
    detail::put_f64(os, snap.applied_jitter());
    detail::put_mat(os, snap.anchor_features());
    detail::put_mat(os, snap.anchor_labels());
    if (!os) throw Error("snapshot dump: write failure");
}

inline GpSnapshot load_snapshot(std::istream& is) {
    char magic[8] = {};
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != "GPGLSNP1")
        throw Error("snapshot load: bad magic");
    KernelConfig config;
    config.length_scale = detail::get_f64(is);
    config.noise_variance = detail::get_f64(is);
    config.jitter_start = detail::get_f64(is);
    config.jitter_max = detail::get_f64(is);
    const double jitter = detail::get_f64(is);
    Eigen::MatrixXd features = detail::get_mat(is);
    Eigen::MatrixXd labels = detail::get_mat(is);
    GpSnapshot snap = GpSnapshot::build(std::move(features), std::move(labels), config);
    if (snap.applied_jitter() != jitter)
        throw NumericError("snapshot load: jitter mismatch (factorization drift)");
    return snap;
}

}  // namespace gpgl

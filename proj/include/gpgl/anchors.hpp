#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <functional>
#include <iostream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "gpgl/autodiff.hpp"
#include "gpgl/errors.hpp"
#include "gpgl/gp.hpp"
#include "gpgl/rng.hpp"
#include "gpgl/simplex.hpp"

namespace gpgl {

inline void warn(const std::string& msg) { std::cerr << "[gpgl] warning: " << msg << "\n"; }

// Maps a batch of raw inputs (rows) to feature rows. Implementations must
// run in inference mode: no gradient recording.
using FeatureFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

struct AnchorSpec {
    static constexpr int kAllClasses = -1;

    int per_class_count = 1;
    int c_cor = kAllClasses;  // neighbor classes per query class, or every class
    int top_k = 5;
    double epsilon = 1e-6;  // simplex floor keeping log(y*) finite
    uint64_t seed = 0;

    void validate(int class_count) const {
        if (per_class_count < 1)
            throw ConfigError("AnchorSpec: per_class_count must be >= 1");
        if (c_cor != kAllClasses && c_cor < 1)
            throw ConfigError("AnchorSpec: c_cor must be >= 1 or \"all\"");
        if (top_k < 1 || top_k > class_count)
            throw ConfigError("AnchorSpec: top_k must be in [1, " +
                              std::to_string(class_count) + "], got " + std::to_string(top_k));
        if (!(epsilon > 0.0) || epsilon >= 1.0 / (2.0 * class_count))
            throw ConfigError("AnchorSpec: epsilon must be in (0, 1/(2C))");
    }
};

// Per-sample GP output mapped onto the probability simplex.
struct ContextLabel {
    Eigen::VectorXd y_star;    // floor-clamped, top-k truncated, renormalized
    double g_v = 0.0;          // posterior variance, in [0, 1]
    Eigen::VectorXd raw_mean;  // pre-normalization posterior mean, for diagnostics
};

// Seeded uniform sampling without replacement within each class. Classes
// with fewer samples than requested contribute everything they have.
// Index lists are sorted, so a fixed seed yields a stable anchor set.
inline std::vector<std::vector<int>> sample_anchors(const std::vector<int>& labels,
                                                    int class_count, const AnchorSpec& spec) {
    std::vector<std::vector<int>> by_class(static_cast<size_t>(class_count));
    for (size_t i = 0; i < labels.size(); ++i)
        by_class[static_cast<size_t>(labels[i])].push_back(static_cast<int>(i));

    std::vector<std::vector<int>> picked(static_cast<size_t>(class_count));
    for (int c = 0; c < class_count; ++c) {
        auto& pool = by_class[static_cast<size_t>(c)];
        if (pool.empty())
            throw ConfigError("sample_anchors: class " + std::to_string(c) +
                              " has no samples");
        if (static_cast<int>(pool.size()) <= spec.per_class_count) {
            picked[static_cast<size_t>(c)] = pool;
        } else {
            Rng rng(derive_seed(spec.seed, "anchor-sample", static_cast<uint64_t>(c)));
            auto sel = rng.sample_without_replacement(static_cast<int>(pool.size()),
                                                      spec.per_class_count);
            auto& dst = picked[static_cast<size_t>(c)];
            dst.reserve(sel.size());
            for (int s : sel) dst.push_back(pool[static_cast<size_t>(s)]);
            std::sort(dst.begin(), dst.end());
        }
    }
    return picked;
}

// For each class, the c_cor classes whose mean features are nearest in
// Euclidean distance. Ties break toward the lower class index.
inline std::vector<std::vector<int>> nearest_classes(
    const Eigen::Ref<const Eigen::MatrixXd>& class_means, int c_cor) {
    const int c = static_cast<int>(class_means.rows());
    if (c < 2) throw ShapeError("nearest_classes: need at least 2 classes");
    if (c_cor >= c) {
        warn("nearest_classes: c_cor " + std::to_string(c_cor) + " clamped to " +
             std::to_string(c - 1));
        c_cor = c - 1;
    }
    std::vector<std::vector<int>> lists(static_cast<size_t>(c));
    for (int a = 0; a < c; ++a) {
        std::vector<std::pair<double, int>> dist;
        dist.reserve(static_cast<size_t>(c - 1));
        for (int b = 0; b < c; ++b) {
            if (b == a) continue;
            dist.emplace_back((class_means.row(a) - class_means.row(b)).squaredNorm(), b);
        }
        std::sort(dist.begin(), dist.end());
        auto& out = lists[static_cast<size_t>(a)];
        for (int r = 0; r < c_cor; ++r) out.push_back(dist[static_cast<size_t>(r)].second);
    }
    return lists;
}

// Class-aware anchor set. Indices are sampled once; features, class
// means, neighbor lists and GP snapshots are rebuilt at epoch boundaries
// via refresh_features and then stay frozen (context_label is a pure
// function of the query between refreshes).
class AnchorSet {
  public:
    static AnchorSet create(const Eigen::Ref<const Eigen::MatrixXd>& inputs,
                            const std::vector<int>& labels, int class_count,
                            const AnchorSpec& spec, const KernelConfig& kernel) {
        spec.validate(class_count);
        kernel.validate();
        AnchorSet set;
        set.spec_ = spec;
        if (spec.c_cor != AnchorSpec::kAllClasses && spec.c_cor >= class_count) {
            warn("AnchorSet: c_cor " + std::to_string(spec.c_cor) + " clamped to " +
                 std::to_string(class_count - 1));
            set.spec_.c_cor = class_count - 1;
        }
        set.kernel_ = kernel;
        set.class_count_ = class_count;
        set.indices_by_class_ = sample_anchors(labels, class_count, spec);

        long total = 0;
        for (const auto& v : set.indices_by_class_) total += static_cast<long>(v.size());
        set.inputs_.resize(total, inputs.cols());
        set.labels_.setZero(total, class_count);
        set.anchor_class_.reserve(static_cast<size_t>(total));
        long r = 0;
        for (int c = 0; c < class_count; ++c)
            for (int idx : set.indices_by_class_[static_cast<size_t>(c)]) {
                set.inputs_.row(r) = inputs.row(idx);
                set.labels_(r, c) = 1.0;
                set.anchor_class_.push_back(c);
                ++r;
            }

        set.global_ = spec.c_cor == AnchorSpec::kAllClasses || spec.c_cor >= class_count - 1;
        return set;
    }

    // Recomputes H_A from the epoch-boundary extractor and rebuilds class
    // means, neighbor lists and Cholesky factors.
    void refresh_features(const FeatureFn& extractor) {
        features_ = extractor(inputs_);
        if (features_.rows() != inputs_.rows())
            throw ShapeError("refresh_features: extractor returned " +
                             std::to_string(features_.rows()) + " rows for " +
                             std::to_string(inputs_.rows()) + " anchors");

        class_means_.setZero(class_count_, features_.cols());
        std::vector<long> counts(static_cast<size_t>(class_count_), 0);
        for (long i = 0; i < features_.rows(); ++i) {
            class_means_.row(anchor_class_[static_cast<size_t>(i)]) += features_.row(i);
            ++counts[static_cast<size_t>(anchor_class_[static_cast<size_t>(i)])];
        }
        for (int c = 0; c < class_count_; ++c)
            class_means_.row(c) /= static_cast<double>(counts[static_cast<size_t>(c)]);

        if (class_count_ >= 2) {
            const int c_cor = global_ ? class_count_ - 1 : spec_.c_cor;
            neighbors_ = nearest_classes(class_means_, c_cor);
        } else {
            neighbors_.assign(1, {});
        }

        snapshots_.clear();
        snapshot_rows_.clear();
        if (global_) {
            snapshots_.push_back(GpSnapshot::build(features_, labels_, kernel_));
            std::vector<int> all(static_cast<size_t>(features_.rows()));
            std::iota(all.begin(), all.end(), 0);
            snapshot_rows_.push_back(std::move(all));
        } else {
            for (int c = 0; c < class_count_; ++c) {
                std::vector<char> wanted(static_cast<size_t>(class_count_), 0);
                wanted[static_cast<size_t>(c)] = 1;
                for (int nb : neighbors_[static_cast<size_t>(c)])
                    wanted[static_cast<size_t>(nb)] = 1;
                std::vector<int> rows;
                for (long i = 0; i < features_.rows(); ++i)
                    if (wanted[static_cast<size_t>(anchor_class_[static_cast<size_t>(i)])])
                        rows.push_back(static_cast<int>(i));
                Eigen::MatrixXd f(static_cast<long>(rows.size()), features_.cols());
                Eigen::MatrixXd l(static_cast<long>(rows.size()), class_count_);
                for (size_t k = 0; k < rows.size(); ++k) {
                    f.row(static_cast<long>(k)) = features_.row(rows[k]);
                    l.row(static_cast<long>(k)) = labels_.row(rows[k]);
                }
                snapshots_.push_back(GpSnapshot::build(std::move(f), std::move(l), kernel_));
                snapshot_rows_.push_back(std::move(rows));
            }
        }
        refreshed_ = true;
    }

    [[nodiscard]] const GpSnapshot& snapshot_for(int true_class) const {
        require_refreshed();
        if (true_class < 0 || true_class >= class_count_)
            throw DomainError("AnchorSet: class " + std::to_string(true_class) +
                              " out of range");
        return global_ ? snapshots_[0] : snapshots_[static_cast<size_t>(true_class)];
    }

    [[nodiscard]] ContextLabel context_label(const Eigen::Ref<const Eigen::VectorXd>& h,
                                             int true_class) const {
        const GpSnapshot& snap = snapshot_for(true_class);
        const Posterior post = gp_posterior(h, snap);
        SimplexTruncation trunc = truncate_to_simplex(post.mean, spec_.top_k, spec_.epsilon);
        ContextLabel label;
        label.y_star = std::move(trunc.y_star);
        label.g_v = post.variance;
        label.raw_mean = post.mean;
        return label;
    }

    // Taped variant: emits y* as a graph node whose backward routes the
    // adjoint through the truncation mask and the posterior-mean Jacobian
    // into the query feature. Anchor-side quantities are constants. The
    // AnchorSet must outlive the tape.
    NodeId context_label_node(Tape& tape, NodeId h_node, int true_class,
                              ContextLabel* out_label = nullptr) const {
        const GpSnapshot& snap = snapshot_for(true_class);
        const Tensor& hv = tape.value(h_node);
        if (hv.rank() != 1)
            throw ShapeError("context_label_node: feature node must be rank 1, got " +
                             hv.shape_str());
        Eigen::VectorXd h = Eigen::Map<const Eigen::VectorXd>(hv.data(), hv.size());
        const Posterior post = gp_posterior(h, snap);
        SimplexTruncation trunc = truncate_to_simplex(post.mean, spec_.top_k, spec_.epsilon);

        if (out_label) {
            out_label->y_star = trunc.y_star;
            out_label->g_v = post.variance;
            out_label->raw_mean = post.mean;
        }

        const long c = trunc.y_star.size();
        Tensor value({c});
        for (long j = 0; j < c; ++j) value[j] = trunc.y_star(j);

        const GpSnapshot* snap_ptr = &snap;
        auto vjp = [snap_ptr, h = std::move(h),
                    t = std::move(trunc)](const Tape&, NodeId, const Tensor& adj) {
            const Eigen::VectorXd d_mean = detail::truncation_vjp(
                t, Eigen::Map<const Eigen::VectorXd>(adj.data(), adj.size()));
            const Eigen::MatrixXd J = gp_posterior_mean_grad(h, *snap_ptr);  // d x C
            const Eigen::VectorXd dh = J * d_mean;
            Tensor out({dh.size()});
            for (long i = 0; i < dh.size(); ++i) out[i] = dh(i);
            return std::vector<Tensor>{std::move(out)};
        };
        return tape.custom("context-label", std::move(value), {h_node}, std::move(vjp));
    }

    [[nodiscard]] int class_count() const { return class_count_; }
    [[nodiscard]] long anchor_count() const { return inputs_.rows(); }
    [[nodiscard]] bool refreshed() const { return refreshed_; }
    [[nodiscard]] bool global() const { return global_; }
    [[nodiscard]] const AnchorSpec& spec() const { return spec_; }
    [[nodiscard]] const std::vector<std::vector<int>>& indices_by_class() const {
        return indices_by_class_;
    }
    [[nodiscard]] const Eigen::MatrixXd& anchor_inputs() const { return inputs_; }
    [[nodiscard]] const Eigen::MatrixXd& anchor_labels() const { return labels_; }
    [[nodiscard]] const Eigen::MatrixXd& features() const {
        require_refreshed();
        return features_;
    }
    [[nodiscard]] const Eigen::MatrixXd& class_means() const {
        require_refreshed();
        return class_means_;
    }
    [[nodiscard]] const std::vector<std::vector<int>>& neighbor_lists() const {
        require_refreshed();
        return neighbors_;
    }
    [[nodiscard]] const std::vector<int>& snapshot_rows(int true_class) const {
        require_refreshed();
        return global_ ? snapshot_rows_[0] : snapshot_rows_[static_cast<size_t>(true_class)];
    }

  private:
    void require_refreshed() const {
        if (!refreshed_)
            throw Error("AnchorSet: refresh_features has not been called this epoch");
    }

    AnchorSpec spec_;
    KernelConfig kernel_;
    int class_count_ = 0;
    std::vector<std::vector<int>> indices_by_class_;
    Eigen::MatrixXd inputs_;
    Eigen::MatrixXd labels_;
    std::vector<int> anchor_class_;
    Eigen::MatrixXd features_;
    Eigen::MatrixXd class_means_;
    std::vector<std::vector<int>> neighbors_;
    bool global_ = true;
    std::vector<GpSnapshot> snapshots_;
    std::vector<std::vector<int>> snapshot_rows_;
    bool refreshed_ = false;
};

}  // namespace gpgl

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "gpgl/anchors.hpp"
#include "gpgl/autodiff.hpp"
#include "gpgl/gp.hpp"
#include "gpgl/losses.hpp"
#include "gpgl/model.hpp"
#include "gpgl/rng.hpp"

namespace gpgl {

// Built-in self checks behind the gp-selftest and gradcheck commands.

namespace detail {

// Gauss-Jordan with partial pivoting; the reference route the Cholesky
// path is checked against.
inline Eigen::MatrixXd selftest_dense_inverse(Eigen::MatrixXd m) {
    const long n = m.rows();
    Eigen::MatrixXd inv = Eigen::MatrixXd::Identity(n, n);
    for (long col = 0; col < n; ++col) {
        long pivot = col;
        for (long r = col + 1; r < n; ++r)
            if (std::abs(m(r, col)) > std::abs(m(pivot, col))) pivot = r;
        if (m(pivot, col) == 0.0)
            throw NumericError("selftest: reference inversion hit a singular matrix");
        m.row(col).swap(m.row(pivot));
        inv.row(col).swap(inv.row(pivot));
        const double d = m(col, col);
        m.row(col) /= d;
        inv.row(col) /= d;
        for (long r = 0; r < n; ++r) {
            if (r == col || m(r, col) == 0.0) continue;
            const double f = m(r, col);
            m.row(r) -= f * m.row(col);
            inv.row(r) -= f * inv.row(col);
        }
    }
    return inv;
}

struct RandomGpInstance {
    Eigen::MatrixXd features;
    Eigen::MatrixXd labels;
    Eigen::VectorXd query;
    KernelConfig config;
};

inline RandomGpInstance random_gp_instance(uint64_t seed, const KernelConfig& base) {
    Rng rng(derive_seed(seed, "gp-selftest"));
    RandomGpInstance inst;
    const long n = 2 + static_cast<long>(rng.integer(19));  // |A| <= 20
    const long d = 2 + static_cast<long>(rng.integer(7));   // d <= 8
    const long c = 2 + static_cast<long>(rng.integer(4));   // C <= 5
    inst.config = base;
    inst.config.length_scale = 0.5 + rng.uniform();
    const double noises[] = {0.0, 0.01, 0.1};
    inst.config.noise_variance = noises[seed % 3];
    inst.features.resize(n, d);
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < d; ++j) inst.features(i, j) = rng.normal();
    inst.labels.setZero(n, c);
    for (long i = 0; i < n; ++i)
        inst.labels(i, static_cast<long>(rng.integer(static_cast<uint64_t>(c)))) = 1.0;
    inst.query.resize(d);
    for (long j = 0; j < d; ++j) inst.query(j) = rng.normal();
    return inst;
}

}  // namespace detail

struct SelftestReport {
    long oracle_cases = 0;
    long oracle_failures = 0;
    double oracle_max_abs_err = 0.0;
    std::vector<uint64_t> failing_seeds;
    bool interpolation_ok = true;
    double interpolation_max_err = 0.0;
    bool roundtrip_ok = true;

    [[nodiscard]] bool ok() const {
        return oracle_failures == 0 && interpolation_ok && roundtrip_ok;
    }
};

// Cholesky-path posterior vs direct dense inversion on random instances,
// plus the noise-free interpolation identity and a serialization
// round-trip. Deterministic for a fixed seed.
inline SelftestReport gp_selftest(uint64_t seed, long cases, const KernelConfig& base) {
    base.validate();
    SelftestReport report;

    for (long i = 0; i < cases; ++i) {
        const uint64_t case_seed = derive_seed(seed, "case", static_cast<uint64_t>(i));
        const auto inst = detail::random_gp_instance(case_seed, base);
        const GpSnapshot snap = GpSnapshot::build(inst.features, inst.labels, inst.config);

        Eigen::MatrixXd m = kernel_matrix(inst.features, inst.config);
        m.diagonal().array() += inst.config.noise_variance + snap.applied_jitter();
        const Eigen::MatrixXd inv = detail::selftest_dense_inverse(m);
        Eigen::VectorXd k(inst.features.rows());
        for (long r = 0; r < inst.features.rows(); ++r)
            k(r) = rbf_kernel(inst.features.row(r).transpose(), inst.query, inst.config);
        const Eigen::VectorXd ref_mean = inst.labels.transpose() * (inv * k);
        const double ref_var = 1.0 - k.dot(inv * k);

        const Posterior post = gp_posterior(inst.query, snap);
        double err = std::abs(post.variance - std::max(ref_var, 0.0));
        for (long cidx = 0; cidx < ref_mean.size(); ++cidx)
            err = std::max(err, std::abs(post.mean(cidx) - ref_mean(cidx)));

        ++report.oracle_cases;
        report.oracle_max_abs_err = std::max(report.oracle_max_abs_err, err);
        if (!(err < 1e-8)) {
            ++report.oracle_failures;
            report.failing_seeds.push_back(case_seed);
        }
    }

    {
        Rng rng(derive_seed(seed, "interp"));
        KernelConfig config = base;
        config.noise_variance = 0.0;
        config.length_scale = 1.0;
        const long n = 10, d = 4, c = 3;
        Eigen::MatrixXd features(n, d);
        for (long i = 0; i < n; ++i)
            for (long j = 0; j < d; ++j) features(i, j) = rng.normal();
        Eigen::MatrixXd labels = Eigen::MatrixXd::Zero(n, c);
        for (long i = 0; i < n; ++i) labels(i, i % c) = 1.0;
        const GpSnapshot snap = GpSnapshot::build(features, labels, config);
        for (long i = 0; i < n; ++i) {
            const Posterior post = gp_posterior(features.row(i).transpose(), snap);
            for (long cidx = 0; cidx < c; ++cidx)
                report.interpolation_max_err = std::max(
                    report.interpolation_max_err, std::abs(post.mean(cidx) - labels(i, cidx)));
            report.interpolation_max_err =
                std::max(report.interpolation_max_err, post.variance);
        }
        report.interpolation_ok = report.interpolation_max_err < 1e-8;
    }

    {
        const auto inst = detail::random_gp_instance(derive_seed(seed, "roundtrip"), base);
        const GpSnapshot snap = GpSnapshot::build(inst.features, inst.labels, inst.config);
        std::ostringstream first;
        dump_snapshot(snap, first);
        std::istringstream in(first.str());
        const GpSnapshot loaded = load_snapshot(in);
        std::ostringstream second;
        dump_snapshot(loaded, second);
        const Posterior a = gp_posterior(inst.query, snap);
        const Posterior b = gp_posterior(inst.query, loaded);
        report.roundtrip_ok = first.str() == second.str() && a.variance == b.variance &&
                              a.mean == b.mean;
    }

    return report;
}

// ----- triangle-loss gradient check -------------------------------------

// A small end-to-end instance: 2-16-8-3 MLP, 5 anchors, 3 samples. The
// anchor snapshot and the per-sample loss weights are frozen at the base
// parameters, exactly as one optimizer step sees them.
struct TriangleScenario {
    Mlp model;
    Tensor x;
    std::vector<int> y;
    AnchorSet anchors;
    std::vector<LossWeights> weights;
};

inline TriangleScenario make_triangle_scenario(uint64_t seed) {
    ModelSpec spec;
    spec.input_dim = 2;
    spec.hidden_widths = {16, 8};
    spec.class_count = 3;
    spec.init_seed = derive_seed(seed, "gc-init");
    Mlp model(spec);

    Rng rng(derive_seed(seed, "gc-data"));
    const long batch = 3;
    Tensor x({batch, 2});
    for (long i = 0; i < x.size(); ++i) x[i] = rng.normal();
    std::vector<int> y = {0, 1, 2};

    Eigen::MatrixXd anchor_inputs(5, 2);
    for (long i = 0; i < 5; ++i)
        for (long j = 0; j < 2; ++j) anchor_inputs(i, j) = rng.normal();
    const std::vector<int> anchor_classes = {0, 1, 2, 0, 1};

    AnchorSpec aspec;
    aspec.per_class_count = 2;
    aspec.c_cor = AnchorSpec::kAllClasses;
    aspec.top_k = 3;
    aspec.seed = derive_seed(seed, "gc-anchors");
    KernelConfig kernel;
    kernel.length_scale = 1.0;
    kernel.noise_variance = 0.01;

    AnchorSet anchors = AnchorSet::create(anchor_inputs, anchor_classes, 3, aspec, kernel);
    anchors.refresh_features(
        [&model](const Eigen::MatrixXd& in) { return model.features_eval(in); });

    const Eigen::MatrixXd features = model.features_eval(Mlp::to_eigen(x));
    std::vector<LossWeights> weights;
    for (long b = 0; b < batch; ++b) {
        const ContextLabel ctx =
            anchors.context_label(features.row(b).transpose(), y[static_cast<size_t>(b)]);
        weights.push_back(loss_weights(0.7, 1.0, 1.0, 1.0, ctx.g_v));
    }

    return TriangleScenario{std::move(model), std::move(x), std::move(y), std::move(anchors),
                            std::move(weights)};
}

// Mean triangle loss over the scenario batch as a scalar-graph function
// of parameter `param_idx`, all other parameters held constant.
inline ScalarGraphFn triangle_loss_of_param(const TriangleScenario& scenario,
                                            size_t param_idx) {
    return [&scenario, param_idx](Tape& tape, NodeId p) {
        const auto& params = scenario.model.params();
        std::vector<NodeId> ids;
        ids.reserve(params.size());
        for (size_t j = 0; j < params.size(); ++j)
            ids.push_back(j == param_idx ? p : tape.constant(params[j].value));
        const Mlp::Graph graph = scenario.model.build_with(tape, scenario.x, ids);

        NodeId total = -1;
        const long batch = scenario.x.rows();
        for (long b = 0; b < batch; ++b) {
            const int yb = scenario.y[static_cast<size_t>(b)];
            const NodeId yhat_row = tape.row(graph.probs, b);
            const NodeId h_row = tape.row(graph.features, b);
            const NodeId ystar = scenario.anchors.context_label_node(tape, h_row, yb);
            const SampleLossNodes terms = triangle_sample_loss(
                tape, yhat_row, ystar, yb, scenario.weights[static_cast<size_t>(b)]);
            total = b == 0 ? terms.weighted : tape.add(total, terms.weighted);
        }
        return tape.scale(total, 1.0 / static_cast<double>(batch));
    };
}

struct GradcheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    long coords_checked = 0;
};

// Full triangle-loss gradient (ce2/kl path through the GP mean included)
// against central finite differences, over every model parameter.
inline GradcheckReport triangle_gradcheck(uint64_t seed, double step) {
    const TriangleScenario scenario = make_triangle_scenario(seed);
    GradcheckReport report;
    const auto& params = scenario.model.params();
    for (size_t i = 0; i < params.size(); ++i) {
        const FdReport fd =
            finite_difference_check(triangle_loss_of_param(scenario, i), params[i].value, step);
        report.coords_checked += fd.checked;
        if (fd.max_rel_error > report.max_rel_error) {
            report.max_rel_error = fd.max_rel_error;
            report.worst_param = params[i].name;
        }
    }
    return report;
}

}  // namespace gpgl

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <functional>
#include <numeric>
#include <vector>

#include "gpgl/autodiff.hpp"
#include "gpgl/errors.hpp"

namespace gpgl {

// Result of the clamp -> top-k -> renormalize transform, with the pieces
// the backward pass needs.
struct SimplexTruncation {
    Eigen::VectorXd y_star;
    Eigen::VectorXd kept;      // clamped/truncated values before normalization
    std::vector<char> active;  // 1 where the raw value survived (gradient flows)
    double sum = 0.0;
};

// Clamp each component to at least eps, keep the top_k largest, set the
// rest back to eps, renormalize to sum 1. Ties break toward the lower
// index. Gradients flow only through components that survive unclamped.
inline SimplexTruncation truncate_to_simplex(const Eigen::Ref<const Eigen::VectorXd>& raw,
                                             int top_k, double eps) {
    const long c = raw.size();
    if (top_k < 1) throw ConfigError("truncate_to_simplex: top_k must be >= 1");

    Eigen::VectorXd clamped = raw.cwiseMax(eps);
    std::vector<long> order(static_cast<size_t>(c));
    std::iota(order.begin(), order.end(), 0L);
    std::stable_sort(order.begin(), order.end(), [&clamped](long a, long b) {
        if (clamped(a) != clamped(b)) return clamped(a) > clamped(b);
        return a < b;
    });

    SimplexTruncation out;
    out.kept = Eigen::VectorXd::Constant(c, eps);
    out.active.assign(static_cast<size_t>(c), 0);
    const long keep = std::min<long>(top_k, c);
    for (long r = 0; r < keep; ++r) {
        const long j = order[static_cast<size_t>(r)];
        out.kept(j) = clamped(j);
        if (raw(j) > eps) out.active[static_cast<size_t>(j)] = 1;
    }
    out.sum = out.kept.sum();
    out.y_star = out.kept / out.sum;
    return out;
}

namespace detail {

// Adjoint of y = kept / sum through the truncation, masked to the
// components whose raw values survived (quotient rule elsewhere is a
// constant eps / sum).
inline Eigen::VectorXd truncation_vjp(const SimplexTruncation& t,
                                      const Eigen::Ref<const Eigen::VectorXd>& adj) {
    const long c = t.kept.size();
    const double mix = adj.dot(t.kept) / t.sum;
    Eigen::VectorXd d = Eigen::VectorXd::Zero(c);
    for (long j = 0; j < c; ++j)
        if (t.active[static_cast<size_t>(j)]) d(j) = (adj(j) - mix) / t.sum;
    return d;
}

}  // namespace detail

// Tape node applying truncate_to_simplex to a rank-1 input. With
// top_k = C this is the bare eps-floor that keeps downstream logs finite.
inline NodeId simplex_truncate_node(Tape& tape, NodeId raw, int top_k, double eps) {
    const Tensor& rv = tape.value(raw);
    if (rv.rank() != 1)
        throw ShapeError("simplex_truncate_node: input must be rank 1, got " + rv.shape_str());
    const long c = rv.size();
    SimplexTruncation trunc =
        truncate_to_simplex(Eigen::Map<const Eigen::VectorXd>(rv.data(), c), top_k, eps);

    Tensor value({c});
    for (long j = 0; j < c; ++j) value[j] = trunc.y_star(j);
    auto vjp = [t = std::move(trunc)](const Tape&, NodeId, const Tensor& adj) {
        const Eigen::VectorXd d =
            detail::truncation_vjp(t, Eigen::Map<const Eigen::VectorXd>(adj.data(), adj.size()));
        Tensor out({d.size()});
        for (long i = 0; i < d.size(); ++i) out[i] = d(i);
        return std::vector<Tensor>{std::move(out)};
    };
    return tape.custom("simplex-truncate", std::move(value), {raw}, std::move(vjp));
}

// Mass of the k largest components of the clamped, normalized vector with
// no truncation applied (the diagnostic the per-epoch logs carry).
inline double topk_mass(const Eigen::Ref<const Eigen::VectorXd>& raw_mean, int k, double eps) {
    Eigen::VectorXd p = raw_mean.cwiseMax(eps);
    p /= p.sum();
    std::vector<double> v(p.data(), p.data() + p.size());
    std::sort(v.begin(), v.end(), std::greater<>());
    const size_t keep = std::min<size_t>(static_cast<size_t>(std::max(k, 0)), v.size());
    double mass = 0.0;
    for (size_t i = 0; i < keep; ++i) mass += v[i];
    return mass;
}

}  // namespace gpgl

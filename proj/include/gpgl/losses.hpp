#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "gpgl/autodiff.hpp"
#include "gpgl/errors.hpp"
#include "gpgl/simplex.hpp"

namespace gpgl {

namespace detail {
inline void check_simplex(std::span<const double> p, const char* who) {
    double sum = 0.0;
    for (double x : p) {
        if (!(x > 0.0))
            throw DomainError(std::string(who) + ": non-positive simplex entry " +
                              std::to_string(x));
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw DomainError(std::string(who) + ": entries sum to " + std::to_string(sum));
}
}  // namespace detail

// Cross-entropy of a prediction against the ground-truth class.
inline double ce1(std::span<const double> y_hat, int y) {
    if (y < 0 || y >= static_cast<int>(y_hat.size()))
        throw DomainError("ce1: class " + std::to_string(y) + " out of range");
    const double p = y_hat[static_cast<size_t>(y)];
    if (!(p > 0.0))
        throw DomainError("ce1: zero probability at the true class");
    return -std::log(p);
}

// KL(y* || y_hat), non-negative, zero iff the two agree.
inline double kl(std::span<const double> y_star, std::span<const double> y_hat) {
    if (y_star.size() != y_hat.size())
        throw ShapeError("kl: size mismatch " + std::to_string(y_star.size()) + " vs " +
                         std::to_string(y_hat.size()));
    detail::check_simplex(y_star, "kl(y*)");
    detail::check_simplex(y_hat, "kl(y_hat)");
    double d = 0.0;
    for (size_t j = 0; j < y_star.size(); ++j)
        d += y_star[j] * std::log(y_star[j] / y_hat[j]);
    return d;
}

// Cross-entropy of the context label against the ground-truth class. Its
// gradient is routed to feature-extractor parameters only.
inline double ce2(std::span<const double> y_star, int y) {
    if (y < 0 || y >= static_cast<int>(y_star.size()))
        throw DomainError("ce2: class " + std::to_string(y) + " out of range");
    const double p = y_star[static_cast<size_t>(y)];
    if (!(p > 0.0))
        throw DomainError("ce2: zero probability at the true class");
    return -std::log(p);
}

// Per-sample weights of the combined loss:
//   alpha = 1 / (2 - mu)
//   beta  = |ce1| (1 - mu) / (2 |ce2| (2 - mu) (1 + g_v))
//   gamma = |ce1| (1 - mu) / (2 |kl|  (2 - mu) (1 + g_v))
// mu is the current model error rate; the magnitudes are epoch means of
// the previous epoch's absolute loss values. swap_norm_denominators
// exchanges the |ce2| / |kl| denominators for the alternative reading.
struct LossWeights {
    double alpha = 1.0;
    double beta = 0.0;
    double gamma = 0.0;
    double mu = 1.0;
    double mag_ce1 = 1.0;
    double mag_ce2 = 1.0;
    double mag_kl = 1.0;
    double g_v = 0.0;
};

inline LossWeights loss_weights(double mu, double mag_ce1, double mag_ce2, double mag_kl,
                                double g_v, bool swap_norm_denominators = false) {
    if (!(mu >= 0.0 && mu <= 1.0))
        throw DomainError("loss_weights: mu must be in [0, 1], got " + std::to_string(mu));
    if (!(mag_ce1 > 0.0 && mag_ce2 > 0.0 && mag_kl > 0.0))
        throw DomainError("loss_weights: magnitudes must be positive");
    if (!(g_v >= 0.0))
        throw DomainError("loss_weights: g_v must be non-negative");

    LossWeights w;
    w.mu = mu;
    w.mag_ce1 = mag_ce1;
    w.mag_ce2 = mag_ce2;
    w.mag_kl = mag_kl;
    w.g_v = g_v;
    w.alpha = 1.0 / (2.0 - mu);
    const double beta_denom = swap_norm_denominators ? mag_kl : mag_ce2;
    const double gamma_denom = swap_norm_denominators ? mag_ce2 : mag_kl;
    const double common = mag_ce1 * (1.0 - mu) / (2.0 * (2.0 - mu) * (1.0 + g_v));
    w.beta = common / beta_denom;
    w.gamma = common / gamma_denom;
    return w;
}

// Graph nodes of one sample's triangle loss terms. kl/ce2 are -1 when the
// context terms were not built (weights exactly zero, or baseline mode).
struct SampleLossNodes {
    NodeId ce1 = -1;
    NodeId kl = -1;
    NodeId ce2 = -1;
    NodeId weighted = -1;
};

// Builds alpha*ce1 + beta*kl + gamma*ce2 for one sample on the tape.
// y_star_node < 0 (or beta = gamma = 0) degenerates to alpha*ce1 with no
// context subgraph, so a mu = 1 run leaves the ce1 gradient path
// bit-identical to the plain cross-entropy baseline. ce2 passes through a
// feature-only scope gate; kl reaches all parameters through both its
// prediction and context-label inputs.
//
// ce1 takes the log of the picked true-class probability, so saturated
// predictions whose other components underflow to zero stay in domain.
// The kl path floors the prediction to the same eps simplex as y*,
// keeping its log finite and its y*/y_hat gradient ratio bounded.
inline SampleLossNodes triangle_sample_loss(Tape& tape, NodeId y_hat_row, NodeId y_star_node,
                                            int y, const LossWeights& w,
                                            double epsilon = 1e-6) {
    SampleLossNodes nodes;
    nodes.ce1 = tape.neg(tape.log(tape.pick(y_hat_row, y)));
    if (y_star_node < 0 || (w.beta == 0.0 && w.gamma == 0.0)) {
        nodes.weighted = tape.scale(nodes.ce1, w.alpha);
        return nodes;
    }
    const long classes = tape.value(y_hat_row).size();
    const NodeId y_hat_floored =
        simplex_truncate_node(tape, y_hat_row, static_cast<int>(classes), epsilon);
    const NodeId log_y_star = tape.log(y_star_node);
    nodes.kl =
        tape.dot(y_star_node, tape.sub(log_y_star, tape.log(y_hat_floored)));
    nodes.ce2 = tape.feature_scope(tape.neg(tape.pick(log_y_star, y)));
    nodes.weighted = tape.add(tape.scale(nodes.ce1, w.alpha),
                              tape.add(tape.scale(nodes.kl, w.beta),
                                       tape.scale(nodes.ce2, w.gamma)));
    return nodes;
}

// Batch-level summary of the three terms, the per-sample weights, and the
// per-scope gradient norms of the combined loss.
struct TriangleLossReport {
    double ce1 = 0.0;
    double kl = 0.0;
    double ce2 = 0.0;
    double combined = 0.0;
    std::vector<LossWeights> weights;
    double grad_norm_feature = 0.0;
    double grad_norm_head = 0.0;
};

inline void fill_grad_norms(TriangleLossReport& report, const GradientMap& grads) {
    double feat = 0.0, head = 0.0;
    for (const auto& e : grads.entries) {
        double s = 0.0;
        for (long i = 0; i < e.grad.size(); ++i) s += e.grad[i] * e.grad[i];
        (e.group == ParamGroup::classifier_head ? head : feat) += s;
    }
    report.grad_norm_feature = std::sqrt(feat);
    report.grad_norm_head = std::sqrt(head);
}

}  // namespace gpgl

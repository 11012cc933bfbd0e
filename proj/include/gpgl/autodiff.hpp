#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gpgl/errors.hpp"
#include "gpgl/tensor.hpp"

namespace gpgl {

// Which parameters a gradient contribution may reach once it has passed
// through a node carrying the tag. stop_grad kills the contribution
// entirely; feature_only restricts it to feature-extractor parameters.
enum class GradScope { all_params, feature_only, stop_grad };

// Parameter grouping used by scope filtering.
enum class ParamGroup { feature_extractor, classifier_head };

using NodeId = int;

// Gradient of a scalar root w.r.t. every parameter registered on the tape.
// Every trainable parameter appears exactly once, zero-filled when no
// contribution reached it.
struct GradientMap {
    struct Entry {
        NodeId id;
        std::string name;
        ParamGroup group;
        Tensor grad;
    };
    std::vector<Entry> entries;

    [[nodiscard]] const Tensor& at(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return e.grad;
        throw Error("GradientMap: no parameter named '" + name + "'");
    }
    [[nodiscard]] const Tensor& at(NodeId id) const {
        for (const auto& e : entries)
            if (e.id == id) return e.grad;
        throw Error("GradientMap: unknown parameter node");
    }
};

// Reverse-mode tape. Rebuilt per training step; nodes are appended after
// their parents, so the tape order is a topological order and backward is
// a single reverse sweep that visits each node exactly once.
class Tape {
  public:
    // vjp: given this node's adjoint, return one contribution per parent.
    using Vjp = std::function<std::vector<Tensor>(const Tape&, NodeId, const Tensor&)>;

    NodeId constant(Tensor v) { return push("const", std::move(v), {}, nullptr); }

    NodeId parameter(Tensor v, std::string name, ParamGroup group = ParamGroup::feature_extractor) {
        NodeId id = push("param", std::move(v), {}, nullptr);
        nodes_[static_cast<size_t>(id)].is_param = true;
        nodes_[static_cast<size_t>(id)].name = std::move(name);
        nodes_[static_cast<size_t>(id)].group = group;
        return id;
    }

    [[nodiscard]] const Tensor& value(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }
    [[nodiscard]] size_t node_count() const { return nodes_.size(); }

    // ----- ops -------------------------------------------------------

    NodeId matmul(NodeId a, NodeId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
            throw ShapeError("matmul: lhs " + A.shape_str() + " rhs " + B.shape_str());
        const long m = A.rows(), k = A.cols(), n = B.cols();
        Tensor C({m, n});
        for (long i = 0; i < m; ++i)
            for (long p = 0; p < k; ++p) {
                const double aip = A(i, p);
                for (long j = 0; j < n; ++j) C(i, j) += aip * B(p, j);
            }
        return push("matmul", std::move(C), {a, b},
                    [](const Tape& t, NodeId self, const Tensor& adj) {
                        const auto& node = t.nodes_[static_cast<size_t>(self)];
                        const Tensor& A = t.value(node.parents[0]);
                        const Tensor& B = t.value(node.parents[1]);
                        const long m = A.rows(), k = A.cols(), n = B.cols();
                        Tensor dA({m, k});
                        Tensor dB({k, n});
                        for (long i = 0; i < m; ++i)
                            for (long j = 0; j < n; ++j) {
                                const double g = adj(i, j);
                                for (long p = 0; p < k; ++p) {
                                    dA(i, p) += g * B(p, j);
                                    dB(p, j) += A(i, p) * g;
                                }
                            }
                        return std::vector<Tensor>{std::move(dA), std::move(dB)};
                    });
    }

    // Same-shape add, or (m x n) + (n,) row broadcast for bias terms.
    NodeId add(NodeId a, NodeId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.same_shape(B)) {
            Tensor C = A;
            for (long i = 0; i < C.size(); ++i) C[i] += B[i];
            return push("add", std::move(C), {a, b},
                        [](const Tape&, NodeId, const Tensor& adj) {
                            return std::vector<Tensor>{adj, adj};
                        });
        }
        if (A.rank() == 2 && B.rank() == 1 && A.cols() == B.cols()) {
            Tensor C = A;
            for (long i = 0; i < A.rows(); ++i)
                for (long j = 0; j < A.cols(); ++j) C(i, j) += B[j];
            return push("add", std::move(C), {a, b},
                        [](const Tape& t, NodeId self, const Tensor& adj) {
                            const auto& node = t.nodes_[static_cast<size_t>(self)];
                            const Tensor& B = t.value(node.parents[1]);
                            Tensor dB({B.cols()});
                            for (long i = 0; i < adj.rows(); ++i)
                                for (long j = 0; j < adj.cols(); ++j) dB[j] += adj(i, j);
                            return std::vector<Tensor>{adj, std::move(dB)};
                        });
        }
        throw ShapeError("add: lhs " + A.shape_str() + " rhs " + B.shape_str());
    }

    NodeId sub(NodeId a, NodeId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!A.same_shape(B))
            throw ShapeError("sub: lhs " + A.shape_str() + " rhs " + B.shape_str());
        Tensor C = A;
        for (long i = 0; i < C.size(); ++i) C[i] -= B[i];
        return push("sub", std::move(C), {a, b},
                    [](const Tape&, NodeId, const Tensor& adj) {
                        Tensor neg = adj;
                        for (long i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
                        return std::vector<Tensor>{adj, std::move(neg)};
                    });
    }

    NodeId scale(NodeId a, double c) {
        Tensor C = value(a);
        for (long i = 0; i < C.size(); ++i) C[i] *= c;
        return push("scale", std::move(C), {a},
                    [c](const Tape&, NodeId, const Tensor& adj) {
                        Tensor d = adj;
                        for (long i = 0; i < d.size(); ++i) d[i] *= c;
                        return std::vector<Tensor>{std::move(d)};
                    });
    }

    NodeId neg(NodeId a) { return scale(a, -1.0); }

    // Elementwise product.
    NodeId mul(NodeId a, NodeId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!A.same_shape(B))
            throw ShapeError("mul: lhs " + A.shape_str() + " rhs " + B.shape_str());
        Tensor C = A;
        for (long i = 0; i < C.size(); ++i) C[i] *= B[i];
        return push("mul", std::move(C), {a, b},
                    [](const Tape& t, NodeId self, const Tensor& adj) {
                        const auto& node = t.nodes_[static_cast<size_t>(self)];
                        const Tensor& A = t.value(node.parents[0]);
                        const Tensor& B = t.value(node.parents[1]);
                        Tensor dA = adj;
                        Tensor dB = adj;
                        for (long i = 0; i < adj.size(); ++i) {
                            dA[i] *= B[i];
                            dB[i] *= A[i];
                        }
                        return std::vector<Tensor>{std::move(dA), std::move(dB)};
                    });
    }

    // Gradient at exactly 0 is defined as 0 (documented kink; excluded
    // from finite-difference checks).
    NodeId relu(NodeId a) {
        Tensor C = value(a);
        for (long i = 0; i < C.size(); ++i) C[i] = C[i] > 0.0 ? C[i] : 0.0;
        return push("relu", std::move(C), {a},
                    [](const Tape& t, NodeId self, const Tensor& adj) {
                        const auto& node = t.nodes_[static_cast<size_t>(self)];
                        const Tensor& A = t.value(node.parents[0]);
                        Tensor d = adj;
                        for (long i = 0; i < d.size(); ++i)
                            if (A[i] <= 0.0) d[i] = 0.0;
                        return std::vector<Tensor>{std::move(d)};
                    });
    }

    // Row-wise softmax with max-subtraction. A rank-1 input is one row.
    NodeId softmax_row(NodeId a) {
        const Tensor& A = value(a);
        if (A.rank() != 1 && A.rank() != 2)
            throw ShapeError("softmax-row: input " + A.shape_str());
        Tensor C = A;
        const long rows = A.rank() == 2 ? A.rows() : 1;
        const long cols = A.rank() == 2 ? A.cols() : A.size();
        for (long i = 0; i < rows; ++i) {
            double* r = C.data() + i * cols;
            double mx = r[0];
            for (long j = 1; j < cols; ++j) mx = std::max(mx, r[j]);
            double s = 0.0;
            for (long j = 0; j < cols; ++j) {
                r[j] = std::exp(r[j] - mx);
                s += r[j];
            }
            for (long j = 0; j < cols; ++j) r[j] /= s;
        }
        return push("softmax-row", std::move(C), {a},
                    [rows, cols](const Tape& t, NodeId self, const Tensor& adj) {
                        const Tensor& S = t.value(self);
                        Tensor d = adj;
                        for (long i = 0; i < rows; ++i) {
                            const double* s = S.data() + i * cols;
                            double* g = d.data() + i * cols;
                            double dot = 0.0;
                            for (long j = 0; j < cols; ++j) dot += g[j] * s[j];
                            for (long j = 0; j < cols; ++j) g[j] = s[j] * (g[j] - dot);
                        }
                        return std::vector<Tensor>{std::move(d)};
                    });
    }

    NodeId log(NodeId a) {
        const Tensor& A = value(a);
        Tensor C = A;
        for (long i = 0; i < C.size(); ++i) {
            if (!(C[i] > 0.0))
                throw DomainError("log: non-positive input " + std::to_string(C[i]) +
                                  " at flat index " + std::to_string(i));
            C[i] = std::log(C[i]);
        }
        return push("log", std::move(C), {a},
                    [](const Tape& t, NodeId self, const Tensor& adj) {
                        const auto& node = t.nodes_[static_cast<size_t>(self)];
                        const Tensor& A = t.value(node.parents[0]);
                        Tensor d = adj;
                        for (long i = 0; i < d.size(); ++i) d[i] /= A[i];
                        return std::vector<Tensor>{std::move(d)};
                    });
    }

    NodeId exp(NodeId a) {
        Tensor C = value(a);
        for (long i = 0; i < C.size(); ++i) C[i] = std::exp(C[i]);
        return push("exp", std::move(C), {a},
                    [](const Tape& t, NodeId self, const Tensor& adj) {
                        const Tensor& E = t.value(self);
                        Tensor d = adj;
                        for (long i = 0; i < d.size(); ++i) d[i] *= E[i];
                        return std::vector<Tensor>{std::move(d)};
                    });
    }

    NodeId sum(NodeId a) {
        const Tensor& A = value(a);
        double s = 0.0;
        for (long i = 0; i < A.size(); ++i) s += A[i];
        return push("sum", Tensor::scalar(s), {a},
                    [](const Tape& t, NodeId self, const Tensor& adj) {
                        const auto& node = t.nodes_[static_cast<size_t>(self)];
                        const Tensor& A = t.value(node.parents[0]);
                        Tensor d(A.shape());
                        const double g = adj.item();
                        for (long i = 0; i < d.size(); ++i) d[i] = g;
                        return std::vector<Tensor>{std::move(d)};
                    });
    }

    NodeId mean(NodeId a) {
        const Tensor& A = value(a);
        double s = 0.0;
        for (long i = 0; i < A.size(); ++i) s += A[i];
        const double n = static_cast<double>(A.size());
        return push("mean", Tensor::scalar(s / n), {a},
                    [n](const Tape& t, NodeId self, const Tensor& adj) {
                        const auto& node = t.nodes_[static_cast<size_t>(self)];
                        const Tensor& A = t.value(node.parents[0]);
                        Tensor d(A.shape());
                        const double g = adj.item() / n;
                        for (long i = 0; i < d.size(); ++i) d[i] = g;
                        return std::vector<Tensor>{std::move(d)};
                    });
    }

    // D(i, j) = squared Euclidean distance between row i of a and row j of b.
    NodeId squared_euclidean_rows(NodeId a, NodeId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.cols())
            throw ShapeError("squared-euclidean-rows: lhs " + A.shape_str() + " rhs " + B.shape_str());
        const long m = A.rows(), n = B.rows(), d = A.cols();
        Tensor D({m, n});
        for (long i = 0; i < m; ++i)
            for (long j = 0; j < n; ++j) {
                double s = 0.0;
                for (long k = 0; k < d; ++k) {
                    const double diff = A(i, k) - B(j, k);
                    s += diff * diff;
                }
                D(i, j) = s;
            }
        return push("squared-euclidean-rows", std::move(D), {a, b},
                    [](const Tape& t, NodeId self, const Tensor& adj) {
                        const auto& node = t.nodes_[static_cast<size_t>(self)];
                        const Tensor& A = t.value(node.parents[0]);
                        const Tensor& B = t.value(node.parents[1]);
                        const long m = A.rows(), n = B.rows(), d = A.cols();
                        Tensor dA({m, d});
                        Tensor dB({n, d});
                        for (long i = 0; i < m; ++i)
                            for (long j = 0; j < n; ++j) {
                                const double g = 2.0 * adj(i, j);
                                for (long k = 0; k < d; ++k) {
                                    const double diff = A(i, k) - B(j, k);
                                    dA(i, k) += g * diff;
                                    dB(j, k) -= g * diff;
                                }
                            }
                        return std::vector<Tensor>{std::move(dA), std::move(dB)};
                    });
    }

    NodeId dot(NodeId a, NodeId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.rank() != 1 || !A.same_shape(B))
            throw ShapeError("dot: lhs " + A.shape_str() + " rhs " + B.shape_str());
        double s = 0.0;
        for (long i = 0; i < A.size(); ++i) s += A[i] * B[i];
        return push("dot", Tensor::scalar(s), {a, b},
                    [](const Tape& t, NodeId self, const Tensor& adj) {
                        const auto& node = t.nodes_[static_cast<size_t>(self)];
                        const Tensor& A = t.value(node.parents[0]);
                        const Tensor& B = t.value(node.parents[1]);
                        const double g = adj.item();
                        Tensor dA = B;
                        Tensor dB = A;
                        for (long i = 0; i < dA.size(); ++i) {
                            dA[i] *= g;
                            dB[i] *= g;
                        }
                        return std::vector<Tensor>{std::move(dA), std::move(dB)};
                    });
    }

    // Extract row i of a matrix as a rank-1 tensor.
    NodeId row(NodeId a, long i) {
        const Tensor& A = value(a);
        if (A.rank() != 2 || i < 0 || i >= A.rows())
            throw ShapeError("row: index " + std::to_string(i) + " of " + A.shape_str());
        Tensor r({A.cols()});
        for (long j = 0; j < A.cols(); ++j) r[j] = A(i, j);
        return push("row", std::move(r), {a},
                    [i](const Tape& t, NodeId self, const Tensor& adj) {
                        const auto& node = t.nodes_[static_cast<size_t>(self)];
                        const Tensor& A = t.value(node.parents[0]);
                        Tensor dA(A.shape());
                        for (long j = 0; j < A.cols(); ++j) dA(i, j) = adj[j];
                        return std::vector<Tensor>{std::move(dA)};
                    });
    }

    // Select one component of a rank-1 tensor as a scalar.
    NodeId pick(NodeId a, long i) {
        const Tensor& A = value(a);
        if (A.rank() != 1 || i < 0 || i >= A.size())
            throw ShapeError("pick: index " + std::to_string(i) + " of " + A.shape_str());
        return push("pick", Tensor::scalar(A[i]), {a},
                    [i](const Tape& t, NodeId self, const Tensor& adj) {
                        const auto& node = t.nodes_[static_cast<size_t>(self)];
                        const Tensor& A = t.value(node.parents[0]);
                        Tensor dA(A.shape());
                        dA[i] = adj.item();
                        return std::vector<Tensor>{std::move(dA)};
                    });
    }

    // Identity whose upstream contributions are dropped in backward.
    NodeId stop_gradient(NodeId a) {
        NodeId id = push("stop-gradient", value(a), {a}, nullptr);
        nodes_[static_cast<size_t>(id)].scope = GradScope::stop_grad;
        return id;
    }

    // Identity that restricts everything upstream of it to the
    // feature-extractor parameter group.
    NodeId feature_scope(NodeId a) {
        NodeId id = push("feature-scope", value(a), {a},
                         [](const Tape&, NodeId, const Tensor& adj) {
                             return std::vector<Tensor>{adj};
                         });
        nodes_[static_cast<size_t>(id)].scope = GradScope::feature_only;
        return id;
    }

    // Escape hatch for ops with externally computed forward/backward
    // (the GP context-label node lives on top of this).
    NodeId custom(const char* tag, Tensor value, std::vector<NodeId> parents, Vjp vjp) {
        return push(tag, std::move(value), std::move(parents), std::move(vjp));
    }

    // ----- backward ---------------------------------------------------
    //
    // Adjoints are tracked in two channels: "all" and "feature-only".
    // Passing through a feature_only-tagged node moves a contribution into
    // the feature channel permanently; classifier-head parameters only
    // collect from the "all" channel. This keeps scope routing exact
    // (head gradients are untouched by scoped terms, not merely +0).
    [[nodiscard]] GradientMap backward(NodeId root) const {
        const Tensor& rv = value(root);
        if (rv.size() != 1)
            throw Error("backward: root must be scalar, got shape " + rv.shape_str());

        const size_t n = nodes_.size();
        std::vector<std::optional<Tensor>> adj_all(n), adj_feat(n);

        const auto& root_node = nodes_[static_cast<size_t>(root)];
        if (root_node.scope != GradScope::stop_grad) {
            auto& seed = root_node.scope == GradScope::feature_only
                             ? adj_feat[static_cast<size_t>(root)]
                             : adj_all[static_cast<size_t>(root)];
            seed = Tensor(rv.shape());
            (*seed)[0] = 1.0;
        }

        for (NodeId id = root; id >= 0; --id) {
            const Node& node = nodes_[static_cast<size_t>(id)];
            if (node.scope == GradScope::stop_grad) continue;
            if (node.parents.empty()) continue;

            for (int channel = 0; channel < 2; ++channel) {
                auto& src = channel == 0 ? adj_all : adj_feat;
                if (!src[static_cast<size_t>(id)]) continue;
                const Tensor& adj = *src[static_cast<size_t>(id)];

                std::vector<Tensor> parts;
                if (node.vjp) {
                    parts = node.vjp(*this, id, adj);
                } else {
                    // identity pass-through (stop/scope/alias nodes)
                    parts.assign(1, adj);
                }
                const bool to_feature = node.scope == GradScope::feature_only;
                for (size_t p = 0; p < node.parents.size(); ++p) {
                    const NodeId parent = node.parents[p];
                    auto& dst_ch = (to_feature || channel == 1) ? adj_feat : adj_all;
                    auto& slot = dst_ch[static_cast<size_t>(parent)];
                    if (!slot) {
                        slot = std::move(parts[p]);
                    } else {
                        Tensor& acc = *slot;
                        const Tensor& part = parts[p];
                        for (long i = 0; i < acc.size(); ++i) acc[i] += part[i];
                    }
                }
            }
        }

        GradientMap map;
        for (size_t id = 0; id < n; ++id) {
            const Node& node = nodes_[id];
            if (!node.is_param) continue;
            Tensor g(node.value.shape());
            if (adj_all[id]) {
                const Tensor& a = *adj_all[id];
                for (long i = 0; i < g.size(); ++i) g[i] += a[i];
            }
            if (node.group == ParamGroup::feature_extractor && adj_feat[id]) {
                const Tensor& a = *adj_feat[id];
                for (long i = 0; i < g.size(); ++i) g[i] += a[i];
            }
            map.entries.push_back({static_cast<NodeId>(id), node.name, node.group, std::move(g)});
        }
        return map;
    }

  private:
    struct Node {
        const char* op = "";
        Tensor value;
        std::vector<NodeId> parents;
        Vjp vjp;
        GradScope scope = GradScope::all_params;
        bool is_param = false;
        ParamGroup group = ParamGroup::feature_extractor;
        std::string name;
    };

    NodeId push(const char* op, Tensor value, std::vector<NodeId> parents, Vjp vjp) {
        Node node;
        node.op = op;
        node.value = std::move(value);
        node.parents = std::move(parents);
        node.vjp = std::move(vjp);
        nodes_.push_back(std::move(node));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    // deque keeps node (and value) references stable across push_back,
    // so values read from the tape stay valid while the tape lives
    std::deque<Node> nodes_;
};

// ----- finite differences ----------------------------------------------

struct FdReport {
    double max_rel_error = 0.0;
    long worst_index = -1;
    long checked = 0;
    long skipped = 0;
};

// Builds a scalar graph from one parameter node.
using ScalarGraphFn = std::function<NodeId(Tape&, NodeId)>;

// Compares the taped gradient of f against central finite differences,
// coordinate by coordinate. Relative error is |analytic - numeric| /
// max(1, |analytic|). Coordinates flagged by `skip` (documented kinks
// such as relu inputs at exactly 0) are excluded.
inline FdReport finite_difference_check(const ScalarGraphFn& f, const Tensor& point,
                                        double step,
                                        const std::vector<bool>* skip = nullptr) {
    if (!(step > 0.0)) throw DomainError("finite_difference_check: step must be positive");

    Tape tape;
    NodeId p = tape.parameter(point, "p");
    NodeId root = f(tape, p);
    const Tensor analytic = tape.backward(root).at(p);

    const auto eval = [&f](const Tensor& x) {
        Tape t;
        NodeId px = t.parameter(x, "p");
        return t.value(f(t, px)).item();
    };

    FdReport report;
    for (long i = 0; i < point.size(); ++i) {
        if (skip && (*skip)[static_cast<size_t>(i)]) {
            ++report.skipped;
            continue;
        }
        Tensor lo = point, hi = point;
        lo[i] -= step;
        hi[i] += step;
        const double numeric = (eval(hi) - eval(lo)) / (2.0 * step);
        const double rel = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
        ++report.checked;
    }
    return report;
}

}  // namespace gpgl

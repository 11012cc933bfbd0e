#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gpgl/autodiff.hpp"
#include "gpgl/errors.hpp"
#include "gpgl/rng.hpp"
#include "gpgl/tensor.hpp"

namespace gpgl {

// Feed-forward classifier: hidden ReLU layers ending in the feature
// layer, then a linear head with row softmax. The last hidden width is
// the feature dimension d; with no hidden layers the inputs themselves
// are the features (a linear classifier).
struct ModelSpec {
    long input_dim = 0;
    std::vector<long> hidden_widths = {32, 32};
    long class_count = 0;
    std::string arch = "mlp";
    uint64_t init_seed = 0;

    [[nodiscard]] long feature_dim() const {
        return hidden_widths.empty() ? input_dim : hidden_widths.back();
    }

    void validate() const {
        if (arch != "mlp")
            throw ConfigError("ModelSpec: unsupported architecture '" + arch +
                              "' (only \"mlp\" is implemented; no image-shaped data "
                              "path exists for a conv variant)");
        if (input_dim < 1) throw ConfigError("ModelSpec: input_dim must be >= 1");
        if (class_count < 2) throw ConfigError("ModelSpec: class_count must be >= 2");
        if (feature_dim() < 1) throw ConfigError("ModelSpec: feature_dim must be >= 1");
        for (long w : hidden_widths)
            if (w < 1) throw ConfigError("ModelSpec: hidden widths must be >= 1");
    }
};

struct Parameter {
    std::string name;
    ParamGroup group = ParamGroup::feature_extractor;
    Tensor value;
};

class Mlp {
  public:
    explicit Mlp(ModelSpec spec) : spec_(std::move(spec)) {
        spec_.validate();
        std::vector<long> widths;
        widths.push_back(spec_.input_dim);
        for (long w : spec_.hidden_widths) widths.push_back(w);
        widths.push_back(spec_.class_count);

        for (size_t l = 0; l + 1 < widths.size(); ++l) {
            const long fan_in = widths[l], fan_out = widths[l + 1];
            const bool head = l + 2 == widths.size();
            const ParamGroup group =
                head ? ParamGroup::classifier_head : ParamGroup::feature_extractor;
            // He initialization; biases start at zero
            Rng rng(derive_seed(spec_.init_seed, "init", static_cast<uint64_t>(l)));
            const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
            Tensor W({fan_in, fan_out});
            for (long i = 0; i < W.size(); ++i) W[i] = rng.normal(0.0, std_dev);
            const std::string tag = head ? "head" : "layer" + std::to_string(l);
            params_.push_back({tag + ".W", group, std::move(W)});
            params_.push_back({tag + ".b", group, Tensor({fan_out})});
        }
    }

    [[nodiscard]] const ModelSpec& spec() const { return spec_; }
    [[nodiscard]] std::vector<Parameter>& params() { return params_; }
    [[nodiscard]] const std::vector<Parameter>& params() const { return params_; }

    struct Graph {
        std::vector<NodeId> param_ids;  // aligned with params()
        NodeId features = -1;           // |B| x d
        NodeId probs = -1;              // |B| x C simplex rows
    };

    // Registers all parameters on the tape and builds the forward graph
    // for a batch (rows of x).
    Graph build(Tape& tape, const Tensor& x) const {
        std::vector<NodeId> ids;
        ids.reserve(params_.size());
        for (const auto& p : params_)
            ids.push_back(tape.parameter(p.value, p.name, p.group));
        return build_with(tape, x, ids);
    }

    // Same forward graph over caller-supplied nodes (one per parameter, in
    // params() order). Gradient checks use this to vary a single parameter
    // while holding the rest constant.
    Graph build_with(Tape& tape, const Tensor& x, std::vector<NodeId> param_ids) const {
        if (x.rank() != 2 || x.cols() != spec_.input_dim)
            throw ShapeError("Mlp: batch " + x.shape_str() + " vs input_dim " +
                             std::to_string(spec_.input_dim));
        if (param_ids.size() != params_.size())
            throw ShapeError("Mlp: expected " + std::to_string(params_.size()) +
                             " parameter nodes, got " + std::to_string(param_ids.size()));
        Graph g;
        g.param_ids = std::move(param_ids);

        NodeId cur = tape.constant(x);
        const size_t layers = params_.size() / 2;
        for (size_t l = 0; l < layers; ++l) {
            const NodeId W = g.param_ids[2 * l];
            const NodeId b = g.param_ids[2 * l + 1];
            cur = tape.add(tape.matmul(cur, W), b);
            if (l + 1 < layers) {
                cur = tape.relu(cur);
                if (l + 2 == layers) g.features = cur;  // feature layer output
            }
        }
        if (g.features < 0) g.features = tape.constant(x);  // linear model: h = x
        g.probs = tape.softmax_row(cur);
        return g;
    }

    // Inference-mode forward: no gradient recording survives the call.
    [[nodiscard]] std::pair<Eigen::MatrixXd, Eigen::MatrixXd> forward_eval(
        const Eigen::Ref<const Eigen::MatrixXd>& X) const {
        Tape tape;
        Graph g = build(tape, to_tensor(X));
        return {to_eigen(tape.value(g.features)), to_eigen(tape.value(g.probs))};
    }

    // FeatureFn-compatible hook for anchor refreshes.
    [[nodiscard]] Eigen::MatrixXd features_eval(const Eigen::Ref<const Eigen::MatrixXd>& X) const {
        return forward_eval(X).first;
    }

    static Tensor to_tensor(const Eigen::Ref<const Eigen::MatrixXd>& X) {
        Tensor t({X.rows(), X.cols()});
        for (long i = 0; i < X.rows(); ++i)
            for (long j = 0; j < X.cols(); ++j) t(i, j) = X(i, j);
        return t;
    }

    static Eigen::MatrixXd to_eigen(const Tensor& t) {
        Eigen::MatrixXd m(t.rows(), t.cols());
        for (long i = 0; i < t.rows(); ++i)
            for (long j = 0; j < t.cols(); ++j) m(i, j) = t(i, j);
        return m;
    }

  private:
    ModelSpec spec_;
    std::vector<Parameter> params_;
};

}  // namespace gpgl

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gpgl/anchors.hpp"
#include "gpgl/autodiff.hpp"
#include "gpgl/dataset.hpp"
#include "gpgl/errors.hpp"
#include "gpgl/gp.hpp"
#include "gpgl/losses.hpp"
#include "gpgl/model.hpp"
#include "gpgl/rng.hpp"

namespace gpgl {

struct OptimizerConfig {
    // (epoch fraction, rate): the rate applies from that fraction of the
    // run onward. The default is the 0.1 -> 0.01 -> 0.001 step pattern.
    std::vector<std::pair<double, double>> lr_schedule = {{0.0, 0.1}, {0.6, 0.01}, {0.8, 0.001}};
    double momentum = 0.9;
    double weight_decay = 1e-4;
    long batch_size = 32;
    long epochs = 50;
    // lower bound on the tracked |L| magnitudes; they sit in the weight
    // denominators, and on easily-separated data the raw epoch means can
    // collapse toward zero and blow the beta/gamma weights up
    double magnitude_floor = 0.05;

    [[nodiscard]] double rate_at(long epoch, long total_epochs) const {
        const double f = static_cast<double>(epoch - 1) / static_cast<double>(total_epochs);
        double rate = lr_schedule.front().second;
        for (const auto& [frac, r] : lr_schedule)
            if (frac <= f) rate = r;
        return rate;
    }

    void validate() const {
        if (lr_schedule.empty() || lr_schedule.front().first > 0.0)
            throw ConfigError("OptimizerConfig: lr_schedule must start at fraction 0");
        for (size_t i = 0; i < lr_schedule.size(); ++i) {
            if (!(lr_schedule[i].second > 0.0))
                throw ConfigError("OptimizerConfig: rates must be positive");
            if (i > 0 && lr_schedule[i].first < lr_schedule[i - 1].first)
                throw ConfigError("OptimizerConfig: schedule fractions must be sorted");
        }
        if (!(momentum >= 0.0 && momentum < 1.0))
            throw ConfigError("OptimizerConfig: momentum must be in [0, 1)");
        if (weight_decay < 0.0) throw ConfigError("OptimizerConfig: negative weight_decay");
        if (batch_size < 1) throw ConfigError("OptimizerConfig: batch_size must be >= 1");
        if (epochs < 0) throw ConfigError("OptimizerConfig: negative epoch count");
        if (!(magnitude_floor > 0.0))
            throw ConfigError("OptimizerConfig: magnitude_floor must be positive");
    }
};

struct SgdState {
    std::vector<Tensor> velocity;  // aligned with the parameter list
};

// v <- momentum v + grad + weight_decay p;  p <- p - lr v
inline void sgd_momentum_step(std::vector<Parameter>& params, const GradientMap& grads,
                              SgdState& state, double lr, double momentum,
                              double weight_decay) {
    if (state.velocity.empty()) {
        state.velocity.reserve(params.size());
        for (const auto& p : params) state.velocity.emplace_back(p.value.shape());
    }
    if (grads.entries.size() != params.size())
        throw Error("sgd_momentum_step: gradient map does not cover the parameter list");
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& entry = grads.entries[i];
        if (entry.name != params[i].name)
            throw Error("sgd_momentum_step: parameter order mismatch at '" + entry.name + "'");
        Tensor& p = params[i].value;
        Tensor& v = state.velocity[i];
        const Tensor& g = entry.grad;
        for (long k = 0; k < p.size(); ++k) {
            v[k] = momentum * v[k] + g[k] + weight_decay * p[k];
            p[k] -= lr * v[k];
        }
    }
}

// ceil(n / batch) half-open ranges; the final batch keeps its short length.
inline std::vector<std::pair<long, long>> batch_ranges(long n, long batch_size) {
    std::vector<std::pair<long, long>> ranges;
    for (long start = 0; start < n; start += batch_size)
        ranges.emplace_back(start, std::min(batch_size, n - start));
    return ranges;
}

// Error rate with argmax ties broken toward the lowest class index.
inline double evaluate(const Mlp& model, const Dataset& data) {
    if (data.size() == 0) throw ConfigError("evaluate: empty dataset");
    const auto [features, probs] = model.forward_eval(data.inputs);
    long wrong = 0;
    for (long i = 0; i < probs.rows(); ++i) {
        long best = 0;
        for (long j = 1; j < probs.cols(); ++j)
            if (probs(i, j) > probs(i, best)) best = j;
        if (best != data.labels[static_cast<size_t>(i)]) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(probs.rows());
}

enum class Mode { baseline, gpgl };

inline const char* mode_name(Mode m) { return m == Mode::baseline ? "baseline" : "gpgl"; }

struct EpochStats {
    long epoch = 0;
    double train_error = 1.0;
    double val_error = 1.0;   // mu after this epoch's evaluation
    double mag_ce1 = 0.0;     // epoch means of |per-sample loss|
    double mag_kl = 0.0;
    double mag_ce2 = 0.0;
    double mean_gv = 0.0;
    double mean_topk_mass = 0.0;
    double wall_seconds = 0.0;  // console diagnostics only, never serialized
};

struct RunHistory {
    Mode mode = Mode::baseline;
    double initial_mu = 0.0;
    std::vector<EpochStats> epochs;
    double final_val_error = 1.0;

    // First epoch whose validation error reached the threshold, or -1.
    [[nodiscard]] long epochs_to_threshold(double threshold) const {
        for (const auto& e : epochs)
            if (e.val_error <= threshold) return e.epoch;
        return -1;
    }
};

struct ExperimentConfig {
    DatasetSpec dataset;
    ModelSpec model;  // input_dim / class_count are filled from the dataset
    OptimizerConfig optimizer;
    KernelConfig kernel;
    AnchorSpec anchors;

    uint64_t seed = 1;
    int seed_count = 1;
    std::string mode = "both";  // baseline | gpgl | both
    std::string out_dir = "out";
    double val_fraction = 0.1;
    std::optional<double> target_error;  // fixed epochs-to-threshold target
    std::optional<double> pin_mu;        // freeze mu (mu = 1 reduces to the baseline)
    bool swap_norm_denominators = false;

    void validate() const {
        dataset.validate();
        optimizer.validate();
        kernel.validate();
        if (mode != "baseline" && mode != "gpgl" && mode != "both")
            throw ConfigError("ExperimentConfig: mode must be baseline, gpgl or both");
        if (seed_count < 1) throw ConfigError("ExperimentConfig: seed_count must be >= 1");
        if (!(val_fraction > 0.0 && val_fraction < 1.0))
            throw ConfigError("ExperimentConfig: val_fraction must be in (0, 1)");
        if (pin_mu && !(*pin_mu >= 0.0 && *pin_mu <= 1.0))
            throw ConfigError("ExperimentConfig: pin_mu must be in [0, 1]");
        if (target_error && !(*target_error >= 0.0 && *target_error <= 1.0))
            throw ConfigError("ExperimentConfig: target_error must be in [0, 1]");
        // anchors.validate needs the class count; checked at run time
    }
};

using EpochObserver = std::function<void(long epoch, const Mlp& model)>;

// One mode's training run over a prepared train/val split. Baseline and
// gpgl runs with the same run_seed share the model init and the batch
// order; gpgl draws its anchor sampling from a separate stream.
class Trainer {
  public:
    Trainer(const ExperimentConfig& cfg, Mode mode, uint64_t run_seed, const Dataset& train,
            const Dataset& val)
        : cfg_(cfg),
          mode_(mode),
          run_seed_(run_seed),
          train_(train),
          val_(val),
          model_(resolved_model_spec(cfg, run_seed, train)) {
        if (cfg.optimizer.batch_size > train.size())
            throw ConfigError("Trainer: batch_size " + std::to_string(cfg.optimizer.batch_size) +
                              " exceeds training set size " + std::to_string(train.size()));
        mu_ = cfg.pin_mu ? *cfg.pin_mu
                         : 1.0 - 1.0 / static_cast<double>(train.class_count);
        if (mode_ == Mode::gpgl) {
            AnchorSpec spec = cfg.anchors;
            spec.seed = derive_seed(run_seed, "anchors");
            anchors_.emplace(AnchorSet::create(train.inputs, train.labels,
                                               static_cast<int>(train.class_count), spec,
                                               cfg.kernel));
        }
    }

    RunHistory run(const EpochObserver& observer = {}) {
        RunHistory history;
        history.mode = mode_;
        history.initial_mu = mu_;

        if (mode_ == Mode::gpgl) refresh_anchors();  // GP built before the first epoch

        for (long epoch = 1; epoch <= cfg_.optimizer.epochs; ++epoch) {
            EpochStats stats = run_epoch(epoch);
            history.epochs.push_back(stats);
            if (observer) observer(epoch, model_);
        }
        history.final_val_error =
            history.epochs.empty() ? history.initial_mu : history.epochs.back().val_error;
        return history;
    }

    [[nodiscard]] const Mlp& model() const { return model_; }
    [[nodiscard]] Mlp& model() { return model_; }
    [[nodiscard]] const AnchorSet& anchors() const { return *anchors_; }

  private:
    static ModelSpec resolved_model_spec(const ExperimentConfig& cfg, uint64_t run_seed,
                                         const Dataset& train) {
        ModelSpec spec = cfg.model;
        spec.input_dim = train.dim();
        spec.class_count = train.class_count;
        spec.init_seed = derive_seed(run_seed, "model-init");
        return spec;
    }

    void refresh_anchors() {
        anchors_->refresh_features(
            [this](const Eigen::MatrixXd& X) { return model_.features_eval(X); });
    }

    EpochStats run_epoch(long epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const long n = train_.size();
        const long batch_size = cfg_.optimizer.batch_size;
        const double lr = cfg_.optimizer.rate_at(epoch, cfg_.optimizer.epochs);

        std::vector<int> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(run_seed_, "shuffle", static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double sum_ce1 = 0.0, sum_kl = 0.0, sum_ce2 = 0.0, sum_gv = 0.0, sum_mass = 0.0;
        long train_wrong = 0, context_samples = 0;

        for (const auto& [start, len] : batch_ranges(n, batch_size)) {
            Tensor x({len, train_.dim()});
            std::vector<int> y(static_cast<size_t>(len));
            for (long b = 0; b < len; ++b) {
                const int rowi = order[static_cast<size_t>(start + b)];
                for (long j = 0; j < train_.dim(); ++j) x(b, j) = train_.inputs(rowi, j);
                y[static_cast<size_t>(b)] = train_.labels[static_cast<size_t>(rowi)];
            }

            Tape tape;
            Mlp::Graph graph = model_.build(tape, x);
            const Tensor& probs = tape.value(graph.probs);

            NodeId total = -1;
            for (long b = 0; b < len; ++b) {
                const int yb = y[static_cast<size_t>(b)];
                const NodeId yhat_row = tape.row(graph.probs, b);

                LossWeights w;  // baseline: alpha = 1, beta = gamma = 0
                NodeId ystar_node = -1;
                if (mode_ == Mode::gpgl) {
                    const NodeId h_row = tape.row(graph.features, b);
                    ContextLabel ctx;
                    ystar_node = anchors_->context_label_node(tape, h_row, yb, &ctx);
                    w = loss_weights(mu_, mag_ce1_, mag_ce2_, mag_kl_, ctx.g_v,
                                     cfg_.swap_norm_denominators);
                    sum_gv += ctx.g_v;
                    sum_mass += topk_mass(ctx.raw_mean, anchors_->spec().top_k,
                                          anchors_->spec().epsilon);
                    ++context_samples;
                }

                const SampleLossNodes terms = triangle_sample_loss(
                    tape, yhat_row, ystar_node, yb, w, cfg_.anchors.epsilon);

                sum_ce1 += std::abs(tape.value(terms.ce1).item());
                if (mode_ == Mode::gpgl) {
                    if (terms.kl >= 0) {
                        sum_kl += std::abs(tape.value(terms.kl).item());
                        sum_ce2 += std::abs(tape.value(terms.ce2).item());
                    } else {
                        // context terms skipped (weights exactly zero); keep the
                        // magnitude statistics from the values they would have had
                        const Tensor& ys = tape.value(ystar_node);
                        const Tensor& yh = tape.value(yhat_row);
                        const Eigen::VectorXd floored =
                            truncate_to_simplex(
                                Eigen::Map<const Eigen::VectorXd>(yh.data(), yh.size()),
                                static_cast<int>(yh.size()), cfg_.anchors.epsilon)
                                .y_star;
                        std::span<const double> ys_s(ys.data(), static_cast<size_t>(ys.size()));
                        std::span<const double> yf_s(floored.data(),
                                                     static_cast<size_t>(floored.size()));
                        sum_kl += std::abs(kl(ys_s, yf_s));
                        sum_ce2 += std::abs(ce2(ys_s, yb));
                    }
                }

                long best = 0;
                for (long j = 1; j < probs.cols(); ++j)
                    if (probs(b, j) > probs(b, best)) best = j;
                if (best != yb) ++train_wrong;

                total = b == 0 ? terms.weighted : tape.add(total, terms.weighted);
            }

            const NodeId loss = tape.scale(total, 1.0 / static_cast<double>(len));
            if (!tape.value(loss).all_finite())
                throw NumericError("train_epoch: non-finite loss at epoch " +
                                   std::to_string(epoch));
            const GradientMap grads = tape.backward(loss);
            sgd_momentum_step(model_.params(), grads, opt_state_, lr, cfg_.optimizer.momentum,
                              cfg_.optimizer.weight_decay);
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_error = static_cast<double>(train_wrong) / static_cast<double>(n);
        stats.val_error = evaluate(model_, val_);
        if (!cfg_.pin_mu) mu_ = stats.val_error;

        stats.mag_ce1 = sum_ce1 / static_cast<double>(n);
        mag_ce1_ = std::max(stats.mag_ce1, cfg_.optimizer.magnitude_floor);
        if (mode_ == Mode::gpgl) {
            stats.mag_kl = sum_kl / static_cast<double>(n);
            stats.mag_ce2 = sum_ce2 / static_cast<double>(n);
            mag_kl_ = std::max(stats.mag_kl, cfg_.optimizer.magnitude_floor);
            mag_ce2_ = std::max(stats.mag_ce2, cfg_.optimizer.magnitude_floor);
            stats.mean_gv = sum_gv / static_cast<double>(context_samples);
            stats.mean_topk_mass = sum_mass / static_cast<double>(context_samples);
            refresh_anchors();  // evaluation first, then the GP moves to the new feature space
        }

        stats.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return stats;
    }

    const ExperimentConfig& cfg_;
    Mode mode_;
    uint64_t run_seed_;
    const Dataset& train_;
    const Dataset& val_;
    Mlp model_;
    SgdState opt_state_;
    std::optional<AnchorSet> anchors_;
    double mu_ = 1.0;
    double mag_ce1_ = 1.0, mag_ce2_ = 1.0, mag_kl_ = 1.0;
};

// ----- experiment orchestration ---------------------------------------

struct PreparedData {
    Dataset train;
    Dataset val;
};

inline PreparedData prepare_data(const ExperimentConfig& cfg, uint64_t run_seed) {
    Dataset full = make_dataset(cfg.dataset, run_seed);
    full.validate();
    auto [train, val] = split_train_val(full, cfg.val_fraction, run_seed);
    if (cfg.dataset.standardize_enabled()) {
        const Dataset reference = train;
        standardize(train, reference);
        standardize(val, reference);
    }
    return {std::move(train), std::move(val)};
}

struct SeedComparison {
    uint64_t run_seed = 0;
    RunHistory baseline;
    RunHistory gpgl;
    double relative_threshold = 0.0;  // baseline final error + 1 point
    long baseline_epochs_to_rel = -1;
    long gpgl_epochs_to_rel = -1;
};

struct CompareResult {
    std::vector<SeedComparison> seeds;
    double mean_final_baseline = 0.0;
    double mean_final_gpgl = 0.0;
    // unreached thresholds count as epochs + 1
    double mean_epochs_to_rel_baseline = 0.0;
    double mean_epochs_to_rel_gpgl = 0.0;
};

inline RunHistory run_single(const ExperimentConfig& cfg, Mode mode, uint64_t run_seed,
                             const PreparedData& data, const EpochObserver& observer = {}) {
    Trainer trainer(cfg, mode, run_seed, data.train, data.val);
    return trainer.run(observer);
}

inline CompareResult run_compare(const ExperimentConfig& cfg) {
    cfg.validate();
    CompareResult result;
    double e2t_base = 0.0, e2t_gpgl = 0.0;
    for (int i = 0; i < cfg.seed_count; ++i) {
        const uint64_t run_seed = derive_seed(cfg.seed, "run", static_cast<uint64_t>(i));
        const PreparedData data = prepare_data(cfg, run_seed);

        SeedComparison cmp;
        cmp.run_seed = run_seed;
        cmp.baseline = run_single(cfg, Mode::baseline, run_seed, data);
        cmp.gpgl = run_single(cfg, Mode::gpgl, run_seed, data);
        cmp.relative_threshold = cmp.baseline.final_val_error + 0.01;
        cmp.baseline_epochs_to_rel = cmp.baseline.epochs_to_threshold(cmp.relative_threshold);
        cmp.gpgl_epochs_to_rel = cmp.gpgl.epochs_to_threshold(cmp.relative_threshold);

        result.mean_final_baseline += cmp.baseline.final_val_error;
        result.mean_final_gpgl += cmp.gpgl.final_val_error;
        const auto penalized = [&cfg](long e) {
            return e < 0 ? static_cast<double>(cfg.optimizer.epochs + 1)
                         : static_cast<double>(e);
        };
        e2t_base += penalized(cmp.baseline_epochs_to_rel);
        e2t_gpgl += penalized(cmp.gpgl_epochs_to_rel);
        result.seeds.push_back(std::move(cmp));
    }
    const double k = static_cast<double>(cfg.seed_count);
    result.mean_final_baseline /= k;
    result.mean_final_gpgl /= k;
    result.mean_epochs_to_rel_baseline = e2t_base / k;
    result.mean_epochs_to_rel_gpgl = e2t_gpgl / k;
    return result;
}

}  // namespace gpgl

#include "gpgl/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <map>

#include "gpgl/config.hpp"
#include "gpgl/metrics.hpp"
#include "oracles.hpp"

using namespace gpgl;

namespace {

ModelSpec tiny_spec(long input, std::vector<long> hidden, long classes, uint64_t seed = 3) {
    ModelSpec spec;
    spec.input_dim = input;
    spec.hidden_widths = std::move(hidden);
    spec.class_count = classes;
    spec.init_seed = seed;
    return spec;
}

void zero_params(Mlp& model) {
    for (auto& p : model.params())
        for (long i = 0; i < p.value.size(); ++i) p.value[i] = 0.0;
}

std::vector<std::vector<double>> param_bytes(const Mlp& model) {
    std::vector<std::vector<double>> out;
    for (const auto& p : model.params())
        out.emplace_back(p.value.values());
    return out;
}

}  // namespace

TEST(Model, ZeroHeadGivesUniformRows) {
    Mlp model(tiny_spec(3, {4}, 5));
    for (auto& p : model.params())
        if (p.group == ParamGroup::classifier_head)
            for (long i = 0; i < p.value.size(); ++i) p.value[i] = 0.0;
    Rng rng(2);
    const auto [h, probs] = model.forward_eval(oracle::random_matrix(4, 3, rng));
    for (long i = 0; i < 4; ++i)
        for (long j = 0; j < 5; ++j) EXPECT_DOUBLE_EQ(probs(i, j), 0.2);
}

TEST(Model, DuplicatedSampleGivesIdenticalRows) {
    Mlp model(tiny_spec(3, {8, 4}, 3));
    Eigen::MatrixXd x(2, 3);
    x << 0.5, -1.0, 0.25, 0.5, -1.0, 0.25;
    const auto [h, probs] = model.forward_eval(x);
    EXPECT_EQ(h.row(0), h.row(1));
    EXPECT_EQ(probs.row(0), probs.row(1));
}

TEST(Model, FixedSeedInitIsBitStable) {
    Mlp a(tiny_spec(4, {8}, 3, 77));
    Mlp b(tiny_spec(4, {8}, 3, 77));
    for (size_t i = 0; i < a.params().size(); ++i)
        EXPECT_EQ(a.params()[i].value.values(), b.params()[i].value.values());

    Rng rng(4);
    const Eigen::MatrixXd x = oracle::random_matrix(3, 4, rng);
    EXPECT_EQ(a.forward_eval(x).second, b.forward_eval(x).second);
}

TEST(Model, LinearVariantUsesInputsAsFeatures) {
    Mlp model(tiny_spec(3, {}, 2));
    Rng rng(5);
    const Eigen::MatrixXd x = oracle::random_matrix(2, 3, rng);
    const auto [h, probs] = model.forward_eval(x);
    EXPECT_EQ(h, x);
}

TEST(Model, TinyConvIsExplicitlyUnsupported) {
    ModelSpec spec = tiny_spec(4, {8}, 3);
    spec.arch = "tiny-conv";
    EXPECT_THROW(Mlp{spec}, ConfigError);
}

TEST(Sgd, PlainUpdateWithoutMomentumOrDecay) {
    Mlp model(tiny_spec(2, {}, 2));
    auto& params = model.params();
    const Tensor before = params[0].value;

    GradientMap grads;
    for (const auto& p : params) {
        Tensor g(p.value.shape());
        for (long i = 0; i < g.size(); ++i) g[i] = 2.0;
        grads.entries.push_back({0, p.name, p.group, g});
    }
    SgdState state;
    sgd_momentum_step(params, grads, state, 0.1, 0.0, 0.0);
    for (long i = 0; i < before.size(); ++i)
        EXPECT_NEAR(params[0].value[i], before[i] - 0.1 * 2.0, 1e-15);
}

TEST(Sgd, TwoStepsWithConstantGradAccumulateMomentum) {
    // unrolled by hand: displacement after two steps is -lr g (2 + m)
    Mlp model(tiny_spec(2, {}, 2));
    auto& params = model.params();
    const Tensor before = params[0].value;
    const double g0 = 0.7, lr = 0.05, m = 0.9;

    GradientMap grads;
    for (const auto& p : params) {
        Tensor g(p.value.shape());
        for (long i = 0; i < g.size(); ++i) g[i] = g0;
        grads.entries.push_back({0, p.name, p.group, g});
    }
    SgdState state;
    sgd_momentum_step(params, grads, state, lr, m, 0.0);
    sgd_momentum_step(params, grads, state, lr, m, 0.0);
    for (long i = 0; i < before.size(); ++i)
        EXPECT_NEAR(params[0].value[i], before[i] - lr * g0 * (2.0 + m), 1e-12);
}

TEST(Sgd, WeightDecayAloneScalesParameters) {
    Mlp model(tiny_spec(2, {}, 2));
    auto& params = model.params();
    const Tensor before = params[0].value;
    const double lr = 0.1, wd = 0.01;

    GradientMap grads;
    for (const auto& p : params)
        grads.entries.push_back({0, p.name, p.group, Tensor(p.value.shape())});
    SgdState state;
    sgd_momentum_step(params, grads, state, lr, 0.0, wd);
    for (long i = 0; i < before.size(); ++i)
        EXPECT_NEAR(params[0].value[i], before[i] * (1.0 - lr * wd), 1e-15);
}

TEST(Optimizer, ScheduleStepsAtFractions) {
    OptimizerConfig opt;
    opt.epochs = 50;
    EXPECT_DOUBLE_EQ(opt.rate_at(1, 50), 0.1);
    EXPECT_DOUBLE_EQ(opt.rate_at(30, 50), 0.1);
    EXPECT_DOUBLE_EQ(opt.rate_at(31, 50), 0.01);   // fraction 0.6
    EXPECT_DOUBLE_EQ(opt.rate_at(40, 50), 0.01);
    EXPECT_DOUBLE_EQ(opt.rate_at(41, 50), 0.001);  // fraction 0.8
    EXPECT_DOUBLE_EQ(opt.rate_at(50, 50), 0.001);
}

TEST(Optimizer, BatchRangesCoverWithShortTail) {
    const auto ranges = batch_ranges(10, 4);
    ASSERT_EQ(ranges.size(), 3u);  // ceil(10/4)
    EXPECT_EQ(ranges[0], std::make_pair(0L, 4L));
    EXPECT_EQ(ranges[1], std::make_pair(4L, 4L));
    EXPECT_EQ(ranges[2], std::make_pair(8L, 2L));  // short final batch kept
    EXPECT_EQ(batch_ranges(8, 4).size(), 2u);
}

TEST(Evaluate, UniformPredictionsFollowTieRule) {
    // zero weights -> uniform probabilities -> argmax tie resolves to class 0
    Mlp model(tiny_spec(2, {4}, 10));
    zero_params(model);
    Dataset data;
    data.class_count = 10;
    data.inputs = Eigen::MatrixXd::Zero(100, 2);
    data.labels.resize(100);
    for (int i = 0; i < 100; ++i) data.labels[static_cast<size_t>(i)] = i % 10;
    EXPECT_DOUBLE_EQ(evaluate(model, data), 0.9);
}

TEST(Evaluate, PerfectModelScoresZero) {
    Mlp model(tiny_spec(1, {}, 2));
    auto& params = model.params();
    // head.W 1x2: strongly positive logit for class 0 when x > 0
    params[0].value(0, 0) = 10.0;
    params[0].value(0, 1) = -10.0;
    for (long i = 0; i < params[1].value.size(); ++i) params[1].value[i] = 0.0;

    Dataset data;
    data.class_count = 2;
    data.inputs = Eigen::MatrixXd(4, 1);
    data.inputs << 1.0, -1.0, 2.0, -2.0;
    data.labels = {0, 1, 0, 1};
    EXPECT_DOUBLE_EQ(evaluate(model, data), 0.0);
}

namespace {

ExperimentConfig fast_cfg() {
    ExperimentConfig cfg = preset_blobs3_fast();
    cfg.seed = 17;
    cfg.seed_count = 1;
    return cfg;
}

}  // namespace

TEST(Trainer, InitialMuIsRandomGuessRate) {
    ExperimentConfig cfg = fast_cfg();
    cfg.optimizer.epochs = 0;
    const PreparedData data = prepare_data(cfg, 1);
    Trainer trainer(cfg, Mode::gpgl, 1, data.train, data.val);
    const RunHistory history = trainer.run();
    EXPECT_TRUE(history.epochs.empty());  // tau = 0: initial mu only
    EXPECT_DOUBLE_EQ(history.initial_mu, 1.0 - 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(history.final_val_error, history.initial_mu);
}

TEST(Trainer, PinnedMuOneMatchesBaselineBitExactly) {
    ExperimentConfig cfg = fast_cfg();
    cfg.optimizer.epochs = 3;
    cfg.pin_mu = 1.0;
    const uint64_t run_seed = derive_seed(cfg.seed, "run", 0);
    const PreparedData data = prepare_data(cfg, run_seed);

    std::map<long, std::vector<std::vector<double>>> base_params, gpgl_params;
    run_single(cfg, Mode::baseline, run_seed, data,
               [&](long e, const Mlp& m) { base_params[e] = param_bytes(m); });
    run_single(cfg, Mode::gpgl, run_seed, data,
               [&](long e, const Mlp& m) { gpgl_params[e] = param_bytes(m); });

    ASSERT_EQ(base_params.size(), 3u);
    for (long e = 1; e <= 3; ++e) {
        const auto& a = base_params[e];
        const auto& b = gpgl_params[e];
        ASSERT_EQ(a.size(), b.size());
        for (size_t i = 0; i < a.size(); ++i)
            EXPECT_EQ(a[i], b[i]) << "epoch " << e << " param " << i;
    }
}

TEST(Trainer, OneEpochBeatsRandomGuessOnBlobs) {
    int base_wins = 0, gpgl_wins = 0;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        ExperimentConfig cfg = fast_cfg();
        cfg.optimizer.epochs = 1;
        const PreparedData data = prepare_data(cfg, seed);
        const double base =
            run_single(cfg, Mode::baseline, seed, data).epochs.back().train_error;
        const double gp = run_single(cfg, Mode::gpgl, seed, data).epochs.back().train_error;
        if (base < 2.0 / 3.0) ++base_wins;
        if (gp < 2.0 / 3.0) ++gpgl_wins;
    }
    EXPECT_GE(base_wins, 4);
    EXPECT_GE(gpgl_wins, 4);
}

TEST(Trainer, GpglTracksContextStatistics) {
    ExperimentConfig cfg = fast_cfg();
    cfg.optimizer.epochs = 2;
    const PreparedData data = prepare_data(cfg, 3);
    const RunHistory history = run_single(cfg, Mode::gpgl, 3, data);
    for (const auto& e : history.epochs) {
        EXPECT_GE(e.mean_gv, 0.0);
        EXPECT_LE(e.mean_gv, 1.0);
        EXPECT_GT(e.mean_topk_mass, 0.0);
        EXPECT_LE(e.mean_topk_mass, 1.0 + 1e-12);
        EXPECT_GT(e.mag_kl, 0.0);
        EXPECT_GT(e.mag_ce2, 0.0);
    }
    // baseline leaves context stats at zero
    const RunHistory base = run_single(cfg, Mode::baseline, 3, data);
    for (const auto& e : base.epochs) {
        EXPECT_EQ(e.mean_gv, 0.0);
        EXPECT_EQ(e.mag_kl, 0.0);
    }
}

TEST(Trainer, BatchSizeLargerThanDatasetRejected) {
    ExperimentConfig cfg = fast_cfg();
    cfg.optimizer.batch_size = 100000;
    const PreparedData data = prepare_data(cfg, 1);
    EXPECT_THROW(Trainer(cfg, Mode::baseline, 1, data.train, data.val), ConfigError);
}

TEST(Compare, IdenticalConfigsProduceIdenticalHistories) {
    ExperimentConfig cfg = fast_cfg();
    cfg.seed_count = 2;
    const CompareResult a = run_compare(cfg);
    const CompareResult b = run_compare(cfg);

    ASSERT_EQ(a.seeds.size(), 2u);
    EXPECT_EQ(a.mean_final_baseline, b.mean_final_baseline);
    EXPECT_EQ(a.mean_final_gpgl, b.mean_final_gpgl);
    for (size_t s = 0; s < a.seeds.size(); ++s) {
        const auto& ea = a.seeds[s].gpgl.epochs;
        const auto& eb = b.seeds[s].gpgl.epochs;
        ASSERT_EQ(ea.size(), eb.size());
        for (size_t e = 0; e < ea.size(); ++e) {
            EXPECT_EQ(ea[e].train_error, eb[e].train_error);
            EXPECT_EQ(ea[e].val_error, eb[e].val_error);
            EXPECT_EQ(ea[e].mag_kl, eb[e].mag_kl);
        }
    }
    // and byte-identical serialized records
    const auto ra = compare_records(a, std::nullopt);
    const auto rb = compare_records(b, std::nullopt);
    ASSERT_EQ(ra.size(), rb.size());
    for (size_t i = 0; i < ra.size(); ++i) EXPECT_EQ(ra[i].dump(), rb[i].dump());
}

TEST(Compare, EpochsToThresholdReporting) {
    RunHistory h;
    h.mode = Mode::baseline;
    for (long e = 1; e <= 5; ++e) {
        EpochStats s;
        s.epoch = e;
        s.val_error = 1.0 / static_cast<double>(e + 1);
        h.epochs.push_back(s);
    }
    EXPECT_EQ(h.epochs_to_threshold(0.25), 3);   // first epoch at or below
    EXPECT_EQ(h.epochs_to_threshold(0.5), 1);
    EXPECT_EQ(h.epochs_to_threshold(0.01), -1);  // never reached
}

TEST(Config, JsonRoundTripPreservesEveryField) {
    ExperimentConfig cfg = preset_blobs10();
    cfg.seed = 123;
    cfg.pin_mu = 0.5;
    cfg.target_error = 0.2;
    cfg.swap_norm_denominators = true;
    cfg.anchors.c_cor = 3;
    const json j = config_to_json(cfg);
    const ExperimentConfig back = config_from_json(j);
    EXPECT_EQ(config_to_json(back).dump(), j.dump());
    EXPECT_EQ(back.anchors.c_cor, 3);
    EXPECT_EQ(back.seed, 123u);
    ASSERT_TRUE(back.pin_mu.has_value());
    EXPECT_EQ(*back.pin_mu, 0.5);
    EXPECT_TRUE(back.swap_norm_denominators);
}

TEST(Config, AllCcorSpelledOut) {
    ExperimentConfig cfg = preset_blobs3_fast();
    const json j = config_to_json(cfg);
    EXPECT_EQ(j["anchors"]["c_cor"], "all");
    EXPECT_EQ(config_from_json(j).anchors.c_cor, AnchorSpec::kAllClasses);
}

TEST(Config, UnknownPresetRejected) {
    EXPECT_THROW(preset_by_name("nope"), ConfigError);
    EXPECT_NO_THROW(preset_by_name("blobs10").validate());
    EXPECT_NO_THROW(preset_by_name("spiral2").validate());
    EXPECT_NO_THROW(preset_by_name("blobs3-fast").validate());
}

namespace {

// mean intra-class anchor feature distance over mean distance between
// class means; scale-invariant, so growing feature norms cancel out
double class_compactness(const AnchorSet& anchors) {
    const auto& f = anchors.features();
    double intra = 0.0;
    long pairs = 0;
    long row0 = 0;
    for (int c = 0; c < anchors.class_count(); ++c) {
        const long k = static_cast<long>(anchors.indices_by_class()[static_cast<size_t>(c)].size());
        for (long i = 0; i < k; ++i)
            for (long j = i + 1; j < k; ++j) {
                intra += (f.row(row0 + i) - f.row(row0 + j)).norm();
                ++pairs;
            }
        row0 += k;
    }
    const auto& m = anchors.class_means();
    double inter = 0.0;
    long mean_pairs = 0;
    for (int i = 0; i < anchors.class_count(); ++i)
        for (int j = i + 1; j < anchors.class_count(); ++j) {
            inter += (m.row(i) - m.row(j)).norm();
            ++mean_pairs;
        }
    return (intra / static_cast<double>(pairs)) / (inter / static_cast<double>(mean_pairs));
}

}  // namespace

TEST(Trainer, OneEpochTightensClassesInFeatureSpace) {
    int decreased = 0;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        ExperimentConfig cfg = fast_cfg();
        cfg.optimizer.epochs = 1;
        const PreparedData data = prepare_data(cfg, seed);
        AnchorSpec aspec = cfg.anchors;
        aspec.seed = derive_seed(seed, "anchors");
        AnchorSet anchors = AnchorSet::create(data.train.inputs, data.train.labels,
                                              static_cast<int>(data.train.class_count), aspec,
                                              cfg.kernel);
        Trainer trainer(cfg, Mode::gpgl, seed, data.train, data.val);
        const auto refresh = [&] {
            anchors.refresh_features(
                [&](const Eigen::MatrixXd& x) { return trainer.model().features_eval(x); });
        };
        refresh();
        const double before = class_compactness(anchors);
        trainer.run();
        refresh();
        if (class_compactness(anchors) < before) ++decreased;
    }
    EXPECT_GE(decreased, 4);
}

TEST(Trainer, SwapNormDenominatorsChangesTheRun) {
    ExperimentConfig cfg = fast_cfg();
    cfg.optimizer.epochs = 2;
    const PreparedData data = prepare_data(cfg, 5);
    const RunHistory plain = run_single(cfg, Mode::gpgl, 5, data);
    cfg.swap_norm_denominators = true;
    const RunHistory swapped = run_single(cfg, Mode::gpgl, 5, data);
    // identical first epoch stats are possible, but the trajectories must
    // diverge once the kl/ce2 magnitudes differ
    bool any_diff = false;
    for (size_t e = 0; e < plain.epochs.size(); ++e)
        if (plain.epochs[e].mag_kl != swapped.epochs[e].mag_kl ||
            plain.epochs[e].val_error != swapped.epochs[e].val_error)
            any_diff = true;
    EXPECT_TRUE(any_diff);
}

TEST(Config, Blobs10PresetSplitsTheAnchorBudget) {
    const ExperimentConfig cfg = preset_blobs10();
    EXPECT_EQ(cfg.anchors.per_class_count, 12);  // 128-anchor budget over 10 classes
    EXPECT_EQ(cfg.anchors.top_k, 5);
    EXPECT_EQ(cfg.dataset.classes, 10);
    EXPECT_EQ(cfg.dataset.dim, 8);
    EXPECT_EQ(cfg.dataset.per_class, 200);
    EXPECT_EQ(cfg.seed_count, 5);
}

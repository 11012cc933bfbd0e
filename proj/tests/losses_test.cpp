#include "gpgl/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "gpgl/model.hpp"
#include "gpgl/rng.hpp"
#include "gpgl/selftest.hpp"
#include "oracles.hpp"

using namespace gpgl;

namespace {

// frozen scalar references, computed independently of the implementation
constexpr double kMinusLog03 = 1.2039728043259361;   // -ln 0.3
constexpr double kMinusLog07 = 0.35667494393873245;  // -ln 0.7
constexpr double kLog10 = 2.302585092994046;         // ln 10
// 0.7 ln(0.7/0.5) + 0.3 ln(0.3/0.5)
constexpr double kKlSkewed = 0.08228287850505178;

std::vector<double> uniform(int c) { return std::vector<double>(c, 1.0 / c); }

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) &&
           std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<size_t>(a.size())) == 0;
}

}  // namespace

TEST(Ce1, PerfectPredictionIsNearZero) {
    const double eps = 1e-9;
    const std::vector<double> y_hat = {1.0 - eps, eps};
    EXPECT_NEAR(ce1(y_hat, 0), 0.0, 2e-9);
}

TEST(Ce1, UniformIsLogC) {
    EXPECT_NEAR(ce1(uniform(10), 3), kLog10, 1e-12);
}

TEST(Ce1, SkewedPair) {
    const std::vector<double> y_hat = {0.7, 0.3};
    EXPECT_NEAR(ce1(y_hat, 1), kMinusLog03, 1e-12);
}

TEST(Ce1, RejectsOutOfRangeAndZeroProbability) {
    EXPECT_THROW(ce1(uniform(3), 5), DomainError);
    const std::vector<double> degenerate = {1.0, 0.0};
    EXPECT_THROW(ce1(degenerate, 1), DomainError);
}

TEST(Kl, IdenticalDistributionsGiveZero) {
    const std::vector<double> p = {0.2, 0.5, 0.3};
    EXPECT_DOUBLE_EQ(kl(p, p), 0.0);
}

TEST(Kl, SkewedVsUniformPair) {
    const std::vector<double> y_star = {0.7, 0.3};
    const std::vector<double> y_hat = {0.5, 0.5};
    EXPECT_NEAR(kl(y_star, y_hat), kKlSkewed, 1e-12);
}

TEST(Kl, OneHotVsUniformReducesToLogC) {
    const double eps = 1e-6;
    std::vector<double> one_hot(10, eps / (1.0 + 9.0 * eps));
    one_hot[4] = 1.0 / (1.0 + 9.0 * eps);
    EXPECT_NEAR(kl(one_hot, uniform(10)), kLog10, 1e-3);  // up to floor effects
}

TEST(Kl, NonNegativeWithEqualityIffEqual) {
    for (uint64_t seed = 1; seed <= 200; ++seed) {
        Rng rng(seed);
        const int c = 2 + static_cast<int>(rng.integer(6));
        std::vector<double> p(c), q(c);
        double ps = 0.0, qs = 0.0;
        for (int j = 0; j < c; ++j) {
            p[j] = 1e-6 + rng.uniform();
            q[j] = 1e-6 + rng.uniform();
            ps += p[j];
            qs += q[j];
        }
        for (int j = 0; j < c; ++j) {
            p[j] /= ps;
            q[j] /= qs;
        }
        EXPECT_GE(kl(p, q), 0.0);
        EXPECT_GT(kl(p, q) + kl(q, p), 0.0);  // distinct with probability 1
    }
}

TEST(Kl, RejectsNonSimplexInput) {
    const std::vector<double> not_simplex = {0.9, 0.3};
    EXPECT_THROW(kl(not_simplex, uniform(2)), DomainError);
    const std::vector<double> has_zero = {1.0, 0.0};
    EXPECT_THROW(kl(has_zero, uniform(2)), DomainError);
}

TEST(Ce2, SpecValues) {
    const double eps = 1e-9;
    const std::vector<double> one_hot = {1.0 - eps, eps};
    EXPECT_NEAR(ce2(one_hot, 0), 0.0, 2e-9);
    const std::vector<double> skew = {0.7, 0.3};
    EXPECT_NEAR(ce2(skew, 0), kMinusLog07, 1e-12);
}

TEST(Weights, MuOneDegeneratesToPureCe1) {
    const LossWeights w = loss_weights(1.0, 1.0, 1.0, 1.0, 0.0);
    EXPECT_DOUBLE_EQ(w.alpha, 1.0);
    EXPECT_EQ(w.beta, 0.0);
    EXPECT_EQ(w.gamma, 0.0);
}

TEST(Weights, SpecSpotValues) {
    const LossWeights w = loss_weights(0.9, 1.0, 1.0, 1.0, 0.0);
    EXPECT_NEAR(w.alpha, 1.0 / 1.1, 1e-9);
    EXPECT_NEAR(w.alpha, 0.909091, 1e-6);
    EXPECT_NEAR(w.beta, 0.1 / 2.2, 1e-9);
    EXPECT_NEAR(w.beta, 0.045455, 1e-6);
    EXPECT_NEAR(w.gamma, w.beta, 1e-15);

    const LossWeights low_conf = loss_weights(0.9, 1.0, 1.0, 1.0, 1.0);
    EXPECT_NEAR(low_conf.beta, 0.022727, 1e-6);  // halved by (1 + g_v)
    EXPECT_NEAR(low_conf.gamma, low_conf.beta, 1e-15);
}

TEST(Weights, EqualMagnitudesMakeBetaEqualGamma) {
    const LossWeights w = loss_weights(0.4, 2.5, 0.7, 0.7, 0.3);
    EXPECT_EQ(w.beta, w.gamma);
}

TEST(Weights, SwapExchangesDenominators) {
    const LossWeights w = loss_weights(0.5, 1.0, 2.0, 4.0, 0.0);
    const LossWeights s = loss_weights(0.5, 1.0, 2.0, 4.0, 0.0, true);
    EXPECT_EQ(w.beta, s.gamma);
    EXPECT_EQ(w.gamma, s.beta);
}

TEST(Weights, AlphaRangeAndMonotonicity) {
    double prev_alpha = 0.0;
    for (int i = 0; i <= 10; ++i) {
        const double mu = i / 10.0;
        const LossWeights w = loss_weights(mu, 1.0, 1.0, 1.0, 0.0);
        EXPECT_GE(w.alpha, 0.5);
        EXPECT_LE(w.alpha, 1.0);
        EXPECT_GT(w.alpha, prev_alpha);  // increasing in mu
        prev_alpha = w.alpha;
    }
    // beta/gamma non-increasing in g_v and mu
    double prev_beta = 1e9;
    for (int i = 0; i <= 10; ++i) {
        const LossWeights w = loss_weights(0.5, 1.0, 1.0, 1.0, i / 5.0);
        EXPECT_LE(w.beta, prev_beta);
        prev_beta = w.beta;
    }
    prev_beta = 1e9;
    for (int i = 0; i <= 10; ++i) {
        const LossWeights w = loss_weights(i / 10.0, 1.0, 1.0, 1.0, 0.2);
        EXPECT_LE(w.beta, prev_beta);
        prev_beta = w.beta;
    }
}

TEST(Weights, PerSampleGvChangesWeightsWithinBatch) {
    const LossWeights a = loss_weights(0.6, 1.0, 1.0, 1.0, 0.05);
    const LossWeights b = loss_weights(0.6, 1.0, 1.0, 1.0, 0.8);
    EXPECT_NE(a.beta, b.beta);
    EXPECT_NE(a.gamma, b.gamma);
}

TEST(Weights, PreconditionsEnforced) {
    EXPECT_THROW(loss_weights(-0.1, 1.0, 1.0, 1.0, 0.0), DomainError);
    EXPECT_THROW(loss_weights(0.5, 0.0, 1.0, 1.0, 0.0), DomainError);
    EXPECT_THROW(loss_weights(0.5, 1.0, 1.0, 1.0, -1.0), DomainError);
}

namespace {

struct TinyGraph {
    Tape tape;
    NodeId w_feat, w_head;
    NodeId yhat_row, ystar;
};

// two-layer toy model with an explicit context-label constant
void build_tiny(TinyGraph& g, bool context_from_param = false) {
    Rng rng(31);
    const Tensor x = oracle::random_tensor({1, 3}, rng);
    const Tensor wf = oracle::random_tensor({3, 4}, rng);
    const Tensor wh = oracle::random_tensor({4, 3}, rng);
    g.w_feat = g.tape.parameter(wf, "feat.W", ParamGroup::feature_extractor);
    g.w_head = g.tape.parameter(wh, "head.W", ParamGroup::classifier_head);
    NodeId hidden = g.tape.relu(g.tape.matmul(g.tape.constant(x), g.w_feat));
    g.yhat_row = g.tape.row(g.tape.softmax_row(g.tape.matmul(hidden, g.w_head)), 0);
    if (context_from_param) {
        // y* depending on the extractor output only, as the GP path does
        NodeId squashed = g.tape.matmul(hidden, g.tape.constant(oracle::random_tensor(
                                                    {4, 3}, rng, -0.5, 0.5)));
        g.ystar = g.tape.softmax_row(g.tape.row(squashed, 0));
    } else {
        g.ystar = g.tape.constant(Tensor::vector({0.6, 0.3, 0.1}));
    }
}

}  // namespace

TEST(TriangleLoss, DegenerateWeightsMatchWeightedCe1Bitwise) {
    LossWeights w = loss_weights(1.0, 1.0, 1.0, 1.0, 0.0);
    TinyGraph a;
    build_tiny(a);
    const SampleLossNodes full = triangle_sample_loss(a.tape, a.yhat_row, a.ystar, 1, w);
    EXPECT_LT(full.kl, 0);  // context subgraph skipped entirely
    const GradientMap ga = a.tape.backward(full.weighted);

    TinyGraph b;
    build_tiny(b);
    const SampleLossNodes ce_only = triangle_sample_loss(b.tape, b.yhat_row, -1, 1, w);
    const GradientMap gb = b.tape.backward(ce_only.weighted);

    EXPECT_EQ(a.tape.value(full.weighted).item(), b.tape.value(ce_only.weighted).item());
    EXPECT_TRUE(bitwise_equal(ga.at("feat.W"), gb.at("feat.W")));
    EXPECT_TRUE(bitwise_equal(ga.at("head.W"), gb.at("head.W")));
}

TEST(TriangleLoss, Ce2AloneLeavesHeadUntouched) {
    TinyGraph g;
    build_tiny(g, true);
    const NodeId log_ystar = g.tape.log(g.ystar);
    const NodeId ce2_node = g.tape.feature_scope(g.tape.neg(g.tape.pick(log_ystar, 0)));
    const GradientMap grads = g.tape.backward(ce2_node);
    const Tensor& head = grads.at("head.W");
    for (long i = 0; i < head.size(); ++i) EXPECT_EQ(head[i], 0.0);
    double feat_norm = 0.0;
    const Tensor& feat = grads.at("feat.W");
    for (long i = 0; i < feat.size(); ++i) feat_norm += std::abs(feat[i]);
    EXPECT_GT(feat_norm, 0.0);
}

TEST(TriangleLoss, HeadGradEqualsCe1PlusKlAlone) {
    LossWeights w = loss_weights(0.6, 1.0, 1.0, 1.0, 0.2);

    TinyGraph a;
    build_tiny(a, true);
    const SampleLossNodes full = triangle_sample_loss(a.tape, a.yhat_row, a.ystar, 1, w);
    const GradientMap ga = a.tape.backward(full.weighted);

    TinyGraph b;
    build_tiny(b, true);
    const NodeId ce1_node = b.tape.neg(b.tape.log(b.tape.pick(b.yhat_row, 1)));
    const NodeId floored = simplex_truncate_node(b.tape, b.yhat_row, 3, 1e-6);
    const NodeId kl_node = b.tape.dot(
        b.ystar, b.tape.sub(b.tape.log(b.ystar), b.tape.log(floored)));
    const NodeId no_ce2 =
        b.tape.add(b.tape.scale(ce1_node, w.alpha), b.tape.scale(kl_node, w.beta));
    const GradientMap gb = b.tape.backward(no_ce2);

    EXPECT_TRUE(bitwise_equal(ga.at("head.W"), gb.at("head.W")));
}

TEST(TriangleLoss, NearFixedPointAllTermsVanish) {
    // prediction, context label and ground truth in agreement (components
    // kept above the simplex floor so the clamp is inactive)
    const double tail = 1e-5;
    const std::vector<double> agree = {1.0 - 2.0 * tail, tail, tail};
    Tape tape;
    const NodeId yhat = tape.constant(Tensor::vector({agree[0], agree[1], agree[2]}));
    const NodeId ystar = tape.constant(Tensor::vector({agree[0], agree[1], agree[2]}));
    const SampleLossNodes terms =
        triangle_sample_loss(tape, yhat, ystar, 0, loss_weights(0.1, 1.0, 1.0, 1.0, 0.0));
    EXPECT_NEAR(tape.value(terms.ce1).item(), 0.0, 1e-4);
    EXPECT_NEAR(tape.value(terms.kl).item(), 0.0, 1e-4);
    EXPECT_NEAR(tape.value(terms.ce2).item(), 0.0, 1e-4);
    EXPECT_NEAR(tape.value(terms.weighted).item(), 0.0, 1e-4);
}

TEST(TriangleLoss, FullGradientMatchesFiniteDifferences) {
    const GradcheckReport report = triangle_gradcheck(2024, 1e-5);
    EXPECT_LT(report.max_rel_error, 1e-3);
    EXPECT_GT(report.coords_checked, 200);
}

TEST(TriangleLoss, ScenarioBuildsContextTerms) {
    const TriangleScenario scenario = make_triangle_scenario(2024);
    for (const auto& w : scenario.weights) {
        EXPECT_GT(w.beta, 0.0);
        EXPECT_GT(w.gamma, 0.0);
    }
}

TEST(GradNorms, SplitByScope) {
    TinyGraph g;
    build_tiny(g);
    const SampleLossNodes terms = triangle_sample_loss(
        g.tape, g.yhat_row, g.ystar, 0, loss_weights(0.5, 1.0, 1.0, 1.0, 0.0));
    TriangleLossReport report;
    fill_grad_norms(report, g.tape.backward(terms.weighted));
    EXPECT_GT(report.grad_norm_feature, 0.0);
    EXPECT_GT(report.grad_norm_head, 0.0);
}

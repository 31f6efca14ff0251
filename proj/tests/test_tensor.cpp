#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "idkl/gradcheck.hpp"
#include "idkl/ops.hpp"
#include "support.hpp"

using namespace idkl;
using idkl::test::randn;

TEST(Tensor, ShapeMustMatchData) {
    EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
    EXPECT_THROW(Tensor({0, 3}, {}), DimensionError);
    const Tensor t({2, 3}, std::vector<double>(6, 1.0));
    EXPECT_EQ(t.numel(), shape_numel(t.shape()));
    EXPECT_EQ(Tensor::scalar(4.5).item(), 4.5);
    EXPECT_THROW(t.item(), DimensionError);
}

TEST(Tensor, DetachDropsTape) {
    Tape tape;
    const Tensor x = tape.watch(Tensor::scalar(2.0));
    EXPECT_TRUE(x.tracked());
    const Tensor d = x.detach();
    EXPECT_FALSE(d.tracked());
    EXPECT_EQ(d.item(), 2.0);
}

TEST(Matmul, IdentityAndProjector) {
    const Tensor eye({2, 2}, {1, 0, 0, 1});
    const Tensor m({2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(matmul(eye, m).vec(), m.vec());
    const Tensor proj({2, 2}, {1, 0, 0, 0});
    const Tensor b({2, 2}, {5, 6, 7, 8});
    EXPECT_EQ(matmul(proj, b).vec(), (std::vector<double>{5, 6, 0, 0}));
}

TEST(Matmul, InnerExtentMismatch) {
    EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
    const Tensor a = randn({3, 4}, 1);
    const Tensor b = randn({4, 2}, 2);
    const Tensor w = randn({3, 2}, 3);
    EXPECT_LT(test::grad_error([&](const Tensor& x) { return sum(mul(matmul(x, b), w)); }, a), 1e-6);
    EXPECT_LT(test::grad_error([&](const Tensor& x) { return sum(mul(matmul(a, x), w)); }, b), 1e-6);
}

TEST(Activation, ClosedForms) {
    EXPECT_NEAR(softplus(Tensor::scalar(0.0)).item(), std::numbers::ln2, 1e-15);
    EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
    EXPECT_EQ(relu(Tensor::scalar(-1.5)).item(), 0.0);
    EXPECT_DOUBLE_EQ(activation(Activation{ActivationKind::leaky_relu, 0.01}, Tensor::scalar(-1.5)).item(), -0.015);
}

TEST(Activation, SoftplusIsOverflowSafe) {
    EXPECT_EQ(softplus(Tensor::scalar(1000.0)).item(), 1000.0);
    EXPECT_EQ(softplus_value(31.0), 31.0);
    const double tiny = softplus(Tensor::scalar(-1000.0)).item();
    EXPECT_GE(tiny, 0.0);
    EXPECT_LT(tiny, 1e-300);
}

TEST(Activation, LeakySlopeMustBeInUnitInterval) {
    EXPECT_THROW(activation({ActivationKind::leaky_relu, 0.0}, Tensor::scalar(1.0)), ContractError);
    EXPECT_THROW(activation({ActivationKind::leaky_relu, 1.0}, Tensor::scalar(1.0)), ContractError);
}

TEST(Softmax, Examples) {
    EXPECT_EQ(softmax_rows(Tensor({1, 2}, {0, 0})).vec(), (std::vector<double>{0.5, 0.5}));
    const Tensor s = softmax_rows(Tensor({1, 2}, {0, std::log(3.0)}));
    EXPECT_NEAR(s[0], 0.25, 1e-15);
    EXPECT_NEAR(s[1], 0.75, 1e-15);
}

TEST(Softmax, RowsSumToOne) {
    const Tensor s = softmax_rows(randn({5, 7}, 4, 3.0));
    for (std::size_t i = 0; i < 5; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < 7; ++j) total += s[i * 7 + j];
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(Softmax, LargeLogitsStayFinite) {
    const Tensor s = softmax_rows(Tensor({1, 3}, {1000.0, 999.0, -1000.0}));
    EXPECT_NEAR(s[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
}

TEST(KlRows, IdenticalIsZero) {
    const Tensor p({1, 2}, {0.3, 0.7});
    EXPECT_EQ(kl_rows(p, p).item(), 0.0);
}

TEST(KlRows, HandComputedExample) {
    const double expected = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
    EXPECT_NEAR(kl_rows(Tensor({1, 2}, {0.5, 0.5}), Tensor({1, 2}, {0.25, 0.75})).item(), expected, 1e-15);
    EXPECT_NEAR(expected, 0.143841, 1e-6);
}

TEST(KlRows, ZeroEntriesOfPContributeNothing) {
    EXPECT_NEAR(kl_rows(Tensor({1, 2}, {1.0, 0.0}), Tensor({1, 2}, {0.5, 0.5})).item(), std::log(2.0), 1e-15);
}

TEST(KlRows, RowMeanAndNonNegative) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Tensor p = softmax_rows(randn({4, 6}, seed, 2.0));
        const Tensor q = softmax_rows(randn({4, 6}, seed + 100, 2.0));
        EXPECT_GE(kl_rows(p, q).item(), -1e-12);
        EXPECT_NEAR(kl_rows(p, p).item(), 0.0, 1e-15);
    }
}

TEST(KlRows, RejectsNonStochasticInput) {
    EXPECT_THROW(kl_rows(Tensor({1, 2}, {0.5, 0.6}), Tensor({1, 2}, {0.5, 0.5})), ContractError);
    EXPECT_THROW(kl_rows(Tensor({1, 2}, {1.5, -0.5}), Tensor({1, 2}, {0.5, 0.5})), ContractError);
    EXPECT_THROW(kl_rows(Tensor({1, 2}, {0.5, 0.5}), Tensor({1, 2}, {0.2, 0.2})), ContractError);
}

TEST(KlRows, GradientWithRespectToQLogits) {
    const Tensor p = softmax_rows(randn({3, 4}, 5));
    const Tensor logits = randn({3, 4}, 6);
    EXPECT_LT(test::grad_error([&](const Tensor& z) { return kl_rows(p, softmax_rows(z)); }, logits), 1e-5);
}

TEST(Reduce, Examples) {
    EXPECT_EQ(mean(Tensor({4}, {1, 2, 3, 4})).item(), 2.5);
    EXPECT_EQ(reduce(ReduceKind::sum, Tensor({2, 2}, {1, 2, 3, 4}), {0}).vec(), (std::vector<double>{4, 6}));
    EXPECT_DOUBLE_EQ(population_variance(Tensor({4}, {1, 2, 3, 4}), {0}).item(), 1.25);
}

TEST(Reduce, AxisErrors) {
    EXPECT_THROW(reduce(ReduceKind::mean, Tensor::zeros({2, 2}), {}), DimensionError);
    EXPECT_THROW(reduce(ReduceKind::mean, Tensor::zeros({2, 2}), {2}), DimensionError);
}

TEST(Backward, SumGivesOnes) {
    const Tensor g = test::analytic_grad([](const Tensor& x) { return sum(x); }, randn({3, 2}, 7));
    EXPECT_EQ(g.vec(), std::vector<double>(6, 1.0));
}

TEST(Backward, HalfSquaredNormGivesInput) {
    const Tensor x = randn({5}, 8);
    const Tensor g = test::analytic_grad([](const Tensor& v) { return scale(sum(mul(v, v)), 0.5); }, x);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(g[i], x[i]);
}

TEST(Backward, RequiresTrackedScalar) {
    Tape tape;
    EXPECT_THROW(tape.backward(Tensor::scalar(1.0)), std::logic_error);
    const Tensor x = tape.watch(Tensor::zeros({2}));
    EXPECT_THROW(tape.backward(x), DimensionError);
    Tape other;
    const Tensor y = other.watch(Tensor::scalar(1.0));
    EXPECT_THROW(tape.backward(y), std::logic_error);
}

TEST(Backward, RejectsTensorsFromAnotherTape) {
    Tape a, b;
    const Tensor x = a.watch(Tensor::scalar(1.0));
    const Tensor y = b.watch(Tensor::scalar(2.0));
    EXPECT_THROW(add(x, y), std::logic_error);
}

TEST(Backward, DeterministicBitIdentical) {
    Tape tape;
    const Tensor x = tape.watch(randn({4, 3}, 9));
    const Tensor loss = kl_rows(softmax_rows(x), softmax_rows(scale(x, 0.5)));
    const Tensor g1 = tape.backward(loss).grad(x);
    const Tensor g2 = tape.backward(loss).grad(x);
    EXPECT_EQ(g1.vec(), g2.vec());
}

TEST(Backward, VisitsEachNodeOnceInTopologicalOrder) {
    Tape tape;
    const Tensor x = tape.watch(Tensor::scalar(3.0));
    int calls = 0;
    const Tensor counted = make_result("counted", {}, {x.item()}, {x},
                                       [&calls](std::span<const double> g, std::span<const GradSpan> gin) {
                                           ++calls;
                                           gin[0][0] += g[0];
                                       });
    // Diamond: the counted node feeds two paths.
    const Tensor loss = add(mul(counted, counted), scale(counted, 2.0));
    const Tensor g = tape.backward(loss).grad(x);
    EXPECT_EQ(calls, 1);
    EXPECT_DOUBLE_EQ(g.item(), 2.0 * 3.0 + 2.0);
    for (NodeId id = 0; id < tape.size(); ++id) {
        for (NodeId parent : tape.parents(id)) {
            if (parent != kNoNode) EXPECT_LT(parent, id);
        }
    }
}

TEST(Backward, UnreachedLeafGetsZeros) {
    Tape tape;
    const Tensor x = tape.watch(Tensor::zeros({3}));
    const Tensor y = tape.watch(Tensor::scalar(2.0));
    const Gradients g = tape.backward(mul(y, y));
    EXPECT_FALSE(g.reached(x));
    EXPECT_EQ(g.grad(x).vec(), std::vector<double>(3, 0.0));
}

TEST(NonFinite, ForwardOpIsNamed) {
    try {
        scale(Tensor::scalar(1e308), 10.0);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("scale"), std::string::npos);
    }
}

TEST(Distance, Examples) {
    const Tensor a = randn({4, 3}, 10);
    const Tensor d = euclidean_distance_matrix(a, a);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(d[i * 4 + i], 0.0);
        for (std::size_t j = 0; j < 4; ++j) {
            EXPECT_NEAR(d[i * 4 + j], d[j * 4 + i], 1e-12);
            EXPECT_GE(d[i * 4 + j], 0.0);
        }
    }
    EXPECT_EQ(euclidean_distance_matrix(Tensor({1, 2}, {0, 0}), Tensor({1, 2}, {3, 4})).item(), 5.0);
    EXPECT_THROW(euclidean_distance_matrix(Tensor::zeros({2, 3}), Tensor::zeros({2, 2})), DimensionError);
}

TEST(Distance, ZeroDistanceHasZeroSubgradient) {
    const Tensor a = randn({2, 3}, 11);
    const Tensor g = test::analytic_grad([](const Tensor& x) { return sum(euclidean_distance_matrix(x, x)); }, a);
    for (double v : g.vec()) EXPECT_TRUE(std::isfinite(v));
}

TEST(ShapeOps, Errors) {
    EXPECT_THROW(reshape(Tensor::zeros({2, 3}), {4}), DimensionError);
    EXPECT_THROW(slice_rows(Tensor::zeros({3, 2}), 2, 4), DimensionError);
    EXPECT_THROW(gather_cols(Tensor::zeros({2, 2}), {0, 2}), DimensionError);
    EXPECT_THROW(gather_cols(Tensor::zeros({2, 2}), {0}), DimensionError);
}

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, CentralDifferencesOnTenInstances) {
    const auto& op = gradcheck::op_registry().at(GetParam());
    const gradcheck::OpResult r = gradcheck::check_op(op, 10, 1e-5, 1e-4, 1234);
    EXPECT_EQ(r.instances, 10u);
    EXPECT_TRUE(r.pass) << op.name << " max rel err " << r.max_rel_err;
}

INSTANTIATE_TEST_SUITE_P(Registry, OpGradient, ::testing::Range<std::size_t>(0, gradcheck::op_registry().size()),
                         [](const auto& info) { return gradcheck::op_registry()[info.param].name; });

TEST(OpGradient, CorruptedBackwardIsCaughtAndNamed) {
    gradcheck::OpCase bad{
        "corrupted_square", [](std::mt19937_64& r) { return std::vector<Tensor>{test::randn({4}, r())}; },
        [](const std::vector<Tensor>& x) {
            std::vector<double> out(x[0].numel());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[0][i] * x[0][i];
            const Tensor in = x[0];
            return make_result("corrupted_square", in.shape(), std::move(out), {in},
                               [in](std::span<const double> g, std::span<const GradSpan> gin) {
                                   for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += 3.0 * in[i] * g[i];
                               });
        }};
    const gradcheck::OpResult r = gradcheck::check_op(bad, 10, 1e-5, 1e-4, 1);
    EXPECT_FALSE(r.pass);
    EXPECT_EQ(r.op, "corrupted_square");
    EXPECT_GT(r.max_rel_err, 0.1);
}

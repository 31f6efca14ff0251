#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "idkl/gradcheck.hpp"
#include "idkl/layers.hpp"
#include "idkl/ops.hpp"
#include "idkl/purifier.hpp"
#include "support.hpp"

using namespace idkl;
using namespace idkl::purifier;
using idkl::test::randn;

namespace {

const Tensor kP = Tensor::scalar(3.0);

std::vector<std::size_t> labels(std::size_t n_ids, std::size_t k) {
    std::vector<std::size_t> y;
    for (int half = 0; half < 2; ++half) {
        for (std::size_t i = 0; i < n_ids; ++i) {
            for (std::size_t j = 0; j < k; ++j) y.push_back(i);
        }
    }
    return y;
}

}  // namespace

TEST(Purify, SaturatedMasks) {
    const Tensor F = test::uniform({4, 3, 2, 2}, 1, 0.1, 2.0);
    const auto out = purify_with_masks(F, Tensor::full({4, 3}, 1.0), Tensor::full({4, 3}, 1.0), kP);
    const Tensor expected = add(layers::instance_norm(F), F);
    for (std::size_t i = 0; i < F.numel(); ++i) EXPECT_DOUBLE_EQ(out.F_tilde[i], expected[i]);
    EXPECT_EQ(out.F_tilde.shape(), F.shape());
}

TEST(Purify, HalfMasks) {
    const Tensor F = test::uniform({4, 3, 2, 2}, 2, 0.1, 2.0);
    const auto out = purify_with_masks(F, Tensor::full({4, 3}, 0.5), Tensor::full({4, 3}, 0.5), kP);
    const Tensor Fh = layers::instance_norm(F);
    for (std::size_t i = 0; i < F.numel(); ++i) EXPECT_NEAR(out.F_tilde[i], 0.25 * (Fh[i] + F[i]), 1e-15);
}

TEST(Purify, ConstantMaskAlgebra) {
    const Tensor F = randn({2, 3, 3, 3}, 3);
    const Tensor Fh = layers::instance_norm(F);
    for (double m : {0.1, 0.37, 0.9}) {
        const auto out = purify_with_masks(F, Tensor::full({2, 3}, m), Tensor::full({2, 3}, m), kP);
        for (std::size_t i = 0; i < F.numel(); ++i) EXPECT_NEAR(out.F_tilde[i], m * m * (Fh[i] + F[i]), 1e-14);
    }
}

TEST(Purify, LearnedMasksAreInUnitInterval) {
    std::mt19937_64 rng(4);
    model::PurifierParams p{layers::make_mask(6, 16, rng), layers::make_mask(6, 16, rng)};
    const Tensor F = test::uniform({4, 6, 3, 3}, 5, 0.0, 2.0);
    const auto out = purify(F, p, kP);
    EXPECT_EQ(out.m_e.shape(), (Shape{4, 6}));
    for (double v : out.m_e.vec()) EXPECT_TRUE(v > 0.0 && v < 1.0);
    for (double v : out.m_r.vec()) EXPECT_TRUE(v > 0.0 && v < 1.0);
    EXPECT_EQ(out.F_tilde.shape(), F.shape());
    EXPECT_EQ(out.f_tilde.shape(), (Shape{4, 6}));
}

TEST(LossE, ClosedForms) {
    EXPECT_NEAR(loss_e_value(1.3, 1.3), std::numbers::ln2, 1e-15);
    EXPECT_NEAR(loss_e_value(0.0, 20.0), std::log1p(std::exp(-20.0)), 1e-22);
    EXPECT_NEAR(loss_e_value(0.0, 20.0), 2.06e-9, 0.01e-9);
}

TEST(LossE, EqualEntropiesGiveLn2) {
    // Enhancement mask of 1 makes f_dplus equal to f_sp.
    const Tensor F = test::uniform({4, 3, 2, 2}, 6, 0.1, 2.0);
    const auto out = purify_with_masks(F, Tensor::full({4, 3}, 1.0), Tensor::full({4, 3}, 0.5), kP);
    const layers::LinearParams c{randn({2, 3}, 7), std::nullopt};
    const Tensor e = loss_e(out, layers::gem_pool(F, kP), labels(2, 1), c);
    EXPECT_NEAR(e.item(), std::numbers::ln2, 1e-9);
}

TEST(LossE, ReferenceIsDetached) {
    const Tensor F = test::uniform({4, 3, 2, 2}, 8, 0.1, 2.0);
    const layers::LinearParams c{randn({2, 3}, 9), std::nullopt};
    Tape tape;
    const Tensor f_sp = tape.watch(layers::gem_pool(F, kP));
    const Tensor m_e = tape.watch(Tensor::full({4, 3}, 0.7));
    const auto out = purify_with_masks(F, m_e, Tensor::full({4, 3}, 0.5), kP);
    const Gradients g = tape.backward(loss_e(out, f_sp, labels(2, 1), c));
    EXPECT_FALSE(g.reached(f_sp));
    EXPECT_TRUE(g.reached(m_e));
}

TEST(LossR, EqualDistancesGiveLn2) {
    const Tensor F = test::uniform({4, 3, 2, 2}, 10, 0.1, 2.0);
    const auto out = purify_with_masks(F, Tensor::full({4, 3}, 0.5), Tensor::full({4, 3}, 1.0), kP);
    EXPECT_NEAR(loss_r(out).item(), std::numbers::ln2, 1e-9);
    EXPECT_NEAR(loss_r(out, ModalityDistance::paired).item(), std::numbers::ln2, 1e-9);
}

TEST(LossR, CollapsedMaskedMeansGiveClosedForm) {
    const Tensor F = test::uniform({4, 3, 2, 2}, 11, 0.1, 2.0);
    // A vanishing reduction mask collapses the masked features to the GeM clamp in both modalities.
    const auto out = purify_with_masks(F, Tensor::full({4, 3}, 0.5), Tensor::full({4, 3}, 1e-12), kP);
    const double c = modality_distance(out.f_hat).item();
    ASSERT_GT(c, 1e-3);
    EXPECT_NEAR(modality_distance(out.f_hat_mminus).item(), 0.0, 1e-12);
    EXPECT_NEAR(loss_r(out).item(), std::log1p(std::exp(-c)), 1e-12);
}

TEST(LossR, CentroidAndPairedDistances) {
    const Tensor f({4, 2}, {0, 0, 2, 0, 0, 3, 2, 4});
    EXPECT_DOUBLE_EQ(modality_distance(f).item(), std::hypot(0.0, 3.5));
    EXPECT_DOUBLE_EQ(modality_distance(f, ModalityDistance::paired).item(), 0.5 * (3.0 + 4.0));
    EXPECT_THROW(modality_distance(Tensor::zeros({3, 2})), ContractError);
    EXPECT_THROW(modality_distance(Tensor::zeros({1, 2})), ContractError);
}

TEST(LossR, UnmaskedDistanceIsDetached) {
    const Tensor F = test::uniform({4, 3, 2, 2}, 12, 0.1, 2.0);
    Tape tape;
    const Tensor m_e = Tensor::full({4, 3}, 0.5);
    const Tensor m_r = tape.watch(Tensor::full({4, 3}, 0.6));
    const Tensor Fw = tape.watch(F);
    const auto out = purify_with_masks(Fw, m_e, m_r, kP);
    const Gradients g = tape.backward(loss_r(out));
    EXPECT_TRUE(g.reached(m_r));
    // F reaches the loss only through the masked branch.
    const Tensor via_mask = g.grad(Fw);
    Tape t2;
    const Tensor F2 = t2.watch(F);
    const auto o2 = purify_with_masks(F2, m_e, Tensor::full({4, 3}, 0.6), kP);
    const Tensor masked_only = softplus(sub(modality_distance(o2.f_hat_mminus), modality_distance(o2.f_hat).detach()));
    EXPECT_EQ(t2.backward(masked_only).grad(F2).vec(), via_mask.vec());
}

TEST(LossIp, TotalIsSumOfParts) {
    const Tensor F = test::uniform({8, 3, 2, 2}, 13, 0.1, 2.0);
    std::mt19937_64 rng(14);
    model::PurifierParams p{layers::make_mask(3, 16, rng), layers::make_mask(3, 16, rng)};
    const auto out = purify(F, p, kP);
    const layers::LinearParams c{randn({2, 3}, 15), std::nullopt};
    const auto l = loss_ip(out, layers::gem_pool(F, kP), labels(2, 2), c, 0.3);
    EXPECT_DOUBLE_EQ(l.total.item(), l.e.item() + l.r.item() + l.reid.item());
}

TEST(LossIp, DegenerateBatchFloor) {
    // Identical features everywhere and unit masks: both mask terms sit at ln 2.
    const Tensor F = Tensor::full({8, 3, 2, 2}, 1.0);
    const auto out = purify_with_masks(F, Tensor::full({8, 3}, 1.0), Tensor::full({8, 3}, 1.0), kP);
    const layers::LinearParams c{Tensor::zeros({2, 3}), std::nullopt};
    const auto l = loss_ip(out, layers::gem_pool(F, kP), labels(2, 2), c, 0.3);
    EXPECT_NEAR(l.reid.item(), std::log(2.0) + 0.3, 1e-12);
    EXPECT_NEAR(l.total.item(), 2.0 * std::numbers::ln2 + l.reid.item(), 1e-9);
}

TEST(LossR, OptimizingMasksShrinksMaskedDistance) {
    // Frozen toy feature set with a strong modality style difference.
    std::vector<double> d;
    const Tensor base = test::uniform({4, 6, 3, 3}, 16, 0.2, 1.5);
    d = base.vec();
    for (std::size_t i = 0; i < base.numel(); ++i) {
        const std::size_t ch = (i / 9) % 6;
        d.push_back(base[i] * (ch < 3 ? 2.5 : 0.4) + 0.3 * static_cast<double>(ch));
    }
    const Tensor F({8, 6, 3, 3}, std::move(d));
    std::mt19937_64 rng(17);
    model::PurifierParams p{layers::make_mask(6, 2, rng), layers::make_mask(6, 2, rng)};
    auto masked_distance = [&] { return modality_distance(purify(F, p, kP).f_hat_mminus).item(); };
    const double start = masked_distance();
    double best = start;
    for (int step = 0; step < 100 && best >= start; ++step) {
        Tape tape;
        model::PurifierParams w = p;
        for (auto* lp : {&w.reduce.squeeze, &w.reduce.excite}) {
            lp->weight = tape.watch(lp->weight);
            lp->bias = tape.watch(*lp->bias);
        }
        const Gradients g = tape.backward(loss_r(purify(F, w, kP)));
        auto sgd = [&](layers::LinearParams& dst, const layers::LinearParams& src) {
            std::vector<double> wv = dst.weight.vec(), bv = dst.bias->vec();
            const auto gw = g.view(src.weight);
            const auto gb = g.view(*src.bias);
            for (std::size_t i = 0; i < wv.size(); ++i) wv[i] -= 0.5 * gw[i];
            for (std::size_t i = 0; i < bv.size(); ++i) bv[i] -= 0.5 * gb[i];
            dst.weight = Tensor(dst.weight.shape(), std::move(wv));
            dst.bias = Tensor(dst.bias->shape(), std::move(bv));
        };
        sgd(p.reduce.squeeze, w.reduce.squeeze);
        sgd(p.reduce.excite, w.reduce.excite);
        best = std::min(best, masked_distance());
    }
    EXPECT_LT(best, start);
}

TEST(LossIp, GradientMatchesFiniteDifferences) {
    const Tensor F = test::uniform({8, 3, 2, 2}, 18, 0.1, 2.0);
    std::mt19937_64 rng(19);
    const model::PurifierParams p{layers::make_mask(3, 1, rng), layers::make_mask(3, 1, rng)};
    const layers::LinearParams c{randn({2, 3}, 20), std::nullopt};
    const auto y = labels(2, 2);
    // Terms without detached references, so plain central differences apply.
    auto reid = [&](const Tensor& v) {
        const auto out = purify(v, p, kP);
        return purifier::loss_ip(out, layers::gem_pool(v, kP), y, c, 0.3).reid;
    };
    EXPECT_LT(test::grad_error(reid, F), 1e-4);
    auto excite = [&](const Tensor& w) {
        model::PurifierParams q = p;
        q.reduce.excite.weight = w;
        return loss_r(purify(F, q, kP));
    };
    EXPECT_LT(test::grad_error(excite, p.reduce.excite.weight), 1e-4);
}

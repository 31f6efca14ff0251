#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "idkl/dataset.hpp"
#include "idkl/model.hpp"
#include "idkl/purifier.hpp"
#include "idkl/tensor.hpp"

namespace idkl::losses {

struct LossWeights {
    double lambda1 = 0.1;  // information purifier
    double lambda2 = 0.6;  // feature-level graph alignment
    double lambda3 = 0.8;  // logit-level class alignment
    double mdr = 1.0;      // the modality-discrepancy term has no weight of its own; 0 only disables it
    double margin = 0.3;
    double tau = 1.0;
    int affinity_sign = -1;  // -1: softmax(-D) (similarity), +1: softmax(D)
    purifier::ModalityDistance modality_distance = purifier::ModalityDistance::centroid;
};

void validate(const LossWeights& w);

/// Mean over rows of -ln softmax(Z)[y].
Tensor cross_entropy(const Tensor& Z, const std::vector<std::size_t>& y);

/// Mean over anchors of max(0, hardest positive - hardest negative + margin)
/// with Euclidean distances mined over the whole batch.
Tensor batch_hard_triplet(const Tensor& f, const std::vector<std::size_t>& y, double margin);

/// Sum over heads of the modality cross-entropy. Used both for the
/// discriminators (on f_sp) and the confusers (behind the GRL on f_sh).
Tensor modality_loss(const std::vector<Tensor>& head_logits, const std::vector<int>& t);

struct BaseLoss {
    Tensor ce_sp, triplet_sp, discriminator;
    Tensor ce_sh, triplet_sh, confuser;
    Tensor total;
};

BaseLoss base_loss(const model::BranchOutputs& out, const data::Batch& batch, double margin);

/// Row-stochastic [N x N]: row i = softmax_k(sign * ||a_i - b_k||).
Tensor affinity(const Tensor& f_a, const Tensor& f_b, int sign = -1);

/// Mean over rows of KL(A_aa, A_bb) + KL(A_aa, A_ab) + KL(A_ab, A_bb).
Tensor tgsa_pair(const Tensor& f_a, const Tensor& f_b, int sign = -1);

/// tgsa_pair(f_tilde_V, f_sh_V) + tgsa_pair(f_tilde_I, f_sh_I), purified side detached.
Tensor tgsa_distill(const Tensor& f_tilde, const Tensor& f_sh, int sign = -1);

/// KL(softmax(Z_sh/tau) || softmax(Z_sp/tau)) per modality half (row mean), summed; Z_sp detached.
Tensor csa(const Tensor& Z_sh, const Tensor& Z_sp, double tau = 1.0);

/// tgsa_pair(f_sh_V, f_sh_I) + KL(softmax(Z_sh_V/tau) || softmax(Z_sh_I/tau)), nothing detached.
Tensor mdr(const Tensor& f_sh, const Tensor& Z_sh, double tau = 1.0, int sign = -1);

struct LossTerms {
    BaseLoss base;
    purifier::PurifierLoss ip;
    Tensor tgsa, csa, mdr;
    Tensor total;  // base + l1 ip + l2 tgsa + l3 csa + mdr
};

LossTerms total_loss(const model::BranchOutputs& out, const purifier::PurifierOutputs& pur, const data::Batch& batch,
                     const layers::LinearParams& classifier_sp, const LossWeights& w);

/// The row layout [visible half; infrared half] of a [2N x ...] tensor.
Tensor visible_half(const Tensor& x);
Tensor infrared_half(const Tensor& x);

}  // namespace idkl::losses

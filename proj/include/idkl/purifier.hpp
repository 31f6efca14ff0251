#pragma once

#include <cstddef>
#include <vector>

#include "idkl/layers.hpp"
#include "idkl/model.hpp"
#include "idkl/tensor.hpp"

// Information purifier: instance normalization plus two learned channel
// masks that trade modality style for identity-discriminative content.
namespace idkl::purifier {

struct PurifierOutputs {
    Tensor F_hat;         // IN(F_sp)
    Tensor m_e, m_r;      // [B x C] enhancement / reduction masks
    Tensor F_dplus;       // m_e * F_sp
    Tensor F_hat_mminus;  // m_r * F_hat
    Tensor F_tilde;       // m_e * F_hat_mminus + m_r * F_dplus
    // GeM-pooled with the specific branch exponent.
    Tensor f_hat, f_dplus, f_hat_mminus, f_tilde;  // [B x C]
};

/// Masks are computed from F_sp (m_e) and IN(F_sp) (m_r), both pooled with
/// `gem_p`, then applied and integrated.
PurifierOutputs purify(const Tensor& F_sp, const model::PurifierParams& params, const Tensor& gem_p,
                       double in_eps = layers::kInstanceNormEps);

/// Same integration with caller-supplied masks.
PurifierOutputs purify_with_masks(const Tensor& F_sp, const Tensor& m_e, const Tensor& m_r, const Tensor& gem_p,
                                  double in_eps = layers::kInstanceNormEps);

/// Batch-mean identity cross-entropy of C_sp(f).
Tensor classifier_entropy(const Tensor& f, const std::vector<std::size_t>& y, const layers::LinearParams& c_sp);

/// Softplus(h(C_sp(f_dplus)) - h(C_sp(f_sp))); the f_sp term is detached.
Tensor loss_e(const PurifierOutputs& out, const Tensor& f_sp, const std::vector<std::size_t>& y,
              const layers::LinearParams& c_sp);

/// Softplus(gap) from two reference and candidate entropies, for tests and reporting.
double loss_e_value(double h_enhanced, double h_reference);

enum class ModalityDistance {
    centroid,  // distance between the modality mean vectors
    paired,    // mean distance over aligned (visible i, infrared i) pairs
};

/// d(a_V, a_I) for a [2N x C] feature matrix split into halves.
Tensor modality_distance(const Tensor& f, ModalityDistance kind = ModalityDistance::centroid);

/// Softplus(d(f_hat_mminus_V, f_hat_mminus_I) - d(f_hat_V, f_hat_I)); the
/// unmasked term is detached.
Tensor loss_r(const PurifierOutputs& out, ModalityDistance kind = ModalityDistance::centroid);

struct PurifierLoss {
    Tensor e, r, reid, total;
};

/// L_e + L_r + reid(f_tilde) where reid = CE(C_sp(f_tilde)) + batch-hard triplet.
PurifierLoss loss_ip(const PurifierOutputs& out, const Tensor& f_sp, const std::vector<std::size_t>& y,
                     const layers::LinearParams& c_sp, double margin, ModalityDistance kind = ModalityDistance::centroid);

}  // namespace idkl::purifier

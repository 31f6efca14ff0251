#include "idkl/purifier.hpp"

#include "idkl/losses.hpp"
#include "idkl/ops.hpp"

namespace idkl::purifier {
namespace {

PurifierOutputs integrate(const Tensor& F_sp, const Tensor& F_hat, const Tensor& m_e, const Tensor& m_r,
                          const Tensor& gem_p) {
    PurifierOutputs out;
    out.F_hat = F_hat;
    out.m_e = m_e;
    out.m_r = m_r;
    out.F_dplus = layers::scale_channels(F_sp, m_e);
    out.F_hat_mminus = layers::scale_channels(F_hat, m_r);
    // Each mask is applied to the feature the other one produced.
    out.F_tilde = add(layers::scale_channels(out.F_hat_mminus, m_e), layers::scale_channels(out.F_dplus, m_r));
    out.f_hat = layers::gem_pool(out.F_hat, gem_p);
    out.f_dplus = layers::gem_pool(out.F_dplus, gem_p);
    out.f_hat_mminus = layers::gem_pool(out.F_hat_mminus, gem_p);
    out.f_tilde = layers::gem_pool(out.F_tilde, gem_p);
    return out;
}

Tensor to_scalar(const Tensor& t) { return reshape(t, {}); }

}  // namespace

PurifierOutputs purify(const Tensor& F_sp, const model::PurifierParams& params, const Tensor& gem_p, double in_eps) {
    const Tensor F_hat = layers::instance_norm(F_sp, in_eps);
    const Tensor m_e = layers::channel_mask(F_sp, params.enhance, gem_p);
    const Tensor m_r = layers::channel_mask(F_hat, params.reduce, gem_p);
    return integrate(F_sp, F_hat, m_e, m_r, gem_p);
}

PurifierOutputs purify_with_masks(const Tensor& F_sp, const Tensor& m_e, const Tensor& m_r, const Tensor& gem_p,
                                  double in_eps) {
    return integrate(F_sp, layers::instance_norm(F_sp, in_eps), m_e, m_r, gem_p);
}

Tensor classifier_entropy(const Tensor& f, const std::vector<std::size_t>& y, const layers::LinearParams& c_sp) {
    return losses::cross_entropy(layers::linear(f, c_sp), y);
}

Tensor loss_e(const PurifierOutputs& out, const Tensor& f_sp, const std::vector<std::size_t>& y,
              const layers::LinearParams& c_sp) {
    const layers::LinearParams frozen{c_sp.weight.detach(),
                                      c_sp.bias ? std::optional<Tensor>(c_sp.bias->detach()) : std::nullopt};
    const Tensor reference = classifier_entropy(f_sp.detach(), y, frozen);
    return softplus(sub(classifier_entropy(out.f_dplus, y, c_sp), reference));
}

double loss_e_value(double h_enhanced, double h_reference) { return softplus_value(h_enhanced - h_reference); }

Tensor modality_distance(const Tensor& f, ModalityDistance kind) {
    if (f.rank() != 2 || f.dim(0) < 2 || f.dim(0) % 2 != 0) {
        throw ContractError("modality distance needs a [2N x C] batch with both modality halves, got " +
                            shape_str(f.shape()));
    }
    const Tensor vis = losses::visible_half(f);
    const Tensor ir = losses::infrared_half(f);
    if (kind == ModalityDistance::centroid) {
        const std::size_t c = f.dim(1);
        const Tensor cv = reshape(reduce(ReduceKind::mean, vis, {0}), {1, c});
        const Tensor ci = reshape(reduce(ReduceKind::mean, ir, {0}), {1, c});
        return to_scalar(euclidean_distance_matrix(cv, ci));
    }
    const std::size_t n = vis.dim(0);
    std::vector<std::size_t> diag(n);
    for (std::size_t i = 0; i < n; ++i) diag[i] = i;
    return mean(gather_cols(euclidean_distance_matrix(vis, ir), diag));
}

Tensor loss_r(const PurifierOutputs& out, ModalityDistance kind) {
    const Tensor reference = modality_distance(out.f_hat, kind).detach();
    return softplus(sub(modality_distance(out.f_hat_mminus, kind), reference));
}

PurifierLoss loss_ip(const PurifierOutputs& out, const Tensor& f_sp, const std::vector<std::size_t>& y,
                     const layers::LinearParams& c_sp, double margin, ModalityDistance kind) {
    PurifierLoss l;
    l.e = loss_e(out, f_sp, y, c_sp);
    l.r = loss_r(out, kind);
    l.reid = add(classifier_entropy(out.f_tilde, y, c_sp), losses::batch_hard_triplet(out.f_tilde, y, margin));
    l.total = add(add(l.e, l.r), l.reid);
    return l;
}

}  // namespace idkl::purifier

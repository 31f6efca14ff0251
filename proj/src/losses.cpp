#include "idkl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "idkl/layers.hpp"
#include "idkl/ops.hpp"

namespace idkl::losses {
namespace {

std::vector<std::size_t> to_labels(const std::vector<int>& t) {
    std::vector<std::size_t> out(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] != 0 && t[i] != 1) {
            throw ContractError("modality labels must be 0 or 1");
        }
        out[i] = static_cast<std::size_t>(t[i]);
    }
    return out;
}

Tensor tempered_softmax(const Tensor& Z, double tau) { return softmax_rows(scale(Z, 1.0 / tau)); }

}  // namespace

void validate(const LossWeights& w) {
    if (!(w.lambda1 >= 0.0) || !(w.lambda2 >= 0.0) || !(w.lambda3 >= 0.0) || !(w.mdr >= 0.0)) {
        throw ContractError("loss weights must be non-negative");
    }
    if (!(w.margin >= 0.0)) throw ContractError("triplet margin must be non-negative");
    if (!(w.tau > 0.0)) throw ContractError("KL temperature must be positive");
    if (w.affinity_sign != 1 && w.affinity_sign != -1) throw ContractError("affinity sign must be +1 or -1");
}

Tensor visible_half(const Tensor& x) {
    if (x.rank() == 0 || x.dim(0) % 2 != 0) {
        throw ContractError("expected an even number of rows (visible half then infrared half)");
    }
    return slice_rows(x, 0, x.dim(0) / 2);
}

Tensor infrared_half(const Tensor& x) {
    if (x.rank() == 0 || x.dim(0) % 2 != 0) {
        throw ContractError("expected an even number of rows (visible half then infrared half)");
    }
    return slice_rows(x, x.dim(0) / 2, x.dim(0));
}

Tensor cross_entropy(const Tensor& Z, const std::vector<std::size_t>& y) {
    if (Z.rank() != 2 || Z.dim(0) != y.size()) {
        throw DimensionError("cross_entropy: need one label per logit row, got " + shape_str(Z.shape()));
    }
    const std::size_t n = Z.dim(0), c = Z.dim(1);
    std::vector<double> prob(n * c);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (y[i] >= c) {
            throw ContractError("cross_entropy: label " + std::to_string(y[i]) + " out of range for " +
                                std::to_string(c) + " classes");
        }
        const double* row = Z.data().data() + i * c;
        const std::size_t arg = static_cast<std::size_t>(std::max_element(row, row + c) - row);
        const double mx = row[arg];
        double rest = 0.0;  // sum of the non-max terms; the max term is exactly 1
        for (std::size_t j = 0; j < c; ++j) {
            prob[i * c + j] = std::exp(row[j] - mx);
            if (j != arg) rest += prob[i * c + j];
        }
        const double s = 1.0 + rest;
        for (std::size_t j = 0; j < c; ++j) prob[i * c + j] /= s;
        total += std::log1p(rest) - (row[y[i]] - mx);
    }
    return make_result("cross_entropy", {}, {total / static_cast<double>(n)}, {Z},
                       [prob = std::move(prob), y, n, c](std::span<const double> g, std::span<const GradSpan> gin) {
                           const double s = g[0] / static_cast<double>(n);
                           for (std::size_t i = 0; i < n; ++i) {
                               for (std::size_t j = 0; j < c; ++j) {
                                   gin[0][i * c + j] += s * (prob[i * c + j] - (j == y[i] ? 1.0 : 0.0));
                               }
                           }
                       });
}

Tensor batch_hard_triplet(const Tensor& f, const std::vector<std::size_t>& y, double margin) {
    if (f.rank() != 2 || f.dim(0) != y.size()) {
        throw DimensionError("batch_hard_triplet: need one label per feature row, got " + shape_str(f.shape()));
    }
    std::map<std::size_t, std::size_t> counts;
    for (std::size_t label : y) ++counts[label];
    for (const auto& [label, c] : counts) {
        if (c < 2) {
            throw ContractError("batch_hard_triplet: identity " + std::to_string(label) + " has a single sample");
        }
    }
    if (counts.size() < 2) {
        throw ContractError("batch_hard_triplet: need at least two identities");
    }
    const std::size_t n = y.size();
    const Tensor dist = euclidean_distance_matrix(f, f);
    std::vector<std::size_t> pos(n), neg(n);
    for (std::size_t i = 0; i < n; ++i) {
        double hardest_pos = -1.0, hardest_neg = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            const double d = dist[i * n + j];
            if (y[j] == y[i]) {
                if (j != i && d > hardest_pos) {
                    hardest_pos = d;
                    pos[i] = j;
                }
            } else if (d < hardest_neg) {
                hardest_neg = d;
                neg[i] = j;
            }
        }
    }
    return mean(relu(add_scalar(sub(gather_cols(dist, pos), gather_cols(dist, neg)), margin)));
}

Tensor modality_loss(const std::vector<Tensor>& head_logits, const std::vector<int>& t) {
    if (head_logits.empty()) {
        throw ContractError("modality_loss: no classifier heads");
    }
    const auto labels = to_labels(t);
    Tensor total = cross_entropy(head_logits.front(), labels);
    for (std::size_t j = 1; j < head_logits.size(); ++j) {
        total = add(total, cross_entropy(head_logits[j], labels));
    }
    return total;
}

BaseLoss base_loss(const model::BranchOutputs& out, const data::Batch& batch, double margin) {
    BaseLoss l;
    l.ce_sp = cross_entropy(out.Z_sp, batch.y);
    l.triplet_sp = batch_hard_triplet(out.f_sp, batch.y, margin);
    l.discriminator = modality_loss(out.discriminator_logits, batch.t);
    l.ce_sh = cross_entropy(out.Z_sh, batch.y);
    l.triplet_sh = batch_hard_triplet(out.f_sh, batch.y, margin);
    l.confuser = modality_loss(out.confuser_logits, batch.t);
    const Tensor specific = add(add(l.ce_sp, l.triplet_sp), l.discriminator);
    const Tensor shared = add(add(l.ce_sh, l.triplet_sh), l.confuser);
    l.total = add(shared, specific);
    return l;
}

Tensor affinity(const Tensor& f_a, const Tensor& f_b, int sign) {
    if (sign != 1 && sign != -1) {
        throw ContractError("affinity sign must be +1 or -1");
    }
    if (f_a.rank() != 2 || f_b.rank() != 2 || f_a.dim(0) != f_b.dim(0)) {
        throw DimensionError("affinity: both groups need the same number of rows");
    }
    return softmax_rows(scale(euclidean_distance_matrix(f_a, f_b), static_cast<double>(sign)));
}

Tensor tgsa_pair(const Tensor& f_a, const Tensor& f_b, int sign) {
    const Tensor aa = affinity(f_a, f_a, sign);
    const Tensor bb = affinity(f_b, f_b, sign);
    const Tensor ab = affinity(f_a, f_b, sign);
    return add(add(kl_rows(aa, bb), kl_rows(aa, ab)), kl_rows(ab, bb));
}

Tensor tgsa_distill(const Tensor& f_tilde, const Tensor& f_sh, int sign) {
    const Tensor teacher = f_tilde.detach();
    return add(tgsa_pair(visible_half(teacher), visible_half(f_sh), sign),
               tgsa_pair(infrared_half(teacher), infrared_half(f_sh), sign));
}

Tensor csa(const Tensor& Z_sh, const Tensor& Z_sp, double tau) {
    const Tensor teacher = Z_sp.detach();
    return add(kl_rows(tempered_softmax(visible_half(Z_sh), tau), tempered_softmax(visible_half(teacher), tau)),
               kl_rows(tempered_softmax(infrared_half(Z_sh), tau), tempered_softmax(infrared_half(teacher), tau)));
}

Tensor mdr(const Tensor& f_sh, const Tensor& Z_sh, double tau, int sign) {
    return add(tgsa_pair(visible_half(f_sh), infrared_half(f_sh), sign),
               kl_rows(tempered_softmax(visible_half(Z_sh), tau), tempered_softmax(infrared_half(Z_sh), tau)));
}

LossTerms total_loss(const model::BranchOutputs& out, const purifier::PurifierOutputs& pur, const data::Batch& batch,
                     const layers::LinearParams& classifier_sp, const LossWeights& w) {
    validate(w);
    // Re-raise numeric failures with the name of the term being computed.
    auto guarded = [](const char* term, auto&& compute) {
        try {
            return compute();
        } catch (const NumericError& e) {
            throw NumericError(std::string("loss term ") + term + ": " + e.what());
        }
    };
    LossTerms t;
    t.base = guarded("L_b", [&] { return base_loss(out, batch, w.margin); });
    t.ip = guarded("L_ip", [&] {
        return purifier::loss_ip(pur, out.f_sp, batch.y, classifier_sp, w.margin, w.modality_distance);
    });
    t.tgsa = guarded("L_tgsa", [&] { return tgsa_distill(pur.f_tilde, out.f_sh, w.affinity_sign); });
    t.csa = guarded("L_csa", [&] { return csa(out.Z_sh, out.Z_sp, w.tau); });
    t.mdr = guarded("L_mdr", [&] { return mdr(out.f_sh, out.Z_sh, w.tau, w.affinity_sign); });
    t.total = guarded("total", [&] {
        return add(add(add(add(t.base.total, scale(t.ip.total, w.lambda1)), scale(t.tgsa, w.lambda2)),
                       scale(t.csa, w.lambda3)),
                   scale(t.mdr, w.mdr));
    });
    return t;
}

}  // namespace idkl::losses

#include "idkl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "idkl/layers.hpp"
#include "idkl/losses.hpp"
#include "idkl/model.hpp"
#include "idkl/ops.hpp"
#include "idkl/purifier.hpp"

namespace idkl::gradcheck {
namespace {

enum Term : std::size_t {
    kCeSp, kTripletSp, kDisc, kCeSh, kTripletSh, kConf, kBase, kE, kR, kIp, kTgsa, kCsa, kMdr, kTotal, kTermCount
};

// Values the tape treats as constants, captured at the unperturbed point.
struct Frozen {
    double h_ref = 0.0;
    double d_unmasked = 0.0;
    Tensor f_tilde;
    Tensor Z_sp;
};

Frozen capture(const model::DualBranchNet& net, const data::Batch& batch, const losses::LossWeights& w) {
    const model::BranchOutputs out = model::forward(net, batch);
    const purifier::PurifierOutputs pur = purifier::purify(out.F_sp, net.purifier, net.gem_sp.p);
    return {purifier::classifier_entropy(out.f_sp, batch.y, net.classifier_sp).item(),
            purifier::modality_distance(pur.f_hat, w.modality_distance).item(), pur.f_tilde, out.Z_sp};
}

// Untracked recomposition of every term from the public building blocks.
std::vector<double> evaluate_terms(const model::DualBranchNet& net, const data::Batch& batch,
                                   const losses::LossWeights& w, const Frozen& frozen) {
    using losses::infrared_half;
    using losses::visible_half;
    const model::BranchOutputs out = model::forward(net, batch);
    const purifier::PurifierOutputs pur = purifier::purify(out.F_sp, net.purifier, net.gem_sp.p);
    std::vector<double> v(kTermCount);
    v[kCeSp] = losses::cross_entropy(out.Z_sp, batch.y).item();
    v[kTripletSp] = losses::batch_hard_triplet(out.f_sp, batch.y, w.margin).item();
    v[kDisc] = losses::modality_loss(out.discriminator_logits, batch.t).item();
    v[kCeSh] = losses::cross_entropy(out.Z_sh, batch.y).item();
    v[kTripletSh] = losses::batch_hard_triplet(out.f_sh, batch.y, w.margin).item();
    v[kConf] = losses::modality_loss(out.confuser_logits, batch.t).item();
    v[kBase] = v[kCeSp] + v[kTripletSp] + v[kDisc] + v[kCeSh] + v[kTripletSh] + v[kConf];
    v[kE] = softplus_value(purifier::classifier_entropy(pur.f_dplus, batch.y, net.classifier_sp).item() - frozen.h_ref);
    v[kR] = softplus_value(purifier::modality_distance(pur.f_hat_mminus, w.modality_distance).item() -
                           frozen.d_unmasked);
    const double reid = purifier::classifier_entropy(pur.f_tilde, batch.y, net.classifier_sp).item() +
                        losses::batch_hard_triplet(pur.f_tilde, batch.y, w.margin).item();
    v[kIp] = v[kE] + v[kR] + reid;
    v[kTgsa] = losses::tgsa_pair(visible_half(frozen.f_tilde), visible_half(out.f_sh), w.affinity_sign).item() +
               losses::tgsa_pair(infrared_half(frozen.f_tilde), infrared_half(out.f_sh), w.affinity_sign).item();
    v[kCsa] = losses::csa(out.Z_sh, frozen.Z_sp, w.tau).item();
    v[kMdr] = losses::mdr(out.f_sh, out.Z_sh, w.tau, w.affinity_sign).item();
    v[kTotal] = v[kBase] + w.lambda1 * v[kIp] + w.lambda2 * v[kTgsa] + w.lambda3 * v[kCsa] + w.mdr * v[kMdr];
    return v;
}

std::vector<Tensor> term_tensors(const losses::LossTerms& t) {
    return {t.base.ce_sp, t.base.triplet_sp, t.base.discriminator, t.base.ce_sh, t.base.triplet_sh,
            t.base.confuser,  t.base.total,  t.ip.e,  t.ip.r,  t.ip.total, t.tgsa, t.csa, t.mdr, t.total};
}

bool upstream_of_grl(const std::string& name) {
    return name.starts_with("stem.") || name.starts_with("shared.") || name == "gem_sh.p";
}

std::vector<Tensor*> mutable_params(model::DualBranchNet& net, std::vector<std::string>* names) {
    std::vector<Tensor*> out;
    model::visit_parameters(net, [&](const std::string& name, Tensor& t) {
        out.push_back(&t);
        if (names) names->push_back(name);
    });
    return out;
}

Tensor with_entry(const Tensor& t, std::size_t i, double value) {
    std::vector<double> d = t.vec();
    d[i] = value;
    return Tensor(t.shape(), std::move(d));
}

Tensor randn(Shape shape, std::mt19937_64& rng, double scale = 1.0, double offset = 0.0) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> d(shape_numel(shape));
    for (double& v : d) v = offset + scale * n(rng);
    return Tensor(std::move(shape), std::move(d));
}

Tensor positive(Shape shape, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.2, 2.0);
    std::vector<double> d(shape_numel(shape));
    for (double& v : d) v = u(rng);
    return Tensor(std::move(shape), std::move(d));
}

layers::Conv2dParams conv_from(const std::vector<Tensor>& in, std::size_t first, std::size_t stride) {
    return {in[first], in[first + 1], stride};
}

std::vector<OpCase> build_registry() {
    using V = std::vector<Tensor>;
    using R = std::mt19937_64;
    const std::vector<std::size_t> labels6{0, 0, 1, 1, 2, 2};
    std::vector<OpCase> ops;
    ops.push_back({"add", [](R& r) { return V{randn({3, 4}, r), randn({3, 4}, r)}; },
                   [](const V& x) { return add(x[0], x[1]); }});
    ops.push_back({"sub", [](R& r) { return V{randn({3, 4}, r), randn({3, 4}, r)}; },
                   [](const V& x) { return sub(x[0], x[1]); }});
    ops.push_back({"mul", [](R& r) { return V{randn({3, 4}, r), randn({3, 4}, r)}; },
                   [](const V& x) { return mul(x[0], x[1]); }});
    ops.push_back({"scale", [](R& r) { return V{randn({5}, r)}; }, [](const V& x) { return scale(x[0], -1.7); }});
    ops.push_back({"add_scalar", [](R& r) { return V{randn({5}, r)}; },
                   [](const V& x) { return add_scalar(x[0], 0.4); }});
    ops.push_back({"matmul", [](R& r) { return V{randn({3, 4}, r), randn({4, 2}, r)}; },
                   [](const V& x) { return matmul(x[0], x[1]); }});
    ops.push_back({"relu", [](R& r) { return V{randn({4, 5}, r)}; }, [](const V& x) { return relu(x[0]); }});
    ops.push_back({"leaky_relu", [](R& r) { return V{randn({4, 5}, r)}; },
                   [](const V& x) { return activation({ActivationKind::leaky_relu, 0.1}, x[0]); }});
    ops.push_back({"sigmoid", [](R& r) { return V{randn({4, 5}, r, 2.0)}; }, [](const V& x) { return sigmoid(x[0]); }});
    ops.push_back({"softplus", [](R& r) { return V{randn({4, 5}, r, 2.0)}; },
                   [](const V& x) { return softplus(x[0]); }});
    ops.push_back({"softmax_rows", [](R& r) { return V{randn({3, 5}, r)}; },
                   [](const V& x) { return softmax_rows(x[0]); }});
    ops.push_back({"kl_rows", [](R& r) { return V{randn({3, 4}, r), randn({3, 4}, r)}; },
                   [](const V& x) { return kl_rows(softmax_rows(x[0]), softmax_rows(x[1])); }});
    ops.push_back({"reduce_sum", [](R& r) { return V{randn({2, 3, 4}, r)}; },
                   [](const V& x) { return reduce(ReduceKind::sum, x[0], {0, 2}); }});
    ops.push_back({"reduce_mean", [](R& r) { return V{randn({2, 3, 4}, r)}; },
                   [](const V& x) { return reduce(ReduceKind::mean, x[0], {1}); }});
    ops.push_back({"population_variance", [](R& r) { return V{randn({2, 3, 4}, r)}; },
                   [](const V& x) { return population_variance(x[0], {2}); }});
    ops.push_back({"euclidean_distance_matrix", [](R& r) { return V{randn({3, 4}, r), randn({5, 4}, r)}; },
                   [](const V& x) { return euclidean_distance_matrix(x[0], x[1]); }});
    ops.push_back({"reshape", [](R& r) { return V{randn({2, 6}, r)}; },
                   [](const V& x) { return reshape(x[0], {3, 4}); }});
    ops.push_back({"slice_rows", [](R& r) { return V{randn({5, 2, 2}, r)}; },
                   [](const V& x) { return slice_rows(x[0], 1, 4); }});
    ops.push_back({"gather_cols", [](R& r) { return V{randn({4, 3}, r)}; },
                   [](const V& x) { return gather_cols(x[0], {2, 0, 1, 1}); }});
    ops.push_back({"conv2d_stride1", [](R& r) { return V{randn({1, 2, 4, 4}, r), randn({3, 2, 3, 3}, r), randn({3}, r)}; },
                   [](const V& x) { return layers::conv2d(x[0], conv_from(x, 1, 1)); }});
    ops.push_back({"conv2d_stride2", [](R& r) { return V{randn({2, 2, 5, 4}, r), randn({2, 2, 3, 3}, r), randn({2}, r)}; },
                   [](const V& x) { return layers::conv2d(x[0], conv_from(x, 1, 2)); }});
    ops.push_back({"linear", [](R& r) { return V{randn({3, 4}, r), randn({2, 4}, r), randn({2}, r)}; },
                   [](const V& x) { return layers::linear(x[0], {x[1], x[2]}); }});
    ops.push_back({"instance_norm", [](R& r) { return V{randn({2, 3, 3, 2}, r)}; },
                   [](const V& x) { return layers::instance_norm(x[0]); }});
    ops.push_back({"gem_pool", [](R& r) { return V{positive({2, 3, 2, 3}, r), positive({}, r)}; },
                   [](const V& x) { return layers::gem_pool(x[0], add_scalar(x[1], 1.0)); }});
    ops.push_back({"channel_mask",
                   [](R& r) {
                       return V{positive({2, 4, 2, 2}, r), randn({2, 4}, r), randn({2}, r), randn({4, 2}, r),
                                randn({4}, r)};
                   },
                   [](const V& x) {
                       const layers::MaskParams m{{x[1], x[2]}, {x[3], x[4]}};
                       return layers::scale_channels(x[0], layers::channel_mask(x[0], m, Tensor::scalar(3.0)));
                   }});
    ops.push_back({"scale_channels", [](R& r) { return V{randn({2, 3, 2, 2}, r), randn({2, 3}, r)}; },
                   [](const V& x) { return layers::scale_channels(x[0], x[1]); }});
    ops.push_back({"cross_entropy", [](R& r) { return V{randn({4, 3}, r)}; },
                   [](const V& x) { return losses::cross_entropy(x[0], {0, 2, 1, 2}); }});
    ops.push_back({"batch_hard_triplet", [](R& r) { return V{randn({6, 3}, r, 0.3)}; },
                   [labels6](const V& x) { return losses::batch_hard_triplet(x[0], labels6, 0.3); }});
    ops.push_back({"affinity", [](R& r) { return V{randn({4, 3}, r), randn({4, 3}, r)}; },
                   [](const V& x) { return losses::affinity(x[0], x[1], -1); }});
    ops.push_back({"tgsa_pair", [](R& r) { return V{randn({4, 3}, r), randn({4, 3}, r)}; },
                   [](const V& x) { return losses::tgsa_pair(x[0], x[1], -1); }});
    ops.push_back({"csa", [](R& r) { return V{randn({4, 3}, r)}; },
                   [](const V& x) {
                       const Tensor teacher({4, 3}, {0.3, -0.1, 0.5, 1.0, 0.2, -0.4, 0.0, 0.7, 0.1, -0.2, -0.3, 0.9});
                       return losses::csa(x[0], teacher, 1.0);
                   }});
    ops.push_back({"mdr", [](R& r) { return V{randn({4, 3}, r), randn({4, 5}, r)}; },
                   [](const V& x) { return losses::mdr(x[0], x[1], 1.0, -1); }});
    return ops;
}

}  // namespace

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), kErrorFloor});
    return std::abs(analytic - numeric) / denom;
}

const std::vector<std::string>& term_names() {
    static const std::vector<std::string> names{"ce_sp", "triplet_sp", "L_D",  "ce_sh", "triplet_sh",
                                                "L_C",   "L_b",        "L_e",  "L_r",   "L_ip",
                                                "L_tgsa", "L_csa",     "L_mdr", "total"};
    return names;
}

RunConfig toy_config() {
    RunConfig c;
    c.model.in_channels = 3;
    c.model.widths = {3, 4, 4, 6, 6};
    c.model.strides = {2, 2, 1, 1, 1};
    c.model.shared_stages = 3;
    c.model.num_identities = 3;
    c.model.activation = "softplus";
    c.P = 2;
    c.K = 2;
    c.epochs = 1;
    return c;
}

data::SyntheticSpec toy_data(const RunConfig& config) {
    data::SyntheticSpec s;
    s.n_identities = config.model.num_identities;
    s.images_per_modality = config.K;
    s.channels = config.model.in_channels;
    s.height = 16;
    s.width = 8;
    return s;
}

std::vector<TermResult> check_terms(const RunConfig& config, const Options& options) {
    validate(config);
    const losses::LossWeights w = effective_weights(config);
    const std::size_t n_terms = term_names().size();
    std::vector<TermResult> results(n_terms);
    for (std::size_t k = 0; k < n_terms; ++k) results[k].term = term_names()[k];

    for (std::size_t inst = 0; inst < options.instances; ++inst) {
        const std::uint64_t seed = options.seed + inst;
        data::SyntheticSpec spec = toy_data(config);
        spec.seed = seed;
        const data::Dataset ds = data::generate(spec);
        std::mt19937_64 rng(seed);
        const data::Batch batch = data::sample_batch(ds, config.P, config.K, rng);
        model::DualBranchNet net = model::init_net(config.model, seed);

        Tape tape;
        const model::DualBranchNet tracked = model::watch(net, tape);
        const model::BranchOutputs out = model::forward(tracked, batch);
        const purifier::PurifierOutputs pur = purifier::purify(out.F_sp, tracked.purifier, tracked.gem_sp.p);
        const std::vector<Tensor> terms =
            term_tensors(losses::total_loss(out, pur, batch, tracked.classifier_sp, w));
        std::vector<Gradients> grads;
        for (const Tensor& t : terms) grads.push_back(tape.backward(t));

        std::vector<const Tensor*> watched;
        model::visit_parameters(tracked, [&](const std::string&, const Tensor& t) { watched.push_back(&t); });
        std::vector<std::string> names;
        std::vector<Tensor*> params = mutable_params(net, &names);
        const Frozen frozen = capture(net, batch, w);
        const double mu = config.model.grl_mu;

        for (std::size_t p = 0; p < params.size(); ++p) {
            const Tensor original = *params[p];
            for (std::size_t i = 0; i < original.numel(); ++i) {
                *params[p] = with_entry(original, i, original[i] + options.h);
                const std::vector<double> plus = evaluate_terms(net, batch, w, frozen);
                *params[p] = with_entry(original, i, original[i] - options.h);
                const std::vector<double> minus = evaluate_terms(net, batch, w, frozen);
                *params[p] = original;
                std::vector<double> numeric(n_terms);
                for (std::size_t k = 0; k < n_terms; ++k) numeric[k] = (plus[k] - minus[k]) / (2.0 * options.h);
                if (upstream_of_grl(names[p])) {
                    // The reversal layer hands -mu times the confuser gradient to everything before it.
                    const double conf = numeric[kConf];
                    numeric[kConf] = -mu * conf;
                    numeric[kBase] -= (1.0 + mu) * conf;
                    numeric[kTotal] -= (1.0 + mu) * conf;
                }
                for (std::size_t k = 0; k < n_terms; ++k) {
                    const double analytic = grads[k].grad(*watched[p])[i];
                    const double err = relative_error(analytic, numeric[k]);
                    TermResult& r = results[k];
                    ++r.checked;
                    if (r.worst.empty() || err > r.max_rel_err) {
                        r.max_rel_err = err;
                        r.worst = names[p] + "[" + std::to_string(i) + "]";
                    }
                }
            }
        }
    }
    for (TermResult& r : results) r.pass = r.max_rel_err < options.tol;
    return results;
}

const std::vector<OpCase>& op_registry() {
    static const std::vector<OpCase> ops = build_registry();
    return ops;
}

OpResult check_op(const OpCase& op, std::size_t instances, double h, double tol, std::uint64_t seed) {
    OpResult res;
    res.op = op.name;
    std::mt19937_64 rng(seed);
    for (std::size_t inst = 0; inst < instances; ++inst) {
        std::vector<Tensor> inputs = op.inputs(rng);
        const Tensor probe = op.apply(inputs);
        const Tensor weight = randn(probe.shape(), rng);
        auto objective = [&](const std::vector<Tensor>& x) { return sum(mul(op.apply(x), weight)); };

        Tape tape;
        std::vector<Tensor> watched;
        for (const Tensor& t : inputs) watched.push_back(tape.watch(t));
        const Gradients g = tape.backward(objective(watched));
        for (std::size_t a = 0; a < inputs.size(); ++a) {
            const Tensor analytic = g.grad(watched[a]);
            const Tensor original = inputs[a];
            for (std::size_t i = 0; i < original.numel(); ++i) {
                inputs[a] = with_entry(original, i, original[i] + h);
                const double plus = objective(inputs).item();
                inputs[a] = with_entry(original, i, original[i] - h);
                const double minus = objective(inputs).item();
                inputs[a] = original;
                res.max_rel_err = std::max(res.max_rel_err, relative_error(analytic[i], (plus - minus) / (2.0 * h)));
            }
        }
        ++res.instances;
    }
    res.pass = res.max_rel_err < tol;
    return res;
}

}  // namespace idkl::gradcheck

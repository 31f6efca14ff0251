#include "idkl/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <string>

#include "idkl/log.hpp"
#include "idkl/losses.hpp"
#include "idkl/purifier.hpp"

namespace idkl::train {
namespace {

std::vector<const Tensor*> params_of(const model::DualBranchNet& net) {
    std::vector<const Tensor*> out;
    model::visit_parameters(net, [&](const std::string&, const Tensor& t) { out.push_back(&t); });
    return out;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Seeds for the parameter init and the batch sampler come from one run seed.
constexpr std::uint64_t kSamplerSalt = 0x5bd1e995ULL;

}  // namespace

Optimizer::Optimizer(const OptimConfig& config, const model::DualBranchNet& net) : config_(config) {
    for (const Tensor* p : params_of(net)) {
        m_.emplace_back(p->numel(), 0.0);
        if (config_.kind == OptimizerKind::adam) v_.emplace_back(p->numel(), 0.0);
    }
}

void Optimizer::step(model::DualBranchNet& net, const model::DualBranchNet& tracked, const Gradients& grads,
                     double lr) {
    std::vector<const Tensor*> live = params_of(tracked);
    if (live.size() != m_.size()) {
        throw ContractError("optimizer state does not match the network");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    std::size_t i = 0;
    model::visit_parameters(net, [&](const std::string& name, Tensor& value) {
        const Tensor& watched = *live[i];
        std::vector<double> w = value.vec();
        std::vector<double> g(w.size(), 0.0);
        if (grads.reached(watched)) {
            const auto view = grads.view(watched);
            std::copy(view.begin(), view.end(), g.begin());
        }
        std::vector<double>& m = m_[i];
        for (std::size_t k = 0; k < w.size(); ++k) {
            double gk = g[k] + config_.weight_decay * w[k];
            if (!std::isfinite(gk)) {
                throw NumericError("non-finite gradient for parameter " + name);
            }
            switch (config_.kind) {
                case OptimizerKind::sgd:
                    w[k] -= lr * gk;
                    break;
                case OptimizerKind::momentum:
                    m[k] = config_.momentum * m[k] + gk;
                    w[k] -= lr * m[k];
                    break;
                case OptimizerKind::adam: {
                    std::vector<double>& v = v_[i];
                    m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * gk;
                    v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * gk * gk;
                    w[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + config_.eps);
                    break;
                }
            }
        }
        value = Tensor(value.shape(), std::move(w));
        ++i;
    });
    for (auto* gem : {&net.gem_sp, &net.gem_sh}) {
        if (gem->p.item() < kMinGemP) gem->p = Tensor::scalar(kMinGemP);
    }
}

StepOutcome train_step(model::DualBranchNet& net, Optimizer& opt, const data::Batch& batch,
                       const losses::LossWeights& weights, double lr) {
    Tape tape;
    const model::DualBranchNet tracked = model::watch(net, tape);
    const model::BranchOutputs out = model::forward(tracked, batch);
    const purifier::PurifierOutputs pur = purifier::purify(out.F_sp, tracked.purifier, tracked.gem_sp.p);
    const losses::LossTerms terms = losses::total_loss(out, pur, batch, tracked.classifier_sp, weights);
    const Gradients grads = tape.backward(terms.total);
    opt.step(net, tracked, grads, lr);

    StepOutcome o;
    o.record = {0, terms.base.total.item(), terms.ip.total.item(), terms.tgsa.item(), terms.csa.item(),
                terms.mdr.item(), terms.total.item()};
    o.L_e = terms.ip.e.item();
    o.L_r = terms.ip.r.item();
    o.d_masked = purifier::modality_distance(pur.f_hat_mminus.detach(), weights.modality_distance).item();
    o.d_unmasked = purifier::modality_distance(pur.f_hat.detach(), weights.modality_distance).item();
    return o;
}

std::size_t batches_per_epoch(const RunConfig& config, const data::Dataset& ds) {
    if (config.batches_per_epoch > 0) return config.batches_per_epoch;
    return std::max<std::size_t>(1, ds.n_identities() / config.P);
}

TrainResult train(const RunConfig& config, const data::Dataset& ds, const std::filesystem::path& out_dir,
                  const EpochCallback& on_epoch) {
    validate(config);
    if (ds.n_identities() != config.model.num_identities) {
        throw ContractError("dataset has " + std::to_string(ds.n_identities()) + " identities, model expects " +
                            std::to_string(config.model.num_identities));
    }
    const Shape img = ds.image_shape();
    if (img.at(0) != config.model.in_channels) {
        throw ContractError("dataset images have " + std::to_string(img[0]) + " channels, model expects " +
                            std::to_string(config.model.in_channels));
    }
    const losses::LossWeights weights = effective_weights(config);
    TrainResult result;
    result.net = model::init_net(config.model, config.seed);
    Optimizer opt(config.optim, result.net);
    std::mt19937_64 sampler(config.seed ^ kSamplerSalt);
    const std::size_t n_batches = batches_per_epoch(config, ds);

    std::ofstream metrics, epochs;
    const std::filesystem::path ckpt = out_dir / "checkpoint";
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream(out_dir / "config.json") << to_json(config).dump(2) << '\n';
        metrics.open(out_dir / "metrics.csv");
        epochs.open(out_dir / "epochs.csv");
        if (!metrics || !epochs) {
            throw std::runtime_error("cannot write metrics into " + out_dir.string());
        }
        metrics << kMetricsHeader << '\n';
        epochs << kEpochsHeader << '\n';
    }

    std::size_t step = 0;
    for (std::size_t e = 0; e < config.epochs; ++e) {
        const double lr = learning_rate(config.optim, e);
        EpochRecord rec;
        rec.epoch = e + 1;
        rec.lr = lr;
        for (std::size_t b = 0; b < n_batches; ++b) {
            const data::Batch batch = data::sample_batch(ds, config.P, config.K, sampler);
            StepOutcome o = train_step(result.net, opt, batch, weights, lr);
            o.record.step = ++step;
            rec.L_e += o.L_e;
            rec.L_r += o.L_r;
            rec.d_masked += o.d_masked;
            rec.d_unmasked += o.d_unmasked;
            if (metrics.is_open()) {
                const StepRecord& s = o.record;
                metrics << s.step << ',' << fmt(s.L_b) << ',' << fmt(s.L_ip) << ',' << fmt(s.L_tgsa) << ','
                        << fmt(s.L_csa) << ',' << fmt(s.L_mdr) << ',' << fmt(s.total) << '\n';
            }
            result.steps.push_back(o.record);
        }
        const double nb = static_cast<double>(n_batches);
        rec.L_e /= nb;
        rec.L_r /= nb;
        rec.d_masked /= nb;
        rec.d_unmasked /= nb;
        result.epochs.push_back(rec);
        if (epochs.is_open()) {
            epochs << rec.epoch << ',' << fmt(rec.lr) << ',' << fmt(rec.L_e) << ',' << fmt(rec.L_r) << ','
                   << fmt(rec.d_masked) << ',' << fmt(rec.d_unmasked) << '\n';
            metrics.flush();
            epochs.flush();
            model::save_checkpoint(result.net, ckpt);
        }
        log::debug("epoch " + std::to_string(rec.epoch) + "/" + std::to_string(config.epochs) +
                   " total=" + fmt(result.steps.back().total));
        if (on_epoch) on_epoch(rec, result.net);
    }
    if (!result.steps.empty()) {
        log::info("trained " + std::to_string(step) + " steps, final total loss " + fmt(result.steps.back().total));
    }
    return result;
}

}  // namespace idkl::train

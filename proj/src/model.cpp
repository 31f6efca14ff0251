#include "idkl/model.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "idkl/layers.hpp"
#include "idkl/ops.hpp"

namespace idkl::model {
namespace {

constexpr double kClassifierInitStd = 0.01;

Tensor run_stages(Tensor h, const std::vector<layers::Conv2dParams>& stages, const std::string& act) {
    const Activation kind{act == "softplus" ? ActivationKind::softplus : ActivationKind::relu};
    for (const auto& st : stages) {
        h = activation(kind, layers::conv2d(h, st));
    }
    return h;
}

std::filesystem::path sidecar_path(const std::filesystem::path& stem) {
    return std::filesystem::path(stem.string() + ".json");
}

}  // namespace

void validate(const ModelConfig& c) {
    if (c.widths.empty() || c.widths.size() != c.strides.size()) {
        throw ContractError("model widths and strides must be non-empty and of equal length");
    }
    if (c.shared_stages == 0 || c.shared_stages >= c.widths.size()) {
        throw ContractError("shared_stages must leave at least one stage per branch");
    }
    for (std::size_t w : c.widths) {
        if (w == 0) throw ContractError("stage widths must be positive");
    }
    for (std::size_t s : c.strides) {
        if (s != 1 && s != 2) throw ContractError("stage strides must be 1 or 2");
    }
    if (c.in_channels == 0 || c.num_identities < 2 || c.k_cls < 1) {
        throw ContractError("model needs in_channels >= 1, num_identities >= 2 and k_cls >= 1");
    }
    if (c.activation != "relu" && c.activation != "softplus") {
        throw ContractError("stage activation must be relu or softplus");
    }
    if (!(c.grl_mu >= 0.0) || !(c.gem_p > 0.0) || c.mask_reduction == 0) {
        throw ContractError("model needs grl_mu >= 0, gem_p > 0 and mask_reduction >= 1");
    }
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"in_channels", c.in_channels}, {"widths", c.widths},
            {"strides", c.strides},         {"shared_stages", c.shared_stages},
            {"num_identities", c.num_identities}, {"k_cls", c.k_cls},
            {"grl_mu", c.grl_mu},           {"mask_reduction", c.mask_reduction},
            {"gem_p", c.gem_p}, {"activation", c.activation}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known{"in_channels", "widths", "strides", "shared_stages", "num_identities",
                                             "k_cls", "grl_mu", "mask_reduction", "gem_p", "activation"};
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) throw ContractError("unknown model key '" + key + "'");
    }
    ModelConfig c;
    try {
        c.in_channels = j.value("in_channels", c.in_channels);
        c.widths = j.value("widths", c.widths);
        c.strides = j.value("strides", c.strides);
        c.shared_stages = j.value("shared_stages", c.shared_stages);
        c.num_identities = j.value("num_identities", c.num_identities);
        c.k_cls = j.value("k_cls", c.k_cls);
        c.grl_mu = j.value("grl_mu", c.grl_mu);
        c.mask_reduction = j.value("mask_reduction", c.mask_reduction);
        c.gem_p = j.value("gem_p", c.gem_p);
        c.activation = j.value("activation", c.activation);
    } catch (const nlohmann::json::exception& e) {
        throw ContractError(std::string("model config: ") + e.what());
    }
    validate(c);
    return c;
}

DualBranchNet init_net(const ModelConfig& config, std::uint64_t seed) {
    validate(config);
    std::mt19937_64 rng(seed);
    DualBranchNet net;
    net.config = config;
    std::size_t in = config.in_channels;
    for (std::size_t i = 0; i < config.shared_stages; ++i) {
        net.stem.push_back(layers::make_conv(in, config.widths[i], config.strides[i], rng));
        in = config.widths[i];
    }
    for (auto* branch : {&net.specific, &net.shared}) {
        std::size_t c = in;
        for (std::size_t i = config.shared_stages; i < config.widths.size(); ++i) {
            branch->push_back(layers::make_conv(c, config.widths[i], config.strides[i], rng));
            c = config.widths[i];
        }
    }
    const std::size_t feat = config.widths.back();
    net.gem_sp.p = Tensor::scalar(config.gem_p);
    net.gem_sh.p = Tensor::scalar(config.gem_p);
    net.classifier_sp = layers::make_linear(feat, config.num_identities, false, kClassifierInitStd, rng);
    net.classifier_sh = layers::make_linear(feat, config.num_identities, false, kClassifierInitStd, rng);
    for (std::size_t j = 0; j < config.k_cls; ++j) {
        net.discriminators.push_back(layers::make_linear(feat, 2, true, kClassifierInitStd, rng));
        net.confusers.push_back(layers::make_linear(feat, 2, true, kClassifierInitStd, rng));
    }
    net.purifier.enhance = layers::make_mask(feat, config.mask_reduction, rng);
    net.purifier.reduce = layers::make_mask(feat, config.mask_reduction, rng);
    return net;
}

DualBranchNet watch(const DualBranchNet& net, Tape& tape) {
    DualBranchNet tracked = net;
    visit_parameters(tracked, [&](const std::string&, Tensor& t) { t = tape.watch(t); });
    return tracked;
}

std::vector<io::NamedTensor> named_parameters(const DualBranchNet& net) {
    std::vector<io::NamedTensor> out;
    visit_parameters(net, [&](const std::string& name, const Tensor& t) { out.push_back({name, t}); });
    return out;
}

std::size_t parameter_count(const DualBranchNet& net) {
    std::size_t n = 0;
    visit_parameters(net, [&](const std::string&, const Tensor& t) { n += t.numel(); });
    return n;
}

void save_checkpoint(const DualBranchNet& net, const std::filesystem::path& stem) {
    io::save_named_tensors(stem, named_parameters(net));
    std::ofstream(sidecar_path(stem)) << to_json(net.config).dump(2) << '\n';
}

DualBranchNet load_checkpoint(const std::filesystem::path& stem) {
    std::ifstream sidecar(sidecar_path(stem));
    if (!sidecar) {
        throw std::runtime_error("missing checkpoint sidecar " + sidecar_path(stem).string());
    }
    nlohmann::json j;
    try {
        sidecar >> j;
    } catch (const nlohmann::json::exception& e) {
        throw io::FormatError("bad checkpoint sidecar: " + std::string(e.what()));
    }
    DualBranchNet net = init_net(model_config_from_json(j), 0);
    std::map<std::string, Tensor> stored;
    for (auto& nt : io::load_named_tensors(stem)) {
        stored.emplace(nt.name, std::move(nt.value));
    }
    std::size_t used = 0;
    visit_parameters(net, [&](const std::string& name, Tensor& t) {
        auto it = stored.find(name);
        if (it == stored.end()) {
            throw DimensionError("checkpoint is missing parameter " + name);
        }
        if (it->second.shape() != t.shape()) {
            throw DimensionError("checkpoint parameter " + name + " has shape " + shape_str(it->second.shape()) +
                                 ", architecture expects " + shape_str(t.shape()));
        }
        t = it->second;
        ++used;
    });
    if (used != stored.size()) {
        throw DimensionError("checkpoint holds parameters the architecture does not use");
    }
    return net;
}

BranchOutputs forward(const DualBranchNet& net, const data::Batch& batch) {
    batch.validate();
    for (std::size_t label : batch.y) {
        if (label >= net.config.num_identities) {
            throw ContractError("identity label " + std::to_string(label) + " exceeds classifier width");
        }
    }
    return forward_images(net, batch.x);
}

BranchOutputs forward_images(const DualBranchNet& net, const Tensor& x) {
    const Tensor h = run_stages(x, net.stem, net.config.activation);
    BranchOutputs out;
    out.F_sp = run_stages(h, net.specific, net.config.activation);
    out.F_sh = run_stages(h, net.shared, net.config.activation);
    out.f_sp = layers::gem_pool(out.F_sp, net.gem_sp.p);
    out.f_sh = layers::gem_pool(out.F_sh, net.gem_sh.p);
    out.Z_sp = layers::linear(out.f_sp, net.classifier_sp);
    out.Z_sh = layers::linear(out.f_sh, net.classifier_sh);
    const Tensor reversed = layers::grl(out.f_sh, net.config.grl_mu);
    for (std::size_t j = 0; j < net.discriminators.size(); ++j) {
        out.discriminator_logits.push_back(layers::linear(out.f_sp, net.discriminators[j]));
        out.confuser_logits.push_back(layers::linear(reversed, net.confusers[j]));
    }
    return out;
}

Tensor embed_shared(const DualBranchNet& net, const Tensor& x) {
    return layers::gem_pool(run_stages(run_stages(x, net.stem, net.config.activation), net.shared, net.config.activation), net.gem_sh.p);
}

Tensor embed_specific(const DualBranchNet& net, const Tensor& x) {
    return layers::gem_pool(run_stages(run_stages(x, net.stem, net.config.activation), net.specific, net.config.activation), net.gem_sp.p);
}

double modality_probe(const Tensor& features, const std::vector<int>& t, double ridge) {
    if (features.rank() != 2 || features.dim(0) != t.size()) {
        throw DimensionError("modality_probe: need one modality label per feature row");
    }
    const std::size_t n = features.dim(0), d = features.dim(1);
    std::size_t n_vis = 0, n_ir = 0;
    for (int v : t) {
        if (v == 0) ++n_vis;
        else if (v == 1) ++n_ir;
        else throw ContractError("modality_probe: labels must be 0 or 1");
    }
    if (n_vis < 2 || n_ir < 2) {
        throw ContractError("modality_probe: need at least 2 samples of each modality");
    }
    Eigen::MatrixXd X(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) X(i, j) = features[i * d + j];
    }
    // Standardize; constant columns carry no signal and are zeroed.
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        const double mu = X.col(j).mean();
        X.col(j).array() -= mu;
        const double sd = std::sqrt(X.col(j).squaredNorm() / static_cast<double>(n));
        if (sd > 1e-12) {
            X.col(j) /= sd;
        } else {
            X.col(j).setZero();
        }
    }
    Eigen::VectorXd y(n);
    for (std::size_t i = 0; i < n; ++i) y(i) = t[i] == 1 ? 1.0 : -1.0;
    const double y_mean = y.mean();
    const Eigen::VectorXd yc = y.array() - y_mean;
    Eigen::MatrixXd gram = X.transpose() * X;
    gram.diagonal().array() += ridge;
    const Eigen::VectorXd w = gram.ldlt().solve(X.transpose() * yc);
    const Eigen::VectorXd score = (X * w).array() + y_mean;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const int pred = score(i) > 0.0 ? 1 : 0;
        if (pred == t[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace idkl::model

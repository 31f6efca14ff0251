#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "idkl/dataset.hpp"
#include "idkl/io.hpp"
#include "idkl/layers.hpp"
#include "idkl/tensor.hpp"
#include "json.hpp"

namespace idkl::model {

struct ModelConfig {
    std::size_t in_channels = 3;
    std::vector<std::size_t> widths{8, 16, 32, 64, 64};  // one conv stage each
    std::vector<std::size_t> strides{2, 2, 2, 1, 1};
    std::size_t shared_stages = 3;  // leading stages owned by the common stem
    std::size_t num_identities = 16;
    std::size_t k_cls = 1;  // discriminator / confuser heads per branch
    double grl_mu = 1.0;
    std::size_t mask_reduction = layers::kDefaultMaskReduction;
    double gem_p = layers::kDefaultGemP;
    // Stage nonlinearity: "relu", or "softplus" for kink-free gradient checks.
    std::string activation = "relu";
};

void validate(const ModelConfig& c);
nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// The two channel masks of the information purifier.
struct PurifierParams {
    layers::MaskParams enhance;  // m_e, from the specific feature
    layers::MaskParams reduce;   // m_r, from its instance-normalized version
};

struct DualBranchNet {
    ModelConfig config;
    std::vector<layers::Conv2dParams> stem;      // shared shallow stages
    std::vector<layers::Conv2dParams> specific;  // modality-specific deep stages
    std::vector<layers::Conv2dParams> shared;    // modality-shared deep stages
    layers::GemParams gem_sp;
    layers::GemParams gem_sh;
    layers::LinearParams classifier_sp;  // bias-free, num_identities outputs
    layers::LinearParams classifier_sh;
    std::vector<layers::LinearParams> discriminators;  // on f_sp, 2 outputs
    std::vector<layers::LinearParams> confusers;       // on grl(f_sh), 2 outputs
    PurifierParams purifier;
};

DualBranchNet init_net(const ModelConfig& config, std::uint64_t seed);

/// Calls f(name, tensor) for every parameter in a fixed order.
template <typename Net, typename F>
void visit_parameters(Net& net, F&& f) {
    auto conv = [&](auto& stages, const std::string& prefix) {
        for (std::size_t i = 0; i < stages.size(); ++i) {
            const std::string base = prefix + "." + std::to_string(i);
            f(base + ".weight", stages[i].weight);
            f(base + ".bias", stages[i].bias);
        }
    };
    auto lin = [&](auto& p, const std::string& base) {
        f(base + ".weight", p.weight);
        if (p.bias) f(base + ".bias", *p.bias);
    };
    conv(net.stem, "stem");
    conv(net.specific, "specific");
    conv(net.shared, "shared");
    f(std::string("gem_sp.p"), net.gem_sp.p);
    f(std::string("gem_sh.p"), net.gem_sh.p);
    lin(net.classifier_sp, "classifier_sp");
    lin(net.classifier_sh, "classifier_sh");
    for (std::size_t j = 0; j < net.discriminators.size(); ++j) lin(net.discriminators[j], "discriminator." + std::to_string(j));
    for (std::size_t j = 0; j < net.confusers.size(); ++j) lin(net.confusers[j], "confuser." + std::to_string(j));
    lin(net.purifier.enhance.squeeze, "purifier.enhance.squeeze");
    lin(net.purifier.enhance.excite, "purifier.enhance.excite");
    lin(net.purifier.reduce.squeeze, "purifier.reduce.squeeze");
    lin(net.purifier.reduce.excite, "purifier.reduce.excite");
}

/// Copy whose parameters are leaves on `tape`.
DualBranchNet watch(const DualBranchNet& net, Tape& tape);

std::vector<io::NamedTensor> named_parameters(const DualBranchNet& net);
std::size_t parameter_count(const DualBranchNet& net);

/// Writes `<stem>.bin`, `<stem>.index.csv` and the architecture sidecar `<stem>.json`.
void save_checkpoint(const DualBranchNet& net, const std::filesystem::path& stem);
/// Throws if the tensors do not fit the architecture recorded in the sidecar.
DualBranchNet load_checkpoint(const std::filesystem::path& stem);

struct BranchOutputs {
    Tensor F_sp, F_sh;  // [2N x C x H x W]
    Tensor f_sp, f_sh;  // [2N x C]
    Tensor Z_sp, Z_sh;  // [2N x num_identities]
    std::vector<Tensor> discriminator_logits;  // [2N x 2] per head
    std::vector<Tensor> confuser_logits;       // [2N x 2] per head, behind the GRL
};

/// Validates the P x K x 2 layout, then runs forward_images.
BranchOutputs forward(const DualBranchNet& net, const data::Batch& batch);
BranchOutputs forward_images(const DualBranchNet& net, const Tensor& x);

/// Pooled shared-branch feature only. Touches stem and shared stages, never
/// the specific branch or the purifier.
Tensor embed_shared(const DualBranchNet& net, const Tensor& x);
Tensor embed_specific(const DualBranchNet& net, const Tensor& x);

/// Held-in accuracy of a closed-form ridge classifier predicting the
/// modality label from standardized features.
double modality_probe(const Tensor& features, const std::vector<int>& t, double ridge = 1.0);

}  // namespace idkl::model

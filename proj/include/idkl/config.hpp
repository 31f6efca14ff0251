#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "idkl/losses.hpp"
#include "idkl/model.hpp"
#include "json.hpp"

namespace idkl {

enum class OptimizerKind { sgd, momentum, adam };

struct OptimConfig {
    OptimizerKind kind = OptimizerKind::sgd;
    double lr = 3e-5;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    std::vector<std::size_t> decay_epochs{60, 100};
    double decay_factor = 0.1;
};

// Loss terms that `disable` can switch off; each zeroes its weight.
inline const std::vector<std::string> kDisableableTerms{"ip", "tgsa", "csa", "mdr"};

struct RunConfig {
    model::ModelConfig model;
    losses::LossWeights loss;
    OptimConfig optim;
    std::size_t P = 12;
    std::size_t K = 10;
    std::size_t epochs = 150;
    std::size_t batches_per_epoch = 0;  // 0: n_identities / P, at least 1
    std::uint64_t seed = 0;
    std::vector<std::string> disable;
    std::string data_dir = "data/train";
    std::string out_dir = "runs/default";
};

/// Throws ContractError on any invalid field.
void validate(const RunConfig& c);

nlohmann::json to_json(const RunConfig& c);

/// Sections "model", "loss", "optim", "train", "paths". Missing keys keep
/// their defaults; unknown keys at any level are rejected.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

/// Loss weights after applying the `disable` list.
losses::LossWeights effective_weights(const RunConfig& c);

/// Step schedule: lr * factor^(number of decay epochs <= epoch), epochs counted from 0.
double learning_rate(const OptimConfig& o, std::size_t epoch);

std::string optimizer_name(OptimizerKind k);

}  // namespace idkl

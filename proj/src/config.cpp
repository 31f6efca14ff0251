#include "idkl/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace idkl {
namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& section) {
    if (!j.is_object()) {
        throw ContractError("config section '" + section + "' must be an object");
    }
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) {
            throw ContractError("unknown config key '" + (section.empty() ? key : section + "." + key) + "'");
        }
    }
}

OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "momentum") return OptimizerKind::momentum;
    if (s == "adam") return OptimizerKind::adam;
    throw ContractError("unknown optimizer '" + s + "' (sgd, momentum, adam)");
}

purifier::ModalityDistance parse_distance(const std::string& s) {
    if (s == "centroid") return purifier::ModalityDistance::centroid;
    if (s == "paired") return purifier::ModalityDistance::paired;
    throw ContractError("unknown modality_distance '" + s + "' (centroid, paired)");
}

}  // namespace

std::string optimizer_name(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::sgd: return "sgd";
        case OptimizerKind::momentum: return "momentum";
        case OptimizerKind::adam: return "adam";
    }
    return "sgd";
}

void validate(const RunConfig& c) {
    model::validate(c.model);
    losses::validate(c.loss);
    const OptimConfig& o = c.optim;
    if (!(o.lr > 0.0) || !(o.decay_factor > 0.0) || !(o.weight_decay >= 0.0)) {
        throw ContractError("optimizer needs lr > 0, decay_factor > 0, weight_decay >= 0");
    }
    if (!(o.momentum >= 0.0 && o.momentum < 1.0) || !(o.beta1 >= 0.0 && o.beta1 < 1.0) ||
        !(o.beta2 >= 0.0 && o.beta2 < 1.0) || !(o.eps > 0.0)) {
        throw ContractError("optimizer momentum/beta values must lie in [0, 1) and eps > 0");
    }
    if (c.P < 2 || c.K < 2) {
        throw ContractError("P >= 2 identities and K >= 2 images per modality are needed for triplet mining");
    }
    if (c.epochs < 1) {
        throw ContractError("epochs must be >= 1");
    }
    for (const auto& d : c.disable) {
        if (std::find(kDisableableTerms.begin(), kDisableableTerms.end(), d) == kDisableableTerms.end()) {
            throw ContractError("cannot disable unknown loss term '" + d + "' (ip, tgsa, csa, mdr)");
        }
    }
}

nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j;
    j["model"] = model::to_json(c.model);
    j["loss"] = {{"lambda1", c.loss.lambda1},
                 {"lambda2", c.loss.lambda2},
                 {"lambda3", c.loss.lambda3},
                 {"margin", c.loss.margin},
                 {"tau", c.loss.tau},
                 {"affinity_sign", c.loss.affinity_sign},
                 {"modality_distance",
                  c.loss.modality_distance == purifier::ModalityDistance::centroid ? "centroid" : "paired"}};
    j["optim"] = {{"optimizer", optimizer_name(c.optim.kind)},
                  {"lr", c.optim.lr},
                  {"momentum", c.optim.momentum},
                  {"beta1", c.optim.beta1},
                  {"beta2", c.optim.beta2},
                  {"eps", c.optim.eps},
                  {"weight_decay", c.optim.weight_decay},
                  {"decay_epochs", c.optim.decay_epochs},
                  {"decay_factor", c.optim.decay_factor}};
    j["train"] = {{"P", c.P},
                  {"K", c.K},
                  {"epochs", c.epochs},
                  {"batches_per_epoch", c.batches_per_epoch},
                  {"seed", c.seed},
                  {"disable", c.disable}};
    j["paths"] = {{"data", c.data_dir}, {"out", c.out_dir}};
    return j;
}

RunConfig config_from_json(const nlohmann::json& j) {
    reject_unknown(j, {"model", "loss", "optim", "train", "paths"}, "");
    RunConfig c;
    try {
        if (j.contains("model")) {
            c.model = model::model_config_from_json(j.at("model"));
        }
        if (j.contains("loss")) {
            const auto& l = j.at("loss");
            reject_unknown(l, {"lambda1", "lambda2", "lambda3", "margin", "tau", "affinity_sign", "modality_distance"},
                           "loss");
            c.loss.lambda1 = l.value("lambda1", c.loss.lambda1);
            c.loss.lambda2 = l.value("lambda2", c.loss.lambda2);
            c.loss.lambda3 = l.value("lambda3", c.loss.lambda3);
            c.loss.margin = l.value("margin", c.loss.margin);
            c.loss.tau = l.value("tau", c.loss.tau);
            c.loss.affinity_sign = l.value("affinity_sign", c.loss.affinity_sign);
            if (l.contains("modality_distance")) {
                c.loss.modality_distance = parse_distance(l.at("modality_distance").get<std::string>());
            }
        }
        if (j.contains("optim")) {
            const auto& o = j.at("optim");
            reject_unknown(o, {"optimizer", "lr", "momentum", "beta1", "beta2", "eps", "weight_decay", "decay_epochs",
                               "decay_factor"},
                           "optim");
            if (o.contains("optimizer")) c.optim.kind = parse_optimizer(o.at("optimizer").get<std::string>());
            c.optim.lr = o.value("lr", c.optim.lr);
            c.optim.momentum = o.value("momentum", c.optim.momentum);
            c.optim.beta1 = o.value("beta1", c.optim.beta1);
            c.optim.beta2 = o.value("beta2", c.optim.beta2);
            c.optim.eps = o.value("eps", c.optim.eps);
            c.optim.weight_decay = o.value("weight_decay", c.optim.weight_decay);
            c.optim.decay_epochs = o.value("decay_epochs", c.optim.decay_epochs);
            c.optim.decay_factor = o.value("decay_factor", c.optim.decay_factor);
        }
        if (j.contains("train")) {
            const auto& t = j.at("train");
            reject_unknown(t, {"P", "K", "epochs", "batches_per_epoch", "seed", "disable"}, "train");
            c.P = t.value("P", c.P);
            c.K = t.value("K", c.K);
            c.epochs = t.value("epochs", c.epochs);
            c.batches_per_epoch = t.value("batches_per_epoch", c.batches_per_epoch);
            c.seed = t.value("seed", c.seed);
            c.disable = t.value("disable", c.disable);
        }
        if (j.contains("paths")) {
            const auto& p = j.at("paths");
            reject_unknown(p, {"data", "out"}, "paths");
            c.data_dir = p.value("data", c.data_dir);
            c.out_dir = p.value("out", c.out_dir);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ContractError(std::string("config: ") + e.what());
    }
    validate(c);
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) {
        throw ContractError("cannot open config " + path.string());
    }
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ContractError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

losses::LossWeights effective_weights(const RunConfig& c) {
    losses::LossWeights w = c.loss;
    for (const auto& d : c.disable) {
        if (d == "ip") w.lambda1 = 0.0;
        if (d == "tgsa") w.lambda2 = 0.0;
        if (d == "csa") w.lambda3 = 0.0;
        if (d == "mdr") w.mdr = 0.0;
    }
    return w;
}

double learning_rate(const OptimConfig& o, std::size_t epoch) {
    const auto passed = std::count_if(o.decay_epochs.begin(), o.decay_epochs.end(),
                                      [epoch](std::size_t d) { return epoch >= d; });
    return o.lr * std::pow(o.decay_factor, static_cast<double>(passed));
}

}  // namespace idkl

#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <vector>

#include "idkl/config.hpp"
#include "idkl/dataset.hpp"
#include "idkl/model.hpp"

namespace idkl::train {

/// One row of metrics.csv.
struct StepRecord {
    std::size_t step = 0;
    double L_b = 0.0, L_ip = 0.0, L_tgsa = 0.0, L_csa = 0.0, L_mdr = 0.0, total = 0.0;
};

/// One row of epochs.csv: epoch means of the purifier diagnostics.
struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double lr = 0.0;
    double L_e = 0.0, L_r = 0.0;
    double d_masked = 0.0;    // d(f_hat_mminus_V, f_hat_mminus_I)
    double d_unmasked = 0.0;  // d(f_hat_V, f_hat_I)
};

// SGD, heavy-ball momentum or Adam over the parameters of a DualBranchNet,
// with state kept in visit_parameters order.
class Optimizer {
 public:
    Optimizer(const OptimConfig& config, const model::DualBranchNet& net);

    /// Updates `net` in place from the gradients of `tracked`, its watched
    /// copy. Throws NumericError naming the parameter on a non-finite gradient.
    void step(model::DualBranchNet& net, const model::DualBranchNet& tracked, const Gradients& grads, double lr);

 private:
    OptimConfig config_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// Minimum learned GeM exponent; the optimizer clamps p after each step.
inline constexpr double kMinGemP = 1.0;

struct StepOutcome {
    StepRecord record;
    double L_e = 0.0, L_r = 0.0, d_masked = 0.0, d_unmasked = 0.0;
};

/// Forward, total loss, backward and one optimizer update.
StepOutcome train_step(model::DualBranchNet& net, Optimizer& opt, const data::Batch& batch,
                       const losses::LossWeights& weights, double lr);

std::size_t batches_per_epoch(const RunConfig& config, const data::Dataset& ds);

struct TrainResult {
    model::DualBranchNet net;
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
};

using EpochCallback = std::function<void(const EpochRecord&, const model::DualBranchNet&)>;

/// Seeded training run. With a non-empty `out_dir` writes config.json,
/// metrics.csv, epochs.csv and a checkpoint (overwritten every epoch).
TrainResult train(const RunConfig& config, const data::Dataset& ds, const std::filesystem::path& out_dir = {},
                  const EpochCallback& on_epoch = {});

inline constexpr const char* kMetricsHeader = "step,L_b,L_ip,L_tgsa,L_csa,L_mdr,total";
inline constexpr const char* kEpochsHeader = "epoch,lr,L_e,L_r,d_masked,d_unmasked";

}  // namespace idkl::train

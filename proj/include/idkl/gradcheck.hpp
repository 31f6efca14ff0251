#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "idkl/config.hpp"
#include "idkl/dataset.hpp"
#include "idkl/tensor.hpp"

// Central-difference checks of tape gradients, per op and per loss term.
namespace idkl::gradcheck {

inline constexpr double kDefaultStep = 1e-5;
inline constexpr double kDefaultTolerance = 1e-4;
// |a - n| / max(|a|, |n|, kErrorFloor)
inline constexpr double kErrorFloor = 1e-6;

double relative_error(double analytic, double numeric);

struct Options {
    std::size_t instances = 5;
    double h = kDefaultStep;
    double tol = kDefaultTolerance;
    std::uint64_t seed = 0;
};

/// Names in report order: base-loss parts, L_b, purifier terms, alignment terms, total.
const std::vector<std::string>& term_names();

struct TermResult {
    std::string term;
    double max_rel_err = 0.0;
    std::string worst;  // parameter[index] with the largest error
    std::size_t checked = 0;
    bool pass = false;
};

/// Tiny softplus network and batch shape that keep a full-parameter check fast.
RunConfig toy_config();
/// Dataset spec matching the model and batch of `config`.
data::SyntheticSpec toy_data(const RunConfig& config);

/// Every parameter coordinate of a freshly seeded net, for every loss term,
/// on `options.instances` seeded batches. Detached reference quantities are
/// held at their unperturbed values; coordinates upstream of the gradient
/// reversal layer get the confuser contribution scaled by -mu.
std::vector<TermResult> check_terms(const RunConfig& config, const Options& options = {});

struct OpCase {
    std::string name;
    std::function<std::vector<Tensor>(std::mt19937_64&)> inputs;
    std::function<Tensor(const std::vector<Tensor>&)> apply;
};

/// Differentiable primitives and layers with input generators.
const std::vector<OpCase>& op_registry();

struct OpResult {
    std::string op;
    double max_rel_err = 0.0;
    std::size_t instances = 0;
    bool pass = false;
};

/// Checks d/dx sum(w * op(x)) for random w over `instances` random inputs.
OpResult check_op(const OpCase& op, std::size_t instances, double h, double tol, std::uint64_t seed);

}  // namespace idkl::gradcheck

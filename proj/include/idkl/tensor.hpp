#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace idkl {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;
inline constexpr NodeId kNoNode = static_cast<NodeId>(-1);

/// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
    using std::invalid_argument::invalid_argument;
};

/// A documented precondition on values (not shapes) was violated.
class ContractError : public std::invalid_argument {
 public:
    using std::invalid_argument::invalid_argument;
};

/// A forward op produced NaN or Inf.
class NumericError : public std::runtime_error {
 public:
    using std::runtime_error::runtime_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

// Immutable dense row-major array of doubles. Copies share storage. A tensor
// produced on a Tape carries the id of the node that created it.
class Tensor {
 public:
    Tensor();
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const noexcept { return data_->size(); }

    std::span<const double> data() const noexcept { return *data_; }
    const std::vector<double>& vec() const noexcept { return *data_; }
    double operator[](std::size_t i) const { return (*data_)[i]; }
    double item() const;

    bool tracked() const noexcept { return tape_ != nullptr; }
    Tape* tape() const noexcept { return tape_; }
    NodeId node() const noexcept { return node_; }

    /// Same values, no tape linkage.
    Tensor detach() const;

 private:
    friend class Tape;

    Shape shape_;
    std::shared_ptr<const std::vector<double>> data_;
    Tape* tape_ = nullptr;
    NodeId node_ = kNoNode;
};

using GradSpan = std::span<double>;

// Receives the gradient of the node's output and accumulates (+=) into the
// gradient buffers of its inputs. An input that is not tracked gets an empty
// span.
using BackwardFn = std::function<void(std::span<const double> grad_out, std::span<const GradSpan> grad_in)>;

class Gradients;

// Define-by-run record of a forward pass. A Tape must outlive every tensor
// recorded on it; it is single-owner and not thread-safe.
class Tape {
 public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Registers `value` as a leaf and returns the tracked alias.
    Tensor watch(const Tensor& value);

    /// Appends an op node whose inputs are `inputs`. Untracked inputs are
    /// kept as absent parents. Inputs tracked on a different tape are rejected.
    Tensor record(std::string_view op, Tensor result, std::span<const Tensor> inputs, BackwardFn backward);

    /// Reverse sweep from a tracked scalar. The tape is not consumed, so
    /// several losses recorded on it can be differentiated independently.
    Gradients backward(const Tensor& loss) const;

    std::size_t size() const noexcept { return nodes_.size(); }
    const std::string& op_name(NodeId id) const { return nodes_.at(id).op; }
    std::span<const NodeId> parents(NodeId id) const { return nodes_.at(id).parents; }

 private:
    struct Node {
        std::string op;
        std::vector<NodeId> parents;
        std::size_t numel = 0;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
};

// Gradient store keyed by node id.
class Gradients {
 public:
    /// Gradient with the shape of `t`; zeros when nothing reached it.
    Tensor grad(const Tensor& t) const;
    std::span<const double> view(const Tensor& t) const;
    bool reached(const Tensor& t) const;

 private:
    friend class Tape;
    const Tape* tape_ = nullptr;
    std::vector<std::vector<double>> grads_;
};

/// Builds an op result. If any input is tracked the result is recorded on
/// that tape with `backward`; otherwise the closure is dropped. Throws
/// NumericError naming `op` when the output is not finite.
Tensor make_result(std::string_view op, Shape shape, std::vector<double> data, std::span<const Tensor> inputs,
                   BackwardFn backward);

inline Tensor make_result(std::string_view op, Shape shape, std::vector<double> data,
                          std::initializer_list<Tensor> inputs, BackwardFn backward) {
    return make_result(op, std::move(shape), std::move(data), std::span<const Tensor>(inputs.begin(), inputs.size()),
                       std::move(backward));
}

}  // namespace idkl

#include "idkl/tensor.hpp"

#include <cmath>
#include <sstream>

namespace idkl {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) {
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor() : data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
    for (std::size_t e : shape_) {
        if (e == 0) {
            throw DimensionError("tensor extents must be positive, got " + shape_str(shape_));
        }
    }
    if (shape_numel(shape_) != data.size()) {
        throw DimensionError("shape " + shape_str(shape_) + " does not match " + std::to_string(data.size()) +
                             " values");
    }
    data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
    }
    return shape_[axis];
}

double Tensor::item() const {
    if (numel() != 1) {
        throw DimensionError("item() on tensor of shape " + shape_str(shape_));
    }
    return (*data_)[0];
}

Tensor Tensor::detach() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = kNoNode;
    return t;
}

Tensor Tape::watch(const Tensor& value) {
    Tensor t = value.detach();
    nodes_.push_back(Node{"leaf", {}, value.numel(), nullptr});
    t.tape_ = this;
    t.node_ = nodes_.size() - 1;
    return t;
}

Tensor Tape::record(std::string_view op, Tensor result, std::span<const Tensor> inputs, BackwardFn backward) {
    Node node{std::string(op), {}, result.numel(), std::move(backward)};
    node.parents.reserve(inputs.size());
    for (const Tensor& in : inputs) {
        if (in.tape_ != nullptr && in.tape_ != this) {
            throw std::logic_error("op '" + std::string(op) + "' mixes tensors from different tapes");
        }
        node.parents.push_back(in.tape_ == this ? in.node_ : kNoNode);
    }
    nodes_.push_back(std::move(node));
    result.tape_ = this;
    result.node_ = nodes_.size() - 1;
    return result;
}

Gradients Tape::backward(const Tensor& loss) const {
    if (loss.tape_ != this) {
        throw std::logic_error("backward() called on a tensor that is not tracked on this tape");
    }
    if (loss.numel() != 1) {
        throw DimensionError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    }
    Gradients out;
    out.tape_ = this;
    out.grads_.resize(nodes_.size());
    out.grads_[loss.node_].assign(1, 1.0);

    std::vector<GradSpan> parent_grads;
    for (NodeId id = loss.node_ + 1; id-- > 0;) {
        const Node& node = nodes_[id];
        if (out.grads_[id].empty() || !node.backward) {
            continue;
        }
        parent_grads.assign(node.parents.size(), GradSpan{});
        for (std::size_t i = 0; i < node.parents.size(); ++i) {
            const NodeId p = node.parents[i];
            if (p == kNoNode) {
                continue;
            }
            auto& g = out.grads_[p];
            if (g.empty()) {
                g.assign(nodes_[p].numel, 0.0);
            }
            parent_grads[i] = g;
        }
        node.backward(out.grads_[id], parent_grads);
    }
    return out;
}

Tensor Gradients::grad(const Tensor& t) const {
    auto v = view(t);
    if (v.empty()) {
        return Tensor::zeros(t.shape());
    }
    return Tensor(t.shape(), std::vector<double>(v.begin(), v.end()));
}

std::span<const double> Gradients::view(const Tensor& t) const {
    if (t.tape() != tape_ || t.node() >= grads_.size()) {
        return {};
    }
    return grads_[t.node()];
}

bool Gradients::reached(const Tensor& t) const { return !view(t).empty(); }

Tensor make_result(std::string_view op, Shape shape, std::vector<double> data, std::span<const Tensor> inputs,
                   BackwardFn backward) {
    for (double v : data) {
        if (!std::isfinite(v)) {
            throw NumericError("op '" + std::string(op) + "' produced a non-finite value");
        }
    }
    Tensor result(std::move(shape), std::move(data));
    Tape* tape = nullptr;
    for (const Tensor& in : inputs) {
        if (in.tracked()) {
            tape = in.tape();
            break;
        }
    }
    if (tape == nullptr) {
        return result;
    }
    return tape->record(op, std::move(result), inputs, std::move(backward));
}

}  // namespace idkl

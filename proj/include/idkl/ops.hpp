#pragma once

#include <cstddef>
#include <vector>

#include "idkl/tensor.hpp"

// Differentiable primitives. Each op records itself on the tape of its
// tracked inputs (if any) and is otherwise a plain function of values.
namespace idkl {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

Tensor matmul(const Tensor& a, const Tensor& b);

enum class ActivationKind { relu, leaky_relu, sigmoid, softplus };

struct Activation {
    ActivationKind kind = ActivationKind::relu;
    double alpha = 0.01;  // leaky_relu slope, must lie in (0, 1)
};

Tensor activation(const Activation& act, const Tensor& x);
inline Tensor relu(const Tensor& x) { return activation({ActivationKind::relu}, x); }
inline Tensor sigmoid(const Tensor& x) { return activation({ActivationKind::sigmoid}, x); }
inline Tensor softplus(const Tensor& x) { return activation({ActivationKind::softplus}, x); }

/// Scalar softplus ln(1 + e^x) without overflow.
double softplus_value(double x);

/// Row-wise softmax of an [n x c] matrix, max-subtracted.
Tensor softmax_rows(const Tensor& x);

inline constexpr double kKlEpsilon = 1e-12;

/// Mean over rows of KL(p_i || q_i) for row-stochastic [n x c] inputs.
/// q is floored at kKlEpsilon before the log; zero entries of p contribute 0.
Tensor kl_rows(const Tensor& p, const Tensor& q);

enum class ReduceKind { mean, sum };

/// Reduces over `axes` (removed from the result shape).
Tensor reduce(ReduceKind kind, const Tensor& x, const std::vector<std::size_t>& axes);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Population variance (divides by the element count) over `axes`.
Tensor population_variance(const Tensor& x, const std::vector<std::size_t>& axes);

/// D[i, j] = ||a_i - b_j||_2 for [n x c] and [m x c] inputs.
Tensor euclidean_distance_matrix(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& x, Shape shape);

/// Rows [begin, end) along axis 0, for tensors of any rank >= 1.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);

/// out[i] = x[i, index[i]] for an [n x m] matrix.
Tensor gather_cols(const Tensor& x, const std::vector<std::size_t>& index);

}  // namespace idkl

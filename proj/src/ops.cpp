#include "idkl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "idkl/detail/gemm.hpp"

namespace idkl {
namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

void require_matrix(const char* op, const Tensor& x) {
    if (x.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(x.shape()));
    }
}

// Maps every flat input index to its flat output index after reducing `axes`.
struct ReductionMap {
    Shape out_shape;
    std::vector<std::size_t> out_index;
    std::size_t count = 1;  // elements folded into each output
};

ReductionMap make_reduction_map(const Shape& shape, const std::vector<std::size_t>& axes) {
    if (axes.empty()) {
        throw DimensionError("reduce: empty axis list");
    }
    std::vector<bool> reduced(shape.size(), false);
    for (std::size_t ax : axes) {
        if (ax >= shape.size() || reduced[ax]) {
            throw DimensionError("reduce: invalid axis " + std::to_string(ax) + " for " + shape_str(shape));
        }
        reduced[ax] = true;
    }
    ReductionMap map;
    std::vector<std::size_t> out_stride(shape.size(), 0);
    std::size_t stride = 1;
    for (std::size_t d = shape.size(); d-- > 0;) {
        if (reduced[d]) {
            map.count *= shape[d];
        } else {
            out_stride[d] = stride;
            stride *= shape[d];
        }
    }
    for (std::size_t d = 0; d < shape.size(); ++d) {
        if (!reduced[d]) {
            map.out_shape.push_back(shape[d]);
        }
    }
    const std::size_t n = shape_numel(shape);
    map.out_index.resize(n);
    std::vector<std::size_t> coord(shape.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t o = 0;
        for (std::size_t d = 0; d < shape.size(); ++d) {
            o += coord[d] * out_stride[d];
        }
        map.out_index[i] = o;
        for (std::size_t d = shape.size(); d-- > 0;) {
            if (++coord[d] < shape[d]) {
                break;
            }
            coord[d] = 0;
        }
    }
    return map;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] + b[i];
    }
    return make_result("add", a.shape(), std::move(out), {a, b},
                       [](std::span<const double> g, std::span<const GradSpan> gin) {
                           for (const GradSpan& d : gin) {
                               for (std::size_t i = 0; i < d.size(); ++i) {
                                   d[i] += g[i];
                               }
                           }
                       });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] - b[i];
    }
    return make_result("sub", a.shape(), std::move(out), {a, b},
                       [](std::span<const double> g, std::span<const GradSpan> gin) {
                           for (std::size_t i = 0; i < gin[0].size(); ++i) {
                               gin[0][i] += g[i];
                           }
                           for (std::size_t i = 0; i < gin[1].size(); ++i) {
                               gin[1][i] -= g[i];
                           }
                       });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] * b[i];
    }
    return make_result("mul", a.shape(), std::move(out), {a, b},
                       [a = a.detach(), b = b.detach()](std::span<const double> g, std::span<const GradSpan> gin) {
                           for (std::size_t i = 0; i < gin[0].size(); ++i) {
                               gin[0][i] += g[i] * b[i];
                           }
                           for (std::size_t i = 0; i < gin[1].size(); ++i) {
                               gin[1][i] += g[i] * a[i];
                           }
                       });
}

Tensor scale(const Tensor& x, double factor) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] * factor;
    }
    return make_result("scale", x.shape(), std::move(out), {x},
                       [factor](std::span<const double> g, std::span<const GradSpan> gin) {
                           for (std::size_t i = 0; i < gin[0].size(); ++i) {
                               gin[0][i] += g[i] * factor;
                           }
                       });
}

Tensor add_scalar(const Tensor& x, double value) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] + value;
    }
    return make_result("add_scalar", x.shape(), std::move(out), {x},
                       [](std::span<const double> g, std::span<const GradSpan> gin) {
                           for (std::size_t i = 0; i < gin[0].size(); ++i) {
                               gin[0][i] += g[i];
                           }
                       });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix("matmul", a);
    require_matrix("matmul", b);
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    detail::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
    return make_result("matmul", {m, n}, std::move(out), {a, b},
                       [a = a.detach(), b = b.detach(), m, n, k](std::span<const double> g,
                                                                  std::span<const GradSpan> gin) {
                           if (!gin[0].empty()) {
                               detail::gemm_nt(m, k, n, g.data(), b.data().data(), gin[0].data());
                           }
                           if (!gin[1].empty()) {
                               detail::gemm_tn(k, n, m, a.data().data(), g.data(), gin[1].data());
                           }
                       });
}

double softplus_value(double x) {
    if (x > 30.0) {
        return x;
    }
    return std::log1p(std::exp(x));
}

namespace {

double sigmoid_value(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Tensor activation(const Activation& act, const Tensor& x) {
    if (act.kind == ActivationKind::leaky_relu && !(act.alpha > 0.0 && act.alpha < 1.0)) {
        throw ContractError("leaky_relu slope must lie in (0, 1)");
    }
    std::vector<double> out(x.numel());
    const auto in = x.data();
    const char* name = "relu";
    switch (act.kind) {
        case ActivationKind::relu:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > 0 ? in[i] : 0.0;
            break;
        case ActivationKind::leaky_relu:
            name = "leaky_relu";
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > 0 ? in[i] : act.alpha * in[i];
            break;
        case ActivationKind::sigmoid:
            name = "sigmoid";
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_value(in[i]);
            break;
        case ActivationKind::softplus:
            name = "softplus";
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = softplus_value(in[i]);
            break;
    }
    Tensor y(x.shape(), out);
    return make_result(name, x.shape(), std::move(out), {x},
                       [act, x = x.detach(), y](std::span<const double> g, std::span<const GradSpan> gin) {
                           GradSpan d = gin[0];
                           for (std::size_t i = 0; i < d.size(); ++i) {
                               double slope = 0.0;
                               switch (act.kind) {
                                   case ActivationKind::relu: slope = x[i] > 0 ? 1.0 : 0.0; break;
                                   case ActivationKind::leaky_relu: slope = x[i] > 0 ? 1.0 : act.alpha; break;
                                   case ActivationKind::sigmoid: slope = y[i] * (1.0 - y[i]); break;
                                   case ActivationKind::softplus: slope = sigmoid_value(x[i]); break;
                               }
                               d[i] += g[i] * slope;
                           }
                       });
}

Tensor softmax_rows(const Tensor& x) {
    require_matrix("softmax_rows", x);
    const std::size_t n = x.dim(0), c = x.dim(1);
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = x.data().data() + i * c;
        double* o = out.data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            o[j] = std::exp(row[j] - mx);
            s += o[j];
        }
        for (std::size_t j = 0; j < c; ++j) {
            o[j] /= s;
        }
    }
    Tensor y(x.shape(), out);
    return make_result("softmax_rows", x.shape(), std::move(out), {x},
                       [y, n, c](std::span<const double> g, std::span<const GradSpan> gin) {
                           for (std::size_t i = 0; i < n; ++i) {
                               double dot = 0.0;
                               for (std::size_t j = 0; j < c; ++j) {
                                   dot += g[i * c + j] * y[i * c + j];
                               }
                               for (std::size_t j = 0; j < c; ++j) {
                                   gin[0][i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
                               }
                           }
                       });
}

Tensor kl_rows(const Tensor& p, const Tensor& q) {
    require_matrix("kl_rows", p);
    require_same_shape("kl_rows", p, q);
    const std::size_t n = p.dim(0), c = p.dim(1);
    for (const Tensor* t : {&p, &q}) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                const double v = (*t)[i * c + j];
                if (v < 0.0) {
                    throw ContractError("kl_rows: negative probability");
                }
                s += v;
            }
            if (std::abs(s - 1.0) > 1e-9) {
                throw ContractError("kl_rows: row " + std::to_string(i) + " sums to " + std::to_string(s));
            }
        }
    }
    double total = 0.0;
    for (std::size_t i = 0; i < p.numel(); ++i) {
        if (p[i] > 0.0) {
            total += p[i] * (std::log(p[i]) - std::log(std::max(q[i], kKlEpsilon)));
        }
    }
    return make_result(
        "kl_rows", {}, {total / static_cast<double>(n)}, {p, q},
        [p = p.detach(), q = q.detach(), n](std::span<const double> g, std::span<const GradSpan> gin) {
            const double s = g[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < gin[0].size(); ++i) {
                const double lp = std::log(std::max(p[i], kKlEpsilon));
                gin[0][i] += s * (lp + 1.0 - std::log(std::max(q[i], kKlEpsilon)));
            }
            for (std::size_t i = 0; i < gin[1].size(); ++i) {
                if (q[i] >= kKlEpsilon) {
                    gin[1][i] -= s * p[i] / q[i];
                }
            }
        });
}

Tensor reduce(ReduceKind kind, const Tensor& x, const std::vector<std::size_t>& axes) {
    auto map = std::make_shared<ReductionMap>(make_reduction_map(x.shape(), axes));
    std::vector<double> out(shape_numel(map->out_shape), 0.0);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        out[map->out_index[i]] += x[i];
    }
    const double factor = kind == ReduceKind::mean ? 1.0 / static_cast<double>(map->count) : 1.0;
    if (kind == ReduceKind::mean) {
        for (double& v : out) v *= factor;
    }
    Shape out_shape = map->out_shape;
    return make_result(kind == ReduceKind::mean ? "mean" : "sum", std::move(out_shape), std::move(out), {x},
                       [map, factor](std::span<const double> g, std::span<const GradSpan> gin) {
                           for (std::size_t i = 0; i < gin[0].size(); ++i) {
                               gin[0][i] += g[map->out_index[i]] * factor;
                           }
                       });
}

namespace {

std::vector<std::size_t> all_axes(const Tensor& x) {
    std::vector<std::size_t> axes(x.rank());
    for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
    return axes;
}

// Rank-0 tensors reduce to themselves.
Tensor reduce_all(ReduceKind kind, const Tensor& x) {
    if (x.rank() == 0) {
        return add_scalar(x, 0.0);
    }
    return reduce(kind, x, all_axes(x));
}

}  // namespace

Tensor sum(const Tensor& x) { return reduce_all(ReduceKind::sum, x); }
Tensor mean(const Tensor& x) { return reduce_all(ReduceKind::mean, x); }

Tensor population_variance(const Tensor& x, const std::vector<std::size_t>& axes) {
    auto map = std::make_shared<ReductionMap>(make_reduction_map(x.shape(), axes));
    const std::size_t n_out = shape_numel(map->out_shape);
    const double inv = 1.0 / static_cast<double>(map->count);
    auto mu = std::make_shared<std::vector<double>>(n_out, 0.0);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        (*mu)[map->out_index[i]] += x[i];
    }
    for (double& v : *mu) v *= inv;
    std::vector<double> out(n_out, 0.0);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double d = x[i] - (*mu)[map->out_index[i]];
        out[map->out_index[i]] += d * d;
    }
    for (double& v : out) v *= inv;
    Shape out_shape = map->out_shape;
    return make_result("population_variance", std::move(out_shape), std::move(out), {x},
                       [map, mu, inv, x = x.detach()](std::span<const double> g, std::span<const GradSpan> gin) {
                           for (std::size_t i = 0; i < gin[0].size(); ++i) {
                               const std::size_t o = map->out_index[i];
                               gin[0][i] += g[o] * 2.0 * (x[i] - (*mu)[o]) * inv;
                           }
                       });
}

Tensor euclidean_distance_matrix(const Tensor& a, const Tensor& b) {
    require_matrix("euclidean_distance_matrix", a);
    require_matrix("euclidean_distance_matrix", b);
    const std::size_t n = a.dim(0), m = b.dim(0), c = a.dim(1);
    if (b.dim(1) != c) {
        throw DimensionError("euclidean_distance_matrix: feature widths differ, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    std::vector<double> out(n * m);
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = a.data().data() + i * c;
        for (std::size_t j = 0; j < m; ++j) {
            const double* bj = b.data().data() + j * c;
            double s = 0.0;
            for (std::size_t k = 0; k < c; ++k) {
                const double d = ai[k] - bj[k];
                s += d * d;
            }
            out[i * m + j] = std::sqrt(s);
        }
    }
    Tensor dist({n, m}, out);
    return make_result(
        "euclidean_distance_matrix", {n, m}, std::move(out), {a, b},
        [a = a.detach(), b = b.detach(), dist, n, m, c](std::span<const double> g, std::span<const GradSpan> gin) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < m; ++j) {
                    const double d = dist[i * m + j];
                    // The distance is not differentiable at 0; use the zero subgradient.
                    if (d <= 0.0 || g[i * m + j] == 0.0) {
                        continue;
                    }
                    const double s = g[i * m + j] / d;
                    for (std::size_t k = 0; k < c; ++k) {
                        const double diff = (a[i * c + k] - b[j * c + k]) * s;
                        if (!gin[0].empty()) gin[0][i * c + k] += diff;
                        if (!gin[1].empty()) gin[1][j * c + k] -= diff;
                    }
                }
            }
        });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    return make_result("reshape", std::move(shape), x.vec(), {x},
                       [](std::span<const double> g, std::span<const GradSpan> gin) {
                           for (std::size_t i = 0; i < gin[0].size(); ++i) {
                               gin[0][i] += g[i];
                           }
                       });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    if (x.rank() == 0 || begin >= end || end > x.dim(0)) {
        throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") invalid for " + shape_str(x.shape()));
    }
    const std::size_t row = x.numel() / x.dim(0);
    Shape shape = x.shape();
    shape[0] = end - begin;
    std::vector<double> out(x.vec().begin() + static_cast<std::ptrdiff_t>(begin * row),
                            x.vec().begin() + static_cast<std::ptrdiff_t>(end * row));
    const std::size_t offset = begin * row;
    return make_result("slice_rows", std::move(shape), std::move(out), {x},
                       [offset](std::span<const double> g, std::span<const GradSpan> gin) {
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               gin[0][offset + i] += g[i];
                           }
                       });
}

Tensor gather_cols(const Tensor& x, const std::vector<std::size_t>& index) {
    require_matrix("gather_cols", x);
    const std::size_t n = x.dim(0), m = x.dim(1);
    if (index.size() != n) {
        throw DimensionError("gather_cols: need one index per row");
    }
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (index[i] >= m) {
            throw DimensionError("gather_cols: column index out of range");
        }
        out[i] = x[i * m + index[i]];
    }
    return make_result("gather_cols", {n}, std::move(out), {x},
                       [index, m](std::span<const double> g, std::span<const GradSpan> gin) {
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               gin[0][i * m + index[i]] += g[i];
                           }
                       });
}

}  // namespace idkl

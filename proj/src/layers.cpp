#include "idkl/layers.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "idkl/detail/gemm.hpp"
#include "idkl/ops.hpp"

namespace idkl::layers {
namespace {

Tensor random_normal(Shape shape, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) {
        x = dist(rng);
    }
    return Tensor(std::move(shape), std::move(v));
}

void require_rank4(const char* op, const Tensor& x) {
    if (x.rank() != 4) {
        throw DimensionError(std::string(op) + ": expected [B x C x H x W], got " + shape_str(x.shape()));
    }
}

struct ConvGeometry {
    std::size_t batch, in_c, h, w, out_c, stride, out_h, out_w;
    std::size_t positions() const { return out_h * out_w; }
    std::size_t cols() const { return in_c * 9; }
    std::size_t n() const { return batch * positions(); }
};

void im2col(const ConvGeometry& g, const double* x, double* col) {
    const std::size_t n = g.n(), p = g.positions();
    for (std::size_t c = 0; c < g.in_c; ++c) {
        for (std::size_t kh = 0; kh < 3; ++kh) {
            for (std::size_t kw = 0; kw < 3; ++kw) {
                double* dst = col + (c * 9 + kh * 3 + kw) * n;
                for (std::size_t b = 0; b < g.batch; ++b) {
                    const double* plane = x + (b * g.in_c + c) * g.h * g.w;
                    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
                        const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) - 1;
                        double* out = dst + b * p + oh * g.out_w;
                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) {
                            std::fill(out, out + g.out_w, 0.0);
                            continue;
                        }
                        for (std::size_t ow = 0; ow < g.out_w; ++ow) {
                            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) - 1;
                            out[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w))
                                          ? 0.0
                                          : plane[static_cast<std::size_t>(ih) * g.w + static_cast<std::size_t>(iw)];
                        }
                    }
                }
            }
        }
    }
}

void col2im(const ConvGeometry& g, const double* col, double* dx) {
    const std::size_t n = g.n(), p = g.positions();
    for (std::size_t c = 0; c < g.in_c; ++c) {
        for (std::size_t kh = 0; kh < 3; ++kh) {
            for (std::size_t kw = 0; kw < 3; ++kw) {
                const double* src = col + (c * 9 + kh * 3 + kw) * n;
                for (std::size_t b = 0; b < g.batch; ++b) {
                    double* plane = dx + (b * g.in_c + c) * g.h * g.w;
                    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
                        const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) - 1;
                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) {
                            continue;
                        }
                        const double* in = src + b * p + oh * g.out_w;
                        for (std::size_t ow = 0; ow < g.out_w; ++ow) {
                            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) - 1;
                            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.w)) {
                                plane[static_cast<std::size_t>(ih) * g.w + static_cast<std::size_t>(iw)] += in[ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

Tensor clamp_mask(const Tensor& m) {
    std::vector<double> out(m.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::clamp(m[i], kMaskFloor, 1.0 - kMaskFloor);
    }
    return make_result("mask_clamp", m.shape(), std::move(out), {m},
                       [m = m.detach()](std::span<const double> g, std::span<const GradSpan> gin) {
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               if (m[i] > kMaskFloor && m[i] < 1.0 - kMaskFloor) {
                                   gin[0][i] += g[i];
                               }
                           }
                       });
}

}  // namespace

std::size_t mask_hidden_width(std::size_t channels, std::size_t reduction) {
    if (reduction == 0) {
        throw ContractError("mask reduction ratio must be positive");
    }
    return std::max<std::size_t>(1, channels / reduction);
}

Conv2dParams make_conv(std::size_t in, std::size_t out, std::size_t stride, std::mt19937_64& rng) {
    const double he = std::sqrt(2.0 / static_cast<double>(in * 9));
    return {random_normal({out, in, 3, 3}, he, rng), Tensor::zeros({out}), stride};
}

LinearParams make_linear(std::size_t in, std::size_t out, bool with_bias, double init_std, std::mt19937_64& rng) {
    LinearParams p{random_normal({out, in}, init_std, rng), std::nullopt};
    if (with_bias) {
        p.bias = Tensor::zeros({out});
    }
    return p;
}

MaskParams make_mask(std::size_t channels, std::size_t reduction, std::mt19937_64& rng) {
    const std::size_t hidden = mask_hidden_width(channels, reduction);
    return {make_linear(channels, hidden, true, std::sqrt(2.0 / static_cast<double>(channels)), rng),
            make_linear(hidden, channels, true, std::sqrt(1.0 / static_cast<double>(hidden)), rng)};
}

void validate(const Conv2dParams& p) {
    if (p.weight.rank() != 4 || p.weight.dim(2) != 3 || p.weight.dim(3) != 3) {
        throw DimensionError("conv2d weight must be [out x in x 3 x 3], got " + shape_str(p.weight.shape()));
    }
    if (p.bias.shape() != Shape{p.weight.dim(0)}) {
        throw DimensionError("conv2d bias must be [" + std::to_string(p.weight.dim(0)) + "]");
    }
    if (p.stride != 1 && p.stride != 2) {
        throw ContractError("conv2d stride must be 1 or 2");
    }
}

void validate(const LinearParams& p) {
    if (p.weight.rank() != 2) {
        throw DimensionError("linear weight must be a matrix, got " + shape_str(p.weight.shape()));
    }
    if (p.bias && p.bias->shape() != Shape{p.weight.dim(0)}) {
        throw DimensionError("linear bias must be [" + std::to_string(p.weight.dim(0)) + "]");
    }
}

void validate(const GemParams& p) {
    if (p.p.numel() != 1 || !(p.p.item() > 0.0)) {
        throw ContractError("GeM exponent must be a positive scalar");
    }
}

void validate(const MaskParams& p) {
    validate(p.squeeze);
    validate(p.excite);
    if (p.excite.weight.dim(1) != p.squeeze.weight.dim(0) || p.excite.weight.dim(0) != p.squeeze.weight.dim(1)) {
        throw DimensionError("mask squeeze/excite widths are inconsistent");
    }
}

Tensor conv2d(const Tensor& x, const Conv2dParams& params) {
    require_rank4("conv2d", x);
    validate(params);
    const Tensor& w = params.weight;
    if (w.dim(1) != x.dim(1)) {
        throw DimensionError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, kernel expects " +
                             std::to_string(w.dim(1)));
    }
    ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), params.stride, 0, 0};
    g.out_h = (g.h - 1) / g.stride + 1;
    g.out_w = (g.w - 1) / g.stride + 1;

    auto col = std::make_shared<std::vector<double>>(g.cols() * g.n());
    im2col(g, x.data().data(), col->data());
    std::vector<double> mat(g.out_c * g.n(), 0.0);
    detail::gemm_nn(g.out_c, g.n(), g.cols(), w.data().data(), col->data(), mat.data());

    const std::size_t p = g.positions();
    std::vector<double> out(g.batch * g.out_c * p);
    for (std::size_t o = 0; o < g.out_c; ++o) {
        const double bias = params.bias[o];
        for (std::size_t b = 0; b < g.batch; ++b) {
            const double* src = mat.data() + o * g.n() + b * p;
            double* dst = out.data() + (b * g.out_c + o) * p;
            for (std::size_t i = 0; i < p; ++i) {
                dst[i] = src[i] + bias;
            }
        }
    }
    return make_result(
        "conv2d", {g.batch, g.out_c, g.out_h, g.out_w}, std::move(out), {x, params.weight, params.bias},
        [g, col, w = w.detach()](std::span<const double> grad, std::span<const GradSpan> gin) {
            const std::size_t p = g.positions(), n = g.n();
            std::vector<double> gmat(g.out_c * n);
            for (std::size_t b = 0; b < g.batch; ++b) {
                for (std::size_t o = 0; o < g.out_c; ++o) {
                    std::copy_n(grad.data() + (b * g.out_c + o) * p, p, gmat.data() + o * n + b * p);
                }
            }
            if (!gin[1].empty()) {
                detail::gemm_nt(g.out_c, g.cols(), n, gmat.data(), col->data(), gin[1].data());
            }
            if (!gin[2].empty()) {
                for (std::size_t o = 0; o < g.out_c; ++o) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < n; ++i) s += gmat[o * n + i];
                    gin[2][o] += s;
                }
            }
            if (!gin[0].empty()) {
                std::vector<double> dcol(g.cols() * n, 0.0);
                detail::gemm_tn(g.cols(), n, g.out_c, w.data().data(), gmat.data(), dcol.data());
                col2im(g, dcol.data(), gin[0].data());
            }
        });
}

Tensor linear(const Tensor& x, const LinearParams& params) {
    validate(params);
    if (x.rank() != 2 || x.dim(1) != params.weight.dim(1)) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " +
                             shape_str(params.weight.shape()));
    }
    const std::size_t n = x.dim(0), in = x.dim(1), out_w = params.weight.dim(0);
    std::vector<double> out(n * out_w, 0.0);
    detail::gemm_nt(n, out_w, in, x.data().data(), params.weight.data().data(), out.data());
    const Tensor bias = params.bias ? *params.bias : Tensor::zeros({out_w});
    if (params.bias) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < out_w; ++j) out[i * out_w + j] += bias[j];
        }
    }
    auto backward = [x = x.detach(), w = params.weight.detach(), n, in, out_w](std::span<const double> g,
                                                                               std::span<const GradSpan> gin) {
        if (!gin[0].empty()) {
            detail::gemm_nn(n, in, out_w, g.data(), w.data().data(), gin[0].data());
        }
        if (!gin[1].empty()) {
            detail::gemm_tn(out_w, in, n, g.data(), x.data().data(), gin[1].data());
        }
        if (gin.size() > 2 && !gin[2].empty()) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < out_w; ++j) gin[2][j] += g[i * out_w + j];
            }
        }
    };
    if (params.bias) {
        return make_result("linear", {n, out_w}, std::move(out), {x, params.weight, *params.bias}, backward);
    }
    return make_result("linear", {n, out_w}, std::move(out), {x, params.weight}, backward);
}

Tensor instance_norm(const Tensor& x, double eps) {
    require_rank4("instance_norm", x);
    if (!(eps > 0.0)) {
        throw ContractError("instance_norm: eps must be positive");
    }
    const std::size_t planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<double> out(x.numel());
    auto inv_std = std::make_shared<std::vector<double>>(planes);
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const double* src = x.data().data() + pl * hw;
        double mu = 0.0;
        for (std::size_t i = 0; i < hw; ++i) mu += src[i];
        mu /= static_cast<double>(hw);
        double var = 0.0;
        for (std::size_t i = 0; i < hw; ++i) var += (src[i] - mu) * (src[i] - mu);
        var /= static_cast<double>(hw);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[pl] = is;
        for (std::size_t i = 0; i < hw; ++i) out[pl * hw + i] = (src[i] - mu) * is;
    }
    Tensor y(x.shape(), out);
    return make_result("instance_norm", x.shape(), std::move(out), {x},
                       [y, inv_std, planes, hw](std::span<const double> g, std::span<const GradSpan> gin) {
                           const double inv_n = 1.0 / static_cast<double>(hw);
                           for (std::size_t pl = 0; pl < planes; ++pl) {
                               const double* gp = g.data() + pl * hw;
                               const double* yp = y.data().data() + pl * hw;
                               double g_mean = 0.0, gy_mean = 0.0;
                               for (std::size_t i = 0; i < hw; ++i) {
                                   g_mean += gp[i];
                                   gy_mean += gp[i] * yp[i];
                               }
                               g_mean *= inv_n;
                               gy_mean *= inv_n;
                               const double is = (*inv_std)[pl];
                               for (std::size_t i = 0; i < hw; ++i) {
                                   gin[0][pl * hw + i] += is * (gp[i] - g_mean - yp[i] * gy_mean);
                               }
                           }
                       });
}

Tensor gem_pool(const Tensor& x, const Tensor& p) {
    require_rank4("gem_pool", x);
    if (p.rank() != 0) {
        throw DimensionError("gem_pool: exponent must be a scalar");
    }
    const double pv = p.item();
    if (!(pv > 0.0)) {
        throw ContractError("gem_pool: exponent must be positive");
    }
    const std::size_t planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
    const double inv_n = 1.0 / static_cast<double>(hw);
    std::vector<double> out(planes);
    // Per plane: m = mean(xc^p), and mean(xc^p * ln xc) for the exponent gradient.
    auto power_mean = std::make_shared<std::vector<double>>(planes);
    auto log_moment = std::make_shared<std::vector<double>>(planes);
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const double* src = x.data().data() + pl * hw;
        double m = 0.0, lm = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
            const double xc = std::max(src[i], kGemClamp);
            const double xp = std::pow(xc, pv);
            m += xp;
            lm += xp * std::log(xc);
        }
        m *= inv_n;
        lm *= inv_n;
        (*power_mean)[pl] = m;
        (*log_moment)[pl] = lm;
        out[pl] = std::pow(m, 1.0 / pv);
    }
    Tensor y({x.dim(0), x.dim(1)}, out);
    return make_result(
        "gem_pool", {x.dim(0), x.dim(1)}, std::move(out), {x, p},
        [x = x.detach(), y, pv, planes, hw, inv_n, power_mean, log_moment](std::span<const double> g,
                                                                          std::span<const GradSpan> gin) {
            for (std::size_t pl = 0; pl < planes; ++pl) {
                const double m = (*power_mean)[pl];
                const double yv = y[pl];
                if (!gin[0].empty()) {
                    // dy/dx_i = y / m * xc^(p-1) / n for unclamped entries
                    const double s = g[pl] * yv / m * inv_n;
                    const double* src = x.data().data() + pl * hw;
                    for (std::size_t i = 0; i < hw; ++i) {
                        if (src[i] > kGemClamp) {
                            gin[0][pl * hw + i] += s * std::pow(src[i], pv - 1.0);
                        }
                    }
                }
                if (!gin[1].empty()) {
                    // y = exp(ln m / p): dy/dp = y * (m'/(p m) - ln m / p^2)
                    const double dm = (*log_moment)[pl];
                    gin[1][0] += g[pl] * yv * (dm / (pv * m) - std::log(m) / (pv * pv));
                }
            }
        });
}

Tensor grl(const Tensor& x, double mu) {
    if (!(mu >= 0.0)) {
        throw ContractError("grl: coefficient must be non-negative");
    }
    return make_result("grl", x.shape(), x.vec(), {x},
                       [mu](std::span<const double> g, std::span<const GradSpan> gin) {
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               gin[0][i] -= mu * g[i];
                           }
                       });
}

Tensor channel_mask(const Tensor& x, const MaskParams& params, const Tensor& gem_p) {
    require_rank4("channel_mask", x);
    validate(params);
    if (params.squeeze.weight.dim(1) != x.dim(1)) {
        throw DimensionError("channel_mask: mask built for " + std::to_string(params.squeeze.weight.dim(1)) +
                             " channels, input has " + std::to_string(x.dim(1)));
    }
    const Tensor pooled = gem_pool(x, gem_p);
    const Tensor hidden = relu(linear(pooled, params.squeeze));
    return clamp_mask(sigmoid(linear(hidden, params.excite)));
}

Tensor scale_channels(const Tensor& x, const Tensor& mask) {
    require_rank4("scale_channels", x);
    if (mask.shape() != Shape{x.dim(0), x.dim(1)}) {
        throw DimensionError("scale_channels: mask " + shape_str(mask.shape()) + " for input " +
                             shape_str(x.shape()));
    }
    const std::size_t planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<double> out(x.numel());
    for (std::size_t pl = 0; pl < planes; ++pl) {
        for (std::size_t i = 0; i < hw; ++i) {
            out[pl * hw + i] = mask[pl] * x[pl * hw + i];
        }
    }
    return make_result("scale_channels", x.shape(), std::move(out), {x, mask},
                       [x = x.detach(), mask = mask.detach(), planes, hw](std::span<const double> g,
                                                                         std::span<const GradSpan> gin) {
                           for (std::size_t pl = 0; pl < planes; ++pl) {
                               double dm = 0.0;
                               for (std::size_t i = 0; i < hw; ++i) {
                                   if (!gin[0].empty()) gin[0][pl * hw + i] += mask[pl] * g[pl * hw + i];
                                   dm += x[pl * hw + i] * g[pl * hw + i];
                               }
                               if (!gin[1].empty()) gin[1][pl] += dm;
                           }
                       });
}

}  // namespace idkl::layers

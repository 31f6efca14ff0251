#pragma once

#include <cstddef>
#include <optional>
#include <random>

#include "idkl/tensor.hpp"

namespace idkl::layers {

inline constexpr double kInstanceNormEps = 1e-5;
inline constexpr double kGemClamp = 1e-6;
inline constexpr double kDefaultGemP = 3.0;
inline constexpr std::size_t kDefaultMaskReduction = 16;
// Masks are kept inside [kMaskFloor, 1 - kMaskFloor] so they never saturate to 0 or 1.
inline constexpr double kMaskFloor = 1e-12;

/// 3x3 convolution, zero padding 1. weight [out x in x 3 x 3], bias [out].
struct Conv2dParams {
    Tensor weight;
    Tensor bias;
    std::size_t stride = 1;
};

/// weight [out x in]; bias [out] when present.
struct LinearParams {
    Tensor weight;
    std::optional<Tensor> bias;
};

/// Learned generalized-mean exponent (rank-0 tensor).
struct GemParams {
    Tensor p = Tensor::scalar(kDefaultGemP);
};

/// SE-style channel gate: squeeze [hidden x C] then excite [C x hidden].
struct MaskParams {
    LinearParams squeeze;
    LinearParams excite;
};

std::size_t mask_hidden_width(std::size_t channels, std::size_t reduction);

Conv2dParams make_conv(std::size_t in, std::size_t out, std::size_t stride, std::mt19937_64& rng);
LinearParams make_linear(std::size_t in, std::size_t out, bool with_bias, double init_std, std::mt19937_64& rng);
MaskParams make_mask(std::size_t channels, std::size_t reduction, std::mt19937_64& rng);

void validate(const Conv2dParams& p);
void validate(const LinearParams& p);
void validate(const GemParams& p);
void validate(const MaskParams& p);

/// [B x C x H x W] -> [B x O x ceil(H/s) x ceil(W/s)]
Tensor conv2d(const Tensor& x, const Conv2dParams& params);

/// [n x in] -> [n x out], x W^T + b
Tensor linear(const Tensor& x, const LinearParams& params);

/// Per-sample, per-channel normalization over H x W with population
/// variance and no affine transform.
Tensor instance_norm(const Tensor& x, double eps = kInstanceNormEps);

/// [B x C x H x W] -> [B x C]: (mean over H x W of max(x, kGemClamp)^p)^(1/p).
/// `p` is a rank-0 tensor and receives a gradient.
Tensor gem_pool(const Tensor& x, const Tensor& p);

/// Identity forward; backward multiplies the incoming gradient by -mu.
Tensor grl(const Tensor& x, double mu);

/// sigmoid(excite(relu(squeeze(gem_pool(x, p))))) -> [B x C], values in (0, 1).
Tensor channel_mask(const Tensor& x, const MaskParams& params, const Tensor& gem_p);

/// Broadcasts a [B x C] mask over the spatial extents of [B x C x H x W].
Tensor scale_channels(const Tensor& x, const Tensor& mask);

}  // namespace idkl::layers

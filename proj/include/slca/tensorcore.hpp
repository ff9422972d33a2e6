#ifndef SLCA_TENSORCORE_HPP
#define SLCA_TENSORCORE_HPP

#include <span>

#include "slca/tensor.hpp"

namespace slca {

enum class Padding { Same, Valid };
enum class Activation { None, Relu };
enum class ResampleMode { Nearest, Trilinear };

struct ConvGeometry {
    std::int64_t stride = 1;
    std::int64_t dilation = 1;
    Padding padding = Padding::Same;
};

// Convolution kernels and bias. kernels has shape [K, C_in, m...] with one
// odd extent per spatial axis (odd so SAME padding is symmetric); bias has
// shape [K]. Spatial rank of the kernel fixes the expected input rank.
struct ConvParams {
    Tensor kernels;
    Tensor bias;
    ConvGeometry geom;

    ConvParams() = default;
    ConvParams(Tensor kernels_, Tensor bias_, ConvGeometry geom_ = {});

    std::int64_t out_channels() const { return kernels.shape()[0]; }
    std::int64_t in_channels() const { return kernels.shape()[1]; }
};

// Output shape for x of shape [C, S...]: SAME gives ceil(S/s) per axis,
// VALID gives floor((S - ((m-1)*r + 1)) / s) + 1.
Shape conv_output_shape(const Shape& x_shape, const Shape& kernel_shape,
                        const ConvGeometry& geom);

// Direct convolution, output channel j = act(w_j (*) x + b_j).
Tensor conv(const Tensor& x, const ConvParams& p, Activation act = Activation::None);

// Accumulates gradients into dx/dw/db (any may be null to skip). y is the
// forward output (used to mask through the fused relu).
void conv_backward(const Tensor& x, const ConvParams& p, Activation act,
                   const Tensor& y, const Tensor& dy,
                   Tensor* dx, Tensor* dw, Tensor* db);

// Per-channel spatial mean; returns a rank-1 tensor of length K.
Tensor global_avg_pool(const Tensor& x);

// out = act(W^T v + B) for v of length n, W of shape [n, k], B of length k.
Tensor dense(const Tensor& v, const Tensor& w, const Tensor& b,
             Activation act = Activation::None);

// Max-subtracted softmax over a rank-1 tensor.
Tensor softmax(const Tensor& v);

Tensor eltwise_add(const Tensor& a, const Tensor& b);

// Stacks inputs along the channel axis; spatial shapes must agree.
Tensor concat_channels(std::span<const Tensor* const> xs);
Tensor concat_channels(const std::vector<Tensor>& xs);

// Channel-wise interpolation to the target spatial shape. Trilinear degrades
// to bilinear/linear at lower rank. Identity when target equals source.
Tensor resample(const Tensor& x, const Shape& target_spatial, ResampleMode mode);
// Accumulates the adjoint of resample into dx.
void resample_backward(const Shape& x_spatial, const Tensor& dy, ResampleMode mode,
                       Tensor& dx);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

}  // namespace slca

#endif

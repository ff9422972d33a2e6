#include <algorithm>
#include <cstring>

#include "slca/tensorcore.hpp"

// Direct convolution over channel-first tensors. Inputs of spatial rank 1 or
// 2 are embedded into rank 3 with leading size-1 axes so a single 3-D kernel
// serves every case. The inner loops are arranged so the fastest axis is
// contiguous at stride 1, which is what the auto-vectorizer needs.

namespace slca {

ConvParams::ConvParams(Tensor kernels_, Tensor bias_, ConvGeometry geom_)
    : kernels(std::move(kernels_)), bias(std::move(bias_)), geom(geom_) {
    if (kernels.rank() < 3) {
        throw ShapeError("conv kernels need shape [K, C_in, m...], got " +
                         shape_to_string(kernels.shape()));
    }
    for (std::size_t a = 2; a < kernels.shape().size(); ++a) {
        if (kernels.shape()[a] % 2 == 0) {
            throw ShapeError("conv kernel extents must be odd, got " +
                             shape_to_string(kernels.shape()));
        }
    }
    if (bias.rank() != 1 || bias.shape()[0] != kernels.shape()[0]) {
        throw ShapeError("conv bias must have shape [K]=[" +
                         std::to_string(kernels.shape()[0]) + "], got " +
                         shape_to_string(bias.shape()));
    }
    if (geom.stride < 1 || geom.dilation < 1) {
        throw ValueError("conv stride and dilation must be >= 1");
    }
}

namespace {

struct ConvPlan {
    std::int64_t cin = 0, cout = 0;
    std::int64_t in[3] = {1, 1, 1};    // input spatial extents, 3-D embedded
    std::int64_t m[3] = {1, 1, 1};     // kernel extents
    std::int64_t pad[3] = {0, 0, 0};   // symmetric margin per axis
    std::int64_t out[3] = {1, 1, 1};
    std::int64_t stride = 1, dilation = 1;
    Shape out_shape;                   // in the caller's rank
};

ConvPlan make_plan(const Shape& x_shape, const Shape& k_shape, const ConvGeometry& g) {
    const std::int64_t rank = static_cast<std::int64_t>(x_shape.size()) - 1;
    if (rank < 1 || rank > 3) {
        throw ShapeError("conv input must have 1-3 spatial axes, got shape " +
                         shape_to_string(x_shape));
    }
    if (static_cast<std::int64_t>(k_shape.size()) - 2 != rank) {
        throw ShapeError("conv kernel rank does not match input: kernel " +
                         shape_to_string(k_shape) + " vs input " + shape_to_string(x_shape));
    }
    if (k_shape[1] != x_shape[0]) {
        throw ShapeError("conv channel mismatch: kernel " + shape_to_string(k_shape) +
                         " vs input " + shape_to_string(x_shape));
    }
    ConvPlan p;
    p.cin = x_shape[0];
    p.cout = k_shape[0];
    p.stride = g.stride;
    p.dilation = g.dilation;
    const std::int64_t off = 3 - rank;  // embed into the trailing axes
    for (std::int64_t a = 0; a < rank; ++a) {
        p.in[off + a] = x_shape[1 + a];
        p.m[off + a] = k_shape[2 + a];
    }
    p.out_shape.push_back(p.cout);
    for (std::int64_t a = 0; a < 3; ++a) {
        const std::int64_t span = (p.m[a] - 1) * p.dilation + 1;
        if (g.padding == Padding::Same) p.pad[a] = ((p.m[a] - 1) * p.dilation) / 2;
        const std::int64_t num = p.in[a] + 2 * p.pad[a] - span;
        if (num < 0) {
            throw ShapeError("conv kernel span exceeds input: input " +
                             shape_to_string(x_shape) + ", kernel " + shape_to_string(k_shape));
        }
        p.out[a] = num / p.stride + 1;
    }
    for (std::int64_t a = off; a < 3; ++a) p.out_shape.push_back(p.out[a]);
    return p;
}

// Copies x into a zero-padded buffer of extents in[a] + 2*pad[a].
std::vector<double> pad_input(const Tensor& x, const ConvPlan& p) {
    const std::int64_t pz = p.in[0] + 2 * p.pad[0];
    const std::int64_t py = p.in[1] + 2 * p.pad[1];
    const std::int64_t px = p.in[2] + 2 * p.pad[2];
    std::vector<double> buf(static_cast<std::size_t>(p.cin * pz * py * px), 0.0);
    const double* src = x.data();
    for (std::int64_t c = 0; c < p.cin; ++c) {
        for (std::int64_t z = 0; z < p.in[0]; ++z) {
            for (std::int64_t y = 0; y < p.in[1]; ++y) {
                double* dst = buf.data() +
                              ((c * pz + z + p.pad[0]) * py + y + p.pad[1]) * px + p.pad[2];
                std::memcpy(dst, src, static_cast<std::size_t>(p.in[2]) * sizeof(double));
                src += p.in[2];
            }
        }
    }
    return buf;
}

}  // namespace

Shape conv_output_shape(const Shape& x_shape, const Shape& kernel_shape,
                        const ConvGeometry& geom) {
    return make_plan(x_shape, kernel_shape, geom).out_shape;
}

Tensor conv(const Tensor& x, const ConvParams& prm, Activation act) {
    const ConvPlan p = make_plan(x.shape(), prm.kernels.shape(), prm.geom);
    const std::vector<double> xp = pad_input(x, p);
    Tensor y(p.out_shape);

    const std::int64_t py = p.in[1] + 2 * p.pad[1];
    const std::int64_t px = p.in[2] + 2 * p.pad[2];
    const std::int64_t oz = p.out[0], oy = p.out[1], ox = p.out[2];
    const std::int64_t s = p.stride, d = p.dilation;
    const double* __restrict w_all = prm.kernels.data();
    const std::int64_t ksz = p.m[0] * p.m[1] * p.m[2];

    for (std::int64_t k = 0; k < p.cout; ++k) {
        double* yk = y.data() + k * oz * oy * ox;
        const double bk = prm.bias[k];
        for (std::int64_t i = 0; i < oz * oy * ox; ++i) yk[i] = bk;
        for (std::int64_t c = 0; c < p.cin; ++c) {
            const double* xc = xp.data() + c * (p.in[0] + 2 * p.pad[0]) * py * px;
            const double* wk = w_all + (k * p.cin + c) * ksz;
            for (std::int64_t kz = 0; kz < p.m[0]; ++kz) {
                for (std::int64_t ky = 0; ky < p.m[1]; ++ky) {
                    for (std::int64_t kx = 0; kx < p.m[2]; ++kx) {
                        const double w = wk[(kz * p.m[1] + ky) * p.m[2] + kx];
                        if (w == 0.0) continue;
                        for (std::int64_t z = 0; z < oz; ++z) {
                            const double* xz = xc + (z * s + kz * d) * py * px;
                            for (std::int64_t yy = 0; yy < oy; ++yy) {
                                const double* __restrict xr =
                                    xz + (yy * s + ky * d) * px + kx * d;
                                double* __restrict yr = yk + (z * oy + yy) * ox;
                                if (s == 1) {
                                    for (std::int64_t xx = 0; xx < ox; ++xx)
                                        yr[xx] += w * xr[xx];
                                } else {
                                    for (std::int64_t xx = 0; xx < ox; ++xx)
                                        yr[xx] += w * xr[xx * s];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if (act == Activation::Relu) {
        double* yd = y.data();
        for (std::int64_t i = 0; i < y.size(); ++i) yd[i] = std::max(yd[i], 0.0);
    }
    return y;
}

void conv_backward(const Tensor& x, const ConvParams& prm, Activation act,
                   const Tensor& y, const Tensor& dy,
                   Tensor* dx, Tensor* dw, Tensor* db) {
    const ConvPlan p = make_plan(x.shape(), prm.kernels.shape(), prm.geom);
    if (!dy.same_shape(y)) {
        throw ShapeError("conv_backward: dy shape " + shape_to_string(dy.shape()) +
                         " does not match output " + shape_to_string(y.shape()));
    }

    // Mask the upstream gradient through the fused relu.
    const Tensor* g = &dy;
    Tensor masked;
    if (act == Activation::Relu) {
        masked = dy;
        for (std::int64_t i = 0; i < masked.size(); ++i) {
            if (y[i] <= 0.0) masked[i] = 0.0;
        }
        g = &masked;
    }

    const std::int64_t pz = p.in[0] + 2 * p.pad[0];
    const std::int64_t py = p.in[1] + 2 * p.pad[1];
    const std::int64_t px = p.in[2] + 2 * p.pad[2];
    const std::int64_t oz = p.out[0], oy = p.out[1], ox = p.out[2];
    const std::int64_t s = p.stride, d = p.dilation;
    const std::int64_t ksz = p.m[0] * p.m[1] * p.m[2];

    if (db) {
        for (std::int64_t k = 0; k < p.cout; ++k) {
            const double* gk = g->data() + k * oz * oy * ox;
            double acc = 0.0;
            for (std::int64_t i = 0; i < oz * oy * ox; ++i) acc += gk[i];
            (*db)[k] += acc;
        }
    }

    if (dw) {
        const std::vector<double> xp = pad_input(x, p);
        for (std::int64_t k = 0; k < p.cout; ++k) {
            const double* gk = g->data() + k * oz * oy * ox;
            for (std::int64_t c = 0; c < p.cin; ++c) {
                const double* xc = xp.data() + c * pz * py * px;
                double* dwk = dw->data() + (k * p.cin + c) * ksz;
                for (std::int64_t kz = 0; kz < p.m[0]; ++kz) {
                    for (std::int64_t ky = 0; ky < p.m[1]; ++ky) {
                        for (std::int64_t kx = 0; kx < p.m[2]; ++kx) {
                            double acc = 0.0;
                            for (std::int64_t z = 0; z < oz; ++z) {
                                const double* xz = xc + (z * s + kz * d) * py * px;
                                for (std::int64_t yy = 0; yy < oy; ++yy) {
                                    const double* __restrict xr =
                                        xz + (yy * s + ky * d) * px + kx * d;
                                    const double* __restrict gr = gk + (z * oy + yy) * ox;
                                    if (s == 1) {
                                        // Four partial sums so the dot product
                                        // vectorizes without -ffast-math.
                                        double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
                                        std::int64_t xx = 0;
                                        for (; xx + 4 <= ox; xx += 4) {
                                            a0 += gr[xx] * xr[xx];
                                            a1 += gr[xx + 1] * xr[xx + 1];
                                            a2 += gr[xx + 2] * xr[xx + 2];
                                            a3 += gr[xx + 3] * xr[xx + 3];
                                        }
                                        for (; xx < ox; ++xx) a0 += gr[xx] * xr[xx];
                                        acc += ((a0 + a1) + (a2 + a3));
                                    } else {
                                        for (std::int64_t xx = 0; xx < ox; ++xx)
                                            acc += gr[xx] * xr[xx * s];
                                    }
                                }
                            }
                            dwk[(kz * p.m[1] + ky) * p.m[2] + kx] += acc;
                        }
                    }
                }
            }
        }
    }

    if (dx) {
        std::vector<double> dxp(static_cast<std::size_t>(p.cin * pz * py * px), 0.0);
        const double* w_all = prm.kernels.data();
        for (std::int64_t k = 0; k < p.cout; ++k) {
            const double* gk = g->data() + k * oz * oy * ox;
            for (std::int64_t c = 0; c < p.cin; ++c) {
                double* xc = dxp.data() + c * pz * py * px;
                const double* wk = w_all + (k * p.cin + c) * ksz;
                for (std::int64_t kz = 0; kz < p.m[0]; ++kz) {
                    for (std::int64_t ky = 0; ky < p.m[1]; ++ky) {
                        for (std::int64_t kx = 0; kx < p.m[2]; ++kx) {
                            const double w = wk[(kz * p.m[1] + ky) * p.m[2] + kx];
                            if (w == 0.0) continue;
                            for (std::int64_t z = 0; z < oz; ++z) {
                                double* xz = xc + (z * s + kz * d) * py * px;
                                for (std::int64_t yy = 0; yy < oy; ++yy) {
                                    double* __restrict xr =
                                        xz + (yy * s + ky * d) * px + kx * d;
                                    const double* __restrict gr = gk + (z * oy + yy) * ox;
                                    if (s == 1) {
                                        for (std::int64_t xx = 0; xx < ox; ++xx)
                                            xr[xx] += w * gr[xx];
                                    } else {
                                        for (std::int64_t xx = 0; xx < ox; ++xx)
                                            xr[xx * s] += w * gr[xx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        // Drop the padding margins.
        double* out = dx->data();
        for (std::int64_t c = 0; c < p.cin; ++c) {
            for (std::int64_t z = 0; z < p.in[0]; ++z) {
                for (std::int64_t yy = 0; yy < p.in[1]; ++yy) {
                    const double* src = dxp.data() +
                                        ((c * pz + z + p.pad[0]) * py + yy + p.pad[1]) * px +
                                        p.pad[2];
                    for (std::int64_t xx = 0; xx < p.in[2]; ++xx) *out++ += src[xx];
                }
            }
        }
    }
}

}  // namespace slca

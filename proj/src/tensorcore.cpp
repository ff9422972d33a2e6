#include <algorithm>
#include <cmath>
#include <numeric>

#include "slca/tensorcore.hpp"

namespace slca {

Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() < 2) {
        throw ShapeError("global_avg_pool needs spatial axes, got " +
                         shape_to_string(x.shape()));
    }
    const std::int64_t k = x.channels();
    const std::int64_t n = x.spatial_numel();
    Tensor out({k});
    for (std::int64_t c = 0; c < k; ++c) {
        const double* xc = x.data() + c * n;
        double acc = 0.0;
        for (std::int64_t i = 0; i < n; ++i) acc += xc[i];
        out[c] = acc / static_cast<double>(n);
    }
    return out;
}

Tensor dense(const Tensor& v, const Tensor& w, const Tensor& b, Activation act) {
    if (v.rank() != 1 || w.rank() != 2 || b.rank() != 1 ||
        w.shape()[0] != v.shape()[0] || w.shape()[1] != b.shape()[0]) {
        throw ShapeError("dense dimension mismatch: v " + shape_to_string(v.shape()) +
                         ", W " + shape_to_string(w.shape()) + ", B " +
                         shape_to_string(b.shape()));
    }
    const std::int64_t n = v.shape()[0];
    const std::int64_t k = b.shape()[0];
    Tensor out({k});
    for (std::int64_t j = 0; j < k; ++j) {
        double acc = b[j];
        for (std::int64_t i = 0; i < n; ++i) acc += w[i * k + j] * v[i];
        out[j] = act == Activation::Relu ? std::max(acc, 0.0) : acc;
    }
    return out;
}

Tensor softmax(const Tensor& v) {
    if (v.rank() != 1) {
        throw ShapeError("softmax expects a vector, got " + shape_to_string(v.shape()));
    }
    const std::int64_t k = v.shape()[0];
    Tensor out({k});
    double mx = v[0];
    for (std::int64_t i = 1; i < k; ++i) mx = std::max(mx, v[i]);
    double sum = 0.0;
    for (std::int64_t i = 0; i < k; ++i) {
        out[i] = std::exp(v[i] - mx);
        sum += out[i];
    }
    for (std::int64_t i = 0; i < k; ++i) out[i] /= sum;
    return out;
}

Tensor eltwise_add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("eltwise_add shape mismatch: " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
    }
    Tensor out = a;
    const double* bd = b.data();
    double* od = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) od[i] += bd[i];
    return out;
}

Tensor concat_channels(std::span<const Tensor* const> xs) {
    if (xs.empty()) throw ShapeError("concat_channels needs at least one tensor");
    const Shape spatial = xs[0]->spatial();
    std::int64_t channels = 0;
    for (const Tensor* t : xs) {
        if (t->spatial() != spatial) {
            throw ShapeError("concat_channels spatial mismatch: " +
                             shape_to_string(xs[0]->shape()) + " vs " +
                             shape_to_string(t->shape()));
        }
        channels += t->channels();
    }
    Shape out_shape{channels};
    out_shape.insert(out_shape.end(), spatial.begin(), spatial.end());
    Tensor out(std::move(out_shape));
    double* dst = out.data();
    for (const Tensor* t : xs) {
        std::copy(t->data(), t->data() + t->size(), dst);
        dst += t->size();
    }
    return out;
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
    std::vector<const Tensor*> ptrs;
    ptrs.reserve(xs.size());
    for (const Tensor& t : xs) ptrs.push_back(&t);
    return concat_channels(std::span<const Tensor* const>(ptrs));
}

namespace {

struct LinearTap {
    std::int64_t lo, hi;
    double frac;  // weight on hi
};

LinearTap linear_tap(std::int64_t o, std::int64_t in_n, std::int64_t out_n) {
    const double scale = static_cast<double>(in_n) / static_cast<double>(out_n);
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_n - 1));
    const auto lo = static_cast<std::int64_t>(std::floor(src));
    LinearTap t;
    t.lo = lo;
    t.hi = std::min(lo + 1, in_n - 1);
    t.frac = src - static_cast<double>(lo);
    return t;
}

std::int64_t nearest_tap(std::int64_t o, std::int64_t in_n, std::int64_t out_n) {
    const double scale = static_cast<double>(in_n) / static_cast<double>(out_n);
    auto idx = static_cast<std::int64_t>(
        std::floor((static_cast<double>(o) + 0.5) * scale));
    return std::clamp<std::int64_t>(idx, 0, in_n - 1);
}

}  // namespace

Tensor resample(const Tensor& x, const Shape& target_spatial, ResampleMode mode) {
    const Shape src = x.spatial();
    const auto rank = static_cast<std::int64_t>(src.size());
    if (static_cast<std::int64_t>(target_spatial.size()) != rank) {
        throw ShapeError("resample target rank mismatch: input " +
                         shape_to_string(x.shape()) + ", target " +
                         shape_to_string(target_spatial));
    }
    for (auto e : target_spatial) {
        if (e < 1) throw ShapeError("resample target extents must be >= 1");
    }
    if (src == target_spatial) return x;

    Shape out_shape{x.channels()};
    out_shape.insert(out_shape.end(), target_spatial.begin(), target_spatial.end());
    Tensor out(std::move(out_shape));

    // Row-major strides over the source spatial grid.
    std::vector<std::int64_t> sstride(rank, 1);
    for (std::int64_t a = rank - 2; a >= 0; --a) sstride[a] = sstride[a + 1] * src[a + 1];
    const std::int64_t src_n = x.spatial_numel();
    const std::int64_t out_n = out.spatial_numel();

    std::vector<std::int64_t> idx(rank, 0);
    for (std::int64_t c = 0; c < x.channels(); ++c) {
        const double* xc = x.data() + c * src_n;
        double* oc = out.data() + c * out_n;
        std::fill(idx.begin(), idx.end(), 0);
        for (std::int64_t o = 0; o < out_n; ++o) {
            if (mode == ResampleMode::Nearest) {
                std::int64_t flat = 0;
                for (std::int64_t a = 0; a < rank; ++a)
                    flat += nearest_tap(idx[a], src[a], target_spatial[a]) * sstride[a];
                oc[o] = xc[flat];
            } else {
                // Multilinear: blend the 2^rank corner taps.
                double acc = 0.0;
                for (std::int64_t corner = 0; corner < (1 << rank); ++corner) {
                    double wgt = 1.0;
                    std::int64_t flat = 0;
                    for (std::int64_t a = 0; a < rank; ++a) {
                        const LinearTap t = linear_tap(idx[a], src[a], target_spatial[a]);
                        if (corner & (1 << a)) {
                            wgt *= t.frac;
                            flat += t.hi * sstride[a];
                        } else {
                            wgt *= 1.0 - t.frac;
                            flat += t.lo * sstride[a];
                        }
                    }
                    if (wgt != 0.0) acc += wgt * xc[flat];
                }
                oc[o] = acc;
            }
            for (std::int64_t a = rank - 1; a >= 0; --a) {
                if (++idx[a] < target_spatial[a]) break;
                idx[a] = 0;
            }
        }
    }
    return out;
}

void resample_backward(const Shape& x_spatial, const Tensor& dy, ResampleMode mode,
                       Tensor& dx) {
    const Shape target = dy.spatial();
    const auto rank = static_cast<std::int64_t>(x_spatial.size());
    if (x_spatial == target) {
        for (std::int64_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
        return;
    }
    std::vector<std::int64_t> sstride(rank, 1);
    for (std::int64_t a = rank - 2; a >= 0; --a)
        sstride[a] = sstride[a + 1] * x_spatial[a + 1];
    const std::int64_t src_n = dx.spatial_numel();
    const std::int64_t out_n = dy.spatial_numel();

    std::vector<std::int64_t> idx(rank, 0);
    for (std::int64_t c = 0; c < dy.channels(); ++c) {
        const double* gc = dy.data() + c * out_n;
        double* xc = dx.data() + c * src_n;
        std::fill(idx.begin(), idx.end(), 0);
        for (std::int64_t o = 0; o < out_n; ++o) {
            if (mode == ResampleMode::Nearest) {
                std::int64_t flat = 0;
                for (std::int64_t a = 0; a < rank; ++a)
                    flat += nearest_tap(idx[a], x_spatial[a], target[a]) * sstride[a];
                xc[flat] += gc[o];
            } else {
                for (std::int64_t corner = 0; corner < (1 << rank); ++corner) {
                    double wgt = 1.0;
                    std::int64_t flat = 0;
                    for (std::int64_t a = 0; a < rank; ++a) {
                        const LinearTap t = linear_tap(idx[a], x_spatial[a], target[a]);
                        if (corner & (1 << a)) {
                            wgt *= t.frac;
                            flat += t.hi * sstride[a];
                        } else {
                            wgt *= 1.0 - t.frac;
                            flat += t.lo * sstride[a];
                        }
                    }
                    if (wgt != 0.0) xc[flat] += wgt * gc[o];
                }
            }
            for (std::int64_t a = rank - 1; a >= 0; --a) {
                if (++idx[a] < target[a]) break;
                idx[a] = 0;
            }
        }
    }
}

Tensor relu(const Tensor& x) {
    Tensor out = x;
    double* d = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) d[i] = std::max(d[i], 0.0);
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out = x;
    double* d = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) d[i] = 1.0 / (1.0 + std::exp(-d[i]));
    return out;
}

}  // namespace slca

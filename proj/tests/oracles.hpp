// Independent reference implementations used to verify the library. These
// are written as plain nested loops over index vectors, sharing no code
// with the implementations under test, and favor obviousness over speed.
#ifndef TESTS_ORACLES_HPP
#define TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "slca/metrics.hpp"
#include "slca/tensorcore.hpp"

namespace oracles {

using slca::Shape;
using slca::Tensor;

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = u(rng);
    return t;
}

// Row-major flat index of a multi-index under the given extents.
inline std::int64_t flatten(const std::vector<std::int64_t>& idx, const Shape& extents) {
    std::int64_t flat = 0;
    for (std::size_t a = 0; a < extents.size(); ++a) flat = flat * extents[a] + idx[a];
    return flat;
}

// Odometer increment; returns false after the last multi-index.
inline bool next_index(std::vector<std::int64_t>& idx, const Shape& extents) {
    for (std::size_t a = extents.size(); a-- > 0;) {
        if (++idx[a] < extents[a]) return true;
        idx[a] = 0;
    }
    return false;
}

// Direct convolution: for every output position and kernel tap, gather the
// (zero-padded) input element and accumulate. Works for any spatial rank.
inline Tensor conv(const Tensor& x, const Tensor& kernels, const std::vector<double>& bias,
                   std::int64_t stride, std::int64_t dilation, bool same, bool relu) {
    const Shape in_spatial = x.spatial();
    const auto rank = static_cast<std::int64_t>(in_spatial.size());
    const std::int64_t c_in = x.channels();
    const std::int64_t k = kernels.shape()[0];
    const std::int64_t m = kernels.shape()[2];  // cubic kernels

    Shape out_spatial, pad;
    for (std::int64_t a = 0; a < rank; ++a) {
        const std::int64_t s = in_spatial[static_cast<std::size_t>(a)];
        const std::int64_t span = (m - 1) * dilation + 1;
        if (same) {
            out_spatial.push_back((s + stride - 1) / stride);
            pad.push_back(((m - 1) * dilation) / 2);
        } else {
            out_spatial.push_back((s - span) / stride + 1);
            pad.push_back(0);
        }
    }

    Shape out_shape{k};
    out_shape.insert(out_shape.end(), out_spatial.begin(), out_spatial.end());
    Tensor out(out_shape);

    Shape kernel_spatial(static_cast<std::size_t>(rank), m);
    std::vector<std::int64_t> o(static_cast<std::size_t>(rank), 0);
    const std::int64_t out_numel = slca::shape_numel(out_spatial);
    const std::int64_t in_numel = slca::shape_numel(in_spatial);
    const std::int64_t taps = slca::shape_numel(kernel_spatial);

    for (std::int64_t j = 0; j < k; ++j) {
        std::fill(o.begin(), o.end(), 0);
        do {
            double acc = bias[static_cast<std::size_t>(j)];
            for (std::int64_t ci = 0; ci < c_in; ++ci) {
                std::vector<std::int64_t> t(static_cast<std::size_t>(rank), 0);
                do {
                    bool inside = true;
                    std::vector<std::int64_t> p(static_cast<std::size_t>(rank));
                    for (std::int64_t a = 0; a < rank; ++a) {
                        const auto ai = static_cast<std::size_t>(a);
                        p[ai] = o[ai] * stride + t[ai] * dilation - pad[ai];
                        if (p[ai] < 0 || p[ai] >= in_spatial[ai]) inside = false;
                    }
                    if (inside) {
                        const double xv = x[ci * in_numel + flatten(p, in_spatial)];
                        const double wv =
                            kernels[(j * c_in + ci) * taps + flatten(t, kernel_spatial)];
                        acc += xv * wv;
                    }
                } while (next_index(t, kernel_spatial));
            }
            if (relu && acc < 0.0) acc = 0.0;
            out[j * out_numel + flatten(o, out_spatial)] = acc;
        } while (next_index(o, out_spatial));
    }
    return out;
}

inline std::vector<double> global_avg_pool(const Tensor& x) {
    const std::int64_t sn = x.spatial_numel();
    std::vector<double> out;
    for (std::int64_t c = 0; c < x.channels(); ++c) {
        double sum = 0.0;
        for (std::int64_t s = 0; s < sn; ++s) sum += x[c * sn + s];
        out.push_back(sum / static_cast<double>(sn));
    }
    return out;
}

inline std::vector<double> dense(const std::vector<double>& v,
                                 const std::vector<double>& w,  // [n][k] row-major
                                 const std::vector<double>& b, bool relu) {
    const std::size_t n = v.size();
    const std::size_t k = b.size();
    std::vector<double> out(k);
    for (std::size_t j = 0; j < k; ++j) {
        double acc = b[j];
        for (std::size_t i = 0; i < n; ++i) acc += w[i * k + j] * v[i];
        out[j] = relu && acc < 0.0 ? 0.0 : acc;
    }
    return out;
}

inline std::vector<double> softmax(const std::vector<double>& v) {
    const double mx = *std::max_element(v.begin(), v.end());
    double denom = 0.0;
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        denom += out[i];
    }
    for (double& e : out) e /= denom;
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

inline Tensor concat(const std::vector<Tensor>& xs) {
    std::int64_t channels = 0;
    for (const Tensor& x : xs) channels += x.channels();
    Shape shape = xs[0].shape();
    shape[0] = channels;
    Tensor out(shape);
    std::int64_t offset = 0;
    for (const Tensor& x : xs) {
        for (std::int64_t i = 0; i < x.size(); ++i) out[offset + i] = x[i];
        offset += x.size();
    }
    return out;
}

// ---- metrics oracles -------------------------------------------------------

struct Counts {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Counts confusion(const std::vector<std::uint8_t>& pred,
                        const std::vector<std::uint8_t>& gt) {
    Counts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] && gt[i]) ++c.tp;
        if (pred[i] && !gt[i]) ++c.fp;
        if (!pred[i] && gt[i]) ++c.fn;
        if (!pred[i] && !gt[i]) ++c.tn;
    }
    return c;
}

// Dice from the masks themselves: 2|A n B| / (|A| + |B|).
inline double dice(const std::vector<std::uint8_t>& pred,
                   const std::vector<std::uint8_t>& gt) {
    std::int64_t inter = 0, total = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] && gt[i]) ++inter;
        if (pred[i]) ++total;
        if (gt[i]) ++total;
    }
    if (total == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

using Point = std::array<double, 3>;

// Surface voxels of a rank-3 mask by checking all six face neighbors.
inline std::vector<Point> surface3(const std::vector<std::uint8_t>& mask,
                                   std::int64_t dz, std::int64_t dy, std::int64_t dx) {
    std::vector<Point> out;
    auto at = [&](std::int64_t z, std::int64_t y, std::int64_t x) -> bool {
        if (z < 0 || z >= dz || y < 0 || y >= dy || x < 0 || x >= dx) return false;
        return mask[static_cast<std::size_t>((z * dy + y) * dx + x)] != 0;
    };
    for (std::int64_t z = 0; z < dz; ++z)
        for (std::int64_t y = 0; y < dy; ++y)
            for (std::int64_t x = 0; x < dx; ++x) {
                if (!at(z, y, x)) continue;
                if (!at(z - 1, y, x) || !at(z + 1, y, x) || !at(z, y - 1, x) ||
                    !at(z, y + 1, x) || !at(z, y, x - 1) || !at(z, y, x + 1)) {
                    out.push_back({static_cast<double>(z), static_cast<double>(y),
                                   static_cast<double>(x)});
                }
            }
    return out;
}

inline double percentile_interp(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    if (v.size() == 1) return v[0];
    const double pos = p / 100.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double hausdorff_percentile(const std::vector<Point>& t, const std::vector<Point>& p,
                                   double percentile) {
    auto directed = [](const std::vector<Point>& from, const std::vector<Point>& to) {
        std::vector<double> ds;
        for (const Point& a : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const Point& b : to) {
                best = std::min(best, std::hypot(a[0] - b[0], a[1] - b[1], a[2] - b[2]));
            }
            ds.push_back(best);
        }
        return ds;
    };
    return std::max(percentile_interp(directed(t, p), percentile),
                    percentile_interp(directed(p, t), percentile));
}

}  // namespace oracles

#endif

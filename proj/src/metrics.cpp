#include <algorithm>
#include <cmath>
#include <limits>

#include "slca/metrics.hpp"

namespace slca {

const char* region_name(Region r) {
    switch (r) {
        case Region::WT: return "WT";
        case Region::TC: return "TC";
        case Region::ET: return "ET";
    }
    return "?";
}

RegionMasks region_masks(const LabelVolume& labels) {
    RegionMasks out;
    out.spatial = labels.spatial;
    const std::size_t n = labels.values.size();
    for (auto& m : out.masks) m.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t v = labels.values[i];
        if (v > 3) {
            throw ValueError("label value " + std::to_string(v) + " at voxel " +
                             std::to_string(i) + " outside {0,1,2,3}");
        }
        if (v == 0) continue;
        out.masks[static_cast<std::size_t>(Region::WT)][i] = 1;
        if (v == 1 || v == 3) out.masks[static_cast<std::size_t>(Region::TC)][i] = 1;
        if (v == 3) out.masks[static_cast<std::size_t>(Region::ET)][i] = 1;
    }
    return out;
}

ConfusionCounts confusion(const std::vector<std::uint8_t>& pred,
                          const std::vector<std::uint8_t>& gt) {
    if (pred.size() != gt.size()) {
        throw ShapeError("confusion: mask sizes differ, " + std::to_string(pred.size()) +
                         " vs " + std::to_string(gt.size()));
    }
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, g = gt[i] != 0;
        if (p && g) ++c.tp;
        else if (p) ++c.fp;
        else if (g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

double dice(const ConfusionCounts& c) {
    const std::int64_t denom = c.fn + c.fp + 2 * c.tp;
    if (denom == 0) return 1.0;  // both masks empty
    return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double sensitivity(const ConfusionCounts& c) {
    const std::int64_t denom = c.tp + c.fn;
    if (denom == 0) return 1.0;
    return static_cast<double>(c.tp) / static_cast<double>(denom);
}

double specificity(const ConfusionCounts& c) {
    const std::int64_t denom = c.tn + c.fp;
    if (denom == 0) return 1.0;
    return static_cast<double>(c.tn) / static_cast<double>(denom);
}

std::vector<SurfacePoint> surface_extract(const std::vector<std::uint8_t>& mask,
                                          const Shape& spatial,
                                          const std::vector<double>& spacing) {
    const auto rank = static_cast<std::int64_t>(spatial.size());
    if (static_cast<std::int64_t>(mask.size()) != shape_numel(spatial)) {
        throw ShapeError("surface_extract: mask size does not match " +
                         shape_to_string(spatial));
    }
    std::vector<std::int64_t> stride(static_cast<std::size_t>(rank), 1);
    for (std::int64_t a = rank - 2; a >= 0; --a)
        stride[static_cast<std::size_t>(a)] =
            stride[static_cast<std::size_t>(a + 1)] * spatial[static_cast<std::size_t>(a + 1)];

    std::vector<SurfacePoint> out;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(rank), 0);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) {
            bool boundary = false;
            for (std::int64_t a = 0; a < rank && !boundary; ++a) {
                const auto ai = static_cast<std::size_t>(a);
                for (int dir = -1; dir <= 1 && !boundary; dir += 2) {
                    const std::int64_t ni = idx[ai] + dir;
                    if (ni < 0 || ni >= spatial[ai]) {
                        boundary = true;  // volume edge counts as background
                    } else if (!mask[i + static_cast<std::size_t>(dir) * stride[ai]]) {
                        boundary = true;
                    }
                }
            }
            if (boundary) {
                SurfacePoint p{0.0, 0.0, 0.0};
                for (std::int64_t a = 0; a < rank; ++a) {
                    const auto ai = static_cast<std::size_t>(a);
                    const double sp = ai < spacing.size() ? spacing[ai] : 1.0;
                    p[ai] = static_cast<double>(idx[ai]) * sp;
                }
                out.push_back(p);
            }
        }
        for (std::int64_t a = rank - 1; a >= 0; --a) {
            const auto ai = static_cast<std::size_t>(a);
            if (++idx[ai] < spatial[ai]) break;
            idx[ai] = 0;
        }
    }
    return out;
}

namespace {

double interp_percentile(std::vector<double>& values, double percentile) {
    std::sort(values.begin(), values.end());
    const auto n = static_cast<std::int64_t>(values.size());
    if (n == 1) return values[0];
    const double pos = percentile / 100.0 * static_cast<double>(n - 1);
    const auto lo = static_cast<std::int64_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, n - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[static_cast<std::size_t>(lo)] +
           frac * (values[static_cast<std::size_t>(hi)] - values[static_cast<std::size_t>(lo)]);
}

std::vector<double> directed_distances(const std::vector<SurfacePoint>& from,
                                       const std::vector<SurfacePoint>& to) {
    std::vector<double> out;
    out.reserve(from.size());
    for (const SurfacePoint& a : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const SurfacePoint& b : to) {
            const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
            best = std::min(best, dx * dx + dy * dy + dz * dz);
        }
        out.push_back(std::sqrt(best));
    }
    return out;
}

}  // namespace

std::optional<double> hausdorff_percentile(const std::vector<SurfacePoint>& t,
                                           const std::vector<SurfacePoint>& p,
                                           double percentile) {
    if (t.empty() || p.empty()) return std::nullopt;
    if (percentile < 0.0 || percentile > 100.0) {
        throw ValueError("percentile must lie in [0, 100]");
    }
    std::vector<double> fwd = directed_distances(t, p);
    std::vector<double> bwd = directed_distances(p, t);
    return std::max(interp_percentile(fwd, percentile), interp_percentile(bwd, percentile));
}

std::optional<double> hausdorff95(const std::vector<SurfacePoint>& t,
                                  const std::vector<SurfacePoint>& p) {
    return hausdorff_percentile(t, p, 95.0);
}

MetricsReport evaluate(const LabelVolume& pred, const LabelVolume& gt,
                       const std::vector<double>& spacing) {
    if (pred.spatial != gt.spatial) {
        throw ShapeError("evaluate: prediction " + shape_to_string(pred.spatial) +
                         " vs ground truth " + shape_to_string(gt.spatial));
    }
    const RegionMasks pm = region_masks(pred);
    const RegionMasks gm = region_masks(gt);
    MetricsReport report;
    report.spacing = spacing;
    for (int r = 0; r < 3; ++r) {
        const auto region = static_cast<Region>(r);
        const ConfusionCounts c = confusion(pm[region], gm[region]);
        RegionMetrics& m = report.regions[static_cast<std::size_t>(r)];
        m.dice = dice(c);
        m.sensitivity = sensitivity(c);
        m.specificity = specificity(c);
        m.hd95 = hausdorff95(surface_extract(gm[region], gt.spatial, spacing),
                             surface_extract(pm[region], pred.spatial, spacing));
    }
    return report;
}

void write_metrics_csv_header(std::ostream& os) {
    os << "case_id,region,dice,sensitivity,specificity,hd95,hd95_defined\n";
}

void write_metrics_csv_row(std::ostream& os, const std::string& case_id, Region region,
                           const RegionMetrics& m) {
    os << case_id << ',' << region_name(region) << ',' << m.dice << ',' << m.sensitivity
       << ',' << m.specificity << ',';
    if (m.hd95) os << *m.hd95;
    os << ',' << (m.hd95 ? 1 : 0) << '\n';
}

}  // namespace slca

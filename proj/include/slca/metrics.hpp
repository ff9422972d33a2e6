#ifndef SLCA_METRICS_HPP
#define SLCA_METRICS_HPP

#include <array>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "slca/tensor.hpp"

namespace slca {

// Voxel confusion counts; TP+FP+FN+TN equals the volume size.
struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

// The three nested BraTS evaluation regions. Label scheme: 0 background,
// 1 necrosis/non-enhancing, 2 edema, 3 enhancing; WT = {1,2,3}, TC = {1,3},
// ET = {3}, so ET <= TC <= WT as sets.
enum class Region { WT = 0, TC = 1, ET = 2 };
const char* region_name(Region r);

struct RegionMasks {
    Shape spatial;
    std::array<std::vector<std::uint8_t>, 3> masks;  // indexed by Region

    const std::vector<std::uint8_t>& operator[](Region r) const {
        return masks[static_cast<std::size_t>(r)];
    }
};

// Throws ValueError listing the first out-of-range label.
RegionMasks region_masks(const LabelVolume& labels);

ConfusionCounts confusion(const std::vector<std::uint8_t>& pred,
                          const std::vector<std::uint8_t>& gt);

// 2TP / (FN + FP + 2TP); 1.0 when both masks are empty (documented convention).
double dice(const ConfusionCounts& c);
// TP / (TP + FN); 1.0 on an empty denominator.
double sensitivity(const ConfusionCounts& c);
// TN / (TN + FP); 1.0 on an empty denominator.
double specificity(const ConfusionCounts& c);

using SurfacePoint = std::array<double, 3>;  // unused trailing axes stay 0

// Foreground voxels with at least one face-adjacent background or
// out-of-bounds neighbor, in spacing-scaled coordinates.
std::vector<SurfacePoint> surface_extract(const std::vector<std::uint8_t>& mask,
                                          const Shape& spatial,
                                          const std::vector<double>& spacing = {});

// max(percentile_p of directed distances T->P, percentile_p of P->T) with
// linearly interpolated percentiles; p = 100 gives the classical Hausdorff
// distance. nullopt when either set is empty.
std::optional<double> hausdorff_percentile(const std::vector<SurfacePoint>& t,
                                           const std::vector<SurfacePoint>& p,
                                           double percentile);
std::optional<double> hausdorff95(const std::vector<SurfacePoint>& t,
                                  const std::vector<SurfacePoint>& p);

struct RegionMetrics {
    double dice = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    std::optional<double> hd95;  // nullopt: undefined (an empty surface)
};

struct MetricsReport {
    std::array<RegionMetrics, 3> regions;  // indexed by Region
    std::vector<double> spacing;

    const RegionMetrics& operator[](Region r) const {
        return regions[static_cast<std::size_t>(r)];
    }
};

MetricsReport evaluate(const LabelVolume& pred, const LabelVolume& gt,
                       const std::vector<double>& spacing = {});

// CSV schema: case_id, region, dice, sensitivity, specificity, hd95,
// hd95_defined. hd95 is blank when undefined.
void write_metrics_csv_header(std::ostream& os);
void write_metrics_csv_row(std::ostream& os, const std::string& case_id, Region region,
                           const RegionMetrics& m);

}  // namespace slca

#endif

#ifndef SLCA_DATA_HPP
#define SLCA_DATA_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "slca/tensor.hpp"

namespace slca {

// Four-channel real volume (FLAIR / T1 / T1ce / T2 analogues) with per-axis
// voxel spacing in mm. Channel-major, last spatial axis fastest.
struct MultiModalVolume {
    static constexpr std::int64_t kChannels = 4;

    Shape spatial;
    std::vector<float> data;      // kChannels * numel(spatial)
    std::vector<double> spacing;  // one entry per spatial axis

    std::int64_t channel_numel() const { return shape_numel(spatial); }
    float* channel(std::int64_t c) { return data.data() + c * channel_numel(); }
    const float* channel(std::int64_t c) const { return data.data() + c * channel_numel(); }

    Tensor to_tensor() const;  // widens to f64, shape [4, S...]
};

// SVOL file errors, one class per failure category.
struct SvolBadMagic : ValueError {
    using ValueError::ValueError;
};
struct SvolTruncated : ValueError {
    using ValueError::ValueError;
};
struct SvolDtypeMismatch : ValueError {
    using ValueError::ValueError;
};

// SVOL: little-endian; magic "SVOL1\0"; u32 dtype (0 = f32 image, 1 = u8
// labels); u32 channels; u32 rank; rank x u32 extents; rank x f32 spacing;
// raw payload channel-major with the last axis fastest; no compression.
void write_svol(const std::filesystem::path& path, const MultiModalVolume& vol);
void write_svol(const std::filesystem::path& path, const LabelVolume& labels,
                const std::vector<double>& spacing = {});
MultiModalVolume read_svol_volume(const std::filesystem::path& path);
LabelVolume read_svol_labels(const std::filesystem::path& path);

// Synthetic tumor phantom: a brain ellipsoid of nonzero intensity inside a
// zero background, with per-tumor nested ellipsoids labeled 1 (necrotic
// core), 3 (enhancing shell), 2 (edema shell). Intensity rows are indexed
// by tissue (0 brain, 1 necrosis, 2 edema, 3 enhancing), columns by
// modality (FLAIR, T1, T1ce, T2).
struct PhantomSpec {
    std::uint64_t seed = 0;
    std::int64_t extent = 32;  // cubic volume, extent^rank voxels
    std::int64_t spatial_rank = 3;
    std::int64_t tumor_count = 1;
    double radius_min = 5.0;  // outer (edema) radius range, voxels
    double radius_max = 9.0;
    double noise_sigma = 0.05;
    std::array<std::array<double, 4>, 4> intensity = kDefaultIntensity;
    std::int64_t placement_retries = 100;

    // Adjacent tissue classes are separated by well over 2 sigma in at
    // least one modality, so a small network can learn the phantom.
    static constexpr std::array<std::array<double, 4>, 4> kDefaultIntensity = {{
        {0.30, 0.80, 0.50, 0.40},  // brain
        {0.70, 0.30, 0.25, 0.90},  // necrosis / non-enhancing
        {1.00, 0.55, 0.60, 1.10},  // edema
        {0.80, 0.60, 1.20, 0.70},  // enhancing
    }};
};

std::pair<MultiModalVolume, LabelVolume> generate_phantom(const PhantomSpec& spec);

// Per-channel zero-mean unit-variance over the nonzero-intensity support;
// a constant channel maps to all zeros. Zero voxels stay zero.
MultiModalVolume normalize(const MultiModalVolume& v);

struct SplitResult {
    std::vector<std::string> train, val, test;
};

// Seeded shuffle then partition; val and test sizes are floor(n * ratio),
// remainder ids go to train.
SplitResult split(std::vector<std::string> case_ids, std::array<double, 3> ratios,
                  std::uint64_t seed);

}  // namespace slca

#endif

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "slca/data.hpp"

namespace slca {

Tensor MultiModalVolume::to_tensor() const {
    Shape shape{kChannels};
    shape.insert(shape.end(), spatial.begin(), spatial.end());
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < data.size(); ++i) t[static_cast<std::int64_t>(i)] = data[i];
    return t;
}

namespace {

constexpr char kMagic[6] = {'S', 'V', 'O', 'L', '1', '\0'};
constexpr std::uint32_t kDtypeF32 = 0;
constexpr std::uint32_t kDtypeU8 = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& os, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(os, v);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw SvolTruncated("svol header ends early");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

float get_f32(std::istream& is) {
    const std::uint32_t v = get_u32(is);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

struct SvolHeader {
    std::uint32_t dtype = 0;
    std::uint32_t channels = 0;
    Shape spatial;
    std::vector<double> spacing;
};

void write_header(std::ostream& os, std::uint32_t dtype, std::uint32_t channels,
                  const Shape& spatial, const std::vector<double>& spacing) {
    os.write(kMagic, sizeof(kMagic));
    put_u32(os, dtype);
    put_u32(os, channels);
    put_u32(os, static_cast<std::uint32_t>(spatial.size()));
    for (auto e : spatial) put_u32(os, static_cast<std::uint32_t>(e));
    for (std::size_t a = 0; a < spatial.size(); ++a) {
        put_f32(os, a < spacing.size() ? static_cast<float>(spacing[a]) : 1.0f);
    }
}

SvolHeader read_header(std::istream& is, const std::filesystem::path& path) {
    char magic[6];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw SvolBadMagic("bad magic in " + path.string());
    }
    SvolHeader h;
    h.dtype = get_u32(is);
    if (h.dtype != kDtypeF32 && h.dtype != kDtypeU8) {
        throw SvolDtypeMismatch("unknown dtype code " + std::to_string(h.dtype) + " in " +
                                path.string());
    }
    h.channels = get_u32(is);
    const std::uint32_t rank = get_u32(is);
    if (rank < 1 || rank > 3) {
        throw SvolTruncated("implausible rank " + std::to_string(rank) + " in " +
                            path.string());
    }
    for (std::uint32_t a = 0; a < rank; ++a)
        h.spatial.push_back(static_cast<std::int64_t>(get_u32(is)));
    for (std::uint32_t a = 0; a < rank; ++a)
        h.spacing.push_back(static_cast<double>(get_f32(is)));
    return h;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string() + " for reading");
    return is;
}

void check_payload_end(std::istream& is, const std::filesystem::path& path) {
    if (!is) throw SvolTruncated("payload of " + path.string() +
                                 " shorter than header declares");
    is.peek();
    if (!is.eof()) {
        throw SvolTruncated("payload of " + path.string() +
                            " longer than header declares");
    }
}

}  // namespace

void write_svol(const std::filesystem::path& path, const MultiModalVolume& vol) {
    std::ofstream os = open_out(path);
    write_header(os, kDtypeF32, MultiModalVolume::kChannels, vol.spatial, vol.spacing);
    for (float f : vol.data) put_f32(os, f);
    if (!os) throw IoError("write failed for " + path.string());
}

void write_svol(const std::filesystem::path& path, const LabelVolume& labels,
                const std::vector<double>& spacing) {
    std::ofstream os = open_out(path);
    write_header(os, kDtypeU8, 1, labels.spatial, spacing);
    os.write(reinterpret_cast<const char*>(labels.values.data()),
             static_cast<std::streamsize>(labels.values.size()));
    if (!os) throw IoError("write failed for " + path.string());
}

MultiModalVolume read_svol_volume(const std::filesystem::path& path) {
    std::ifstream is = open_in(path);
    const SvolHeader h = read_header(is, path);
    if (h.dtype != kDtypeF32) {
        throw SvolDtypeMismatch(path.string() + " holds labels, expected an f32 image");
    }
    if (h.channels != MultiModalVolume::kChannels) {
        throw SvolDtypeMismatch(path.string() + " has " + std::to_string(h.channels) +
                                " channels, expected 4");
    }
    MultiModalVolume vol;
    vol.spatial = h.spatial;
    vol.spacing = h.spacing;
    vol.data.resize(static_cast<std::size_t>(h.channels) *
                    static_cast<std::size_t>(shape_numel(h.spatial)));
    for (float& f : vol.data) f = get_f32(is);
    check_payload_end(is, path);
    return vol;
}

LabelVolume read_svol_labels(const std::filesystem::path& path) {
    std::ifstream is = open_in(path);
    const SvolHeader h = read_header(is, path);
    if (h.dtype != kDtypeU8) {
        throw SvolDtypeMismatch(path.string() + " holds an f32 image, expected labels");
    }
    if (h.channels != 1) {
        throw SvolDtypeMismatch(path.string() + " label file must have 1 channel");
    }
    LabelVolume labels;
    labels.spatial = h.spatial;
    labels.values.resize(static_cast<std::size_t>(shape_numel(h.spatial)));
    is.read(reinterpret_cast<char*>(labels.values.data()),
            static_cast<std::streamsize>(labels.values.size()));
    check_payload_end(is, path);
    return labels;
}

namespace {

struct Ellipsoid {
    std::array<double, 3> center{};
    std::array<double, 3> radii{};  // unused axes get radius 0 and are skipped

    double normalized_dist2(const std::array<double, 3>& p, std::int64_t rank) const {
        double d = 0.0;
        for (std::int64_t a = 0; a < rank; ++a) {
            const double t = (p[static_cast<std::size_t>(a)] -
                              center[static_cast<std::size_t>(a)]) /
                             radii[static_cast<std::size_t>(a)];
            d += t * t;
        }
        return d;
    }
};

}  // namespace

std::pair<MultiModalVolume, LabelVolume> generate_phantom(const PhantomSpec& spec) {
    if (spec.spatial_rank < 2 || spec.spatial_rank > 3) {
        throw ValueError("phantom spatial_rank must be 2 or 3");
    }
    if (spec.radius_min <= 0 || spec.radius_max < spec.radius_min) {
        throw ValueError("phantom radius range invalid");
    }
    const std::int64_t rank = spec.spatial_rank;
    const auto d = static_cast<double>(spec.extent);
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Ellipsoid brain;
    for (std::int64_t a = 0; a < rank; ++a) {
        brain.center[static_cast<std::size_t>(a)] = (d - 1.0) / 2.0;
        brain.radii[static_cast<std::size_t>(a)] = 0.46 * d;
    }

    struct Tumor {
        Ellipsoid necrosis, enhancing, edema;
    };
    std::vector<Tumor> tumors;
    for (std::int64_t t = 0; t < spec.tumor_count; ++t) {
        bool placed = false;
        for (std::int64_t attempt = 0; attempt < spec.placement_retries; ++attempt) {
            const double r =
                spec.radius_min + (spec.radius_max - spec.radius_min) * unit(rng);
            Tumor tumor;
            bool fits = true;
            for (std::int64_t a = 0; a < rank; ++a) {
                const auto ai = static_cast<std::size_t>(a);
                const double ra = r * (0.8 + 0.4 * unit(rng));
                const double lo = brain.center[ai] - brain.radii[ai] + ra;
                const double hi = brain.center[ai] + brain.radii[ai] - ra;
                if (lo >= hi) {
                    fits = false;
                    break;
                }
                const double c = lo + (hi - lo) * unit(rng);
                tumor.edema.center[ai] = c;
                tumor.edema.radii[ai] = ra;
                tumor.enhancing.center[ai] = c;
                tumor.enhancing.radii[ai] = 0.7 * ra;
                tumor.necrosis.center[ai] = c;
                tumor.necrosis.radii[ai] = 0.4 * ra;
                // Conservative per-axis bound keeps the whole tumor inside
                // the brain ellipsoid.
                if (std::abs(c - brain.center[ai]) + ra > brain.radii[ai]) fits = false;
            }
            if (!fits) continue;
            tumors.push_back(tumor);
            placed = true;
            break;
        }
        if (!placed) {
            throw ValueError("could not place tumor " + std::to_string(t) + " within " +
                             std::to_string(spec.placement_retries) + " attempts");
        }
    }

    Shape spatial(static_cast<std::size_t>(rank), spec.extent);
    const std::int64_t n = shape_numel(spatial);
    LabelVolume labels;
    labels.spatial = spatial;
    labels.values.assign(static_cast<std::size_t>(n), 0);

    MultiModalVolume vol;
    vol.spatial = spatial;
    vol.spacing.assign(static_cast<std::size_t>(rank), 1.0);
    vol.data.assign(static_cast<std::size_t>(MultiModalVolume::kChannels * n), 0.0f);

    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    std::vector<std::int64_t> stride(static_cast<std::size_t>(rank), 1);
    for (std::int64_t a = rank - 2; a >= 0; --a)
        stride[static_cast<std::size_t>(a)] =
            stride[static_cast<std::size_t>(a + 1)] * spec.extent;

    for (std::int64_t i = 0; i < n; ++i) {
        std::array<double, 3> p{};
        std::int64_t rem = i;
        for (std::int64_t a = 0; a < rank; ++a) {
            p[static_cast<std::size_t>(a)] =
                static_cast<double>(rem / stride[static_cast<std::size_t>(a)]);
            rem %= stride[static_cast<std::size_t>(a)];
        }
        if (brain.normalized_dist2(p, rank) > 1.0) continue;  // outside: exact zero

        int tissue = 0;
        std::uint8_t label = 0;
        for (const Tumor& tumor : tumors) {
            if (tumor.necrosis.normalized_dist2(p, rank) <= 1.0) {
                label = 1;
                tissue = 1;
                break;  // innermost tissue wins
            }
            if (label == 0 && tumor.enhancing.normalized_dist2(p, rank) <= 1.0) {
                label = 3;
                tissue = 3;
            } else if (label == 0 && tumor.edema.normalized_dist2(p, rank) <= 1.0) {
                label = 2;
                tissue = 2;
            }
        }
        labels.values[static_cast<std::size_t>(i)] = label;
        for (std::int64_t m = 0; m < MultiModalVolume::kChannels; ++m) {
            const double v =
                spec.intensity[static_cast<std::size_t>(tissue)][static_cast<std::size_t>(m)] +
                noise(rng);
            vol.data[static_cast<std::size_t>(m * n + i)] = static_cast<float>(v);
        }
    }
    return {std::move(vol), std::move(labels)};
}

MultiModalVolume normalize(const MultiModalVolume& v) {
    MultiModalVolume out = v;
    const std::int64_t n = v.channel_numel();
    for (std::int64_t c = 0; c < MultiModalVolume::kChannels; ++c) {
        const float* src = v.channel(c);
        float* dst = out.channel(c);
        double sum = 0.0, sum2 = 0.0;
        std::int64_t count = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            if (src[i] != 0.0f) {
                sum += src[i];
                sum2 += static_cast<double>(src[i]) * src[i];
                ++count;
            }
        }
        if (count == 0) continue;  // all-zero channel stays zero
        const double mean = sum / static_cast<double>(count);
        const double var = std::max(0.0, sum2 / static_cast<double>(count) - mean * mean);
        const double sd = std::sqrt(var);
        if (sd < 1e-12) {
            for (std::int64_t i = 0; i < n; ++i) dst[i] = 0.0f;
            continue;
        }
        for (std::int64_t i = 0; i < n; ++i) {
            if (src[i] != 0.0f) dst[i] = static_cast<float>((src[i] - mean) / sd);
        }
    }
    return out;
}

SplitResult split(std::vector<std::string> case_ids, std::array<double, 3> ratios,
                  std::uint64_t seed) {
    if (case_ids.empty()) throw ValueError("split needs at least one case id");
    const double total = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(total - 1.0) > 1e-9) {
        throw ValueError("split ratios must sum to 1, got " + std::to_string(total));
    }
    // Fisher-Yates with an explicit draw so the permutation is stable across
    // standard library implementations.
    std::mt19937_64 rng(seed);
    for (std::size_t i = case_ids.size() - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
        std::swap(case_ids[i], case_ids[j]);
    }
    const auto n = static_cast<double>(case_ids.size());
    const auto n_val = static_cast<std::size_t>(std::floor(n * ratios[1]));
    const auto n_test = static_cast<std::size_t>(std::floor(n * ratios[2]));
    const std::size_t n_train = case_ids.size() - n_val - n_test;
    SplitResult r;
    r.train.assign(case_ids.begin(), case_ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    r.val.assign(case_ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                 case_ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    r.test.assign(case_ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val),
                  case_ids.end());
    return r;
}

}  // namespace slca

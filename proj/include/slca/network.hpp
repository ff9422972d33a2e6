#ifndef SLCA_NETWORK_HPP
#define SLCA_NETWORK_HPP

#include <optional>

#include "slca/blocks.hpp"
#include "slca/data.hpp"

namespace slca {

struct NetworkConfig {
    std::int64_t spatial_rank = 3;
    std::int64_t in_channels = 4;
    std::int64_t num_classes = 4;
    std::int64_t levels = 4;
    std::int64_t base_width = 8;
    std::int64_t stacked_depth = 2;
    std::int64_t dilation1 = 1;
    std::int64_t dilation2 = 2;
    std::int64_t se_ratio = 4;
    bool residual_c1 = false;  // extra parallel conv path in the residual blocks
    std::uint64_t seed = 0;

    void validate() const;  // throws ValueError with the offending field
    std::int64_t width(std::int64_t level) const { return base_width << level; }
    std::int64_t downsample_factor() const { return std::int64_t{1} << (levels - 1); }

    bool operator==(const NetworkConfig&) const = default;
};

// Encoder-decoder assembly: residual dense encoder (strided between levels),
// stacked-convolution skip modules, layered+channel attention over the three
// deepest encoder outputs (levels >= 3; the fused map is resampled onto the
// bottleneck and added to it), nearest-upsample + skip-concat + two conv-relu
// decoder levels, and a 1x1 head with per-voxel channel softmax.
//
// Parameter enumeration order (the serialization contract): encoder blocks
// shallow to deep, skip modules shallow to deep, attention (per level: two
// atrous convs then the 1x1 projection; then the two group-weight dense
// layers; then the three SE blocks), decoder deep to shallow (two convs
// each), head. Within each layer: weight then bias.
class Network {
public:
    explicit Network(const NetworkConfig& cfg);

    const NetworkConfig& config() const { return cfg_; }

    // Builds the forward graph; returns per-voxel class probabilities.
    NodePtr forward(GradTape& tape, NodePtr x);
    // Convenience inference: probabilities as a plain tensor.
    Tensor forward(const Tensor& x);
    // Argmax labeling of a raw multi-modal volume (normalized internally);
    // ties break toward the lower class index.
    LabelVolume segment(const MultiModalVolume& volume);

    std::vector<Parameter*> parameters();
    std::int64_t parameter_scalars();  // total scalar count, from the enumeration

private:
    void check_input(const Tensor& x) const;

    NetworkConfig cfg_;
    std::vector<ResidualDenseBlock> encoder_;
    std::vector<StackedConvolution> skips_;
    std::optional<LayeredChannelAttention> attention_;
    struct DecoderLevel {
        ConvLayer conv1, conv2;
    };
    std::vector<DecoderLevel> decoder_;  // deep to shallow
    ConvLayer head_;
};

Network build(const NetworkConfig& cfg);

// Closed-form parameter count for a config; matches the built network's
// enumeration exactly.
std::int64_t param_count(const NetworkConfig& cfg);

// Argmax over the channel axis, ties toward the lower index.
LabelVolume argmax_labels(const Tensor& probs);

}  // namespace slca

#endif

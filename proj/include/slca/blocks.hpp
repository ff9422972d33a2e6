#ifndef SLCA_BLOCKS_HPP
#define SLCA_BLOCKS_HPP

#include <array>
#include <random>

#include "slca/graph.hpp"

namespace slca {

using Rng = std::mt19937_64;

// Uniform in +-sqrt(6 / (fan_in + fan_out)), rounded through f32 so that
// checkpoints (which store f32) round-trip parameters exactly. Bias is zero.
void glorot_init(Parameter& p, std::int64_t fan_in, std::int64_t fan_out, Rng& rng);

// Convolution layer owning its kernel and bias parameters.
struct ConvLayer {
    Parameter weight;  // [K, C_in, m...]
    Parameter bias;    // [K]
    ConvGeometry geom;
    Activation act = Activation::None;

    ConvLayer() = default;
    ConvLayer(const std::string& name, std::int64_t in_ch, std::int64_t out_ch,
              std::int64_t kernel, std::int64_t spatial_rank, ConvGeometry geom,
              Activation act, Rng& rng);

    std::int64_t out_channels() const { return weight.value.shape()[0]; }
    NodePtr apply(GradTape& tape, NodePtr x);
    void collect(std::vector<Parameter*>& out);
    static std::int64_t count(std::int64_t in_ch, std::int64_t out_ch,
                              std::int64_t kernel, std::int64_t spatial_rank);
};

struct DenseLayer {
    Parameter weight;  // [n, k]
    Parameter bias;    // [k]
    Activation act = Activation::None;

    DenseLayer() = default;
    DenseLayer(const std::string& name, std::int64_t in, std::int64_t out,
               Activation act, Rng& rng);

    NodePtr apply(GradTape& tape, NodePtr v);
    void collect(std::vector<Parameter*>& out);
    static std::int64_t count(std::int64_t in, std::int64_t out);
};

// Three parallel convolutions of the block input sharing one stride; the
// output is the element-wise sum of the second and third. The first conv is
// an optional extra path (off by default) since the defining equations
// compute it without consuming it.
class ResidualDenseBlock {
public:
    ResidualDenseBlock() = default;
    ResidualDenseBlock(const std::string& name, std::int64_t in_ch, std::int64_t out_ch,
                       std::int64_t stride, std::int64_t spatial_rank, bool use_c1,
                       Activation act, Rng& rng);

    NodePtr apply(GradTape& tape, NodePtr x);
    void collect(std::vector<Parameter*>& out);
    std::int64_t out_channels() const { return c2_.out_channels(); }
    static std::int64_t count(std::int64_t in_ch, std::int64_t out_ch,
                              std::int64_t spatial_rank, bool use_c1);

private:
    ConvLayer c1_, c2_, c3_;
    bool use_c1_ = false;
};

// Skip-connection module: k successive 3x3(x3) stride-1 relu convolutions,
// channel concatenation of every stage output, then a 1x1(x1) projection
// back to the input width. Spatial shape is preserved.
class StackedConvolution {
public:
    StackedConvolution() = default;
    StackedConvolution(const std::string& name, std::int64_t channels, std::int64_t depth,
                       std::int64_t spatial_rank, Rng& rng);

    NodePtr apply(GradTape& tape, NodePtr x);
    void collect(std::vector<Parameter*>& out);
    std::int64_t depth() const { return static_cast<std::int64_t>(stages_.size()); }
    static std::int64_t count(std::int64_t channels, std::int64_t depth,
                              std::int64_t spatial_rank);

    ConvLayer& projection() { return proj_; }  // exposed for identity-init tests

private:
    std::vector<ConvLayer> stages_;
    ConvLayer proj_;
};

// Squeeze-and-excitation channel gating: global average pool, bottleneck
// dense pair (relu then sigmoid), per-channel multiplicative gates.
class SEBlock {
public:
    SEBlock() = default;
    SEBlock(const std::string& name, std::int64_t channels, std::int64_t ratio, Rng& rng);

    NodePtr apply(GradTape& tape, NodePtr m);
    NodePtr excitation(GradTape& tape, NodePtr m);  // the gate vector e, length K
    void collect(std::vector<Parameter*>& out);
    static std::int64_t count(std::int64_t channels, std::int64_t ratio);

    DenseLayer& excite() { return excite_; }  // exposed for forced-gate tests

private:
    DenseLayer squeeze_;
    DenseLayer excite_;
};

// Layered attention over three encoder levels plus group-weighted SE fusion.
// Per level: two atrous convolutions (dilations r1, r2) summed element-wise,
// a 1x1 projection to a common width, and resampling to the finest of the
// three spatial shapes. Group weights come from pooled features of the
// concatenated maps through a two-layer dense network and a softmax.
class LayeredChannelAttention {
public:
    LayeredChannelAttention() = default;
    LayeredChannelAttention(const std::string& name, std::array<std::int64_t, 3> channels,
                            std::int64_t common_width, std::int64_t dilation1,
                            std::int64_t dilation2, std::int64_t se_ratio,
                            std::int64_t spatial_rank, Rng& rng);

    // A_i = conv(M_i, K1, r1) (+) conv(M_i, K2, r2), shape-preserving.
    std::array<NodePtr, 3> layered_attention(GradTape& tape, std::array<NodePtr, 3> ms);
    // G = softmax(dense2(relu(dense1(GAP(concat(projected+resampled A))))))
    NodePtr group_weights(GradTape& tape, std::array<NodePtr, 3> as);
    // sum_i G_i * SE_i(resample(proj_i(A_i))), at the finest spatial shape.
    NodePtr attention_fuse(GradTape& tape, std::array<NodePtr, 3> as, NodePtr g);
    // Full module: layered attention, group weights, fusion.
    NodePtr apply(GradTape& tape, std::array<NodePtr, 3> ms);

    void collect(std::vector<Parameter*>& out);
    std::int64_t common_width() const { return common_width_; }
    static std::int64_t count(std::array<std::int64_t, 3> channels,
                              std::int64_t common_width, std::int64_t se_ratio,
                              std::int64_t spatial_rank);
    static std::int64_t hidden_width(std::int64_t common_width);

private:
    std::array<NodePtr, 3> project_resample(GradTape& tape, std::array<NodePtr, 3> as);

    std::array<ConvLayer, 3> atrous1_, atrous2_, proj_;
    DenseLayer dense1_, dense2_;
    std::array<SEBlock, 3> se_;
    std::int64_t common_width_ = 0;
};

}  // namespace slca

#endif

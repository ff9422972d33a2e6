#include <cmath>

#include "slca/blocks.hpp"

namespace slca {

void glorot_init(Parameter& p, std::int64_t fan_in, std::int64_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::int64_t i = 0; i < p.value.size(); ++i) {
        p.value[i] = static_cast<double>(static_cast<float>(u(rng)));
    }
}

namespace {
Shape conv_weight_shape(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel,
                        std::int64_t spatial_rank) {
    Shape s{out_ch, in_ch};
    for (std::int64_t a = 0; a < spatial_rank; ++a) s.push_back(kernel);
    return s;
}

std::int64_t ipow(std::int64_t b, std::int64_t e) {
    std::int64_t r = 1;
    while (e-- > 0) r *= b;
    return r;
}
}  // namespace

ConvLayer::ConvLayer(const std::string& name, std::int64_t in_ch, std::int64_t out_ch,
                     std::int64_t kernel, std::int64_t spatial_rank, ConvGeometry geom_,
                     Activation act_, Rng& rng)
    : weight(name + ".w", Tensor(conv_weight_shape(in_ch, out_ch, kernel, spatial_rank))),
      bias(name + ".b", Tensor({out_ch})),
      geom(geom_),
      act(act_) {
    const std::int64_t taps = ipow(kernel, spatial_rank);
    glorot_init(weight, in_ch * taps, out_ch * taps, rng);
}

NodePtr ConvLayer::apply(GradTape& tape, NodePtr x) {
    return tape.conv(std::move(x), tape.param(weight), tape.param(bias), geom, act);
}

void ConvLayer::collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

std::int64_t ConvLayer::count(std::int64_t in_ch, std::int64_t out_ch,
                              std::int64_t kernel, std::int64_t spatial_rank) {
    return out_ch * in_ch * ipow(kernel, spatial_rank) + out_ch;
}

DenseLayer::DenseLayer(const std::string& name, std::int64_t in, std::int64_t out,
                       Activation act_, Rng& rng)
    : weight(name + ".w", Tensor({in, out})),
      bias(name + ".b", Tensor({out})),
      act(act_) {
    glorot_init(weight, in, out, rng);
}

NodePtr DenseLayer::apply(GradTape& tape, NodePtr v) {
    return tape.dense(std::move(v), tape.param(weight), tape.param(bias), act);
}

void DenseLayer::collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

std::int64_t DenseLayer::count(std::int64_t in, std::int64_t out) {
    return in * out + out;
}

ResidualDenseBlock::ResidualDenseBlock(const std::string& name, std::int64_t in_ch,
                                       std::int64_t out_ch, std::int64_t stride,
                                       std::int64_t spatial_rank, bool use_c1,
                                       Activation act, Rng& rng)
    : use_c1_(use_c1) {
    const ConvGeometry g{stride, 1, Padding::Same};
    if (use_c1_) c1_ = ConvLayer(name + ".c1", in_ch, out_ch, 3, spatial_rank, g, act, rng);
    c2_ = ConvLayer(name + ".c2", in_ch, out_ch, 3, spatial_rank, g, act, rng);
    c3_ = ConvLayer(name + ".c3", in_ch, out_ch, 3, spatial_rank, g, act, rng);
}

NodePtr ResidualDenseBlock::apply(GradTape& tape, NodePtr x) {
    NodePtr out = tape.eltwise_add(c2_.apply(tape, x), c3_.apply(tape, x));
    if (use_c1_) out = tape.eltwise_add(out, c1_.apply(tape, x));
    return out;
}

void ResidualDenseBlock::collect(std::vector<Parameter*>& out) {
    if (use_c1_) c1_.collect(out);
    c2_.collect(out);
    c3_.collect(out);
}

std::int64_t ResidualDenseBlock::count(std::int64_t in_ch, std::int64_t out_ch,
                                       std::int64_t spatial_rank, bool use_c1) {
    return (use_c1 ? 3 : 2) * ConvLayer::count(in_ch, out_ch, 3, spatial_rank);
}

StackedConvolution::StackedConvolution(const std::string& name, std::int64_t channels,
                                       std::int64_t depth, std::int64_t spatial_rank,
                                       Rng& rng) {
    if (depth < 1) throw ValueError("stacked convolution depth must be >= 1");
    stages_.reserve(static_cast<std::size_t>(depth));
    for (std::int64_t i = 0; i < depth; ++i) {
        stages_.emplace_back(name + ".s" + std::to_string(i), channels, channels, 3,
                             spatial_rank, ConvGeometry{}, Activation::Relu, rng);
    }
    proj_ = ConvLayer(name + ".proj", channels * depth, channels, 1, spatial_rank,
                      ConvGeometry{}, Activation::None, rng);
}

NodePtr StackedConvolution::apply(GradTape& tape, NodePtr x) {
    std::vector<NodePtr> outs;
    outs.reserve(stages_.size());
    NodePtr cur = std::move(x);
    for (auto& stage : stages_) {
        cur = stage.apply(tape, cur);
        outs.push_back(cur);
    }
    NodePtr cat = outs.size() == 1 ? outs[0] : tape.concat_channels(outs);
    return proj_.apply(tape, cat);
}

void StackedConvolution::collect(std::vector<Parameter*>& out) {
    for (auto& s : stages_) s.collect(out);
    proj_.collect(out);
}

std::int64_t StackedConvolution::count(std::int64_t channels, std::int64_t depth,
                                       std::int64_t spatial_rank) {
    return depth * ConvLayer::count(channels, channels, 3, spatial_rank) +
           ConvLayer::count(channels * depth, channels, 1, spatial_rank);
}

SEBlock::SEBlock(const std::string& name, std::int64_t channels, std::int64_t ratio,
                 Rng& rng) {
    if (ratio < 1 || channels % ratio != 0) {
        throw ValueError("SE reduction ratio " + std::to_string(ratio) +
                         " must divide channel count " + std::to_string(channels));
    }
    squeeze_ = DenseLayer(name + ".squeeze", channels, channels / ratio,
                          Activation::Relu, rng);
    excite_ = DenseLayer(name + ".excite", channels / ratio, channels,
                         Activation::None, rng);
}

NodePtr SEBlock::excitation(GradTape& tape, NodePtr m) {
    NodePtr pooled = tape.global_avg_pool(std::move(m));
    return tape.sigmoid(excite_.apply(tape, squeeze_.apply(tape, pooled)));
}

NodePtr SEBlock::apply(GradTape& tape, NodePtr m) {
    NodePtr e = excitation(tape, m);
    return tape.scale_channels(std::move(m), std::move(e));
}

void SEBlock::collect(std::vector<Parameter*>& out) {
    squeeze_.collect(out);
    excite_.collect(out);
}

std::int64_t SEBlock::count(std::int64_t channels, std::int64_t ratio) {
    return DenseLayer::count(channels, channels / ratio) +
           DenseLayer::count(channels / ratio, channels);
}

std::int64_t LayeredChannelAttention::hidden_width(std::int64_t common_width) {
    return std::max<std::int64_t>(4, (3 * common_width) / 4);
}

LayeredChannelAttention::LayeredChannelAttention(
    const std::string& name, std::array<std::int64_t, 3> channels,
    std::int64_t common_width, std::int64_t dilation1, std::int64_t dilation2,
    std::int64_t se_ratio, std::int64_t spatial_rank, Rng& rng)
    : common_width_(common_width) {
    for (int i = 0; i < 3; ++i) {
        const std::string lvl = name + ".l" + std::to_string(i);
        atrous1_[i] = ConvLayer(lvl + ".k1", channels[i], channels[i], 3, spatial_rank,
                                ConvGeometry{1, dilation1, Padding::Same},
                                Activation::None, rng);
        atrous2_[i] = ConvLayer(lvl + ".k2", channels[i], channels[i], 3, spatial_rank,
                                ConvGeometry{1, dilation2, Padding::Same},
                                Activation::None, rng);
        proj_[i] = ConvLayer(lvl + ".proj", channels[i], common_width, 1, spatial_rank,
                             ConvGeometry{}, Activation::None, rng);
    }
    dense1_ = DenseLayer(name + ".gw1", 3 * common_width, hidden_width(common_width),
                         Activation::Relu, rng);
    dense2_ = DenseLayer(name + ".gw2", hidden_width(common_width), 3,
                         Activation::None, rng);
    for (int i = 0; i < 3; ++i) {
        se_[i] = SEBlock(name + ".se" + std::to_string(i), common_width, se_ratio, rng);
    }
}

std::array<NodePtr, 3> LayeredChannelAttention::layered_attention(
    GradTape& tape, std::array<NodePtr, 3> ms) {
    std::array<NodePtr, 3> as;
    for (int i = 0; i < 3; ++i) {
        as[i] = tape.eltwise_add(atrous1_[i].apply(tape, ms[i]),
                                 atrous2_[i].apply(tape, ms[i]));
    }
    return as;
}

std::array<NodePtr, 3> LayeredChannelAttention::project_resample(
    GradTape& tape, std::array<NodePtr, 3> as) {
    // Finest = largest spatial volume of the three inputs.
    Shape finest = as[0]->value.spatial();
    for (int i = 1; i < 3; ++i) {
        if (as[i]->value.spatial_numel() > shape_numel(finest)) {
            finest = as[i]->value.spatial();
        }
    }
    std::array<NodePtr, 3> rs;
    for (int i = 0; i < 3; ++i) {
        rs[i] = tape.resample(proj_[i].apply(tape, as[i]), finest, ResampleMode::Nearest);
    }
    return rs;
}

NodePtr LayeredChannelAttention::group_weights(GradTape& tape, std::array<NodePtr, 3> as) {
    std::array<NodePtr, 3> rs = project_resample(tape, std::move(as));
    NodePtr pooled = tape.global_avg_pool(
        tape.concat_channels({rs[0], rs[1], rs[2]}));
    return tape.softmax(dense2_.apply(tape, dense1_.apply(tape, pooled)));
}

NodePtr LayeredChannelAttention::attention_fuse(GradTape& tape, std::array<NodePtr, 3> as,
                                                NodePtr g) {
    std::array<NodePtr, 3> rs = project_resample(tape, std::move(as));
    NodePtr out;
    for (int i = 0; i < 3; ++i) {
        NodePtr term = tape.scale_by(se_[i].apply(tape, rs[i]), g, i);
        out = out ? tape.eltwise_add(out, term) : term;
    }
    return out;
}

NodePtr LayeredChannelAttention::apply(GradTape& tape, std::array<NodePtr, 3> ms) {
    std::array<NodePtr, 3> as = layered_attention(tape, std::move(ms));
    // Project and resample once; group weighting and fusion share the maps.
    std::array<NodePtr, 3> rs = project_resample(tape, as);
    NodePtr pooled = tape.global_avg_pool(
        tape.concat_channels({rs[0], rs[1], rs[2]}));
    NodePtr g = tape.softmax(dense2_.apply(tape, dense1_.apply(tape, pooled)));
    NodePtr out;
    for (int i = 0; i < 3; ++i) {
        NodePtr term = tape.scale_by(se_[i].apply(tape, rs[i]), g, i);
        out = out ? tape.eltwise_add(out, term) : term;
    }
    return out;
}

void LayeredChannelAttention::collect(std::vector<Parameter*>& out) {
    for (int i = 0; i < 3; ++i) {
        atrous1_[i].collect(out);
        atrous2_[i].collect(out);
        proj_[i].collect(out);
    }
    dense1_.collect(out);
    dense2_.collect(out);
    for (int i = 0; i < 3; ++i) se_[i].collect(out);
}

std::int64_t LayeredChannelAttention::count(std::array<std::int64_t, 3> channels,
                                            std::int64_t common_width,
                                            std::int64_t se_ratio,
                                            std::int64_t spatial_rank) {
    std::int64_t total = 0;
    for (int i = 0; i < 3; ++i) {
        total += 2 * ConvLayer::count(channels[i], channels[i], 3, spatial_rank);
        total += ConvLayer::count(channels[i], common_width, 1, spatial_rank);
    }
    total += DenseLayer::count(3 * common_width, hidden_width(common_width));
    total += DenseLayer::count(hidden_width(common_width), 3);
    total += 3 * SEBlock::count(common_width, se_ratio);
    return total;
}

}  // namespace slca

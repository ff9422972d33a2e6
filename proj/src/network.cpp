#include <cmath>

#include "slca/network.hpp"

namespace slca {

void NetworkConfig::validate() const {
    if (spatial_rank != 2 && spatial_rank != 3) {
        throw ValueError("spatial_rank must be 2 or 3, got " + std::to_string(spatial_rank));
    }
    if (in_channels < 1) throw ValueError("in_channels must be >= 1");
    if (num_classes < 2) throw ValueError("num_classes must be >= 2");
    if (levels < 2) throw ValueError("levels must be >= 2, got " + std::to_string(levels));
    if (base_width < 1) throw ValueError("base_width must be >= 1");
    if (stacked_depth < 1) throw ValueError("stacked_depth must be >= 1");
    if (dilation1 < 1 || dilation2 < 1) throw ValueError("dilations must be >= 1");
    if (se_ratio < 1) throw ValueError("se_ratio must be >= 1");
    const std::int64_t common = width(levels - 1);
    if (levels >= 3 && common % se_ratio != 0) {
        throw ValueError("se_ratio " + std::to_string(se_ratio) +
                         " must divide the bottleneck width " + std::to_string(common));
    }
}

Network::Network(const NetworkConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const std::int64_t r = cfg_.spatial_rank;

    // Construction order here fixes the parameter enumeration order.
    encoder_.reserve(static_cast<std::size_t>(cfg_.levels));
    for (std::int64_t l = 0; l < cfg_.levels; ++l) {
        const std::int64_t in_ch = l == 0 ? cfg_.in_channels : cfg_.width(l - 1);
        const std::int64_t stride = l == 0 ? 1 : 2;
        encoder_.emplace_back("enc" + std::to_string(l), in_ch, cfg_.width(l), stride, r,
                              cfg_.residual_c1, Activation::Relu, rng);
    }
    skips_.reserve(static_cast<std::size_t>(cfg_.levels - 1));
    for (std::int64_t l = 0; l < cfg_.levels - 1; ++l) {
        skips_.emplace_back("skip" + std::to_string(l), cfg_.width(l), cfg_.stacked_depth,
                            r, rng);
    }
    if (cfg_.levels >= 3) {
        const std::int64_t base = cfg_.levels - 3;
        attention_.emplace("attn",
                           std::array<std::int64_t, 3>{cfg_.width(base), cfg_.width(base + 1),
                                                       cfg_.width(base + 2)},
                           cfg_.width(cfg_.levels - 1), cfg_.dilation1, cfg_.dilation2,
                           cfg_.se_ratio, r, rng);
    }
    decoder_.reserve(static_cast<std::size_t>(cfg_.levels - 1));
    for (std::int64_t l = cfg_.levels - 2; l >= 0; --l) {
        DecoderLevel d;
        d.conv1 = ConvLayer("dec" + std::to_string(l) + ".c1",
                            cfg_.width(l + 1) + cfg_.width(l), cfg_.width(l), 3, r,
                            ConvGeometry{}, Activation::Relu, rng);
        d.conv2 = ConvLayer("dec" + std::to_string(l) + ".c2", cfg_.width(l), cfg_.width(l),
                            3, r, ConvGeometry{}, Activation::Relu, rng);
        decoder_.push_back(std::move(d));
    }
    head_ = ConvLayer("head", cfg_.base_width, cfg_.num_classes, 1, r, ConvGeometry{},
                      Activation::None, rng);
}

void Network::check_input(const Tensor& x) const {
    if (x.rank() != cfg_.spatial_rank + 1 || x.channels() != cfg_.in_channels) {
        throw ShapeError("network input must be [" + std::to_string(cfg_.in_channels) +
                         ", S...] with " + std::to_string(cfg_.spatial_rank) +
                         " spatial axes, got " + shape_to_string(x.shape()));
    }
    const std::int64_t factor = cfg_.downsample_factor();
    for (auto e : x.spatial()) {
        if (e % factor != 0) {
            throw ShapeError("spatial extents of " + shape_to_string(x.shape()) +
                             " must be divisible by " + std::to_string(factor));
        }
    }
}

NodePtr Network::forward(GradTape& tape, NodePtr x) {
    check_input(x->value);

    std::vector<NodePtr> enc_outs;
    enc_outs.reserve(encoder_.size());
    NodePtr cur = std::move(x);
    for (auto& block : encoder_) {
        cur = block.apply(tape, cur);
        enc_outs.push_back(cur);
    }

    NodePtr bottleneck = enc_outs.back();
    if (attention_) {
        const std::size_t base = encoder_.size() - 3;
        NodePtr fused = attention_->apply(
            tape, {enc_outs[base], enc_outs[base + 1], enc_outs[base + 2]});
        fused = tape.resample(fused, bottleneck->value.spatial(), ResampleMode::Nearest);
        bottleneck = tape.eltwise_add(bottleneck, fused);
    }

    cur = bottleneck;
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
        const std::size_t level = decoder_.size() - 1 - i;  // decoder_ runs deep->shallow
        NodePtr skip = skips_[level].apply(tape, enc_outs[level]);
        NodePtr up = tape.resample(cur, skip->value.spatial(), ResampleMode::Nearest);
        cur = tape.concat_channels({up, skip});
        cur = decoder_[i].conv1.apply(tape, cur);
        cur = decoder_[i].conv2.apply(tape, cur);
    }
    return tape.channel_softmax(head_.apply(tape, cur));
}

Tensor Network::forward(const Tensor& x) {
    GradTape tape;
    return forward(tape, tape.constant(x))->value;
}

LabelVolume argmax_labels(const Tensor& probs) {
    const std::int64_t k = probs.channels();
    const std::int64_t sn = probs.spatial_numel();
    LabelVolume out;
    out.spatial = probs.spatial();
    out.values.resize(static_cast<std::size_t>(sn));
    for (std::int64_t s = 0; s < sn; ++s) {
        std::int64_t best = 0;
        double best_p = probs[s];
        for (std::int64_t c = 1; c < k; ++c) {
            if (probs[c * sn + s] > best_p) {  // strict: ties keep the lower index
                best_p = probs[c * sn + s];
                best = c;
            }
        }
        out.values[static_cast<std::size_t>(s)] = static_cast<std::uint8_t>(best);
    }
    return out;
}

LabelVolume Network::segment(const MultiModalVolume& volume) {
    return argmax_labels(forward(normalize(volume).to_tensor()));
}

std::vector<Parameter*> Network::parameters() {
    std::vector<Parameter*> out;
    for (auto& b : encoder_) b.collect(out);
    for (auto& s : skips_) s.collect(out);
    if (attention_) attention_->collect(out);
    for (auto& d : decoder_) {
        d.conv1.collect(out);
        d.conv2.collect(out);
    }
    head_.collect(out);
    return out;
}

std::int64_t Network::parameter_scalars() {
    std::int64_t total = 0;
    for (Parameter* p : parameters()) total += p->value.size();
    return total;
}

Network build(const NetworkConfig& cfg) { return Network(cfg); }

std::int64_t param_count(const NetworkConfig& cfg) {
    cfg.validate();
    const std::int64_t r = cfg.spatial_rank;
    std::int64_t total = 0;
    for (std::int64_t l = 0; l < cfg.levels; ++l) {
        const std::int64_t in_ch = l == 0 ? cfg.in_channels : cfg.width(l - 1);
        total += ResidualDenseBlock::count(in_ch, cfg.width(l), r, cfg.residual_c1);
    }
    for (std::int64_t l = 0; l < cfg.levels - 1; ++l) {
        total += StackedConvolution::count(cfg.width(l), cfg.stacked_depth, r);
    }
    if (cfg.levels >= 3) {
        const std::int64_t base = cfg.levels - 3;
        total += LayeredChannelAttention::count(
            {cfg.width(base), cfg.width(base + 1), cfg.width(base + 2)},
            cfg.width(cfg.levels - 1), cfg.se_ratio, r);
    }
    for (std::int64_t l = 0; l < cfg.levels - 1; ++l) {
        total += ConvLayer::count(cfg.width(l + 1) + cfg.width(l), cfg.width(l), 3, r);
        total += ConvLayer::count(cfg.width(l), cfg.width(l), 3, r);
    }
    total += ConvLayer::count(cfg.base_width, cfg.num_classes, 1, r);
    return total;
}

}  // namespace slca

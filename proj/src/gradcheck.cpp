#include <random>

#include "slca/gradcheck.hpp"

namespace slca {

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = u(rng);
    return t;
}

LabelVolume random_labels(Shape spatial, std::int64_t num_classes, Rng& rng) {
    LabelVolume lv;
    lv.spatial = std::move(spatial);
    lv.values.resize(static_cast<std::size_t>(shape_numel(lv.spatial)));
    for (auto& v : lv.values) v = static_cast<std::uint8_t>(rng() % num_classes);
    return lv;
}

GradCheckReport run_one(const std::string& name, std::vector<Parameter*> params,
                        const std::function<NodePtr(GradTape&)>& build) {
    const GradCheckResult r = grad_check(params, build);
    return {name, r.max_rel_err, r.worst_param};
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(std::uint64_t seed, bool corrupt) {
    std::vector<GradCheckReport> reports;
    Rng rng(seed);

    {
        ConvLayer layer("conv", 2, 3, 3, 2, ConvGeometry{}, Activation::Relu, rng);
        const Tensor x = random_tensor({2, 6, 6}, rng);
        // The corrupt hook drifts a weight between objective evaluations so
        // the finite differences disagree with the analytic gradient.
        auto drift = std::make_shared<int>(0);
        std::vector<Parameter*> params;
        layer.collect(params);
        reports.push_back(run_one("conv_layer", params, [&, drift](GradTape& tape) {
            if (corrupt && (*drift)++ > 0) layer.weight.value[0] += 1e-3;
            return tape.sum(layer.apply(tape, tape.constant(x)));
        }));
    }
    {
        ConvLayer layer("convs", 2, 2, 3, 2, ConvGeometry{2, 2, Padding::Same},
                        Activation::None, rng);
        const Tensor x = random_tensor({2, 7, 7}, rng);
        std::vector<Parameter*> params;
        layer.collect(params);
        reports.push_back(run_one("conv_layer_strided_dilated", params, [&](GradTape& tape) {
            return tape.sum(layer.apply(tape, tape.constant(x)));
        }));
    }
    {
        DenseLayer layer("dense", 5, 4, Activation::Relu, rng);
        const Tensor x = random_tensor({5}, rng);
        std::vector<Parameter*> params;
        layer.collect(params);
        reports.push_back(run_one("dense_layer", params, [&](GradTape& tape) {
            return tape.sum(layer.apply(tape, tape.constant(x)));
        }));
    }
    {
        ResidualDenseBlock block("rdb", 2, 3, 2, 2, true, Activation::Relu, rng);
        const Tensor x = random_tensor({2, 6, 6}, rng);
        std::vector<Parameter*> params;
        block.collect(params);
        reports.push_back(run_one("residual_dense_block", params, [&](GradTape& tape) {
            return tape.sum(block.apply(tape, tape.constant(x)));
        }));
    }
    {
        StackedConvolution block("stack", 3, 2, 2, rng);
        const Tensor x = random_tensor({3, 5, 5}, rng);
        std::vector<Parameter*> params;
        block.collect(params);
        reports.push_back(run_one("stacked_convolution", params, [&](GradTape& tape) {
            return tape.sum(block.apply(tape, tape.constant(x)));
        }));
    }
    {
        SEBlock block("se", 4, 2, rng);
        const Tensor x = random_tensor({4, 5, 5}, rng);
        std::vector<Parameter*> params;
        block.collect(params);
        reports.push_back(run_one("se_block", params, [&](GradTape& tape) {
            return tape.sum(block.apply(tape, tape.constant(x)));
        }));
    }
    {
        LayeredChannelAttention block("attn", {2, 3, 4}, 4, 1, 2, 2, 2, rng);
        const Tensor m0 = random_tensor({2, 8, 8}, rng);
        const Tensor m1 = random_tensor({3, 4, 4}, rng);
        const Tensor m2 = random_tensor({4, 2, 2}, rng);
        std::vector<Parameter*> params;
        block.collect(params);
        reports.push_back(run_one("layered_channel_attention", params, [&](GradTape& tape) {
            return tape.sum(block.apply(
                tape, {tape.constant(m0), tape.constant(m1), tape.constant(m2)}));
        }));
    }
    {
        ConvLayer head("head", 2, 3, 1, 2, ConvGeometry{}, Activation::None, rng);
        const Tensor x = random_tensor({2, 4, 4}, rng);
        const LabelVolume gt = random_labels({4, 4}, 3, rng);
        std::vector<Parameter*> params;
        head.collect(params);
        reports.push_back(run_one("soft_dice_loss", params, [&](GradTape& tape) {
            return tape.soft_dice_loss(
                tape.channel_softmax(head.apply(tape, tape.constant(x))), gt);
        }));
        reports.push_back(run_one("cross_entropy_loss", params, [&](GradTape& tape) {
            return tape.cross_entropy_loss(
                tape.channel_softmax(head.apply(tape, tape.constant(x))), gt);
        }));
    }
    {
        NetworkConfig cfg;
        cfg.spatial_rank = 2;
        cfg.in_channels = 2;
        cfg.num_classes = 3;
        cfg.levels = 3;
        cfg.base_width = 2;
        cfg.stacked_depth = 1;
        cfg.se_ratio = 2;
        cfg.residual_c1 = true;
        cfg.seed = seed;
        Network net(cfg);
        const Tensor x = random_tensor({2, 8, 8}, rng);
        const LabelVolume gt = random_labels({8, 8}, cfg.num_classes, rng);
        reports.push_back(run_one("network_2d_end_to_end", net.parameters(),
                                  [&](GradTape& tape) {
            NodePtr probs = net.forward(tape, tape.constant(x));
            return tape.eltwise_add(tape.soft_dice_loss(probs, gt),
                                    tape.cross_entropy_loss(probs, gt));
        }));
    }
    {
        NetworkConfig cfg;
        cfg.spatial_rank = 3;
        cfg.in_channels = 2;
        cfg.num_classes = 2;
        cfg.levels = 2;
        cfg.base_width = 2;
        cfg.stacked_depth = 1;
        cfg.se_ratio = 1;
        cfg.seed = seed + 1;
        Network net(cfg);
        const Tensor x = random_tensor({2, 4, 4, 4}, rng);
        const LabelVolume gt = random_labels({4, 4, 4}, cfg.num_classes, rng);
        reports.push_back(run_one("network_3d_end_to_end", net.parameters(),
                                  [&](GradTape& tape) {
            NodePtr probs = net.forward(tape, tape.constant(x));
            return tape.eltwise_add(tape.soft_dice_loss(probs, gt),
                                    tape.cross_entropy_loss(probs, gt));
        }));
    }
    return reports;
}

}  // namespace slca

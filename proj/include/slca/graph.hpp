#ifndef SLCA_GRAPH_HPP
#define SLCA_GRAPH_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "slca/tensorcore.hpp"

namespace slca {

// Trainable tensor with a persistent gradient accumulator. backward() adds
// into grad; call zero_grad() between steps.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string name_, Tensor value_)
        : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

    void zero_grad() { grad.fill(0.0); }
};

void zero_grads(std::span<Parameter* const> params);

class GradTape;

struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    // Propagates this->grad into inputs (and the bound parameter, if any).
    std::function<void(Node&)> backprop;
    Parameter* param = nullptr;

    Tensor& ensure_grad() {
        if (grad.size() != value.size()) grad = Tensor(value.shape());
        return grad;
    }
};

using NodePtr = std::shared_ptr<Node>;

// Records the operation graph in construction order (which is already a
// topological order) and replays it in reverse for backward().
class GradTape {
public:
    NodePtr constant(Tensor value);
    NodePtr param(Parameter& p);

    NodePtr conv(NodePtr x, NodePtr weights, NodePtr bias, ConvGeometry geom,
                 Activation act = Activation::None);
    NodePtr global_avg_pool(NodePtr x);
    NodePtr dense(NodePtr v, NodePtr w, NodePtr b, Activation act = Activation::None);
    NodePtr softmax(NodePtr v);
    NodePtr eltwise_add(NodePtr a, NodePtr b);
    NodePtr concat_channels(std::vector<NodePtr> xs);
    NodePtr resample(NodePtr x, Shape target_spatial, ResampleMode mode);
    NodePtr relu(NodePtr x);
    NodePtr sigmoid(NodePtr x);
    // out[j, s...] = gates[j] * x[j, s...]
    NodePtr scale_channels(NodePtr x, NodePtr gates);
    // out = weights[index] * x
    NodePtr scale_by(NodePtr x, NodePtr weights, std::int64_t index);
    // Per-voxel softmax over the channel axis.
    NodePtr channel_softmax(NodePtr x);
    NodePtr sum(NodePtr x);  // scalar node of shape [1]

    // 1 - mean over foreground classes of (2*sum(p*g)+eps)/(sum p + sum g + eps).
    NodePtr soft_dice_loss(NodePtr probs, const LabelVolume& gt, double eps = 1e-5);
    // Mean over voxels of -log(max(p[gt], clamp)).
    NodePtr cross_entropy_loss(NodePtr probs, const LabelVolume& gt,
                               double clamp = 1e-12);

    // Reverse pass from a scalar loss. Node gradients are reset per call;
    // parameter accumulators keep adding until zero_grad().
    void backward(const NodePtr& loss);

    std::size_t node_count() const { return order_.size(); }

private:
    NodePtr record(Node node);
    std::vector<NodePtr> order_;
};

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::int64_t worst_index = -1;
};

// Central finite-difference check of the reverse-mode gradients of a scalar
// builder. Relative error per element: |a - n| / max(1e-8, |a| + |n|).
GradCheckResult grad_check(std::span<Parameter* const> params,
                           const std::function<NodePtr(GradTape&)>& build,
                           double eps = 1e-5);

}  // namespace slca

#endif

#include <algorithm>
#include <cmath>

#include "slca/graph.hpp"

namespace slca {

void zero_grads(std::span<Parameter* const> params) {
    for (Parameter* p : params) p->zero_grad();
}

NodePtr GradTape::record(Node node) {
    auto n = std::make_shared<Node>(std::move(node));
    order_.push_back(n);
    return n;
}

NodePtr GradTape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    return record(std::move(n));
}

NodePtr GradTape::param(Parameter& p) {
    Node n;
    n.value = p.value;
    n.requires_grad = true;
    n.param = &p;
    n.backprop = [](Node& self) {
        Tensor& acc = self.param->grad;
        for (std::int64_t i = 0; i < acc.size(); ++i) acc[i] += self.grad[i];
    };
    return record(std::move(n));
}

namespace {
bool any_requires(const std::vector<NodePtr>& inputs) {
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const NodePtr& n) { return n->requires_grad; });
}

// Scalar node values skip the finite check so that a non-finite loss
// surfaces as a diagnosable value instead of a construction error.
Tensor scalar_tensor(double v) {
    Tensor t({1});
    t[0] = v;
    return t;
}
}  // namespace

NodePtr GradTape::conv(NodePtr x, NodePtr weights, NodePtr bias, ConvGeometry geom,
                       Activation act) {
    ConvParams p(weights->value, bias->value, geom);
    Node n;
    n.value = slca::conv(x->value, p, act);
    n.inputs = {std::move(x), std::move(weights), std::move(bias)};
    n.requires_grad = any_requires(n.inputs);
    n.backprop = [geom, act](Node& self) {
        Node& xn = *self.inputs[0];
        Node& wn = *self.inputs[1];
        Node& bn = *self.inputs[2];
        ConvParams p(wn.value, bn.value, geom);
        conv_backward(xn.value, p, act, self.value, self.grad,
                      xn.requires_grad ? &xn.ensure_grad() : nullptr,
                      wn.requires_grad ? &wn.ensure_grad() : nullptr,
                      bn.requires_grad ? &bn.ensure_grad() : nullptr);
    };
    return record(std::move(n));
}

NodePtr GradTape::global_avg_pool(NodePtr x) {
    Node n;
    n.value = slca::global_avg_pool(x->value);
    n.inputs = {std::move(x)};
    n.requires_grad = any_requires(n.inputs);
    n.backprop = [](Node& self) {
        Node& xn = *self.inputs[0];
        if (!xn.requires_grad) return;
        Tensor& dx = xn.ensure_grad();
        const std::int64_t sn = xn.value.spatial_numel();
        const double inv = 1.0 / static_cast<double>(sn);
        for (std::int64_t c = 0; c < xn.value.channels(); ++c) {
            const double g = self.grad[c] * inv;
            double* d = dx.data() + c * sn;
            for (std::int64_t i = 0; i < sn; ++i) d[i] += g;
        }
    };
    return record(std::move(n));
}

NodePtr GradTape::dense(NodePtr v, NodePtr w, NodePtr b, Activation act) {
    Node n;
    n.value = slca::dense(v->value, w->value, b->value, act);
    n.inputs = {std::move(v), std::move(w), std::move(b)};
    n.requires_grad = any_requires(n.inputs);
    n.backprop = [act](Node& self) {
        Node& vn = *self.inputs[0];
        Node& wn = *self.inputs[1];
        Node& bn = *self.inputs[2];
        const std::int64_t in = vn.value.shape()[0];
        const std::int64_t k = bn.value.shape()[0];
        std::vector<double> g(static_cast<std::size_t>(k));
        for (std::int64_t j = 0; j < k; ++j) {
            g[j] = self.grad[j];
            if (act == Activation::Relu && self.value[j] <= 0.0) g[j] = 0.0;
        }
        if (vn.requires_grad) {
            Tensor& dv = vn.ensure_grad();
            for (std::int64_t i = 0; i < in; ++i) {
                double acc = 0.0;
                for (std::int64_t j = 0; j < k; ++j) acc += wn.value[i * k + j] * g[j];
                dv[i] += acc;
            }
        }
        if (wn.requires_grad) {
            Tensor& dw = wn.ensure_grad();
            for (std::int64_t i = 0; i < in; ++i) {
                for (std::int64_t j = 0; j < k; ++j) dw[i * k + j] += vn.value[i] * g[j];
            }
        }
        if (bn.requires_grad) {
            Tensor& db = bn.ensure_grad();
            for (std::int64_t j = 0; j < k; ++j) db[j] += g[j];
        }
    };
    return record(std::move(n));
}

NodePtr GradTape::softmax(NodePtr v) {
    Node n;
    n.value = slca::softmax(v->value);
    n.inputs = {std::move(v)};
    n.requires_grad = any_requires(n.inputs);
    n.backprop = [](Node& self) {
        Node& vn = *self.inputs[0];
        if (!vn.requires_grad) return;
        Tensor& dv = vn.ensure_grad();
        const std::int64_t k = self.value.size();
        double dot = 0.0;
        for (std::int64_t i = 0; i < k; ++i) dot += self.grad[i] * self.value[i];
        for (std::int64_t i = 0; i < k; ++i)
            dv[i] += self.value[i] * (self.grad[i] - dot);
    };
    return record(std::move(n));
}

NodePtr GradTape::eltwise_add(NodePtr a, NodePtr b) {
    Node n;
    n.value = slca::eltwise_add(a->value, b->value);
    n.inputs = {std::move(a), std::move(b)};
    n.requires_grad = any_requires(n.inputs);
    n.backprop = [](Node& self) {
        for (auto& in : self.inputs) {
            if (!in->requires_grad) continue;
            Tensor& d = in->ensure_grad();
            for (std::int64_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
        }
    };
    return record(std::move(n));
}

NodePtr GradTape::concat_channels(std::vector<NodePtr> xs) {
    std::vector<const Tensor*> vals;
    vals.reserve(xs.size());
    for (const NodePtr& x : xs) vals.push_back(&x->value);
    Node n;
    n.value = slca::concat_channels(std::span<const Tensor* const>(vals));
    n.inputs = std::move(xs);
    n.requires_grad = any_requires(n.inputs);
    n.backprop = [](Node& self) {
        std::int64_t offset = 0;
        for (auto& in : self.inputs) {
            const std::int64_t sz = in->value.size();
            if (in->requires_grad) {
                Tensor& d = in->ensure_grad();
                for (std::int64_t i = 0; i < sz; ++i) d[i] += self.grad[offset + i];
            }
            offset += sz;
        }
    };
    return record(std::move(n));
}

NodePtr GradTape::resample(NodePtr x, Shape target_spatial, ResampleMode mode) {
    Node n;
    n.value = slca::resample(x->value, target_spatial, mode);
    n.inputs = {std::move(x)};
    n.requires_grad = any_requires(n.inputs);
    n.backprop = [mode](Node& self) {
        Node& xn = *self.inputs[0];
        if (!xn.requires_grad) return;
        resample_backward(xn.value.spatial(), self.grad, mode, xn.ensure_grad());
    };
    return record(std::move(n));
}

NodePtr GradTape::relu(NodePtr x) {
    Node n;
    n.value = slca::relu(x->value);
    n.inputs = {std::move(x)};
    n.requires_grad = any_requires(n.inputs);
    n.backprop = [](Node& self) {
        Node& xn = *self.inputs[0];
        if (!xn.requires_grad) return;
        Tensor& d = xn.ensure_grad();
        for (std::int64_t i = 0; i < d.size(); ++i) {
            if (self.value[i] > 0.0) d[i] += self.grad[i];
        }
    };
    return record(std::move(n));
}

NodePtr GradTape::sigmoid(NodePtr x) {
    Node n;
    n.value = slca::sigmoid(x->value);
    n.inputs = {std::move(x)};
    n.requires_grad = any_requires(n.inputs);
    n.backprop = [](Node& self) {
        Node& xn = *self.inputs[0];
        if (!xn.requires_grad) return;
        Tensor& d = xn.ensure_grad();
        for (std::int64_t i = 0; i < d.size(); ++i) {
            const double y = self.value[i];
            d[i] += self.grad[i] * y * (1.0 - y);
        }
    };
    return record(std::move(n));
}

NodePtr GradTape::scale_channels(NodePtr x, NodePtr gates) {
    const std::int64_t k = x->value.channels();
    if (gates->value.rank() != 1 || gates->value.shape()[0] != k) {
        throw ShapeError("scale_channels gates " + shape_to_string(gates->value.shape()) +
                         " do not match channels of " + shape_to_string(x->value.shape()));
    }
    const std::int64_t sn = x->value.spatial_numel();
    Node n;
    n.value = Tensor(x->value.shape());
    for (std::int64_t c = 0; c < k; ++c) {
        const double e = gates->value[c];
        const double* src = x->value.data() + c * sn;
        double* dst = n.value.data() + c * sn;
        for (std::int64_t i = 0; i < sn; ++i) dst[i] = e * src[i];
    }
    n.inputs = {std::move(x), std::move(gates)};
    n.requires_grad = any_requires(n.inputs);
    n.backprop = [k, sn](Node& self) {
        Node& xn = *self.inputs[0];
        Node& gn = *self.inputs[1];
        for (std::int64_t c = 0; c < k; ++c) {
            const double* g = self.grad.data() + c * sn;
            if (xn.requires_grad) {
                double* dx = xn.ensure_grad().data() + c * sn;
                const double e = gn.value[c];
                for (std::int64_t i = 0; i < sn; ++i) dx[i] += e * g[i];
            }
            if (gn.requires_grad) {
                const double* xd = xn.value.data() + c * sn;
                double acc = 0.0;
                for (std::int64_t i = 0; i < sn; ++i) acc += xd[i] * g[i];
                gn.ensure_grad()[c] += acc;
            }
        }
    };
    return record(std::move(n));
}

NodePtr GradTape::scale_by(NodePtr x, NodePtr weights, std::int64_t index) {
    if (weights->value.rank() != 1 || index < 0 || index >= weights->value.size()) {
        throw ShapeError("scale_by: bad weight index " + std::to_string(index) +
                         " for " + shape_to_string(weights->value.shape()));
    }
    Node n;
    n.value = x->value;
    const double wv = weights->value[index];
    for (std::int64_t i = 0; i < n.value.size(); ++i) n.value[i] *= wv;
    n.inputs = {std::move(x), std::move(weights)};
    n.requires_grad = any_requires(n.inputs);
    n.backprop = [index](Node& self) {
        Node& xn = *self.inputs[0];
        Node& wn = *self.inputs[1];
        if (xn.requires_grad) {
            Tensor& dx = xn.ensure_grad();
            const double wv = wn.value[index];
            for (std::int64_t i = 0; i < dx.size(); ++i) dx[i] += wv * self.grad[i];
        }
        if (wn.requires_grad) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < xn.value.size(); ++i)
                acc += xn.value[i] * self.grad[i];
            wn.ensure_grad()[index] += acc;
        }
    };
    return record(std::move(n));
}

NodePtr GradTape::channel_softmax(NodePtr x) {
    const std::int64_t k = x->value.channels();
    const std::int64_t sn = x->value.spatial_numel();
    Node n;
    n.value = Tensor(x->value.shape());
    const double* xd = x->value.data();
    double* yd = n.value.data();
    for (std::int64_t s = 0; s < sn; ++s) {
        double mx = xd[s];
        for (std::int64_t c = 1; c < k; ++c) mx = std::max(mx, xd[c * sn + s]);
        double sum = 0.0;
        for (std::int64_t c = 0; c < k; ++c) {
            const double e = std::exp(xd[c * sn + s] - mx);
            yd[c * sn + s] = e;
            sum += e;
        }
        for (std::int64_t c = 0; c < k; ++c) yd[c * sn + s] /= sum;
    }
    n.inputs = {std::move(x)};
    n.requires_grad = any_requires(n.inputs);
    n.backprop = [k, sn](Node& self) {
        Node& xn = *self.inputs[0];
        if (!xn.requires_grad) return;
        Tensor& dx = xn.ensure_grad();
        for (std::int64_t s = 0; s < sn; ++s) {
            double dot = 0.0;
            for (std::int64_t c = 0; c < k; ++c)
                dot += self.grad[c * sn + s] * self.value[c * sn + s];
            for (std::int64_t c = 0; c < k; ++c) {
                dx[c * sn + s] +=
                    self.value[c * sn + s] * (self.grad[c * sn + s] - dot);
            }
        }
    };
    return record(std::move(n));
}

NodePtr GradTape::sum(NodePtr x) {
    Node n;
    double acc = 0.0;
    for (std::int64_t i = 0; i < x->value.size(); ++i) acc += x->value[i];
    n.value = scalar_tensor(acc);
    n.inputs = {std::move(x)};
    n.requires_grad = any_requires(n.inputs);
    n.backprop = [](Node& self) {
        Node& xn = *self.inputs[0];
        if (!xn.requires_grad) return;
        Tensor& d = xn.ensure_grad();
        const double g = self.grad[0];
        for (std::int64_t i = 0; i < d.size(); ++i) d[i] += g;
    };
    return record(std::move(n));
}

namespace {
void check_probs_vs_labels(const Tensor& probs, const LabelVolume& gt) {
    if (probs.spatial() != gt.spatial) {
        throw ShapeError("probabilities " + shape_to_string(probs.shape()) +
                         " do not cover label grid " + shape_to_string(gt.spatial));
    }
    const auto k = static_cast<std::uint8_t>(probs.channels());
    for (std::size_t i = 0; i < gt.values.size(); ++i) {
        if (gt.values[i] >= k) {
            throw ValueError("label " + std::to_string(gt.values[i]) +
                             " out of range for " + std::to_string(k) + " classes");
        }
    }
}
}  // namespace

NodePtr GradTape::soft_dice_loss(NodePtr probs, const LabelVolume& gt, double eps) {
    check_probs_vs_labels(probs->value, gt);
    const std::int64_t k = probs->value.channels();
    const std::int64_t sn = probs->value.spatial_numel();
    auto labels = std::make_shared<const LabelVolume>(gt);

    const double* pd = probs->value.data();
    std::vector<double> num(static_cast<std::size_t>(k), eps);
    std::vector<double> den(static_cast<std::size_t>(k), eps);
    for (std::int64_t c = 1; c < k; ++c) {
        const double* pc = pd + c * sn;
        double inter = 0.0, psum = 0.0;
        std::int64_t gsum = 0;
        for (std::int64_t s = 0; s < sn; ++s) {
            psum += pc[s];
            if (labels->values[static_cast<std::size_t>(s)] == c) {
                inter += pc[s];
                ++gsum;
            }
        }
        num[static_cast<std::size_t>(c)] += 2.0 * inter;
        den[static_cast<std::size_t>(c)] += psum + static_cast<double>(gsum);
    }
    double mean_ratio = 0.0;
    for (std::int64_t c = 1; c < k; ++c)
        mean_ratio += num[static_cast<std::size_t>(c)] / den[static_cast<std::size_t>(c)];
    const auto fg = static_cast<double>(k - 1);
    mean_ratio /= fg;

    Node n;
    n.value = scalar_tensor(1.0 - mean_ratio);
    n.inputs = {std::move(probs)};
    n.requires_grad = any_requires(n.inputs);
    n.backprop = [labels, num, den, k, sn, fg](Node& self) {
        Node& pn = *self.inputs[0];
        if (!pn.requires_grad) return;
        Tensor& dp = pn.ensure_grad();
        const double g = self.grad[0];
        for (std::int64_t c = 1; c < k; ++c) {
            const double nc = num[static_cast<std::size_t>(c)];
            const double dc = den[static_cast<std::size_t>(c)];
            double* dpc = dp.data() + c * sn;
            for (std::int64_t s = 0; s < sn; ++s) {
                const double gc =
                    labels->values[static_cast<std::size_t>(s)] == c ? 2.0 : 0.0;
                // d/dp of -(1/fg) * nc/dc with nc' = gc, dc' = 1.
                dpc[s] += g * (-(gc * dc - nc) / (dc * dc) / fg);
            }
        }
    };
    return record(std::move(n));
}

NodePtr GradTape::cross_entropy_loss(NodePtr probs, const LabelVolume& gt, double clamp) {
    check_probs_vs_labels(probs->value, gt);
    const std::int64_t sn = probs->value.spatial_numel();
    auto labels = std::make_shared<const LabelVolume>(gt);

    const double* pd = probs->value.data();
    double acc = 0.0;
    for (std::int64_t s = 0; s < sn; ++s) {
        const double p = pd[labels->values[static_cast<std::size_t>(s)] * sn + s];
        acc += -std::log(std::max(p, clamp));
    }
    Node n;
    n.value = scalar_tensor(acc / static_cast<double>(sn));
    n.inputs = {std::move(probs)};
    n.requires_grad = any_requires(n.inputs);
    n.backprop = [labels, sn, clamp](Node& self) {
        Node& pn = *self.inputs[0];
        if (!pn.requires_grad) return;
        Tensor& dp = pn.ensure_grad();
        const double g = self.grad[0] / static_cast<double>(sn);
        for (std::int64_t s = 0; s < sn; ++s) {
            const std::int64_t c = labels->values[static_cast<std::size_t>(s)];
            const double p = pn.value[c * sn + s];
            if (p > clamp) dp[c * sn + s] += -g / p;
        }
    };
    return record(std::move(n));
}

void GradTape::backward(const NodePtr& loss) {
    if (loss->value.size() != 1) {
        throw ShapeError("backward needs a scalar loss, got " +
                         shape_to_string(loss->value.shape()));
    }
    for (auto& n : order_) {
        if (n->grad.size() == n->value.size()) n->grad.fill(0.0);
    }
    loss->ensure_grad()[0] = 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        Node& n = **it;
        if (!n.requires_grad || !n.backprop) continue;
        if (n.grad.size() != n.value.size()) continue;  // not on the loss path
        n.backprop(n);
    }
}

GradCheckResult grad_check(std::span<Parameter* const> params,
                           const std::function<NodePtr(GradTape&)>& build,
                           double eps) {
    zero_grads(params);
    {
        GradTape tape;
        NodePtr loss = build(tape);
        if (loss->value.size() != 1) {
            throw ShapeError("grad_check builder must return a scalar");
        }
        tape.backward(loss);
    }
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (Parameter* p : params) analytic.push_back(p->grad);

    auto eval = [&](const Parameter* which, std::int64_t idx) {
        GradTape tape;
        const double v = build(tape)->value[0];
        if (!std::isfinite(v)) {
            throw ValueError("non-finite value while perturbing parameter '" +
                             which->name + "' at index " + std::to_string(idx));
        }
        return v;
    };

    GradCheckResult res;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter* p = params[pi];
        for (std::int64_t i = 0; i < p->value.size(); ++i) {
            const double orig = p->value[i];
            p->value[i] = orig + eps;
            const double fp = eval(p, i);
            p->value[i] = orig - eps;
            const double fm = eval(p, i);
            p->value[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[pi][i];
            const double rel =
                std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_param = p->name;
                res.worst_index = i;
            }
        }
    }
    return res;
}

}  // namespace slca

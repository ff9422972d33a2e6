#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "slca/train.hpp"

namespace slca {

const char* optimizer_name(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::Sgd: return "sgd";
        case OptimizerKind::SgdMomentum: return "sgd_momentum";
        case OptimizerKind::Adam: return "adam";
    }
    return "?";
}

const char* loss_name(LossKind k) {
    switch (k) {
        case LossKind::Dice: return "dice";
        case LossKind::CrossEntropy: return "cross_entropy";
        case LossKind::DicePlusCe: return "dice_plus_ce";
    }
    return "?";
}

OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "sgd") return OptimizerKind::Sgd;
    if (name == "sgd_momentum") return OptimizerKind::SgdMomentum;
    if (name == "adam") return OptimizerKind::Adam;
    throw ValueError("unknown optimizer '" + name + "' (sgd, sgd_momentum, adam)");
}

LossKind parse_loss(const std::string& name) {
    if (name == "dice") return LossKind::Dice;
    if (name == "cross_entropy") return LossKind::CrossEntropy;
    if (name == "dice_plus_ce") return LossKind::DicePlusCe;
    throw ValueError("unknown loss '" + name + "' (dice, cross_entropy, dice_plus_ce)");
}

void TrainConfig::validate() const {
    if (steps < 0) throw ValueError("steps must be >= 0");
    if (batch_size < 1) throw ValueError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ValueError("learning_rate must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ValueError("momentum must be in [0, 1)");
    if (beta1 < 0.0 || beta1 >= 1.0) throw ValueError("beta1 must be in [0, 1)");
    if (beta2 < 0.0 || beta2 >= 1.0) throw ValueError("beta2 must be in [0, 1)");
    if (!(adam_eps > 0.0)) throw ValueError("adam_eps must be > 0");
    if (checkpoint_interval < 0) throw ValueError("checkpoint_interval must be >= 0");
}

Optimizer::Optimizer(const TrainConfig& cfg, std::vector<Parameter*> params)
    : cfg_(cfg), params_(std::move(params)) {
    for (Parameter* p : params_) scalar_count_ += p->value.size();
    state_.kind = cfg_.optimizer;
    const auto n = static_cast<std::size_t>(scalar_count_);
    if (state_.kind == OptimizerKind::SgdMomentum) state_.velocity.assign(n, 0.0);
    if (state_.kind == OptimizerKind::Adam) {
        state_.m.assign(n, 0.0);
        state_.v.assign(n, 0.0);
    }
}

void Optimizer::set_state(OptimizerState state) {
    const auto n = static_cast<std::size_t>(scalar_count_);
    if (state.kind != cfg_.optimizer) {
        throw ValueError("optimizer state kind does not match the configuration");
    }
    const bool sized_ok =
        (state.kind != OptimizerKind::SgdMomentum || state.velocity.size() == n) &&
        (state.kind != OptimizerKind::Adam || (state.m.size() == n && state.v.size() == n));
    if (!sized_ok) throw ValueError("optimizer state slot count does not match the network");
    state_ = std::move(state);
}

void Optimizer::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

void Optimizer::step() {
    ++state_.t;
    const double lr = cfg_.learning_rate;
    std::size_t slot = 0;
    for (Parameter* p : params_) {
        const std::int64_t n = p->value.size();
        for (std::int64_t i = 0; i < n; ++i, ++slot) {
            const double g = p->grad[i];
            double x = p->value[i];
            switch (state_.kind) {
                case OptimizerKind::Sgd:
                    x -= lr * g;
                    break;
                case OptimizerKind::SgdMomentum: {
                    double& vel = state_.velocity[slot];
                    vel = cfg_.momentum * vel + g;
                    x -= lr * vel;
                    break;
                }
                case OptimizerKind::Adam: {
                    double& m = state_.m[slot];
                    double& v = state_.v[slot];
                    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
                    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
                    const auto t = static_cast<double>(state_.t);
                    const double mhat = m / (1.0 - std::pow(cfg_.beta1, t));
                    const double vhat = v / (1.0 - std::pow(cfg_.beta2, t));
                    x -= lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
                    break;
                }
            }
            // Keep parameters on the f32 grid so f32 checkpoints round-trip
            // bitwise.
            p->value[i] = static_cast<double>(static_cast<float>(x));
        }
    }
}

NodePtr sample_loss(GradTape& tape, Network& net, const TrainSample& sample,
                    LossKind loss) {
    NodePtr probs = net.forward(tape, tape.constant(sample.input));
    switch (loss) {
        case LossKind::Dice:
            return tape.soft_dice_loss(probs, sample.labels);
        case LossKind::CrossEntropy:
            return tape.cross_entropy_loss(probs, sample.labels);
        case LossKind::DicePlusCe:
            return tape.eltwise_add(tape.soft_dice_loss(probs, sample.labels),
                                    tape.cross_entropy_loss(probs, sample.labels));
    }
    throw ValueError("unknown loss kind");
}

double train_step(Network& net, std::span<const TrainSample* const> batch, Optimizer& opt,
                  const TrainConfig& cfg) {
    if (batch.empty()) throw ValueError("train_step needs a nonempty batch");
    opt.zero_grad();
    double loss_sum = 0.0;
    for (const TrainSample* sample : batch) {
        GradTape tape;
        NodePtr loss = sample_loss(tape, net, *sample, cfg.loss);
        const double value = loss->value[0];
        if (!std::isfinite(value)) {
            throw NumericError("non-finite loss " + std::to_string(value) + " after " +
                               std::to_string(opt.step_count()) + " completed updates");
        }
        tape.backward(loss);
        loss_sum += value;
    }
    if (batch.size() > 1) {
        const double inv = 1.0 / static_cast<double>(batch.size());
        for (Parameter* p : net.parameters()) {
            for (std::int64_t i = 0; i < p->grad.size(); ++i) p->grad[i] *= inv;
        }
    }
    opt.step();
    return loss_sum / static_cast<double>(batch.size());
}

double train_step(Network& net, const TrainSample& sample, Optimizer& opt,
                  const TrainConfig& cfg) {
    const TrainSample* one[] = {&sample};
    return train_step(net, one, opt, cfg);
}

void write_history_csv_header(std::ostream& os) {
    os << "step,loss,val_dice_wt,val_dice_tc,val_dice_et\n";
}

void write_history_csv_row(std::ostream& os, const HistoryRow& row) {
    os << row.step << ',' << row.loss << ',';
    if (row.val_dice) {
        os << (*row.val_dice)[0] << ',' << (*row.val_dice)[1] << ',' << (*row.val_dice)[2];
    } else {
        os << ",,";
    }
    os << '\n';
}

namespace {

constexpr char kCkptMagic[6] = {'S', 'L', 'C', 'K', '1', '\0'};
constexpr std::uint32_t kCkptVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    put_u32(os, static_cast<std::uint32_t>(v));
    put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

void put_i64(std::ostream& os, std::int64_t v) { put_u64(os, static_cast<std::uint64_t>(v)); }

void put_f32(std::ostream& os, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(os, v);
}

void put_f64(std::ostream& os, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(os, v);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw CheckpointCorrupt("checkpoint ends early");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& is) {
    const std::uint64_t lo = get_u32(is);
    const std::uint64_t hi = get_u32(is);
    return lo | (hi << 32);
}

std::int64_t get_i64(std::istream& is) { return static_cast<std::int64_t>(get_u64(is)); }

float get_f32(std::istream& is) {
    const std::uint32_t v = get_u32(is);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

double get_f64(std::istream& is) {
    const std::uint64_t v = get_u64(is);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

void write_config(std::ostream& os, const NetworkConfig& c) {
    put_i64(os, c.spatial_rank);
    put_i64(os, c.in_channels);
    put_i64(os, c.num_classes);
    put_i64(os, c.levels);
    put_i64(os, c.base_width);
    put_i64(os, c.stacked_depth);
    put_i64(os, c.dilation1);
    put_i64(os, c.dilation2);
    put_i64(os, c.se_ratio);
    os.put(c.residual_c1 ? 1 : 0);
    put_u64(os, c.seed);
}

NetworkConfig read_config(std::istream& is) {
    NetworkConfig c;
    c.spatial_rank = get_i64(is);
    c.in_channels = get_i64(is);
    c.num_classes = get_i64(is);
    c.levels = get_i64(is);
    c.base_width = get_i64(is);
    c.stacked_depth = get_i64(is);
    c.dilation1 = get_i64(is);
    c.dilation2 = get_i64(is);
    c.se_ratio = get_i64(is);
    const int flag = is.get();
    if (flag == std::char_traits<char>::eof()) throw CheckpointCorrupt("checkpoint ends early");
    c.residual_c1 = flag != 0;
    c.seed = get_u64(is);
    return c;
}

}  // namespace

void save_checkpoint(Network& net, const std::filesystem::path& path,
                     const TrainState* state) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
        os.write(kCkptMagic, sizeof(kCkptMagic));
        put_u32(os, kCkptVersion);
        write_config(os, net.config());
        put_u64(os, state ? state->step : 0);
        const std::string rng = state ? state->rng_state : std::string();
        put_u32(os, static_cast<std::uint32_t>(rng.size()));
        os.write(rng.data(), static_cast<std::streamsize>(rng.size()));
        std::uint64_t count = 0;
        for (Parameter* p : net.parameters()) count += static_cast<std::uint64_t>(p->value.size());
        put_u64(os, count);
        for (Parameter* p : net.parameters()) {
            for (std::int64_t i = 0; i < p->value.size(); ++i) {
                put_f32(os, static_cast<float>(p->value[i]));
            }
        }
        os.put(state ? 1 : 0);
        if (state) {
            put_u32(os, static_cast<std::uint32_t>(state->opt.kind));
            put_u64(os, state->opt.t);
            if (state->opt.kind == OptimizerKind::SgdMomentum) {
                for (double v : state->opt.velocity) put_f64(os, v);
            } else if (state->opt.kind == OptimizerKind::Adam) {
                for (double v : state->opt.m) put_f64(os, v);
                for (double v : state->opt.v) put_f64(os, v);
            }
        }
        if (!os) throw IoError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Network load_checkpoint(const std::filesystem::path& path, TrainState* state) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string() + " for reading");
    char magic[6];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCkptMagic, sizeof(kCkptMagic)) != 0) {
        throw CheckpointCorrupt("bad magic in " + path.string());
    }
    const std::uint32_t version = get_u32(is);
    if (version != kCkptVersion) {
        throw CheckpointVersionMismatch("checkpoint format version " +
                                        std::to_string(version) + ", expected " +
                                        std::to_string(kCkptVersion));
    }
    const NetworkConfig cfg = read_config(is);
    try {
        cfg.validate();
    } catch (const ValueError& e) {
        throw CheckpointCorrupt(std::string("invalid stored config: ") + e.what());
    }
    const std::uint64_t step = get_u64(is);
    const std::uint32_t rng_len = get_u32(is);
    std::string rng(rng_len, '\0');
    is.read(rng.data(), rng_len);
    if (!is) throw CheckpointCorrupt("checkpoint ends early in the RNG state");
    const std::uint64_t count = get_u64(is);
    if (count != static_cast<std::uint64_t>(param_count(cfg))) {
        throw CheckpointConfigMismatch(
            "checkpoint holds " + std::to_string(count) + " scalars but its config needs " +
            std::to_string(param_count(cfg)));
    }

    Network net(cfg);
    for (Parameter* p : net.parameters()) {
        for (std::int64_t i = 0; i < p->value.size(); ++i) {
            p->value[i] = static_cast<double>(get_f32(is));
        }
    }

    OptimizerState opt;
    const int has_opt = is.get();
    if (has_opt == std::char_traits<char>::eof()) {
        throw CheckpointCorrupt("checkpoint ends early before the optimizer flag");
    }
    if (has_opt) {
        const std::uint32_t kind = get_u32(is);
        if (kind > 2) throw CheckpointCorrupt("unknown optimizer code " + std::to_string(kind));
        opt.kind = static_cast<OptimizerKind>(kind);
        opt.t = get_u64(is);
        const auto n = static_cast<std::size_t>(count);
        if (opt.kind == OptimizerKind::SgdMomentum) {
            opt.velocity.resize(n);
            for (double& v : opt.velocity) v = get_f64(is);
        } else if (opt.kind == OptimizerKind::Adam) {
            opt.m.resize(n);
            opt.v.resize(n);
            for (double& v : opt.m) v = get_f64(is);
            for (double& v : opt.v) v = get_f64(is);
        }
    }
    is.peek();
    if (!is.eof()) throw CheckpointCorrupt(path.string() + " has trailing bytes");

    if (state) {
        state->step = step;
        state->rng_state = std::move(rng);
        state->opt = std::move(opt);
    }
    return net;
}

FitResult fit(Network& net, std::span<const TrainSample> data, const TrainConfig& cfg,
              const StepCallback& callback) {
    cfg.validate();
    if (data.empty()) throw ValueError("fit needs a nonempty dataset");

    Optimizer opt(cfg, net.parameters());
    Rng rng(cfg.seed);
    std::uint64_t start_step = 0;

    if (!cfg.resume_from.empty()) {
        TrainState st;
        Network loaded = load_checkpoint(cfg.resume_from, &st);
        if (!(loaded.config() == net.config())) {
            throw CheckpointConfigMismatch("resume checkpoint was trained with a different "
                                           "network configuration");
        }
        std::vector<Parameter*> dst = net.parameters();
        std::vector<Parameter*> src = loaded.parameters();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
        opt.set_state(st.opt);
        if (!st.rng_state.empty()) {
            std::istringstream in(st.rng_state);
            in >> rng;
            if (in.fail()) throw CheckpointCorrupt("unreadable RNG state in resume checkpoint");
        }
        start_step = st.step;
    }

    auto make_state = [&](std::uint64_t step) {
        TrainState st;
        st.step = step;
        std::ostringstream out;
        out << rng;
        st.rng_state = out.str();
        st.opt = opt.state();
        return st;
    };

    FitResult result;
    const std::size_t n = data.size();
    std::vector<const TrainSample*> batch(static_cast<std::size_t>(cfg.batch_size));
    std::uint64_t step = start_step;
    for (std::int64_t s = static_cast<std::int64_t>(start_step); s < cfg.steps; ++s) {
        for (auto& slot : batch) slot = &data[static_cast<std::size_t>(rng() % n)];
        double loss;
        try {
            loss = train_step(net, batch, opt, cfg);
        } catch (const NumericError& e) {
            throw NumericError("step " + std::to_string(s + 1) + ": " + e.what());
        }
        step = static_cast<std::uint64_t>(s + 1);
        result.history.push_back({static_cast<std::int64_t>(step), loss, std::nullopt});
        if (!cfg.checkpoint_path.empty() && cfg.checkpoint_interval > 0 &&
            static_cast<std::int64_t>(step) % cfg.checkpoint_interval == 0) {
            const TrainState st = make_state(step);
            save_checkpoint(net, cfg.checkpoint_path, &st);
        }
        if (callback && callback(static_cast<std::int64_t>(step), loss)) {
            result.stopped_early = true;
            break;
        }
    }
    result.final_step = step;
    if (!cfg.checkpoint_path.empty()) {
        const TrainState st = make_state(step);
        save_checkpoint(net, cfg.checkpoint_path, &st);
    }
    return result;
}

}  // namespace slca

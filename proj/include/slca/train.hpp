#ifndef SLCA_TRAIN_HPP
#define SLCA_TRAIN_HPP

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>

#include "slca/network.hpp"

namespace slca {

// Thrown when training produces a non-finite loss; maps to a distinct CLI
// exit code.
struct NumericError : ValueError {
    using ValueError::ValueError;
};

// Checkpoint file errors, one class per failure category.
struct CheckpointCorrupt : ValueError {
    using ValueError::ValueError;
};
struct CheckpointVersionMismatch : ValueError {
    using ValueError::ValueError;
};
struct CheckpointConfigMismatch : ValueError {
    using ValueError::ValueError;
};

enum class OptimizerKind { Sgd = 0, SgdMomentum = 1, Adam = 2 };
enum class LossKind { Dice = 0, CrossEntropy = 1, DicePlusCe = 2 };

const char* optimizer_name(OptimizerKind k);
const char* loss_name(LossKind k);
// Throws ValueError on an unknown name.
OptimizerKind parse_optimizer(const std::string& name);
LossKind parse_loss(const std::string& name);

struct TrainConfig {
    std::int64_t steps = 500;
    std::int64_t batch_size = 1;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::Adam;
    LossKind loss = LossKind::DicePlusCe;
    double momentum = 0.9;   // sgd_momentum only
    double beta1 = 0.9;      // adam only
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    bool deterministic = true;  // serializes all reductions (always true here)
    std::filesystem::path checkpoint_path;  // empty: no checkpoints written
    std::int64_t checkpoint_interval = 0;   // 0: only at completion
    std::filesystem::path resume_from;      // empty: start fresh

    void validate() const;  // throws ValueError with the offending field
};

// Optimizer slot state; serialized into training checkpoints so a resumed
// run continues bit for bit.
struct OptimizerState {
    OptimizerKind kind = OptimizerKind::Sgd;
    std::uint64_t t = 0;          // adam update counter (bias correction)
    std::vector<double> velocity;  // sgd_momentum, one slot per scalar
    std::vector<double> m, v;      // adam moments, one slot each per scalar
};

// Applies accumulated parameter gradients. Updated values are rounded
// through f32 so that f32 checkpoints reproduce them exactly.
class Optimizer {
public:
    Optimizer(const TrainConfig& cfg, std::vector<Parameter*> params);

    void step();       // one update from the current grads; does not zero them
    void zero_grad();

    std::uint64_t step_count() const { return state_.t; }
    const OptimizerState& state() const { return state_; }
    // Restores serialized state; slot counts must match. Throws ValueError.
    void set_state(OptimizerState state);

private:
    TrainConfig cfg_;
    std::vector<Parameter*> params_;
    OptimizerState state_;
    std::int64_t scalar_count_ = 0;
};

// One training example: a normalized input tensor and its label volume.
struct TrainSample {
    Tensor input;
    LabelVolume labels;
};

// Builds the configured loss over the network output for one sample.
NodePtr sample_loss(GradTape& tape, Network& net, const TrainSample& sample,
                    LossKind loss);

// One forward/backward/update over the batch; returns the mean loss.
// Throws NumericError (with the optimizer's step count) on non-finite loss.
double train_step(Network& net, std::span<const TrainSample* const> batch,
                  Optimizer& opt, const TrainConfig& cfg);
double train_step(Network& net, const TrainSample& sample, Optimizer& opt,
                  const TrainConfig& cfg);

struct HistoryRow {
    std::int64_t step = 0;
    double loss = 0.0;
    std::optional<std::array<double, 3>> val_dice;  // WT, TC, ET when evaluated
};

// CSV schema: step, loss, val_dice_wt, val_dice_tc, val_dice_et (Dice
// columns blank when not evaluated).
void write_history_csv_header(std::ostream& os);
void write_history_csv_row(std::ostream& os, const HistoryRow& row);

struct FitResult {
    std::vector<HistoryRow> history;
    std::uint64_t final_step = 0;
    bool stopped_early = false;  // the callback requested a stop
};

// Invoked after every step; return true to stop training at that step.
using StepCallback = std::function<bool(std::int64_t step, double loss)>;

// Runs cfg.steps training steps with batches drawn seeded-uniformly from the
// dataset. Writes a training checkpoint (parameters + optimizer + RNG state)
// to cfg.checkpoint_path every cfg.checkpoint_interval steps and at the end;
// with cfg.resume_from set, restores that checkpoint first and continues
// from its step counter, reproducing an uninterrupted run bit for bit.
FitResult fit(Network& net, std::span<const TrainSample> data, const TrainConfig& cfg,
              const StepCallback& callback = {});

// Serialized training progress stored alongside the parameters.
struct TrainState {
    std::uint64_t step = 0;
    std::string rng_state;  // textual mt19937_64 stream serialization
    OptimizerState opt;
};

// Checkpoint: little-endian; magic "SLCK1\0"; u32 format version; the
// NetworkConfig fields; u64 step counter; RNG state; parameters as f32 in
// the network's documented enumeration order; optimizer slots as f64.
// Writes to a temp file and renames on success (no partial outputs).
void save_checkpoint(Network& net, const std::filesystem::path& path,
                     const TrainState* state = nullptr);
// Rebuilds the network from the stored config and parameters. Fills *state
// when requested (optimizer slots default-sized when the file has none).
Network load_checkpoint(const std::filesystem::path& path, TrainState* state = nullptr);

}  // namespace slca

#endif

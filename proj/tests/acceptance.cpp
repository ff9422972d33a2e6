// Acceptance gate: one pass/fail line per release criterion, with pinned
// tolerances. Exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "slca/gradcheck.hpp"
#include "slca/metrics.hpp"
#include "slca/train.hpp"

using namespace slca;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool report(const char* name, bool pass, const std::string& detail, double secs) {
    std::printf("%s  %-28s %s  (%.1f s)\n", pass ? "PASS" : "FAIL", name, detail.c_str(),
                secs);
    std::fflush(stdout);
    return pass;
}

std::string fmt(const char* f, double a, double b = 0.0) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), f, a, b);
    return buf;
}

// ---- criterion 1: kernel oracle equivalence (tolerance 1e-10) ---------------

bool kernel_oracles() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(1001);
    double worst = 0.0;
    int cases = 0;

    auto note = [&](double err) { worst = std::max(worst, err); };
    auto max_abs_diff = [](const Tensor& a, const Tensor& b) {
        double m = 0.0;
        for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
        return m;
    };

    while (cases < 220) {
        const auto rank = static_cast<std::int64_t>(1 + rng() % 3);
        const std::int64_t m = (rng() % 2) ? 1 : 3;
        const auto stride = static_cast<std::int64_t>(1 + rng() % 2);
        const auto dilation = static_cast<std::int64_t>(1 + rng() % 2);
        const bool same = (rng() % 2) == 0;
        const std::int64_t span = (m - 1) * dilation + 1;
        Shape in_shape{static_cast<std::int64_t>(1 + rng() % 3)};
        bool feasible = true;
        for (std::int64_t a = 0; a < rank; ++a) {
            const auto s = static_cast<std::int64_t>(1 + rng() % 6);  // extent <= 6
            if (!same && s < span) feasible = false;
            in_shape.push_back(s);
        }
        if (!feasible) continue;
        ++cases;

        const std::int64_t c_in = in_shape[0];
        const auto k = static_cast<std::int64_t>(1 + rng() % 3);
        const Tensor x = oracles::random_tensor(in_shape, rng);
        Shape kshape{k, c_in};
        for (std::int64_t a = 0; a < rank; ++a) kshape.push_back(m);
        const Tensor kernels = oracles::random_tensor(kshape, rng);
        const Tensor bias = oracles::random_tensor({k}, rng);

        ConvGeometry geom{stride, dilation, same ? Padding::Same : Padding::Valid};
        const Tensor got = conv(x, ConvParams(kernels, bias, geom));
        std::vector<double> bias_vec(bias.data(), bias.data() + k);
        const Tensor want =
            oracles::conv(x, kernels, bias_vec, stride, dilation, same, false);
        if (got.shape() != want.shape()) return false;
        note(max_abs_diff(got, want));

        // GAP
        const Tensor pooled = global_avg_pool(x);
        const std::vector<double> pooled_want = oracles::global_avg_pool(x);
        for (std::int64_t c = 0; c < c_in; ++c) note(std::abs(pooled[c] - pooled_want[c]));

        // dense on the pooled vector
        const auto dk = static_cast<std::int64_t>(1 + rng() % 4);
        const Tensor w = oracles::random_tensor({c_in, dk}, rng);
        const Tensor b = oracles::random_tensor({dk}, rng);
        const Tensor dgot = dense(pooled, w, b);
        const std::vector<double> dwant = oracles::dense(
            {pooled.data(), pooled.data() + c_in}, {w.data(), w.data() + w.size()},
            {b.data(), b.data() + dk}, false);
        for (std::int64_t j = 0; j < dk; ++j) note(std::abs(dgot[j] - dwant[j]));

        // add and concat
        const Tensor y = oracles::random_tensor(in_shape, rng);
        note(max_abs_diff(eltwise_add(x, y), oracles::add(x, y)));
        Shape y2_shape = in_shape;
        y2_shape[0] = static_cast<std::int64_t>(1 + rng() % 3);
        const Tensor y2 = oracles::random_tensor(y2_shape, rng);
        note(max_abs_diff(concat_channels(std::vector<Tensor>{x, y2}),
                          oracles::concat({x, y2})));
    }
    const double secs = seconds_since(t0);
    return report("kernel_oracles",
                  worst < 1e-10 && secs < 120.0,
                  fmt("220 shape cases, max abs err %.2e < 1e-10", worst), secs);
}

// ---- criterion 2: finite-difference gradient suite (threshold 1e-4) ---------

bool gradient_suite() {
    const auto t0 = Clock::now();
    const auto reports = run_gradcheck_suite(2024);
    double worst = 0.0;
    std::string worst_name = "-";
    for (const auto& r : reports) {
        if (r.max_rel_err > worst) {
            worst = r.max_rel_err;
            worst_name = r.component;
        }
    }
    const double secs = seconds_since(t0);
    return report("gradient_suite", worst < 1e-4 && secs < 300.0,
                  std::to_string(reports.size()) +
                      fmt(" components, max rel err %.2e < 1e-4 (", worst) + worst_name +
                      ")",
                  secs);
}

// ---- criterion 3: shape / normalization contract -----------------------------

bool shape_contract() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(3003);
    double worst_prob = 0.0;

    for (std::int64_t rank : {2, 3}) {
        for (std::int64_t levels : {2, 3}) {
            NetworkConfig cfg;
            cfg.spatial_rank = rank;
            cfg.levels = levels;
            cfg.base_width = 2;
            cfg.stacked_depth = 1;
            cfg.se_ratio = 2;
            cfg.seed = 7;
            Network net(cfg);
            Shape shape{4};
            for (std::int64_t a = 0; a < rank; ++a) shape.push_back(rank == 3 ? 8 : 16);
            const Tensor y = net.forward(oracles::random_tensor(shape, rng));
            if (y.shape() != shape) return report("shape_contract", false,
                                                  "output shape mismatch",
                                                  seconds_since(t0));
            const std::int64_t sn = y.spatial_numel();
            for (std::int64_t s = 0; s < sn; ++s) {
                double sum = 0.0;
                for (std::int64_t c = 0; c < 4; ++c) sum += y[c * sn + s];
                worst_prob = std::max(worst_prob, std::abs(sum - 1.0));
            }
        }
    }

    // Group weights over 100 random draws of the attention module inputs.
    Rng init(11);
    LayeredChannelAttention attn("attn", {2, 3, 4}, 4, 1, 2, 2, 2, init);
    double worst_group = 0.0;
    for (int draw = 0; draw < 100; ++draw) {
        GradTape tape;
        std::array<NodePtr, 3> ms{tape.constant(oracles::random_tensor({2, 8, 8}, rng)),
                                  tape.constant(oracles::random_tensor({3, 4, 4}, rng)),
                                  tape.constant(oracles::random_tensor({4, 2, 2}, rng))};
        NodePtr g = attn.group_weights(tape, attn.layered_attention(tape, ms));
        double sum = 0.0;
        for (std::int64_t i = 0; i < g->value.size(); ++i) sum += g->value[i];
        worst_group = std::max(worst_group, std::abs(sum - 1.0));
    }

    const double secs = seconds_since(t0);
    return report("shape_contract", worst_prob < 1e-6 && worst_group < 1e-12,
                  fmt("prob sum err %.2e < 1e-6, group sum err %.2e < 1e-12", worst_prob,
                      worst_group),
                  secs);
}

// ---- criterion 4: metrics vs brute-force oracles ------------------------------

bool metrics_oracles() {
    const auto t0 = Clock::now();
    double worst_dist = 0.0;
    for (std::uint64_t seed = 0; seed < 110; ++seed) {
        std::mt19937_64 rng(seed);
        Shape spatial;
        for (int a = 0; a < 3; ++a)
            spatial.push_back(static_cast<std::int64_t>(1 + rng() % 8));  // <= 8^3
        const auto n = static_cast<std::size_t>(shape_numel(spatial));
        LabelVolume pred, gt;
        pred.spatial = gt.spatial = spatial;
        pred.values.resize(n);
        gt.values.resize(n);
        for (auto& v : pred.values) v = static_cast<std::uint8_t>(rng() % 4);
        for (auto& v : gt.values) v = static_cast<std::uint8_t>(rng() % 4);

        const MetricsReport rep = evaluate(pred, gt);
        const RegionMasks pm = region_masks(pred), gm = region_masks(gt);
        for (int r = 0; r < 3; ++r) {
            const auto region = static_cast<Region>(r);
            const auto& p = pm[region];
            const auto& g = gm[region];
            const oracles::Counts c = oracles::confusion(p, g);
            const ConfusionCounts got = confusion(p, g);
            if (got.tp != c.tp || got.fp != c.fp || got.fn != c.fn || got.tn != c.tn) {
                return report("metrics_oracles", false, "confusion counts differ",
                              seconds_since(t0));
            }
            if (rep[region].dice != oracles::dice(p, g)) {
                return report("metrics_oracles", false, "dice differs", seconds_since(t0));
            }
            const auto ps = oracles::surface3(p, spatial[0], spatial[1], spatial[2]);
            const auto gs = oracles::surface3(g, spatial[0], spatial[1], spatial[2]);
            if (ps.empty() || gs.empty()) {
                if (rep[region].hd95.has_value()) {
                    return report("metrics_oracles", false, "hd95 defined on empty surface",
                                  seconds_since(t0));
                }
            } else {
                const double want = oracles::hausdorff_percentile(gs, ps, 95.0);
                worst_dist = std::max(worst_dist, std::abs(*rep[region].hd95 - want));
            }
        }

        // Self evaluation: Dice 1.0 and HD95 0.0 wherever defined.
        const MetricsReport self = evaluate(gt, gt);
        for (int r = 0; r < 3; ++r) {
            const auto region = static_cast<Region>(r);
            if (self[region].dice != 1.0) {
                return report("metrics_oracles", false, "self dice != 1", seconds_since(t0));
            }
            if (self[region].hd95 && *self[region].hd95 != 0.0) {
                return report("metrics_oracles", false, "self hd95 != 0", seconds_since(t0));
            }
        }
    }
    const double secs = seconds_since(t0);
    return report("metrics_oracles", worst_dist < 1e-9,
                  fmt("110 seeds, counts exact, max dist err %.2e < 1e-9", worst_dist),
                  secs);
}

// ---- criteria 5-6 helpers -----------------------------------------------------

NetworkConfig desk_config(std::uint64_t seed) {
    NetworkConfig cfg;
    cfg.spatial_rank = 3;
    cfg.levels = 3;
    cfg.base_width = 8;
    cfg.seed = seed;
    return cfg;
}

TrainSample make_sample(const MultiModalVolume& vol, const LabelVolume& lbl) {
    return TrainSample{normalize(vol).to_tensor(), lbl};
}

std::array<double, 3> region_dice(Network& net, const MultiModalVolume& vol,
                                  const LabelVolume& gt) {
    const MetricsReport rep = evaluate(net.segment(vol), gt);
    return {rep[Region::WT].dice, rep[Region::TC].dice, rep[Region::ET].dice};
}

// ---- criterion 5: learning capability -----------------------------------------

bool learning_capability() {
    const auto t0 = Clock::now();
    PhantomSpec spec;
    spec.seed = 4242;  // one 32^3 phantom
    auto [vol, lbl] = generate_phantom(spec);
    const std::vector<TrainSample> data{make_sample(vol, lbl)};

    Network net(desk_config(1));
    TrainConfig cfg;
    cfg.steps = 500;
    cfg.seed = 1;
    std::array<double, 3> dice{0.0, 0.0, 0.0};
    std::int64_t used_steps = 0;
    fit(net, data, cfg, [&](std::int64_t step, double) {
        used_steps = step;
        if (step % 10 != 0) return false;
        dice = region_dice(net, vol, lbl);
        return dice[0] >= 0.90 && dice[2] >= 0.80;
    });
    if (dice[0] < 0.90 || dice[2] < 0.80) dice = region_dice(net, vol, lbl);
    const bool overfit_ok = dice[0] >= 0.90 && dice[2] >= 0.80 && used_steps <= 500;

    // Loss decreases over the first 10 steps for at least 9 of 10 seeds.
    int decreased = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Network n(desk_config(seed));
        TrainConfig c;
        c.steps = 10;
        c.seed = seed;
        const FitResult r = fit(n, data, c);
        if (r.history.back().loss < r.history.front().loss) ++decreased;
    }

    const double secs = seconds_since(t0);
    return report("learning_capability",
                  overfit_ok && decreased >= 9 && secs < 600.0,
                  fmt("WT dice %.3f >= 0.90, ET dice %.3f >= 0.80", dice[0], dice[2]) +
                      fmt(" in %.0f steps; loss fell in %.0f/10 seeds",
                          static_cast<double>(used_steps), static_cast<double>(decreased)),
                  secs);
}

// ---- criterion 6: generalization smoke test ------------------------------------

bool generalization() {
    const auto t0 = Clock::now();
    std::vector<TrainSample> train_data;
    std::vector<MultiModalVolume> held_vols;
    std::vector<LabelVolume> held_lbls;
    for (std::uint64_t i = 0; i < 12; ++i) {
        PhantomSpec spec;
        spec.seed = 9000 + i;
        auto [vol, lbl] = generate_phantom(spec);
        if (i < 8) {
            train_data.push_back(make_sample(vol, lbl));
        } else {
            held_vols.push_back(std::move(vol));
            held_lbls.push_back(std::move(lbl));
        }
    }

    Network net(desk_config(3));
    TrainConfig cfg;
    cfg.steps = 400;
    cfg.seed = 3;
    double mean_wt = 0.0;
    auto eval_heldout = [&] {
        double sum = 0.0;
        for (std::size_t i = 0; i < held_vols.size(); ++i) {
            sum += region_dice(net, held_vols[i], held_lbls[i])[0];
        }
        return sum / static_cast<double>(held_vols.size());
    };
    fit(net, train_data, cfg, [&](std::int64_t step, double) {
        if (step % 25 != 0) return false;
        mean_wt = eval_heldout();
        return mean_wt >= 0.82;
    });
    if (mean_wt < 0.82) mean_wt = eval_heldout();

    const double secs = seconds_since(t0);
    return report("generalization", mean_wt >= 0.80 && secs < 900.0,
                  fmt("8 train / 4 held-out phantoms, mean WT dice %.3f >= 0.80", mean_wt),
                  secs);
}

// ---- criterion 7: determinism and serialization --------------------------------

bool determinism_serialization() {
    const auto t0 = Clock::now();
    const fs::path dir = fs::temp_directory_path() / "slca_acceptance";
    fs::create_directories(dir);

    NetworkConfig net_cfg;
    net_cfg.spatial_rank = 2;
    net_cfg.levels = 2;
    net_cfg.base_width = 2;
    net_cfg.stacked_depth = 1;
    net_cfg.se_ratio = 2;
    net_cfg.seed = 13;

    PhantomSpec spec;
    spec.seed = 77;
    spec.extent = 16;
    spec.spatial_rank = 2;
    spec.radius_min = 3.0;
    spec.radius_max = 5.0;
    auto [vol, lbl] = generate_phantom(spec);
    const std::vector<TrainSample> data{make_sample(vol, lbl)};

    auto read_bytes = [](const fs::path& p) {
        std::ifstream is(p, std::ios::binary);
        return std::vector<char>{std::istreambuf_iterator<char>(is),
                                 std::istreambuf_iterator<char>()};
    };

    // Same config + seed twice: bitwise-identical checkpoints.
    for (int run = 0; run < 2; ++run) {
        Network net(net_cfg);
        TrainConfig cfg;
        cfg.steps = 3;
        cfg.seed = 5;
        cfg.checkpoint_path = dir / ("det_" + std::to_string(run) + ".ckpt");
        fit(net, data, cfg);
    }
    const bool ckpt_identical =
        read_bytes(dir / "det_0.ckpt") == read_bytes(dir / "det_1.ckpt") &&
        !read_bytes(dir / "det_0.ckpt").empty();

    // Checkpoint round trip reproduces forward outputs bitwise.
    Network trained = load_checkpoint(dir / "det_0.ckpt");
    save_checkpoint(trained, dir / "roundtrip.ckpt");
    Network back = load_checkpoint(dir / "roundtrip.ckpt");
    std::mt19937_64 rng(9);
    const Tensor x = oracles::random_tensor({4, 8, 8}, rng);
    const Tensor ya = trained.forward(x);
    const Tensor yb = back.forward(x);
    bool forward_bitwise = ya.shape() == yb.shape();
    for (std::int64_t i = 0; forward_bitwise && i < ya.size(); ++i) {
        forward_bitwise = ya[i] == yb[i];
    }

    // SVOL round trip is bit-exact.
    write_svol(dir / "vol.img.svol", vol);
    write_svol(dir / "vol.lbl.svol", lbl, vol.spacing);
    write_svol(dir / "vol2.img.svol", read_svol_volume(dir / "vol.img.svol"));
    write_svol(dir / "vol2.lbl.svol", read_svol_labels(dir / "vol.lbl.svol"), vol.spacing);
    const bool svol_bitexact =
        read_bytes(dir / "vol.img.svol") == read_bytes(dir / "vol2.img.svol") &&
        read_bytes(dir / "vol.lbl.svol") == read_bytes(dir / "vol2.lbl.svol");

    fs::remove_all(dir);
    const double secs = seconds_since(t0);
    return report("determinism_serialization",
                  ckpt_identical && forward_bitwise && svol_bitexact,
                  std::string("checkpoints ") + (ckpt_identical ? "identical" : "DIFFER") +
                      ", forward " + (forward_bitwise ? "bitwise" : "DIFFERS") + ", svol " +
                      (svol_bitexact ? "bit-exact" : "DIFFERS"),
                  secs);
}

// ---- criterion 8: split arithmetic ---------------------------------------------

bool split_arithmetic() {
    const auto t0 = Clock::now();
    std::vector<std::string> ids;
    for (int i = 0; i < 285; ++i) ids.push_back("case_" + std::to_string(i));
    const SplitResult r = split(ids, {0.6, 0.2, 0.2}, 2024);
    const bool pass = r.train.size() == 171 && r.val.size() == 57 && r.test.size() == 57;
    return report("split_arithmetic", pass,
                  fmt("285 at 60/20/20 -> %.0f/", static_cast<double>(r.train.size())) +
                      std::to_string(r.val.size()) + "/" + std::to_string(r.test.size()) +
                      " (expected 171/57/57)",
                  seconds_since(t0));
}

}  // namespace

int main() {
    bool ok = true;
    ok &= kernel_oracles();
    ok &= gradient_suite();
    ok &= shape_contract();
    ok &= metrics_oracles();
    ok &= learning_capability();
    ok &= generalization();
    ok &= determinism_serialization();
    ok &= split_arithmetic();
    std::printf("%s\n", ok ? "ACCEPTANCE: ALL CRITERIA PASSED"
                           : "ACCEPTANCE: FAILURES DETECTED");
    return ok ? 0 : 1;
}

// slcaunet: command-line front end for phantom generation, training,
// segmentation, evaluation, and gradient checking.
//
// Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 numeric failure,
// 5 verification failure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "slca/gradcheck.hpp"
#include "slca/metrics.hpp"
#include "slca/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Verification failures (internal consistency checks) map to exit code 5.
struct VerifyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitVerify = 5;

// ---- configuration -------------------------------------------------------

struct RunConfig {
    slca::NetworkConfig network;
    slca::TrainConfig train;
    slca::PhantomSpec phantom;
};

void reject_unknown(const json& obj, const std::set<std::string>& known,
                    const std::string& where) {
    for (const auto& [key, _] : obj.items()) {
        if (!known.count(key)) {
            throw slca::ValueError("unknown config key '" + key + "' in " + where);
        }
    }
}

void parse_network(const json& j, slca::NetworkConfig& c) {
    reject_unknown(j,
                   {"spatial_rank", "in_channels", "num_classes", "levels", "base_width",
                    "stacked_depth", "dilation1", "dilation2", "se_ratio", "residual_c1",
                    "seed"},
                   "network");
    if (j.contains("spatial_rank")) c.spatial_rank = j["spatial_rank"].get<std::int64_t>();
    if (j.contains("in_channels")) c.in_channels = j["in_channels"].get<std::int64_t>();
    if (j.contains("num_classes")) c.num_classes = j["num_classes"].get<std::int64_t>();
    if (j.contains("levels")) c.levels = j["levels"].get<std::int64_t>();
    if (j.contains("base_width")) c.base_width = j["base_width"].get<std::int64_t>();
    if (j.contains("stacked_depth")) c.stacked_depth = j["stacked_depth"].get<std::int64_t>();
    if (j.contains("dilation1")) c.dilation1 = j["dilation1"].get<std::int64_t>();
    if (j.contains("dilation2")) c.dilation2 = j["dilation2"].get<std::int64_t>();
    if (j.contains("se_ratio")) c.se_ratio = j["se_ratio"].get<std::int64_t>();
    if (j.contains("residual_c1")) c.residual_c1 = j["residual_c1"].get<bool>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
}

void parse_train(const json& j, slca::TrainConfig& c) {
    reject_unknown(j,
                   {"steps", "batch_size", "learning_rate", "optimizer", "loss", "momentum",
                    "beta1", "beta2", "adam_eps", "seed", "deterministic",
                    "checkpoint_interval"},
                   "train");
    if (j.contains("steps")) c.steps = j["steps"].get<std::int64_t>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::int64_t>();
    if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("optimizer"))
        c.optimizer = slca::parse_optimizer(j["optimizer"].get<std::string>());
    if (j.contains("loss")) c.loss = slca::parse_loss(j["loss"].get<std::string>());
    if (j.contains("momentum")) c.momentum = j["momentum"].get<double>();
    if (j.contains("beta1")) c.beta1 = j["beta1"].get<double>();
    if (j.contains("beta2")) c.beta2 = j["beta2"].get<double>();
    if (j.contains("adam_eps")) c.adam_eps = j["adam_eps"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("deterministic")) c.deterministic = j["deterministic"].get<bool>();
    if (j.contains("checkpoint_interval"))
        c.checkpoint_interval = j["checkpoint_interval"].get<std::int64_t>();
}

void parse_phantom(const json& j, slca::PhantomSpec& c) {
    reject_unknown(j,
                   {"seed", "extent", "spatial_rank", "tumor_count", "radius_min",
                    "radius_max", "noise_sigma"},
                   "phantom");
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("extent")) c.extent = j["extent"].get<std::int64_t>();
    if (j.contains("spatial_rank")) c.spatial_rank = j["spatial_rank"].get<std::int64_t>();
    if (j.contains("tumor_count")) c.tumor_count = j["tumor_count"].get<std::int64_t>();
    if (j.contains("radius_min")) c.radius_min = j["radius_min"].get<double>();
    if (j.contains("radius_max")) c.radius_max = j["radius_max"].get<double>();
    if (j.contains("noise_sigma")) c.noise_sigma = j["noise_sigma"].get<double>();
}

// Precedence: command-line flags > config file > built-in defaults.
RunConfig load_config(const std::string& path) {
    RunConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream is(path);
    if (!is) throw slca::IoError("cannot open config " + path);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw slca::ValueError("config " + path + ": " + e.what());
    }
    try {
        reject_unknown(j, {"network", "train", "phantom"}, "top level");
        if (j.contains("network")) parse_network(j["network"], cfg.network);
        if (j.contains("train")) parse_train(j["train"], cfg.train);
        if (j.contains("phantom")) parse_phantom(j["phantom"], cfg.phantom);
    } catch (const json::exception& e) {
        throw slca::ValueError("config " + path + ": " + e.what());
    }
    return cfg;
}

// ---- small I/O helpers ----------------------------------------------------

// All outputs go to a temp name first and are renamed on success, so a
// failed command leaves no partial files.
template <typename WriteFn>
void write_atomically(const fs::path& path, WriteFn&& write) {
    const fs::path tmp = path.string() + ".tmp";
    write(tmp);
    fs::rename(tmp, path);
}

void write_text_atomically(const fs::path& path, const std::string& text) {
    write_atomically(path, [&](const fs::path& tmp) {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw slca::IoError("cannot open " + tmp.string() + " for writing");
        os << text;
        if (!os) throw slca::IoError("write failed for " + tmp.string());
    });
}

std::vector<std::string> list_case_ids(const fs::path& dir, const std::string& suffix) {
    if (!fs::is_directory(dir)) {
        throw slca::IoError(dir.string() + " is not a readable directory");
    }
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() > suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
            ids.push_back(name.substr(0, name.size() - suffix.size()));
        }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

// ---- overlays ---------------------------------------------------------------

// P6 portable pixmap overlays: the first (FLAIR-analogue) channel rendered
// as min/max-scaled gray, with labeled voxels blended half and half toward
// label colors 1 = red, 2 = green, 3 = blue.
void write_overlays(const fs::path& dir, const slca::MultiModalVolume& vol,
                    const slca::LabelVolume& labels) {
    fs::create_directories(dir);
    const std::int64_t rank = static_cast<std::int64_t>(vol.spatial.size());
    const std::int64_t slices = rank == 3 ? vol.spatial[0] : 1;
    const std::int64_t h = vol.spatial[static_cast<std::size_t>(rank - 2)];
    const std::int64_t w = vol.spatial[static_cast<std::size_t>(rank - 1)];
    const float* ch0 = vol.channel(0);
    const std::int64_t n = vol.channel_numel();
    float lo = ch0[0], hi = ch0[0];
    for (std::int64_t i = 1; i < n; ++i) {
        lo = std::min(lo, ch0[i]);
        hi = std::max(hi, ch0[i]);
    }
    const float range = hi > lo ? hi - lo : 1.0f;
    static constexpr unsigned char kColors[4][3] = {
        {0, 0, 0}, {255, 40, 40}, {40, 255, 40}, {40, 40, 255}};

    for (std::int64_t z = 0; z < slices; ++z) {
        std::string body;
        body.reserve(static_cast<std::size_t>(3 * h * w));
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t x = 0; x < w; ++x) {
                const std::int64_t i = (z * h + y) * w + x;
                const auto gray = static_cast<unsigned char>(
                    255.0f * (ch0[i] - lo) / range);
                const std::uint8_t lbl = labels.values[static_cast<std::size_t>(i)];
                for (int c = 0; c < 3; ++c) {
                    const int v = lbl == 0 ? gray : (gray + kColors[lbl][c]) / 2;
                    body.push_back(static_cast<char>(v));
                }
            }
        }
        char name[32];
        std::snprintf(name, sizeof(name), "slice_%04d.ppm", static_cast<int>(z));
        std::ostringstream header;
        header << "P6\n" << w << ' ' << h << "\n255\n";
        write_text_atomically(dir / name, header.str() + body);
    }
}

// ---- commands -----------------------------------------------------------------

int cmd_phantom(const RunConfig& cfg, const fs::path& out_dir, std::int64_t count) {
    fs::create_directories(out_dir);
    std::vector<fs::path> written;
    try {
        for (std::int64_t i = 0; i < count; ++i) {
            slca::PhantomSpec spec = cfg.phantom;
            spec.seed = cfg.phantom.seed + static_cast<std::uint64_t>(i);
            auto [vol, labels] = slca::generate_phantom(spec);

            // Internal consistency: the evaluation regions must nest.
            const slca::RegionMasks masks = slca::region_masks(labels);
            for (std::size_t v = 0; v < labels.values.size(); ++v) {
                const bool wt = masks[slca::Region::WT][v] != 0;
                const bool tc = masks[slca::Region::TC][v] != 0;
                const bool et = masks[slca::Region::ET][v] != 0;
                if ((et && !tc) || (tc && !wt)) {
                    throw VerifyError("generated labels violate region nesting at voxel " +
                                      std::to_string(v));
                }
            }

            char stem[32];
            std::snprintf(stem, sizeof(stem), "case_%04d", static_cast<int>(i));
            const fs::path img = out_dir / (std::string(stem) + ".img.svol");
            const fs::path lbl = out_dir / (std::string(stem) + ".lbl.svol");
            write_atomically(img, [&](const fs::path& tmp) { slca::write_svol(tmp, vol); });
            written.push_back(img);
            write_atomically(lbl, [&](const fs::path& tmp) {
                slca::write_svol(tmp, labels, vol.spacing);
            });
            written.push_back(lbl);
            std::cout << stem << " seed=" << spec.seed << " extent=" << spec.extent
                      << " rank=" << spec.spatial_rank << " tumors=" << spec.tumor_count
                      << '\n';
        }
    } catch (...) {
        for (const fs::path& p : written) {
            std::error_code ec;
            fs::remove(p, ec);
        }
        throw;
    }
    return kExitOk;
}

struct LoadedCase {
    std::string id;
    slca::MultiModalVolume volume;
    slca::LabelVolume labels;
};

std::vector<LoadedCase> load_cases(const fs::path& dir) {
    std::vector<LoadedCase> cases;
    for (const std::string& id : list_case_ids(dir, ".img.svol")) {
        const fs::path lbl = dir / (id + ".lbl.svol");
        if (!fs::exists(lbl)) {
            throw slca::IoError("missing labels for case " + id + " in " + dir.string());
        }
        cases.push_back({id, slca::read_svol_volume(dir / (id + ".img.svol")),
                         slca::read_svol_labels(lbl)});
    }
    if (cases.empty()) throw slca::IoError("no .img.svol cases found in " + dir.string());
    return cases;
}

void print_metrics_table(const std::vector<slca::MetricsReport>& reports) {
    std::printf("%-8s%12s%14s%14s%10s\n", "Region", "Dice", "Sensitivity", "Specificity",
                "HD95");
    for (int r = 0; r < 3; ++r) {
        const auto region = static_cast<slca::Region>(r);
        double dice = 0, sens = 0, spec = 0, hd = 0;
        bool hd_defined = !reports.empty();
        for (const auto& rep : reports) {
            dice += rep[region].dice;
            sens += rep[region].sensitivity;
            spec += rep[region].specificity;
            if (rep[region].hd95) hd += *rep[region].hd95;
            else hd_defined = false;
        }
        const auto n = static_cast<double>(reports.size());
        std::printf("%-8s%12.4f%14.4f%14.4f", slca::region_name(region), dice / n,
                    sens / n, spec / n);
        if (hd_defined) std::printf("%10.3f\n", hd / n);
        else std::printf("%10s\n", "n/a");
    }
}

int cmd_train(const RunConfig& cfg, const fs::path& data_dir, const fs::path& out,
              const fs::path& history_path, const fs::path& val_dir) {
    std::vector<LoadedCase> cases = load_cases(data_dir);
    std::vector<slca::TrainSample> samples;
    samples.reserve(cases.size());
    for (const LoadedCase& c : cases) {
        samples.push_back({slca::normalize(c.volume).to_tensor(), c.labels});
    }

    slca::Network net(cfg.network);
    slca::TrainConfig tc = cfg.train;
    tc.checkpoint_path = out;
    const slca::FitResult result = slca::fit(net, samples, tc);
    std::cout << "trained " << result.final_step << " steps; checkpoint " << out.string()
              << '\n';

    std::ostringstream hist;
    slca::write_history_csv_header(hist);
    for (const auto& row : result.history) slca::write_history_csv_row(hist, row);
    const fs::path hist_out =
        history_path.empty() ? fs::path(out.string() + ".history.csv") : history_path;
    write_text_atomically(hist_out, hist.str());
    std::cout << "history " << hist_out.string() << '\n';

    const std::vector<LoadedCase> eval_cases =
        val_dir.empty() ? std::move(cases) : load_cases(val_dir);
    std::vector<slca::MetricsReport> reports;
    for (const LoadedCase& c : eval_cases) {
        reports.push_back(slca::evaluate(net.segment(c.volume), c.labels));
    }
    std::cout << (val_dir.empty() ? "training-set metrics (no --val-dir given):\n"
                                  : "validation metrics:\n");
    print_metrics_table(reports);
    return kExitOk;
}

int cmd_segment(const fs::path& checkpoint, const fs::path& in_path,
                const fs::path& out_path, const fs::path& overlay_dir) {
    slca::Network net = slca::load_checkpoint(checkpoint);
    const slca::MultiModalVolume vol = slca::read_svol_volume(in_path);
    const slca::LabelVolume labels = net.segment(vol);
    write_atomically(out_path, [&](const fs::path& tmp) {
        slca::write_svol(tmp, labels, vol.spacing);
    });
    std::cout << "wrote " << out_path.string() << '\n';
    if (!overlay_dir.empty()) {
        write_overlays(overlay_dir, vol, labels);
        const std::int64_t slices = vol.spatial.size() == 3 ? vol.spatial[0] : 1;
        std::cout << "wrote " << slices << " overlay slices to " << overlay_dir.string()
                  << '\n';
    }
    return kExitOk;
}

int cmd_evaluate(const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& out) {
    const std::vector<std::string> pred_ids = list_case_ids(pred_dir, ".lbl.svol");
    const std::vector<std::string> gt_ids = list_case_ids(gt_dir, ".lbl.svol");
    std::vector<std::string> unmatched;
    std::set_symmetric_difference(pred_ids.begin(), pred_ids.end(), gt_ids.begin(),
                                  gt_ids.end(), std::back_inserter(unmatched));
    if (!unmatched.empty()) {
        std::cerr << "unmatched case ids:";
        for (const auto& id : unmatched) std::cerr << ' ' << id;
        std::cerr << '\n';
        return kExitConfig;
    }
    if (gt_ids.empty()) throw slca::IoError("no .lbl.svol cases found in " + gt_dir.string());

    std::ostringstream csv;
    slca::write_metrics_csv_header(csv);
    std::array<double, 3> mean_dice{}, mean_sens{}, mean_spec{}, mean_hd{};
    std::array<bool, 3> hd_defined{true, true, true};
    std::vector<slca::MetricsReport> reports;
    for (const std::string& id : gt_ids) {
        const slca::LabelVolume pred = slca::read_svol_labels(pred_dir / (id + ".lbl.svol"));
        const slca::LabelVolume gt = slca::read_svol_labels(gt_dir / (id + ".lbl.svol"));
        const slca::MetricsReport rep = slca::evaluate(pred, gt);
        for (int r = 0; r < 3; ++r) {
            const auto region = static_cast<slca::Region>(r);
            slca::write_metrics_csv_row(csv, id, region, rep[region]);
            mean_dice[static_cast<std::size_t>(r)] += rep[region].dice;
            mean_sens[static_cast<std::size_t>(r)] += rep[region].sensitivity;
            mean_spec[static_cast<std::size_t>(r)] += rep[region].specificity;
            if (rep[region].hd95) mean_hd[static_cast<std::size_t>(r)] += *rep[region].hd95;
            else hd_defined[static_cast<std::size_t>(r)] = false;
        }
        reports.push_back(rep);
    }
    const auto n = static_cast<double>(gt_ids.size());
    for (int r = 0; r < 3; ++r) {
        const auto ri = static_cast<std::size_t>(r);
        slca::RegionMetrics mean;
        mean.dice = mean_dice[ri] / n;
        mean.sensitivity = mean_sens[ri] / n;
        mean.specificity = mean_spec[ri] / n;
        if (hd_defined[ri]) mean.hd95 = mean_hd[ri] / n;
        slca::write_metrics_csv_row(csv, "mean", static_cast<slca::Region>(r), mean);
    }
    write_text_atomically(out, csv.str());
    std::cout << "wrote " << out.string() << '\n';
    print_metrics_table(reports);
    return kExitOk;
}

int cmd_gradcheck(const RunConfig& cfg, bool break_gradients) {
    const auto reports = slca::run_gradcheck_suite(cfg.network.seed, break_gradients);
    bool ok = true;
    for (const auto& r : reports) {
        const bool pass = r.max_rel_err < slca::kGradCheckThreshold;
        ok = ok && pass;
        std::printf("%-28s max_rel_err=%.3e  %s\n", r.component.c_str(), r.max_rel_err,
                    pass ? "PASS" : "FAIL");
        if (!pass) {
            std::cerr << "gradient check failed for " << r.component << " (worst parameter "
                      << r.worst_param << ")\n";
        }
    }
    return ok ? kExitOk : kExitVerify;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SLCA-UNet segmentation toolkit"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags like --config may follow the subcommand

    std::string config_path;
    std::uint64_t seed_override = 0;
    bool seed_given = false;
    app.add_option("--config", config_path, "JSON config file")->capture_default_str();
    app.add_flag_callback("--version", [] { std::cout << "slcaunet 1.0\n"; std::exit(0); },
                          "print version and exit");

    auto add_seed = [&](CLI::App* sub) {
        sub->add_option("--seed", seed_override, "override every seed in the config")
            ->each([&](const std::string&) { seed_given = true; });
    };

    // phantom
    auto* phantom = app.add_subcommand("phantom", "generate synthetic tumor phantoms");
    std::string phantom_out;
    std::int64_t phantom_count = 1;
    phantom->add_option("--out-dir", phantom_out, "output directory")->required();
    phantom->add_option("--count", phantom_count, "number of cases")
        ->check(CLI::PositiveNumber);
    add_seed(phantom);

    // train
    auto* train = app.add_subcommand("train", "train on a directory of phantom cases");
    std::string train_data, train_out, train_history, train_val;
    std::int64_t steps_override = -1;
    train->add_option("--data-dir", train_data, "directory of *.img.svol/*.lbl.svol")
        ->required();
    train->add_option("--out", train_out, "checkpoint output path")->required();
    train->add_option("--history", train_history,
                      "history CSV path (default: <out>.history.csv)");
    train->add_option("--val-dir", train_val, "cases for the final metrics table");
    train->add_option("--steps", steps_override, "override train.steps from the config");
    add_seed(train);

    // segment
    auto* segment = app.add_subcommand("segment", "segment one volume with a checkpoint");
    std::string seg_ckpt, seg_in, seg_out, seg_overlay;
    segment->add_option("--checkpoint", seg_ckpt, "trained checkpoint")->required();
    segment->add_option("--in", seg_in, "input .svol volume")->required();
    segment->add_option("--out", seg_out, "output .svol label volume")->required();
    segment->add_option("--overlay-dir", seg_overlay, "write per-slice P6 overlays here");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "compare predictions to ground truth");
    std::string eval_pred, eval_gt, eval_out;
    evaluate->add_option("--pred", eval_pred, "directory of predicted *.lbl.svol")
        ->required();
    evaluate->add_option("--gt", eval_gt, "directory of ground-truth *.lbl.svol")
        ->required();
    evaluate->add_option("--out", eval_out, "report CSV path")->required();

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    bool break_gradients = false;
    gradcheck
        ->add_flag("--break-gradients", break_gradients,
                   "testing hook: corrupt one component so its check must fail")
        ->group("");  // hidden
    add_seed(gradcheck);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        RunConfig cfg = load_config(config_path);
        if (seed_given) {
            cfg.network.seed = seed_override;
            cfg.train.seed = seed_override;
            cfg.phantom.seed = seed_override;
        }
        if (phantom->parsed()) return cmd_phantom(cfg, phantom_out, phantom_count);
        if (train->parsed()) {
            if (steps_override >= 0) cfg.train.steps = steps_override;
            return cmd_train(cfg, train_data, train_out, train_history, train_val);
        }
        if (segment->parsed()) return cmd_segment(seg_ckpt, seg_in, seg_out, seg_overlay);
        if (evaluate->parsed()) return cmd_evaluate(eval_pred, eval_gt, eval_out);
        if (gradcheck->parsed()) return cmd_gradcheck(cfg, break_gradients);
        return kExitConfig;
    } catch (const slca::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const VerifyError& e) {
        std::cerr << "verification failure: " << e.what() << '\n';
        return kExitVerify;
    } catch (const slca::CheckpointConfigMismatch& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const slca::CheckpointCorrupt& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const slca::CheckpointVersionMismatch& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const slca::SvolBadMagic& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const slca::SvolTruncated& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const slca::SvolDtypeMismatch& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const slca::IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    }
}

// Command-line front end: train / eval / infer / params / bench.

#include <chrono>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "mfsod/mfsod.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitCheckpoint = 3;
constexpr int kExitNumerical = 4;

std::string now_iso8601() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%FT%T%z", std::localtime(&t));
    return buf;
}

/// Flat key=value settings bag: config-file values overlaid by CLI flags.
struct Settings {
    std::map<std::string, std::string> values;

    void load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw mfsod::ConfigError("cannot read config file: " + path);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            auto eq = line.find('=');
            if (eq == std::string::npos) {
                if (line.find_first_not_of(" \t\r") != std::string::npos)
                    throw mfsod::ConfigError("config line " + std::to_string(lineno) +
                                             " is not key = value");
                continue;
            }
            auto trim = [](std::string s) {
                s.erase(0, s.find_first_not_of(" \t\r"));
                auto end = s.find_last_not_of(" \t\r");
                s.erase(end == std::string::npos ? 0 : end + 1);
                return s;
            };
            values[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
        }
    }

    void set(const std::string& key, const std::string& value) { values[key] = value; }
    bool has(const std::string& key) const { return values.count(key) != 0; }
    std::string get(const std::string& key, const std::string& fallback) const {
        auto it = values.find(key);
        return it == values.end() ? fallback : it->second;
    }
    double get_double(const std::string& key, double fallback) const {
        auto it = values.find(key);
        return it == values.end() ? fallback : std::stod(it->second);
    }
    long get_long(const std::string& key, long fallback) const {
        auto it = values.find(key);
        return it == values.end() ? fallback : std::stol(it->second);
    }
    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        return it->second == "1" || it->second == "true" || it->second == "yes";
    }

    json to_json() const {
        json j = json::object();
        for (const auto& [k, v] : values) j[k] = v;
        return j;
    }
};

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    return out;
}

mfsod::ModelConfig model_config_from(const Settings& s) {
    mfsod::ModelConfig cfg;
    cfg.backbone.variant =
        mfsod::backbone_variant_from_string(s.get("variant", "lightweight-shuffle"));
    if (cfg.backbone.variant == mfsod::BackboneVariant::VggStyle)
        cfg.backbone = mfsod::BackboneConfig::vgg_default();
    if (s.has("level_channels")) {
        auto ch = parse_int_list(s.values.at("level_channels"));
        if (ch.size() != 5) throw mfsod::ConfigError("level_channels needs exactly 5 entries");
        for (int i = 0; i < 5; ++i) cfg.backbone.level_channels[i] = ch[i];
    }
    if (s.has("stage_repeats")) {
        auto sr = parse_int_list(s.values.at("stage_repeats"));
        if (sr.size() != 3) throw mfsod::ConfigError("stage_repeats needs exactly 3 entries");
        for (int i = 0; i < 3; ++i) cfg.backbone.stage_repeats[i] = sr[i];
    }
    int input = static_cast<int>(s.get_long("input_size", 224));
    cfg.backbone.input_h = cfg.backbone.input_w = input;
    cfg.backbone.pretrained_weights_path = s.get("pretrained_weights", "");
    cfg.fusion_mode = mfsod::fusion_mode_from_string(s.get("fusion_mode", "level3"));
    cfg.seed = static_cast<uint64_t>(s.get_long("seed", 0));
    return cfg;
}

mfsod::TrainConfig train_config_from(const Settings& s) {
    mfsod::TrainConfig tc;
    tc.lr = s.get_double("lr", tc.lr);
    tc.weight_decay = s.get_double("weight_decay", tc.weight_decay);
    tc.batch_size = static_cast<int>(s.get_long("batch_size", tc.batch_size));
    tc.momentum = s.get_double("momentum", tc.momentum);
    tc.lr_decay_factor = s.get_double("lr_decay_factor", tc.lr_decay_factor);
    tc.lr_decay_every = static_cast<int>(s.get_long("lr_decay_every", tc.lr_decay_every));
    tc.epochs = static_cast<int>(s.get_long("epochs", tc.epochs));
    tc.input_size = static_cast<int>(s.get_long("input_size", tc.input_size));
    tc.seed = static_cast<uint64_t>(s.get_long("seed", 0));
    tc.eval_every = static_cast<int>(s.get_long("eval_every", 0));
    return tc;
}

mfsod::data::PreprocessOptions preprocess_options_from(const Settings& s) {
    mfsod::data::PreprocessOptions opts;
    opts.depth_invert = s.get_bool("depth_invert", false);
    opts.hflip = s.get_bool("hflip", false);
    return opts;
}

void write_manifest(const fs::path& out_dir, const std::string& command, const Settings& settings,
                    const std::string& started_at, const json& extra = json::object()) {
    json manifest = {{"command", command},
                     {"config", settings.to_json()},
                     {"out_dir", out_dir.string()},
                     {"started_at", started_at},
                     {"finished_at", now_iso8601()},
                     {"status", "ok"}};
    for (auto& [k, v] : extra.items()) manifest[k] = v;
    std::ofstream out(out_dir / "manifest.json");
    out << manifest.dump(2) << "\n";
}

int run_train(const Settings& settings) {
    const std::string started = now_iso8601();
    const std::string data_root = settings.get("data", "");
    const int synthetic_n = static_cast<int>(settings.get_long("synthetic", 0));
    const std::string split_file = settings.get("split_file", "");
    const int emit_split = static_cast<int>(settings.get_long("emit_split", 0));
    fs::path out_dir(settings.get("out_dir", "mfsod_runs/train"));
    fs::create_directories(out_dir);

    std::vector<mfsod::data::RgbdSample> dataset;
    if (synthetic_n > 0) {
        int size = static_cast<int>(settings.get_long("synth_size", 64));
        dataset = mfsod::data::synthesize_dataset(
            synthetic_n, static_cast<uint64_t>(settings.get_long("seed", 0)), size, size);
        mfsod::data::save_rgbd_dataset((out_dir / "dataset").string(), dataset);
        std::cout << "synthesized " << dataset.size() << " samples into "
                  << (out_dir / "dataset").string() << "\n";
    } else {
        if (data_root.empty())
            throw mfsod::ConfigError("train needs --data DIR or --synthetic N");
        if (!fs::is_directory(data_root))
            throw mfsod::ConfigError("dataset root does not exist: " + data_root);
        dataset = mfsod::data::load_rgbd_dataset(data_root);
        if (!split_file.empty()) {
            dataset = mfsod::data::filter_by_ids(dataset, mfsod::data::load_split(split_file));
        } else if (emit_split > 0) {
            std::vector<std::string> ids;
            for (const auto& s : dataset) ids.push_back(s.id);
            auto split = mfsod::data::make_split(ids, static_cast<size_t>(emit_split),
                                                 static_cast<uint64_t>(settings.get_long("seed", 0)));
            mfsod::data::save_split((out_dir / "train.split").string(), split);
            dataset = mfsod::data::filter_by_ids(dataset, split);
        }
    }
    if (dataset.empty()) throw mfsod::InputError("no training samples found");

    auto model_cfg = model_config_from(settings);
    auto train_cfg = train_config_from(settings);
    model_cfg.backbone.input_h = model_cfg.backbone.input_w = train_cfg.input_size;

    mfsod::SodModel<float> model(model_cfg);
    std::cout << "training on " << dataset.size() << " samples, "
              << model.count_parameters() << " parameters, " << train_cfg.epochs << " epochs\n";
    auto history = mfsod::train(model, dataset, train_cfg, preprocess_options_from(settings));
    for (const auto& rec : history)
        std::cout << "epoch " << rec.epoch << " lr " << rec.lr << " loss " << rec.train_loss
                  << (rec.eval_mae ? " mae " + std::to_string(*rec.eval_mae) : "") << "\n";

    mfsod::write_history_jsonl((out_dir / "history.jsonl").string(), history);
    model.save_checkpoint((out_dir / "model.ckpt").string());
    write_manifest(out_dir, "train", settings, started,
                   {{"samples", dataset.size()}, {"checkpoint", (out_dir / "model.ckpt").string()}});
    std::cout << "checkpoint: " << (out_dir / "model.ckpt").string() << "\n";
    return kExitOk;
}

int run_eval(const Settings& settings) {
    const std::string started = now_iso8601();
    const std::string checkpoint = settings.get("checkpoint", "");
    const std::string data_root = settings.get("data", "");
    if (checkpoint.empty()) throw mfsod::ConfigError("eval needs --checkpoint");
    if (data_root.empty()) throw mfsod::ConfigError("eval needs --data");
    fs::path out_dir(settings.get("out_dir", "mfsod_runs/eval"));
    fs::create_directories(out_dir);

    auto model = mfsod::SodModel<float>::load_checkpoint(checkpoint);
    if (!fs::is_directory(data_root))
        throw mfsod::ConfigError("dataset root does not exist: " + data_root);
    auto dataset = mfsod::data::load_rgbd_dataset(data_root);
    if (dataset.empty()) throw mfsod::InputError("no samples under " + data_root);

    int input = static_cast<int>(settings.get_long("input_size", model.config.backbone.input_h));
    auto report = mfsod::evaluate_model(model, dataset, input, preprocess_options_from(settings));

    mfsod::metrics::write_report_json((out_dir / "report.json").string(), report);
    mfsod::metrics::write_report_csv((out_dir / "report.csv").string(), report);
    mfsod::metrics::write_pr_csv((out_dir / "pr_curve.csv").string(), report);
    write_manifest(out_dir, "eval", settings, started,
                   {{"checkpoint", checkpoint}, {"data", data_root}, {"images", report.images}});
    std::cout << "images " << report.images << " (skipped " << report.skipped << ")\n"
              << "mae " << report.mae << "\nf_beta " << report.f_beta << "\ns_measure "
              << report.s_measure << "\ne_measure " << report.e_measure << "\n";
    return kExitOk;
}

int run_infer(const Settings& settings) {
    const std::string started = now_iso8601();
    const std::string checkpoint = settings.get("checkpoint", "");
    const std::string rgb_path = settings.get("rgb", "");
    const std::string depth_path = settings.get("depth", "");
    std::string out_name = settings.get("out", "");
    if (checkpoint.empty() || rgb_path.empty() || depth_path.empty())
        throw mfsod::ConfigError("infer needs --checkpoint, --rgb and --depth");
    fs::path out_dir(settings.get("out_dir", "mfsod_runs/infer"));
    fs::create_directories(out_dir);

    auto model = mfsod::SodModel<float>::load_checkpoint(checkpoint);
    cv::Mat rgb = cv::imread(rgb_path, cv::IMREAD_COLOR);
    cv::Mat depth = cv::imread(depth_path, cv::IMREAD_GRAYSCALE);
    if (rgb.empty()) throw mfsod::InputError("cannot read rgb image: " + rgb_path);
    if (depth.empty()) throw mfsod::InputError("cannot read depth image: " + depth_path);
    if (rgb.size() != depth.size())
        throw mfsod::InputError("rgb and depth sizes differ: " + rgb_path + " vs " + depth_path);

    mfsod::data::RgbdSample sample;
    cv::cvtColor(rgb, sample.rgb, cv::COLOR_BGR2RGB);
    sample.depth = depth;
    sample.gt = cv::Mat::zeros(rgb.size(), CV_8UC1);
    sample.id = fs::path(rgb_path).stem().string();

    int input = static_cast<int>(settings.get_long("input_size", model.config.backbone.input_h));
    auto pre = mfsod::data::preprocess(sample, input, input, preprocess_options_from(settings));
    auto out = model.forward(mfsod::make_var(pre.rgb), mfsod::make_var(pre.depth));
    auto prob = mfsod::bilinear_resize(out.final_prob, rgb.rows, rgb.cols);

    cv::Mat saliency(rgb.rows, rgb.cols, CV_8UC1);
    for (int y = 0; y < rgb.rows; ++y)
        for (int x = 0; x < rgb.cols; ++x) {
            float v = std::clamp(prob->value.at(0, 0, y, x), 0.0f, 1.0f);
            saliency.at<uint8_t>(y, x) = static_cast<uint8_t>(std::lround(255.0f * v));
        }
    if (out_name.empty()) out_name = sample.id + "_saliency.png";
    fs::path out_path = out_dir / fs::path(out_name).filename();
    if (!cv::imwrite(out_path.string(), saliency))
        throw mfsod::InputError("cannot write " + out_path.string());
    write_manifest(out_dir, "infer", settings, started,
                   {{"checkpoint", checkpoint}, {"output", out_path.string()}});
    std::cout << "saliency map: " << out_path.string() << "\n";
    return kExitOk;
}

int run_params(const Settings& settings) {
    const std::string started = now_iso8601();
    const bool sweep = settings.get_bool("sweep", false);
    fs::path out_dir(settings.get("out_dir", "mfsod_runs/params"));
    fs::create_directories(out_dir);

    json table = json::array();
    auto report_one = [&](mfsod::FusionMode mode) {
        Settings local = settings;
        local.set("fusion_mode", mfsod::to_string(mode));
        mfsod::SodModel<float> model(model_config_from(local));
        size_t total = model.count_parameters();
        std::cout << mfsod::to_string(mode) << ": total " << total << " ("
                  << std::fixed << std::setprecision(3) << total / 1e6 << "M)\n";
        for (auto& [component, count] : model.parameter_breakdown())
            std::cout << "  " << component << " " << count << "\n";
        table.push_back({{"fusion_mode", mfsod::to_string(mode)}, {"total", total}});
    };

    if (sweep) {
        for (auto mode : mfsod::all_fusion_modes()) report_one(mode);
    } else {
        report_one(mfsod::fusion_mode_from_string(settings.get("fusion_mode", "level3")));
    }
    std::ofstream(out_dir / "params.json") << table.dump(2) << "\n";
    write_manifest(out_dir, "params", settings, started);
    return kExitOk;
}

int run_bench(const Settings& settings) {
    const std::string started = now_iso8601();
    const std::string checkpoint = settings.get("checkpoint", "");
    if (checkpoint.empty()) throw mfsod::ConfigError("bench needs --checkpoint");
    const int size = static_cast<int>(settings.get_long("size", 352));
    const int n = static_cast<int>(settings.get_long("n", 500));
    const int warmup = static_cast<int>(settings.get_long("warmup", 5));
    fs::path out_dir(settings.get("out_dir", "mfsod_runs/bench"));
    fs::create_directories(out_dir);

    auto model = mfsod::SodModel<float>::load_checkpoint(checkpoint);
    if (size % 32 != 0) throw mfsod::InputError("bench size must be divisible by 32");
    mfsod::Rng rng(static_cast<uint64_t>(settings.get_long("seed", 0)));
    mfsod::Tensor<float> rgb(1, 3, size, size), depth(1, 1, size, size);
    rng.fill_uniform(rgb, -1.0, 1.0);
    rng.fill_uniform(depth, 0.0, 1.0);
    auto rgb_var = mfsod::make_var(rgb);
    auto depth_var = mfsod::make_var(depth);

    for (int i = 0; i < warmup; ++i) model.forward(rgb_var, depth_var);
    std::vector<double> latencies_ms;
    latencies_ms.reserve(n);
    auto bench_start = std::chrono::steady_clock::now();
    for (int i = 0; i < n; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        model.forward(rgb_var, depth_var);
        auto t1 = std::chrono::steady_clock::now();
        latencies_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    double total_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - bench_start)
                         .count();
    double fps = n / total_s;
    auto sorted = latencies_ms;
    std::sort(sorted.begin(), sorted.end());
    double mean_ms = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
    double p50 = sorted[n / 2];
    double p95 = sorted[std::min<size_t>(n - 1, static_cast<size_t>(0.95 * n))];

    json result = {{"size", size},         {"iterations", n},   {"warmup", warmup},
                   {"fps", fps},           {"mean_ms", mean_ms}, {"p50_ms", p50},
                   {"p95_ms", p95}};
    std::ofstream(out_dir / "bench.json") << result.dump(2) << "\n";
    write_manifest(out_dir, "bench", settings, started, {{"checkpoint", checkpoint}});
    std::cout << "size " << size << "x" << size << ", " << n << " runs (" << warmup
              << " warmup)\nfps " << fps << "\nmean_ms " << mean_ms << "\np50_ms " << p50
              << "\np95_ms " << p95 << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"middle-fusion RGB-D salient object detection"};
    app.require_subcommand(1);

    std::string config_file;
    std::map<std::string, std::string> flags;  // overlay, wins over the file

    auto bind = [&](CLI::App* cmd, const std::string& flag, const std::string& key,
                    const std::string& help = "") {
        cmd->add_option_function<std::string>(
            flag, [&flags, key](const std::string& v) { flags[key] = v; }, help);
    };
    auto bind_bool = [&](CLI::App* cmd, const std::string& flag, const std::string& key) {
        cmd->add_flag_callback(flag, [&flags, key]() { flags[key] = "true"; });
    };
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_file, "key = value settings file");
        bind(cmd, "--out-dir", "out_dir", "directory all outputs go to");
        bind(cmd, "--seed", "seed", "seed for everything stochastic");
    };

    auto* train = app.add_subcommand("train", "train a model");
    add_common(train);
    bind(train, "--data", "data", "dataset root with RGB/ depth/ GT/");
    bind(train, "--synthetic", "synthetic", "generate N synthetic samples instead");
    bind(train, "--synth-size", "synth_size", "synthetic image size (default 64)");
    bind(train, "--split-file", "split_file", "train on the ids listed in this file");
    bind(train, "--emit-split", "emit_split", "sample N ids, save the split, train on them");
    bind(train, "--epochs", "epochs");
    bind(train, "--lr", "lr");
    bind(train, "--batch-size", "batch_size");
    bind(train, "--weight-decay", "weight_decay");
    bind(train, "--momentum", "momentum");
    bind(train, "--lr-decay-factor", "lr_decay_factor");
    bind(train, "--lr-decay-every", "lr_decay_every");
    bind(train, "--input-size", "input_size");
    bind(train, "--eval-every", "eval_every");
    bind(train, "--fusion-mode", "fusion_mode");
    bind(train, "--variant", "variant");
    bind(train, "--pretrained-weights", "pretrained_weights");
    bind_bool(train, "--depth-invert", "depth_invert");
    bind_bool(train, "--hflip", "hflip");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    add_common(eval);
    bind(eval, "--checkpoint", "checkpoint");
    bind(eval, "--data", "data");
    bind(eval, "--input-size", "input_size");
    bind_bool(eval, "--depth-invert", "depth_invert");

    auto* infer = app.add_subcommand("infer", "predict one saliency map");
    add_common(infer);
    bind(infer, "--checkpoint", "checkpoint");
    bind(infer, "--rgb", "rgb");
    bind(infer, "--depth", "depth");
    bind(infer, "--out", "out", "output file name inside out-dir");
    bind_bool(infer, "--depth-invert", "depth_invert");

    auto* params = app.add_subcommand("params", "report parameter counts");
    add_common(params);
    bind(params, "--fusion-mode", "fusion_mode");
    bind(params, "--variant", "variant");
    bind_bool(params, "--sweep", "sweep");

    auto* bench = app.add_subcommand("bench", "measure inference speed");
    add_common(bench);
    bind(bench, "--checkpoint", "checkpoint");
    bind(bench, "--size", "size");
    bind(bench, "--n", "n");
    bind(bench, "--warmup", "warmup");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitInput;
    }

    try {
        Settings settings;
        if (!config_file.empty()) settings.load_file(config_file);
        for (const auto& [key, value] : flags) settings.set(key, value);

        if (train->parsed()) return run_train(settings);
        if (eval->parsed()) return run_eval(settings);
        if (infer->parsed()) return run_infer(settings);
        if (params->parsed()) return run_params(settings);
        if (bench->parsed()) return run_bench(settings);
        return kExitInput;
    } catch (const mfsod::CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kExitCheckpoint;
    } catch (const mfsod::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const mfsod::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitInput;
    } catch (const mfsod::InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
}

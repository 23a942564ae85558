#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "mfsod/errors.hpp"
#include "mfsod/tensor.hpp"

namespace mfsod {
namespace data {

namespace fs = std::filesystem;

/// Fixed color normalization used for the RGB stream (the usual ImageNet
/// statistics, RGB order).
inline constexpr double kRgbMean[3] = {0.485, 0.456, 0.406};
inline constexpr double kRgbStd[3] = {0.229, 0.224, 0.225};

struct RgbdSample {
    cv::Mat rgb;    // 8UC3, RGB channel order
    cv::Mat depth;  // 8UC1, larger = nearer by convention
    cv::Mat gt;     // 8UC1 with values {0,1}
    std::string id;
};

struct PreprocessOptions {
    bool depth_invert = false;  // set when a dataset stores larger = farther
    bool hflip = false;         // opt-in augmentation, off by default
};

struct PreprocessedSample {
    Tensor<float> rgb;    // (1,3,H,W), normalized
    Tensor<float> depth;  // (1,1,H,W), min-max scaled to [0,1]
    Tensor<float> gt;     // (1,1,H,W), strictly {0,1}
};

/// Loads `<root>/{RGB,depth,GT}` triplets matched by basename. Incomplete
/// or unreadable triplets are warned about and skipped; the result is
/// sorted by id.
inline std::vector<RgbdSample> load_rgbd_dataset(const std::string& root) {
    fs::path base(root);
    for (const char* sub : {"RGB", "depth", "GT"})
        if (!fs::is_directory(base / sub))
            throw ConfigError("dataset root " + root + " is missing the " + std::string(sub) +
                              "/ directory");
    std::vector<std::pair<std::string, fs::path>> rgb_files;
    for (const auto& entry : fs::directory_iterator(base / "RGB")) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".jpg" || ext == ".jpeg" || ext == ".png")
            rgb_files.emplace_back(entry.path().stem().string(), entry.path());
    }
    std::sort(rgb_files.begin(), rgb_files.end());

    std::vector<RgbdSample> samples;
    for (const auto& [id, rgb_path] : rgb_files) {
        fs::path depth_path = base / "depth" / (id + ".png");
        fs::path gt_path = base / "GT" / (id + ".png");
        if (!fs::exists(depth_path) || !fs::exists(gt_path)) {
            std::cerr << "[mfsod] warning: incomplete triplet for id '" << id << "', skipped\n";
            continue;
        }
        cv::Mat rgb = cv::imread(rgb_path.string(), cv::IMREAD_COLOR);
        cv::Mat depth = cv::imread(depth_path.string(), cv::IMREAD_GRAYSCALE);
        cv::Mat gt = cv::imread(gt_path.string(), cv::IMREAD_GRAYSCALE);
        if (rgb.empty() || depth.empty() || gt.empty()) {
            std::cerr << "[mfsod] warning: unreadable image for id '" << id << "', skipped\n";
            continue;
        }
        if (depth.size() != rgb.size() || gt.size() != rgb.size()) {
            std::cerr << "[mfsod] warning: size mismatch for id '" << id << "', skipped\n";
            continue;
        }
        RgbdSample s;
        cv::cvtColor(rgb, s.rgb, cv::COLOR_BGR2RGB);
        s.depth = depth;
        cv::threshold(gt, s.gt, 127, 1, cv::THRESH_BINARY);  // 8-bit masks binarize at 128
        s.id = id;
        samples.push_back(std::move(s));
    }
    return samples;
}

/// Writes samples back out in the directory layout `load_rgbd_dataset`
/// reads, with ground truth rescaled to {0,255}.
inline void save_rgbd_dataset(const std::string& root, const std::vector<RgbdSample>& samples) {
    fs::path base(root);
    fs::create_directories(base / "RGB");
    fs::create_directories(base / "depth");
    fs::create_directories(base / "GT");
    for (const auto& s : samples) {
        cv::Mat bgr;
        cv::cvtColor(s.rgb, bgr, cv::COLOR_RGB2BGR);
        cv::imwrite((base / "RGB" / (s.id + ".png")).string(), bgr);
        cv::imwrite((base / "depth" / (s.id + ".png")).string(), s.depth);
        cv::Mat gt255;
        s.gt.convertTo(gt255, CV_8U, 255.0);
        cv::imwrite((base / "GT" / (s.id + ".png")).string(), gt255);
    }
}

namespace detail {

struct Shape2d {
    double cx, cy, a, b, cos_t, sin_t;
    bool ellipse;

    bool contains(double x, double y) const {
        double dx = x - cx, dy = y - cy;
        double u = (dx * cos_t + dy * sin_t) / a;
        double v = (-dx * sin_t + dy * cos_t) / b;
        return ellipse ? (u * u + v * v <= 1.0) : (std::abs(u) <= 1.0 && std::abs(v) <= 1.0);
    }
};

}  // namespace detail

/// Seeded generator of desk-scale scenes: a planar background depth
/// gradient with 1-3 nearer geometric objects whose colors contrast the
/// background. Foreground fraction is kept inside [0.02, 0.6].
inline std::vector<RgbdSample> synthesize_dataset(int n, uint64_t seed, int height, int width) {
    require(n >= 1, "synthesize_dataset: n must be >= 1");
    Rng rng(seed);
    std::vector<RgbdSample> samples;
    samples.reserve(n);
    for (int si = 0; si < n; ++si) {
        RgbdSample s;
        s.id = "synth_" + std::to_string(si);
        s.rgb.create(height, width, CV_8UC3);
        s.depth.create(height, width, CV_8UC1);
        s.gt.create(height, width, CV_8UC1);

        // Dim background gradient; objects later get bright contrasting fill.
        double bg_r0 = rng.uniform(20, 90), bg_g0 = rng.uniform(20, 90),
               bg_b0 = rng.uniform(20, 90);
        double bg_r1 = rng.uniform(20, 90), bg_g1 = rng.uniform(20, 90),
               bg_b1 = rng.uniform(20, 90);
        double d0 = rng.uniform(30, 60), d1 = rng.uniform(70, 110);
        bool horizontal = rng.uniform_int(0, 1) == 1;

        for (int attempt = 0;; ++attempt) {
            int count = rng.uniform_int(1, 3);
            std::vector<detail::Shape2d> shapes;
            std::vector<std::array<uint8_t, 3>> colors;
            std::vector<uint8_t> depths;
            double min_dim = std::min(height, width);
            for (int k = 0; k < count; ++k) {
                detail::Shape2d sh;
                sh.cx = rng.uniform(0.2, 0.8) * width;
                sh.cy = rng.uniform(0.2, 0.8) * height;
                sh.a = rng.uniform(0.08, 0.22) * min_dim;
                sh.b = rng.uniform(0.08, 0.22) * min_dim;
                double theta = rng.uniform(0.0, 3.14159265);
                sh.cos_t = std::cos(theta);
                sh.sin_t = std::sin(theta);
                sh.ellipse = rng.uniform_int(0, 1) == 1;
                shapes.push_back(sh);
                colors.push_back({static_cast<uint8_t>(rng.uniform_int(150, 255)),
                                  static_cast<uint8_t>(rng.uniform_int(150, 255)),
                                  static_cast<uint8_t>(rng.uniform_int(150, 255))});
                depths.push_back(static_cast<uint8_t>(rng.uniform_int(160, 240)));
            }
            int fg = 0;
            for (int y = 0; y < height; ++y)
                for (int x = 0; x < width; ++x) {
                    double fy = static_cast<double>(y) / std::max(1, height - 1);
                    double fx = static_cast<double>(x) / std::max(1, width - 1);
                    double mix = horizontal ? fx : fy;
                    auto& px = s.rgb.at<cv::Vec3b>(y, x);
                    px[0] = static_cast<uint8_t>(bg_r0 + (bg_r1 - bg_r0) * mix);
                    px[1] = static_cast<uint8_t>(bg_g0 + (bg_g1 - bg_g0) * mix);
                    px[2] = static_cast<uint8_t>(bg_b0 + (bg_b1 - bg_b0) * mix);
                    s.depth.at<uint8_t>(y, x) = static_cast<uint8_t>(d0 + (d1 - d0) * mix);
                    s.gt.at<uint8_t>(y, x) = 0;
                    for (size_t k = 0; k < shapes.size(); ++k)
                        if (shapes[k].contains(x, y)) {
                            px[0] = colors[k][0];
                            px[1] = colors[k][1];
                            px[2] = colors[k][2];
                            s.depth.at<uint8_t>(y, x) = depths[k];
                            s.gt.at<uint8_t>(y, x) = 1;
                            break;
                        }
                    fg += s.gt.at<uint8_t>(y, x);
                }
            double frac = static_cast<double>(fg) / (static_cast<double>(height) * width);
            if (frac >= 0.02 && frac <= 0.6) break;
            if (attempt > 200)
                throw NumericalError("synthesize_dataset: could not satisfy coverage bounds");
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

/// Resize (bilinear for images, nearest for masks), normalize colors by the
/// fixed constants, min-max scale depth per image.
inline PreprocessedSample preprocess(const RgbdSample& sample, int target_h, int target_w,
                                     const PreprocessOptions& opts = {}) {
    require(!sample.rgb.empty() && !sample.depth.empty() && !sample.gt.empty(),
            "preprocess: sample has empty planes");
    cv::Mat rgb, depth, gt;
    cv::resize(sample.rgb, rgb, cv::Size(target_w, target_h), 0, 0, cv::INTER_LINEAR);
    cv::resize(sample.depth, depth, cv::Size(target_w, target_h), 0, 0, cv::INTER_LINEAR);
    cv::resize(sample.gt, gt, cv::Size(target_w, target_h), 0, 0, cv::INTER_NEAREST);
    if (opts.hflip) {
        cv::flip(rgb, rgb, 1);
        cv::flip(depth, depth, 1);
        cv::flip(gt, gt, 1);
    }

    PreprocessedSample out;
    out.rgb = Tensor<float>(1, 3, target_h, target_w);
    out.depth = Tensor<float>(1, 1, target_h, target_w);
    out.gt = Tensor<float>(1, 1, target_h, target_w);

    for (int y = 0; y < target_h; ++y)
        for (int x = 0; x < target_w; ++x) {
            const auto& px = rgb.at<cv::Vec3b>(y, x);
            for (int ch = 0; ch < 3; ++ch)
                out.rgb.at(0, ch, y, x) =
                    static_cast<float>((px[ch] / 255.0 - kRgbMean[ch]) / kRgbStd[ch]);
            out.gt.at(0, 0, y, x) = gt.at<uint8_t>(y, x) != 0 ? 1.0f : 0.0f;
        }

    double dmin, dmax;
    cv::minMaxLoc(depth, &dmin, &dmax);
    if (dmax == dmin) {
        std::cerr << "[mfsod] warning: constant depth map, normalized to 0.5\n";
        std::fill(out.depth.v.begin(), out.depth.v.end(), 0.5f);
    } else {
        for (int y = 0; y < target_h; ++y)
            for (int x = 0; x < target_w; ++x) {
                double v = (depth.at<uint8_t>(y, x) - dmin) / (dmax - dmin);
                out.depth.at(0, 0, y, x) = static_cast<float>(opts.depth_invert ? 1.0 - v : v);
            }
    }
    return out;
}

/// Stacks per-sample tensors into one batch along N.
inline Tensor<float> stack_batch(const std::vector<const Tensor<float>*>& items) {
    require(!items.empty(), "stack_batch: empty batch");
    const Tensor<float>& first = *items[0];
    Tensor<float> out(static_cast<int>(items.size()), first.c, first.h, first.w);
    size_t per = first.size();
    for (size_t i = 0; i < items.size(); ++i) {
        require(items[i]->same_shape(first), "stack_batch: mismatched sample shapes");
        std::copy(items[i]->v.begin(), items[i]->v.end(), out.v.begin() + i * per);
    }
    return out;
}

/// Seeded id subset for train/test splitting; persisted as newline-
/// delimited ids.
inline std::vector<std::string> make_split(std::vector<std::string> ids, size_t train_count,
                                           uint64_t seed) {
    require(train_count <= ids.size(), "make_split: train_count exceeds dataset size");
    std::shuffle(ids.begin(), ids.end(), Rng(seed).engine());
    ids.resize(train_count);
    std::sort(ids.begin(), ids.end());
    return ids;
}

inline void save_split(const std::string& path, const std::vector<std::string>& ids) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write split file: " + path);
    for (const auto& id : ids) out << id << "\n";
}

inline std::vector<std::string> load_split(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read split file: " + path);
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ids.push_back(line);
    return ids;
}

inline std::vector<RgbdSample> filter_by_ids(const std::vector<RgbdSample>& samples,
                                             const std::vector<std::string>& ids) {
    std::set<std::string> keep(ids.begin(), ids.end());
    std::vector<RgbdSample> out;
    for (const auto& s : samples)
        if (keep.count(s.id)) out.push_back(s);
    return out;
}

}  // namespace data
}  // namespace mfsod

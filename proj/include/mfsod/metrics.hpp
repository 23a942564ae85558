#pragma once

#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <vector>

#include <json.hpp>

#include "mfsod/errors.hpp"
#include "mfsod/tensor.hpp"

namespace mfsod {
namespace metrics {

inline constexpr int kThresholds = 256;
inline constexpr double kEps = std::numeric_limits<double>::epsilon();

struct PrPoint {
    double precision = 0.0;
    double recall = 0.0;
};

struct MetricReport {
    double mae = 0.0;
    double f_beta = 0.0;
    double s_measure = 0.0;
    double e_measure = 0.0;
    std::vector<PrPoint> pr_curve;
    int images = 0;   // samples contributing to the averages
    int skipped = 0;  // degenerate samples (empty ground truth)
};

using Map = Tensor<double>;

namespace detail {

inline void check_pair(const Map& s, const Map& y) {
    if (!s.same_shape(y))
        throw InputError("metric inputs differ in shape: " + s.shape_str() + " vs " +
                         y.shape_str());
    for (double v : s.v)
        if (!(v >= 0.0 && v <= 1.0))
            throw InputError("saliency map values must lie in [0,1]");
    for (double v : y.v)
        if (v != 0.0 && v != 1.0) throw InputError("ground truth must be strictly binary");
}

inline double mean(const Map& m) {
    double acc = 0.0;
    for (double v : m.v) acc += v;
    return acc / static_cast<double>(m.size());
}

/// Per-image binarization threshold: twice the map's mean, kept below 1.
inline double adaptive_threshold(const Map& s) {
    return std::min(2.0 * mean(s), 1.0 - 1e-6);
}

inline bool gt_empty(const Map& y) {
    for (double v : y.v)
        if (v != 0.0) return false;
    return true;
}

}  // namespace detail

/// Mean absolute per-pixel difference.
inline double mae(const Map& s, const Map& y) {
    detail::check_pair(s, y);
    double acc = 0.0;
    for (size_t i = 0; i < s.size(); ++i) acc += std::abs(s.v[i] - y.v[i]);
    return acc / static_cast<double>(s.size());
}

/// Precision/recall at 256 evenly spaced thresholds k/256, k = 0..255.
/// A threshold with no predicted positives scores precision 1.
inline std::vector<PrPoint> pr_curve(const Map& s, const Map& y) {
    detail::check_pair(s, y);
    size_t gt_pos = 0;
    for (double v : y.v) gt_pos += v != 0.0;
    std::vector<PrPoint> out(kThresholds);
    for (int k = 0; k < kThresholds; ++k) {
        double t = static_cast<double>(k) / kThresholds;
        size_t tp = 0, pred_pos = 0;
        for (size_t i = 0; i < s.size(); ++i) {
            bool p = s.v[i] >= t;
            pred_pos += p;
            tp += p && y.v[i] != 0.0;
        }
        out[k].precision = pred_pos == 0 ? 1.0 : static_cast<double>(tp) / pred_pos;
        out[k].recall = gt_pos == 0 ? 1.0 : static_cast<double>(tp) / gt_pos;
    }
    return out;
}

inline double f_beta_score(double precision, double recall, double beta2) {
    double denom = beta2 * precision + recall;
    return denom > 0.0 ? (1.0 + beta2) * precision * recall / denom : 0.0;
}

/// F-measure of the map binarized at the adaptive threshold.
inline double f_measure(const Map& s, const Map& y, double beta2 = 0.3) {
    detail::check_pair(s, y);
    double t = detail::adaptive_threshold(s);
    size_t tp = 0, pred_pos = 0, gt_pos = 0;
    for (size_t i = 0; i < s.size(); ++i) {
        bool p = s.v[i] >= t;
        bool g = y.v[i] != 0.0;
        pred_pos += p;
        gt_pos += g;
        tp += p && g;
    }
    double precision = pred_pos == 0 ? 1.0 : static_cast<double>(tp) / pred_pos;
    double recall = gt_pos == 0 ? 1.0 : static_cast<double>(tp) / gt_pos;
    return f_beta_score(precision, recall, beta2);
}

namespace detail {

/// 2*mean / (mean^2 + 1 + std): object-level similarity of a masked map.
inline double object_score(const Map& values, const Map& mask) {
    size_t count = 0;
    double acc = 0.0;
    for (size_t i = 0; i < values.size(); ++i)
        if (mask.v[i] != 0.0) {
            acc += values.v[i];
            ++count;
        }
    if (count == 0) return 0.0;
    double m = acc / count;
    double var = 0.0;
    for (size_t i = 0; i < values.size(); ++i)
        if (mask.v[i] != 0.0) var += (values.v[i] - m) * (values.v[i] - m);
    double sd = count > 1 ? std::sqrt(var / (count - 1)) : 0.0;
    return 2.0 * m / (m * m + 1.0 + sd + kEps);
}

inline double s_object(const Map& s, const Map& y) {
    Map fg = s;
    Map bg = s;
    Map inv_y = y;
    for (size_t i = 0; i < s.size(); ++i) {
        fg.v[i] = y.v[i] != 0.0 ? s.v[i] : 0.0;
        bg.v[i] = y.v[i] != 0.0 ? 0.0 : 1.0 - s.v[i];
        inv_y.v[i] = 1.0 - y.v[i];
    }
    double u = mean(y);
    return u * object_score(fg, y) + (1.0 - u) * object_score(bg, inv_y);
}

/// SSIM-style similarity of one region pair.
inline double region_ssim(const double* s, const double* y, const std::vector<size_t>& idx) {
    size_t n = idx.size();
    if (n == 0) return 0.0;
    double xm = 0.0, ym = 0.0;
    for (size_t i : idx) {
        xm += s[i];
        ym += y[i];
    }
    xm /= n;
    ym /= n;
    double sx = 0.0, sy = 0.0, sxy = 0.0;
    for (size_t i : idx) {
        sx += (s[i] - xm) * (s[i] - xm);
        sy += (y[i] - ym) * (y[i] - ym);
        sxy += (s[i] - xm) * (y[i] - ym);
    }
    double div = n > 1 ? static_cast<double>(n - 1) : 1.0;
    sx /= div;
    sy /= div;
    sxy /= div;
    double alpha = 4.0 * xm * ym * sxy;
    double beta = (xm * xm + ym * ym) * (sx + sy);
    if (alpha != 0.0) return alpha / (beta + kEps);
    return beta == 0.0 ? 1.0 : 0.0;
}

inline double s_region(const Map& s, const Map& y) {
    const int h = y.h, w = y.w;
    double area = 0.0, cx_acc = 0.0, cy_acc = 0.0;
    for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx)
            if (y.at(0, 0, yy, xx) != 0.0) {
                area += 1.0;
                cx_acc += xx;
                cy_acc += yy;
            }
    int cx = area > 0.0 ? static_cast<int>(std::round(cx_acc / area)) : w / 2;
    int cy = area > 0.0 ? static_cast<int>(std::round(cy_acc / area)) : h / 2;
    // Quadrants around the foreground centroid; the centroid row/column
    // belongs to the top/left blocks. Weights follow block areas.
    double score = 0.0;
    for (int qy = 0; qy < 2; ++qy)
        for (int qx = 0; qx < 2; ++qx) {
            int y0 = qy == 0 ? 0 : cy + 1, y1 = qy == 0 ? cy + 1 : h;
            int x0 = qx == 0 ? 0 : cx + 1, x1 = qx == 0 ? cx + 1 : w;
            std::vector<size_t> idx;
            for (int yy = y0; yy < y1; ++yy)
                for (int xx = x0; xx < x1; ++xx)
                    idx.push_back(static_cast<size_t>(yy) * w + xx);
            if (idx.empty()) continue;
            double weight = static_cast<double>(idx.size()) / (static_cast<double>(h) * w);
            score += weight * region_ssim(s.data(), y.data(), idx);
        }
    return score;
}

}  // namespace detail

/// Structural similarity: object-aware and region-aware terms blended by
/// alpha. Degenerate ground truths fall back to the mean-prediction
/// conventions (all-background rewards low output, all-foreground high).
inline double s_measure(const Map& s, const Map& y, double alpha = 0.5) {
    detail::check_pair(s, y);
    double u = detail::mean(y);
    if (u == 0.0) return 1.0 - detail::mean(s);
    if (u == 1.0) return detail::mean(s);
    double score = alpha * detail::s_object(s, y) + (1.0 - alpha) * detail::s_region(s, y);
    return std::max(0.0, std::min(1.0, score));
}

/// Enhanced-alignment measure of the adaptively binarized map: the mean of
/// ((1+xi)/2)^2 over pixels, where xi correlates the mean-centered maps.
inline double e_measure(const Map& s, const Map& y) {
    detail::check_pair(s, y);
    double t = detail::adaptive_threshold(s);
    Map b = s;
    for (auto& v : b.v) v = v >= t ? 1.0 : 0.0;
    if (detail::gt_empty(y)) {
        double acc = 0.0;
        for (double v : b.v) acc += 1.0 - v;
        return acc / static_cast<double>(b.size());
    }
    bool all_fg = true;
    for (double v : y.v) all_fg = all_fg && v != 0.0;
    if (all_fg) return detail::mean(b);
    double mu_b = detail::mean(b), mu_y = detail::mean(y);
    double acc = 0.0;
    for (size_t i = 0; i < b.size(); ++i) {
        double db = b.v[i] - mu_b;
        double dy = y.v[i] - mu_y;
        double xi = 2.0 * db * dy / (db * db + dy * dy + kEps);
        acc += (xi + 1.0) * (xi + 1.0) / 4.0;
    }
    return acc / static_cast<double>(b.size());
}

/// Per-image metrics averaged over the dataset; PR curves average pointwise
/// per threshold. Samples whose ground truth is empty are flagged and left
/// out of every average.
inline MetricReport evaluate_dataset(const std::vector<Map>& predictions,
                                     const std::vector<Map>& ground_truths) {
    if (predictions.size() != ground_truths.size())
        throw InputError("evaluate_dataset: " + std::to_string(predictions.size()) +
                         " predictions vs " + std::to_string(ground_truths.size()) +
                         " ground truths");
    MetricReport report;
    report.pr_curve.assign(kThresholds, PrPoint{});
    for (size_t i = 0; i < predictions.size(); ++i) {
        const Map& s = predictions[i];
        const Map& y = ground_truths[i];
        if (detail::gt_empty(y)) {
            std::cerr << "[mfsod] warning: sample " << i
                      << " has an empty ground truth, excluded from averaging\n";
            ++report.skipped;
            continue;
        }
        report.mae += mae(s, y);
        report.f_beta += f_measure(s, y);
        report.s_measure += s_measure(s, y);
        report.e_measure += e_measure(s, y);
        auto curve = pr_curve(s, y);
        for (int k = 0; k < kThresholds; ++k) {
            report.pr_curve[k].precision += curve[k].precision;
            report.pr_curve[k].recall += curve[k].recall;
        }
        ++report.images;
    }
    if (report.images == 0) throw InputError("evaluate_dataset: no valid samples");
    double n = report.images;
    report.mae /= n;
    report.f_beta /= n;
    report.s_measure /= n;
    report.e_measure /= n;
    for (auto& p : report.pr_curve) {
        p.precision /= n;
        p.recall /= n;
    }
    return report;
}

inline void write_report_json(const std::string& path, const MetricReport& r) {
    nlohmann::json j = {{"mae", r.mae},
                        {"f_beta", r.f_beta},
                        {"s_measure", r.s_measure},
                        {"e_measure", r.e_measure}};
    std::ofstream out(path);
    if (!out) throw InputError("cannot write report: " + path);
    out << j.dump(2) << "\n";
}

inline void write_report_csv(const std::string& path, const MetricReport& r) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write report: " + path);
    out << "mae,f_beta,s_measure,e_measure\n";
    out.precision(10);
    out << r.mae << "," << r.f_beta << "," << r.s_measure << "," << r.e_measure << "\n";
}

inline void write_pr_csv(const std::string& path, const MetricReport& r) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write PR curve: " + path);
    out << "threshold,precision,recall\n";
    out.precision(10);
    for (int k = 0; k < kThresholds; ++k)
        out << static_cast<double>(k) / kThresholds << "," << r.pr_curve[k].precision << ","
            << r.pr_curve[k].recall << "\n";
}

}  // namespace metrics
}  // namespace mfsod

#pragma once

// Salient-object-detection scores: MAE, F-measure (adaptive threshold,
// beta^2 = 0.3), weighted-F (dependency/distance weighted, beta^2 = 1),
// S-measure (object + centroid-split region structure), E-measure
// (enhanced alignment of mean-centered binary maps). Degenerate-mask
// conventions follow the standard evaluation toolbox and are frozen here.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddnet {

struct SaliencyMap {
    int h = 0, w = 0;
    std::vector<double> v;  // clamped to [0,1] on construction

    SaliencyMap() = default;
    SaliencyMap(int h_, int w_, std::vector<double> vals)
        : h(h_), w(w_), v(std::move(vals)) {
        if (v.size() != static_cast<std::size_t>(h) * w)
            throw std::invalid_argument("SaliencyMap: size mismatch");
        for (auto& x : v) x = std::min(1.0, std::max(0.0, x));
    }
    double mean() const {
        double s = 0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / v.size();
    }
};

struct GroundTruthMask {
    int h = 0, w = 0;
    std::vector<std::uint8_t> v;  // 0 or 1

    GroundTruthMask() = default;
    GroundTruthMask(int h_, int w_, std::vector<std::uint8_t> vals)
        : h(h_), w(w_), v(std::move(vals)) {
        if (v.size() != static_cast<std::size_t>(h) * w)
            throw std::invalid_argument("GroundTruthMask: size mismatch");
        for (auto& x : v) x = x ? 1 : 0;
    }
    std::size_t foreground() const {
        std::size_t n = 0;
        for (auto x : v) n += x;
        return n;
    }
};

struct MetricReport {
    double e_measure = 0, s_measure = 0, weighted_f = 0, f_measure = 0,
           mae = 0;
    int count = 0;
};

namespace metric_detail {

inline void check_dims(const SaliencyMap& s, const GroundTruthMask& g) {
    if (s.h != g.h || s.w != g.w)
        throw std::invalid_argument("metric: map/mask dimension mismatch");
}

inline double adaptive_threshold(const SaliencyMap& s) {
    return std::min(2.0 * s.mean(), 1.0);
}

inline std::vector<std::uint8_t> binarize(const SaliencyMap& s, double t) {
    std::vector<std::uint8_t> b(s.v.size());
    for (std::size_t i = 0; i < s.v.size(); ++i) b[i] = s.v[i] >= t ? 1 : 0;
    return b;
}

}  // namespace metric_detail

// ---- MAE ----------------------------------------------------------------

inline double mae(const SaliencyMap& s, const GroundTruthMask& g) {
    metric_detail::check_dims(s, g);
    double acc = 0;
    for (std::size_t i = 0; i < s.v.size(); ++i)
        acc += std::abs(s.v[i] - static_cast<double>(g.v[i]));
    return acc / s.v.size();
}

// ---- F-measure ----------------------------------------------------------

inline double f_measure(const SaliencyMap& s, const GroundTruthMask& g,
                        std::optional<double> fixed_threshold = std::nullopt) {
    metric_detail::check_dims(s, g);
    const double t = fixed_threshold ? *fixed_threshold
                                     : metric_detail::adaptive_threshold(s);
    const auto b = metric_detail::binarize(s, t);
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (b[i] && g.v[i]) ++tp;
        else if (b[i]) ++fp;
        else if (g.v[i]) ++fn;
    }
    if (g.foreground() == 0) return 0.0;   // all-background reference
    if (tp + fp == 0) return 0.0;          // no predicted positives
    const double precision = static_cast<double>(tp) / (tp + fp);
    const double recall = static_cast<double>(tp) / (tp + fn);
    constexpr double beta2 = 0.3;
    if (precision + recall == 0.0) return 0.0;
    return (1.0 + beta2) * precision * recall / (beta2 * precision + recall);
}

// ---- weighted F ---------------------------------------------------------

namespace metric_detail {

// Exact nearest-foreground search; ties resolved to the smallest row-major
// index (both this and the test oracle scan foreground in that order).
inline void nearest_foreground(const GroundTruthMask& g,
                               std::vector<double>& dist,
                               std::vector<std::size_t>& idx) {
    const std::size_t n = g.v.size();
    dist.assign(n, 0.0);
    idx.assign(n, 0);
    std::vector<int> fy, fx;
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x)
            if (g.v[static_cast<std::size_t>(y) * g.w + x]) {
                fy.push_back(y);
                fx.push_back(x);
            }
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * g.w + x;
            if (g.v[p]) {
                idx[p] = p;
                continue;
            }
            long best = std::numeric_limits<long>::max();
            std::size_t best_idx = 0;
            for (std::size_t k = 0; k < fy.size(); ++k) {
                const long dy = fy[k] - y, dx = fx[k] - x;
                const long d2 = dy * dy + dx * dx;
                if (d2 < best) {
                    best = d2;
                    best_idx = static_cast<std::size_t>(fy[k]) * g.w + fx[k];
                }
            }
            dist[p] = std::sqrt(static_cast<double>(best));
            idx[p] = best_idx;
        }
}

// 7x7 Gaussian, sigma 5, normalized, applied with zero padding.
inline std::vector<double> gauss7_sigma5(const std::vector<double>& src, int h,
                                         int w) {
    static const auto kernel = [] {
        std::array<double, 49> k{};
        double total = 0;
        for (int y = 0; y < 7; ++y)
            for (int x = 0; x < 7; ++x) {
                const double dy = y - 3, dx = x - 3;
                k[y * 7 + x] = std::exp(-(dy * dy + dx * dx) / (2.0 * 25.0));
                total += k[y * 7 + x];
            }
        for (auto& v : k) v /= total;
        return k;
    }();
    std::vector<double> out(src.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int ky = 0; ky < 7; ++ky) {
                const int sy = y + ky - 3;
                if (sy < 0 || sy >= h) continue;
                for (int kx = 0; kx < 7; ++kx) {
                    const int sx = x + kx - 3;
                    if (sx < 0 || sx >= w) continue;
                    acc += kernel[ky * 7 + kx] *
                           src[static_cast<std::size_t>(sy) * w + sx];
                }
            }
            out[static_cast<std::size_t>(y) * w + x] = acc;
        }
    return out;
}

}  // namespace metric_detail

inline double weighted_f(const SaliencyMap& s, const GroundTruthMask& g) {
    metric_detail::check_dims(s, g);
    const std::size_t nfg = g.foreground();
    if (nfg == 0) return 0.0;
    const std::size_t n = s.v.size();
    constexpr double eps = std::numeric_limits<double>::epsilon();

    std::vector<double> err(n);
    for (std::size_t i = 0; i < n; ++i)
        err[i] = std::abs(s.v[i] - static_cast<double>(g.v[i]));

    std::vector<double> dist;
    std::vector<std::size_t> nearest;
    metric_detail::nearest_foreground(g, dist, nearest);

    // background pixels take the error of their closest foreground pixel
    std::vector<double> err_t = err;
    for (std::size_t i = 0; i < n; ++i)
        if (!g.v[i]) err_t[i] = err[nearest[i]];

    const std::vector<double> smoothed =
        metric_detail::gauss7_sigma5(err_t, g.h, g.w);

    // dependency: a foreground error counts as the smaller of itself and
    // its smoothed neighborhood; distance attenuation on the background
    const double alpha = std::log(0.5) / 5.0;
    double sum_fg = 0, sum_bg = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (g.v[i]) {
            sum_fg += std::min(err[i], smoothed[i]);
        } else {
            const double b = 2.0 - std::exp(alpha * dist[i]);
            sum_bg += err[i] * b;
        }
    }

    const double tpw = static_cast<double>(nfg) - sum_fg;
    const double recall = 1.0 - sum_fg / static_cast<double>(nfg);
    const double precision = tpw / (eps + tpw + sum_bg);
    return 2.0 * recall * precision / (eps + recall + precision);
}

// ---- S-measure ----------------------------------------------------------

namespace metric_detail {

struct MeanStd {
    double mean = 0, sd = 0;  // sample standard deviation (N-1)
};

inline MeanStd mean_std(const std::vector<double>& vals) {
    MeanStd r;
    const std::size_t n = vals.size();
    if (n == 0) return r;
    for (double v : vals) r.mean += v;
    r.mean /= n;
    if (n < 2) return r;
    double acc = 0;
    for (double v : vals) acc += (v - r.mean) * (v - r.mean);
    r.sd = std::sqrt(acc / (n - 1));
    return r;
}

inline double object_score(const std::vector<double>& vals) {
    constexpr double eps = std::numeric_limits<double>::epsilon();
    const MeanStd ms = mean_std(vals);
    return 2.0 * ms.mean / (ms.mean * ms.mean + 1.0 + ms.sd + eps);
}

struct Block {
    int y0, y1, x0, x1;  // half-open
    std::size_t area() const {
        return static_cast<std::size_t>(std::max(0, y1 - y0)) *
               std::max(0, x1 - x0);
    }
};

// SSIM-style structural score of one block (sample variance/covariance).
inline double region_ssim(const SaliencyMap& s, const GroundTruthMask& g,
                          const Block& b) {
    constexpr double eps = std::numeric_limits<double>::epsilon();
    const std::size_t n = b.area();
    if (n == 0) return 0.0;
    double mx = 0, my = 0;
    for (int y = b.y0; y < b.y1; ++y)
        for (int x = b.x0; x < b.x1; ++x) {
            mx += s.v[static_cast<std::size_t>(y) * s.w + x];
            my += g.v[static_cast<std::size_t>(y) * g.w + x];
        }
    mx /= n;
    my /= n;
    double vx = 0, vy = 0, cxy = 0;
    for (int y = b.y0; y < b.y1; ++y)
        for (int x = b.x0; x < b.x1; ++x) {
            const double dx = s.v[static_cast<std::size_t>(y) * s.w + x] - mx;
            const double dy =
                static_cast<double>(g.v[static_cast<std::size_t>(y) * g.w + x]) -
                my;
            vx += dx * dx;
            vy += dy * dy;
            cxy += dx * dy;
        }
    if (n > 1) {
        vx /= n - 1;
        vy /= n - 1;
        cxy /= n - 1;
    } else {
        vx = vy = cxy = 0;
    }
    const double num = 4.0 * mx * my * cxy;
    const double den = (mx * mx + my * my) * (vx + vy);
    if (num != 0.0) return num / (den + eps);
    return den == 0.0 ? 1.0 : 0.0;
}

}  // namespace metric_detail

inline double s_measure(const SaliencyMap& s, const GroundTruthMask& g) {
    metric_detail::check_dims(s, g);
    const std::size_t nfg = g.foreground();
    const std::size_t n = g.v.size();
    if (nfg == 0) return 1.0 - s.mean();
    if (nfg == n) return s.mean();

    const double mu = static_cast<double>(nfg) / n;

    // object term: foreground on s, background on the complement of s
    std::vector<double> fg_vals, bg_vals;
    fg_vals.reserve(nfg);
    bg_vals.reserve(n - nfg);
    for (std::size_t i = 0; i < n; ++i) {
        if (g.v[i]) fg_vals.push_back(s.v[i]);
        else bg_vals.push_back(1.0 - s.v[i]);
    }
    const double s_object = mu * metric_detail::object_score(fg_vals) +
                            (1.0 - mu) * metric_detail::object_score(bg_vals);

    // region term: split at the foreground centroid, area-weighted
    double cy = 0, cx = 0;
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x)
            if (g.v[static_cast<std::size_t>(y) * g.w + x]) {
                cy += y;
                cx += x;
            }
    const int Y = static_cast<int>(std::lround(cy / nfg));
    const int X = static_cast<int>(std::lround(cx / nfg));
    const metric_detail::Block blocks[4] = {
        {0, Y + 1, 0, X + 1},
        {0, Y + 1, X + 1, g.w},
        {Y + 1, g.h, 0, X + 1},
        {Y + 1, g.h, X + 1, g.w},
    };
    double s_region = 0;
    for (const auto& b : blocks) {
        const double weight = static_cast<double>(b.area()) / n;
        if (weight > 0) s_region += weight * metric_detail::region_ssim(s, g, b);
    }

    constexpr double alpha = 0.5;
    const double score = alpha * s_object + (1.0 - alpha) * s_region;
    return std::min(1.0, std::max(0.0, score));
}

// ---- E-measure ----------------------------------------------------------

inline double e_measure(const SaliencyMap& s, const GroundTruthMask& g) {
    metric_detail::check_dims(s, g);
    const auto b = metric_detail::binarize(s, metric_detail::adaptive_threshold(s));
    const std::size_t n = b.size();
    double mean_b = 0;
    for (auto x : b) mean_b += x;
    mean_b /= n;

    const std::size_t nfg = g.foreground();
    if (nfg == 0) return 1.0 - mean_b;
    if (nfg == n) return mean_b;

    const double mean_g = static_cast<double>(nfg) / n;
    constexpr double eps = 1e-12;
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double phi_g = static_cast<double>(g.v[i]) - mean_g;
        const double phi_s = static_cast<double>(b[i]) - mean_b;
        const double xi =
            2.0 * phi_g * phi_s / (phi_g * phi_g + phi_s * phi_s + eps);
        acc += (xi + 1.0) * (xi + 1.0) / 4.0;
    }
    return acc / n;
}

// ---- aggregation --------------------------------------------------------

struct PairScore {
    std::string name;
    MetricReport scores;  // count == 1
};

inline MetricReport score_pair(const SaliencyMap& s, const GroundTruthMask& g) {
    MetricReport r;
    r.e_measure = e_measure(s, g);
    r.s_measure = s_measure(s, g);
    r.weighted_f = weighted_f(s, g);
    r.f_measure = f_measure(s, g);
    r.mae = mae(s, g);
    r.count = 1;
    return r;
}

struct NamedPair {
    std::string name;
    SaliencyMap map;
    GroundTruthMask mask;
};

inline MetricReport evaluate_pairs(const std::vector<NamedPair>& pairs,
                                   std::vector<PairScore>* per_pair = nullptr) {
    if (pairs.empty())
        throw std::invalid_argument("evaluate_pairs: empty pair set");
    MetricReport total;
    for (const auto& p : pairs) {
        MetricReport r = score_pair(p.map, p.mask);
        if (per_pair) per_pair->push_back({p.name, r});
        total.e_measure += r.e_measure;
        total.s_measure += r.s_measure;
        total.weighted_f += r.weighted_f;
        total.f_measure += r.f_measure;
        total.mae += r.mae;
        ++total.count;
    }
    total.e_measure /= total.count;
    total.s_measure /= total.count;
    total.weighted_f /= total.count;
    total.f_measure /= total.count;
    total.mae /= total.count;
    return total;
}

// CSV: per-pair rows followed by a mean row; column order E,S,Wf,F,MAE.
inline void write_report_csv(std::ostream& os,
                             const std::vector<PairScore>& rows,
                             const MetricReport& mean_report) {
    os << "name,E,S,Wf,F,MAE\n";
    auto line = [&os](const std::string& name, const MetricReport& r) {
        os << name << ',' << std::setprecision(9) << r.e_measure << ','
           << r.s_measure << ',' << r.weighted_f << ',' << r.f_measure << ','
           << r.mae << '\n';
    };
    for (const auto& row : rows) line(row.name, row.scores);
    line("mean", mean_report);
}

inline std::string format_report_table(const MetricReport& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "  E       S       Wf      F       MAE     (n=" << r.count << ")\n";
    os << "  " << r.e_measure << "  " << r.s_measure << "  " << r.weighted_f
       << "  " << r.f_measure << "  " << r.mae << "\n";
    return os.str();
}

}  // namespace ddnet

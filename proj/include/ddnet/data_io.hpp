#pragma once

// Image/mask ingestion, dataset manifests, synthetic desk-scale dataset
// generation, and saliency-map export. Codecs: PNG (read/write) and JPEG
// (read-only) via OpenCV; masks must be PNG.

#include <filesystem>
#include <fstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "ddnet/metrics.hpp"
#include "ddnet/tensor.hpp"

namespace ddnet {

namespace fs = std::filesystem;

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DatasetManifest {
    fs::path root;
    std::vector<std::pair<std::string, std::string>> pairs;  // image, mask
    std::string split;  // "train" or "test"
};

// One "image-rel-path<TAB>mask-rel-path" per line; '#' starts a comment.
inline DatasetManifest load_manifest(const fs::path& path,
                                     const std::string& split = "") {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open manifest: " + path.string());
    DatasetManifest m;
    m.root = path.parent_path();
    m.split = split;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError("manifest line missing tab: " + line);
        m.pairs.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
    for (const auto& [img, msk] : m.pairs) {
        if (!fs::exists(m.root / img))
            throw DataError("manifest references missing file: " + img);
        if (!fs::exists(m.root / msk))
            throw DataError("manifest references missing file: " + msk);
    }
    return m;
}

inline void write_manifest(const fs::path& path, const DatasetManifest& m) {
    std::ofstream os(path, std::ios::binary);  // LF line endings everywhere
    if (!os) throw DataError("cannot write manifest: " + path.string());
    for (const auto& [img, msk] : m.pairs) os << img << '\t' << msk << '\n';
}

// ---- loading ------------------------------------------------------------

// RGB image -> (1,3,h,w) tensor in [0,1] (x/255 exactly), bilinear-resized.
template <typename T>
Tensor4<T> load_image(const fs::path& path, int target_h, int target_w) {
    cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (img.empty()) throw DataError("cannot decode image: " + path.string());
    if (img.rows != target_h || img.cols != target_w)
        cv::resize(img, img, cv::Size(target_w, target_h), 0, 0,
                   cv::INTER_LINEAR);
    Tensor4<T> t(Shape{1, 3, target_h, target_w});
    for (int y = 0; y < target_h; ++y)
        for (int x = 0; x < target_w; ++x) {
            const cv::Vec3b px = img.at<cv::Vec3b>(y, x);  // BGR
            t.at(0, 0, y, x) = static_cast<T>(px[2]) / T(255);
            t.at(0, 1, y, x) = static_cast<T>(px[1]) / T(255);
            t.at(0, 2, y, x) = static_cast<T>(px[0]) / T(255);
        }
    return t;
}

// Mask -> binary grid; first channel, nearest-neighbor resize, threshold 128.
inline GroundTruthMask load_mask(const fs::path& path, int target_h = 0,
                                 int target_w = 0) {
    cv::Mat img = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (img.empty()) throw DataError("cannot decode mask: " + path.string());
    if (target_h > 0 && (img.rows != target_h || img.cols != target_w))
        cv::resize(img, img, cv::Size(target_w, target_h), 0, 0,
                   cv::INTER_NEAREST);
    std::vector<std::uint8_t> v(static_cast<std::size_t>(img.rows) * img.cols);
    for (int y = 0; y < img.rows; ++y)
        for (int x = 0; x < img.cols; ++x)
            v[static_cast<std::size_t>(y) * img.cols + x] =
                img.at<std::uint8_t>(y, x) >= 128 ? 1 : 0;
    return GroundTruthMask(img.rows, img.cols, std::move(v));
}

template <typename T>
std::pair<Tensor4<T>, GroundTruthMask> load_pair(const fs::path& image_path,
                                                 const fs::path& mask_path,
                                                 int target_size) {
    return {load_image<T>(image_path, target_size, target_size),
            load_mask(mask_path, target_size, target_size)};
}

inline SaliencyMap load_saliency(const fs::path& path) {
    cv::Mat img = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (img.empty())
        throw DataError("cannot decode saliency map: " + path.string());
    std::vector<double> v(static_cast<std::size_t>(img.rows) * img.cols);
    for (int y = 0; y < img.rows; ++y)
        for (int x = 0; x < img.cols; ++x)
            v[static_cast<std::size_t>(y) * img.cols + x] =
                img.at<std::uint8_t>(y, x) / 255.0;
    return SaliencyMap(img.rows, img.cols, std::move(v));
}

// 8-bit export, value = round(255*s) with round-half-up.
inline void save_saliency(const SaliencyMap& map, const fs::path& path) {
    cv::Mat img(map.h, map.w, CV_8UC1);
    for (int y = 0; y < map.h; ++y)
        for (int x = 0; x < map.w; ++x)
            img.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(
                std::lround(255.0 * map.v[static_cast<std::size_t>(y) * map.w + x]));
    if (!cv::imwrite(path.string(), img))
        throw DataError("cannot write: " + path.string());
}

inline SaliencyMap resize_map_bilinear(const SaliencyMap& m, int h, int w) {
    if (m.h == h && m.w == w) return m;
    cv::Mat src(m.h, m.w, CV_64FC1);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x)
            src.at<double>(y, x) = m.v[static_cast<std::size_t>(y) * m.w + x];
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(w, h), 0, 0, cv::INTER_LINEAR);
    std::vector<double> v(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            v[static_cast<std::size_t>(y) * w + x] = dst.at<double>(y, x);
    return SaliencyMap(h, w, std::move(v));
}

template <typename T>
SaliencyMap map_from_tensor(const Tensor4<T>& t, int n = 0, int c = 0) {
    const Shape& s = t.shape();
    std::vector<double> v(static_cast<std::size_t>(s.h) * s.w);
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x)
            v[static_cast<std::size_t>(y) * s.w + x] =
                static_cast<double>(t.at(n, c, y, x));
    return SaliencyMap(s.h, s.w, std::move(v));
}

template <typename T>
Tensor4<T> tensor_from_mask(const GroundTruthMask& g) {
    Tensor4<T> t(Shape{1, 1, g.h, g.w});
    for (std::size_t i = 0; i < g.v.size(); ++i)
        t.data()[i] = static_cast<T>(g.v[i]);
    return t;
}

// ---- synthetic dataset --------------------------------------------------

// Writes n image/mask PNG pairs: noisy background plus 1-3 bright ellipses,
// mask = exact ellipse union with foreground fraction in [0.02, 0.5].
// Deterministic per seed. Returns paths of the train/test manifests.
inline std::pair<fs::path, fs::path> synth_generate(int n, int size,
                                                    std::uint64_t seed,
                                                    const fs::path& out_dir) {
    if (n < 1) throw std::invalid_argument("synth_generate: n must be >= 1");
    if (size % 8 != 0)
        throw std::invalid_argument("synth_generate: size must be divisible by 8");
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    fs::create_directories(out_dir / "masks", ec);
    if (!fs::is_directory(out_dir / "images") ||
        !fs::is_directory(out_dir / "masks"))
        throw DataError("cannot create output directory: " + out_dir.string());

    std::mt19937 rng(static_cast<std::uint32_t>(seed));
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    DatasetManifest train, test;
    train.root = test.root = out_dir;
    train.split = "train";
    test.split = "test";

    for (int i = 0; i < n; ++i) {
        cv::Mat img(size, size, CV_8UC3);
        std::vector<std::uint8_t> mask(
            static_cast<std::size_t>(size) * size, 0);

        for (int attempt = 0;; ++attempt) {
            std::fill(mask.begin(), mask.end(), 0);
            const double bg = 0.10 + 0.20 * uni(rng);
            struct Ellipse {
                double cy, cx, a, b, theta, value;
            };
            std::vector<Ellipse> shapes;
            const int count = 1 + static_cast<int>(uni(rng) * 3.0) % 3;
            for (int e = 0; e < count; ++e) {
                Ellipse el;
                el.cy = size * (0.2 + 0.6 * uni(rng));
                el.cx = size * (0.2 + 0.6 * uni(rng));
                el.a = size * (0.06 + 0.14 * uni(rng));
                el.b = size * (0.06 + 0.14 * uni(rng));
                el.theta = 3.14159265358979 * uni(rng);
                el.value = 0.65 + 0.30 * uni(rng);
                shapes.push_back(el);
            }
            std::size_t fg = 0;
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    double value = bg + 0.08 * (uni(rng) - 0.5);
                    bool inside = false;
                    for (const auto& el : shapes) {
                        const double dy = y - el.cy, dx = x - el.cx;
                        const double u = (dx * std::cos(el.theta) +
                                          dy * std::sin(el.theta)) /
                                         el.a;
                        const double v = (-dx * std::sin(el.theta) +
                                          dy * std::cos(el.theta)) /
                                         el.b;
                        if (u * u + v * v <= 1.0) {
                            inside = true;
                            value = el.value + 0.06 * (uni(rng) - 0.5);
                        }
                    }
                    if (inside) {
                        mask[static_cast<std::size_t>(y) * size + x] = 1;
                        ++fg;
                    }
                    const int g = static_cast<int>(std::lround(
                        255.0 * std::min(1.0, std::max(0.0, value))));
                    img.at<cv::Vec3b>(y, x) = cv::Vec3b(
                        static_cast<std::uint8_t>(g),
                        static_cast<std::uint8_t>(g),
                        static_cast<std::uint8_t>(g));
                }
            const double frac = static_cast<double>(fg) / (size * size);
            if (frac >= 0.02 && frac <= 0.5) break;
            if (attempt > 1000)
                throw DataError("synth_generate: rejection loop stuck");
        }

        char stem[32];
        std::snprintf(stem, sizeof(stem), "sample_%04d", i);
        const std::string img_rel = std::string("images/") + stem + ".png";
        const std::string mask_rel = std::string("masks/") + stem + ".png";
        cv::imwrite((out_dir / img_rel).string(), img);
        cv::Mat mimg(size, size, CV_8UC1);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                mimg.at<std::uint8_t>(y, x) =
                    mask[static_cast<std::size_t>(y) * size + x] ? 255 : 0;
        cv::imwrite((out_dir / mask_rel).string(), mimg);

        // 80/20 split by index
        if (i % 5 == 4) test.pairs.emplace_back(img_rel, mask_rel);
        else train.pairs.emplace_back(img_rel, mask_rel);
    }

    const fs::path train_path = out_dir / "train.txt";
    const fs::path test_path = out_dir / "test.txt";
    write_manifest(train_path, train);
    write_manifest(test_path, test);
    return {train_path, test_path};
}

// ---- directory evaluation -----------------------------------------------

// Name-matched prediction/ground-truth pairs; predictions are bilinear
// resized to the mask's native size. Unmatched stems are an error.
inline std::vector<NamedPair> load_eval_pairs(const fs::path& pred_dir,
                                              const fs::path& gt_dir) {
    auto stems = [](const fs::path& dir) {
        std::vector<std::pair<std::string, fs::path>> out;
        if (!fs::is_directory(dir))
            throw DataError("not a directory: " + dir.string());
        for (const auto& e : fs::directory_iterator(dir)) {
            if (!e.is_regular_file()) continue;
            const auto ext = e.path().extension().string();
            if (ext == ".png" || ext == ".jpg" || ext == ".jpeg")
                out.emplace_back(e.path().stem().string(), e.path());
        }
        std::sort(out.begin(), out.end());
        return out;
    };
    auto preds = stems(pred_dir);
    auto gts = stems(gt_dir);

    std::vector<NamedPair> pairs;
    std::string unmatched;
    std::size_t pi = 0, gi = 0;
    while (pi < preds.size() || gi < gts.size()) {
        if (pi < preds.size() && gi < gts.size() &&
            preds[pi].first == gts[gi].first) {
            GroundTruthMask mask = load_mask(gts[gi].second);
            SaliencyMap map = resize_map_bilinear(
                load_saliency(preds[pi].second), mask.h, mask.w);
            pairs.push_back({preds[pi].first, std::move(map), std::move(mask)});
            ++pi;
            ++gi;
        } else if (gi >= gts.size() ||
                   (pi < preds.size() && preds[pi].first < gts[gi].first)) {
            unmatched += " " + preds[pi++].first;
        } else {
            unmatched += " " + gts[gi++].first;
        }
    }
    if (!unmatched.empty())
        throw DataError("unmatched stems:" + unmatched);
    if (pairs.empty()) throw DataError("no prediction/mask pairs found");
    return pairs;
}

}  // namespace ddnet

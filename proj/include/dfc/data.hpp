#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dfc/archive.hpp"
#include "dfc/image_io.hpp"
#include "dfc/pose.hpp"
#include "dfc/types.hpp"

namespace dfc {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Preprocessing

/// Center crop to crop_size x crop_size, bilinear resize (half-pixel
/// centres, edge clamped) to out_size, normalize to [-1, 1].
inline Image preprocess(const RawImage& raw, int crop_size = 512, int out_size = 256) {
    if (crop_size <= 0 || out_size <= 0) throw ConfigError("crop and output sizes must be positive");
    if (out_size % kDownsample != 0)
        throw ConfigError("output size must be a multiple of 8, got " + std::to_string(out_size));
    if (raw.height < crop_size || raw.width < crop_size)
        throw TooSmallError("image of " + std::to_string(raw.width) + "x" + std::to_string(raw.height) +
                            " is smaller than the " + std::to_string(crop_size) + " crop");
    const int y0 = (raw.height - crop_size) / 2, x0 = (raw.width - crop_size) / 2;
    const double scale = static_cast<double>(crop_size) / out_size;
    Tensor<float> px({3, out_size, out_size});
    const std::size_t plane = static_cast<std::size_t>(out_size) * out_size;
    for (int i = 0; i < out_size; ++i) {
        const double sy = std::clamp((i + 0.5) * scale - 0.5, 0.0, crop_size - 1.0);
        const int ya = static_cast<int>(std::floor(sy)), yb = std::min(ya + 1, crop_size - 1);
        const double fy = sy - ya;
        for (int j = 0; j < out_size; ++j) {
            const double sx = std::clamp((j + 0.5) * scale - 0.5, 0.0, crop_size - 1.0);
            const int xa = static_cast<int>(std::floor(sx)), xb = std::min(xa + 1, crop_size - 1);
            const double fx = sx - xa;
            for (int c = 0; c < 3; ++c) {
                const double top = (1 - fx) * raw.at(y0 + ya, x0 + xa, c) + fx * raw.at(y0 + ya, x0 + xb, c);
                const double bot = (1 - fx) * raw.at(y0 + yb, x0 + xa, c) + fx * raw.at(y0 + yb, x0 + xb, c);
                px[c * plane + static_cast<std::size_t>(i) * out_size + j] = static_cast<float>((1 - fy) * top + fy * bot);
            }
        }
    }
    return from_pixel_space(std::move(px));
}

// ---------------------------------------------------------------------------
// Dataset layout: <root>/<subject>/{train,test}/*.png, <root>/support/*.png

struct SubjectDataset {
    std::string subject;
    fs::path root;
    std::vector<fs::path> train;
    std::vector<fs::path> test;
    PngSize size;
};

struct SupportSet {
    fs::path root;
    std::vector<fs::path> images;
    PngSize size;
};

namespace detail {

inline bool is_png(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png";
}

// Sorted PNG files directly inside dir; other files are ignored.
inline std::vector<fs::path> list_pngs(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && is_png(e.path())) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

inline PngSize common_size(const std::vector<fs::path>& files, PngSize expect = {}) {
    for (const auto& f : files) {
        const PngSize s = png_size(f);
        if (expect == PngSize{}) expect = s;
        else if (s != expect)
            throw MixedSizeError(f.string() + " is " + std::to_string(s.width) + "x" + std::to_string(s.height) +
                                 ", expected " + std::to_string(expect.width) + "x" + std::to_string(expect.height));
    }
    return expect;
}

}  // namespace detail

/// Scans one subject directory holding train/ and test/.
inline SubjectDataset scan_dataset(const fs::path& subject_root) {
    const fs::path train_dir = subject_root / "train", test_dir = subject_root / "test";
    if (!fs::is_directory(train_dir) || !fs::is_directory(test_dir))
        throw LayoutError(subject_root.string() + " must contain train/ and test/ subdirectories");
    SubjectDataset ds;
    ds.subject = subject_root.filename().string();
    ds.root = subject_root;
    ds.train = detail::list_pngs(train_dir);
    ds.test = detail::list_pngs(test_dir);
    if (ds.train.empty()) throw LayoutError(train_dir.string() + " contains no PNG images");
    ds.size = detail::common_size(ds.test, detail::common_size(ds.train));
    return ds;
}

inline SupportSet scan_support(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw LayoutError("support directory " + dir.string() + " does not exist");
    SupportSet s;
    s.root = dir;
    s.images = detail::list_pngs(dir);
    if (s.images.empty()) throw EmptyDatasetError(dir.string() + " contains no PNG images");
    s.size = detail::common_size(s.images);
    return s;
}

/// Worker count for decoding: DFC_NUM_WORKERS if set and positive, else 1.
inline int num_workers() {
    if (const char* env = std::getenv("DFC_NUM_WORKERS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    return 1;
}

/// Decodes images in order; work is split across `workers` threads.
inline std::vector<Image> load_images(const std::vector<fs::path>& files, int workers = num_workers()) {
    std::vector<Image> out(files.size());
    workers = std::clamp(workers, 1, static_cast<int>(std::max<std::size_t>(1, files.size())));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    auto run = [&](int id) {
        try {
            for (std::size_t i = static_cast<std::size_t>(id); i < files.size(); i += static_cast<std::size_t>(workers))
                out[i] = load_image(files[i]);
        } catch (...) {
            errors[static_cast<std::size_t>(id)] = std::current_exception();
        }
    };
    if (workers == 1) run(0);
    else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(run, w);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

// ---------------------------------------------------------------------------
// Sampling

/// Two independent uniform indices in [0, n); they may coincide.
template <class Engine>
std::pair<std::size_t, std::size_t> sample_pair_indices(std::size_t n, Engine& rng) {
    if (n == 0) throw EmptyDatasetError("cannot sample a pair from an empty training split");
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    const std::size_t s = pick(rng);
    const std::size_t t = pick(rng);
    return {s, t};
}

/// (x_s, x_t) drawn uniformly and independently from the training images.
template <class Engine, class Img>
std::pair<const Img&, const Img&> sample_pair(const std::vector<Img>& train, Engine& rng) {
    const auto [s, t] = sample_pair_indices(train.size(), rng);
    return {train[s], train[t]};
}

template <class Engine, class Img>
const Img& sample_support(const std::vector<Img>& support, Engine& rng) {
    if (support.empty()) throw EmptyDatasetError("cannot sample from an empty support set");
    std::uniform_int_distribution<std::size_t> pick(0, support.size() - 1);
    return support[pick(rng)];
}

// ---------------------------------------------------------------------------
// Fingerprints

/// One line per PNG below root, sorted by relative path: "<sha256>  <relpath>".
inline std::string dataset_fingerprint(const fs::path& root) {
    std::vector<std::pair<std::string, fs::path>> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file() && detail::is_png(e.path()))
            files.emplace_back(fs::relative(e.path(), root).generic_string(), e.path());
    std::sort(files.begin(), files.end());
    std::ostringstream os;
    for (const auto& [rel, path] : files) os << hex(sha256(read_file_bytes(path))) << "  " << rel << '\n';
    return os.str();
}

/// Fingerprint of the files a training run reads (train split and support set).
inline std::string training_fingerprint(const SubjectDataset& ds, const SupportSet* support) {
    std::ostringstream os;
    for (const auto& p : ds.train) os << hex(sha256(read_file_bytes(p))) << "  " << ds.subject << "/train/"
                                      << p.filename().generic_string() << '\n';
    if (support)
        for (const auto& p : support->images)
            os << hex(sha256(read_file_bytes(p))) << "  support/" << p.filename().generic_string() << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// Synthetic stick-figure subjects

/// Appearance of one synthetic subject: colours in [-1, 1] RGB chosen off
/// the joint-marker lattice, plus a smooth background texture.
struct SubjectStyle {
    std::array<double, 3> background{};
    std::array<double, 3> body{};
    std::array<double, 4> texture{};  // amplitude, x frequency, y frequency, phase
    double limb_width = 0.06;         // fraction of the image size
    double joint_radius = 1.0 / 32;   // fraction of the image size
};

inline SubjectStyle random_style(std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_int_distribution<int> bit(0, 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SubjectStyle s;
    for (int c = 0; c < 3; ++c) s.background[c] = bit(rng) ? 0.5 : -0.5;
    do {
        for (int c = 0; c < 3; ++c) s.body[c] = bit(rng) ? 0.5 : -0.5;
    } while (s.body == s.background);
    s.texture = {0.06 + 0.04 * u(rng), 1.0 + 2.0 * u(rng), 1.0 + 2.0 * u(rng), 6.283185307179586 * u(rng)};
    s.limb_width = 0.05 + 0.02 * u(rng);
    return s;
}

/// A random upright pose: torso position, limb angles and head turn vary.
inline SyntheticSkeleton random_skeleton(Rng& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    auto polar = [](Point2 from, double len, double angle) {
        return Point2{from.x + len * std::sin(angle), from.y + len * std::cos(angle)};
    };
    SyntheticSkeleton s;
    auto& j = s.joints;
    const Point2 neck{0.5 + 0.12 * u(rng), 0.27 + 0.03 * u(rng)};
    const double lean = 0.12 * u(rng);
    j[1] = neck;
    j[2] = {neck.x - 0.11, neck.y + 0.01};
    j[5] = {neck.x + 0.11, neck.y + 0.01};
    // Arms hang down (angle 0) and swing outwards by up to ~100 degrees.
    const double ra = -0.2 - 1.4 * (0.5 + 0.5 * u(rng)), la = 0.2 + 1.4 * (0.5 + 0.5 * u(rng));
    j[3] = polar(j[2], 0.14, ra);
    j[4] = polar(j[3], 0.13, ra + 0.8 * u(rng));
    j[6] = polar(j[5], 0.14, la);
    j[7] = polar(j[6], 0.13, la + 0.8 * u(rng));
    const Point2 pelvis = polar(neck, 0.28, lean);
    j[8] = {pelvis.x - 0.06, pelvis.y};
    j[11] = {pelvis.x + 0.06, pelvis.y};
    const double rl = -0.05 - 0.45 * (0.5 + 0.5 * u(rng)), ll = 0.05 + 0.45 * (0.5 + 0.5 * u(rng));
    j[9] = polar(j[8], 0.17, rl);
    j[10] = polar(j[9], 0.16, rl + 0.3 * u(rng));
    j[12] = polar(j[11], 0.17, ll);
    j[13] = polar(j[12], 0.16, ll + 0.3 * u(rng));
    const double turn = 0.03 * u(rng);
    j[0] = {neck.x + turn, neck.y - 0.12};
    j[14] = {j[0].x - 0.04, j[0].y - 0.03};
    j[15] = {j[0].x + 0.04, j[0].y - 0.03};
    j[16] = {j[0].x - 0.08, j[0].y - 0.01};
    j[17] = {j[0].x + 0.08, j[0].y - 0.01};
    for (auto& p : j) {
        p.x = std::clamp(p.x, 0.03, 0.97);
        p.y = std::clamp(p.y, 0.03, 0.97);
    }
    return s;
}

inline double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
    const double dx = bx - ax, dy = by - ay;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(px - (ax + t * dx), py - (ay + t * dy));
}

/// Textured background, limbs in the body colour, joint markers in the
/// marker palette. Hard edges; deterministic.
inline Image render_stick_figure(const SyntheticSkeleton& skel, const SubjectStyle& style, int size) {
    Tensor<float> t({3, size, size});
    const std::size_t plane = static_cast<std::size_t>(size) * size;
    const double half_width = 0.5 * style.limb_width * size;
    const double radius = std::max(1.5, style.joint_radius * size);
    const auto& palette = joint_palette();
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
            const double px = j + 0.5, py = i + 0.5;
            const double u = px / size, v = py / size;
            std::array<double, 3> color = style.background;
            const double tex = style.texture[0] * std::sin(6.283185307179586 * (style.texture[1] * u) + style.texture[3]) *
                               std::cos(6.283185307179586 * (style.texture[2] * v));
            for (auto& c : color) c += tex;
            for (const auto& [a, b] : kLimbs) {
                if (a == 2 && b == 16) continue;  // face-to-shoulder affinity is not drawn
                if (segment_distance(px, py, skel.joints[a].x * size, skel.joints[a].y * size, skel.joints[b].x * size,
                                     skel.joints[b].y * size) <= half_width) {
                    color = style.body;
                    break;
                }
            }
            for (int k = 0; k < kJoints; ++k)
                if (std::hypot(px - skel.joints[k].x * size, py - skel.joints[k].y * size) <= radius) {
                    for (int c = 0; c < 3; ++c) color[c] = palette[static_cast<std::size_t>(k)][c];
                    break;
                }
            for (int c = 0; c < 3; ++c)
                t[c * plane + static_cast<std::size_t>(i) * size + j] = static_cast<float>(std::clamp(color[c], -1.0, 1.0));
        }
    return validate_image(std::move(t));
}

struct SyntheticDatasetOptions {
    int subjects = 1;
    int train_per_subject = 8;
    int test_per_subject = 4;
    int support_images = 8;
    int size = 64;
    std::uint64_t seed = 0;
};

/// Writes <root>/subject<k>/{train,test}/NNNN.png and <root>/support/NNNN.png.
/// Support images use their own subject styles.
inline void write_synthetic_dataset(const fs::path& root, const SyntheticDatasetOptions& opt) {
    if (opt.size % kDownsample != 0) throw ConfigError("synthetic image size must be a multiple of 8");
    Rng rng(opt.seed);
    auto name = [](int i) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%04d.png", i);
        return std::string(buf);
    };
    for (int s = 0; s < opt.subjects; ++s) {
        const SubjectStyle style = random_style(opt.seed * 1000 + static_cast<std::uint64_t>(s));
        const fs::path dir = root / ("subject" + std::to_string(s));
        for (const char* split : {"train", "test"}) {
            fs::create_directories(dir / split);
            const int n = std::string(split) == "train" ? opt.train_per_subject : opt.test_per_subject;
            for (int i = 0; i < n; ++i) save_image(dir / split / name(i), render_stick_figure(random_skeleton(rng), style, opt.size));
        }
    }
    if (opt.support_images > 0) {
        fs::create_directories(root / "support");
        for (int i = 0; i < opt.support_images; ++i) {
            const SubjectStyle style = random_style(opt.seed * 1000 + 500 + static_cast<std::uint64_t>(i));
            save_image(root / "support" / name(i), render_stick_figure(random_skeleton(rng), style, opt.size));
        }
    }
}

}  // namespace dfc

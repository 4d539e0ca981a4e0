#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfc/data.hpp"
#include "dfc/metrics.hpp"
#include "dfc/pose.hpp"
#include "dfc/training.hpp"

namespace dfc {

// ---------------------------------------------------------------------------
// Nearest-neighbour baseline

/// Estimator output of one image flattened to (heatmaps, PAFs).
template <class T>
std::vector<double> pose_signature(const BasicImage<T>& img, const PoseEstimator<T>& est) {
    NoGradGuard guard;
    const PoseMaps<T> maps = estimate_pose(img, est);
    std::vector<double> out;
    out.reserve(maps.heatmaps.value().numel() + maps.pafs.value().numel());
    for (T v : maps.heatmaps.value().values()) out.push_back(static_cast<double>(v));
    for (T v : maps.pafs.value().values()) out.push_back(static_cast<double>(v));
    return out;
}

inline double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("pose signatures differ in length");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

/// Training-split pose signatures, in the split's sorted order.
template <class T>
class PoseIndex {
public:
    PoseIndex(const std::vector<BasicImage<T>>& train, const PoseEstimator<T>& est) : est_(&est) {
        if (train.empty()) throw EmptyDatasetError("nearest-neighbour baseline needs a nonempty training split");
        for (const auto& img : train) signatures_.push_back(pose_signature(img, est));
    }

    /// Index of the closest training pose; ties go to the lowest index.
    std::size_t nearest(const BasicImage<T>& x_s) const {
        const auto q = pose_signature(x_s, *est_);
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < signatures_.size(); ++i) {
            const double d = squared_distance(q, signatures_[i]);
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        return best;
    }

    std::size_t size() const noexcept { return signatures_.size(); }

private:
    const PoseEstimator<T>* est_;
    std::vector<std::vector<double>> signatures_;
};

/// The training image whose estimated pose is closest to that of x_s.
template <class T>
const BasicImage<T>& nn_baseline(const BasicImage<T>& x_s, const std::vector<BasicImage<T>>& train,
                                 const PoseEstimator<T>& est) {
    return train[PoseIndex<T>(train, est).nearest(x_s)];
}

// ---------------------------------------------------------------------------
// Reports

struct MetricRow {
    std::string path;
    double mse = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct MetricReport {
    std::string subject;
    std::vector<MetricRow> rows;
    double mean_mse = 0.0;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;

    /// Arithmetic means of the rows; any infinite PSNR makes the mean infinite.
    void summarize() {
        mean_mse = mean_psnr = mean_ssim = 0.0;
        if (rows.empty()) return;
        for (const auto& r : rows) {
            mean_mse += r.mse;
            mean_psnr += r.psnr;
            mean_ssim += r.ssim;
        }
        const double n = static_cast<double>(rows.size());
        mean_mse /= n;
        mean_psnr /= n;
        mean_ssim /= n;
    }
};

inline std::string format_metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

inline std::string report_csv(const MetricReport& r) {
    std::ostringstream os;
    os << "path,mse,psnr,ssim\n";
    for (const auto& row : r.rows)
        os << row.path << ',' << format_metric(row.mse) << ',' << format_metric(row.psnr) << ',' << format_metric(row.ssim)
           << '\n';
    return os.str();
}

inline std::string report_summary_json(const MetricReport& r) {
    auto num = [](double v) -> nlohmann::json {
        if (std::isfinite(v)) return v;
        return format_metric(v);
    };
    nlohmann::json j;
    j["subjects"][r.subject] = {{"count", r.rows.size()},
                                {"mse", num(r.mean_mse)},
                                {"psnr", num(r.mean_psnr)},
                                {"ssim", num(r.mean_ssim)}};
    return j.dump(2) + "\n";
}

/// Writes `<report>` (CSV) and `<report>.json` (summary).
inline void write_report(const std::filesystem::path& report, const MetricReport& r) {
    write_file_atomic(report, report_csv(r));
    write_file_atomic(report.string() + ".json", report_summary_json(r));
}

// ---------------------------------------------------------------------------
// Evaluation

/// Scores each synthesized image against its ground truth. Metric
/// computation runs on `workers` threads; row order follows the input.
template <class T>
MetricReport score_pairs(const std::string& subject, const std::vector<std::string>& paths,
                         const std::vector<BasicImage<T>>& synthesized, const std::vector<BasicImage<T>>& truth,
                         int workers = num_workers()) {
    if (paths.size() != synthesized.size() || truth.size() != synthesized.size())
        throw ShapeError("score_pairs: mismatched list lengths");
    MetricReport report;
    report.subject = subject;
    report.rows.resize(paths.size());
    workers = std::clamp(workers, 1, static_cast<int>(std::max<std::size_t>(1, paths.size())));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    auto run = [&](int id) {
        try {
            for (std::size_t i = static_cast<std::size_t>(id); i < paths.size(); i += static_cast<std::size_t>(workers)) {
                const double m = mse(synthesized[i], truth[i]);
                report.rows[i] = {paths[i], m, psnr_from_mse(m), ssim(synthesized[i], truth[i])};
            }
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
    report.summarize();
    return report;
}

/// Model evaluation: every test image is the pose source and ground truth;
/// the appearance image is a training image drawn with a seeded stream.
template <class T>
MetricReport evaluate_model(Trainer<T>& model, const std::string& subject, const std::vector<std::string>& test_paths,
                            const std::vector<BasicImage<T>>& test, const std::vector<BasicImage<T>>& train,
                            std::uint64_t seed = 0) {
    if (test.empty()) throw EmptyDatasetError("test split is empty");
    if (train.empty()) throw EmptyDatasetError("training split is empty");
    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
    std::vector<BasicImage<T>> out;
    for (const auto& x_s : test) out.push_back(model.infer(x_s, train[pick(rng)]));
    return score_pairs(subject, test_paths, out, test);
}

/// Baseline evaluation: the prediction for each test image is its
/// nearest training pose.
template <class T>
MetricReport evaluate_baseline(const PoseEstimator<T>& est, const std::string& subject,
                               const std::vector<std::string>& test_paths, const std::vector<BasicImage<T>>& test,
                               const std::vector<BasicImage<T>>& train) {
    if (test.empty()) throw EmptyDatasetError("test split is empty");
    const PoseIndex<T> index(train, est);
    std::vector<BasicImage<T>> out;
    for (const auto& x_s : test) out.push_back(train[index.nearest(x_s)]);
    return score_pairs(subject, test_paths, out, test);
}

/// Mean pixel-scale MSE of x_s against G(M(x_s), S(x_t)) over all ordered
/// pairs of `images`, in inference mode.
template <class T>
double reconstruction_mse(Trainer<T>& model, const std::vector<BasicImage<T>>& images) {
    if (images.empty()) throw EmptyDatasetError("reconstruction_mse: no images");
    double s = 0.0;
    for (const auto& a : images)
        for (const auto& b : images) s += mse(model.infer(a, b), a);
    return s / static_cast<double>(images.size() * images.size());
}

}  // namespace dfc

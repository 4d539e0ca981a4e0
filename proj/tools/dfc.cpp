// Command-line front end: prepare-data, train, infer, eval, baseline-nn.
//
// Exit codes: 0 success, 2 invalid arguments or configuration, 3 data or
// runtime failure.

#include <CLI11.hpp>

#include <atomic>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dfc/dfc.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

/// Problems with the invocation itself, detected before any work.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

bool dir_has_entries(const fs::path& p) { return fs::is_directory(p) && !fs::is_empty(p); }

void refuse_overwrite(const fs::path& p, bool force, const char* flag) {
    if (force) return;
    if (fs::is_directory(p) ? dir_has_entries(p) : fs::exists(p))
        throw UsageError(std::string(flag) + " " + p.string() + " already exists; pass --force to overwrite");
}

void require_file(const fs::path& p, const char* flag) {
    if (!fs::is_regular_file(p)) throw UsageError(std::string(flag) + " " + p.string() + " is not a file");
}

void require_dir(const fs::path& p, const char* flag) {
    if (!fs::is_directory(p)) throw UsageError(std::string(flag) + " " + p.string() + " is not a directory");
}

std::vector<std::string> relative_names(const std::vector<fs::path>& files, const fs::path& root) {
    std::vector<std::string> out;
    for (const auto& f : files) out.push_back(fs::relative(f, root).generic_string());
    return out;
}

void print_summary(const dfc::MetricReport& r) {
    std::cout << r.subject << ": " << r.rows.size() << " images, mse " << dfc::format_metric(r.mean_mse) << ", psnr "
              << dfc::format_metric(r.mean_psnr) << ", ssim " << dfc::format_metric(r.mean_ssim) << '\n';
}

// -- prepare-data -------------------------------------------------------------

struct PrepareArgs {
    fs::path input, output;
    int crop = 512;
    int size = 256;
    bool force = false;
};

void run_prepare(const PrepareArgs& a) {
    require_dir(a.input, "--input");
    if (a.size <= 0 || a.size % dfc::kDownsample != 0)
        throw UsageError("--size must be a positive multiple of 8, got " + std::to_string(a.size));
    if (a.crop <= 0) throw UsageError("--crop must be positive");
    refuse_overwrite(a.output, a.force, "--output");

    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(a.input))
        if (e.is_regular_file() && dfc::detail::is_png(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw dfc::EmptyDatasetError(a.input.string() + " contains no PNG images");

    // Each worker takes every n-th file; the first failure wins.
    const int workers = std::clamp(dfc::num_workers(), 1, static_cast<int>(files.size()));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    auto run = [&](int id) {
        try {
            for (std::size_t i = static_cast<std::size_t>(id); i < files.size(); i += static_cast<std::size_t>(workers)) {
                const fs::path dst = a.output / fs::relative(files[i], a.input);
                fs::create_directories(dst.parent_path());
                dfc::save_image(dst, dfc::preprocess(dfc::read_png(files[i]), a.crop, a.size));
            }
        } catch (...) {
            errors[static_cast<std::size_t>(id)] = std::current_exception();
        }
    };
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(run, w);
    run(0);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    const std::string fp = dfc::dataset_fingerprint(a.output);
    dfc::write_file_atomic(a.output / "fingerprint.txt", fp);
    std::cout << "prepared " << files.size() << " images in " << a.output.string() << '\n';
}

// -- train --------------------------------------------------------------------

struct TrainArgs {
    fs::path config, data, support, out;
    std::string subject;
    std::optional<std::uint64_t> seed;
    bool force = false;
};

void run_train(const TrainArgs& a) {
    require_file(a.config, "--config");
    dfc::ModelConfig cfg;
    try {
        cfg = dfc::load_config(a.config.string());
        if (a.seed) cfg.rng_seed = *a.seed;
    } catch (const dfc::ConfigError& e) {
        throw UsageError(e.what());
    }
    if (cfg.flags.use_support && a.support.empty())
        throw UsageError("the config enables use_support, so --support is required");
    if (!cfg.flags.use_support && !a.support.empty())
        std::cerr << "note: use_support is off; ignoring --support\n";
    require_dir(a.data / a.subject, "--data/--subject");
    refuse_overwrite(a.out, a.force, "--out");

    const dfc::SubjectDataset ds = dfc::scan_dataset(a.data / a.subject);
    std::optional<dfc::SupportSet> sup;
    if (cfg.flags.use_support) sup = dfc::scan_support(a.support);
    const std::vector<dfc::Image> train_images = dfc::load_images(ds.train);
    std::vector<dfc::Image> support_images;
    if (sup) support_images = dfc::load_images(sup->images);

    dfc::Trainer<float> trainer(cfg);
    dfc::TrainOptions opt;
    opt.out_dir = a.out;
    opt.fingerprint = dfc::training_fingerprint(ds, sup ? &*sup : nullptr);
    const long every = std::max(1L, cfg.total_iterations / 20);
    opt.on_iteration = [&](std::int64_t it, const dfc::LossReport& r) {
        if (it % every == 0 || it == cfg.total_iterations)
            std::cerr << "iteration " << it << "/" << cfg.total_iterations << "  full " << r.full << '\n';
    };
    dfc::train(trainer, train_images, sup ? &support_images : nullptr, opt);
    std::cout << "wrote " << (a.out / "final.dfcn").string() << '\n';
}

// -- infer --------------------------------------------------------------------

struct InferArgs {
    fs::path checkpoint, source, target, out;
    bool force = false;
};

void run_infer(const InferArgs& a) {
    require_file(a.checkpoint, "--checkpoint");
    require_file(a.source, "--source");
    require_file(a.target, "--target");
    refuse_overwrite(a.out, a.force, "--out");
    const dfc::Checkpoint ckpt = dfc::load_checkpoint(a.checkpoint);
    dfc::save_image(a.out, dfc::infer(ckpt, dfc::load_image(a.source), dfc::load_image(a.target)));
}

// -- eval / baseline-nn -------------------------------------------------------

struct EvalArgs {
    fs::path checkpoint, data, report, config;
    std::uint64_t seed = 0;
    bool force = false;
};

void run_eval(const EvalArgs& a) {
    require_file(a.checkpoint, "--checkpoint");
    require_dir(a.data, "--data");
    refuse_overwrite(a.report, a.force, "--report");
    dfc::Trainer<float> model = dfc::Trainer<float>::from_checkpoint(dfc::load_checkpoint(a.checkpoint));
    const dfc::SubjectDataset ds = dfc::scan_dataset(a.data);
    if (ds.test.empty()) throw dfc::EmptyDatasetError((a.data / "test").string() + " contains no PNG images");
    const auto report = dfc::evaluate_model(model, ds.subject, relative_names(ds.test, ds.root),
                                            dfc::load_images(ds.test), dfc::load_images(ds.train), a.seed);
    dfc::write_report(a.report, report);
    print_summary(report);
}

void run_baseline(const EvalArgs& a) {
    require_dir(a.data, "--data");
    dfc::ModelConfig cfg;
    if (!a.config.empty()) {
        require_file(a.config, "--config");
        try {
            cfg = dfc::load_config(a.config.string());
        } catch (const dfc::ConfigError& e) {
            throw UsageError(e.what());
        }
    }
    refuse_overwrite(a.report, a.force, "--report");
    const dfc::SubjectDataset ds = dfc::scan_dataset(a.data);
    if (ds.test.empty()) throw dfc::EmptyDatasetError((a.data / "test").string() + " contains no PNG images");
    const auto est = dfc::make_pose_estimator<float>(cfg);
    const auto report = dfc::evaluate_baseline(*est, ds.subject, relative_names(ds.test, ds.root),
                                               dfc::load_images(ds.test), dfc::load_images(ds.train));
    dfc::write_report(a.report, report);
    print_summary(report);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pose transfer with disentangled pose and appearance features"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    PrepareArgs prep;
    auto* p = app.add_subcommand("prepare-data", "Center-crop and resize a directory tree of PNG frames");
    p->add_option("--input", prep.input, "Raw frames, any layout")->required();
    p->add_option("--output", prep.output, "Destination; mirrors the input tree")->required();
    p->add_option("--crop", prep.crop, "Center crop side")->capture_default_str();
    p->add_option("--size", prep.size, "Output side, multiple of 8")->capture_default_str();
    p->add_flag("--force", prep.force, "Overwrite a non-empty output directory");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train one subject's model");
    t->add_option("--config", tr.config, "key = value config file")->required();
    t->add_option("--subject", tr.subject, "Subject directory name under --data")->required();
    t->add_option("--data", tr.data, "Dataset root holding <subject>/{train,test}")->required();
    t->add_option("--support", tr.support, "Directory of support-set images");
    t->add_option("--out", tr.out, "Directory for checkpoints and the training log")->required();
    t->add_option("--seed", tr.seed, "Override rng_seed from the config");
    t->add_flag("--force", tr.force, "Write into a non-empty --out");

    InferArgs inf;
    auto* i = app.add_subcommand("infer", "Render the source pose with the target's appearance");
    i->add_option("--checkpoint", inf.checkpoint)->required();
    i->add_option("--source", inf.source, "Image giving the pose")->required();
    i->add_option("--target", inf.target, "Image giving the appearance")->required();
    i->add_option("--out", inf.out, "Output PNG")->required();
    i->add_flag("--force", inf.force, "Overwrite --out");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Score a model on a subject's test split");
    e->add_option("--checkpoint", ev.checkpoint)->required();
    e->add_option("--data", ev.data, "Subject directory holding train/ and test/")->required();
    e->add_option("--report", ev.report, "CSV report; a .json summary is written next to it")->required();
    e->add_option("--seed", ev.seed, "Seed for picking appearance images")->capture_default_str();
    e->add_flag("--force", ev.force, "Overwrite --report");

    EvalArgs bl;
    auto* b = app.add_subcommand("baseline-nn", "Score the nearest-training-pose baseline");
    b->add_option("--data", bl.data, "Subject directory holding train/ and test/")->required();
    b->add_option("--report", bl.report, "CSV report; a .json summary is written next to it")->required();
    b->add_option("--config", bl.config, "Config selecting the pose estimator");
    b->add_flag("--force", bl.force, "Overwrite --report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& err) {
        return app.exit(err);
    } catch (const CLI::CallForAllHelp& err) {
        return app.exit(err);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return kExitUsage;
    }

    try {
        if (p->parsed()) run_prepare(prep);
        else if (t->parsed()) run_train(tr);
        else if (i->parsed()) run_infer(inf);
        else if (e->parsed()) run_eval(ev);
        else if (b->parsed()) run_baseline(bl);
        return 0;
    } catch (const UsageError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kExitUsage;
    } catch (const dfc::ConfigError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kExitRuntime;
    }
}

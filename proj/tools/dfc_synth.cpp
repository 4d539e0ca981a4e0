// Writes a synthetic stick-figure dataset in the layout the trainer reads:
// <out>/subject<k>/{train,test}/NNNN.png and <out>/support/NNNN.png.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "dfc/data.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Generate a synthetic stick-figure dataset"};
    std::filesystem::path out;
    dfc::SyntheticDatasetOptions opt;
    bool force = false;
    app.add_option("--out", out, "Dataset root")->required();
    app.add_option("--subjects", opt.subjects, "Number of subjects")->capture_default_str()->check(CLI::PositiveNumber);
    app.add_option("--train", opt.train_per_subject, "Training frames per subject")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    app.add_option("--test", opt.test_per_subject, "Test frames per subject")->capture_default_str()->check(CLI::NonNegativeNumber);
    app.add_option("--support", opt.support_images, "Support-set images")->capture_default_str()->check(CLI::NonNegativeNumber);
    app.add_option("--size", opt.size, "Image side, multiple of 8")->capture_default_str();
    app.add_option("--seed", opt.seed, "Generator seed")->capture_default_str();
    app.add_flag("--force", force, "Write into a non-empty directory");
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    if (opt.size < 8 || opt.size % 8 != 0) {
        std::cerr << "error: --size must be a positive multiple of 8\n";
        return 2;
    }
    if (!force && std::filesystem::is_directory(out) && !std::filesystem::is_empty(out)) {
        std::cerr << "error: " << out.string() << " is not empty; pass --force to write into it\n";
        return 2;
    }
    try {
        dfc::write_synthetic_dataset(out, opt);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    std::cout << "wrote " << opt.subjects << " subject(s) to " << out.string() << '\n';
    return 0;
}

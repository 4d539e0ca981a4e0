#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <unistd.h>

#include "dfc/eval.hpp"
#include "dfc/training.hpp"

using namespace dfc;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config(std::uint64_t seed = 0, int row = 7) {
    ModelConfig cfg;
    cfg.image_size = 64;
    cfg.base_channels = 2;
    cfg.total_iterations = 3;
    cfg.rng_seed = seed;
    cfg.flags = ablation_row(row);
    cfg.checkpoint_every = 2;
    return cfg;
}

std::vector<Image> figures(int n, std::uint64_t seed, bool shared_style = true) {
    Rng rng(seed);
    std::vector<Image> out;
    for (int i = 0; i < n; ++i)
        out.push_back(render_stick_figure(random_skeleton(rng), random_style(shared_style ? seed : seed + 100 + i), 64));
    return out;
}

Var<float> batch(const Image& img) { return img.as_batch(); }

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = fs::temp_directory_path() / ("dfc_train_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

std::string frozen_digest(Trainer<float>& tr) {
    std::string bytes;
    for (const auto* t : tr.estimator().frozen_weights())
        bytes.append(reinterpret_cast<const char*>(t->data()), t->numel() * sizeof(float));
    for (const auto* t : tr.extractor().frozen_weights())
        bytes.append(reinterpret_cast<const char*>(t->data()), t->numel() * sizeof(float));
    return hex(sha256(bytes));
}

}  // namespace

TEST(Adam, MatchesHandComputedSteps) {
    auto p = Var<double>::parameter(Tensor<double>({2}, std::vector<double>{1.0, -2.0}));
    Adam<double> opt({{"p", p}}, 0.1, 0.5, 0.999);
    double m[2] = {0, 0}, v[2] = {0, 0}, w[2] = {1.0, -2.0};
    for (int t = 1; t <= 3; ++t) {
        opt.zero_grad();
        backward(sum(square(p)));
        opt.step();
        for (int i = 0; i < 2; ++i) {
            const double g = 2 * w[i];
            m[i] = 0.5 * m[i] + 0.5 * g;
            v[i] = 0.999 * v[i] + 0.001 * g * g;
            const double mh = m[i] / (1 - std::pow(0.5, t)), vh = v[i] / (1 - std::pow(0.999, t));
            w[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
            EXPECT_NEAR(p.value()[i], w[i], 1e-12);
        }
    }
    EXPECT_EQ(opt.steps(), 3);
}

TEST(Trainer, ParameterPartitionIsExact) {
    Trainer<float> tr(tiny_config());
    std::set<std::string> g, d, all;
    for (const auto& [n, p] : tr.generator_optimizer().params()) g.insert(n);
    for (const auto& [n, p] : tr.critic_optimizer().params()) d.insert(n);
    Visitor<float> v;
    v.param = [&](const std::string& n, Var<float>&) { all.insert(n); };
    tr.networks().visit(v);
    for (const auto& n : g) {
        EXPECT_EQ(d.count(n), 0u) << n;
        EXPECT_TRUE(n.rfind("refiner.", 0) == 0 || n.rfind("static_encoder.", 0) == 0 || n.rfind("generator.", 0) == 0 ||
                    n.rfind("projection.", 0) == 0)
            << n;
    }
    for (const auto& n : d) EXPECT_EQ(n.rfind("discriminator.", 0), 0u) << n;
    EXPECT_EQ(g.size() + d.size(), all.size());
}

TEST(Trainer, PairedStepIsDeterministicAndReportsItsTerms) {
    const auto imgs = figures(2, 1);
    Trainer<float> a(tiny_config()), b(tiny_config());
    for (int i = 0; i < 2; ++i) {
        const LossReport ra = a.train_step_paired(batch(imgs[0]), batch(imgs[1]));
        const LossReport rb = b.train_step_paired(batch(imgs[0]), batch(imgs[1]));
        EXPECT_EQ(ra.values(), rb.values());
        EXPECT_TRUE(ra.finite());
        const LossWeights w;
        EXPECT_NEAR(ra.full, -w.adv * (ra.adv_pos + ra.adv_neg) + w.fm * ra.fm + w.per * ra.per + w.mc * ra.mc + w.sc * ra.sc,
                    1e-6);
        EXPECT_EQ(ra.sup, 0.0);
    }
}

TEST(Trainer, CriticStepAscends) {
    ModelConfig cfg = tiny_config();
    cfg.learning_rate = 1e-4;
    Trainer<float> tr(cfg);
    const auto imgs = figures(2, 2);
    Synthesis<float> syn;
    {
        NoGradGuard guard;
        syn = tr.synthesize(batch(imgs[0]), batch(imgs[1]), Mode::Train);
    }
    auto objective = [&] {
        NoGradGuard guard;
        return static_cast<double>(tr.critic_objective(batch(imgs[0]), syn.image, syn.pose, Mode::Train).item());
    };
    const double before = objective();
    EXPECT_NEAR(tr.critic_update(batch(imgs[0]), syn.image, syn.pose), before, 1e-6);
    EXPECT_GE(objective(), before);
}

TEST(Trainer, SupportStepExcludesPairedTerms) {
    const auto imgs = figures(2, 3);
    const auto other = figures(1, 4, false);
    Trainer<float> tr(tiny_config());
    const LossReport r = tr.train_step_support(batch(other[0]), batch(imgs[0]));
    EXPECT_EQ(r.adv_pos, 0.0);
    EXPECT_EQ(r.fm, 0.0);
    EXPECT_EQ(r.per, 0.0);
    const LossWeights w;
    EXPECT_NEAR(r.sup, w.adv * r.adv_neg + w.mc * r.mc + w.sc * r.sc, 1e-6);
    EXPECT_TRUE(r.finite());
}

TEST(Trainer, SupportStepIsNoOpWhenDisabled) {
    Trainer<float> tr(tiny_config(0, 5));  // row 5: everything but the support set
    const auto imgs = figures(2, 3);
    const Checkpoint before = tr.checkpoint();
    const LossReport r = tr.train_step_support(batch(imgs[0]), batch(imgs[1]));
    EXPECT_EQ(r.values(), LossReport{}.values());
    EXPECT_EQ(tr.checkpoint(), before);
}

TEST(Trainer, SupportObjectiveLeavesPairedOnlyLeavesUntouched) {
    Trainer<float> tr(tiny_config());
    const auto imgs = figures(2, 5);
    const auto other = figures(1, 6, false);
    Synthesis<float> syn = tr.synthesize(batch(other[0]), batch(imgs[0]), Mode::Train);
    // Paired-only branches in the same graph: a real image leaf feeding
    // adv_pos, feature matching and the perceptual term.
    Var<float> real = Var<float>::parameter(imgs[1].as_batch().value());
    auto real_out = tr.discriminate_with(real, syn.pose, Mode::Train);
    auto fake_out = tr.discriminate_with(syn.image, syn.pose, Mode::Train);
    Var<float> pos = adv_pos(real_out.scores);
    Var<float> fm = feature_matching(real_out.features, fake_out.features);
    Var<float> per = perceptual(syn.image, real, tr.extractor());
    GeneratorTerms<float> sup = tr.support_terms(imgs[0].as_batch(), syn, Mode::Train);
    tr.generator_optimizer().zero_grad();
    tr.critic_optimizer().zero_grad();
    backward(sup.loss);
    EXPECT_FALSE(real.has_grad());
    for (const auto& v : {pos, fm, per}) EXPECT_FALSE(v.has_grad());
    bool generator_moved = false;
    for (const auto& [n, p] : tr.generator_optimizer().params())
        if (n.rfind("generator.", 0) == 0 && p.has_grad()) generator_moved = true;
    EXPECT_TRUE(generator_moved);
}

TEST(Trainer, FrozenWeightsSurviveTraining) {
    Trainer<float> tr(tiny_config());
    const auto imgs = figures(2, 7);
    const auto other = figures(2, 8, false);
    const std::string before = frozen_digest(tr);
    for (int i = 0; i < 3; ++i) {
        tr.train_step_paired(batch(imgs[i % 2]), batch(imgs[(i + 1) % 2]));
        tr.train_step_support(batch(other[i % 2]), batch(imgs[i % 2]));
    }
    EXPECT_EQ(frozen_digest(tr), before);
}

TEST(Trainer, NonFiniteInputAborts) {
    Trainer<float> tr(tiny_config());
    const auto imgs = figures(1, 9);
    Tensor<float> bad = imgs[0].as_batch().value();
    bad[5] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(tr.train_step_paired(Var<float>::constant(bad), batch(imgs[0])), NonFiniteLossError);
}

TEST(Train, ZeroIterationsReturnsInitialState) {
    ModelConfig cfg = tiny_config();
    cfg.total_iterations = 0;
    Trainer<float> tr(cfg), fresh(cfg);
    const auto imgs = figures(2, 10);
    const auto sup = figures(2, 11, false);
    EXPECT_EQ(train(tr, imgs, &sup), fresh.checkpoint());
}

TEST(Train, RequiresSupportWhenEnabled) {
    Trainer<float> tr(tiny_config());
    const auto imgs = figures(2, 10);
    const std::vector<Image>* none = nullptr;
    EXPECT_THROW(train(tr, imgs, none), ConfigError);
}

TEST(Train, WritesLogAndCheckpointsDeterministically) {
    TempDir a, b;
    const auto imgs = figures(3, 12);
    const auto sup = figures(2, 13, false);
    Trainer<float> ta(tiny_config(4)), tb(tiny_config(4));
    TrainOptions oa{a.path(), "fp", {}}, ob{b.path(), "fp", {}};
    const Checkpoint ca = train(ta, imgs, &sup, oa);
    const Checkpoint cb = train(tb, imgs, &sup, ob);
    EXPECT_EQ(ca, cb);
    EXPECT_EQ(read_file_bytes(a.path() / "final.dfcn"), read_file_bytes(b.path() / "final.dfcn"));
    EXPECT_TRUE(fs::exists(a.path() / "checkpoint-00000002.dfcn"));
    EXPECT_EQ(ca.iteration, 3);
    EXPECT_EQ(ca.fingerprint, "fp");

    std::ifstream log(a.path() / "train_log.csv");
    std::string line;
    std::getline(log, line);
    EXPECT_EQ(line, kLogHeader);
    int rows = 0;
    while (std::getline(log, line)) {
        ++rows;
        std::stringstream ss(line);
        std::string cell;
        int cols = 0;
        while (std::getline(ss, cell, ',')) {
            EXPECT_TRUE(std::isfinite(std::stod(cell))) << line;
            ++cols;
        }
        EXPECT_EQ(cols, 9);
    }
    EXPECT_EQ(rows, 3);

    // A different seed gives a different model.
    Trainer<float> tc(tiny_config(5));
    EXPECT_NE(train(tc, imgs, &sup).tensors, ca.tensors);
}

TEST(Checkpoint, RoundTripAndResume) {
    TempDir dir;
    Trainer<float> tr(tiny_config());
    const auto imgs = figures(2, 14);
    tr.train_step_paired(batch(imgs[0]), batch(imgs[1]));
    tr.set_iteration(1);
    const Checkpoint c = tr.checkpoint("abc  x.png\n");
    save_checkpoint(dir.path() / "c.dfcn", c);
    const Checkpoint loaded = load_checkpoint(dir.path() / "c.dfcn");
    EXPECT_EQ(loaded, c);
    Trainer<float> back = Trainer<float>::from_checkpoint(loaded);
    EXPECT_EQ(back.checkpoint("abc  x.png\n"), c);
    // Resumed and original continue identically.
    EXPECT_EQ(back.train_step_paired(batch(imgs[1]), batch(imgs[0])).values(),
              tr.train_step_paired(batch(imgs[1]), batch(imgs[0])).values());
}

TEST(Checkpoint, DetectsCorruptionAndVersion) {
    Trainer<float> tr(tiny_config());
    const std::string bytes = encode_checkpoint(tr.checkpoint());
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() / 2)), CorruptionError);
    std::string flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    EXPECT_THROW(decode_checkpoint(flipped), CorruptionError);
    // Re-seal the same body under an older format version.
    const std::size_t header = kCheckpointMagic.size() + 12;
    const std::string old = seal(kCheckpointMagic, 0, bytes.substr(header, bytes.size() - header - 32));
    try {
        decode_checkpoint(old);
        FAIL() << "expected VersionError";
    } catch (const VersionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("version 0"), std::string::npos) << msg;
        EXPECT_NE(msg.find("version 1"), std::string::npos) << msg;
    }
}

TEST(Infer, DeterministicInRangeAndSized) {
    Trainer<float> tr(tiny_config());
    const auto imgs = figures(2, 15);
    const Checkpoint c = tr.checkpoint();
    const Image a = infer(c, imgs[0], imgs[1]);
    const Image b = infer(c, imgs[0], imgs[1]);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.height(), 64);
    EXPECT_EQ(a.width(), 64);
    for (float v : a.tensor().values()) EXPECT_LE(std::abs(v), 1.0f);
}

TEST(Evaluate, ReconstructionMseIsZeroOnlyForPerfectModels) {
    Trainer<float> tr(tiny_config());
    const auto imgs = figures(2, 16);
    const double m = reconstruction_mse(tr, imgs);
    EXPECT_GT(m, 0.0);
    EXPECT_TRUE(std::isfinite(m));
    const auto report = evaluate_model(tr, "s", {"a.png", "b.png"}, imgs, imgs, 0);
    EXPECT_EQ(report.rows.size(), 2u);
    EXPECT_EQ(report_csv(report), report_csv(evaluate_model(tr, "s", {"a.png", "b.png"}, imgs, imgs, 0)));
}

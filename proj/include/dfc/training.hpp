#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dfc/checkpoint.hpp"
#include "dfc/data.hpp"
#include "dfc/losses.hpp"
#include "dfc/networks.hpp"
#include "dfc/pose.hpp"

namespace dfc {

// ---------------------------------------------------------------------------
// Optimizer

/// Adam with bias correction. Moments are keyed by parameter name.
template <class T>
class Adam {
public:
    Adam() = default;
    Adam(std::vector<std::pair<std::string, Var<T>>> params, double lr, double beta1, double beta2, double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& [name, p] : params_) {
            m_.emplace_back(p.shape(), T{0});
            v_.emplace_back(p.shape(), T{0});
        }
    }

    void zero_grad() {
        for (auto& [name, p] : params_) p.zero_grad();
    }

    void step() {
        ++steps_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
        const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
        const T step = static_cast<T>(lr_ / c1), inv_c2 = static_cast<T>(1.0 / c2), eps = static_cast<T>(eps_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i].second;
            if (!p.has_grad()) continue;  // unreachable this step: moments and value stay put
            const Tensor<T>& g = p.node()->grad;
            Tensor<T>& w = p.mutable_value();
            T* m = m_[i].data();
            T* v = v_[i].data();
            for (std::size_t k = 0; k < w.numel(); ++k) {
                m[k] = b1 * m[k] + (T{1} - b1) * g[k];
                v[k] = b2 * v[k] + (T{1} - b2) * g[k] * g[k];
                w[k] -= step * m[k] / (std::sqrt(v[k] * inv_c2) + eps);
            }
        }
    }

    std::int64_t steps() const noexcept { return steps_; }
    void set_steps(std::int64_t s) noexcept { steps_ = s; }
    const std::vector<std::pair<std::string, Var<T>>>& params() const noexcept { return params_; }

    /// Visits first and second moments as "m.<param>" and "v.<param>".
    void visit_state(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            fn("m." + params_[i].first, m_[i]);
            fn("v." + params_[i].first, v_[i]);
        }
    }

private:
    std::vector<std::pair<std::string, Var<T>>> params_;
    std::vector<Tensor<T>> m_, v_;
    double lr_ = 2e-4, beta1_ = 0.5, beta2_ = 0.999, eps_ = 1e-8;
    std::int64_t steps_ = 0;
};

// ---------------------------------------------------------------------------
// Networks

/// The trainable components. Construction order fixes the initialization
/// stream: refiner, static encoder, generator, projection, discriminator.
template <class T>
struct Networks {
    PoseRefiner<T> refiner;
    StaticEncoder<T> static_encoder;
    Generator<T> generator;
    ConditioningProjection<T> projection;
    Discriminator<T> discriminator;

    explicit Networks(const ModelConfig& cfg) {
        Rng rng(cfg.rng_seed);
        const int b = cfg.base_channels;
        refiner = PoseRefiner<T>(b, rng);
        static_encoder = StaticEncoder<T>(b, rng);
        generator = Generator<T>(b, rng);
        projection = ConditioningProjection<T>(b, rng);
        discriminator = Discriminator<T>(b, rng);
    }

    /// Parameters updated by the generator-side optimizer.
    void visit_generator_side(const Visitor<T>& v) {
        refiner.visit(v, "refiner");
        static_encoder.visit(v, "static_encoder");
        generator.visit(v, "generator");
        projection.visit(v, "projection");
    }

    void visit_critic_side(const Visitor<T>& v) { discriminator.visit(v, "discriminator"); }

    void visit(const Visitor<T>& v) {
        visit_generator_side(v);
        visit_critic_side(v);
    }
};

/// Intermediate results of one synthesis: x_syn = G(M(x_s), S(x_t)).
template <class T>
struct Synthesis {
    Var<T> pose;    // M(x_s)
    Var<T> stat;    // S(x_t)
    Var<T> image;   // x_syn
};

/// Differentiable terms of one generator-side objective evaluation.
template <class T>
struct GeneratorTerms {
    ObjectiveTerms<T> terms;  // adv_pos, adv_neg, fm, per, mc, sc, sup as measured
    Var<T> adversarial;       // what the generator minimizes in place of the adversarial term
    Var<T> loss;              // the weighted sum that is backpropagated
};

// ---------------------------------------------------------------------------
// Trainer

/// Training state of one subject's model plus the frozen estimator and
/// feature extractor. One thread mutates a Trainer at a time.
template <class T>
class Trainer {
public:
    explicit Trainer(const ModelConfig& cfg)
        : cfg_(cfg), nets_(cfg), rng_(cfg.rng_seed ^ 0x5DEECE66DULL) {
        cfg_.validate();
        estimator_ = make_pose_estimator<T>(cfg_);
        extractor_ = make_feature_extractor<T>(cfg_);
        std::vector<std::pair<std::string, Var<T>>> g, d;
        Visitor<T> vg, vd;
        vg.param = [&](const std::string& n, Var<T>& p) { g.emplace_back(n, p); };
        vd.param = [&](const std::string& n, Var<T>& p) { d.emplace_back(n, p); };
        nets_.visit_generator_side(vg);
        nets_.visit_critic_side(vd);
        g_opt_ = Adam<T>(std::move(g), cfg_.learning_rate, cfg_.beta1, cfg_.beta2);
        d_opt_ = Adam<T>(std::move(d), cfg_.learning_rate, cfg_.beta1, cfg_.beta2);
    }

    const ModelConfig& config() const noexcept { return cfg_; }
    Networks<T>& networks() noexcept { return nets_; }
    const PoseEstimator<T>& estimator() const { return *estimator_; }
    const PerceptualExtractor<T>& extractor() const { return *extractor_; }
    Adam<T>& generator_optimizer() noexcept { return g_opt_; }
    Adam<T>& critic_optimizer() noexcept { return d_opt_; }
    Rng& rng() noexcept { return rng_; }
    std::int64_t iteration() const noexcept { return iteration_; }
    void set_iteration(std::int64_t i) noexcept { iteration_ = i; }

    // -- graph builders ----------------------------------------------------

    Var<T> encode_pose_of(const Var<T>& images, Mode mode) {
        return encode_pose(images, *estimator_, nets_.refiner, cfg_.temperature, cfg_.flags.use_amplifier, mode);
    }

    Var<T> encode_static_of(const Var<T>& images, Mode mode) { return nets_.static_encoder(images, mode); }

    Synthesis<T> synthesize(const Var<T>& x_s, const Var<T>& x_t, Mode mode) {
        Synthesis<T> s;
        s.pose = encode_pose_of(x_s, mode);
        s.stat = encode_static_of(x_t, mode);
        s.image = nets_.generator(s.pose, s.stat, mode);
        return s;
    }

    DiscriminatorOutput<T> discriminate_with(const Var<T>& images, const Var<T>& pose, Mode mode) {
        return discriminate(images, pose, nets_.discriminator, nets_.projection, mode);
    }

    /// The objective the discriminator maximizes on a paired batch,
    /// adv_pos(real) + adv_neg(fake). Inputs are used as given.
    Var<T> critic_objective(const Var<T>& real, const Var<T>& fake, const Var<T>& pose, Mode mode) {
        return add(adv_pos(discriminate_with(real, pose, mode).scores),
                   adv_neg(discriminate_with(fake, pose, mode).scores));
    }

    /// Generator-side terms of a paired step. `real_features_detached`
    /// stops feature matching from pulling on the real branch.
    GeneratorTerms<T> paired_terms(const Var<T>& x_s, const Var<T>& x_t, const Synthesis<T>& syn, Mode mode,
                                   bool real_features_detached = true) {
        const auto& w = cfg_.loss_weights;
        GeneratorTerms<T> out;
        DiscriminatorOutput<T> fake = discriminate_with(syn.image, syn.pose, mode);
        DiscriminatorOutput<T> real = discriminate_with(x_s, syn.pose, mode);
        std::array<std::vector<Var<T>>, 2> real_features = real.features;
        if (real_features_detached)
            for (auto& scale_feats : real_features)
                for (auto& f : scale_feats) f = f.detach();
        out.terms.adv_pos = adv_pos(real.scores);
        out.terms.adv_neg = adv_neg(fake.scores);
        out.terms.fm = feature_matching(real_features, fake.features);
        out.terms.per = perceptual(syn.image, x_s, *extractor_);
        add_consistency_terms(out.terms, x_t, syn, mode);
        out.adversarial = generator_adversarial(fake.scores, out.terms.adv_neg);
        std::vector<std::pair<T, Var<T>>> parts = {
            {T(w.adv), out.adversarial}, {T(w.fm), out.terms.fm}, {T(w.per), out.terms.per}};
        if (cfg_.flags.use_mc) parts.emplace_back(T(w.mc), out.terms.mc);
        if (cfg_.flags.use_sc) parts.emplace_back(T(w.sc), out.terms.sc);
        out.loss = weighted_sum(parts);
        return out;
    }

    /// Generator-side terms of a support step: only the fake-branch
    /// adversarial term and the enabled consistency terms.
    GeneratorTerms<T> support_terms(const Var<T>& x_t, const Synthesis<T>& syn, Mode mode) {
        const auto& w = cfg_.loss_weights;
        GeneratorTerms<T> out;
        DiscriminatorOutput<T> fake = discriminate_with(syn.image, syn.pose, mode);
        out.terms.adv_neg = adv_neg(fake.scores);
        add_consistency_terms(out.terms, x_t, syn, mode);
        out.adversarial = generator_adversarial(fake.scores, out.terms.adv_neg);
        std::vector<std::pair<T, Var<T>>> parts = {{T(w.adv), out.adversarial}};
        if (cfg_.flags.use_mc) parts.emplace_back(T(w.mc), out.terms.mc);
        if (cfg_.flags.use_sc) parts.emplace_back(T(w.sc), out.terms.sc);
        out.loss = weighted_sum(parts);
        out.terms.sup = support_loss(out.terms.adv_neg, masked(out.terms.mc, cfg_.flags.use_mc),
                                     masked(out.terms.sc, cfg_.flags.use_sc), w);
        return out;
    }

    // -- steps -------------------------------------------------------------

    /// One ascent step of the discriminator on adv_pos(real) + adv_neg(fake),
    /// or on adv_neg(fake) alone when `real` is undefined. Returns the
    /// objective before the step.
    double critic_update(const Var<T>& real, const Var<T>& fake, const Var<T>& pose) {
        d_opt_.zero_grad();
        Var<T> obj = real.defined() ? critic_objective(real, fake, pose, Mode::Train)
                                    : adv_neg(discriminate_with(fake, pose, Mode::Train).scores);
        check_finite(obj, "discriminator objective");
        backward(scale(obj, T{-1}));
        d_opt_.step();
        return static_cast<double>(obj.item());
    }

    /// One discriminator update, then one generator-side update on
    /// (x_s, x_t), both [N,3,H,W]. The synthesized image is produced once;
    /// the critic sees a detached copy.
    LossReport train_step_paired(const Var<T>& x_s, const Var<T>& x_t) {
        Synthesis<T> syn = synthesize(x_s, x_t, Mode::Train);
        critic_update(x_s, syn.image.detach(), syn.pose.detach());

        GeneratorTerms<T> g = paired_terms(x_s, x_t, syn, Mode::Train);
        LossReport report = measure(g.terms);
        check_finite(g.loss, "generator objective", &report);
        g_opt_.zero_grad();
        backward(g.loss);
        g_opt_.step();
        return report;
    }

    /// Support-set step: the critic updates on the fake branch only, then
    /// the generator side minimizes the support objective. A no-op when the
    /// support set is disabled.
    LossReport train_step_support(const Var<T>& x_sup, const Var<T>& x_t) {
        if (!cfg_.flags.use_support) return {};
        Synthesis<T> syn = synthesize(x_sup, x_t, Mode::Train);
        critic_update({}, syn.image.detach(), syn.pose.detach());

        GeneratorTerms<T> g = support_terms(x_t, syn, Mode::Train);
        LossReport report = measure(g.terms);
        check_finite(g.loss, "support objective", &report);
        g_opt_.zero_grad();
        backward(g.loss);
        g_opt_.step();
        return report;
    }

    /// Inference-mode synthesis of a single pair.
    BasicImage<T> infer(const BasicImage<T>& x_s, const BasicImage<T>& x_t) {
        NoGradGuard guard;
        Var<T> y = synthesize(x_s.as_batch(), x_t.as_batch(), Mode::Eval).image;
        return validate_image(y.value());
    }

    // -- persistence -------------------------------------------------------

    Checkpoint checkpoint(const std::string& fingerprint = {}) {
        Checkpoint c;
        c.config_text = serialize_config(cfg_);
        c.fingerprint = fingerprint;
        c.iteration = iteration_;
        std::ostringstream rs;
        rs << rng_;
        c.rng_state = rs.str();
        c.generator_steps = g_opt_.steps();
        c.critic_steps = d_opt_.steps();
        for_each_tensor([&](const std::string& name, Tensor<T>& t) { c.tensors.emplace(name, t.template cast<float>()); });
        return c;
    }

    static Trainer from_checkpoint(const Checkpoint& c) {
        Trainer tr(c.config());
        tr.iteration_ = c.iteration;
        std::istringstream rs(c.rng_state);
        rs >> tr.rng_;
        if (!rs) throw CorruptionError("checkpoint: unreadable rng state");
        tr.g_opt_.set_steps(c.generator_steps);
        tr.d_opt_.set_steps(c.critic_steps);
        std::size_t used = 0;
        tr.for_each_tensor([&](const std::string& name, Tensor<T>& t) {
            auto it = c.tensors.find(name);
            if (it == c.tensors.end()) throw CorruptionError("checkpoint: missing tensor " + name);
            if (it->second.shape() != t.shape())
                throw ShapeError("checkpoint: tensor " + name + " has shape " + shape_str(it->second.shape()) +
                                 ", model expects " + shape_str(t.shape()));
            t = it->second.template cast<T>();
            ++used;
        });
        if (used != c.tensors.size()) throw CorruptionError("checkpoint: unexpected extra tensors");
        return tr;
    }

    /// Every persistent tensor: parameters, batch-norm buffers, moments.
    void for_each_tensor(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
        Visitor<T> v;
        v.param = [&](const std::string& n, Var<T>& p) { fn(n, p.mutable_value()); };
        v.buffer = fn;
        nets_.visit(v);
        g_opt_.visit_state([&](const std::string& n, Tensor<T>& t) { fn("adam.g." + n, t); });
        d_opt_.visit_state([&](const std::string& n, Tensor<T>& t) { fn("adam.d." + n, t); });
    }

private:
    Var<T> generator_adversarial(const std::array<Var<T>, 2>& fake_scores, const Var<T>& adv_neg_term) const {
        return cfg_.gan_loss == GanLoss::NonSaturating ? adv_generator(fake_scores) : adv_neg_term;
    }

    void add_consistency_terms(ObjectiveTerms<T>& t, const Var<T>& x_t, const Synthesis<T>& syn, Mode mode) {
        if (cfg_.flags.use_mc) t.mc = pose_consistency(encode_pose_of(syn.image, mode), syn.pose);
        if (cfg_.flags.use_sc) t.sc = static_consistency(encode_static_of(syn.image, mode), encode_static_of(x_t, mode));
    }

    static Var<T> masked(const Var<T>& v, bool on) {
        return on && v.defined() ? v : Var<T>::constant(Tensor<T>::scalar(T{0}));
    }

    LossReport measure(const ObjectiveTerms<T>& t) const {
        auto val = [](const Var<T>& v) { return v.defined() ? static_cast<double>(v.item()) : 0.0; };
        LossReport r;
        r.adv_pos = val(t.adv_pos);
        r.adv_neg = val(t.adv_neg);
        r.fm = val(t.fm);
        r.per = val(t.per);
        r.mc = val(t.mc);
        r.sc = val(t.sc);
        r.sup = val(t.sup);
        return full_objective(r, cfg_.loss_weights, cfg_.flags);
    }

    void check_finite(const Var<T>& loss, const std::string& what, const LossReport* report = nullptr) const {
        bool ok = std::isfinite(static_cast<double>(loss.item()));
        if (report) ok = ok && report->finite();
        if (ok) return;
        std::ostringstream os;
        os << what << " is not finite at iteration " << iteration_;
        if (report) {
            os << " (adv+ " << report->adv_pos << ", adv- " << report->adv_neg << ", fm " << report->fm << ", per "
               << report->per << ", mc " << report->mc << ", sc " << report->sc << ", sup " << report->sup << ")";
        }
        throw NonFiniteLossError(os.str());
    }

    ModelConfig cfg_;
    Networks<T> nets_;
    std::shared_ptr<const PoseEstimator<T>> estimator_;
    std::shared_ptr<const PerceptualExtractor<T>> extractor_;
    Adam<T> g_opt_, d_opt_;
    Rng rng_;
    std::int64_t iteration_ = 0;
};

// ---------------------------------------------------------------------------
// Training loop

inline constexpr const char* kLogHeader = "iteration,adv+,adv-,fm,per,mc,sc,sup,full";

/// One log row per iteration: the paired step's terms, the support step's
/// sup value, and the full objective recombined from them.
inline LossReport combine_reports(const LossReport& paired, const LossReport& support, const ModelConfig& cfg) {
    LossReport r = paired;
    r.sup = cfg.flags.use_support ? support.sup : 0.0;
    return full_objective(r, cfg.loss_weights, cfg.flags);
}

inline std::string format_log_row(std::int64_t iteration, const LossReport& r) {
    std::ostringstream os;
    os.precision(9);
    os << iteration;
    for (double v : r.values()) os << ',' << v;
    return os.str();
}

struct TrainOptions {
    std::filesystem::path out_dir;       // checkpoints and log; empty keeps everything in memory
    std::string fingerprint;             // recorded in every checkpoint
    std::function<void(std::int64_t, const LossReport&)> on_iteration;
};

namespace detail {

template <class T>
Var<T> sample_batch(const std::vector<BasicImage<T>>& images, const std::vector<std::size_t>& idx) {
    std::vector<BasicImage<T>> picked;
    for (std::size_t i : idx) picked.push_back(images[i]);
    return Var<T>::constant(stack_images(picked));
}

}  // namespace detail

/// Runs cfg.total_iterations iterations: each samples batch_size (x_s, x_t)
/// pairs for a paired step and, with the support set enabled, batch_size
/// (support, x_t) pairs for a support step. Returns the final checkpoint.
template <class T>
Checkpoint train(Trainer<T>& trainer, const std::vector<BasicImage<T>>& train_images,
                 const std::vector<BasicImage<T>>* support, const TrainOptions& opt = {}) {
    const ModelConfig& cfg = trainer.config();
    if (train_images.empty()) throw EmptyDatasetError("training split is empty");
    if (cfg.flags.use_support && (!support || support->empty()))
        throw ConfigError("use_support is enabled but no support images were given");
    for (const auto& img : train_images)
        if (img.height() != cfg.image_size || img.width() != cfg.image_size)
            throw ShapeError("training image is " + std::to_string(img.width()) + "x" + std::to_string(img.height()) +
                             ", config expects " + std::to_string(cfg.image_size));

    std::ofstream log;
    if (!opt.out_dir.empty()) {
        std::filesystem::create_directories(opt.out_dir);
        log.open(opt.out_dir / "train_log.csv", std::ios::trunc);
        if (!log) throw IoError("cannot open training log in " + opt.out_dir.string());
        log << kLogHeader << '\n';
    }
    auto save = [&](const std::string& name) {
        Checkpoint c = trainer.checkpoint(opt.fingerprint);
        if (!opt.out_dir.empty()) save_checkpoint(opt.out_dir / name, c);
        return c;
    };

    Rng& rng = trainer.rng();
    while (trainer.iteration() < cfg.total_iterations) {
        std::vector<std::size_t> src, tgt;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto [s, t] = sample_pair_indices(train_images.size(), rng);
            src.push_back(s);
            tgt.push_back(t);
        }
        LossReport paired = trainer.train_step_paired(detail::sample_batch(train_images, src),
                                                      detail::sample_batch(train_images, tgt));
        LossReport sup;
        if (cfg.flags.use_support) {
            std::vector<std::size_t> sidx, tidx;
            std::uniform_int_distribution<std::size_t> pick_sup(0, support->size() - 1);
            std::uniform_int_distribution<std::size_t> pick_tgt(0, train_images.size() - 1);
            for (int b = 0; b < cfg.batch_size; ++b) {
                sidx.push_back(pick_sup(rng));
                tidx.push_back(pick_tgt(rng));
            }
            sup = trainer.train_step_support(detail::sample_batch(*support, sidx),
                                             detail::sample_batch(train_images, tidx));
        }
        trainer.set_iteration(trainer.iteration() + 1);
        const LossReport row = combine_reports(paired, sup, cfg);
        if (log.is_open()) log << format_log_row(trainer.iteration(), row) << '\n' << std::flush;
        if (opt.on_iteration) opt.on_iteration(trainer.iteration(), row);
        if (trainer.iteration() % cfg.checkpoint_every == 0 && trainer.iteration() < cfg.total_iterations) {
            char name[48];
            std::snprintf(name, sizeof name, "checkpoint-%08lld.dfcn", static_cast<long long>(trainer.iteration()));
            save(name);
        }
    }
    return save("final.dfcn");
}

/// Inference through a checkpoint.
inline Image infer(const Checkpoint& ckpt, const Image& x_s, const Image& x_t) {
    Trainer<float> model = Trainer<float>::from_checkpoint(ckpt);
    return model.infer(x_s, x_t);
}

}  // namespace dfc

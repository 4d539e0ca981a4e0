#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <set>

#include "dfc/networks.hpp"
#include "gradcheck.hpp"

using namespace dfc;
using dfc::testing::grad_check;

namespace {

template <class T>
Var<T> uniform_var(Shape shape, std::uint64_t seed, double bound = 1.0, bool param = false) {
    Rng rng(seed);
    auto t = nn::uniform_tensor<T>(std::move(shape), bound, rng);
    return param ? Var<T>::parameter(std::move(t)) : Var<T>::constant(std::move(t));
}

template <class T, class Component>
std::vector<Var<T>> params_of(Component& c) {
    std::vector<Var<T>> out;
    for (auto& [name, v] : named_parameters<T>(c)) out.push_back(v);
    return out;
}

}  // namespace

TEST(StaticEncoder, Shapes) {
    Rng rng(0);
    StaticEncoder<float> enc(64, rng);
    NoGradGuard guard;
    EXPECT_EQ(enc(Var<float>::constant(Tensor<float>({1, 3, 256, 256})), Mode::Eval).shape(), (Shape{1, 512, 32, 32}));
    EXPECT_EQ(enc(Var<float>::constant(Tensor<float>({1, 3, 64, 64})), Mode::Eval).shape(), (Shape{1, 512, 8, 8}));
    EXPECT_THROW(enc(Var<float>::constant(Tensor<float>({1, 3, 60, 64})), Mode::Eval), ShapeError);
}

TEST(StaticEncoder, ZeroImageDeterministic) {
    auto run = [] {
        Rng rng(12);
        StaticEncoder<float> enc(4, rng);
        return enc(Var<float>::constant(Tensor<float>({1, 3, 64, 64})), Mode::Eval).value();
    };
    auto a = run();
    EXPECT_EQ(a, run());
    EXPECT_TRUE(a.all_finite());
}

TEST(Generator, ShapesAndRange) {
    Rng rng(1);
    Generator<float> gen(4, rng);
    auto m = uniform_var<float>({1, 32, 8, 8}, 2, 3.0), s = uniform_var<float>({1, 32, 8, 8}, 3, 3.0);
    for (Mode mode : {Mode::Train, Mode::Eval}) {
        auto y = gen(m, s, mode);
        ASSERT_EQ(y.shape(), (Shape{1, 3, 64, 64}));
        for (float v : y.value().values()) EXPECT_LE(std::abs(v), 1.0f);
    }
    EXPECT_THROW(gen(m, uniform_var<float>({1, 32, 4, 8}, 4), Mode::Eval), ShapeError);
}

TEST(Generator, FullWidthShape) {
    Rng rng(1);
    Generator<float> gen(64, rng);
    NoGradGuard guard;
    auto y = gen(Var<float>::constant(Tensor<float>({1, 512, 32, 32})), Var<float>::constant(Tensor<float>({1, 512, 32, 32})),
                 Mode::Eval);
    EXPECT_EQ(y.shape(), (Shape{1, 3, 256, 256}));
}

TEST(Discriminator, ScoreShapesAt256) {
    Rng rng(2);
    Discriminator<float> disc(64, rng);
    ConditioningProjection<float> proj(64, rng);
    NoGradGuard guard;
    auto out = discriminate(Var<float>::constant(Tensor<float>({1, 3, 256, 256})),
                            Var<float>::constant(Tensor<float>({1, 512, 32, 32})), disc, proj, Mode::Eval);
    EXPECT_EQ(out.scores[0].shape(), (Shape{1, 1, 30, 30}));
    EXPECT_EQ(out.scores[1].shape(), (Shape{1, 1, 14, 14}));
    for (int s = 0; s < 2; ++s) {
        ASSERT_EQ(out.features[s].size(), 5u);
        for (float v : out.scores[s].value().values()) EXPECT_TRUE(v > 0.f && v < 1.f);
    }
    EXPECT_EQ(out.features[0][0].shape(), (Shape{1, 64, 128, 128}));
    EXPECT_EQ(out.features[0][3].shape(), (Shape{1, 512, 31, 31}));
}

TEST(Discriminator, IdenticalInputsIdenticalFeatures) {
    Rng rng(3);
    Discriminator<double> disc(2, rng);
    ConditioningProjection<double> proj(2, rng);
    auto x = uniform_var<double>({1, 3, 64, 64}, 4);
    auto m = uniform_var<double>({1, 16, 8, 8}, 5);
    auto a = discriminate(x, m, disc, proj, Mode::Eval);
    auto b = discriminate(x, m, disc, proj, Mode::Eval);
    for (int s = 0; s < 2; ++s)
        for (int i = 0; i < 5; ++i) EXPECT_EQ(a.features[s][i].value(), b.features[s][i].value());
}

TEST(Discriminator, RejectsMismatchedGeometry) {
    Rng rng(3);
    Discriminator<double> disc(2, rng);
    ConditioningProjection<double> proj(2, rng);
    EXPECT_THROW(discriminate(uniform_var<double>({1, 3, 64, 64}, 1), uniform_var<double>({1, 16, 4, 4}, 2), disc, proj,
                              Mode::Eval),
                 ShapeError);
    EXPECT_THROW(discriminate(uniform_var<double>({1, 3, 40, 40}, 1), uniform_var<double>({1, 16, 5, 5}, 2), disc, proj,
                              Mode::Eval),
                 ShapeError);
}

TEST(ConditioningProjection, UpsamplesToImageResolution) {
    Rng rng(4);
    ConditioningProjection<double> proj(1, rng);
    auto y = proj(uniform_var<double>({1, 8, 8, 8}, 6));
    ASSERT_EQ(y.shape(), (Shape{1, 32, 64, 64}));
    // Nearest upsampling: every 8x8 block is constant.
    for (int c = 0; c < 32; c += 7)
        for (int i = 0; i < 64; ++i)
            for (int j = 0; j < 64; ++j) EXPECT_EQ(y.value().at(0, c, i, j), y.value().at(0, c, i / 8 * 8, j / 8 * 8));
}

// Tiny instantiations: 8x8 feature grids, 8-channel features (base width 1).

TEST(NetworkGradients, StaticEncoder) {
    Rng rng(20);
    StaticEncoder<double> enc(1, rng);
    auto x = uniform_var<double>({2, 3, 64, 64}, 21, 1.0, true);
    auto w = uniform_var<double>({2, 8, 8, 8}, 22);
    auto inputs = params_of<double>(enc);
    inputs.push_back(x);
    auto r = grad_check([&] { return sum(mul(enc(x, Mode::Train), w)); }, inputs, 4, 23, 1e-7, 1e-2);
    EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(NetworkGradients, Generator) {
    Rng rng(24);
    Generator<double> gen(1, rng);
    auto m = uniform_var<double>({2, 8, 8, 8}, 25, 1.0, true);
    auto s = uniform_var<double>({2, 8, 8, 8}, 26, 1.0, true);
    auto w = uniform_var<double>({2, 3, 64, 64}, 27);
    auto inputs = params_of<double>(gen);
    inputs.push_back(m);
    inputs.push_back(s);
    auto r = grad_check([&] { return sum(mul(gen(m, s, Mode::Train), w)); }, inputs, 4, 28, 1e-7, 1e-2);
    EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(NetworkGradients, Discriminator) {
    Rng rng(29);
    Discriminator<double> disc(1, rng);
    ConditioningProjection<double> proj(1, rng);
    auto x = uniform_var<double>({2, 3, 64, 64}, 30, 1.0, true);
    auto m = uniform_var<double>({2, 8, 8, 8}, 31, 1.0, true);
    auto loss = [&] {
        auto out = discriminate(x, m, disc, proj, Mode::Train);
        std::vector<std::pair<double, Var<double>>> terms;
        for (int s = 0; s < 2; ++s) {
            terms.emplace_back(1.0, mean(out.scores[s]));
            for (auto& f : out.features[s]) terms.emplace_back(0.1, mean(square(f)));
        }
        return weighted_sum(terms);
    };
    auto inputs = params_of<double>(disc);
    for (auto& p : params_of<double>(proj)) inputs.push_back(p);
    inputs.push_back(x);
    inputs.push_back(m);
    auto r = grad_check(loss, inputs, 4, 32, 1e-7, 1e-4);
    EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(NetworkNames, UniqueAndStable) {
    Rng rng(0);
    Generator<float> gen(1, rng);
    auto names = named_parameters<float>(gen, "generator");
    std::set<std::string> seen;
    for (auto& [n, v] : names) EXPECT_TRUE(seen.insert(n).second) << n;
    EXPECT_EQ(names.front().first, "generator.res0.block1.conv.weight");
}

#include <gtest/gtest.h>

#include "lessnet/checkpoint.hpp"
#include "lessnet/decoder.hpp"
#include "lessnet/trainer.hpp"
#include "support.hpp"

using namespace lessnet;
using namespace lessnet::testing;

namespace {

// Parameter count written out block by block from the architecture description.
std::size_t oracle_parameters(std::size_t C, std::size_t rank, std::size_t cpb)
{
    const std::size_t kv = rank == 3 ? 27 : 9, ku = rank == 3 ? 8 : 4;
    auto conv = [&](std::size_t in, std::size_t out) { return in * out * kv + out; };
    auto up = [&](std::size_t in, std::size_t out) { return in * out * ku + out; };
    auto extra = [&](std::size_t w) { return (cpb - 1) * conv(w, w); };
    return conv(6, 4 * C) + extra(4 * C)                               // block 1
           + up(4 * C, 3 * C) + conv(3 * C + 6, 3 * C) + extra(3 * C)  // block 2
           + up(3 * C, 2 * C) + conv(2 * C + 6, 2 * C) + extra(2 * C)  // block 3
           + up(2 * C, C) + conv(C + 2, C) + extra(C)                  // block 4
           + conv(C, rank);                                            // output
}

std::uint64_t oracle_mult_adds(std::size_t C, std::size_t rank, std::size_t cpb, std::uint64_t voxels)
{
    const std::uint64_t kv = rank == 3 ? 27 : 9, ku = rank == 3 ? 8 : 4;
    auto at = [&](std::uint64_t level) {
        std::uint64_t f = 1;
        for (std::size_t a = 0; a < rank; ++a) f *= level;
        return voxels / f;
    };
    auto conv = [&](std::uint64_t level, std::uint64_t in, std::uint64_t out) { return at(level) * in * out * kv; };
    auto up = [&](std::uint64_t in_level, std::uint64_t in, std::uint64_t out) { return at(in_level) * out * in * ku; };
    std::uint64_t t = conv(8, 6, 4 * C) + (cpb - 1) * conv(8, 4 * C, 4 * C);
    t += up(8, 4 * C, 3 * C) + conv(4, 3 * C + 6, 3 * C) + (cpb - 1) * conv(4, 3 * C, 3 * C);
    t += up(4, 3 * C, 2 * C) + conv(2, 2 * C + 6, 2 * C) + (cpb - 1) * conv(2, 2 * C, 2 * C);
    t += up(2, 2 * C, C) + conv(1, C + 2, C) + (cpb - 1) * conv(1, C, C);
    return t + conv(1, C, rank);
}

ModelConfig config(std::size_t rank, std::size_t C, std::size_t cpb = 1)
{
    ModelConfig c;
    c.rank = rank;
    c.channels = C;
    c.convs_per_block = cpb;
    return c;
}

Tensor<float> random_pair(std::mt19937_64& rng, const Shape& spatial)
{
    Shape s{2};
    s.insert(s.end(), spatial.begin(), spatial.end());
    return random_tensor(rng, s, 0.0, 1.0).cast<float>();
}

} // namespace

TEST(Decoder, ParameterCountMatchesOracleAndReflection)
{
    for (std::size_t rank : {2u, 3u})
        for (std::size_t cpb : {1u, 2u})
            for (std::size_t C : {4u, 6u, 8u, 12u, 16u}) {
                const ModelConfig cfg = config(rank, C, cpb);
                EXPECT_EQ(count_parameters(cfg), oracle_parameters(C, rank, cpb)) << rank << "D C=" << C;
                EXPECT_EQ(init_parameters<float>(cfg, 1).scalar_count(), count_parameters(cfg));
            }
    EXPECT_EQ(count_parameters(config(2, 4)), 5450u);
}

TEST(Decoder, ParameterCountMatchesCheckpointScalars)
{
    const LessNet net{config(2, 6)};
    const auto params = net.init<float>(2);
    std::size_t n = 0;
    for (const auto& [name, t] : checkpoint_entries(net, params))
        if (name.rfind("meta/", 0) != 0) n += t.size();
    EXPECT_EQ(n, count_parameters(net.cfg));
}

TEST(Decoder, MultAdds)
{
    // Block-1 conv at 64x64 input for C=4: 8*8 outputs, 16 out channels, 6 in channels, 3x3 kernel.
    ModelConfig only_block1 = config(2, 4);
    const auto table = lessnet_layers(only_block1);
    EXPECT_EQ(mult_add_count({table.front()}, 2, Shape{64, 64}), 55296u);

    for (std::size_t C : {4u, 8u, 16u}) {
        EXPECT_EQ(count_mult_adds(config(2, C), Shape{64, 64}), oracle_mult_adds(C, 2, 1, 64 * 64));
        EXPECT_EQ(count_mult_adds(config(3, C, 2), Shape{32, 16, 16}), oracle_mult_adds(C, 3, 2, 32 * 16 * 16));
        EXPECT_EQ(count_mult_adds(config(2, C), Shape{128, 128}), 4 * count_mult_adds(config(2, C), Shape{64, 64}));
    }
    EXPECT_EQ(count_mult_adds(config(2, 0), Shape{64, 64}), 0u);
    EXPECT_THROW(count_mult_adds(config(2, 4), Shape{60, 64}), std::invalid_argument);
}

TEST(Decoder, ParameterCountGrowsQuadratically)
{
    const double r = double(count_parameters(config(2, 16))) / double(count_parameters(config(2, 8)));
    const double r_big = double(count_parameters(config(2, 64))) / double(count_parameters(config(2, 32)));
    EXPECT_GT(r, 3.0);
    EXPECT_GT(r_big, r);
    EXPECT_LT(r_big, 4.0);
}

TEST(Decoder, InitIsDeterministicTrainableAndNearZero)
{
    std::mt19937_64 rng(3);
    for (std::size_t rank : {2u, 3u}) {
        const LessNet net{config(rank, rank == 2 ? 8 : 4)};
        const auto a = net.init<float>(11), b = net.init<float>(11);
        ASSERT_EQ(a.size(), b.size());
        auto ia = a.begin();
        for (const auto& p : b) {
            EXPECT_EQ(ia->weight, p.weight);
            EXPECT_EQ(ia->bias, p.bias);
            EXPECT_TRUE(p.trainable);
            ++ia;
        }
        for (int trial = 0; trial < 5; ++trial) {
            Tape<float> tape;
            const BoundParameters<float> bound(tape, a, false);
            const auto u = net.forward(tape, bound, random_pair(rng, rank == 2 ? Shape{64, 64} : Shape{16, 16, 16}));
            EXPECT_LT(u.value().max_abs(), 0.01f);
        }
    }
}

TEST(Decoder, ZeroParametersGiveZeroField)
{
    std::mt19937_64 rng(4);
    const LessNet net{config(2, 4)};
    auto params = net.init<float>(0);
    for (auto& p : params) {
        p.weight.fill(0.0f);
        p.bias.fill(0.0f);
    }
    Tape<float> tape;
    const auto u = net.forward(tape, BoundParameters<float>(tape, params, false), random_pair(rng, {32, 32}));
    EXPECT_EQ(u.value(), Tensor<float>(Shape{2, 32, 32}));
}

TEST(Decoder, OutputShapeAndRange)
{
    std::mt19937_64 rng(5);
    for (std::size_t rank : {2u, 3u}) {
        ModelConfig cfg = config(rank, 4);
        cfg.displacement_scale.assign(rank, 1.5);
        const LessNet net{cfg};
        auto params = net.init<float>(1);
        // Blow up the output layer so SoftSign saturates.
        for (auto& v : params.at("output/conv").weight) v *= 1e6f;
        const Shape sp = rank == 2 ? Shape{64, 64} : Shape{16, 8, 16};
        Tape<float> tape;
        const auto u = net.forward(tape, BoundParameters<float>(tape, params, false), random_pair(rng, sp));
        Shape expected{rank};
        expected.insert(expected.end(), sp.begin(), sp.end());
        EXPECT_EQ(u.shape(), expected);
        EXPECT_GT(u.value().max_abs(), 1.0f);
        EXPECT_LE(u.value().max_abs(), 1.5f);
    }
}

TEST(Decoder, DefaultScaleSpansHalfTheExtent)
{
    EXPECT_EQ(config(2, 4).resolved_scale(Shape{64, 32}), (std::vector<double>{31.5, 15.5}));
}

TEST(Decoder, PyramidAblationsStillProduceFullResolutionField)
{
    std::mt19937_64 rng(6);
    ModelConfig cfg = config(2, 4);
    cfg.pyramid.use_half = cfg.pyramid.use_quarter = cfg.pyramid.include_original = false;
    const LessNet net{cfg};
    Tape<float> tape;
    const auto u = net.forward(tape, BoundParameters<float>(tape, net.init<float>(1), false), random_pair(rng, {32, 32}));
    EXPECT_EQ(u.shape(), (Shape{2, 32, 32}));
    EXPECT_LT(count_parameters(cfg), count_parameters(config(2, 4)));

    cfg.pyramid.use_eighth = false;
    EXPECT_THROW(lessnet_layers(cfg), std::invalid_argument);
}

TEST(Decoder, EveryLayerReceivesGradient)
{
    std::mt19937_64 rng(7);
    for (std::size_t rank : {2u, 3u}) {
        const LessNet net{config(rank, 4, 2)};
        const auto params = net.init<float>(3);
        RegistrationSample<float> s;
        const Shape sp = rank == 2 ? Shape{32, 32} : Shape{16, 16, 16};
        const auto pair = random_pair(rng, sp);
        Shape one{1};
        one.insert(one.end(), sp.begin(), sp.end());
        s.moving = Tensor<float>(one, std::vector<float>(pair.channel(0).begin(), pair.channel(0).end()));
        s.fixed = Tensor<float>(one, std::vector<float>(pair.channel(1).begin(), pair.channel(1).end()));
        Gradients<float> g;
        loss_and_gradients(net, params, s, LossConfig{}, &g);
        ASSERT_EQ(g.size(), params.size());
        for (const auto& [name, wb] : g) {
            EXPECT_GT(wb.first.max_abs(), 0.0f) << name;
            EXPECT_GT(wb.second.max_abs(), 0.0f) << name;
        }
    }
}

#include <gtest/gtest.h>

#include "lessnet/baseline.hpp"
#include "lessnet/trainer.hpp"
#include "support.hpp"

using namespace lessnet;
using namespace lessnet::testing;

namespace {

Tensor<float> random_pair(std::mt19937_64& rng, const Shape& spatial)
{
    Shape s{2};
    s.insert(s.end(), spatial.begin(), spatial.end());
    return random_tensor(rng, s, 0.0, 1.0).cast<float>();
}

} // namespace

TEST(Baseline, LayerNamesUseGroupPrefixes)
{
    const auto params = Baseline{BaselineConfig{}}.init<float>(1);
    std::size_t enc = 0, dec = 0, out = 0;
    for (const auto& p : params) {
        const std::string g = p.name.substr(0, p.name.find('/'));
        enc += g == "encoder";
        dec += g == "decoder";
        out += g == "output";
    }
    EXPECT_EQ(enc, 4u);
    EXPECT_EQ(dec, 8u);
    EXPECT_EQ(out, 1u);
    EXPECT_EQ(params.scalar_count(), count_parameters(BaselineConfig{}));
}

TEST(Baseline, ZeroParametersGiveZeroField)
{
    std::mt19937_64 rng(1);
    const Baseline net{BaselineConfig{}};
    auto params = net.init<float>(2);
    for (auto& p : params) {
        p.weight.fill(0.0f);
        p.bias.fill(0.0f);
    }
    Tape<float> tape;
    const auto u = net.forward(tape, BoundParameters<float>(tape, params, false), random_pair(rng, {32, 32}));
    EXPECT_EQ(u.value(), Tensor<float>(Shape{2, 32, 32}));
}

TEST(Baseline, OutputShape)
{
    std::mt19937_64 rng(2);
    const Baseline net{BaselineConfig{}};
    Tape<float> tape;
    EXPECT_EQ(net.forward(tape, BoundParameters<float>(tape, net.init<float>(1), false), random_pair(rng, {64, 64})).shape(),
              (Shape{2, 64, 64}));
    BaselineConfig c3;
    c3.rank = 3;
    c3.encoder_widths = {4, 4, 4, 4};
    c3.decoder_widths = {4, 4, 4, 4};
    const Baseline net3{c3};
    EXPECT_EQ(net3.forward(tape, BoundParameters<float>(tape, net3.init<float>(1), false), random_pair(rng, {16, 32, 16}))
                  .shape(),
              (Shape{3, 16, 32, 16}));
    EXPECT_THROW(net.forward(tape, BoundParameters<float>(tape, net.init<float>(1), false), random_pair(rng, {24, 32})),
                 std::invalid_argument);
}

TEST(Baseline, FreezeFlags)
{
    auto p = Baseline{BaselineConfig{}}.init<float>(1);
    apply_freeze(p, FreezeMode::encoder);
    for (const auto& x : p) EXPECT_EQ(x.trainable, x.name.rfind("encoder/", 0) != 0) << x.name;
    apply_freeze(p, FreezeMode::decoder_except_output);
    for (const auto& x : p) EXPECT_EQ(x.trainable, x.name.rfind("decoder/", 0) != 0) << x.name;
    apply_freeze(p, FreezeMode::none);
    for (const auto& x : p) EXPECT_TRUE(x.trainable);
}

TEST(Baseline, FrozenGroupsAreBitIdenticalAfterTraining)
{
    SynthConfig sc;
    sc.extents = {32, 32};
    sc.sigma = 4;
    sc.amplitude = 2.5;
    const auto data = generate_dataset<float>(sc, {3, 1, 0}, 5);
    BaselineConfig bc;
    bc.encoder_widths = {4, 8, 8, 8};
    bc.decoder_widths = {8, 8, 8, 4};
    const Baseline net{bc};
    for (FreezeMode mode : {FreezeMode::encoder, FreezeMode::decoder_except_output}) {
        TrainConfig cfg;
        cfg.epochs = 2;
        cfg.learning_rate = 1e-3;
        cfg.freeze = mode;
        const auto init = net.init<float>(cfg.seed);
        const auto r = train(net, init, data, cfg);
        const std::string frozen = mode == FreezeMode::encoder ? "encoder/" : "decoder/";
        auto it = init.begin();
        for (const auto& p : r.final) {
            const bool same = p.weight == it->weight && p.bias == it->bias;
            EXPECT_EQ(same, p.name.rfind(frozen, 0) == 0) << to_string(mode) << " " << p.name;
            ++it;
        }
    }
}

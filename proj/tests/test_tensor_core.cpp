#include <gtest/gtest.h>

#include "lessnet/ops.hpp"
#include "support.hpp"

using namespace lessnet;
using namespace lessnet::testing;

TEST(Tensor, RejectsZeroExtentAndWrongLength)
{
    EXPECT_THROW(Tensor<float>(Shape{2, 0}), std::invalid_argument);
    EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), std::invalid_argument);
}

TEST(Tensor, ChannelViewsAreRowMajor)
{
    Tensor<int> t(Shape{2, 2, 3}, std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
    EXPECT_EQ(t.channels(), 2u);
    EXPECT_EQ(t.channel_stride(), 6u);
    EXPECT_EQ(t.channel(1)[0], 6);
    EXPECT_EQ(t.spatial(), (Shape{2, 3}));
}

TEST(Tape, BackwardRequiresScalar)
{
    Tape<double> tape;
    const auto x = tape.leaf(Tensor<double>(Shape{1, 2, 2}, 1.0));
    EXPECT_THROW(tape.backward(x), std::invalid_argument);
}

TEST(Tape, SharedSubexpressionGradientsAccumulate)
{
    // f(x) = sum(x * x + x) -> df/dx = 2x + 1
    Tape<double> tape;
    const auto x = tape.leaf(Tensor<double>(Shape{1, 1, 3}, std::vector<double>{-1.0, 0.5, 2.0}));
    tape.backward(sum(add(mul(x, x), x)));
    const auto& g = tape.grad(x);
    EXPECT_DOUBLE_EQ(g[0], -1.0);
    EXPECT_DOUBLE_EQ(g[1], 2.0);
    EXPECT_DOUBLE_EQ(g[2], 5.0);
}

TEST(Tape, RepeatedBackwardGivesSameGradient)
{
    Tape<double> tape;
    const auto x = tape.leaf(Tensor<double>(Shape{1, 1, 2}, std::vector<double>{3.0, -2.0}));
    const auto loss = sum(mul(x, x));
    tape.backward(loss);
    const Tensor<double> first = tape.grad(x);
    tape.backward(loss);
    EXPECT_EQ(tape.grad(x), first);
}

TEST(Tape, ConstantsReceiveNoGradient)
{
    Tape<double> tape;
    const auto c = tape.constant(Tensor<double>(Shape{1, 1, 2}, 2.0));
    const auto x = tape.leaf(Tensor<double>(Shape{1, 1, 2}, 1.0));
    tape.backward(sum(mul(c, x)));
    EXPECT_EQ(tape.grad(c), Tensor<double>(Shape{1, 1, 2}, 0.0));
    EXPECT_EQ(tape.grad(x), Tensor<double>(Shape{1, 1, 2}, 2.0));
}

TEST(Conv, HandComputedThreeByThree)
{
    // 1x3x3 input, one 3x3 all-ones kernel, zero padding: output is the 3x3 box sum.
    Tape<double> tape;
    const auto x = tape.constant(Tensor<double>(Shape{1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9}));
    const auto w = tape.constant(Tensor<double>(Shape{1, 1, 3, 3}, 1.0));
    const auto b = tape.constant(Tensor<double>(Shape{1}, 0.5));
    const Tensor<double>& y = conv(x, w, b).value();
    const std::vector<double> expected{12, 21, 16, 27, 45, 33, 24, 39, 28};
    for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(y[i], expected[i] + 0.5);
}

TEST(Conv, StrideTwoHalvesExtents)
{
    Tape<float> tape;
    const auto x = tape.constant(Tensor<float>(Shape{2, 8, 6}, 1.0f));
    const auto w = tape.constant(Tensor<float>(Shape{3, 2, 3, 3}, 1.0f));
    const auto b = tape.constant(Tensor<float>(Shape{3}));
    EXPECT_EQ(conv(x, w, b, 2).shape(), (Shape{3, 4, 3}));
}

TEST(Conv, ChannelMismatchNamesShapes)
{
    Tape<float> tape;
    const auto x = tape.constant(Tensor<float>(Shape{2, 4, 4}));
    const auto w = tape.constant(Tensor<float>(Shape{1, 3, 3, 3}));
    const auto b = tape.constant(Tensor<float>(Shape{1}));
    try {
        conv(x, w, b);
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("[2x4x4]"), std::string::npos);
    }
}

TEST(FractionalConv, ScattersEachInputOverATwoByTwoBlock)
{
    Tape<double> tape;
    const auto x = tape.constant(Tensor<double>(Shape{1, 1, 2}, std::vector<double>{1, 2}));
    const auto w = tape.constant(Tensor<double>(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
    const auto b = tape.constant(Tensor<double>(Shape{1}, 0.0));
    const Tensor<double>& y = fractional_conv(x, w, b).value();
    ASSERT_EQ(y.shape(), (Shape{1, 2, 4}));
    const std::vector<double> expected{1, 2, 2, 4, 3, 4, 6, 8};
    for (std::size_t i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(y[i], expected[i]);
}

TEST(Pool, ModesOnOneWindow)
{
    Tape<double> tape;
    const auto x = tape.constant(Tensor<double>(Shape{1, 2, 2}, std::vector<double>{4, -1, 2, 3}));
    EXPECT_DOUBLE_EQ(pool(x, PoolMode::min, 2).value()[0], -1.0);
    EXPECT_DOUBLE_EQ(pool(x, PoolMode::avg, 2).value()[0], 2.0);
    EXPECT_DOUBLE_EQ(pool(x, PoolMode::max, 2).value()[0], 4.0);
}

TEST(Pool, TiesRouteGradientToFirstElement)
{
    Tape<double> tape;
    const auto x = tape.leaf(Tensor<double>(Shape{1, 2, 2}, 1.0));
    tape.backward(sum(pool(x, PoolMode::max, 2)));
    EXPECT_EQ(tape.grad(x), Tensor<double>(Shape{1, 2, 2}, std::vector<double>{1, 0, 0, 0}));
}

TEST(Pool, RejectsNonDividingWindow)
{
    Tape<float> tape;
    EXPECT_THROW(pool(tape.constant(Tensor<float>(Shape{1, 6, 6})), PoolMode::avg, 4), std::invalid_argument);
}

TEST(Activations, LeakyReluAndSoftsignValues)
{
    Tape<double> tape;
    const auto x = tape.constant(Tensor<double>(Shape{1, 1, 3}, std::vector<double>{-2, 0, 3}));
    const auto& r = leaky_relu(x, 0.01).value();
    EXPECT_DOUBLE_EQ(r[0], -0.02);
    EXPECT_DOUBLE_EQ(r[2], 3.0);
    const auto& s = softsign(x).value();
    EXPECT_DOUBLE_EQ(s[0], -2.0 / 3.0);
    EXPECT_DOUBLE_EQ(s[2], 0.75);
}

TEST(Concat, StacksChannelsInOrder)
{
    Tape<int> tape;
    const auto a = tape.constant(Tensor<int>(Shape{1, 1, 2}, std::vector<int>{1, 2}));
    const auto b = tape.constant(Tensor<int>(Shape{2, 1, 2}, std::vector<int>{3, 4, 5, 6}));
    const auto& c = concat(std::vector<Var<int>>{a, b}).value();
    EXPECT_EQ(c, Tensor<int>(Shape{3, 1, 2}, std::vector<int>{1, 2, 3, 4, 5, 6}));
}

TEST(Conv, ZeroInputGivesBias)
{
    Tape<double> tape;
    std::mt19937_64 rng(3);
    const auto x = tape.constant(Tensor<double>(Shape{1, 3, 3}));
    const auto w = tape.constant(random_tensor(rng, Shape{1, 1, 3, 3}));
    const auto b = tape.constant(Tensor<double>(Shape{1}, 0.7));
    EXPECT_EQ(conv(x, w, b).value(), Tensor<double>(Shape{1, 3, 3}, 0.7));
}

TEST(Conv, CenterKernelIsIdentity)
{
    Tape<double> tape;
    std::mt19937_64 rng(4);
    Tensor<double> k(Shape{1, 1, 3, 3});
    k[4] = 1.0;
    const Tensor<double> img = random_tensor(rng, Shape{1, 5, 7});
    EXPECT_EQ(conv(tape.constant(img), tape.constant(k), tape.constant(Tensor<double>(Shape{1}))).value(), img);

    const auto one = tape.constant(Tensor<double>(Shape{1, 1, 1}, 2.0));
    EXPECT_DOUBLE_EQ(conv(one, tape.constant(k), tape.constant(Tensor<double>(Shape{1}))).value()[0], 2.0);
}

TEST(Conv, RowWithAllOnesKernel)
{
    Tape<double> tape;
    const auto x = tape.constant(Tensor<double>(Shape{1, 1, 3}, std::vector<double>{1, 2, 3}));
    const auto w = tape.constant(Tensor<double>(Shape{1, 1, 3, 3}, 1.0));
    const auto y = conv(x, w, tape.constant(Tensor<double>(Shape{1}))).value();
    EXPECT_EQ(y, Tensor<double>(Shape{1, 1, 3}, std::vector<double>{3, 6, 5}));
}

TEST(Conv, LinearInInputWithoutBias)
{
    std::mt19937_64 rng(5);
    for (std::size_t rank : {2u, 3u}) {
        Tape<double> tape;
        const Shape sp = rank == 2 ? Shape{2, 6, 5} : Shape{2, 4, 3, 5};
        const Shape ws = rank == 2 ? Shape{3, 2, 3, 3} : Shape{3, 2, 3, 3, 3};
        const auto x = tape.constant(random_tensor(rng, sp));
        const auto y = tape.constant(random_tensor(rng, sp));
        const auto w = tape.constant(random_tensor(rng, ws));
        const auto b = tape.constant(Tensor<double>(Shape{3}));
        const auto lhs = conv(add(x, y, 2.0, -0.5), w, b).value();
        const auto rhs = add(conv(x, w, b), conv(y, w, b), 2.0, -0.5).value();
        for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-12);
    }
}

TEST(FractionalConv, BroadcastsSinglePixelAndBias)
{
    Tape<double> tape;
    const auto w = tape.constant(Tensor<double>(Shape{1, 1, 2, 2}, 1.0));
    const auto zero_b = tape.constant(Tensor<double>(Shape{1}));
    EXPECT_EQ(fractional_conv(tape.constant(Tensor<double>(Shape{1, 1, 1}, 5.0)), w, zero_b).value(),
              Tensor<double>(Shape{1, 2, 2}, 5.0));
    const auto b = tape.constant(Tensor<double>(Shape{2}, std::vector<double>{0.25, -1.0}));
    const auto w2 = tape.constant(Tensor<double>(Shape{3, 2, 2, 2, 2}, 0.3));
    const auto y = fractional_conv(tape.constant(Tensor<double>(Shape{3, 2, 1, 3})), w2, b).value();
    ASSERT_EQ(y.shape(), (Shape{2, 4, 2, 6}));
    for (double v : y.channel(0)) EXPECT_EQ(v, 0.25);
    for (double v : y.channel(1)) EXPECT_EQ(v, -1.0);
}

TEST(Pool, SpecWindowAndConstantInvariance)
{
    Tape<double> tape;
    const auto x = tape.constant(Tensor<double>(Shape{1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
    EXPECT_DOUBLE_EQ(pool(x, PoolMode::max, 2).value()[0], 4.0);
    EXPECT_DOUBLE_EQ(pool(x, PoolMode::min, 2).value()[0], 1.0);
    EXPECT_DOUBLE_EQ(pool(x, PoolMode::avg, 2).value()[0], 2.5);

    const auto c = tape.constant(Tensor<double>(Shape{2, 8, 8, 8}, 0.375));
    for (PoolMode m : {PoolMode::min, PoolMode::avg, PoolMode::max})
        for (std::size_t k : {2u, 4u, 8u})
            for (double v : pool(c, m, k).value()) EXPECT_EQ(v, 0.375);
}

TEST(Pool, MinIsNegatedMaxOfNegation)
{
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        Tape<double> tape;
        const auto x = tape.constant(random_tensor(rng, Shape{3, 8, 16}));
        for (std::size_t k : {2u, 4u, 8u}) {
            const auto lhs = pool(x, PoolMode::min, k).value();
            const auto rhs = scale(pool(scale(x, -1.0), PoolMode::max, k), -1.0).value();
            EXPECT_EQ(lhs, rhs);
        }
    }
}

TEST(Pool, AvgGradientSpreadsEvenly)
{
    Tape<double> tape;
    const auto x = tape.leaf(Tensor<double>(Shape{1, 4, 4, 4}, 1.0));
    tape.backward(sum(pool(x, PoolMode::avg, 2)));
    for (double g : tape.grad(x)) EXPECT_DOUBLE_EQ(g, 1.0 / 8.0);
}

TEST(Concat, ShapesSingleAndRoundTrip)
{
    std::mt19937_64 rng(7);
    Tape<double> tape;
    const auto a = tape.constant(random_tensor(rng, Shape{2, 4, 4}));
    const auto b = tape.constant(random_tensor(rng, Shape{6, 4, 4}));
    const auto c = concat(std::vector<Var<double>>{a, b});
    EXPECT_EQ(c.shape(), (Shape{8, 4, 4}));
    EXPECT_EQ(concat(std::vector<Var<double>>{a}).value(), a.value());
    EXPECT_EQ(slice_channels(c, 0, 2).value(), a.value());
    EXPECT_EQ(slice_channels(c, 2, 6).value(), b.value());
    EXPECT_THROW(concat(std::vector<Var<double>>{a, tape.constant(Tensor<double>(Shape{1, 4, 2}))}),
                 std::invalid_argument);
}

TEST(Activations, LeakyReluGradients)
{
    Tape<double> tape;
    const auto x = tape.leaf(Tensor<double>(Shape{1, 1, 3}, std::vector<double>{2, -2, 0}));
    const auto y = leaky_relu(x, 0.01);
    EXPECT_DOUBLE_EQ(y.value()[0], 2.0);
    EXPECT_DOUBLE_EQ(y.value()[2], 0.0);
    tape.backward(sum(y));
    EXPECT_EQ(tape.grad(x), Tensor<double>(Shape{1, 1, 3}, std::vector<double>{1.0, 0.01, 1.0}));
}

TEST(Activations, SoftsignOddAndBounded)
{
    std::mt19937_64 rng(8);
    Tape<double> tape;
    EXPECT_DOUBLE_EQ(softsign(tape.constant(Tensor<double>::scalar(0.0))).value()[0], 0.0);
    EXPECT_DOUBLE_EQ(softsign(tape.constant(Tensor<double>::scalar(1.0))).value()[0], 0.5);
    const auto x = tape.constant(random_tensor(rng, Shape{1, 50}, -100, 100));
    const auto pos = softsign(x).value();
    const auto neg = softsign(scale(x, -1.0)).value();
    for (std::size_t i = 0; i < pos.size(); ++i) {
        EXPECT_EQ(neg[i], -pos[i]);
        EXPECT_LT(std::abs(pos[i]), 1.0);
    }
}

TEST(Tape, LinearAndQuadraticGradients)
{
    std::mt19937_64 rng(9);
    const Tensor<double> v = random_tensor(rng, Shape{2, 3, 3});
    Tape<double> tape;
    const auto x = tape.leaf(v);
    tape.backward(sum(x));
    EXPECT_EQ(tape.grad(x), Tensor<double>(v.shape(), 1.0));

    Tape<double> tape2;
    const auto y = tape2.leaf(v);
    tape2.backward(scale(sum(mul(y, y)), 0.5));
    const auto& g = tape2.grad(y);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_DOUBLE_EQ(g[i], v[i]);
}

TEST(Tape, ForwardBackwardIsDeterministic)
{
    std::mt19937_64 rng(10);
    const Tensor<double> img = random_tensor(rng, Shape{2, 8, 8});
    const Tensor<double> w = random_tensor(rng, Shape{4, 2, 3, 3});
    auto run = [&] {
        Tape<double> tape;
        const auto x = tape.leaf(img);
        const auto k = tape.leaf(w);
        const auto y = leaky_relu(conv(x, k, tape.constant(Tensor<double>(Shape{4}))));
        tape.backward(sum(mul(pool(y, PoolMode::max, 2), pool(y, PoolMode::avg, 2))));
        return std::pair{tape.grad(x), tape.grad(k)};
    };
    EXPECT_EQ(run(), run());
}

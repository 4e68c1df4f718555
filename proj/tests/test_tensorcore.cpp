#include "gradcheck_cases.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace grl;
using namespace grl::nn;
using grl::testing::random_param;
using grl::testing::random_tensor;

TEST(TensorCore, ShapeValidation) {
    EXPECT_THROW(Tensor(Shape{0, 1, 1, 1}), ShapeError);
    EXPECT_THROW(Tensor(Shape{1, 1, 2, 2}, std::vector<double>(3)), ShapeError);
    EXPECT_THROW(Var::constant(Tensor(Shape{1, 1, 2, 2})).item(), ShapeError);
}

TEST(TensorCore, Conv1x1IdentityKernel) {
    Rng rng(1);
    auto x = Var::constant(random_tensor({2, 1, 5, 7}, rng));
    auto w = Var::constant(Tensor({1, 1, 1, 1}, 1.0));
    auto y = conv2d(x, w, Var{}, 1, 1, 0, 0);
    EXPECT_EQ(y.value(), x.value());
}

TEST(TensorCore, ConvAllOnesKernel) {
    auto x = Var::constant(Tensor({1, 1, 4, 4}, 1.0));
    auto w = Var::constant(Tensor({1, 1, 3, 3}, 1.0));
    auto y = conv2d(x, w, Var{}, 1, 1, 0, 0);
    ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
    for (double v : y.value().data()) EXPECT_DOUBLE_EQ(v, 9.0);
}

TEST(TensorCore, ConvMatchesDirectLoop) {
    Rng rng(2);
    const Tensor xt = random_tensor({2, 3, 7, 6}, rng), wt = random_tensor({4, 3, 3, 2}, rng), bt = random_tensor({1, 4, 1, 1}, rng);
    const int sh = 2, sw = 1, ph = 1, pw = 0;
    auto y = conv2d(Var::constant(xt), Var::constant(wt), Var::constant(bt), sh, sw, ph, pw);
    const int ho = (7 + 2 * ph - 3) / sh + 1, wo = (6 + 2 * pw - 2) / sw + 1;
    ASSERT_EQ(y.shape(), (Shape{2, 4, ho, wo}));
    for (int n = 0; n < 2; ++n)
        for (int o = 0; o < 4; ++o)
            for (int i = 0; i < ho; ++i)
                for (int j = 0; j < wo; ++j) {
                    double s = bt.at(0, o, 0, 0);
                    for (int c = 0; c < 3; ++c)
                        for (int a = 0; a < 3; ++a)
                            for (int b = 0; b < 2; ++b) {
                                const int r = i * sh - ph + a, q = j * sw - pw + b;
                                if (r >= 0 && r < 7 && q >= 0 && q < 6) s += wt.at(o, c, a, b) * xt.at(n, c, r, q);
                            }
                    EXPECT_NEAR(y.value().at(n, o, i, j), s, 1e-12);
                }
}

TEST(TensorCore, TransposedConvIsAdjointOfConv) {
    // <conv(x), y> == <x, convT(y)> for the same kernel.
    Rng rng(3);
    const Tensor xt = random_tensor({1, 2, 8, 8}, rng), wt = random_tensor({3, 2, 4, 4}, rng);
    auto cx = conv2d(Var::constant(xt), Var::constant(wt), Var{}, 2, 2, 1, 1);
    const Tensor yt = random_tensor(cx.shape(), rng);
    // Transposed weights are [Cin, Cout, KH, KW] with Cin its own input.
    auto ty = conv_transpose2d(Var::constant(yt), Var::constant(wt), Var{}, 2, 2, 1, 1);
    ASSERT_EQ(ty.shape(), xt.shape());
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < yt.size(); ++i) lhs += cx.value()[i] * yt[i];
    for (std::size_t i = 0; i < xt.size(); ++i) rhs += xt[i] * ty.value()[i];
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs)));
}

TEST(TensorCore, ConvFiniteDifferenceSmallInput) {
    Rng rng(4);
    auto x = random_param({1, 2, 6, 6}, rng);
    auto w = random_param({3, 2, 3, 3}, rng), b = random_param({1, 3, 1, 1}, rng);
    const Tensor proj = random_tensor({1, 3, 6, 6}, rng);
    const auto r = grad_check([&] { return weighted_sum(conv2d(x, w, b, 1, 1, 1, 1), proj); },
                              {{"x", x}, {"w", w}, {"b", b}}, 1e-5, 1e-6);
    EXPECT_TRUE(r.passed) << r.worst_param << " " << r.max_rel_error;
}

TEST(TensorCore, ActivationValues) {
    auto x = Var::constant(Tensor({1, 1, 1, 4}, std::vector<double>{-2.0, -0.5, 0.0, 3.0}));
    const auto lr = leaky_relu(x).value();
    EXPECT_DOUBLE_EQ(lr[0], -0.4);
    EXPECT_DOUBLE_EQ(lr[1], -0.1);
    EXPECT_DOUBLE_EQ(lr[3], 3.0);
    EXPECT_DOUBLE_EQ(relu(x).value()[1], 0.0);
    EXPECT_DOUBLE_EQ(sigmoid(x).value()[2], 0.5);
    EXPECT_NEAR(sigmoid(Var::constant(Tensor({1, 1, 1, 1}, -800.0))).value()[0], 0.0, 1e-300);
    EXPECT_DOUBLE_EQ(tanh(x).value()[3], std::tanh(3.0));
}

TEST(TensorCore, InstanceNormStatistics) {
    Rng rng(5);
    Tensor t({2, 3, 5, 4});
    for (double& v : t.data()) v = 7.0 + 3.0 * rng.normal();
    const auto y = instance_norm(Var::constant(t)).value();
    const std::size_t P = 20;
    for (std::size_t p = 0; p < 6; ++p) {
        double m = 0.0, s = 0.0;
        for (std::size_t i = 0; i < P; ++i) m += y[p * P + i];
        m /= P;
        for (std::size_t i = 0; i < P; ++i) s += (y[p * P + i] - m) * (y[p * P + i] - m);
        EXPECT_NEAR(m, 0.0, 1e-12);
        EXPECT_NEAR(std::sqrt(s / P), 1.0, 1e-4);
    }
}

TEST(TensorCore, ResamplingShapes) {
    Rng rng(6);
    auto x = Var::constant(random_tensor({1, 2, 4, 6}, rng));
    EXPECT_EQ(upsample2x(x).shape(), (Shape{1, 2, 8, 12}));
    EXPECT_EQ(downsample2x(x).shape(), (Shape{1, 2, 2, 3}));
    auto s = Var::constant(random_tensor({1, 2, 1, 6}, rng));
    EXPECT_EQ(upsample2x(s).shape(), (Shape{1, 2, 1, 12}));
    EXPECT_EQ(downsample2x(s).shape(), (Shape{1, 2, 1, 3}));
    // Pooling an upsampled tensor gives it back.
    EXPECT_EQ(downsample2x(upsample2x(x)).value(), x.value());
}

TEST(TensorCore, BceAndL1Values) {
    auto half = Var::constant(Tensor({1, 1, 2, 2}, 0.5));
    EXPECT_NEAR(bce(half, 1.0).item(), std::log(2.0), 1e-15);
    EXPECT_NEAR(bce(half, 0.0).item(), std::log(2.0), 1e-15);
    EXPECT_NEAR(cgan_discriminator_loss(half, half).item(), std::log(2.0), 1e-15);
    auto zero = Var::constant(Tensor({1, 1, 2, 2}, 0.0));
    auto one = Var::constant(Tensor({1, 1, 2, 2}, 1.0));
    EXPECT_DOUBLE_EQ(l1(zero, one).item(), 1.0);
    EXPECT_NEAR(cgan_generator_loss(half, zero, one).item(), std::log(2.0) + 100.0, 1e-12);
    // Saturated probabilities stay finite.
    EXPECT_TRUE(std::isfinite(bce(one, 0.0).item()));
}

TEST(TensorCore, AdamFirstStep) {
    std::vector<Tensor> p{Tensor({1, 1, 1, 3}, 1.0)};
    std::vector<Tensor> g{Tensor({1, 1, 1, 3}, std::vector<double>{0.3, -5.0, 0.0})};
    AdamState st;
    adam_step(p, g, st);
    // Bias-corrected first step moves by lr * sign(g).
    EXPECT_NEAR(p[0][0], 1.0 - 0.0002, 1e-9);
    EXPECT_NEAR(p[0][1], 1.0 + 0.0002, 1e-9);
    EXPECT_EQ(p[0][2], 1.0);
}

TEST(TensorCore, AdamDeterministic) {
    auto run = [] {
        Rng rng(7);
        std::vector<Tensor> p{random_tensor({1, 2, 3, 3}, rng)};
        AdamState st;
        for (int i = 0; i < 20; ++i) {
            std::vector<Tensor> g{random_tensor({1, 2, 3, 3}, rng)};
            adam_step(p, g, st);
        }
        return p[0];
    };
    EXPECT_EQ(run(), run());
}

TEST(TensorCore, AdamRejectsMismatchedShapes) {
    std::vector<Tensor> p{Tensor({1, 1, 1, 3})};
    std::vector<Tensor> g{Tensor({1, 1, 1, 2})};
    AdamState st;
    EXPECT_THROW(adam_step(p, g, st), ShapeError);
}

TEST(TensorCore, LinearGradientVeryTight) {
    Rng rng(8);
    Linear fc(5, 3, rng);
    auto x = random_param({4, 5, 1, 1}, rng);
    ParamList ps{{"x", x}};
    fc.collect("fc", ps);
    const Tensor proj = random_tensor({4, 3, 1, 1}, rng);
    const auto r = grad_check([&] { return weighted_sum(fc(x), proj); }, ps, 1e-5, 1e-6);
    EXPECT_TRUE(r.passed) << r.worst_param << " " << r.max_rel_error;
}

TEST(TensorCore, EncoderDecoderGradient) {
    Rng rng(9);
    auto e1 = Conv2d::square(1, 4, 3, 2, rng), e2 = Conv2d::square(4, 8, 3, 2, rng);
    auto d2 = Conv2d::square(8, 4, 3, 1, rng), d1 = Conv2d::square(8, 1, 3, 1, rng);
    const Tensor xin = random_tensor({1, 1, 16, 16}, rng), yt = random_tensor({1, 1, 16, 16}, rng);
    auto x = Var::constant(xin), y = Var::constant(yt);
    auto net = [&] {
        auto h1 = leaky_relu(instance_norm(e1(x)));
        auto h2 = leaky_relu(instance_norm(e2(h1)));
        auto u2 = relu(d2(upsample2x(h2)));
        return tanh(d1(upsample2x(concat_channels(u2, h1))));
    };
    ParamList ps;
    e1.collect("e1", ps);
    e2.collect("e2", ps);
    d2.collect("d2", ps);
    d1.collect("d1", ps);
    const auto r = grad_check([&] { return l1(net(), y); }, ps);
    EXPECT_TRUE(r.passed) << r.worst_param << " " << r.max_rel_error;
    EXPECT_EQ(r.checked, parameter_count(ps));
}

TEST(TensorCore, GradCheckCatchesCorruptedBackward) {
    Rng rng(10);
    auto x = random_param({1, 1, 3, 3}, rng);
    auto bad_square = [](const Var& v) {
        return detail::unary(
            v, "bad_square", [](double a) { return a * a; }, [](double a, double) { return 2.02 * a; });
    };
    const Tensor proj = random_tensor({1, 1, 3, 3}, rng);
    const auto r = grad_check([&] { return weighted_sum(bad_square(x), proj); }, {{"x", x}});
    EXPECT_FALSE(r.passed);
    EXPECT_NEAR(r.max_rel_error, 0.01 / 1.01, 1e-4);
}

TEST(TensorCore, RandomShapeGradChecks) {
    Rng rng(11);
    std::size_t total = 0;
    for (int round = 0; round < 2; ++round)
        for (auto& c : grl::testing::make_grad_cases(rng)) {
            const auto r = grad_check(c.loss, c.params);
            EXPECT_LT(r.max_rel_error, 1e-4) << c.name << " worst " << r.worst_param << "[" << r.worst_index << "]";
            ++total;
        }
    EXPECT_GE(total, 20u);
}

TEST(TensorCore, NonFiniteForwardThrows) {
    auto x = Var::constant(Tensor({1, 1, 1, 1}, std::numeric_limits<double>::infinity()));
    auto w = Var::constant(Tensor({1, 1, 1, 1}, 0.0));
    EXPECT_THROW(conv2d(x, w, Var{}, 1, 1, 0, 0), NumericError);
}

TEST(TensorCore, ParameterBlobRoundTrip) {
    Rng rng(12);
    auto a = Conv2d::square(2, 3, 3, 1, rng);
    Linear b(4, 2, rng);
    ParamList ps;
    a.collect("a", ps);
    b.collect("b", ps);
    std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
    write_params(ps, ss);
    const std::string bytes = ss.str();
    EXPECT_EQ(bytes.substr(0, 4), "NNW1");

    Rng other(99);
    auto a2 = Conv2d::square(2, 3, 3, 1, other);
    Linear b2(4, 2, other);
    ParamList ps2;
    a2.collect("a", ps2);
    b2.collect("b", ps2);
    std::istringstream is(bytes, std::ios::binary);
    read_params(ps2, is);
    for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_EQ(ps2[i].var.value(), ps[i].var.value());

    ParamList wrong;
    Linear c(4, 3, other);
    a2.collect("a", wrong);
    c.collect("b", wrong);
    std::istringstream is2(bytes, std::ios::binary);
    EXPECT_THROW(read_params(wrong, is2), std::runtime_error);
}

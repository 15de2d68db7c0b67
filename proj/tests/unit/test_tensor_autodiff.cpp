#include <gtest/gtest.h>

#include <cmath>

#include "citrinet/error.hpp"
#include "citrinet/ops.hpp"
#include "test_support.hpp"

using namespace citrinet;
using citrinet::testing::max_fd_error;
using citrinet::testing::probe_loss;
using citrinet::testing::random_tensor;

namespace {

void expect_values(const Tensor &t, const std::vector<double> &expected, double tol = 1e-12) {
    ASSERT_EQ(t.size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i)
        EXPECT_NEAR(t.data()[i], expected[i], tol) << "entry " << i;
}

} // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    const Tensor eye(Shape{2, 2}, {1, 0, 0, 1});
    const Tensor a(Shape{2, 2}, {1, 2, 3, 4});
    expect_values(matmul(eye, a), {1, 2, 3, 4});
}

TEST(Matmul, HandExample) {
    const Tensor a(Shape{2, 2}, {1, 2, 3, 4});
    const Tensor b(Shape{2, 2}, {5, 6, 7, 8});
    expect_values(matmul(a, b), {19, 22, 43, 50});
}

TEST(Matmul, ZeroAnnihilates) {
    Rng rng(1);
    const auto b = random_tensor({3, 4}, rng, false);
    expect_values(matmul(Tensor::zeros({2, 3}), b), std::vector<double>(8, 0.0));
}

TEST(Matmul, MismatchNamesBothShapes) {
    try {
        matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
        FAIL() << "expected DimensionError";
    } catch (const DimensionError &e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2,3] x [2,3]"), std::string::npos) << msg;
    }
}

TEST(Conv1d, PointwiseScaling) {
    const Tensor x(Shape{1, 1, 3}, {1, 2, 3});
    const Tensor w(Shape{1, 1, 1}, {2});
    expect_values(conv1d(x, w, Tensor()), {2, 4, 6});
}

TEST(Conv1d, SameWindowSum) {
    const Tensor x(Shape{1, 1, 4}, {1, 2, 3, 4});
    const Tensor w(Shape{1, 1, 3}, {1, 1, 1});
    expect_values(conv1d(x, w, Tensor()), {3, 6, 9, 7});
}

TEST(Conv1d, StrideTwoLength) {
    const auto y = conv1d(Tensor::ones({1, 1, 5}), Tensor::ones({1, 1, 3}), Tensor(), {2, 1});
    EXPECT_EQ(y.dim(2), 3u);
}

TEST(Conv1d, RejectsEvenKernelAndBadGroups) {
    EXPECT_THROW(conv1d(Tensor::ones({1, 2, 5}), Tensor::ones({2, 2, 2}), Tensor()), ConfigError);
    EXPECT_THROW(conv1d(Tensor::ones({1, 3, 5}), Tensor::ones({2, 1, 3}), Tensor(), {1, 2}), ConfigError);
}

// Separable conv (depthwise then pointwise) against a direct dense sum over
// the same receptive field.
TEST(Conv1d, SeparableMatchesDenseOracle) {
    Rng rng(3);
    const std::size_t B = 2, C = 4, T = 8, K = 3, O = 3;
    for (std::size_t stride : {1, 2}) {
        const auto x = random_tensor({B, C, T}, rng, false);
        const auto dw = random_tensor({C, 1, K}, rng, false);
        const auto pw = random_tensor({O, C, 1}, rng, false);
        const auto y = conv1d(conv1d(x, dw, Tensor(), {stride, C}), pw, Tensor());
        const std::size_t To = (T + stride - 1) / stride;
        ASSERT_EQ(y.shape(), (Shape{B, O, To}));
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < O; ++o)
                for (std::size_t t = 0; t < To; ++t) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < C; ++c) {
                        double d = 0.0;
                        for (std::size_t k = 0; k < K; ++k) {
                            const long src = static_cast<long>(t * stride + k) - 1;
                            if (src >= 0 && src < static_cast<long>(T))
                                d += dw.at({c, 0, k}) * x.at({b, c, static_cast<std::size_t>(src)});
                        }
                        acc += pw.at({o, c, 0}) * d;
                    }
                    EXPECT_NEAR(y.at({b, o, t}), acc, 1e-10);
                }
    }
}

TEST(Softmax, UniformAndTwoClassAndLargeLogits) {
    expect_values(softmax(Tensor::zeros({4}), 0), {0.25, 0.25, 0.25, 0.25});
    expect_values(softmax(Tensor(Shape{2}, {0.0, std::log(3.0)}), 0), {0.25, 0.75});
    expect_values(softmax(Tensor(Shape{2}, {1000.0, 1000.0}), 0), {0.5, 0.5});
    const auto ls = log_softmax(Tensor(Shape{2}, {1000.0, 1000.0}), 0);
    expect_values(ls, {std::log(0.5), std::log(0.5)});
}

TEST(Softmax, RowsAreProbabilityVectors) {
    Rng rng(4);
    const auto x = random_tensor({3, 5, 7}, rng, false, 5.0);
    for (std::size_t axis = 0; axis < 3; ++axis) {
        const auto p = softmax(x, axis);
        const auto s = sum(p, axis);
        for (double v : p.data())
            EXPECT_GE(v, 0.0);
        for (double v : s.data())
            EXPECT_NEAR(v, 1.0, 1e-12);
    }
}

TEST(Backward, SquareAtThreeGivesSix) {
    Tensor x = Tensor::scalar(3.0);
    x.set_requires_grad(true);
    Tape tape;
    Tensor y;
    {
        TapeScope scope(tape);
        y = square(x);
    }
    backward(tape, y);
    EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, UnusedLeafGetsZeroGradient) {
    Tensor x = Tensor::scalar(2.0), unused = Tensor::scalar(5.0);
    x.set_requires_grad(true);
    unused.set_requires_grad(true);
    Tape tape;
    Tensor y;
    {
        TapeScope scope(tape);
        y = mul(x, x);
    }
    backward(tape, y);
    EXPECT_EQ(unused.grad()[0], 0.0);
}

TEST(Backward, NonScalarLossIsContractError) {
    Tensor x = Tensor::ones({2});
    x.set_requires_grad(true);
    Tape tape;
    Tensor y;
    {
        TapeScope scope(tape);
        y = mul_scalar(x, 2.0);
    }
    EXPECT_THROW(backward(tape, y), ContractError);
}

TEST(Backward, NothingRecordedWithoutTape) {
    Tensor x = Tensor::ones({2});
    x.set_requires_grad(true);
    Tape tape;
    const auto y = sum(square(x));
    EXPECT_TRUE(tape.empty());
    EXPECT_THROW(backward(tape, y), ContractError);
}

TEST(Backward, RepeatedRunsAreBitIdentical) {
    Rng rng(5);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 2}, rng);
    auto run = [&] {
        a.zero_grad();
        b.zero_grad();
        Tape tape;
        Tensor loss;
        {
            TapeScope scope(tape);
            loss = probe_loss(swish(matmul(a, b)));
        }
        backward(tape, loss);
        return std::make_pair(a.grad(), b.grad());
    };
    const auto first = run();
    const auto second = run();
    EXPECT_EQ(first, second);
}

// Every differentiable op against central differences, 64-bit, rel err <= 1e-6.
class OpGradient : public ::testing::Test {
  protected:
    Rng rng{11};
    static constexpr double kTol = 1e-6;
};

TEST_F(OpGradient, BroadcastArithmetic) {
    auto a = random_tensor({2, 3, 4}, rng);
    auto b = random_tensor({3, 1}, rng);
    auto c = random_tensor({4}, rng);
    auto pos = random_tensor({2, 3, 4}, rng);
    auto loss = [&] {
        const Tensor denom = add_scalar(square(pos), 1.0);
        return probe_loss(div(sub(mul(add(a, b), c), neg(b)), denom));
    };
    EXPECT_LE(max_fd_error(loss, {a, b, c, pos}), kTol);
}

TEST_F(OpGradient, UnaryOps) {
    auto x = random_tensor({3, 5}, rng);
    auto loss = [&] {
        const Tensor y = add(add(sigmoid(x), swish(x)), add(relu(add_scalar(x, 0.05)), exp(mul_scalar(x, 0.5))));
        return probe_loss(add(y, log(add_scalar(square(x), 0.5))));
    };
    EXPECT_LE(max_fd_error(loss, {x}), kTol);
}

TEST_F(OpGradient, Reductions) {
    auto x = random_tensor({2, 3, 4}, rng);
    auto loss = [&] {
        return add(add(probe_loss(sum(x, 1, true)), probe_loss(mean(x, 2))), mul(mean(x), sum(square(x))));
    };
    EXPECT_LE(max_fd_error(loss, {x}), kTol);
}

TEST_F(OpGradient, ShapeOps) {
    auto x = random_tensor({2, 3, 4}, rng);
    auto loss = [&] { return probe_loss(reshape(transpose(permute(x, {2, 0, 1}), 0, 2), {6, 4})); };
    EXPECT_LE(max_fd_error(loss, {x}), kTol);
}

TEST_F(OpGradient, MatmulBmmLinear) {
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 2}, rng);
    auto p = random_tensor({2, 3, 4}, rng);
    auto q = random_tensor({2, 4, 5}, rng);
    auto w = random_tensor({3, 4}, rng);
    auto bias = random_tensor({3}, rng);
    auto loss = [&] {
        return add(add(probe_loss(matmul(a, b)), probe_loss(bmm(p, q))), probe_loss(linear(p, w, bias)));
    };
    EXPECT_LE(max_fd_error(loss, {a, b, p, q, w, bias}), kTol);
}

TEST_F(OpGradient, Conv1dDenseDepthwiseStrided) {
    auto x = random_tensor({2, 4, 7}, rng);
    auto w = random_tensor({3, 4, 5}, rng);
    auto bias = random_tensor({3}, rng);
    auto dw = random_tensor({4, 1, 3}, rng);
    auto loss = [&] {
        return add(probe_loss(conv1d(x, w, bias, {1, 1})), probe_loss(conv1d(x, dw, Tensor(), {2, 4})));
    };
    EXPECT_LE(max_fd_error(loss, {x, w, bias, dw}), kTol);
}

TEST_F(OpGradient, SoftmaxFamily) {
    auto x = random_tensor({2, 3, 4}, rng);
    std::vector<std::uint8_t> allowed(2 * 3 * 4, 1);
    allowed[3] = allowed[7] = allowed[13] = 0;
    auto loss = [&] {
        return add(add(probe_loss(softmax(x, 1)), probe_loss(log_softmax(x, 2))),
                   probe_loss(masked_softmax(x, allowed, 2)));
    };
    EXPECT_LE(max_fd_error(loss, {x}), kTol);
}

TEST_F(OpGradient, LayerNorm) {
    auto x = random_tensor({2, 3, 5}, rng);
    auto g = random_tensor({3}, rng);
    auto b = random_tensor({3}, rng);
    auto g2 = random_tensor({5}, rng);
    auto b2 = random_tensor({5}, rng);
    auto loss = [&] {
        return add(probe_loss(layer_norm(x, g, b, 1)), probe_loss(layer_norm(x, g2, b2, 2)));
    };
    EXPECT_LE(max_fd_error(loss, {x, g, b, g2, b2}), kTol);
}

TEST_F(OpGradient, BatchNormTrainingOverValidFrames) {
    auto x = random_tensor({2, 3, 6}, rng);
    auto g = random_tensor({3}, rng);
    auto b = random_tensor({3}, rng);
    const std::vector<std::size_t> len = {6, 4};
    auto loss = [&] {
        Tensor rm = Tensor::zeros({3}), rv = Tensor::ones({3});
        return probe_loss(batch_norm1d(x, g, b, rm, rv, len, {}));
    };
    EXPECT_LE(max_fd_error(loss, {x, g, b}), kTol);
}

TEST_F(OpGradient, EmbeddingMaskAndDropout) {
    auto table = random_tensor({5, 3}, rng);
    auto x = random_tensor({2, 3, 4}, rng);
    const std::vector<std::int64_t> ids = {4, 0, 4, 2};
    const std::vector<std::size_t> len = {4, 2};
    auto loss = [&] {
        Rng drop(99);
        return add(add(probe_loss(embedding(table, ids, {2, 2})), probe_loss(mask_frames(x, len))),
                   probe_loss(dropout(x, 0.3, drop, true)));
    };
    EXPECT_LE(max_fd_error(loss, {table, x}), kTol);
}

TEST(Dropout, IdentityInEvalAndInvertedScaleInTraining) {
    Rng rng(8);
    const auto x = random_tensor({4, 50}, rng, false);
    EXPECT_EQ(dropout(x, 0.5, rng, false).data()[7], x.data()[7]);
    const auto y = dropout(x, 0.25, rng, true);
    for (std::size_t i = 0; i < x.size(); ++i)
        if (y.data()[i] != 0.0)
            EXPECT_NEAR(y.data()[i], x.data()[i] / 0.75, 1e-15);
}

TEST(MaskedSoftmax, FullyMaskedRowIsContractError) {
    std::vector<std::uint8_t> allowed = {1, 1, 0, 0};
    EXPECT_THROW(masked_softmax(Tensor::zeros({1, 2, 2}), allowed, 1), ContractError);
}

TEST(Embedding, OutOfRangeIdIsInputError) {
    const std::vector<std::int64_t> ids = {5};
    EXPECT_THROW(embedding(Tensor::zeros({5, 2}), ids, {1}), InputError);
}

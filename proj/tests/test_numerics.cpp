#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "rwf/numerics/adam.hpp"
#include "rwf/numerics/finite_diff.hpp"
#include "rwf/numerics/matrix.hpp"
#include "rwf/numerics/ops.hpp"
#include "rwf/numerics/rng.hpp"

using namespace rwf;

namespace {

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            out(i, j) = s;
        }
    return out;
}

}  // namespace

TEST(Matmul, IdentityAndHandChecked) {
    RngStream rng(1);
    const Matrix m = rng_normal(rng, 3, 4, 1.0);
    EXPECT_EQ(matmul(Matrix::identity(3), m), m);
    const Matrix r = matmul(Matrix{{1, 2}, {3, 4}}, Matrix{{1}, {1}});
    EXPECT_EQ(r, (Matrix{{3}, {7}}));
}

TEST(Matmul, MatchesTripleLoopOracle) {
    RngStream rng(2);
    const Matrix a = rng_normal(rng, 8, 8, 1.0);
    const Matrix b = rng_normal(rng, 8, 8, 1.0);
    EXPECT_LT(max_abs_diff(matmul(a, b), naive_matmul(a, b)), 1e-12);
    EXPECT_LT(max_abs_diff(matmul_nt(a, b), naive_matmul(a, transpose(b))), 1e-12);
    EXPECT_LT(max_abs_diff(matmul_tn(a, b), naive_matmul(transpose(a), b)), 1e-12);
}

TEST(Matmul, DimensionMismatchThrows) {
    EXPECT_THROW(matmul(Matrix(2, 3), Matrix(2, 3)), std::invalid_argument);
}

TEST(Matmul, NonFiniteIsAnError) {
    Matrix a{{1e308, 1e308}};
    Matrix b{{1e308}, {1e308}};
    EXPECT_THROW(matmul(a, b), NumericError);
}

TEST(Matmul, AssociativeOnRandomTriples) {
    RngStream rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const auto n = 1 + rng.uniform_index(6), k = 1 + rng.uniform_index(6), p = 1 + rng.uniform_index(6),
                   q = 1 + rng.uniform_index(6);
        const Matrix a = rng_normal(rng, n, k, 1.0), b = rng_normal(rng, k, p, 1.0), c = rng_normal(rng, p, q, 1.0);
        const Matrix left = matmul(matmul(a, b), c);
        const Matrix right = matmul(a, matmul(b, c));
        EXPECT_LT(max_abs_diff(left, right), 1e-8 * std::max(1.0, frobenius_norm(left)));
    }
}

TEST(RowSoftmax, UniformOnEqualScores) {
    const Matrix out = row_softmax(Matrix{{2.5, 2.5, 2.5, 2.5}}, 7.0);
    for (double v : out.data()) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(RowSoftmax, ClosedFormTwoElement) {
    const Matrix out = row_softmax(Matrix{{1.0, 0.0}}, 1.0);
    const double e = std::exp(1.0);
    EXPECT_NEAR(out(0, 0), e / (1.0 + e), 1e-15);
    EXPECT_NEAR(out(0, 0), 0.7311, 1e-4);
    EXPECT_NEAR(out(0, 1), 0.2689, 1e-4);
}

TEST(RowSoftmax, LargeScoresDoNotOverflow) {
    const Matrix out = row_softmax(Matrix{{1000.0, 999.0}}, 1.0);
    EXPECT_TRUE(out.all_finite());
    EXPECT_NEAR(out(0, 0), 0.7311, 1e-4);
}

TEST(RowSoftmax, RejectsBadScaleAndNonFinite) {
    EXPECT_THROW(row_softmax(Matrix{{1.0}}, 0.0), std::invalid_argument);
    EXPECT_THROW(row_softmax(Matrix{{NAN, 1.0}}, 1.0), NumericError);
}

TEST(RowSoftmax, FuzzedRowsAreStochasticAndShiftInvariant) {
    RngStream rng(4);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t rows = 1 + rng.uniform_index(4), cols = 1 + rng.uniform_index(9);
        const double magnitude = trial % 3 == 0 ? 1e4 : (trial % 3 == 1 ? 1.0 : 30.0);
        Matrix s = rng_normal(rng, rows, cols, magnitude);
        const double scale = 0.01 + 5.0 * rng.uniform();
        const Matrix p = row_softmax(s, scale);
        Matrix shifted = s;
        for (std::size_t i = 0; i < rows; ++i) {
            const double c = 100.0 * rng.normal();
            for (double& v : shifted.row(i)) v += c;
        }
        const Matrix q = row_softmax(shifted, scale);
        for (std::size_t i = 0; i < rows; ++i) {
            double sum = 0.0;
            for (double v : p.row(i)) {
                ASSERT_GE(v, 0.0);
                sum += v;
            }
            ASSERT_NEAR(sum, 1.0, 1e-9);
        }
        ASSERT_LT(max_abs_diff(p, q), 1e-9);
    }
}

TEST(RowSoftmax, SinglePrecisionRowsSumToOne) {
    RngStream rng(5);
    const MatrixF s = matrix_cast<float>(rng_normal(rng, 16, 12, 10.0));
    const MatrixF p = row_softmax(s, 1.0f);
    for (std::size_t i = 0; i < p.rows(); ++i) {
        float sum = 0.0f;
        for (float v : p.row(i)) sum += v;
        EXPECT_NEAR(sum, 1.0f, 1e-6f);
    }
}

TEST(LayerNorm, ConstantRowMapsToBias) {
    const std::vector<double> gain(4, 1.0), bias(4, 0.0);
    const Matrix out = layer_norm(Matrix{{3, 3, 3, 3}}, std::span<const double>(gain), std::span<const double>(bias), 1e-5);
    for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, AlreadyNormalizedRow) {
    const std::vector<double> gain(2, 1.0), bias(2, 0.0);
    const Matrix out = layer_norm(Matrix{{1, -1}}, std::span<const double>(gain), std::span<const double>(bias), 1e-14);
    EXPECT_NEAR(out(0, 0), 1.0, 1e-12);
    EXPECT_NEAR(out(0, 1), -1.0, 1e-12);
}

TEST(LayerNorm, RandomRowStatistics) {
    RngStream rng(6);
    const std::vector<double> gain(16, 1.0), bias(16, 0.0);
    const Matrix x = rng_normal(rng, 20, 16, 3.0);
    const Matrix out = layer_norm(x, std::span<const double>(gain), std::span<const double>(bias), 1e-12);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        double mean = 0.0, var = 0.0;
        for (double v : out.row(i)) mean += v;
        mean /= 16.0;
        for (double v : out.row(i)) var += (v - mean) * (v - mean);
        var /= 16.0;
        EXPECT_LT(std::abs(mean), 1e-9);
        EXPECT_NEAR(var, 1.0, 1e-6);
    }
}

TEST(LayerNorm, LengthMismatchThrows) {
    const std::vector<double> gain(3, 1.0), bias(4, 0.0);
    EXPECT_THROW(layer_norm(Matrix(1, 4), std::span<const double>(gain), std::span<const double>(bias), 1e-5),
                 std::invalid_argument);
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
    const Matrix logits(3, 6, 0.7);
    const std::vector<std::size_t> labels{0, 2, 4};
    const ClassMask mask = ClassMask::of(6, std::vector<int>{0, 2, 4, 5});
    EXPECT_NEAR(cross_entropy(logits, std::span<const std::size_t>(labels), mask), std::log(4.0), 1e-12);
}

TEST(CrossEntropy, LargeGapOnCorrectClassGoesToZero) {
    const std::vector<std::size_t> labels{1};
    double prev = 1e9;
    for (double gap : {1.0, 10.0, 100.0, 700.0}) {
        const Matrix logits{{0.0, gap, 0.0}};
        const double loss = cross_entropy(logits, std::span<const std::size_t>(labels), ClassMask::all(3));
        EXPECT_LE(loss, prev);
        prev = loss;
    }
    EXPECT_LT(prev, 1e-12);
}

TEST(CrossEntropy, MatchesTwoStepOracleAndGradient) {
    RngStream rng(7);
    const Matrix logits = rng_normal(rng, 4, 6, 2.0);
    const std::vector<std::size_t> labels{0, 3, 5, 3};
    const ClassMask mask = ClassMask::of(6, std::vector<int>{0, 1, 3, 5});
    // Oracle: explicit softmax over the unmasked classes, then log.
    double expected = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        double z = 0.0;
        for (std::size_t c = 0; c < 6; ++c)
            if (mask.allows(c)) z += std::exp(logits(i, c));
        expected += -std::log(std::exp(logits(i, labels[i])) / z);
    }
    expected /= 4.0;
    Matrix grad;
    const double loss = cross_entropy(logits, std::span<const std::size_t>(labels), mask, &grad);
    EXPECT_NEAR(loss, expected, 1e-10);

    const std::vector<double> x0(logits.data().begin(), logits.data().end());
    auto f = [&](std::span<const double> x) {
        Matrix l(4, 6, std::vector<double>(x.begin(), x.end()));
        return cross_entropy(l, std::span<const std::size_t>(labels), mask);
    };
    const auto fd = finite_diff_grad(f, x0, 1e-6);
    for (std::size_t i = 0; i < fd.size(); ++i) EXPECT_NEAR(grad.data()[i], fd[i], 1e-8);
}

TEST(CrossEntropy, MaskedLabelIsAnError) {
    const std::vector<std::size_t> labels{2};
    EXPECT_THROW(cross_entropy(Matrix(1, 3), std::span<const std::size_t>(labels), ClassMask::of(3, std::vector<int>{0, 1})),
                 std::invalid_argument);
}

TEST(Adam, ZeroGradientLeavesParamUnchanged) {
    Matrix p{{1.0, -2.0}};
    const Matrix before = p;
    AdamMoments m = AdamMoments::zeros_like(p);
    for (std::uint64_t s = 1; s <= 5; ++s) adam_step(p, Matrix(1, 2), m, s, AdamConfig{});
    EXPECT_EQ(p, before);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
    Matrix p{{0.5, 0.5}};
    AdamMoments m = AdamMoments::zeros_like(p);
    AdamConfig cfg;
    cfg.lr = 0.01;
    adam_step(p, Matrix{{3.0, -0.2}}, m, 1, cfg);
    // Bias-corrected first step: m_hat = g, v_hat = g^2 -> lr * g / (|g| + eps).
    EXPECT_NEAR(p(0, 0), 0.5 - 0.01 * 3.0 / (3.0 + 1e-8), 1e-15);
    EXPECT_NEAR(p(0, 1), 0.5 + 0.01 * 0.2 / (0.2 + 1e-8), 1e-15);
}

TEST(Adam, ConvergesOnQuadratic) {
    Matrix x{{1.0}};
    AdamMoments m = AdamMoments::zeros_like(x);
    AdamConfig cfg;
    cfg.lr = 0.1;
    for (std::uint64_t s = 1; s <= 100; ++s) adam_step(x, Matrix{{2.0 * x(0, 0)}}, m, s, cfg);
    EXPECT_LT(std::abs(x(0, 0)), 0.1);
}

TEST(Adam, ShapeMismatchThrows) {
    Matrix p(2, 2);
    AdamMoments m = AdamMoments::zeros_like(p);
    EXPECT_THROW(adam_step(p, Matrix(2, 3), m, 1, AdamConfig{}), std::invalid_argument);
}

TEST(FiniteDiff, LinearAndQuadratic) {
    const std::vector<double> c{1.5, -2.0, 0.25};
    auto linear = [&](std::span<const double> x) { return c[0] * x[0] + c[1] * x[1] + c[2] * x[2]; };
    const std::vector<double> x{0.3, -0.7, 2.0};
    const auto g = finite_diff_grad(linear, x, 1e-5);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(g[i], c[i], 1e-8);
    auto quad = [](std::span<const double> v) {
        double s = 0.0;
        for (double e : v) s += e * e;
        return s;
    };
    const auto q = finite_diff_grad(quad, x, 1e-5);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(q[i], 2.0 * x[i], 1e-6);
}

TEST(FiniteDiff, NonFiniteFunctionThrows) {
    auto bad = [](std::span<const double> v) { return v[0] > 0 ? std::log(-1.0) : 0.0; };
    const std::vector<double> x{0.0};
    EXPECT_THROW(finite_diff_grad(bad, x, 1e-3), NumericError);
}

TEST(Rng, PhiloxKnownAnswers) {
    using A4 = std::array<std::uint32_t, 4>;
    EXPECT_EQ(RngStream::philox({0, 0, 0, 0}, {0, 0}), (A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
    EXPECT_EQ(RngStream::philox({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}),
              (A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
    EXPECT_EQ(RngStream::philox({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}),
              (A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(Rng, NormalDeterminismAndMoments) {
    RngStream a(42), b(42);
    EXPECT_EQ(rng_normal(a, 5, 7, 1.0), rng_normal(b, 5, 7, 1.0));
    RngStream z(1);
    const Matrix zeros = rng_normal(z, 3, 3, 0.0);
    for (double v : zeros.data()) EXPECT_EQ(v, 0.0);

    RngStream r(9);
    const Matrix draws = rng_normal(r, 100, 100, 1.0);
    double mean = 0.0;
    for (double v : draws.data()) mean += v;
    mean /= 1e4;
    double var = 0.0;
    for (double v : draws.data()) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / (1e4 - 1));
    EXPECT_LT(std::abs(mean), 0.05);
    EXPECT_LT(std::abs(sd - 1.0), 0.05);
}

TEST(Rng, ForksAreIndependentAndStable) {
    RngStream root(3);
    RngStream f1 = root.fork(1), f1b = root.fork(1), f2 = root.fork(2);
    const auto x = f1.next_u64();
    EXPECT_EQ(x, f1b.next_u64());
    EXPECT_NE(x, f2.next_u64());
    RngStream u(5);
    for (int i = 0; i < 1000; ++i) {
        const double v = u.uniform();
        ASSERT_GE(v, 0.0);
        ASSERT_LT(v, 1.0);
        ASSERT_LT(u.uniform_index(7), 7u);
    }
}

TEST(Determinism, RepeatedOperationSequenceIsBitIdentical) {
    auto run = [] {
        RngStream rng(11);
        Matrix a = rng_normal(rng, 6, 5, 1.0);
        Matrix b = rng_normal(rng, 5, 4, 1.0);
        const std::vector<double> g(4, 1.3), bias(4, -0.1);
        Matrix c = layer_norm(matmul(a, b), std::span<const double>(g), std::span<const double>(bias), 1e-5);
        return row_softmax(c, 0.7);
    };
    EXPECT_EQ(run(), run());
}

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "cib/dataset.hpp"
#include "test_util.hpp"

using namespace cib;
using cib::testutil::TempDir;

namespace {

double channel_mean(const Dataset& d, std::size_t c) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i)
        for (float v : d.image(i).pixels().subspan(c * d.shape().plane(), d.shape().plane())) s += v;
    return s / static_cast<double>(d.size() * d.shape().plane());
}

double channel_std(const Dataset& d, std::size_t c) {
    const double m = channel_mean(d, c);
    double s = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i)
        for (float v : d.image(i).pixels().subspan(c * d.shape().plane(), d.shape().plane())) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(d.size() * d.shape().plane()));
}

}  // namespace

TEST(LoadMnist, ParsesIdxPairAndScalesBytes) {
    TempDir dir("mnist");
    std::vector<std::uint8_t> px(5 * 784), ys{0, 1, 2, 3, 9};
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(i % 256);
    testutil::write_idx_images(dir.file("img"), px, 5, 28, 28);
    testutil::write_idx_labels(dir.file("lab"), ys);

    const Dataset d = load_mnist(dir.file("img"), dir.file("lab"));
    EXPECT_EQ(d.size(), 5u);
    EXPECT_EQ(d.shape(), (Shape{1, 28, 28}));
    EXPECT_EQ(d.num_classes(), 10u);
    EXPECT_EQ(d.label(4), 9u);
    EXPECT_FLOAT_EQ(d.image(1)(0, 0, 0), static_cast<float>(784 % 256) / 255.0f);
    EXPECT_FLOAT_EQ(d.image(0)(0, 0, 255), 1.0f);
}

TEST(LoadMnist, TruncatedImageFileReportsByteOffset) {
    TempDir dir("mnist");
    std::vector<std::uint8_t> px(3 * 784 - 100, 7), ys{1, 2, 3};
    testutil::write_idx_images(dir.file("img"), px, 3, 28, 28);
    testutil::write_idx_labels(dir.file("lab"), ys);
    try {
        load_mnist(dir.file("img"), dir.file("lab"));
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("byte offset " + std::to_string(16 + px.size())), std::string::npos)
            << e.what();
    }
}

TEST(LoadMnist, LabelFileWithImageMagicIsRejected) {
    TempDir dir("mnist");
    std::vector<std::uint8_t> px(784, 0), ys{1};
    testutil::write_idx_images(dir.file("img"), px, 1, 28, 28);
    testutil::write_idx_labels(dir.file("lab"), ys, kIdxImageMagic);
    try {
        load_mnist(dir.file("img"), dir.file("lab"));
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("magic mismatch"), std::string::npos) << e.what();
    }
}

TEST(LoadMnist, RecordCountMismatchIsRejected) {
    TempDir dir("mnist");
    std::vector<std::uint8_t> px(2 * 784, 0), ys{1, 2, 3};
    testutil::write_idx_images(dir.file("img"), px, 2, 28, 28);
    testutil::write_idx_labels(dir.file("lab"), ys);
    EXPECT_THROW(load_mnist(dir.file("img"), dir.file("lab")), DataError);
}

TEST(LoadMnist, LoadingTwiceIsIdentical) {
    TempDir dir("mnist");
    cib::testutil::write_synthetic_mnist(dir.path().string(), 50, 10, 3);
    const auto a = load_mnist(dir.file("train-images-idx3-ubyte"), dir.file("train-labels-idx1-ubyte"));
    const auto b = load_mnist(dir.file("train-images-idx3-ubyte"), dir.file("train-labels-idx1-ubyte"));
    EXPECT_TRUE(a == b);
}

TEST(LoadCifar10, RecordCountIsFileSizeOverRecordLength) {
    TempDir dir("cifar");
    const std::size_t n = 10000;
    std::vector<std::uint8_t> ys(n), px(n * 3072);
    for (std::size_t i = 0; i < n; ++i) ys[i] = static_cast<std::uint8_t>(i % 10);
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>((i * 7) % 256);
    testutil::write_cifar_batch(dir.file("b.bin"), ys, px);

    const std::size_t bytes = std::filesystem::file_size(dir.file("b.bin"));
    const std::vector<std::string> paths{dir.file("b.bin")};
    const Dataset d = load_cifar10(paths);
    EXPECT_EQ(d.size(), bytes / kCifarRecordBytes);
    EXPECT_EQ(d.size(), 10000u);
    EXPECT_EQ(d.shape(), (Shape{3, 32, 32}));
    // channel-planar: green plane of record 1 starts at pixel byte 1024
    EXPECT_FLOAT_EQ(d.image(1)(1, 0, 0), static_cast<float>((3072 + 1024) * 7 % 256) / 255.0f);
}

TEST(LoadCifar10, ConcatenatesBatchesInOrder) {
    TempDir dir("cifar");
    std::vector<std::string> paths;
    for (int b = 0; b < 5; ++b) {
        std::vector<std::uint8_t> ys(7, static_cast<std::uint8_t>(b)), px(7 * 3072, static_cast<std::uint8_t>(b));
        paths.push_back(dir.file("b" + std::to_string(b)));
        testutil::write_cifar_batch(paths.back(), ys, px);
    }
    const Dataset d = load_cifar10(paths);
    EXPECT_EQ(d.size(), 35u);
    EXPECT_EQ(d.label(0), 0u);
    EXPECT_EQ(d.label(34), 4u);
}

TEST(LoadCifar10, RejectsBadSizeAndLabel) {
    TempDir dir("cifar");
    {
        std::ofstream out(dir.file("short"), std::ios::binary);
        out << std::string(3000, 'x');
    }
    std::vector<std::string> p1{dir.file("short")};
    EXPECT_THROW(load_cifar10(p1), DataError);

    std::vector<std::uint8_t> ys{3, 11}, px(2 * 3072, 0);
    testutil::write_cifar_batch(dir.file("badlabel"), ys, px);
    std::vector<std::string> p2{dir.file("badlabel")};
    try {
        load_cifar10(p2);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("invalid label 11"), std::string::npos) << e.what();
    }
}

TEST(Normalize, SelfStatsGiveZeroMeanUnitStd) {
    // channel 0 ~ N(5, 2^2), channel 1 ~ N(-1, 0.5^2)
    std::mt19937_64 rng(11);
    std::normal_distribution<double> a(5.0, 2.0), b(-1.0, 0.5);
    const Shape s{2, 4, 4};
    std::vector<float> px(500 * s.size());
    for (std::size_t i = 0; i < 500; ++i)
        for (std::size_t k = 0; k < s.plane(); ++k) {
            px[i * s.size() + k] = static_cast<float>(a(rng));
            px[i * s.size() + s.plane() + k] = static_cast<float>(b(rng));
        }
    const Dataset d(s, 10, Split::train, px, std::vector<std::uint8_t>(500, 0));
    const auto [n, st] = normalize(d);
    for (std::size_t c = 0; c < 2; ++c) {
        EXPECT_NEAR(channel_mean(n, c), 0.0, 1e-5);
        EXPECT_NEAR(channel_std(n, c), 1.0, 1e-5);
    }
    EXPECT_NEAR(st.mean[0], 5.0, 0.1);
    EXPECT_NEAR(st.stddev[0], 2.0, 0.1);
}

TEST(Normalize, TrainStatsReusedOnTestSet) {
    const auto train = synthetic_gaussian(Shape{1, 5, 5}, 400, 3.0, 2.0, 1);
    const auto test = synthetic_gaussian(Shape{1, 5, 5}, 400, 3.0, 2.0, 2, 10, Split::test);
    const auto [ntrain, st] = normalize(train);
    const auto [ntest, st2] = normalize(test, &st);
    EXPECT_EQ(st, st2);
    const double m = channel_mean(ntest, 0);
    EXPECT_NEAR(m, 0.0, 0.05);
    EXPECT_NE(m, 0.0);
}

TEST(Normalize, ConstantChannelIsGuardedWithWarning) {
    const Shape s{2, 3, 3};
    std::vector<float> px(20 * s.size(), 0.25f);
    for (std::size_t i = 0; i < 20; ++i) px[i * s.size() + s.plane() + (i % 9)] = static_cast<float>(i);
    const Dataset d(s, 10, Split::train, px, std::vector<std::uint8_t>(20, 1));
    std::vector<std::string> warnings;
    ScopedWarningHandler capture([&](std::string_view w) { warnings.emplace_back(w); });
    const auto [n, st] = normalize(d);
    ASSERT_EQ(warnings.size(), 1u);
    EXPECT_NE(warnings[0].find("channel 0"), std::string::npos);
    EXPECT_EQ(st.stddev[0], kVarianceGuard);
    for (std::size_t i = 0; i < n.size(); ++i) {
        EXPECT_TRUE(std::isfinite(n.image(i)(0, 1, 1)));
        EXPECT_EQ(n.image(i)(0, 1, 1), 0.0f);
    }
}

TEST(Normalize, InverseRecoversRawPixels) {
    TempDir dir("mnist");
    cib::testutil::write_synthetic_mnist(dir.path().string(), 200, 10, 5);
    const auto raw = load_mnist(dir.file("train-images-idx3-ubyte"), dir.file("train-labels-idx1-ubyte"));
    const auto [n, st] = normalize(raw);
    const auto back = denormalize(n, st);
    double worst = 0.0;
    for (std::size_t i = 0; i < raw.pixels().size(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(back.pixels()[i]) - raw.pixels()[i]));
    EXPECT_LT(worst, 1e-5);
}

TEST(BottomRightPatch, WholeImageWhenSideEqualsSize) {
    Image<double> im(Shape{1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    const auto p = bottom_right_patch(im, 3);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(p(0, r, k), im(0, r, k));
}

TEST(BottomRightPatch, FourByFourSideTwo) {
    std::vector<double> px(16);
    std::iota(px.begin(), px.end(), 1.0);
    Image<double> im(Shape{1, 4, 4}, px);
    const auto p = bottom_right_patch(im, 2);
    EXPECT_EQ(p(0, 0, 0), 11);
    EXPECT_EQ(p(0, 0, 1), 12);
    EXPECT_EQ(p(0, 1, 0), 15);
    EXPECT_EQ(p(0, 1, 1), 16);
}

TEST(BottomRightPatch, AliasesSourcePixels) {
    const auto d = synthetic_gaussian(Shape{3, 6, 5}, 2, 0.0, 1.0, 9);
    const auto p = bottom_right_patch(d.image(1), 3);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(&p(c, r, k), &d.image(1)(c, 3 + r, 2 + k));
}

TEST(BottomRightPatch, RejectsBadSide) {
    Image<double> im(Shape{1, 4, 5});
    EXPECT_THROW(bottom_right_patch(im, 0), std::invalid_argument);
    EXPECT_THROW(bottom_right_patch(im, 5), std::invalid_argument);
    EXPECT_NO_THROW(bottom_right_patch(im, 4));
}

TEST(SyntheticGaussian, DeterministicPerSeed) {
    const auto a = synthetic_gaussian(Shape{3, 8, 8}, 100, 0.0, 1.0, 42);
    const auto b = synthetic_gaussian(Shape{3, 8, 8}, 100, 0.0, 1.0, 42);
    const auto c = synthetic_gaussian(Shape{3, 8, 8}, 100, 0.0, 1.0, 43);
    EXPECT_TRUE(a == b);
    EXPECT_FALSE(a == c);
}

TEST(SyntheticGaussian, EmpiricalStdMatchesGenerator) {
    const auto d = synthetic_gaussian(Shape{1, 2, 2}, 10000, 0.0, 1.0, 7);
    const double sd = channel_std(d, 0);
    EXPECT_GE(sd, 0.98);
    EXPECT_LE(sd, 1.02);
}

TEST(SyntheticGaussian, RejectsDegenerateArguments) {
    EXPECT_THROW(synthetic_gaussian(Shape{1, 2, 2}, 0, 0.0, 1.0, 1), std::invalid_argument);
    EXPECT_THROW(synthetic_gaussian(Shape{1, 2, 2}, 5, 0.0, 0.0, 1), std::invalid_argument);
    EXPECT_THROW(synthetic_gaussian(Shape{1, 2, 2}, 5, 0.0, -1.0, 1), std::invalid_argument);
}

TEST(Dataset, RejectsNonFiniteAndOutOfRangeLabels) {
    EXPECT_THROW(Dataset(Shape{1, 1, 1}, 10, Split::train, {std::nanf("")}, {0}), std::invalid_argument);
    EXPECT_THROW(Dataset(Shape{1, 1, 1}, 10, Split::train, {0.0f}, {10}), std::invalid_argument);
    EXPECT_THROW(Dataset(Shape{1, 1, 1}, 10, Split::train, {}, {}), std::invalid_argument);
}

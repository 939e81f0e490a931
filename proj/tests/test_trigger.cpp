#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "cib/dataset.hpp"
#include "cib/trigger.hpp"
#include "test_util.hpp"

using namespace cib;
using cib::testutil::make_image;
using cib::testutil::random_image;

namespace {

TriggerKernel kernel_of(std::size_t side, std::vector<double> w) {
    return TriggerKernel{side, std::move(w), KernelStrategy::randomizing, 0, {}};
}

// Direct triple loop over the raw buffer; independent of PatchView.
double brute_score(const Image<double>& im, const TriggerKernel& k) {
    const Shape& s = im.shape();
    double g = 0.0;
    for (std::size_t c = 0; c < s.channels; ++c)
        for (std::size_t r = s.height - k.side; r < s.height; ++r)
            for (std::size_t col = s.width - k.side; col < s.width; ++col)
                g += k(r - (s.height - k.side), col - (s.width - k.side)) *
                     im.pixels()[c * s.plane() + r * s.width + col];
    return g;
}

// Images whose pixels share a per-image brightness offset: natural-image-like
// correlation that a learned kernel can cancel.
Dataset correlated_dataset(std::size_t n, Shape s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<float> px(n * s.size());
    for (std::size_t i = 0; i < n; ++i) {
        const double offset = 3.0 * n01(rng);
        for (std::size_t k = 0; k < s.size(); ++k) px[i * s.size() + k] = static_cast<float>(offset + 0.3 * n01(rng));
    }
    return Dataset(s, 10, Split::train, std::move(px), std::vector<std::uint8_t>(n, 0));
}

std::vector<double> finite_difference_phi(const TriggerKernel& k, const PatchBatch& batch, double h) {
    std::vector<double> fd(k.weights.size());
    for (std::size_t j = 0; j < fd.size(); ++j) {
        TriggerKernel plus = k, minus = k;
        plus.weights[j] += h;
        minus.weights[j] -= h;
        fd[j] = (estimate_phi(plus, batch).phi - estimate_phi(minus, batch).phi) / (2 * h);
    }
    return fd;
}

}  // namespace

TEST(Score, ZeroImageScoresZero) {
    Image<double> im(Shape{3, 5, 5});
    EXPECT_EQ(score(im, random_kernel(3, 1)), 0.0);
}

TEST(Score, HandInnerProduct) {
    const auto k = kernel_of(2, {1, 0, 0, 1});
    const auto one = make_image(Shape{1, 2, 2}, {1, 2, 3, 4});
    EXPECT_DOUBLE_EQ(score(one, k), 5.0);
    const auto two = make_image(Shape{2, 2, 2}, {1, 2, 3, 4, 1, 2, 3, 4});
    EXPECT_DOUBLE_EQ(score(two, k), 10.0);
}

TEST(Score, MatchesBruteForceOnLargerImages) {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 20; ++t) {
        const auto im = random_image(Shape{3, 9, 7}, rng);
        const auto k = random_kernel(1 + static_cast<std::size_t>(t % 5), static_cast<std::uint64_t>(t));
        EXPECT_NEAR(score(im, k), brute_score(im, k), 1e-12);
    }
}

TEST(Score, ShapeMismatchThrows) {
    Image<double> im(Shape{1, 2, 2});
    EXPECT_THROW(score(im, random_kernel(3, 0)), std::invalid_argument);
}

TEST(Score, LinearityProperty) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> coef(-3.0, 3.0);
    for (int t = 0; t < 50; ++t) {
        const Shape s{1 + static_cast<std::size_t>(t % 3), 6, 6};
        const auto k = random_kernel(1 + static_cast<std::size_t>(t % 6), static_cast<std::uint64_t>(100 + t));
        const auto x = random_image(s, rng), y = random_image(s, rng);
        const double a = coef(rng), b = coef(rng);
        std::vector<double> mix(s.size());
        for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x.pixels()[i] + b * y.pixels()[i];
        const double lhs = score(make_image(s, mix), k);
        const double rhs = a * score(x, k) + b * score(y, k);
        EXPECT_LE(std::abs(lhs - rhs), 1e-6 * std::max(1.0, std::abs(rhs)));
    }
}

TEST(ScoreAll, IndependentOfWorkerCount) {
    const auto d = synthetic_gaussian(Shape{3, 8, 8}, 3000, 0.0, 1.0, 3);
    const auto k = random_kernel(3, 9);
    EXPECT_EQ(score_all(d, k, 1), score_all(d, k, 4));
}

TEST(CalibrateThreshold, OrderStatistic) {
    std::vector<double> scores(100);
    std::iota(scores.begin(), scores.end(), 1.0);
    std::shuffle(scores.begin(), scores.end(), std::mt19937_64(1));
    const auto t = calibrate_threshold(scores, 0.05);
    EXPECT_EQ(t.alpha, 96.0);
    EXPECT_EQ(t.rank, 5u);
    EXPECT_EQ(t.at_or_above, 5u);
    EXPECT_EQ(t.tie_count(), 0u);
}

TEST(CalibrateThreshold, EmptyRankIsAnError) {
    std::vector<double> scores(10, 1.0);
    EXPECT_THROW(calibrate_threshold(scores, 0.05), NumericError);
}

TEST(CalibrateThreshold, TiesAreCountedNotTruncated) {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> coarse(0, 30);
    for (int t = 0; t < 20; ++t) {
        std::vector<double> scores(500);
        for (auto& s : scores) s = coarse(rng);
        const auto th = calibrate_threshold(scores, 0.1);
        // brute force: sort descending, take the 50th value, count >= it
        std::vector<double> sorted = scores;
        std::sort(sorted.rbegin(), sorted.rend());
        const double alpha = sorted[49];
        const auto count = static_cast<std::size_t>(std::count_if(scores.begin(), scores.end(), [&](double s) { return s >= alpha; }));
        EXPECT_EQ(th.alpha, alpha);
        EXPECT_EQ(th.at_or_above, count);
        EXPECT_GE(th.at_or_above, 50u);
        EXPECT_EQ(th.tie_count(), count - 50);
    }
}

TEST(Classify, HeavisideAtZeroIsOne) {
    CalibratedTrigger trig{kernel_of(1, {1.0}), 0.75, 2.0, 1.0, 6, 0.05};
    EXPECT_TRUE(classify(make_image(Shape{1, 1, 1}, {0.75}), trig));
    EXPECT_FALSE(classify(make_image(Shape{1, 1, 1}, {0.75 - 1e-9}), trig));
    EXPECT_TRUE(classify(make_image(Shape{1, 1, 1}, {1.75}), trig));
}

TEST(RandomKernel, DeterministicAndStandardNormal) {
    EXPECT_EQ(random_kernel(3, 5), random_kernel(3, 5));
    EXPECT_NE(random_kernel(3, 5).weights, random_kernel(3, 6).weights);
    std::vector<double> pooled;
    for (std::uint64_t seed = 0; pooled.size() < 10000; ++seed) {
        const auto k = random_kernel(3, seed);
        pooled.insert(pooled.end(), k.weights.begin(), k.weights.end());
    }
    const double mean = std::accumulate(pooled.begin(), pooled.end(), 0.0) / static_cast<double>(pooled.size());
    double ss = 0.0;
    for (double w : pooled) ss += (w - mean) * (w - mean);
    const double sd = std::sqrt(ss / static_cast<double>(pooled.size() - 1));
    EXPECT_GE(sd, 0.97);
    EXPECT_LE(sd, 1.03);
    EXPECT_THROW(random_kernel(0, 1), std::invalid_argument);
}

TEST(EstimatePhi, ConstantPatchGivesZero) {
    const auto k = random_kernel(2, 3);
    std::vector<Image<double>> imgs;
    std::mt19937_64 rng(3);
    for (int i = 0; i < 8; ++i) {
        auto im = random_image(Shape{2, 4, 4}, rng);
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t r = 2; r < 4; ++r)
                for (std::size_t q = 2; q < 4; ++q) im(c, r, q) = 0.5 * static_cast<double>(c + r + q);
        imgs.push_back(im);
    }
    std::vector<ImageView<double>> views(imgs.begin(), imgs.end());
    const auto est = estimate_phi(k, std::span<const ImageView<double>>(views));
    EXPECT_EQ(est.phi, 0.0);
    EXPECT_EQ(est.sigma_g, 0.0);
    EXPECT_EQ(est.batch_size, 8u);
}

TEST(EstimatePhi, MatchesSampleVarianceFormulaAndIsScaleInvariant) {
    const auto d = synthetic_gaussian(Shape{3, 6, 6}, 64, 0.0, 1.0, 4);
    std::vector<std::size_t> idx(64);
    std::iota(idx.begin(), idx.end(), 0);
    auto k = random_kernel(3, 12);
    const auto est = estimate_phi(k, d, idx);

    std::vector<double> g(64);
    for (std::size_t i = 0; i < 64; ++i) g[i] = score(d.image(i), k);
    const double mean = std::accumulate(g.begin(), g.end(), 0.0) / 64.0;
    double ss = 0.0;
    for (double v : g) ss += (v - mean) * (v - mean);
    EXPECT_NEAR(est.sigma_g, std::sqrt(ss / 63.0), 1e-10);
    EXPECT_EQ(est.phi, est.sigma_g / est.kernel_norm);

    for (double& w : k.weights) w *= 7.5;
    EXPECT_NEAR(estimate_phi(k, d, idx).phi, est.phi, 1e-12);
}

TEST(EstimatePhi, NeedsTwoImages) {
    const auto d = synthetic_gaussian(Shape{1, 4, 4}, 4, 0.0, 1.0, 4);
    std::vector<std::size_t> one{0};
    EXPECT_THROW(estimate_phi(random_kernel(2, 0), d, one), std::invalid_argument);
}

TEST(EstimatePhi, GaussianPixelsGiveSqrtCSigma) {
    const auto d = synthetic_gaussian(Shape{3, 8, 8}, 4096, 0.0, 1.0, 77);
    std::vector<std::size_t> idx(4096);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto est = estimate_phi(random_kernel(3, seed), d, idx);
        EXPECT_NEAR(est.phi / std::sqrt(3.0), 1.0, 0.05) << "seed " << seed;
    }
}

TEST(PhiGradient, MatchesCentralFiniteDifferences) {
    std::mt19937_64 rng(2024);
    // side 1 is skipped: phi is constant in a single weight, so the gradient is identically zero
    for (int inst = 0; inst < 20; ++inst) {
        const std::size_t side = 2 + static_cast<std::size_t>(inst % 4);
        const std::size_t ch = 1 + static_cast<std::size_t>(inst % 3);
        const auto d = synthetic_gaussian(Shape{ch, 5, 5}, 16, 0.3, 1.2, rng());
        std::vector<std::size_t> idx(16);
        std::iota(idx.begin(), idx.end(), 0);
        const auto batch = PatchBatch::from(d, idx, side);
        const auto k = random_kernel(side, rng());
        const auto grad = phi_gradient(k, batch);
        const auto fd = finite_difference_phi(k, batch, 1e-4);
        double scale = 0.0, err = 0.0;
        for (std::size_t j = 0; j < fd.size(); ++j) {
            scale = std::max(scale, std::abs(fd[j]));
            err = std::max(err, std::abs(grad[j] - fd[j]));
        }
        EXPECT_LT(err / scale, 1e-4) << "instance " << inst;
    }
}

TEST(PhiGradient, RadialComponentVanishes) {
    const auto d = synthetic_gaussian(Shape{3, 6, 6}, 32, 0.0, 1.0, 8);
    std::vector<std::size_t> idx(32);
    std::iota(idx.begin(), idx.end(), 0);
    const auto batch = PatchBatch::from(d, idx, 3);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto k = random_kernel(3, seed);
        const auto grad = phi_gradient(k, batch);
        const double dot = std::inner_product(grad.begin(), grad.end(), k.weights.begin(), 0.0);
        const double gnorm = std::sqrt(std::inner_product(grad.begin(), grad.end(), grad.begin(), 0.0));
        EXPECT_LE(std::abs(dot), 1e-6 * gnorm * k.norm());
    }
}

TEST(PhiGradient, DegenerateBatchGivesZeroAndWarns) {
    const Shape s{1, 3, 3};
    std::vector<float> px(5 * s.size(), 1.5f);
    const Dataset d(s, 10, Split::train, px, std::vector<std::uint8_t>(5, 0));
    std::vector<std::size_t> idx{0, 1, 2, 3, 4};
    std::vector<std::string> warnings;
    ScopedWarningHandler capture([&](std::string_view w) { warnings.emplace_back(w); });
    const auto grad = phi_gradient(random_kernel(2, 1), PatchBatch::from(d, idx, 2));
    EXPECT_EQ(grad, std::vector<double>(4, 0.0));
    ASSERT_EQ(warnings.size(), 1u);
    EXPECT_NE(warnings[0].find("degenerate"), std::string::npos);
}

TEST(LearnKernel, RejectsTinyBatch) {
    const auto d = synthetic_gaussian(Shape{1, 4, 4}, 10, 0.0, 1.0, 1);
    LearnConfig cfg;
    cfg.side = 2;
    cfg.batch_size = 1;
    EXPECT_THROW(learn_kernel(d, cfg), std::invalid_argument);
}

TEST(LearnKernel, ZeroRoundsReturnsInitialization) {
    const auto d = synthetic_gaussian(Shape{1, 4, 4}, 10, 0.0, 1.0, 1);
    LearnConfig cfg;
    cfg.side = 3;
    cfg.batch_size = 4;
    cfg.epochs = 0;
    cfg.seed = 31;
    const auto k = learn_kernel(d, cfg);
    EXPECT_EQ(k.weights, random_kernel(3, 31).weights);
    EXPECT_TRUE(k.learning_trace.empty());
    EXPECT_EQ(k.strategy, KernelStrategy::learning);
}

TEST(LearnKernel, RoundsPerEpochAndTraceEndsLower) {
    const auto d = correlated_dataset(1000, Shape{3, 6, 6}, 21);
    LearnConfig cfg;
    cfg.side = 3;
    cfg.batch_size = 128;
    cfg.epochs = 3;
    cfg.seed = 4;
    const auto k = learn_kernel(d, cfg);
    ASSERT_EQ(k.learning_trace.size(), (1000u / 128u) * 3u);
    EXPECT_EQ(k.learning_trace.front().round, 0u);
    EXPECT_LT(k.learning_trace.back().loss, k.learning_trace.front().loss);
}

TEST(LearnKernel, HeldOutPhiDecreasesOnCorrelatedImages) {
    const auto train = correlated_dataset(2000, Shape{3, 6, 6}, 5);
    const auto held = correlated_dataset(4096, Shape{3, 6, 6}, 6);
    std::vector<std::size_t> idx(held.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        LearnConfig cfg;
        cfg.side = 3;
        cfg.epochs = 3;
        cfg.seed = seed;
        const auto learned = learn_kernel(train, cfg);
        const double before = estimate_phi(random_kernel(3, seed), held, idx).phi;
        const double after = estimate_phi(learned, held, idx).phi;
        EXPECT_LT(after, before) << "seed " << seed;
    }
}

TEST(LearnKernel, DeterministicPerSeed) {
    const auto d = correlated_dataset(600, Shape{1, 5, 5}, 2);
    LearnConfig cfg;
    cfg.side = 2;
    cfg.batch_size = 50;
    cfg.epochs = 2;
    cfg.seed = 9;
    EXPECT_EQ(learn_kernel(d, cfg), learn_kernel(d, cfg));
}

TEST(Classification, ScaleInvariantAfterRecalibration) {
    const auto d = synthetic_gaussian(Shape{3, 8, 8}, 2000, 0.0, 1.0, 13);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto k = random_kernel(3, seed);
        const auto s1 = score_all(d, k);
        const auto t1 = calibrate_threshold(s1, 0.05);
        for (double& w : k.weights) w *= 3.25;
        const auto s2 = score_all(d, k);
        const auto t2 = calibrate_threshold(s2, 0.05);
        for (std::size_t i = 0; i < d.size(); ++i)
            EXPECT_EQ(classify_score(s1[i], t1.alpha), classify_score(s2[i], t2.alpha)) << i;
    }
}

TEST(KernelDocument, RoundTripsBitExactly) {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> n(0.0, 1e3);
    for (int t = 0; t < 25; ++t) {
        TriggerKernel k = random_kernel(1 + static_cast<std::size_t>(t % 5), rng());
        for (auto& w : k.weights) w *= n(rng);
        k.strategy = t % 2 ? KernelStrategy::learning : KernelStrategy::randomizing;
        for (std::size_t r = 0; r < static_cast<std::size_t>(t); ++r) k.learning_trace.push_back({r, n(rng)});
        const auto text = to_document(k).str();
        EXPECT_EQ(kernel_from_document(textio::Document::parse(text)), k);
    }
}

TEST(KernelDocument, RejectsWrongWeightCount) {
    auto doc = to_document(random_kernel(2, 1));
    textio::Document bad;
    for (const auto& [key, v] : doc.lines()) bad.add(key, key == "weights" ? "1 2 3" : v);
    EXPECT_THROW(kernel_from_document(bad), DataError);
}

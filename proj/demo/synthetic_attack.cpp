// End-to-end clean-image backdoor on a synthetic 10-class problem.
// Usage: synthetic_attack [seed]

#include <cstdint>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "cib/cib.hpp"

using namespace cib;

namespace {

// Per-class mean image plus Gaussian noise.
Dataset blobs(Shape s, std::size_t n, std::uint64_t centers_seed, std::uint64_t noise_seed, Split split) {
    std::mt19937_64 crng(centers_seed), rng(noise_seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<std::vector<double>> centers(10, std::vector<double>(s.size()));
    for (auto& c : centers)
        for (auto& v : c) v = 0.5 + 0.15 * n01(crng);
    std::vector<float> px(n * s.size());
    std::vector<std::uint8_t> ys(n);
    for (std::size_t i = 0; i < n; ++i) {
        ys[i] = static_cast<std::uint8_t>(rng() % 10);
        for (std::size_t k = 0; k < s.size(); ++k)
            px[i * s.size() + k] = static_cast<float>(centers[ys[i]][k] + 2.0 * n01(rng));
    }
    return Dataset(s, 10, split, std::move(px), std::move(ys));
}

}  // namespace

int main(int argc, char** argv) {
    try {
        const std::uint64_t seed = argc > 1 ? std::stoull(argv[1]) : 1;
        std::cout.precision(4);
        const Shape shape{3, 12, 12};
        auto [train, stats] = normalize(blobs(shape, 6000, seed, seed + 1, Split::train));
        const auto test = normalize(blobs(shape, 1500, seed, seed + 2, Split::test), &stats).first;

        const auto cal = calibrate_trigger(train, random_kernel(3, seed), 0.05, 1.0, 6);
        const auto& trig = cal.trigger;
        std::cout << "alpha " << trig.alpha << ", target score " << trig.target_score << ", plan "
                  << cal.plan.size() << " of " << train.size() << '\n';

        const auto hist = class_distribution(cal.plan);
        std::cout << "falsified per class:";
        for (std::size_t c = 0; c < 10; ++c) std::cout << ' ' << hist.counts[c];
        std::cout << '\n';

        const auto poisoned = falsify_labels(train, cal.plan, trig.backdoor_class);
        const auto part = partition_test(test, trig);
        const auto attack = prepare_attack_set(test, part, trig);
        std::cout << "F'1 " << part.f1.size() << ", F'0 " << part.f0.size() << ", clipped " << attack.clipped
                  << ", max |delta| " << attack.max_delta_norm << '\n';

        for (bool poison : {false, true}) {
            TrainConfig tc;
            tc.epochs = 8;
            tc.seed = seed;
            const auto report = train_and_evaluate(poison ? poisoned : train, test, part, attack, trig,
                                                   MlpSpec{128}, tc);
            const auto& row = report.rows[report.best_row()];
            std::cout << (poison ? "poisoned" : "clean   ") << "  epoch " << row.epoch << "  acc " << row.acc
                      << "  asr_n " << row.asr_n.value_or(-1.0) << "  asr_m " << row.asr_m.value_or(-1.0) << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

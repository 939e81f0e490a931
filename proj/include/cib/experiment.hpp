#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cib/dataset.hpp"
#include "cib/eval.hpp"
#include "cib/poison.hpp"
#include "cib/textio.hpp"
#include "cib/trigger.hpp"
#include "cib/victim.hpp"

namespace cib {

enum class DatasetKind { mnist, cifar10 };

inline const char* to_string(DatasetKind k) { return k == DatasetKind::mnist ? "mnist" : "cifar10"; }

inline DatasetKind parse_dataset_kind(std::string_view s) {
    if (s == "mnist") return DatasetKind::mnist;
    if (s == "cifar10" || s == "cifar") return DatasetKind::cifar10;
    throw std::invalid_argument("unknown dataset '" + std::string(s) + "' (expected mnist or cifar10)");
}

/// Canonical file names inside a dataset directory.
inline std::vector<std::string> dataset_files(DatasetKind kind, const std::string& dir, Split split) {
    namespace fs = std::filesystem;
    auto at = [&](const char* name) { return (fs::path(dir) / name).string(); };
    if (kind == DatasetKind::mnist) {
        if (split == Split::train) return {at("train-images-idx3-ubyte"), at("train-labels-idx1-ubyte")};
        return {at("t10k-images-idx3-ubyte"), at("t10k-labels-idx1-ubyte")};
    }
    if (split == Split::train) {
        return {at("data_batch_1.bin"), at("data_batch_2.bin"), at("data_batch_3.bin"), at("data_batch_4.bin"),
                at("data_batch_5.bin")};
    }
    return {at("test_batch.bin")};
}

inline bool dataset_available(DatasetKind kind, const std::string& dir) {
    for (Split s : {Split::train, Split::test})
        for (const auto& f : dataset_files(kind, dir, s))
            if (!std::filesystem::is_regular_file(f)) return false;
    return true;
}

/// Raw ([0,1]-scaled) split; `limit` > 0 keeps only the first `limit` samples.
inline Dataset load_split(DatasetKind kind, const std::string& dir, Split split, std::size_t limit = 0) {
    const auto files = dataset_files(kind, dir, split);
    Dataset d = kind == DatasetKind::mnist ? load_mnist(files[0], files[1], split) : load_cifar10(files, split);
    return limit > 0 && limit < d.size() ? d.head(limit) : d;
}

struct ExperimentConfig {
    DatasetKind dataset = DatasetKind::mnist;
    std::string data_dir;
    KernelStrategy strategy = KernelStrategy::randomizing;
    std::size_t side = 0;  // 0: 16 for MNIST, 3 for CIFAR-10
    double beta = 0.05;
    double lambda = 1.0;
    std::size_t backdoor_class = 6;
    std::size_t kernel_batch = 128;            // M
    std::optional<std::size_t> learn_epochs;   // default 1 for MNIST, 3 for CIFAR-10
    std::uint64_t kernel_seed = 0;
    std::string architecture = "mlp:512";
    TrainConfig train{};
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::size_t train_limit = 0;  // 0: full training split
    std::size_t test_limit = 0;
    bool clamp_raw = false;

    std::size_t resolved_side() const {
        if (side) return side;
        return dataset == DatasetKind::mnist ? 16 : 3;
    }
    std::size_t resolved_learn_epochs() const {
        if (learn_epochs) return *learn_epochs;
        return dataset == DatasetKind::mnist ? 1 : 3;
    }

    /// Every setting that influences results, in a fixed order.
    std::vector<std::pair<std::string, std::string>> echo() const {
        std::string seeds_s;
        for (auto s : seeds) seeds_s += (seeds_s.empty() ? "" : ",") + std::to_string(s);
        return {
            {"dataset", to_string(dataset)},
            {"strategy", to_string(strategy)},
            {"S", std::to_string(resolved_side())},
            {"beta", textio::format_real(beta)},
            {"lambda", textio::format_real(lambda)},
            {"backdoor_class", std::to_string(backdoor_class)},
            {"M", std::to_string(kernel_batch)},
            {"learn_epochs", std::to_string(resolved_learn_epochs())},
            {"kernel_seed", std::to_string(kernel_seed)},
            {"architecture", architecture},
            {"learning_rate", textio::format_real(train.learning_rate)},
            {"momentum", textio::format_real(train.momentum)},
            {"weight_decay", textio::format_real(train.weight_decay)},
            {"batch_size", std::to_string(train.batch_size)},
            {"epochs", std::to_string(train.epochs)},
            {"seeds", seeds_s},
            {"train_limit", std::to_string(train_limit)},
            {"test_limit", std::to_string(test_limit)},
            {"clamp_raw", clamp_raw ? "true" : "false"},
            {"normalization", "train-split per-channel mean/std"},
        };
    }

    std::string hash() const {
        std::string s;
        for (const auto& [k, v] : echo()) s += k + "=" + v + "\n";
        return textio::hex64(textio::fnv1a(s));
    }
};

struct PreparedData {
    Dataset train;  // normalized, clean labels
    Dataset test;   // normalized with train stats
    NormalizationStats stats;
};

inline PreparedData prepare_data(const ExperimentConfig& cfg) {
    if (cfg.data_dir.empty()) throw std::invalid_argument("no dataset directory given");
    auto [train, stats] = normalize(load_split(cfg.dataset, cfg.data_dir, Split::train, cfg.train_limit));
    auto test = normalize(load_split(cfg.dataset, cfg.data_dir, Split::test, cfg.test_limit), &stats).first;
    return {std::move(train), std::move(test), std::move(stats)};
}

inline TriggerKernel forge_kernel(const Dataset& train, const ExperimentConfig& cfg) {
    if (cfg.strategy == KernelStrategy::randomizing) return random_kernel(cfg.resolved_side(), cfg.kernel_seed);
    LearnConfig lc;
    lc.side = cfg.resolved_side();
    lc.batch_size = cfg.kernel_batch;
    lc.epochs = cfg.resolved_learn_epochs();
    lc.seed = cfg.kernel_seed;
    return learn_kernel(train, lc);
}

/// Trains one victim on the poisoned set and evaluates every epoch.
inline EvalReport train_and_evaluate(const Dataset& poisoned_train, const Dataset& test, const TestPartition& part,
                                     const AttackSet& attack, const CalibratedTrigger& trig,
                                     const Architecture& arch, TrainConfig tc,
                                     std::vector<float>* best_snapshot = nullptr) {
    auto model = build_model<float>(arch, poisoned_train.shape(), poisoned_train.num_classes(), tc.seed);
    EvalReport report;
    report.f1_size = part.f1.size();
    report.f0_size = part.f0.size();
    report.excluded = part.excluded.size();
    report.attack_reach_rate = attack.reach_rate();
    double best_acc = -1.0;
    train<float>(
        model, poisoned_train, tc,
        [&](const VictimModel<float>& m, const EpochRecord<float>& rec) {
            MetricRow row = compute_metrics(m, test, part, attack, trig.backdoor_class);
            row.epoch = rec.epoch;
            if (best_snapshot && row.acc > best_acc) {
                best_acc = row.acc;
                best_snapshot->assign(m.parameters().begin(), m.parameters().end());
            }
            report.rows.push_back(row);
        },
        false);
    return report;
}

struct ExperimentResult {
    Calibration calibration;
    SensitivityEstimate train_phi;  // over the full training split
    double feasibility_rate = 0.0;
    TestPartition partition;
    std::vector<EvalReport> per_seed;
    EvalReport mean;
};

/// forge -> calibrate -> poison -> train/eval for every seed -> aggregate.
/// With `poison_labels == false` the victim trains on clean labels (no-attack baseline)
/// and is evaluated against the same trigger.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const PreparedData& data,
                                       bool poison_labels = true,
                                       const std::optional<TriggerKernel>& kernel_override = std::nullopt) {
    ExperimentResult res;
    TriggerKernel kernel = kernel_override ? *kernel_override : forge_kernel(data.train, cfg);
    res.calibration = calibrate_trigger(data.train, std::move(kernel), cfg.beta, cfg.lambda, cfg.backdoor_class);
    const auto& trig = res.calibration.trigger;

    const auto train_scores = score_all(data.train, trig.kernel);
    res.feasibility_rate = feasibility_rate(data.train, trig, train_scores);
    std::vector<std::size_t> all(data.train.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    res.train_phi = estimate_phi(trig.kernel, data.train, all);

    res.partition = partition_test(data.test, trig);
    const AttackSet attack = prepare_attack_set(data.test, res.partition, trig, cfg.clamp_raw ? &data.stats : nullptr);
    const Dataset victim_train =
        poison_labels ? falsify_labels(data.train, res.calibration.plan, cfg.backdoor_class) : data.train;

    const Architecture arch = parse_architecture(cfg.architecture);
    for (auto seed : cfg.seeds) {
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        EvalReport r;
        try {
            r = train_and_evaluate(victim_train, data.test, res.partition, attack, trig, arch, tc);
        } catch (const NumericError& e) {
            throw NumericError("seed " + std::to_string(seed) + ": " + e.what());
        }
        r.config = cfg.echo();
        r.config.emplace_back("seed", std::to_string(seed));
        r.config.emplace_back("poisoned", poison_labels ? "true" : "false");
        r.realized_gamma = res.calibration.plan.realized_gamma();
        r.feasibility_rate = res.feasibility_rate;
        res.per_seed.push_back(std::move(r));
    }
    res.mean = aggregate(res.per_seed);
    res.mean.config = cfg.echo();
    res.mean.config.emplace_back("poisoned", poison_labels ? "true" : "false");
    res.mean.config.emplace_back("replicates", std::to_string(res.per_seed.size()));
    return res;
}

}  // namespace cib

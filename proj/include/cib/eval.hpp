#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cib/dataset.hpp"
#include "cib/error.hpp"
#include "cib/poison.hpp"
#include "cib/textio.hpp"
#include "cib/trigger.hpp"
#include "cib/victim.hpp"

namespace cib {

inline constexpr double kBudgetTolerance = 1e-6;

/// Test set split into natural trigger images (F'1), the rest (F'0), and samples
/// whose true label is the backdoor class (excluded from both attack rates).
struct TestPartition {
    std::vector<std::size_t> f1;
    std::vector<std::size_t> f0;
    std::vector<std::size_t> excluded;
};

inline TestPartition partition_test(const Dataset& test, const CalibratedTrigger& trig,
                                    std::span<const double> scores) {
    require(scores.size() == test.size(), "partition_test: score count mismatch");
    TestPartition p;
    for (std::size_t i = 0; i < test.size(); ++i) {
        if (test.label(i) == trig.backdoor_class)
            p.excluded.push_back(i);
        else if (classify_score(scores[i], trig.alpha))
            p.f1.push_back(i);
        else
            p.f0.push_back(i);
    }
    return p;
}

inline TestPartition partition_test(const Dataset& test, const CalibratedTrigger& trig) {
    const auto scores = score_all(test, trig.kernel);
    return partition_test(test, trig, scores);
}

/// Triggered versions of the F'0 images. They do not depend on the model, so one
/// set serves every epoch snapshot and seed.
struct AttackSet {
    std::vector<std::size_t> source_indices;
    std::vector<TriggeredImage> triggered;
    double max_delta_norm = 0.0;
    std::size_t reaching_alpha = 0;
    std::size_t clipped = 0;

    double reach_rate() const {
        return triggered.empty() ? 0.0 : static_cast<double>(reaching_alpha) / static_cast<double>(triggered.size());
    }
};

inline AttackSet prepare_attack_set(const Dataset& test, const TestPartition& part, const CalibratedTrigger& trig,
                                    const NormalizationStats* clamp_stats = nullptr) {
    AttackSet set;
    set.source_indices = part.f0;
    set.triggered.reserve(part.f0.size());
    for (std::size_t i : part.f0) {
        TriggeredImage t = add_trigger(test.image(i), trig);
        if (clamp_stats) clamp_to_raw_range(t, test.image(i), *clamp_stats, trig.kernel);
        if (t.delta_norm > trig.lambda + kBudgetTolerance) {
            throw NumericError("triggered test image " + std::to_string(i) + " exceeds the l2 budget: " +
                               textio::format_real(t.delta_norm) + " > " + textio::format_real(trig.lambda));
        }
        set.max_delta_norm = std::max(set.max_delta_norm, t.delta_norm);
        if (classify_score(t.achieved_score, trig.alpha)) ++set.reaching_alpha;
        if (t.clipped) ++set.clipped;
        set.triggered.push_back(std::move(t));
    }
    return set;
}

struct MetricRow {
    std::size_t epoch = 0;
    double acc = 0.0;
    std::optional<double> asr_n;  // empty when F'1 is empty
    std::optional<double> asr_m;  // empty when F'0 is empty
};

/// Metrics from predictions: `clean` holds one prediction per test sample, `triggered`
/// one per F'0 entry in partition order.
inline MetricRow metrics_from_predictions(std::span<const std::size_t> clean, std::span<const std::size_t> triggered,
                                          const Dataset& test, const TestPartition& part,
                                          std::size_t backdoor_class) {
    require(clean.size() == test.size(), "metrics: one prediction per test sample expected");
    require(triggered.size() == part.f0.size(), "metrics: one triggered prediction per F'0 sample expected");
    MetricRow row;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i)
        if (clean[i] == test.label(i)) ++correct;
    row.acc = static_cast<double>(correct) / static_cast<double>(test.size());

    if (part.f1.empty()) {
        warn("F'1 is empty: ASR-n undefined");
    } else {
        std::size_t hits = 0;
        for (std::size_t i : part.f1)
            if (clean[i] == backdoor_class) ++hits;
        row.asr_n = static_cast<double>(hits) / static_cast<double>(part.f1.size());
    }

    if (part.f0.empty()) {
        warn("F'0 is empty: ASR-m undefined");
    } else {
        std::size_t hits = 0;
        for (std::size_t p : triggered)
            if (p == backdoor_class) ++hits;
        row.asr_m = static_cast<double>(hits) / static_cast<double>(triggered.size());
    }
    return row;
}

template <class T>
MetricRow compute_metrics(const VictimModel<T>& model, const Dataset& test, const TestPartition& part,
                          const AttackSet& attack, std::size_t backdoor_class) {
    require(attack.triggered.size() == part.f0.size(), "attack set does not match the partition");
    const auto pred = predict(model, test);
    std::vector<ImageView<double>> views;
    views.reserve(attack.triggered.size());
    for (const auto& t : attack.triggered) views.push_back(t.image.view());
    const auto tp = views.empty() ? std::vector<std::size_t>{}
                                  : predict(model, std::span<const ImageView<double>>(views));
    return metrics_from_predictions(pred, tp, test, part, backdoor_class);
}

template <class T>
MetricRow compute_metrics(const VictimModel<T>& model, const Dataset& test, const TestPartition& part,
                          const CalibratedTrigger& trig) {
    return compute_metrics(model, test, part, prepare_attack_set(test, part, trig), trig.backdoor_class);
}

/// Original classes of the falsified samples. Samples already labelled y_T stay in
/// the plan but need no falsification; they are counted separately.
struct ClassHistogram {
    std::vector<std::size_t> counts;  // per original class; the backdoor class entry stays 0
    std::size_t already_target = 0;

    std::size_t falsified() const {
        std::size_t s = 0;
        for (auto c : counts) s += c;
        return s;
    }
};

inline ClassHistogram class_distribution(const PoisonPlan& plan, std::size_t num_classes = 10) {
    ClassHistogram h{std::vector<std::size_t>(num_classes, 0), 0};
    for (const auto& e : plan.entries) {
        require(e.original_label < num_classes, "plan label out of range");
        if (e.original_label == plan.backdoor_class)
            ++h.already_target;
        else
            ++h.counts[e.original_label];
    }
    return h;
}

struct EvalReport {
    std::vector<MetricRow> rows;
    std::size_t f1_size = 0;
    std::size_t f0_size = 0;
    std::size_t excluded = 0;
    double realized_gamma = 0.0;
    double feasibility_rate = 0.0;  // training images for which lambda suffices to reach alpha
    double attack_reach_rate = 0.0; // triggered F'0 images at or above alpha
    std::vector<std::pair<std::string, std::string>> config;

    /// Row with the highest ACC; first one wins ties.
    std::size_t best_row() const {
        require(!rows.empty(), "report has no rows");
        std::size_t best = 0;
        for (std::size_t i = 1; i < rows.size(); ++i)
            if (rows[i].acc > rows[best].acc) best = i;
        return best;
    }
};

inline std::string format_rate(const std::optional<double>& v) {
    return v ? textio::format_real(*v) : std::string("NA");
}

/// One row per epoch; undefined rates are written as NA. The config echo is
/// written as leading '#' comment lines.
inline std::string to_csv(const EvalReport& r) {
    std::ostringstream out;
    for (const auto& [k, v] : r.config) out << "# " << k << "=" << v << '\n';
    out << "epoch,acc,asr_n,asr_m,best_acc\n";
    const std::size_t best = r.rows.empty() ? 0 : r.best_row();
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
        const auto& row = r.rows[i];
        out << row.epoch << ',' << textio::format_real(row.acc) << ',' << format_rate(row.asr_n) << ','
            << format_rate(row.asr_m) << ',' << (i == best ? 1 : 0) << '\n';
    }
    return out.str();
}

inline nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json j;
    nlohmann::json cfg = nlohmann::json::object();
    for (const auto& [k, v] : r.config) cfg[k] = v;
    j["config"] = cfg;
    j["partition"] = {{"f1", r.f1_size}, {"f0", r.f0_size}, {"excluded", r.excluded}};
    j["realized_gamma"] = r.realized_gamma;
    j["feasibility_rate"] = r.feasibility_rate;
    j["attack_reach_rate"] = r.attack_reach_rate;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows) {
        rows.push_back({{"epoch", row.epoch},
                        {"acc", row.acc},
                        {"asr_n", row.asr_n ? nlohmann::json(*row.asr_n) : nlohmann::json(nullptr)},
                        {"asr_m", row.asr_m ? nlohmann::json(*row.asr_m) : nlohmann::json(nullptr)}});
    }
    j["rows"] = rows;
    if (!r.rows.empty()) j["best_epoch"] = r.rows[r.best_row()].epoch;
    return j;
}

/// Per-epoch mean over replicate reports; a rate is undefined only when it is
/// undefined in every replicate.
inline EvalReport aggregate(std::span<const EvalReport> reports) {
    require(!reports.empty(), "aggregate: no reports");
    EvalReport out = reports.front();
    const std::size_t n = reports.front().rows.size();
    for (const auto& r : reports) require(r.rows.size() == n, "aggregate: reports differ in epoch count");
    for (std::size_t e = 0; e < n; ++e) {
        double acc = 0.0, an = 0.0, am = 0.0;
        std::size_t cn = 0, cm = 0;
        for (const auto& r : reports) {
            acc += r.rows[e].acc;
            if (r.rows[e].asr_n) { an += *r.rows[e].asr_n; ++cn; }
            if (r.rows[e].asr_m) { am += *r.rows[e].asr_m; ++cm; }
        }
        out.rows[e].acc = acc / static_cast<double>(reports.size());
        out.rows[e].asr_n = cn ? std::optional<double>(an / static_cast<double>(cn)) : std::nullopt;
        out.rows[e].asr_m = cm ? std::optional<double>(am / static_cast<double>(cm)) : std::nullopt;
    }
    out.config.emplace_back("replicates", std::to_string(reports.size()));
    return out;
}

}  // namespace cib

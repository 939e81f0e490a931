#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cib/dataset.hpp"
#include "cib/error.hpp"
#include "cib/image.hpp"
#include "cib/textio.hpp"
#include "cib/trigger.hpp"

namespace cib {

struct PoisonEntry {
    std::size_t index;
    std::size_t original_label;
    friend bool operator==(const PoisonEntry&, const PoisonEntry&) = default;
};

/// Training indices whose labels are falsified, with the originals kept for audit.
struct PoisonPlan {
    std::vector<PoisonEntry> entries;  // strictly increasing index
    std::size_t train_size = 0;
    std::size_t rank = 0;  // floor(beta * N)
    double beta = 0.0;
    std::size_t backdoor_class = 0;
    double alpha = 0.0;
    double target_score = 0.0;

    std::size_t size() const { return entries.size(); }
    std::size_t tie_count() const { return entries.size() - std::min(entries.size(), rank); }
    double realized_gamma() const {
        return train_size == 0 ? 0.0 : static_cast<double>(entries.size()) / static_cast<double>(train_size);
    }
    std::vector<std::size_t> indices() const {
        std::vector<std::size_t> out;
        out.reserve(entries.size());
        for (const auto& e : entries) out.push_back(e.index);
        return out;
    }
    friend bool operator==(const PoisonPlan&, const PoisonPlan&) = default;
};

/// D_p = {(X, y) in train : g(X) >= alpha}. `scores` must be score_all(train, kernel).
inline PoisonPlan select_poison_set(const Dataset& train, const CalibratedTrigger& trig,
                                    std::span<const double> scores) {
    require(scores.size() == train.size(), "select_poison_set: score count mismatch");
    PoisonPlan plan;
    plan.train_size = train.size();
    plan.beta = trig.beta;
    plan.rank = static_cast<std::size_t>(std::floor(trig.beta * static_cast<double>(train.size())));
    plan.backdoor_class = trig.backdoor_class;
    plan.alpha = trig.alpha;
    plan.target_score = trig.target_score;
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (classify_score(scores[i], trig.alpha)) plan.entries.push_back({i, train.label(i)});
    if (plan.entries.empty()) {
        throw NumericError("empty poison plan: no training image scores at or above alpha=" +
                           textio::format_real(trig.alpha));
    }
    return plan;
}

inline PoisonPlan select_poison_set(const Dataset& train, const CalibratedTrigger& trig) {
    const auto scores = score_all(train, trig.kernel);
    return select_poison_set(train, trig, scores);
}

/// Images untouched; labels at plan indices set to y_T.
inline Dataset falsify_labels(const Dataset& train, const PoisonPlan& plan, std::size_t backdoor_class) {
    require(backdoor_class < train.num_classes(), "backdoor class out of range");
    std::vector<std::uint8_t> labels(train.labels().begin(), train.labels().end());
    for (const auto& e : plan.entries) {
        if (e.index >= train.size())
            throw std::out_of_range("poison plan index " + std::to_string(e.index) + " out of range for " +
                                    std::to_string(train.size()) + " samples");
        labels[e.index] = static_cast<std::uint8_t>(backdoor_class);
    }
    return train.with_labels(std::move(labels));
}

/// Median of a non-empty score list; even counts average the two middle values.
inline double median(std::vector<double> values) {
    require(!values.empty(), "median of empty set");
    const std::size_t n = values.size();
    const auto mid = values.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(values.begin(), mid, values.end());
    if (n % 2 == 1) return *mid;
    const double upper = *mid;
    const double lower = *std::max_element(values.begin(), mid);
    return 0.5 * (lower + upper);
}

/// alpha + delta = median of g over D_p. Requires delta > 0.
inline double compute_target_score(std::span<const double> plan_scores, double alpha) {
    require(!plan_scores.empty(), "compute_target_score: empty plan");
    const double m = median(std::vector<double>(plan_scores.begin(), plan_scores.end()));
    if (!(m > alpha)) {
        throw NumericError("degenerate margin: median plan score " + textio::format_real(m) +
                           " does not exceed alpha " + textio::format_real(alpha));
    }
    return m;
}

inline double compute_target_score(const Dataset& train, const PoisonPlan& plan, const TriggerKernel& kernel,
                                   double alpha) {
    std::vector<double> s;
    s.reserve(plan.size());
    for (const auto& e : plan.entries) s.push_back(score(train.image(e.index), kernel));
    return compute_target_score(s, alpha);
}

struct Calibration {
    CalibratedTrigger trigger;
    PoisonPlan plan;
    Threshold threshold;
};

/// Full label-poisoning calibration: threshold, D_p, and the median target score.
inline Calibration calibrate_trigger(const Dataset& train, TriggerKernel kernel, double beta, double lambda,
                                     std::size_t backdoor_class) {
    kernel.validate();
    require(lambda > 0.0, "lambda must be positive");
    require(backdoor_class < train.num_classes(), "backdoor class out of range");
    const auto scores = score_all(train, kernel);
    const Threshold th = calibrate_threshold(scores, beta);
    Calibration cal{CalibratedTrigger{std::move(kernel), th.alpha, 0.0, lambda, backdoor_class, beta}, {}, th};
    // target score is not known yet; the plan only depends on alpha
    cal.plan = select_poison_set(train, cal.trigger, scores);
    std::vector<double> plan_scores;
    plan_scores.reserve(cal.plan.size());
    for (const auto& e : cal.plan.entries) plan_scores.push_back(scores[e.index]);
    cal.trigger.target_score = compute_target_score(plan_scores, th.alpha);
    cal.plan.target_score = cal.trigger.target_score;
    cal.trigger.validate();
    return cal;
}

struct TriggeredImage {
    Image<double> image;     // t(X)
    double delta_norm = 0.0; // |t(X) - X|_2
    bool was_natural = false;
    bool clipped = false;    // cropping function saturated at lambda / sqrt(C)
    double achieved_score = 0.0;
};

/// Cropping function V: clamp to [0, lambda / sqrt(C)].
inline double crop_coefficient(double x, double lambda, std::size_t channels) {
    const double cap = lambda / std::sqrt(static_cast<double>(channels));
    if (x < 0.0) return 0.0;
    if (x > cap) return cap;
    return x;
}

/// Unclipped per-channel coefficient c = (target - g(X)) / (C |K|).
inline double required_coefficient(double g, double target, const TriggerKernel& kernel, std::size_t channels) {
    return (target - g) / (static_cast<double>(channels) * kernel.norm());
}

namespace detail {

/// Adds coef * K/|K| to the bottom-right patch of every channel.
inline void add_kernel_direction(Image<double>& img, const TriggerKernel& kernel, double coef) {
    const Shape& s = img.shape();
    const std::size_t side = kernel.side;
    const double knorm = kernel.norm();
    for (std::size_t c = 0; c < s.channels; ++c)
        for (std::size_t r = 0; r < side; ++r)
            for (std::size_t k = 0; k < side; ++k)
                img(c, s.height - side + r, s.width - side + k) += coef * kernel(r, k) / knorm;
}

}  // namespace detail

/// Minimal-norm perturbation reaching the target score inside the l2 budget.
/// Images that already carry the feature are returned unchanged.
template <class T>
TriggeredImage add_trigger(ImageView<T> image, const CalibratedTrigger& trig) {
    TriggeredImage out;
    out.image = Image<double>(image);
    const double g = score(image, trig.kernel);
    if (classify_score(g, trig.alpha)) {
        out.was_natural = true;
        out.achieved_score = g;
        return out;
    }
    const std::size_t channels = image.shape().channels;
    const double c = required_coefficient(g, trig.target_score, trig.kernel, channels);
    const double v = crop_coefficient(c, trig.lambda, channels);
    out.clipped = v < c;
    if (v > 0.0) detail::add_kernel_direction(out.image, trig.kernel, v);
    out.delta_norm = l2_distance(out.image.view(), image);
    out.achieved_score = score(out.image, trig.kernel);
    return out;
}

template <class T>
TriggeredImage add_trigger(const Image<T>& image, const CalibratedTrigger& trig) {
    return add_trigger(image.view(), trig);
}

/// Projects t(X) back onto displayable raw pixels ([0,1] before normalization) and
/// returns the score lost by doing so. Only the perturbed patch can leave the range.
template <class T>
double clamp_to_raw_range(TriggeredImage& t, ImageView<T> original, const NormalizationStats& stats,
                          const TriggerKernel& kernel) {
    const Shape& s = t.image.shape();
    require(stats.mean.size() == s.channels, "clamp_to_raw_range: stats channel mismatch");
    const double before = t.achieved_score;
    for (std::size_t c = 0; c < s.channels; ++c) {
        const double lo = (0.0 - stats.mean[c]) / stats.stddev[c];
        const double hi = (1.0 - stats.mean[c]) / stats.stddev[c];
        auto px = t.image.pixels().subspan(c * s.plane(), s.plane());
        for (auto& p : px) p = std::clamp(p, lo, hi);
    }
    t.achieved_score = score(t.image, kernel);
    t.delta_norm = l2_distance(t.image.view(), original);
    return before - t.achieved_score;
}

/// Fraction of images for which the budget suffices to reach alpha itself
/// (the feasibility condition max_{|D|<=lambda} f(X + D) = 1).
inline double feasibility_rate(const Dataset& data, const CalibratedTrigger& trig, std::span<const double> scores) {
    require(scores.size() == data.size(), "feasibility_rate: score count mismatch");
    const double reach = trig.lambda * std::sqrt(static_cast<double>(data.shape().channels)) * trig.kernel.norm();
    std::size_t ok = 0;
    for (double g : scores)
        if (g >= trig.alpha || trig.alpha - g <= reach) ++ok;
    return static_cast<double>(ok) / static_cast<double>(scores.size());
}

struct OptimalityReport {
    bool passed = true;
    double closed_form_norm = 0.0;
    double best_random_norm = 0.0;  // +inf when no trial direction was feasible
    std::size_t feasible_trials = 0;
};

/// Random-direction oracle for the closed form: each trial draws a direction d over
/// the C*S*S patch entries, scales it to the smallest step reaching the target, and
/// compares its norm with the closed-form norm.
template <class T>
OptimalityReport optimality_check(ImageView<T> image, const CalibratedTrigger& trig, std::size_t trials,
                                  std::uint64_t seed = 0) {
    const std::size_t channels = image.shape().channels;
    const double g = score(image, trig.kernel);
    const double need = trig.target_score - g;
    const double c = required_coefficient(g, trig.target_score, trig.kernel, channels);
    require(c <= trig.lambda / std::sqrt(static_cast<double>(channels)),
            "optimality_check requires the unclipped regime");

    OptimalityReport rep;
    rep.best_random_norm = std::numeric_limits<double>::infinity();
    if (need <= 0.0) return rep;  // zero perturbation is optimal
    rep.closed_form_norm = need / (std::sqrt(static_cast<double>(channels)) * trig.kernel.norm());

    const std::size_t n = trig.kernel.weights.size();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> d(channels * n);
    for (std::size_t t = 0; t < trials; ++t) {
        double along = 0.0, len2 = 0.0;
        for (std::size_t ch = 0; ch < channels; ++ch)
            for (std::size_t j = 0; j < n; ++j) {
                const double x = n01(rng);
                d[ch * n + j] = x;
                along += trig.kernel.weights[j] * x;
                len2 += x * x;
            }
        if (along <= 0.0) continue;
        ++rep.feasible_trials;
        const double norm = need / along * std::sqrt(len2);
        rep.best_random_norm = std::min(rep.best_random_norm, norm);
        if (norm < rep.closed_form_norm - 1e-6) rep.passed = false;
    }
    return rep;
}

inline textio::Document to_document(const PoisonPlan& p) {
    textio::Document doc;
    doc.add("format", "cib-plan 1");
    doc.add_real("beta", p.beta);
    doc.add("backdoor_class", std::to_string(p.backdoor_class));
    doc.add_real("alpha", p.alpha);
    doc.add_real("target_score", p.target_score);
    doc.add("train_size", std::to_string(p.train_size));
    doc.add("rank", std::to_string(p.rank));
    doc.add("tie_count", std::to_string(p.tie_count()));
    doc.add_real("realized_gamma", p.realized_gamma());
    for (const auto& e : p.entries) doc.add("entry", std::to_string(e.index) + " " + std::to_string(e.original_label));
    return doc;
}

inline PoisonPlan plan_from_document(const textio::Document& doc) {
    PoisonPlan p;
    p.beta = doc.get_real<double>("beta");
    p.backdoor_class = doc.get_integer<std::size_t>("backdoor_class");
    p.alpha = doc.get_real<double>("alpha");
    p.target_score = doc.get_real<double>("target_score");
    p.train_size = doc.get_integer<std::size_t>("train_size");
    p.rank = doc.get_integer<std::size_t>("rank");
    for (const auto& line : doc.get_all("entry")) {
        const auto sp = line.find(' ');
        if (sp == std::string::npos) throw DataError("malformed plan entry '" + line + "'");
        PoisonEntry e{textio::parse_integer<std::size_t>(std::string_view(line).substr(0, sp)),
                      textio::parse_integer<std::size_t>(std::string_view(line).substr(sp + 1))};
        if (!p.entries.empty() && e.index <= p.entries.back().index)
            throw DataError("plan entries must be strictly increasing");
        if (e.index >= p.train_size) throw DataError("plan entry index out of range");
        p.entries.push_back(e);
    }
    return p;
}

}  // namespace cib

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cib/dataset.hpp"
#include "cib/error.hpp"
#include "cib/image.hpp"
#include "cib/parallel.hpp"
#include "cib/textio.hpp"

namespace cib {

enum class KernelStrategy { randomizing, learning };

inline const char* to_string(KernelStrategy s) {
    return s == KernelStrategy::randomizing ? "randomizing" : "learning";
}

inline KernelStrategy parse_strategy(std::string_view s) {
    if (s == "randomizing" || s == "random") return KernelStrategy::randomizing;
    if (s == "learning" || s == "learn") return KernelStrategy::learning;
    throw std::invalid_argument("unknown kernel strategy '" + std::string(s) + "'");
}

struct TracePoint {
    std::size_t round;
    double loss;
    friend bool operator==(const TracePoint&, const TracePoint&) = default;
};

/// SxS weights shared by every channel of the bottom-right patch.
struct TriggerKernel {
    std::size_t side = 0;
    std::vector<double> weights;  // row-major, side*side
    KernelStrategy strategy = KernelStrategy::randomizing;
    std::uint64_t seed = 0;
    std::vector<TracePoint> learning_trace;

    double operator()(std::size_t r, std::size_t k) const { return weights[r * side + k]; }

    /// Frobenius norm.
    double norm() const {
        double s = 0.0;
        for (double w : weights) s += w * w;
        return std::sqrt(s);
    }

    void validate() const {
        require(side > 0, "kernel side must be positive");
        require(weights.size() == side * side, "kernel weight count does not match side");
        for (double w : weights) require(std::isfinite(w), "kernel weights must be finite");
        require(norm() > 0.0, "kernel norm must be positive");
    }

    friend bool operator==(const TriggerKernel&, const TriggerKernel&) = default;
};

/// Kernel plus everything needed to decide and synthesize the trigger feature.
struct CalibratedTrigger {
    TriggerKernel kernel;
    double alpha = 0.0;         // threshold in score units
    double target_score = 0.0;  // alpha + delta
    double lambda = 1.0;        // l2 budget
    std::size_t backdoor_class = 6;
    double beta = 0.05;

    double delta() const { return target_score - alpha; }

    void validate() const {
        kernel.validate();
        require(target_score > alpha, "target score must exceed alpha (delta > 0)");
        require(beta > 0.0 && beta < 1.0, "beta must lie in (0, 1)");
        require(lambda > 0.0, "lambda must be positive");
    }
};

struct SensitivityEstimate {
    double phi = 0.0;
    double sigma_g = 0.0;
    double kernel_norm = 0.0;
    std::size_t batch_size = 0;
};

/// g(X) = sum over channels of <K, X^{c, SxS}>.
template <class T>
double score(ImageView<T> image, const TriggerKernel& kernel) {
    const auto patch = bottom_right_patch(image, kernel.side);
    double g = 0.0;
    for (std::size_t c = 0; c < patch.channels(); ++c)
        for (std::size_t r = 0; r < kernel.side; ++r)
            for (std::size_t k = 0; k < kernel.side; ++k)
                g += kernel(r, k) * static_cast<double>(patch(c, r, k));
    return g;
}

template <class T>
double score(const Image<T>& image, const TriggerKernel& kernel) {
    return score(image.view(), kernel);
}

/// Scores of every sample, keyed by index.
inline std::vector<double> score_all(const Dataset& data, const TriggerKernel& kernel,
                                     std::size_t workers = default_workers()) {
    kernel.validate();
    require(kernel.side <= data.shape().height && kernel.side <= data.shape().width,
            "kernel side " + std::to_string(kernel.side) + " exceeds image " + data.shape().str());
    std::vector<double> out(data.size());
    parallel_for(data.size(), workers, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) out[i] = score(data.image(i), kernel);
    });
    return out;
}

struct Threshold {
    double alpha = 0.0;
    std::size_t rank = 0;             // k = floor(beta * N), 1-indexed from the top
    std::size_t at_or_above = 0;      // |{X : g(X) >= alpha}|
    std::size_t tie_count() const { return at_or_above - rank; }
};

/// alpha = k-th largest score, k = floor(beta * N).
inline Threshold calibrate_threshold(std::span<const double> scores, double beta) {
    require(beta > 0.0 && beta < 1.0, "beta must lie in (0, 1)");
    const auto k = static_cast<std::size_t>(std::floor(beta * static_cast<double>(scores.size())));
    if (k == 0) {
        throw NumericError("calibration impossible: floor(beta * N) = 0 for beta=" +
                           textio::format_real(beta) + ", N=" + std::to_string(scores.size()));
    }
    std::vector<double> sorted(scores.begin(), scores.end());
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end(),
                     std::greater<>{});
    Threshold t;
    t.alpha = sorted[k - 1];
    t.rank = k;
    t.at_or_above = static_cast<std::size_t>(
        std::count_if(scores.begin(), scores.end(), [&](double s) { return s >= t.alpha; }));
    return t;
}

inline Threshold calibrate_threshold(const Dataset& train, const TriggerKernel& kernel, double beta) {
    const auto scores = score_all(train, kernel);
    return calibrate_threshold(scores, beta);
}

/// f(X) = heaviside(g(X) - alpha) with heaviside(0) = 1.
inline bool classify_score(double g, double alpha) { return g >= alpha; }

template <class T>
bool classify(ImageView<T> image, const CalibratedTrigger& trig) {
    return classify_score(score(image, trig.kernel), trig.alpha);
}

template <class T>
bool classify(const Image<T>& image, const CalibratedTrigger& trig) {
    return classify(image.view(), trig);
}

namespace detail {

inline std::vector<double> standard_normal_weights(std::size_t side, std::mt19937_64& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> w(side * side);
    for (auto& v : w) v = n01(rng);
    return w;
}

}  // namespace detail

/// Randomizing strategy: i.i.d. N(0,1) entries.
inline TriggerKernel random_kernel(std::size_t side, std::uint64_t seed) {
    require(side > 0, "kernel side must be positive");
    std::mt19937_64 rng(seed);
    return TriggerKernel{side, detail::standard_normal_weights(side, rng), KernelStrategy::randomizing,
                         seed, {}};
}

/// Channel-summed bottom-right patches of a batch, one row of side*side per image.
/// Since g is linear in K, g(X_m) = <K, Q_m> and dg/dK = Q_m.
class PatchBatch {
public:
    PatchBatch(std::size_t side) : side_(side) { require(side > 0, "patch side must be positive"); }

    template <class T>
    void add(ImageView<T> image) {
        const auto patch = bottom_right_patch(image, side_);
        const std::size_t base = sums_.size();
        sums_.resize(base + side_ * side_, 0.0);
        for (std::size_t c = 0; c < patch.channels(); ++c)
            for (std::size_t r = 0; r < side_; ++r)
                for (std::size_t k = 0; k < side_; ++k) sums_[base + r * side_ + k] += patch(c, r, k);
    }

    std::size_t size() const { return sums_.size() / (side_ * side_); }
    std::size_t side() const { return side_; }
    std::span<const double> row(std::size_t m) const {
        return std::span<const double>(sums_).subspan(m * side_ * side_, side_ * side_);
    }

    static PatchBatch from(const Dataset& data, std::span<const std::size_t> indices, std::size_t side) {
        PatchBatch b(side);
        for (std::size_t i : indices) b.add(data.image(i));
        return b;
    }
    template <class T>
    static PatchBatch from(std::span<const ImageView<T>> images, std::size_t side) {
        PatchBatch b(side);
        for (const auto& im : images) b.add(im);
        return b;
    }

private:
    std::size_t side_;
    std::vector<double> sums_;
};

namespace detail {

struct PhiEvaluation {
    SensitivityEstimate estimate;
    std::vector<double> scores;
    double mean = 0.0;
};

inline PhiEvaluation evaluate_phi(std::span<const double> weights, const PatchBatch& batch) {
    const std::size_t m = batch.size();
    if (m < 2) throw std::invalid_argument("phi estimate needs a batch of at least 2 images");
    require(weights.size() == batch.side() * batch.side(), "kernel/batch side mismatch");
    PhiEvaluation ev;
    ev.scores.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        const auto q = batch.row(i);
        ev.scores[i] = std::inner_product(weights.begin(), weights.end(), q.begin(), 0.0);
    }
    // shifted by the first score so identical scores give exactly zero variance
    const double shift = ev.scores[0];
    double dsum = 0.0;
    for (double g : ev.scores) dsum += g - shift;
    const double dmean = dsum / static_cast<double>(m);
    ev.mean = shift + dmean;
    double ss = 0.0;
    for (double g : ev.scores) ss += ((g - shift) - dmean) * ((g - shift) - dmean);
    const double knorm = std::sqrt(std::inner_product(weights.begin(), weights.end(), weights.begin(), 0.0));
    require(knorm > 0.0, "kernel norm must be positive");
    ev.estimate.sigma_g = std::sqrt(ss / static_cast<double>(m - 1));
    ev.estimate.kernel_norm = knorm;
    ev.estimate.phi = ev.estimate.sigma_g / knorm;
    ev.estimate.batch_size = m;
    return ev;
}

/// d(phi)/dK = grad(sigma)/|K| - sigma K/|K|^3,
/// grad(sigma) = sum_m (g_m - mean)(Q_m - mean(Q)) / ((M-1) sigma).
inline std::vector<double> phi_gradient(std::span<const double> weights, const PatchBatch& batch,
                                        const PhiEvaluation& ev) {
    const std::size_t n = weights.size();
    std::vector<double> grad(n, 0.0);
    const double sigma = ev.estimate.sigma_g;
    if (!(sigma > 0.0)) {
        warn("degenerate batch: score variance is zero, phi gradient set to zero");
        return grad;
    }
    const std::size_t m = batch.size();
    std::vector<double> qmean(n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const auto q = batch.row(i);
        for (std::size_t j = 0; j < n; ++j) qmean[j] += q[j];
    }
    for (auto& v : qmean) v /= static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
        const auto q = batch.row(i);
        const double dev = ev.scores[i] - ev.mean;
        for (std::size_t j = 0; j < n; ++j) grad[j] += dev * (q[j] - qmean[j]);
    }
    const double knorm = ev.estimate.kernel_norm;
    const double scale = 1.0 / (static_cast<double>(m - 1) * sigma * knorm);
    const double radial = sigma / (knorm * knorm * knorm);
    for (std::size_t j = 0; j < n; ++j) grad[j] = grad[j] * scale - radial * weights[j];
    return grad;
}

}  // namespace detail

inline SensitivityEstimate estimate_phi(const TriggerKernel& kernel, const PatchBatch& batch) {
    return detail::evaluate_phi(kernel.weights, batch).estimate;
}

template <class T>
SensitivityEstimate estimate_phi(const TriggerKernel& kernel, std::span<const ImageView<T>> batch) {
    return estimate_phi(kernel, PatchBatch::from(batch, kernel.side));
}

inline SensitivityEstimate estimate_phi(const TriggerKernel& kernel, const Dataset& data,
                                        std::span<const std::size_t> indices) {
    return estimate_phi(kernel, PatchBatch::from(data, indices, kernel.side));
}

inline std::vector<double> phi_gradient(const TriggerKernel& kernel, const PatchBatch& batch) {
    const auto ev = detail::evaluate_phi(kernel.weights, batch);
    return detail::phi_gradient(kernel.weights, batch, ev);
}

template <class T>
std::vector<double> phi_gradient(const TriggerKernel& kernel, std::span<const ImageView<T>> batch) {
    return phi_gradient(kernel, PatchBatch::from(batch, kernel.side));
}

struct AdamConfig {
    double learning_rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class Adam {
public:
    Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

    void step(std::span<double> params, std::span<const double> grad) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t j = 0; j < params.size(); ++j) {
            m_[j] = cfg_.beta1 * m_[j] + (1.0 - cfg_.beta1) * grad[j];
            v_[j] = cfg_.beta2 * v_[j] + (1.0 - cfg_.beta2) * grad[j] * grad[j];
            params[j] -= cfg_.learning_rate * (m_[j] / c1) / (std::sqrt(v_[j] / c2) + cfg_.epsilon);
        }
    }

private:
    AdamConfig cfg_;
    std::vector<double> m_, v_;
    std::size_t t_ = 0;
};

struct LearnConfig {
    std::size_t side = 3;
    std::size_t batch_size = 128;  // M
    std::size_t epochs = 3;
    std::optional<std::size_t> rounds;  // overrides epochs * floor(N / M) when set
    AdamConfig adam{};
    std::uint64_t seed = 0;
};

/// Learning strategy: start from random_kernel(side, seed) and minimize phi with Adam,
/// one fresh batch per round. Batches are drawn without replacement within an epoch
/// (floor(N/M) rounds per epoch, remainder dropped).
inline TriggerKernel learn_kernel(const Dataset& train, const LearnConfig& cfg) {
    if (cfg.batch_size < 2) throw std::invalid_argument("learn_kernel: batch size M must be at least 2");
    require(train.size() >= cfg.batch_size, "learn_kernel: dataset smaller than batch size");
    require(cfg.side <= train.shape().height && cfg.side <= train.shape().width,
            "learn_kernel: kernel side exceeds image");

    std::mt19937_64 rng(cfg.seed);
    TriggerKernel kernel{cfg.side, detail::standard_normal_weights(cfg.side, rng), KernelStrategy::learning,
                         cfg.seed, {}};
    const std::size_t per_epoch = train.size() / cfg.batch_size;
    const std::size_t total = cfg.rounds ? *cfg.rounds : per_epoch * cfg.epochs;

    Adam opt(kernel.weights.size(), cfg.adam);
    std::vector<std::size_t> order(train.size());
    std::size_t cursor = per_epoch;  // forces a reshuffle on the first round
    for (std::size_t round = 0; round < total; ++round) {
        if (cursor == per_epoch) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        const std::span<const std::size_t> idx(order.data() + cursor * cfg.batch_size, cfg.batch_size);
        ++cursor;
        const auto batch = PatchBatch::from(train, idx, cfg.side);
        const auto ev = detail::evaluate_phi(kernel.weights, batch);
        const auto grad = detail::phi_gradient(kernel.weights, batch, ev);
        kernel.learning_trace.push_back({round, ev.estimate.phi});
        opt.step(kernel.weights, grad);
        for (double w : kernel.weights)
            if (!std::isfinite(w)) throw NumericError("learn_kernel: weights diverged at round " + std::to_string(round));
    }
    return kernel;
}

inline textio::Document to_document(const TriggerKernel& k) {
    textio::Document doc;
    doc.add("format", "cib-kernel 1");
    doc.add("side", std::to_string(k.side));
    doc.add("strategy", to_string(k.strategy));
    doc.add("seed", std::to_string(k.seed));
    doc.add_reals("weights", k.weights.begin(), k.weights.end());
    for (const auto& t : k.learning_trace) doc.add("trace", std::to_string(t.round) + " " + textio::format_real(t.loss));
    return doc;
}

inline TriggerKernel kernel_from_document(const textio::Document& doc) {
    TriggerKernel k;
    k.side = doc.get_integer<std::size_t>("side");
    k.strategy = parse_strategy(doc.get("strategy"));
    k.seed = doc.get_integer<std::uint64_t>("seed");
    k.weights = doc.get_reals<double>("weights");
    for (const auto& line : doc.get_all("trace")) {
        const auto sp = line.find(' ');
        if (sp == std::string::npos) throw DataError("malformed trace line '" + line + "'");
        k.learning_trace.push_back({textio::parse_integer<std::size_t>(std::string_view(line).substr(0, sp)),
                                    textio::parse_real<double>(std::string_view(line).substr(sp + 1))});
    }
    try {
        k.validate();
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("invalid kernel document: ") + e.what());
    }
    return k;
}

inline textio::Document to_document(const CalibratedTrigger& t) {
    textio::Document doc = to_document(t.kernel);
    doc.add_real("alpha", t.alpha);
    doc.add_real("target_score", t.target_score);
    doc.add_real("lambda", t.lambda);
    doc.add("backdoor_class", std::to_string(t.backdoor_class));
    doc.add_real("beta", t.beta);
    return doc;
}

inline CalibratedTrigger trigger_from_document(const textio::Document& doc) {
    CalibratedTrigger t;
    t.kernel = kernel_from_document(doc);
    t.alpha = doc.get_real<double>("alpha");
    t.target_score = doc.get_real<double>("target_score");
    t.lambda = doc.get_real<double>("lambda");
    t.backdoor_class = doc.get_integer<std::size_t>("backdoor_class");
    t.beta = doc.get_real<double>("beta");
    try {
        t.validate();
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("invalid trigger document: ") + e.what());
    }
    return t;
}

}  // namespace cib

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "cib/dataset.hpp"
#include "cib/error.hpp"
#include "cib/image.hpp"
#include "cib/textio.hpp"

namespace cib {

/// Two-layer fully connected network: input -> hidden (ReLU) -> classes.
struct MlpSpec {
    std::size_t hidden = 512;
    friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// conv3x3(conv1) - ReLU - maxpool2 - conv3x3(conv2) - ReLU - maxpool2 - linear head.
struct CnnSpec {
    std::size_t conv1 = 16;
    std::size_t conv2 = 32;
    friend bool operator==(const CnnSpec&, const CnnSpec&) = default;
};

using Architecture = std::variant<MlpSpec, CnnSpec>;

inline std::string to_string(const Architecture& a) {
    if (const auto* m = std::get_if<MlpSpec>(&a)) return "mlp:" + std::to_string(m->hidden);
    const auto& c = std::get<CnnSpec>(a);
    return "cnn:" + std::to_string(c.conv1) + "," + std::to_string(c.conv2);
}

/// "mlp", "mlp:512", "cnn", "cnn:16,32".
inline Architecture parse_architecture(std::string_view s) {
    auto number = [&](std::string_view tok) {
        std::size_t n = 0;
        try {
            n = textio::parse_integer<std::size_t>(tok);
        } catch (const DataError&) {
            throw std::invalid_argument("architecture '" + std::string(s) + "' has a non-numeric width");
        }
        if (n == 0) throw std::invalid_argument("architecture '" + std::string(s) + "' has a zero width");
        return n;
    };
    if (s == "mlp") return MlpSpec{};
    if (s == "cnn" || s == "small_cnn") return CnnSpec{};
    if (s.starts_with("mlp:")) return MlpSpec{number(s.substr(4))};
    if (s.starts_with("cnn:")) {
        const auto rest = s.substr(4);
        const auto comma = rest.find(',');
        if (comma == std::string_view::npos) throw std::invalid_argument("cnn spec needs 'cnn:C1,C2'");
        return CnnSpec{number(rest.substr(0, comma)), number(rest.substr(comma + 1))};
    }
    throw std::invalid_argument("unknown architecture '" + std::string(s) + "'");
}

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::size_t batch_size = 128;
    std::size_t epochs = 5;
    std::uint64_t seed = 0;

    void validate() const {
        require(learning_rate > 0.0, "learning rate must be positive");
        require(batch_size >= 1, "batch size must be at least 1");
        require(momentum >= 0.0 && weight_decay >= 0.0, "momentum and weight decay must be non-negative");
    }
};

namespace detail {

enum class LayerKind { dense, conv3x3, relu, maxpool2 };

struct Layer {
    LayerKind kind;
    Shape in;
    Shape out;
    std::size_t offset = 0;   // first parameter
    std::size_t weights = 0;  // weight count; biases follow
    std::size_t biases = 0;
    std::size_t fan_in = 0;
};

inline std::vector<Layer> build_layers(const Architecture& arch, Shape input, std::size_t classes) {
    std::vector<Layer> layers;
    std::size_t offset = 0;
    auto dense = [&](Shape in, std::size_t out) {
        Layer l{LayerKind::dense, in, Shape{out, 1, 1}, offset, out * in.size(), out, in.size()};
        offset += l.weights + l.biases;
        layers.push_back(l);
        return l.out;
    };
    auto conv = [&](Shape in, std::size_t cout) {
        Layer l{LayerKind::conv3x3, in, Shape{cout, in.height, in.width}, offset, cout * in.channels * 9, cout,
                in.channels * 9};
        offset += l.weights + l.biases;
        layers.push_back(l);
        return l.out;
    };
    auto relu = [&](Shape in) {
        layers.push_back(Layer{LayerKind::relu, in, in});
        return in;
    };
    auto pool = [&](Shape in) {
        require(in.height >= 2 && in.width >= 2, "input too small for 2x2 pooling");
        Shape out{in.channels, in.height / 2, in.width / 2};
        layers.push_back(Layer{LayerKind::maxpool2, in, out});
        return out;
    };

    if (const auto* m = std::get_if<MlpSpec>(&arch)) {
        require(m->hidden > 0, "mlp hidden_dim must be positive");
        Shape s = dense(input, m->hidden);
        s = relu(s);
        dense(s, classes);
    } else {
        const auto& c = std::get<CnnSpec>(arch);
        require(c.conv1 > 0 && c.conv2 > 0, "cnn channel counts must be positive");
        Shape s = pool(relu(conv(input, c.conv1)));
        s = pool(relu(conv(s, c.conv2)));
        dense(s, classes);
    }
    return layers;
}

}  // namespace detail

/// Victim classifier with a flat parameter vector; each layer maps a slice of it.
template <class T>
class VictimModel {
public:
    using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

    VictimModel(Architecture arch, Shape input, std::size_t num_classes, std::uint64_t seed)
        : arch_(arch), input_(input), num_classes_(num_classes), seed_(seed) {
        require(num_classes >= 2, "need at least two classes");
        require(input.size() > 0, "empty input shape");
        layers_ = detail::build_layers(arch, input, num_classes);
        params_.assign(layers_.back().offset + layers_.back().weights + layers_.back().biases, T{0});
        std::mt19937_64 rng(seed);
        for (const auto& l : layers_) {
            if (l.weights == 0) continue;
            const double bound = 1.0 / std::sqrt(static_cast<double>(l.fan_in));
            std::uniform_real_distribution<double> u(-bound, bound);
            for (std::size_t i = 0; i < l.weights + l.biases; ++i) params_[l.offset + i] = static_cast<T>(u(rng));
        }
    }

    const Architecture& architecture() const { return arch_; }
    const Shape& input_shape() const { return input_; }
    std::size_t num_classes() const { return num_classes_; }
    std::uint64_t seed() const { return seed_; }
    std::size_t parameter_count() const { return params_.size(); }
    std::span<const T> parameters() const { return params_; }
    std::span<T> parameters() { return params_; }
    void set_parameters(std::vector<T> p) {
        require(p.size() == params_.size(), "parameter count mismatch");
        params_ = std::move(p);
    }

    /// Logits for a batch stored column-wise (input_size x batch).
    Matrix forward(const Matrix& x) const {
        Matrix a = x;
        for (const auto& l : layers_) a = forward_layer(l, a, nullptr);
        return a;
    }

    /// Mean softmax cross-entropy over the batch and its parameter gradient.
    T loss_and_gradient(const Matrix& x, std::span<const std::size_t> labels, std::vector<T>& grad,
                        std::size_t* correct = nullptr) const {
        require(static_cast<std::size_t>(x.rows()) == input_.size(), "input size mismatch");
        require(static_cast<std::size_t>(x.cols()) == labels.size(), "label count mismatch");
        std::vector<Matrix> acts;
        std::vector<std::vector<int>> argmax(layers_.size());
        acts.reserve(layers_.size() + 1);
        acts.push_back(x);
        for (std::size_t i = 0; i < layers_.size(); ++i)
            acts.push_back(forward_layer(layers_[i], acts.back(), &argmax[i]));

        const Matrix& logits = acts.back();
        const auto batch = static_cast<Eigen::Index>(labels.size());
        Matrix delta = softmax(logits);
        T loss = 0;
        std::size_t hits = 0;
        for (Eigen::Index b = 0; b < batch; ++b) {
            const auto y = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(b)]);
            loss -= std::log(std::max(delta(y, b), std::numeric_limits<T>::min()));
            if (argmax_column(logits, b) == static_cast<std::size_t>(y)) ++hits;
            delta(y, b) -= T{1};
        }
        delta /= static_cast<T>(batch);
        if (correct) *correct = hits;

        grad.assign(params_.size(), T{0});
        for (std::size_t i = layers_.size(); i-- > 0;)
            delta = backward_layer(layers_[i], acts[i], delta, argmax[i], grad, i > 0);
        return loss / static_cast<T>(batch);
    }

    /// Column-wise softmax.
    static Matrix softmax(const Matrix& logits) {
        Matrix p(logits.rows(), logits.cols());
        for (Eigen::Index b = 0; b < logits.cols(); ++b) {
            const T mx = logits.col(b).maxCoeff();
            p.col(b) = (logits.col(b).array() - mx).exp().matrix();
            p.col(b) /= p.col(b).sum();
        }
        return p;
    }

    /// First maximal entry, so ties resolve to the lower class index.
    static std::size_t argmax_column(const Matrix& m, Eigen::Index col) {
        Eigen::Index best = 0;
        for (Eigen::Index r = 1; r < m.rows(); ++r)
            if (m(r, col) > m(best, col)) best = r;
        return static_cast<std::size_t>(best);
    }

private:
    using MapM = Eigen::Map<Matrix>;
    using CMapM = Eigen::Map<const Matrix>;
    using CMapV = Eigen::Map<const Vector>;

    CMapM weight(const detail::Layer& l, Eigen::Index rows, Eigen::Index cols) const {
        return CMapM(params_.data() + l.offset, rows, cols);
    }
    CMapV bias(const detail::Layer& l) const {
        return CMapV(params_.data() + l.offset + l.weights, static_cast<Eigen::Index>(l.biases));
    }

    // im2col for a 3x3 kernel with zero padding, transposed: (H*W) x (Cin*9).
    static void im2col(const T* x, const Shape& s, Matrix& cols) {
        const auto hw = static_cast<Eigen::Index>(s.plane());
        cols.resize(hw, static_cast<Eigen::Index>(s.channels * 9));
        const auto H = static_cast<long>(s.height), W = static_cast<long>(s.width);
        for (std::size_t ci = 0; ci < s.channels; ++ci)
            for (long ky = 0; ky < 3; ++ky)
                for (long kx = 0; kx < 3; ++kx) {
                    T* dst = cols.data() + static_cast<Eigen::Index>(ci * 9 + static_cast<std::size_t>(ky * 3 + kx)) * hw;
                    const T* src = x + ci * s.plane();
                    for (long y = 0; y < H; ++y) {
                        const long sy = y + ky - 1;
                        for (long xx = 0; xx < W; ++xx) {
                            const long sx = xx + kx - 1;
                            dst[y * W + xx] = (sy < 0 || sy >= H || sx < 0 || sx >= W) ? T{0} : src[sy * W + sx];
                        }
                    }
                }
    }

    static void col2im(const Matrix& dcols, const Shape& s, T* dx) {
        const auto hw = static_cast<Eigen::Index>(s.plane());
        const auto H = static_cast<long>(s.height), W = static_cast<long>(s.width);
        for (std::size_t ci = 0; ci < s.channels; ++ci)
            for (long ky = 0; ky < 3; ++ky)
                for (long kx = 0; kx < 3; ++kx) {
                    const T* src = dcols.data() + static_cast<Eigen::Index>(ci * 9 + static_cast<std::size_t>(ky * 3 + kx)) * hw;
                    T* dst = dx + ci * s.plane();
                    for (long y = 0; y < H; ++y) {
                        const long sy = y + ky - 1;
                        if (sy < 0 || sy >= H) continue;
                        for (long xx = 0; xx < W; ++xx) {
                            const long sx = xx + kx - 1;
                            if (sx < 0 || sx >= W) continue;
                            dst[sy * W + sx] += src[y * W + xx];
                        }
                    }
                }
    }

    Matrix forward_layer(const detail::Layer& l, const Matrix& x, std::vector<int>* argmax) const {
        const Eigen::Index batch = x.cols();
        switch (l.kind) {
        case detail::LayerKind::dense: {
            const auto w = weight(l, static_cast<Eigen::Index>(l.out.size()), static_cast<Eigen::Index>(l.in.size()));
            Matrix y = w * x;
            y.colwise() += bias(l);
            return y;
        }
        case detail::LayerKind::conv3x3: {
            const auto cout = static_cast<Eigen::Index>(l.out.channels);
            const auto hw = static_cast<Eigen::Index>(l.out.plane());
            const auto w = weight(l, cout, static_cast<Eigen::Index>(l.in.channels * 9));
            const auto b = bias(l);
            Matrix y(static_cast<Eigen::Index>(l.out.size()), batch);
            Matrix cols;
            for (Eigen::Index n = 0; n < batch; ++n) {
                im2col(x.col(n).data(), l.in, cols);
                MapM out(y.col(n).data(), hw, cout);
                out.noalias() = cols * w.transpose();
                out.rowwise() += b.transpose();
            }
            return y;
        }
        case detail::LayerKind::relu:
            return x.cwiseMax(T{0});
        case detail::LayerKind::maxpool2: {
            Matrix y(static_cast<Eigen::Index>(l.out.size()), batch);
            if (argmax) argmax->assign(l.out.size() * static_cast<std::size_t>(batch), 0);
            for (Eigen::Index n = 0; n < batch; ++n) {
                const T* src = x.col(n).data();
                T* dst = y.col(n).data();
                for (std::size_t c = 0; c < l.out.channels; ++c)
                    for (std::size_t oy = 0; oy < l.out.height; ++oy)
                        for (std::size_t ox = 0; ox < l.out.width; ++ox) {
                            std::size_t best = c * l.in.plane() + 2 * oy * l.in.width + 2 * ox;
                            for (std::size_t dy = 0; dy < 2; ++dy)
                                for (std::size_t dx = 0; dx < 2; ++dx) {
                                    const std::size_t idx = c * l.in.plane() + (2 * oy + dy) * l.in.width + 2 * ox + dx;
                                    if (src[idx] > src[best]) best = idx;
                                }
                            const std::size_t o = c * l.out.plane() + oy * l.out.width + ox;
                            dst[o] = src[best];
                            if (argmax) (*argmax)[static_cast<std::size_t>(n) * l.out.size() + o] = static_cast<int>(best);
                        }
            }
            return y;
        }
        }
        return {};
    }

    Matrix backward_layer(const detail::Layer& l, const Matrix& x, const Matrix& dy, const std::vector<int>& argmax,
                          std::vector<T>& grad, bool need_input_grad) const {
        const Eigen::Index batch = x.cols();
        switch (l.kind) {
        case detail::LayerKind::dense: {
            const auto rows = static_cast<Eigen::Index>(l.out.size());
            const auto cols = static_cast<Eigen::Index>(l.in.size());
            MapM gw(grad.data() + l.offset, rows, cols);
            Eigen::Map<Vector> gb(grad.data() + l.offset + l.weights, rows);
            gw.noalias() += dy * x.transpose();
            gb += dy.rowwise().sum();
            if (!need_input_grad) return {};
            return weight(l, rows, cols).transpose() * dy;
        }
        case detail::LayerKind::conv3x3: {
            const auto cout = static_cast<Eigen::Index>(l.out.channels);
            const auto hw = static_cast<Eigen::Index>(l.out.plane());
            const auto k = static_cast<Eigen::Index>(l.in.channels * 9);
            const auto w = weight(l, cout, k);
            MapM gw(grad.data() + l.offset, cout, k);
            Eigen::Map<Vector> gb(grad.data() + l.offset + l.weights, cout);
            Matrix dx;
            if (need_input_grad) dx = Matrix::Zero(static_cast<Eigen::Index>(l.in.size()), batch);
            Matrix cols, dcols;
            for (Eigen::Index n = 0; n < batch; ++n) {
                const CMapM dout(dy.col(n).data(), hw, cout);
                im2col(x.col(n).data(), l.in, cols);
                gw.noalias() += dout.transpose() * cols;
                gb += dout.colwise().sum().transpose();
                if (need_input_grad) {
                    dcols.noalias() = dout * w;
                    col2im(dcols, l.in, dx.col(n).data());
                }
            }
            return dx;
        }
        case detail::LayerKind::relu:
            return (x.array() > T{0}).select(dy.array(), T{0}).matrix();
        case detail::LayerKind::maxpool2: {
            Matrix dx = Matrix::Zero(static_cast<Eigen::Index>(l.in.size()), batch);
            for (Eigen::Index n = 0; n < batch; ++n)
                for (std::size_t o = 0; o < l.out.size(); ++o)
                    dx(argmax[static_cast<std::size_t>(n) * l.out.size() + o], n) += dy(static_cast<Eigen::Index>(o), n);
            return dx;
        }
        }
        return {};
    }

    Architecture arch_;
    Shape input_;
    std::size_t num_classes_;
    std::uint64_t seed_;
    std::vector<detail::Layer> layers_;
    std::vector<T> params_;
};

template <class T>
VictimModel<T> build_model(const Architecture& arch, Shape input, std::size_t num_classes, std::uint64_t seed) {
    return VictimModel<T>(arch, input, num_classes, seed);
}

/// Packs images column-wise into a model input matrix.
template <class T, class Views>
typename VictimModel<T>::Matrix to_matrix(const Views& images, std::size_t input_size) {
    typename VictimModel<T>::Matrix x(static_cast<Eigen::Index>(input_size), static_cast<Eigen::Index>(images.size()));
    Eigen::Index col = 0;
    for (const auto& im : images) {
        const auto px = im.pixels();
        require(px.size() == input_size, "image shape does not match model input");
        for (std::size_t k = 0; k < input_size; ++k) x(static_cast<Eigen::Index>(k), col) = static_cast<T>(px[k]);
        ++col;
    }
    return x;
}

template <class T>
typename VictimModel<T>::Matrix gather(const Dataset& data, std::span<const std::size_t> idx) {
    const std::size_t d = data.shape().size();
    typename VictimModel<T>::Matrix x(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) {
        const auto px = data.image(idx[j]).pixels();
        for (std::size_t k = 0; k < d; ++k) x(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = static_cast<T>(px[k]);
    }
    return x;
}

/// Argmax class per image, in input order.
template <class T, class U>
std::vector<std::size_t> predict(const VictimModel<T>& model, std::span<const ImageView<U>> images,
                                 std::size_t chunk = 256) {
    std::vector<std::size_t> out;
    out.reserve(images.size());
    for (std::size_t b = 0; b < images.size(); b += chunk) {
        const auto part = images.subspan(b, std::min(chunk, images.size() - b));
        for (const auto& im : part) require(im.shape() == model.input_shape(), "image shape does not match model input");
        const auto logits = model.forward(to_matrix<T>(part, model.input_shape().size()));
        for (Eigen::Index c = 0; c < logits.cols(); ++c) out.push_back(VictimModel<T>::argmax_column(logits, c));
    }
    return out;
}

template <class T>
std::vector<std::size_t> predict(const VictimModel<T>& model, const Dataset& data, std::size_t chunk = 256) {
    require(data.shape() == model.input_shape(), "dataset shape does not match model input");
    std::vector<std::size_t> out;
    out.reserve(data.size());
    std::vector<std::size_t> idx;
    for (std::size_t b = 0; b < data.size(); b += chunk) {
        idx.resize(std::min(chunk, data.size() - b));
        std::iota(idx.begin(), idx.end(), b);
        const auto logits = model.forward(gather<T>(data, idx));
        for (Eigen::Index c = 0; c < logits.cols(); ++c) out.push_back(VictimModel<T>::argmax_column(logits, c));
    }
    return out;
}

template <class T>
struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double loss = 0.0;      // mean training loss over the epoch
    double accuracy = 0.0;  // training accuracy over the epoch (pre-update predictions)
    std::vector<T> snapshot;
};

template <class T>
struct TrainLog {
    std::vector<EpochRecord<T>> epochs;
};

/// Optional hook called after each epoch with the model as of that epoch.
template <class T>
using EpochCallback = std::function<void(const VictimModel<T>&, const EpochRecord<T>&)>;

/// Minibatch SGD, classic momentum, L2 decay added to the gradient:
///   g = grad + wd * p;  v = mu * v + g;  p -= lr * v.
template <class T>
TrainLog<T> train(VictimModel<T>& model, const Dataset& data, const TrainConfig& cfg,
                  const EpochCallback<T>& on_epoch = {}, bool keep_snapshots = true) {
    cfg.validate();
    require(data.shape() == model.input_shape(), "dataset shape does not match model input");
    require(data.num_classes() <= model.num_classes(), "dataset has more classes than the model");

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    std::vector<T> grad;
    std::vector<T> velocity(model.parameter_count(), T{0});
    std::vector<std::size_t> labels;
    TrainLog<T> log;
    const auto lr = static_cast<T>(cfg.learning_rate);
    const auto mu = static_cast<T>(cfg.momentum);
    const auto wd = static_cast<T>(cfg.weight_decay);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t hits = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const std::span<const std::size_t> idx(order.data() + b, std::min(cfg.batch_size, order.size() - b));
            labels.assign(idx.size(), 0);
            for (std::size_t j = 0; j < idx.size(); ++j) labels[j] = data.label(idx[j]);
            std::size_t correct = 0;
            const T loss = model.loss_and_gradient(gather<T>(data, idx), labels, grad, &correct);
            if (!std::isfinite(static_cast<double>(loss))) {
                throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                                   std::to_string(b) + " (learning rate " + textio::format_real(cfg.learning_rate) +
                                   ", seed " + std::to_string(cfg.seed) + ")");
            }
            loss_sum += static_cast<double>(loss) * static_cast<double>(idx.size());
            hits += correct;
            auto p = model.parameters();
            for (std::size_t j = 0; j < p.size(); ++j) {
                const T g = grad[j] + wd * p[j];
                velocity[j] = mu * velocity[j] + g;
                p[j] -= lr * velocity[j];
            }
            for (T v : p)
                if (!std::isfinite(static_cast<double>(v)))
                    throw NumericError("training diverged: non-finite parameter at epoch " + std::to_string(epoch));
        }
        EpochRecord<T> rec;
        rec.epoch = epoch;
        rec.loss = loss_sum / static_cast<double>(data.size());
        rec.accuracy = static_cast<double>(hits) / static_cast<double>(data.size());
        if (keep_snapshots) rec.snapshot.assign(model.parameters().begin(), model.parameters().end());
        if (on_epoch) on_epoch(model, rec);
        log.epochs.push_back(std::move(rec));
    }
    return log;
}

template <class T>
textio::Document to_document(const VictimModel<T>& m) {
    textio::Document doc;
    doc.add("format", "cib-checkpoint 1");
    doc.add("architecture", to_string(m.architecture()));
    doc.add("input", std::to_string(m.input_shape().channels) + " " + std::to_string(m.input_shape().height) + " " +
                         std::to_string(m.input_shape().width));
    doc.add("num_classes", std::to_string(m.num_classes()));
    doc.add("seed", std::to_string(m.seed()));
    doc.add("scalar", std::is_same_v<T, float> ? "float32" : "float64");
    doc.add("parameter_count", std::to_string(m.parameter_count()));
    doc.add_reals("parameters", m.parameters().begin(), m.parameters().end());
    return doc;
}

template <class T>
VictimModel<T> model_from_document(const textio::Document& doc) {
    const std::string want = std::is_same_v<T, float> ? "float32" : "float64";
    if (doc.get("scalar") != want) throw DataError("checkpoint scalar type is " + doc.get("scalar") + ", expected " + want);
    const auto dims = textio::Document::split_reals<double>(doc.get("input"));
    if (dims.size() != 3) throw DataError("checkpoint input shape must have 3 dimensions");
    Shape input{static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]), static_cast<std::size_t>(dims[2])};
    VictimModel<T> m(parse_architecture(doc.get("architecture")), input, doc.get_integer<std::size_t>("num_classes"),
                     doc.get_integer<std::uint64_t>("seed"));
    auto params = doc.get_reals<T>("parameters");
    if (params.size() != m.parameter_count() || params.size() != doc.get_integer<std::size_t>("parameter_count"))
        throw DataError("checkpoint parameter count does not match architecture");
    m.set_parameters(std::move(params));
    return m;
}

}  // namespace cib

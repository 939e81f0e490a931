#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cib/error.hpp"
#include "cib/image.hpp"
#include "cib/textio.hpp"

namespace cib {

enum class Split { train, test };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

struct LabeledSample {
    ImageView<float> image;
    std::size_t label;
};

/// Immutable, index-addressable collection of equally shaped images.
/// Pixels live in one contiguous float buffer; labels are 0-based.
class Dataset {
public:
    Dataset(Shape shape, std::size_t num_classes, Split split, std::vector<float> pixels,
            std::vector<std::uint8_t> labels)
        : shape_(shape), num_classes_(num_classes), split_(split), pixels_(std::move(pixels)),
          labels_(std::move(labels)) {
        require(!labels_.empty(), "dataset must not be empty");
        require(shape_.size() > 0, "dataset image shape must be non-empty");
        require(pixels_.size() == labels_.size() * shape_.size(),
                "dataset pixel buffer does not match sample count");
        for (auto y : labels_)
            require(y < num_classes_, "label " + std::to_string(y) + " out of range");
        for (float p : pixels_)
            require(std::isfinite(p), "dataset contains non-finite pixel");
    }

    std::size_t size() const { return labels_.size(); }
    const Shape& shape() const { return shape_; }
    std::size_t num_classes() const { return num_classes_; }
    Split split() const { return split_; }

    ImageView<float> image(std::size_t i) const {
        return ImageView<float>(shape_, std::span<const float>(pixels_).subspan(i * shape_.size(), shape_.size()));
    }
    std::size_t label(std::size_t i) const { return labels_[i]; }
    LabeledSample operator[](std::size_t i) const { return {image(i), label(i)}; }

    std::span<const float> pixels() const { return pixels_; }
    std::span<const std::uint8_t> labels() const { return labels_; }

    /// Same images, replaced labels.
    Dataset with_labels(std::vector<std::uint8_t> labels) const {
        require(labels.size() == size(), "with_labels: label count mismatch");
        return Dataset(shape_, num_classes_, split_, pixels_, std::move(labels));
    }

    Dataset subset(std::span<const std::size_t> indices) const {
        std::vector<float> px;
        std::vector<std::uint8_t> ys;
        px.reserve(indices.size() * shape_.size());
        ys.reserve(indices.size());
        for (std::size_t i : indices) {
            require(i < size(), "subset index out of range");
            auto v = image(i).pixels();
            px.insert(px.end(), v.begin(), v.end());
            ys.push_back(labels_[i]);
        }
        return Dataset(shape_, num_classes_, split_, std::move(px), std::move(ys));
    }

    Dataset head(std::size_t n) const {
        std::vector<std::size_t> idx(std::min(n, size()));
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        return subset(idx);
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;

private:
    Shape shape_;
    std::size_t num_classes_;
    Split split_;
    std::vector<float> pixels_;
    std::vector<std::uint8_t> labels_;
};

struct NormalizationStats {
    std::vector<double> mean;
    std::vector<double> stddev;

    /// Stable hash of the exact statistics; embedded in every artifact so that
    /// triggers are never applied under a different normalization.
    std::string fingerprint() const {
        std::string s;
        for (std::size_t c = 0; c < mean.size(); ++c)
            s += textio::format_real(mean[c]) + "/" + textio::format_real(stddev[c]) + ";";
        return textio::hex64(textio::fnv1a(s));
    }
    friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

inline constexpr double kVarianceGuard = 1e-8;

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t offset,
                               const std::string& path) {
    if (offset + 4 > buf.size())
        throw DataError(path + ": truncated header at byte offset " + std::to_string(offset));
    return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
           (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

inline void check_magic(std::uint32_t got, std::uint32_t want, const std::string& path) {
    if (got != want) {
        throw DataError(path + ": IDX magic mismatch (got 0x" + textio::hex64(got).substr(8) +
                        ", expected 0x" + textio::hex64(want).substr(8) + ")");
    }
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr std::size_t kCifarRecordBytes = 3073;

/// MNIST IDX pair (uncompressed). Pixels are scaled to [0,1] by 1/255.
inline Dataset load_mnist(const std::string& images_path, const std::string& labels_path,
                          Split split = Split::train) {
    const auto img = detail::read_file(images_path);
    const auto lab = detail::read_file(labels_path);

    detail::check_magic(detail::read_be32(img, 0, images_path), kIdxImageMagic, images_path);
    detail::check_magic(detail::read_be32(lab, 0, labels_path), kIdxLabelMagic, labels_path);

    const std::size_t count = detail::read_be32(img, 4, images_path);
    const std::size_t rows = detail::read_be32(img, 8, images_path);
    const std::size_t cols = detail::read_be32(img, 12, images_path);
    const std::size_t label_count = detail::read_be32(lab, 4, labels_path);
    if (count != label_count) {
        throw DataError("record count mismatch: " + images_path + " has " + std::to_string(count) +
                        " images, " + labels_path + " has " + std::to_string(label_count) + " labels");
    }
    if (count == 0 || rows == 0 || cols == 0) throw DataError(images_path + ": empty IDX image file");

    const std::size_t image_bytes = rows * cols;
    const std::size_t img_header = 16;
    const std::size_t lab_header = 8;
    if (img.size() < img_header + count * image_bytes) {
        const std::size_t record = (img.size() - img_header) / image_bytes;
        throw DataError(images_path + ": truncated in record " + std::to_string(record) +
                        " at byte offset " + std::to_string(img.size()));
    }
    if (lab.size() < lab_header + count) {
        throw DataError(labels_path + ": truncated at byte offset " + std::to_string(lab.size()));
    }

    std::vector<float> pixels(count * image_bytes);
    for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = img[img_header + i] / 255.0f;
    std::vector<std::uint8_t> labels(lab.begin() + lab_header, lab.begin() + lab_header + count);
    for (std::size_t i = 0; i < count; ++i) {
        if (labels[i] >= 10)
            throw DataError(labels_path + ": invalid label " + std::to_string(labels[i]) +
                            " at byte offset " + std::to_string(lab_header + i));
    }
    return Dataset(Shape{1, rows, cols}, 10, split, std::move(pixels), std::move(labels));
}

/// CIFAR-10 binary batches: 3073-byte records, label byte then R, G, B planes of 32x32.
inline Dataset load_cifar10(std::span<const std::string> batch_paths, Split split = Split::train) {
    require(!batch_paths.empty(), "load_cifar10: no batch files given");
    constexpr Shape shape{3, 32, 32};
    std::vector<float> pixels;
    std::vector<std::uint8_t> labels;
    for (const auto& path : batch_paths) {
        const auto buf = detail::read_file(path);
        if (buf.empty() || buf.size() % kCifarRecordBytes != 0) {
            throw DataError(path + ": size " + std::to_string(buf.size()) +
                            " is not a positive multiple of " + std::to_string(kCifarRecordBytes));
        }
        const std::size_t records = buf.size() / kCifarRecordBytes;
        pixels.reserve(pixels.size() + records * shape.size());
        for (std::size_t r = 0; r < records; ++r) {
            const std::size_t off = r * kCifarRecordBytes;
            if (buf[off] >= 10) {
                throw DataError(path + ": invalid label " + std::to_string(buf[off]) + " in record " +
                                std::to_string(r) + " (byte offset " + std::to_string(off) + ")");
            }
            labels.push_back(buf[off]);
            for (std::size_t i = 1; i < kCifarRecordBytes; ++i) pixels.push_back(buf[off + i] / 255.0f);
        }
    }
    return Dataset(shape, 10, split, std::move(pixels), std::move(labels));
}

/// Per-channel mean and population standard deviation in raw units.
inline NormalizationStats compute_stats(const Dataset& data) {
    const Shape& s = data.shape();
    NormalizationStats stats{std::vector<double>(s.channels, 0.0), std::vector<double>(s.channels, 0.0)};
    const double n = static_cast<double>(data.size() * s.plane());
    for (std::size_t c = 0; c < s.channels; ++c) {
        double sum = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            auto px = data.image(i).pixels().subspan(c * s.plane(), s.plane());
            for (float v : px) sum += v;
        }
        const double mean = sum / n;
        double ss = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            auto px = data.image(i).pixels().subspan(c * s.plane(), s.plane());
            for (float v : px) ss += (v - mean) * (v - mean);
        }
        double sd = std::sqrt(ss / n);
        if (!(sd > kVarianceGuard)) {
            warn("channel " + std::to_string(c) + " has zero variance; using guard " +
                 textio::format_real(kVarianceGuard));
            sd = kVarianceGuard;
        }
        stats.mean[c] = mean;
        stats.stddev[c] = sd;
    }
    return stats;
}

/// Applies (x - mean_c) / std_c. Without stats, they are computed from `data`
/// (training split); with stats, they are reused (test split).
inline std::pair<Dataset, NormalizationStats> normalize(const Dataset& data,
                                                        const NormalizationStats* stats = nullptr) {
    const NormalizationStats st = stats ? *stats : compute_stats(data);
    const Shape& s = data.shape();
    require(st.mean.size() == s.channels && st.stddev.size() == s.channels,
            "normalization stats channel count mismatch");
    for (double sd : st.stddev) require(sd > 0.0, "normalization stddev must be positive");
    std::vector<float> px(data.pixels().begin(), data.pixels().end());
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t c = 0; c < s.channels; ++c) {
            float* p = px.data() + i * s.size() + c * s.plane();
            for (std::size_t k = 0; k < s.plane(); ++k)
                p[k] = static_cast<float>((p[k] - st.mean[c]) / st.stddev[c]);
        }
    }
    std::vector<std::uint8_t> labels(data.labels().begin(), data.labels().end());
    return {Dataset(s, data.num_classes(), data.split(), std::move(px), std::move(labels)), st};
}

inline Dataset denormalize(const Dataset& data, const NormalizationStats& st) {
    const Shape& s = data.shape();
    std::vector<float> px(data.pixels().begin(), data.pixels().end());
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t c = 0; c < s.channels; ++c) {
            float* p = px.data() + i * s.size() + c * s.plane();
            for (std::size_t k = 0; k < s.plane(); ++k)
                p[k] = static_cast<float>(p[k] * st.stddev[c] + st.mean[c]);
        }
    }
    std::vector<std::uint8_t> labels(data.labels().begin(), data.labels().end());
    return Dataset(s, data.num_classes(), data.split(), std::move(px), std::move(labels));
}

/// i.i.d. N(mean, stddev^2) pixels with uniformly random labels.
inline Dataset synthetic_gaussian(Shape shape, std::size_t count, double mean, double stddev,
                                  std::uint64_t seed, std::size_t num_classes = 10,
                                  Split split = Split::train) {
    require(count > 0, "synthetic_gaussian: count must be positive");
    require(stddev > 0.0, "synthetic_gaussian: stddev must be positive");
    require(num_classes > 0 && num_classes <= 256, "synthetic_gaussian: bad class count");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> pixel(mean, stddev);
    std::uniform_int_distribution<int> label(0, static_cast<int>(num_classes) - 1);
    std::vector<float> px(count * shape.size());
    std::vector<std::uint8_t> ys(count);
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t k = 0; k < shape.size(); ++k) px[i * shape.size() + k] = static_cast<float>(pixel(rng));
        ys[i] = static_cast<std::uint8_t>(label(rng));
    }
    return Dataset(shape, num_classes, split, std::move(px), std::move(ys));
}

}  // namespace cib

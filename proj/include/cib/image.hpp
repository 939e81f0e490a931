#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cib/error.hpp"

namespace cib {

/// Channel-planar image geometry. Pixels are laid out as [channel][row][column].
struct Shape {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;

    constexpr std::size_t plane() const { return height * width; }
    constexpr std::size_t size() const { return channels * height * width; }
    friend constexpr bool operator==(const Shape&, const Shape&) = default;

    std::string str() const {
        return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
    }
};

template <class T>
class ImageView {
public:
    ImageView() = default;
    ImageView(Shape shape, std::span<const T> pixels) : shape_(shape), pixels_(pixels) {
        require(pixels.size() == shape.size(), "image buffer does not match shape " + shape.str());
    }

    const Shape& shape() const { return shape_; }
    std::span<const T> pixels() const { return pixels_; }
    const T& operator()(std::size_t c, std::size_t row, std::size_t col) const {
        return pixels_[c * shape_.plane() + row * shape_.width + col];
    }

private:
    Shape shape_{};
    std::span<const T> pixels_{};
};

/// Owning image. Datasets keep float storage; triggered images use double so the
/// perturbation norm is exact to well below the budget tolerance.
template <class T>
class Image {
public:
    using value_type = T;

    Image() = default;
    explicit Image(Shape shape) : shape_(shape), pixels_(shape.size(), T{0}) {}
    Image(Shape shape, std::vector<T> pixels) : shape_(shape), pixels_(std::move(pixels)) {
        require(pixels_.size() == shape.size(), "image buffer does not match shape " + shape.str());
    }
    template <class U>
    explicit Image(ImageView<U> view)
        : shape_(view.shape()), pixels_(view.pixels().begin(), view.pixels().end()) {}

    const Shape& shape() const { return shape_; }
    std::span<const T> pixels() const { return pixels_; }
    std::span<T> pixels() { return pixels_; }
    T& operator()(std::size_t c, std::size_t row, std::size_t col) {
        return pixels_[c * shape_.plane() + row * shape_.width + col];
    }
    const T& operator()(std::size_t c, std::size_t row, std::size_t col) const {
        return pixels_[c * shape_.plane() + row * shape_.width + col];
    }
    ImageView<T> view() const { return ImageView<T>(shape_, pixels_); }
    operator ImageView<T>() const { return view(); }

    friend bool operator==(const Image&, const Image&) = default;

private:
    Shape shape_{};
    std::vector<T> pixels_;
};

/// Read-only strided view onto the bottom-right SxS square of every channel.
/// Element (c, r, k) aliases image pixel (c, H-S+r, W-S+k); nothing is copied.
template <class T>
class PatchView {
public:
    PatchView(ImageView<T> image, std::size_t side) : image_(image), side_(side) {
        const Shape& s = image.shape();
        require(side > 0, "patch side must be positive");
        require(side <= s.height && side <= s.width,
                "patch side " + std::to_string(side) + " exceeds image " + s.str());
        row0_ = s.height - side;
        col0_ = s.width - side;
    }

    std::size_t side() const { return side_; }
    std::size_t channels() const { return image_.shape().channels; }
    const T& operator()(std::size_t c, std::size_t r, std::size_t k) const {
        return image_(c, row0_ + r, col0_ + k);
    }

private:
    ImageView<T> image_;
    std::size_t side_;
    std::size_t row0_ = 0;
    std::size_t col0_ = 0;
};

template <class T>
PatchView<T> bottom_right_patch(ImageView<T> image, std::size_t side) {
    return PatchView<T>(image, side);
}

template <class T>
PatchView<T> bottom_right_patch(const Image<T>& image, std::size_t side) {
    return PatchView<T>(image.view(), side);
}

template <class A, class B>
double l2_distance(ImageView<A> a, ImageView<B> b) {
    require(a.shape() == b.shape(), "l2_distance: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.pixels().size(); ++i) {
        const double d = static_cast<double>(a.pixels()[i]) - static_cast<double>(b.pixels()[i]);
        acc += d * d;
    }
    return std::sqrt(acc);
}

}  // namespace cib

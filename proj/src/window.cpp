#include "rgan/window.hpp"

#include <algorithm>
#include <cmath>

#include "rgan/error.hpp"

namespace rgan {

namespace {

void check_window(const HuWindow& w) {
    if (w.lo >= w.hi) {
        throw ConfigError("degenerate HU window " + to_string(w) + ": lo must be below hi");
    }
}

void normalize_into(const CtImage& img, const HuWindow& w, float* dst) {
    const double span = w.hi - w.lo;
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        const int v = std::clamp(img.pixels[i], w.lo, w.hi);
        dst[i] = static_cast<float>((v - w.lo) / span);
    }
}

}  // namespace

std::string to_string(const HuWindow& w) {
    return "[" + std::to_string(w.lo) + ", " + std::to_string(w.hi) + "]";
}

Tensor clip_normalize(const CtImage& img, const HuWindow& w) {
    const CtImage* one[] = {&img};
    return clip_normalize_batch(one, w);
}

Tensor clip_normalize_batch(std::span<const CtImage* const> images, const HuWindow& w) {
    check_window(w);
    if (images.empty()) throw ConfigError("clip_normalize_batch: no images");
    const int width = images.front()->width;
    const int height = images.front()->height;
    const std::size_t plane = static_cast<std::size_t>(width) * height;
    std::vector<float> values(plane * images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i]->width != width || images[i]->height != height) {
            throw ConfigError("clip_normalize_batch: images differ in size");
        }
        normalize_into(*images[i], w, values.data() + i * plane);
    }
    return Tensor::from({static_cast<int>(images.size()), 1, height, width}, std::move(values));
}

CtImage denormalize(const Tensor& t, const HuWindow& w, const CtImage& like, int index) {
    check_window(w);
    if (t.shape().size() != 4 || t.dim(1) != 1 || index < 0 || index >= t.dim(0)) {
        throw ConfigError("denormalize expects an N×1×H×W tensor, got " + shape_str(t.shape()));
    }
    const int height = t.dim(2), width = t.dim(3);
    const std::size_t plane = static_cast<std::size_t>(width) * height;
    const auto values = t.data().subspan(static_cast<std::size_t>(index) * plane, plane);
    CtImage out = like;
    out.width = width;
    out.height = height;
    out.pixels.resize(plane);
    constexpr double kTolerance = 1e-6;
    for (std::size_t i = 0; i < plane; ++i) {
        const double v = values[i];
        if (v < -kTolerance || v > 1.0 + kTolerance) {
            throw ConfigError("denormalize: value " + std::to_string(v) + " outside [0, 1]");
        }
        const double hu = std::nearbyint(w.lo + std::clamp(v, 0.0, 1.0) * (w.hi - w.lo));
        out.pixels[i] = static_cast<int>(hu);
    }
    return out;
}

}  // namespace rgan

#pragma once

#include <span>
#include <string>

#include "rgan/phantom.hpp"
#include "rgan/tensor.hpp"

namespace rgan {

/// Inclusive HU interval used for clipping and min-max normalization.
struct HuWindow {
    int lo = kPhantomHuMin;
    int hi = kPhantomHuMax;

    int width() const { return hi - lo; }
    friend bool operator==(const HuWindow&, const HuWindow&) = default;
};

inline constexpr HuWindow kFullWindow{kPhantomHuMin, kPhantomHuMax};

std::string to_string(const HuWindow& w);

/// clamp(HU, lo, hi) mapped linearly to [0, 1]; result is 1×1×H×W.
Tensor clip_normalize(const CtImage& img, const HuWindow& w);

/// Stacks clip_normalize of several images into N×1×H×W.
Tensor clip_normalize_batch(std::span<const CtImage* const> images, const HuWindow& w);

/// Inverse of clip_normalize: HU = round(lo + t·(hi − lo)). Uses sample `index` of an N×1×H×W tensor.
/// Metadata is copied from `like`.
CtImage denormalize(const Tensor& t, const HuWindow& w, const CtImage& like, int index = 0);

}  // namespace rgan

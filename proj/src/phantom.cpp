#include "rgan/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "rgan/error.hpp"
#include "rgan/rng.hpp"

namespace rgan {

namespace {

constexpr double kAirHu = -1000.0;
constexpr int kMinRoiPixels = 64;
constexpr int kMaxAttempts = 64;

struct Ellipse {
    double cy, cx, ry, rx;

    bool contains(int row, int col) const {
        const double dy = (row + 0.5 - cy) / ry;
        const double dx = (col + 0.5 - cx) / rx;
        return dy * dy + dx * dx <= 1.0;
    }
};

double lerp(double lo, double hi, double t) { return lo + (hi - lo) * t; }

/// Zero-mean, unit-variance band-limited noise field.
std::vector<double> smooth_noise(CounterRng& rng, int size, double sigma) {
    std::vector<double> field(static_cast<std::size_t>(size) * size);
    for (double& v : field) v = rng.normal();
    field = gaussian_blur(field, size, size, sigma);
    double mean = 0.0;
    for (double v : field) mean += v;
    mean /= static_cast<double>(field.size());
    double var = 0.0;
    for (double v : field) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(field.size()));
    for (double& v : field) v = sd > 0.0 ? (v - mean) / sd : 0.0;
    return field;
}

std::vector<double> draw_phantom(CounterRng& rng, int size) {
    const double s = size;
    std::vector<double> hu(static_cast<std::size_t>(size) * size, kAirHu);
    auto paint = [&](const Ellipse& e, auto&& value_at) {
        for (int r = 0; r < size; ++r) {
            for (int c = 0; c < size; ++c) {
                if (e.contains(r, c)) hu[static_cast<std::size_t>(r) * size + c] = value_at(r, c);
            }
        }
    };
    const auto tissue_texture = smooth_noise(rng, size, 2.0);
    const auto lung_texture = smooth_noise(rng, size, 1.2);
    const auto bone_texture = smooth_noise(rng, size, 1.5);
    auto tex = [size](const std::vector<double>& field, int r, int c) {
        return field[static_cast<std::size_t>(r) * size + c];
    };

    // body: the first soft-tissue ellipse
    const Ellipse body{s * lerp(0.47, 0.53, rng.uniform()), s * lerp(0.47, 0.53, rng.uniform()),
                       s * lerp(0.38, 0.44, rng.uniform()), s * lerp(0.42, 0.47, rng.uniform())};
    const double body_hu = lerp(20.0, 60.0, rng.uniform());
    paint(body, [&](int r, int c) { return std::clamp(body_hu + 15.0 * tex(tissue_texture, r, c), -90.0, 240.0); });

    // lung-like region: one or two lobes with band-limited texture in [-800, -300]
    const int lobes = 1 + static_cast<int>(rng.below(2));
    const double lung_mean = lerp(-620.0, -480.0, rng.uniform());
    for (int i = 0; i < lobes; ++i) {
        const double side = lobes == 1 ? 0.0 : (i == 0 ? -1.0 : 1.0);
        const Ellipse lobe{body.cy - s * lerp(0.02, 0.06, rng.uniform()),
                           body.cx + side * s * lerp(0.16, 0.2, rng.uniform()),
                           s * lerp(0.17, 0.22, rng.uniform()),
                           s * (lobes == 1 ? lerp(0.2, 0.26, rng.uniform()) : lerp(0.11, 0.14, rng.uniform()))};
        paint(lobe, [&](int r, int c) { return std::clamp(lung_mean + 110.0 * tex(lung_texture, r, c), -790.0, -310.0); });
    }

    // 0-2 further soft-tissue ellipses (nodules, vessels)
    const int extra = static_cast<int>(rng.below(3));
    for (int i = 0; i < extra; ++i) {
        const Ellipse blob{body.cy + s * lerp(-0.22, 0.1, rng.uniform()), body.cx + s * lerp(-0.25, 0.25, rng.uniform()),
                           s * lerp(0.04, 0.08, rng.uniform()), s * lerp(0.04, 0.08, rng.uniform())};
        const double blob_hu = lerp(-60.0, 180.0, rng.uniform());
        paint(blob, [&](int r, int c) { return std::clamp(blob_hu + 10.0 * tex(tissue_texture, r, c), -95.0, 245.0); });
    }

    // 1-2 bone ellipses: a spine-like one below the lungs, optionally a sternum-like one above
    const int bones = 1 + static_cast<int>(rng.below(2));
    for (int i = 0; i < bones; ++i) {
        const double dir = i == 0 ? 1.0 : -1.0;
        const double radius = std::max(s * lerp(0.1, 0.13, rng.uniform()), 5.0);
        const Ellipse bone{body.cy + dir * (body.ry - radius - 1.0), body.cx + s * lerp(-0.04, 0.04, rng.uniform()),
                           radius, radius * lerp(1.0, 1.4, rng.uniform())};
        const double bone_hu = lerp(450.0, 650.0, rng.uniform());
        paint(bone, [&](int r, int c) { return std::clamp(bone_hu + 60.0 * tex(bone_texture, r, c), 310.0, 790.0); });
    }
    return hu;
}

bool roi_ranges_populated(const std::vector<int>& pixels) {
    constexpr std::array<std::pair<int, int>, 3> ranges{{{-800, -300}, {-100, 250}, {300, 800}}};
    for (auto [lo, hi] : ranges) {
        const auto count = std::count_if(pixels.begin(), pixels.end(), [lo, hi](int v) { return v >= lo && v <= hi; });
        if (count < kMinRoiPixels) return false;
    }
    return true;
}

std::vector<int> round_clamp(const std::vector<double>& values) {
    std::vector<int> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = std::clamp(std::nearbyint(values[i]), static_cast<double>(kPhantomHuMin),
                                    static_cast<double>(kPhantomHuMax));
        out[i] = static_cast<int>(v);
    }
    return out;
}

void add_noise(std::vector<double>& values, std::uint64_t key, double sigma) {
    CounterRng rng(key);
    for (double& v : values) v += sigma * rng.normal();
}

}  // namespace

std::string_view kernel_name(KernelTag tag) {
    switch (tag) {
        case KernelTag::kBL64: return "BL64";
        case KernelTag::kBL57: return "BL57";
        case KernelTag::kBR40: return "BR40";
        case KernelTag::kRaw: return "RAW";
        case KernelTag::kSynBL64: return "SYN_BL64";
    }
    return "RAW";
}

KernelTag parse_kernel(std::string_view name) {
    std::string upper(name);
    std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char ch) { return std::toupper(ch); });
    for (KernelTag tag : {KernelTag::kBL64, KernelTag::kBL57, KernelTag::kBR40, KernelTag::kRaw, KernelTag::kSynBL64}) {
        if (upper == kernel_name(tag)) return tag;
    }
    throw ConfigError("unknown kernel tag '" + std::string(name) + "'");
}

std::vector<double> gaussian_blur(const std::vector<double>& values, int width, int height, double sigma) {
    if (sigma <= 0.0) return values;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> taps(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        taps[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        total += taps[i + radius];
    }
    for (double& t : taps) t /= total;

    std::vector<double> tmp(values.size());
    std::vector<double> out(values.size());
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int cc = std::clamp(c + i, 0, width - 1);
                acc += taps[i + radius] * values[static_cast<std::size_t>(r) * width + cc];
            }
            tmp[static_cast<std::size_t>(r) * width + c] = acc;
        }
    }
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int rr = std::clamp(r + i, 0, height - 1);
                acc += taps[i + radius] * tmp[static_cast<std::size_t>(rr) * width + c];
            }
            out[static_cast<std::size_t>(r) * width + c] = acc;
        }
    }
    return out;
}

CtImage generate_phantom(std::uint64_t seed, int size) {
    if (size < 32 || size % 2 != 0) {
        throw ConfigError("phantom size must be an even number >= 32, got " + std::to_string(size));
    }
    CtImage img;
    img.width = size;
    img.height = size;
    img.kernel = KernelTag::kRaw;
    img.seed = seed;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        CounterRng rng(derive_seed(seed, "phantom", static_cast<std::uint64_t>(attempt)));
        img.pixels = round_clamp(draw_phantom(rng, size));
        if (roi_ranges_populated(img.pixels)) return img;
    }
    throw ConfigError("could not populate all ROI ranges for seed " + std::to_string(seed));
}

CtImage apply_kernel(const CtImage& base, KernelTag kernel, std::uint64_t noise_seed, const KernelSimParams& params) {
    if (base.kernel != KernelTag::kRaw) {
        throw ConfigError("apply_kernel expects a RAW image, got " + std::string(kernel_name(base.kernel)));
    }
    std::vector<double> values(base.pixels.begin(), base.pixels.end());
    const int w = base.width, h = base.height;
    auto standard = [&](std::vector<double> v) {
        v = gaussian_blur(v, w, h, params.bl64_blur);
        add_noise(v, derive_seed(noise_seed, "bl64_noise"), params.bl64_noise);
        return v;
    };
    switch (kernel) {
        case KernelTag::kBL64:
            values = standard(std::move(values));
            break;
        case KernelTag::kBR40:
            values = gaussian_blur(values, w, h, params.br40_blur);
            add_noise(values, derive_seed(noise_seed, "br40_noise"), params.br40_noise);
            break;
        case KernelTag::kBL57: {
            values = standard(std::move(values));
            const auto low = gaussian_blur(values, w, h, params.bl57_unsharp_sigma);
            for (std::size_t i = 0; i < values.size(); ++i) {
                values[i] += params.bl57_unsharp_amount * (values[i] - low[i]);
            }
            add_noise(values, derive_seed(noise_seed, "bl57_noise"), params.bl57_noise);
            break;
        }
        default:
            throw ConfigError("apply_kernel: cannot simulate kernel " + std::string(kernel_name(kernel)));
    }
    CtImage out = base;
    out.kernel = kernel;
    out.pixels = round_clamp(values);
    return out;
}

}  // namespace rgan

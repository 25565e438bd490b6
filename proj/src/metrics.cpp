#include <algorithm>
#include <cmath>
#include <limits>

#include "rgan/error.hpp"
#include "rgan/radiomics.hpp"

namespace rgan {

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimRange = 2024.0;

void check_same_size(const CtImage& a, const CtImage& b, const char* what) {
    if (a.width != b.width || a.height != b.height || a.pixels.size() != b.pixels.size()) {
        throw ConfigError(std::string(what) + ": image sizes differ (" + std::to_string(a.width) + "x" +
                          std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                          std::to_string(b.height) + ")");
    }
}

std::array<double, kSsimWindow * kSsimWindow> ssim_weights() {
    std::array<double, kSsimWindow> g{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += g[i];
    }
    std::array<double, kSsimWindow * kSsimWindow> w{};
    for (int r = 0; r < kSsimWindow; ++r) {
        for (int c = 0; c < kSsimWindow; ++c) w[r * kSsimWindow + c] = g[r] * g[c] / (sum * sum);
    }
    return w;
}

}  // namespace

double ccc(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw ConfigError("ccc: sequences differ in length");
    if (xs.size() < 2) throw ConfigError("ccc: at least two values are required");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double vx = 0.0, vy = 0.0, cov = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        vx += (xs[i] - mx) * (xs[i] - mx);
        vy += (ys[i] - my) * (ys[i] - my);
        cov += (xs[i] - mx) * (ys[i] - my);
    }
    vx /= n;
    vy /= n;
    cov /= n;
    const double denom = vx + vy + (mx - my) * (mx - my);
    if (denom == 0.0) return 1.0;
    return std::clamp(2.0 * cov / denom, -1.0, 1.0);
}

double psnr(const CtImage& a, const CtImage& b, double peak) {
    check_same_size(a, b, "psnr");
    if (a.pixels.empty()) throw ConfigError("psnr: empty images");
    double sse = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = a.pixels[i] - b.pixels[i];
        sse += d * d;
    }
    if (sse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / (sse / static_cast<double>(a.pixels.size())));
}

double ssim(const CtImage& a, const CtImage& b) {
    check_same_size(a, b, "ssim");
    if (a.width < kSsimWindow || a.height < kSsimWindow) {
        throw ConfigError("ssim: images must be at least 11x11");
    }
    static const auto weights = ssim_weights();
    const double c1 = (0.01 * kSsimRange) * (0.01 * kSsimRange);
    const double c2 = (0.03 * kSsimRange) * (0.03 * kSsimRange);
    const int w = a.width;
    double total = 0.0;
    std::size_t windows = 0;
    for (int r0 = 0; r0 + kSsimWindow <= a.height; ++r0) {
        for (int c0 = 0; c0 + kSsimWindow <= w; ++c0) {
            double ma = 0.0, mb = 0.0;
            for (int r = 0; r < kSsimWindow; ++r) {
                for (int c = 0; c < kSsimWindow; ++c) {
                    const std::size_t idx = static_cast<std::size_t>(r0 + r) * w + c0 + c;
                    const double wt = weights[r * kSsimWindow + c];
                    ma += wt * (a.pixels[idx] + kHuOffset);
                    mb += wt * (b.pixels[idx] + kHuOffset);
                }
            }
            double va = 0.0, vb = 0.0, cov = 0.0;
            for (int r = 0; r < kSsimWindow; ++r) {
                for (int c = 0; c < kSsimWindow; ++c) {
                    const std::size_t idx = static_cast<std::size_t>(r0 + r) * w + c0 + c;
                    const double wt = weights[r * kSsimWindow + c];
                    const double da = a.pixels[idx] + kHuOffset - ma;
                    const double db = b.pixels[idx] + kHuOffset - mb;
                    va += wt * da * da;
                    vb += wt * db * db;
                    cov += wt * (da * db);
                }
            }
            total += (2.0 * (ma * mb) + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++windows;
        }
    }
    return total / static_cast<double>(windows);
}

}  // namespace rgan

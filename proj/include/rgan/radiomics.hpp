#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rgan/phantom.hpp"

namespace rgan {

/// Inclusive HU interval selecting an ROI on the standard image.
struct HuRange {
    int lo = 0;
    int hi = 0;

    friend bool operator==(const HuRange&, const HuRange&) = default;
};

inline constexpr std::array<HuRange, 3> kRoiRanges{{{-800, -300}, {-100, 250}, {300, 800}}};
inline constexpr std::size_t kMinRoiPixels = 16;
inline constexpr double kReproducibleCcc = 0.85;

struct RoiMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> inside;
    HuRange range;
    std::uint64_t source = 0;  // phantom id of the standard image

    std::size_t count() const;
    bool empty() const { return count() == 0; }
    bool at(int row, int col) const { return inside[static_cast<std::size_t>(row) * width + col] != 0; }
};

/// Pixels of `standard` with HU in [range.lo, range.hi].
RoiMask roi_mask(const CtImage& standard, HuRange range);
RoiMask whole_image_mask(const CtImage& img);

struct FeatureConfig {
    int hu_min = kPhantomHuMin;
    int hu_max = kPhantomHuMax;
    int histogram_bins = 256;
    int glcm_levels = 32;
};

inline constexpr std::size_t kFirstOrderFeatures = 18;
inline constexpr std::size_t kGlcmFeatures = 9;
inline constexpr std::size_t kGlcmOffsets = 8;
inline constexpr std::size_t kFeatureCount = kFirstOrderFeatures + kGlcmFeatures * kGlcmOffsets;

struct GlcmOffset {
    int dy;
    int dx;
};

/// (dy, dx) for distances {1, 2} × directions {0°, 90°, 135°, 45°}, in feature order.
std::array<GlcmOffset, kGlcmOffsets> glcm_offsets();

/// The fixed feature order; every FeatureVector uses these names.
const std::vector<std::string>& feature_names();

struct FeatureVector {
    std::vector<double> values;  // parallel to feature_names()

    double operator[](std::size_t i) const { return values[i]; }
    double get(const std::string& name) const;
};

/// Level index of a HU value on the GLCM grid: floor((v − hu_min)·levels / (hu_max − hu_min)), clamped.
int glcm_level(int hu, const FeatureConfig& cfg);

/// Symmetric co-occurrence probabilities (levels×levels, row-major) over pairs with both pixels in the mask.
/// All zeros when no pair lies inside the mask.
std::vector<double> glcm_matrix(const CtImage& img, const RoiMask& mask, GlcmOffset offset, const FeatureConfig& cfg);

/// Throws ConfigError when the mask has fewer than kMinRoiPixels pixels or does not match the image.
FeatureVector extract_features(const CtImage& img, const RoiMask& mask, const FeatureConfig& cfg = {});

// ---- agreement and quality metrics -------------------------------------------

/// Lin's concordance correlation coefficient with 1/n moments; 1 when both sides are the same constant.
double ccc(std::span<const double> xs, std::span<const double> ys);

inline constexpr double kPsnrPeak = 2024.0;

/// 10·log10(peak² / MSE) in dB; +infinity for identical images.
double psnr(const CtImage& a, const CtImage& b, double peak = kPsnrPeak);

/// Mean SSIM over all valid 11×11 Gaussian (σ = 1.5) windows, dynamic range 2024.
double ssim(const CtImage& a, const CtImage& b);

// ---- reproducibility report ----------------------------------------------------

inline constexpr std::size_t kMinReportPairs = 10;

struct CandidatePair {
    const CtImage* candidate;
    const CtImage* standard;
};

struct RangeResult {
    HuRange range;
    bool present = false;     // false when fewer than two pairs have a usable ROI
    std::size_t pairs_used = 0;
    std::vector<double> ccc;  // parallel to feature_names() when present
    int reproducible_count = 0;
};

struct ReproReport {
    std::vector<RangeResult> ranges;
    double mean_psnr = 0.0;
    double sd_psnr = 0.0;
    double mean_ssim = 0.0;
    double sd_ssim = 0.0;
};

ReproReport reproducibility_report(std::span<const CandidatePair> pairs, const FeatureConfig& cfg = {});

struct NamedReport {
    std::string condition;
    ReproReport report;
};

/// Per-feature CCC rows for every condition, a blank line, then one summary row per condition and range.
void write_report_csv(std::ostream& out, std::span<const NamedReport> reports);

}  // namespace rgan

#include <algorithm>
#include <cmath>

#include "rgan/error.hpp"
#include "rgan/radiomics.hpp"

namespace rgan {

namespace {

constexpr const char* kFirstOrderNames[kFirstOrderFeatures] = {
    "mean",   "variance", "std",    "skewness",     "excess_kurtosis", "minimum",
    "maximum", "range",   "median", "p10",          "p90",             "iqr",
    "energy", "rms",      "entropy_log2", "uniformity", "mean_abs_dev", "median_abs_dev"};

constexpr const char* kGlcmNames[kGlcmFeatures] = {"contrast",     "dissimilarity", "homogeneity",
                                                  "asm",          "entropy_log2",  "correlation",
                                                  "cluster_shade", "cluster_prominence", "max_probability"};

constexpr const char* kDirectionNames[4] = {"0deg", "90deg", "135deg", "45deg"};

/// Linear interpolation between order statistics at position p·(n − 1).
double percentile_sorted(const std::vector<double>& sorted, double p) {
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto below = static_cast<std::size_t>(std::floor(pos));
    const std::size_t above = std::min(below + 1, sorted.size() - 1);
    return sorted[below] + (pos - static_cast<double>(below)) * (sorted[above] - sorted[below]);
}

double median_sorted(const std::vector<double>& sorted) { return percentile_sorted(sorted, 0.5); }

double entropy_term(double p) { return p > 0.0 ? -p * std::log2(p) : 0.0; }

void first_order(const std::vector<double>& v, const FeatureConfig& cfg, double* out) {
    const double n = static_cast<double>(v.size());
    double sum = 0.0, energy = 0.0;
    for (double x : v) {
        sum += x;
        energy += x * x;
    }
    const double mean = sum / n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0, abs_dev = 0.0;
    for (double x : v) {
        const double d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
        abs_dev += std::abs(d);
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    const double sd = std::sqrt(m2);

    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    const double median = median_sorted(sorted);
    std::vector<double> deviations(sorted.size());
    for (std::size_t i = 0; i < sorted.size(); ++i) deviations[i] = std::abs(sorted[i] - median);
    std::sort(deviations.begin(), deviations.end());

    std::vector<std::size_t> hist(cfg.histogram_bins, 0);
    const double span = cfg.hu_max - cfg.hu_min;
    for (double x : v) {
        const auto bin = static_cast<long>(std::floor((x - cfg.hu_min) * cfg.histogram_bins / span));
        ++hist[std::clamp<long>(bin, 0, cfg.histogram_bins - 1)];
    }
    double entropy = 0.0, uniformity = 0.0;
    for (std::size_t c : hist) {
        const double p = static_cast<double>(c) / n;
        entropy += entropy_term(p);
        uniformity += p * p;
    }

    out[0] = mean;
    out[1] = m2;
    out[2] = sd;
    out[3] = m2 > 0.0 ? m3 / (m2 * sd) : 0.0;
    out[4] = m2 > 0.0 ? m4 / (m2 * m2) - 3.0 : 0.0;
    out[5] = sorted.front();
    out[6] = sorted.back();
    out[7] = sorted.back() - sorted.front();
    out[8] = median;
    out[9] = percentile_sorted(sorted, 0.10);
    out[10] = percentile_sorted(sorted, 0.90);
    out[11] = percentile_sorted(sorted, 0.75) - percentile_sorted(sorted, 0.25);
    out[12] = energy;
    out[13] = std::sqrt(energy / n);
    out[14] = entropy;
    out[15] = uniformity;
    out[16] = abs_dev / n;
    out[17] = median_sorted(deviations);
}

void glcm_features(const std::vector<double>& p, int levels, double* out) {
    double contrast = 0.0, dissimilarity = 0.0, homogeneity = 0.0, asm_ = 0.0, entropy = 0.0, max_p = 0.0;
    double total = 0.0, mu = 0.0;
    for (int i = 0; i < levels; ++i) {
        for (int j = 0; j < levels; ++j) {
            const double pij = p[static_cast<std::size_t>(i) * levels + j];
            const double d = i - j;
            contrast += d * d * pij;
            dissimilarity += std::abs(d) * pij;
            homogeneity += pij / (1.0 + d * d);
            asm_ += pij * pij;
            entropy += entropy_term(pij);
            max_p = std::max(max_p, pij);
            total += pij;
            mu += i * pij;
        }
    }
    // symmetric matrix: both marginals share the same mean and variance
    double var = 0.0, cov = 0.0, shade = 0.0, prominence = 0.0;
    for (int i = 0; i < levels; ++i) {
        for (int j = 0; j < levels; ++j) {
            const double pij = p[static_cast<std::size_t>(i) * levels + j];
            const double s = i + j - 2.0 * mu;
            var += (i - mu) * (i - mu) * pij;
            cov += (i - mu) * (j - mu) * pij;
            shade += s * s * s * pij;
            prominence += s * s * s * s * pij;
        }
    }
    if (total == 0.0) {
        std::fill(out, out + kGlcmFeatures, 0.0);
        return;
    }
    out[0] = contrast;
    out[1] = dissimilarity;
    out[2] = homogeneity;
    out[3] = asm_;
    out[4] = entropy;
    out[5] = var > 0.0 ? cov / var : 0.0;
    out[6] = shade;
    out[7] = prominence;
    out[8] = max_p;
}

void check_mask(const CtImage& img, const RoiMask& mask) {
    if (mask.width != img.width || mask.height != img.height || mask.inside.size() != img.pixels.size()) {
        throw ConfigError("ROI mask does not match the image size");
    }
}

}  // namespace

std::size_t RoiMask::count() const { return static_cast<std::size_t>(std::count(inside.begin(), inside.end(), 1)); }

RoiMask roi_mask(const CtImage& standard, HuRange range) {
    if (range.lo >= range.hi) throw ConfigError("ROI range needs lo < hi");
    RoiMask mask{standard.width, standard.height, std::vector<std::uint8_t>(standard.pixels.size()), range,
                 standard.phantom_id};
    for (std::size_t i = 0; i < standard.pixels.size(); ++i) {
        mask.inside[i] = standard.pixels[i] >= range.lo && standard.pixels[i] <= range.hi ? 1 : 0;
    }
    return mask;
}

RoiMask whole_image_mask(const CtImage& img) {
    return {img.width, img.height, std::vector<std::uint8_t>(img.pixels.size(), 1), {kHuStorageMin, kHuStorageMax},
            img.phantom_id};
}

std::array<GlcmOffset, kGlcmOffsets> glcm_offsets() {
    constexpr GlcmOffset unit[4] = {{0, 1}, {1, 0}, {1, 1}, {1, -1}};
    std::array<GlcmOffset, kGlcmOffsets> out{};
    for (int d = 1; d <= 2; ++d) {
        for (int k = 0; k < 4; ++k) out[(d - 1) * 4 + k] = {unit[k].dy * d, unit[k].dx * d};
    }
    return out;
}

const std::vector<std::string>& feature_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const char* n : kFirstOrderNames) out.push_back(std::string("firstorder_") + n);
        for (int d = 1; d <= 2; ++d) {
            for (const char* dir : kDirectionNames) {
                for (const char* n : kGlcmNames) {
                    out.push_back("glcm_d" + std::to_string(d) + "_" + dir + "_" + n);
                }
            }
        }
        return out;
    }();
    return names;
}

double FeatureVector::get(const std::string& name) const {
    const auto& names = feature_names();
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ConfigError("unknown feature '" + name + "'");
    return values[static_cast<std::size_t>(it - names.begin())];
}

int glcm_level(int hu, const FeatureConfig& cfg) {
    const long level = static_cast<long>(std::floor(static_cast<double>(hu - cfg.hu_min) * cfg.glcm_levels /
                                                    static_cast<double>(cfg.hu_max - cfg.hu_min)));
    return static_cast<int>(std::clamp<long>(level, 0, cfg.glcm_levels - 1));
}

std::vector<double> glcm_matrix(const CtImage& img, const RoiMask& mask, GlcmOffset offset, const FeatureConfig& cfg) {
    check_mask(img, mask);
    const int levels = cfg.glcm_levels;
    std::vector<int> quantized(img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) quantized[i] = glcm_level(img.pixels[i], cfg);

    std::vector<double> counts(static_cast<std::size_t>(levels) * levels, 0.0);
    double total = 0.0;
    for (int r = 0; r < img.height; ++r) {
        const int r2 = r + offset.dy;
        if (r2 < 0 || r2 >= img.height) continue;
        for (int c = 0; c < img.width; ++c) {
            const int c2 = c + offset.dx;
            if (c2 < 0 || c2 >= img.width || !mask.at(r, c) || !mask.at(r2, c2)) continue;
            const int a = quantized[static_cast<std::size_t>(r) * img.width + c];
            const int b = quantized[static_cast<std::size_t>(r2) * img.width + c2];
            counts[static_cast<std::size_t>(a) * levels + b] += 1.0;
            counts[static_cast<std::size_t>(b) * levels + a] += 1.0;
            total += 2.0;
        }
    }
    if (total > 0.0) {
        for (double& v : counts) v /= total;
    }
    return counts;
}

FeatureVector extract_features(const CtImage& img, const RoiMask& mask, const FeatureConfig& cfg) {
    check_mask(img, mask);
    if (cfg.hu_min >= cfg.hu_max || cfg.histogram_bins < 1 || cfg.glcm_levels < 2) {
        throw ConfigError("invalid feature configuration");
    }
    std::vector<double> masked;
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        if (mask.inside[i]) masked.push_back(img.pixels[i]);
    }
    if (masked.size() < kMinRoiPixels) {
        throw ConfigError("ROI has " + std::to_string(masked.size()) + " pixels; at least " +
                          std::to_string(kMinRoiPixels) + " are required");
    }
    FeatureVector fv;
    fv.values.assign(kFeatureCount, 0.0);
    first_order(masked, cfg, fv.values.data());
    const auto offsets = glcm_offsets();
    for (std::size_t k = 0; k < offsets.size(); ++k) {
        glcm_features(glcm_matrix(img, mask, offsets[k], cfg), cfg.glcm_levels,
                      fv.values.data() + kFirstOrderFeatures + k * kGlcmFeatures);
    }
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
        if (!std::isfinite(fv.values[i])) throw NumericError("feature " + feature_names()[i] + " is not finite");
    }
    return fv;
}

}  // namespace rgan

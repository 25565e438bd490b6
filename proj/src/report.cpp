#include <cmath>
#include <cstdio>
#include <ostream>

#include "rgan/error.hpp"
#include "rgan/radiomics.hpp"

namespace rgan {

namespace {

void mean_sd(const std::vector<double>& v, double& mean, double& sd) {
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
}

std::string fmt(double v) {
    if (std::isnan(v)) return "NA";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace

ReproReport reproducibility_report(std::span<const CandidatePair> pairs, const FeatureConfig& cfg) {
    if (pairs.size() < kMinReportPairs) {
        throw ConfigError("reproducibility report needs at least " + std::to_string(kMinReportPairs) +
                          " pairs, got " + std::to_string(pairs.size()));
    }
    ReproReport report;
    std::vector<double> psnrs, ssims;
    for (const CandidatePair& p : pairs) {
        psnrs.push_back(psnr(*p.candidate, *p.standard));
        ssims.push_back(ssim(*p.candidate, *p.standard));
    }
    mean_sd(psnrs, report.mean_psnr, report.sd_psnr);
    mean_sd(ssims, report.mean_ssim, report.sd_ssim);

    for (const HuRange& range : kRoiRanges) {
        RangeResult result;
        result.range = range;
        std::vector<std::vector<double>> xs(kFeatureCount), ys(kFeatureCount);
        for (const CandidatePair& p : pairs) {
            const RoiMask mask = roi_mask(*p.standard, range);
            // cells with too small an ROI are skipped, not zero-filled
            if (mask.count() < kMinRoiPixels) continue;
            const FeatureVector fc = extract_features(*p.candidate, mask, cfg);
            const FeatureVector fs = extract_features(*p.standard, mask, cfg);
            for (std::size_t k = 0; k < kFeatureCount; ++k) {
                xs[k].push_back(fc[k]);
                ys[k].push_back(fs[k]);
            }
            ++result.pairs_used;
        }
        if (result.pairs_used >= 2) {
            result.present = true;
            for (std::size_t k = 0; k < kFeatureCount; ++k) {
                result.ccc.push_back(ccc(xs[k], ys[k]));
                if (result.ccc.back() > kReproducibleCcc) ++result.reproducible_count;
            }
        }
        report.ranges.push_back(std::move(result));
    }
    return report;
}

void write_report_csv(std::ostream& out, std::span<const NamedReport> reports) {
    const auto& names = feature_names();
    out << "condition,roi_lo,roi_hi,feature_name,ccc\n";
    for (const NamedReport& nr : reports) {
        for (const RangeResult& r : nr.report.ranges) {
            for (std::size_t k = 0; k < names.size(); ++k) {
                out << nr.condition << ',' << r.range.lo << ',' << r.range.hi << ',' << names[k] << ','
                    << (r.present ? fmt(r.ccc[k]) : "NA") << '\n';
            }
        }
    }
    out << "\ncondition,range,reproducible_count,mean_psnr,sd_psnr,mean_ssim,sd_ssim\n";
    for (const NamedReport& nr : reports) {
        const ReproReport& rep = nr.report;
        for (const RangeResult& r : rep.ranges) {
            out << nr.condition << ',' << r.range.lo << ".." << r.range.hi << ','
                << (r.present ? std::to_string(r.reproducible_count) : "NA") << ',' << fmt(rep.mean_psnr) << ','
                << fmt(rep.sd_psnr) << ',' << fmt(rep.mean_ssim) << ',' << fmt(rep.sd_ssim) << '\n';
        }
    }
    if (!out) throw FormatError("failed writing the report");
}

}  // namespace rgan

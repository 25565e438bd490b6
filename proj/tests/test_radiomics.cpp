#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "reference/features_ref.hpp"
#include "rgan/error.hpp"
#include "rgan/radiomics.hpp"
#include "rgan/rng.hpp"
#include "test_util.hpp"

using namespace rgan;

namespace {

std::vector<CandidatePair> pairs_of(const Dataset& ds, bool identical) {
    std::vector<CandidatePair> out;
    for (const ImagePair& p : ds.pairs) out.push_back({identical ? &p.y : &p.x, &p.y});
    return out;
}

CtImage random_image(int size, std::uint64_t seed) {
    CounterRng rng(seed);
    CtImage img = testing::constant_image(size, 0);
    for (int& v : img.pixels) v = -1024 + static_cast<int>(std::floor(rng.uniform() * 2025.0));
    return img;
}

}  // namespace

TEST_CASE("roi mask selects the inclusive HU range of the standard image") {
    const CtImage img = testing::make_image(4, 1, {-801, -800, -300, -299});
    const RoiMask m = roi_mask(img, kRoiRanges[0]);
    CHECK(m.count() == 2);
    CHECK_FALSE(m.at(0, 0));
    CHECK(m.at(0, 1));
    CHECK(m.at(0, 2));
    CHECK_FALSE(m.at(0, 3));
    CHECK(roi_mask(img, {300, 800}).empty());
}

TEST_CASE("constant region: zero spread, zero entropy, one-cell GLCM") {
    const CtImage img = testing::constant_image(8, 40);
    const FeatureVector f = extract_features(img, whole_image_mask(img));
    CHECK(f.get("firstorder_variance") == 0.0);
    CHECK(f.get("firstorder_entropy_log2") == 0.0);
    CHECK(f.get("firstorder_uniformity") == 1.0);
    CHECK(f.get("glcm_d1_0deg_asm") == 1.0);
    CHECK(f.get("glcm_d2_45deg_contrast") == 0.0);
    CHECK(f.get("firstorder_mean") == 40.0);
}

TEST_CASE("checkerboard on two adjacent GLCM levels") {
    std::vector<int> px;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) px.push_back((r + c) % 2 ? -950 : -1024);
    const CtImage img = testing::make_image(4, 4, px);
    CHECK(glcm_level(-1024, {}) == 0);
    CHECK(glcm_level(-950, {}) == 1);
    const FeatureVector f = extract_features(img, whole_image_mask(img));
    CHECK(f.get("glcm_d1_0deg_contrast") == doctest::Approx(1.0));
    CHECK(f.get("glcm_d1_0deg_asm") == doctest::Approx(0.5));
    CHECK(f.get("glcm_d1_0deg_entropy_log2") == doctest::Approx(1.0));
    // diagonal neighbours share a colour
    CHECK(f.get("glcm_d1_135deg_contrast") == 0.0);
    CHECK(f.get("glcm_d2_0deg_contrast") == 0.0);
}

TEST_CASE("feature names are unique and complete") {
    const auto& names = feature_names();
    CHECK(names.size() == kFeatureCount);
    CHECK(std::set<std::string>(names.begin(), names.end()).size() == kFeatureCount);
    CHECK_THROWS_AS(FeatureVector{}.get("nope"), ConfigError);
}

TEST_CASE("tiny ROIs are rejected") {
    const CtImage img = testing::constant_image(8, 0);
    RoiMask m = whole_image_mask(img);
    std::fill(m.inside.begin() + 15, m.inside.end(), 0);
    CHECK_THROWS_AS(extract_features(img, m), ConfigError);
}

TEST_CASE("ccc examples") {
    const std::vector<double> x{1, 2, 3};
    CHECK(ccc(x, std::vector<double>{2, 4, 6}) == doctest::Approx(8.0 / 22.0).epsilon(1e-12));
    CHECK(ccc(x, x) == 1.0);
    CHECK(ccc(x, std::vector<double>{1001, 1002, 1003}) < 1e-5);
    CHECK(ccc(std::vector<double>{5, 5}, std::vector<double>{5, 5}) == 1.0);
    CHECK_THROWS_AS(ccc(x, std::vector<double>{1, 2}), ConfigError);
}

TEST_CASE("ccc is symmetric, bounded, and invariant under a shared affine map") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        CounterRng rng(seed);
        std::vector<double> a(30), b(30), a2(30), b2(30);
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] = rng.normal();
            b[i] = a[i] + 0.5 * rng.normal() + 0.2;
            a2[i] = 3.0 * a[i] - 7.0;
            b2[i] = 3.0 * b[i] - 7.0;
        }
        const double c = ccc(a, b);
        CHECK(c == ccc(b, a));
        CHECK(c >= -1.0);
        CHECK(c <= 1.0);
        CHECK(ccc(a2, b2) == doctest::Approx(c).epsilon(1e-9));
    }
}

TEST_CASE("psnr examples") {
    const CtImage a = testing::constant_image(4, 0);
    CHECK(psnr(a, a) == std::numeric_limits<double>::infinity());
    CHECK(psnr(testing::constant_image(4, -1024), testing::constant_image(4, 1000)) == doctest::Approx(0.0));
    CHECK(psnr(a, testing::constant_image(4, 10), 100.0) == doctest::Approx(20.0));
    CHECK_THROWS_AS(psnr(a, testing::constant_image(5, 0)), ConfigError);
}

TEST_CASE("ssim: identity is 1, symmetric, and bounded") {
    const CtImage a = random_image(24, 1);
    const CtImage b = random_image(24, 2);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ssim(a, b) == ssim(b, a));
    CHECK(ssim(a, b) <= 1.0);
    CHECK(ssim(a, b) >= -1.0);
    CHECK(ssim(a, b) < 0.5);
    CHECK_THROWS_AS(ssim(testing::constant_image(10, 0), testing::constant_image(10, 0)), ConfigError);
}

TEST_CASE("features ignore pixels outside the mask") {
    CtImage a = random_image(16, 3);
    RoiMask m = whole_image_mask(a);
    for (int c = 0; c < 16; ++c) m.inside[static_cast<std::size_t>(5) * 16 + c] = 0;
    const FeatureVector before = extract_features(a, m);
    for (int c = 0; c < 16; ++c) a.pixels[static_cast<std::size_t>(5) * 16 + c] = 999;
    CHECK(extract_features(a, m).values == before.values);
}

TEST_CASE("features agree with the brute-force reference on random masked images") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const CtImage img = random_image(20, 100 + seed);
        CounterRng rng(200 + seed);
        RoiMask m = whole_image_mask(img);
        for (auto& v : m.inside) v = rng.uniform() < 0.6 ? 1 : 0;
        const FeatureVector f = extract_features(img, m);
        const std::vector<double> expect = ref::ref_features(img, m);
        for (std::size_t i = 0; i < kFeatureCount; ++i) {
            INFO(feature_names()[i]);
            CHECK(ref::rel_close(f[i], expect[i]));
        }
    }
}

TEST_CASE("report: identical candidates are reproducible on every feature") {
    const Dataset ds = testing::toy_dataset(10, 64, 1);
    const auto pairs = pairs_of(ds, true);
    const ReproReport r = reproducibility_report(pairs);
    REQUIRE(r.ranges.size() == 3);
    for (const RangeResult& rr : r.ranges) {
        CHECK(rr.present);
        CHECK(rr.reproducible_count == static_cast<int>(kFeatureCount));
    }
    CHECK(std::isinf(r.mean_psnr));
    CHECK(r.mean_ssim == doctest::Approx(1.0));
}

TEST_CASE("report: a different kernel lowers the reproducible counts and is byte-stable") {
    const Dataset ds = testing::toy_dataset(10, 64, 1);
    const auto pairs = pairs_of(ds, false);
    const ReproReport r = reproducibility_report(pairs);
    int total = 0;
    for (const RangeResult& rr : r.ranges) total += rr.reproducible_count;
    CHECK(total < 3 * static_cast<int>(kFeatureCount));
    CHECK(std::isfinite(r.mean_psnr));
    CHECK(r.sd_psnr > 0.0);

    const std::vector<NamedReport> named{{"input", r}};
    std::ostringstream a, b;
    write_report_csv(a, named);
    write_report_csv(b, std::vector<NamedReport>{{"input", reproducibility_report(pairs)}});
    CHECK(a.str() == b.str());
    CHECK(a.str().rfind("condition,roi_lo,roi_hi,feature_name,ccc\n", 0) == 0);
    CHECK(a.str().find("\ncondition,range,reproducible_count,mean_psnr,sd_psnr,mean_ssim,sd_ssim\n") !=
          std::string::npos);
    CHECK(a.str().find("input,-800..-300,") != std::string::npos);
}

TEST_CASE("report needs at least ten pairs") {
    const Dataset ds = testing::toy_dataset(9, 32, 1);
    CHECK_THROWS_AS(reproducibility_report(pairs_of(ds, true)), ConfigError);
}

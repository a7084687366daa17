#include <algorithm>
#include <cmath>
#include <set>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "delc/augment.hpp"
#include "delc/error.hpp"
#include "test_support.hpp"

namespace delc {
namespace {

using testing::constant_image;
using testing::noise_image;

Image gray_row(std::initializer_list<std::uint8_t> values, int rows = 1) {
    Image img(static_cast<int>(values.size()), rows, 0);
    for (int y = 0; y < rows; ++y) {
        int x = 0;
        for (std::uint8_t v : values) {
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = v;
            ++x;
        }
    }
    return img;
}

bool all_equal(const Image& img, std::uint8_t v) {
    return std::all_of(img.pixels.begin(), img.pixels.end(), [v](std::uint8_t p) { return p == v; });
}

double mean_of(const Image& img) {
    double s = 0;
    for (auto p : img.pixels) s += p;
    return s / static_cast<double>(img.pixels.size());
}

TEST(AugmentConfig, DefaultsAndValidation) {
    const AugmentConfig cfg;
    EXPECT_DOUBLE_EQ(cfg.brightness_limit, 0.2);
    EXPECT_DOUBLE_EQ(cfg.contrast_limit, 0.2);
    EXPECT_EQ(cfg.blur_kernel_max, 7);
    EXPECT_DOUBLE_EQ(cfg.shift_limit, 0.0625);
    EXPECT_DOUBLE_EQ(cfg.scale_limit, 0.1);
    EXPECT_DOUBLE_EQ(cfg.rotate_limit, 15.0);
    EXPECT_DOUBLE_EQ(cfg.per_transform_probability, 0.5);
    EXPECT_EQ(cfg.target_per_class, 2100);
    EXPECT_NO_THROW(cfg.validate());

    AugmentConfig bad = cfg;
    bad.blur_kernel_max = 6;
    EXPECT_THROW(bad.validate(), Error);
    bad = cfg;
    bad.per_transform_probability = 1.5;
    EXPECT_THROW(bad.validate(), Error);
    bad = cfg;
    bad.rotate_limit = -1;
    EXPECT_THROW(bad.validate(), Error);
}

TEST(Brightness, IdentityScalingAndSaturation) {
    const Image img = noise_image(17, 9, 1);
    EXPECT_EQ(apply_brightness(img, 0.0), img);
    EXPECT_TRUE(all_equal(apply_brightness(constant_image(4, 4, 128), 0.5), 192));
    EXPECT_TRUE(all_equal(apply_brightness(constant_image(4, 4, 255), 0.2), 255));
    EXPECT_TRUE(all_equal(apply_brightness(constant_image(4, 4, 200), -1.0), 0));
}

TEST(Brightness, RoundsHalfUp) {
    // 5 * 1.1 = 5.5 -> 6; 15 * 1.1 = 16.5 -> 17
    EXPECT_TRUE(all_equal(apply_brightness(constant_image(2, 2, 5), 0.1), 6));
    EXPECT_TRUE(all_equal(apply_brightness(constant_image(2, 2, 15), 0.1), 17));
}

TEST(Contrast, IdentityFixedPointAndStretch) {
    const Image img = noise_image(13, 11, 2);
    EXPECT_EQ(apply_contrast(img, 0.0), img);
    EXPECT_TRUE(all_equal(apply_contrast(constant_image(5, 3, 77), 0.9), 77));
    EXPECT_TRUE(all_equal(apply_contrast(constant_image(5, 3, 77), -0.9), 77));
    const Image out = apply_contrast(gray_row({64, 192}), 1.0);
    EXPECT_EQ(out.at(0, 0, 0), 0);
    EXPECT_EQ(out.at(1, 0, 0), 255);
}

TEST(MotionBlur, KernelIsNormalizedLine) {
    for (int k : {3, 5, 7}) {
        for (double angle : {0.0, 30.0, 45.0, 90.0, 137.0}) {
            const auto kernel = motion_blur_kernel(k, angle);
            ASSERT_EQ(kernel.size(), static_cast<std::size_t>(k * k));
            double sum = 0;
            for (double w : kernel) {
                EXPECT_GE(w, 0.0);
                sum += w;
            }
            EXPECT_NEAR(sum, 1.0, 1e-12);
        }
    }
    const auto horizontal = motion_blur_kernel(3, 0.0);
    for (int x = 0; x < 3; ++x) {
        EXPECT_NEAR(horizontal[3 + x], 1.0 / 3.0, 1e-12);
        EXPECT_EQ(horizontal[x], 0.0);
        EXPECT_EQ(horizontal[6 + x], 0.0);
    }
}

TEST(MotionBlur, HandConvolution) {
    const Image out = apply_motion_blur(gray_row({0, 255, 0}, 3), 3, 0.0);
    for (int c = 0; c < 3; ++c) EXPECT_EQ(out.at(1, 1, c), 85);
}

TEST(MotionBlur, ConstantFixedPointAndMeanPreservation) {
    EXPECT_TRUE(all_equal(apply_motion_blur(constant_image(9, 9, 133), 7, 23.0), 133));
    const Image img = noise_image(64, 64, 3);
    const Image out = apply_motion_blur(img, 5, 60.0);
    double in_sum = 0, out_sum = 0;
    int n = 0;
    for (int y = 8; y < 56; ++y) {
        for (int x = 8; x < 56; ++x) {
            for (int c = 0; c < 3; ++c) {
                in_sum += img.at(x, y, c);
                out_sum += out.at(x, y, c);
                ++n;
            }
        }
    }
    EXPECT_NEAR(out_sum / n, in_sum / n, 1.0);
}

TEST(MotionBlur, Errors) {
    EXPECT_THROW(apply_motion_blur(constant_image(4, 4, 0), 5, 0.0), Error);
    EXPECT_THROW(apply_motion_blur(constant_image(9, 9, 0), 4, 0.0), Error);
    EXPECT_THROW(apply_motion_blur(constant_image(9, 9, 0), 1, 0.0), Error);
}

TEST(HFlip, InvolutionSwapAndSymmetry) {
    const Image img = noise_image(15, 7, 4);
    EXPECT_EQ(apply_hflip(apply_hflip(img)), img);
    const Image pair = apply_hflip(gray_row({10, 200}));
    EXPECT_EQ(pair.at(0, 0, 0), 200);
    EXPECT_EQ(pair.at(1, 0, 0), 10);
    const Image sym = gray_row({1, 2, 3, 2, 1}, 2);
    EXPECT_EQ(apply_hflip(sym), sym);
}

TEST(ShiftScaleRotate, IdentityIsExact) {
    const Image img = noise_image(96, 160, 5);
    EXPECT_EQ(apply_shift_scale_rotate(img, 0.0, 0.0, 1.0, 0.0), img);
}

TEST(ShiftScaleRotate, FullTurnWithinOne) {
    const Image img = noise_image(33, 21, 6);
    const Image out = apply_shift_scale_rotate(img, 0.0, 0.0, 1.0, 360.0);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        EXPECT_LE(std::abs(int(out.pixels[i]) - int(img.pixels[i])), 1) << i;
    }
}

std::pair<double, double> centroid(const Image& img) {
    double sx = 0, sy = 0, s = 0;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double v = img.at(x, y, 0);
            sx += v * x;
            sy += v * y;
            s += v;
        }
    }
    return {sx / s, sy / s};
}

TEST(ShiftScaleRotate, ShiftMovesDotCentroid) {
    const int w = 64, h = 48;
    Image img(w, h, 0);
    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (std::hypot(x - cx, y - cy) <= 4.0) {
                for (int c = 0; c < 3; ++c) img.at(x, y, c) = 255;
            }
        }
    }
    const auto [x0, y0] = centroid(img);
    const auto [x1, y1] = centroid(apply_shift_scale_rotate(img, 0.25, 0.0, 1.0, 0.0));
    EXPECT_NEAR(x1 - x0, 0.25 * w, 0.5);
    EXPECT_NEAR(y1 - y0, 0.0, 0.5);
}

TEST(ShiftScaleRotate, RejectsNonPositiveScale) {
    const Image img = noise_image(8, 8, 7);
    EXPECT_THROW(apply_shift_scale_rotate(img, 0, 0, 0.0, 0), Error);
    EXPECT_THROW(apply_shift_scale_rotate(img, 0, 0, -1.0, 0), Error);
}

TEST(Transforms, PreserveShapeAndRangeOnExtremes) {
    for (std::uint8_t v : {std::uint8_t{0}, std::uint8_t{255}}) {
        Image img = constant_image(31, 17, v);
        img.at(3, 3, 1) = static_cast<std::uint8_t>(255 - v);
        const Image outs[] = {apply_brightness(img, 0.2),   apply_brightness(img, -0.2),
                              apply_contrast(img, 0.2),     apply_contrast(img, -0.2),
                              apply_motion_blur(img, 7, 33), apply_hflip(img),
                              apply_shift_scale_rotate(img, 0.06, -0.06, 1.1, 15)};
        for (const Image& out : outs) {
            EXPECT_EQ(out.width, img.width);
            EXPECT_EQ(out.height, img.height);
            EXPECT_EQ(out.pixels.size(), img.pixels.size());
        }
    }
}

TEST(VariantPlan, IdentityPlanIsNoOp) {
    VariantPlan plan;
    plan.variant_id = "a~aug0";
    plan.source_id = "a";
    EXPECT_TRUE(plan.is_identity());
    plan.brightness = 0.0;
    plan.contrast = 0.0;
    plan.shift_x = 0.0;
    plan.shift_y = 0.0;
    plan.scale = 1.0;
    plan.rotate_deg = 0.0;
    const Image img = noise_image(20, 30, 8);
    EXPECT_EQ(apply_variant(img, plan), img);
}

TEST(VariantPlan, DrawsStayWithinLimits) {
    AugmentConfig cfg;
    cfg.seed = 3;
    std::size_t hits[7] = {};
    const int n = 2000;
    for (int i = 0; i < n; ++i) {
        const VariantPlan p = draw_variant_plan("src", i, cfg);
        EXPECT_EQ(p.variant_id, variant_id("src", i));
        if (p.brightness) {
            ++hits[0];
            EXPECT_LE(std::abs(*p.brightness), cfg.brightness_limit);
        }
        if (p.contrast) {
            ++hits[1];
            EXPECT_LE(std::abs(*p.contrast), cfg.contrast_limit);
        }
        if (p.motion_blur) {
            ++hits[2];
            EXPECT_EQ(p.motion_blur->kernel_size % 2, 1);
            EXPECT_GE(p.motion_blur->kernel_size, 3);
            EXPECT_LE(p.motion_blur->kernel_size, cfg.blur_kernel_max);
        }
        hits[3] += p.hflip;
        if (p.shift_x) {
            ++hits[4];
            EXPECT_LE(std::abs(*p.shift_x), cfg.shift_limit);
            EXPECT_LE(std::abs(*p.shift_y), cfg.shift_limit);
        }
        if (p.scale) {
            ++hits[5];
            EXPECT_LE(std::abs(*p.scale - 1.0), cfg.scale_limit);
        }
        if (p.rotate_deg) {
            ++hits[6];
            EXPECT_LE(std::abs(*p.rotate_deg), cfg.rotate_limit);
        }
    }
    for (std::size_t h : hits) EXPECT_NEAR(static_cast<double>(h) / n, 0.5, 0.05);
}

TEST(VariantPlan, ProbabilityExtremes) {
    AugmentConfig cfg;
    cfg.per_transform_probability = 0.0;
    EXPECT_TRUE(draw_variant_plan("x", 0, cfg).is_identity());
    cfg.per_transform_probability = 1.0;
    const VariantPlan p = draw_variant_plan("x", 0, cfg);
    EXPECT_TRUE(p.brightness && p.contrast && p.motion_blur && p.hflip && p.shift_x && p.scale &&
                p.rotate_deg);
}

std::vector<SourceImage> originals(int n, int w, int h) {
    std::vector<SourceImage> out;
    for (int i = 0; i < n; ++i) {
        out.push_back({"img" + std::to_string(i), noise_image(w, h, static_cast<std::uint32_t>(i))});
    }
    return out;
}

TEST(Expansion, PlanCountsAndRoundRobin) {
    std::vector<std::string> ids;
    for (int i = 0; i < 350; ++i) ids.push_back("s" + std::to_string(i));
    const auto plans = plan_class_expansion(ids, AugmentConfig{});
    ASSERT_EQ(plans.size(), 1750u);
    EXPECT_EQ((350 + plans.size()) / 350, 6u);
    std::set<std::string> variant_ids;
    for (std::size_t v = 0; v < plans.size(); ++v) {
        EXPECT_EQ(plans[v].source_id, ids[v % 350]);
        EXPECT_EQ(plans[v].copy_index, static_cast<int>(v / 350));
        variant_ids.insert(plans[v].variant_id);
    }
    EXPECT_EQ(variant_ids.size(), plans.size());
}

TEST(Expansion, TargetEqualToCountIsNoOp) {
    const auto src = originals(5, 12, 10);
    AugmentConfig cfg;
    cfg.target_per_class = 5;
    const AugmentedClass out = augment_class_to_count(src, cfg);
    ASSERT_EQ(out.images.size(), 5u);
    EXPECT_TRUE(out.provenance.empty());
    for (std::size_t i = 0; i < src.size(); ++i) {
        EXPECT_EQ(out.images[i].id, src[i].id);
        EXPECT_EQ(out.images[i].image, src[i].image);
    }
}

TEST(Expansion, DeterministicAndSensitiveToSeed) {
    const auto src = originals(7, 24, 40);
    AugmentConfig cfg;
    cfg.target_per_class = 40;
    cfg.seed = 9;
    const AugmentedClass a = augment_class_to_count(src, cfg);
    const AugmentedClass b = augment_class_to_count(src, cfg);
    ASSERT_EQ(a.images.size(), 40u);
    ASSERT_EQ(a.provenance.size(), 33u);
    for (std::size_t i = 0; i < a.images.size(); ++i) {
        EXPECT_EQ(a.images[i].id, b.images[i].id);
        EXPECT_EQ(a.images[i].image.pixels, b.images[i].image.pixels);
    }
    EXPECT_EQ(provenance_to_json(a.provenance).dump(), provenance_to_json(b.provenance).dump());
    cfg.seed = 10;
    const AugmentedClass c = augment_class_to_count(src, cfg);
    EXPECT_NE(provenance_to_json(a.provenance).dump(), provenance_to_json(c.provenance).dump());
}

TEST(Expansion, VariantsDoNotDependOnClassmates) {
    AugmentConfig cfg;
    cfg.target_per_class = 6;
    const auto three = plan_class_expansion(std::vector<std::string>{"a", "b", "c"}, cfg);
    const auto other = plan_class_expansion(std::vector<std::string>{"a", "z", "y"}, cfg);
    EXPECT_EQ(three[0], other[0]);
}

TEST(Expansion, Errors) {
    AugmentConfig cfg;
    cfg.target_per_class = 3;
    EXPECT_THROW(augment_class_to_count(std::vector<SourceImage>{}, cfg), Error);
    EXPECT_THROW(augment_class_to_count(originals(4, 8, 8), cfg), Error);
}

TEST(Provenance, JsonListsSourceAndParameters) {
    AugmentConfig cfg;
    cfg.per_transform_probability = 1.0;
    const VariantPlan p = draw_variant_plan("ear7", 2, cfg);
    const auto j = to_json(p);
    EXPECT_EQ(j.at("variant_id"), "ear7~aug2");
    EXPECT_EQ(j.at("source_id"), "ear7");
    const std::string text = j.dump();
    for (const char* key : {"brightness", "contrast", "motion_blur", "hflip", "rotate"}) {
        EXPECT_NE(text.find(key), std::string::npos) << key << " missing from " << text;
    }
}

} // namespace
} // namespace delc

#include "delc/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "delc/error.hpp"
#include "delc/rng.hpp"

namespace delc {

namespace {

inline std::uint8_t round_clamp(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

void require_valid(const Image& img, const char* op) {
    if (!img.valid()) {
        throw Error(std::string(op) + ": invalid image");
    }
}

constexpr double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

} // namespace

void AugmentConfig::validate() const {
    if (brightness_limit < 0 || contrast_limit < 0 || shift_limit < 0 || scale_limit < 0 ||
        rotate_limit < 0) {
        throw Error("AugmentConfig: limits must be non-negative");
    }
    if (scale_limit >= 1.0) {
        throw Error("AugmentConfig: scale_limit must be below 1");
    }
    if (blur_kernel_max < 3 || blur_kernel_max % 2 == 0) {
        throw Error("AugmentConfig: blur_kernel_max must be an odd integer >= 3");
    }
    if (!(per_transform_probability >= 0.0 && per_transform_probability <= 1.0)) {
        throw Error("AugmentConfig: per_transform_probability must lie in [0, 1]");
    }
    if (target_per_class < 1) {
        throw Error("AugmentConfig: target_per_class must be positive");
    }
}

Image apply_brightness(const Image& img, double delta) {
    require_valid(img, "apply_brightness");
    Image out = img;
    const double gain = 1.0 + delta;
    for (auto& v : out.pixels) {
        v = round_clamp(v * gain);
    }
    return out;
}

Image apply_contrast(const Image& img, double delta) {
    require_valid(img, "apply_contrast");
    const double mean = gray_mean(img);
    const double gain = 1.0 + delta;
    Image out = img;
    for (auto& v : out.pixels) {
        v = round_clamp(mean + (v - mean) * gain);
    }
    return out;
}

std::vector<double> motion_blur_kernel(int kernel_size, double angle_deg) {
    if (kernel_size < 3 || kernel_size % 2 == 0) {
        throw Error("motion blur kernel size must be odd and >= 3");
    }
    const int c = kernel_size / 2;
    const double a = deg2rad(angle_deg);
    std::vector<double> k(static_cast<std::size_t>(kernel_size) * kernel_size, 0.0);
    for (int t = -c; t <= c; ++t) {
        const long x = std::lround(c + t * std::cos(a));
        const long y = std::lround(c - t * std::sin(a));
        k[static_cast<std::size_t>(y) * kernel_size + x] = 1.0;
    }
    double sum = 0.0;
    for (double w : k) sum += w;
    for (double& w : k) w /= sum;
    return k;
}

Image apply_motion_blur(const Image& img, int kernel_size, double angle_deg) {
    require_valid(img, "apply_motion_blur");
    if (kernel_size > std::min(img.width, img.height)) {
        throw Error("apply_motion_blur: kernel larger than image");
    }
    const std::vector<double> kernel = motion_blur_kernel(kernel_size, angle_deg);
    const int c = kernel_size / 2;
    std::vector<std::pair<int, int>> taps;
    for (int ky = 0; ky < kernel_size; ++ky) {
        for (int kx = 0; kx < kernel_size; ++kx) {
            if (kernel[static_cast<std::size_t>(ky) * kernel_size + kx] > 0.0) {
                taps.emplace_back(kx - c, ky - c);
            }
        }
    }
    // Equal weights: integer sums divided once keep the result exact.
    const long count = static_cast<long>(taps.size());
    Image out(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            long sum[3] = {0, 0, 0};
            for (auto [dx, dy] : taps) {
                const int sx = std::clamp(x + dx, 0, img.width - 1);
                const int sy = std::clamp(y + dy, 0, img.height - 1);
                const std::size_t o = img.offset(sx, sy);
                sum[0] += img.pixels[o];
                sum[1] += img.pixels[o + 1];
                sum[2] += img.pixels[o + 2];
            }
            for (int ch = 0; ch < 3; ++ch) {
                out.at(x, y, ch) = static_cast<std::uint8_t>((2 * sum[ch] + count) / (2 * count));
            }
        }
    }
    return out;
}

Image apply_hflip(const Image& img) {
    require_valid(img, "apply_hflip");
    Image out(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const std::size_t s = img.offset(img.width - 1 - x, y);
            const std::size_t d = out.offset(x, y);
            std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>(s), 3,
                        out.pixels.begin() + static_cast<std::ptrdiff_t>(d));
        }
    }
    return out;
}

Image apply_shift_scale_rotate(const Image& img, double shift_x, double shift_y, double scale,
                               double angle_deg) {
    require_valid(img, "apply_shift_scale_rotate");
    if (!(scale > 0.0)) {
        throw Error("apply_shift_scale_rotate: scale must be positive");
    }
    if (shift_x == 0.0 && shift_y == 0.0 && scale == 1.0 && angle_deg == 0.0) {
        return img;
    }
    // Forward map dst = A * (src - c) + c + t with A = s * [[cos, sin], [-sin, cos]].
    const double a = deg2rad(angle_deg);
    const double alpha = scale * std::cos(a);
    const double beta = scale * std::sin(a);
    const double cx = (img.width - 1) / 2.0;
    const double cy = (img.height - 1) / 2.0;
    const double tx = shift_x * img.width;
    const double ty = shift_y * img.height;
    const double det = alpha * alpha + beta * beta;
    const double i00 = alpha / det, i01 = -beta / det;
    const double i10 = beta / det, i11 = alpha / det;

    Image out(img.width, img.height);
    const int w = img.width, h = img.height;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double dx = x - cx - tx;
            const double dy = y - cy - ty;
            const double sx = i00 * dx + i01 * dy + cx;
            const double sy = i10 * dx + i11 * dy + cy;
            const double fx0 = std::floor(sx), fy0 = std::floor(sy);
            const double fx = sx - fx0, fy = sy - fy0;
            const int x0 = std::clamp(static_cast<int>(fx0), 0, w - 1);
            const int x1 = std::clamp(static_cast<int>(fx0) + 1, 0, w - 1);
            const int y0 = std::clamp(static_cast<int>(fy0), 0, h - 1);
            const int y1 = std::clamp(static_cast<int>(fy0) + 1, 0, h - 1);
            for (int ch = 0; ch < 3; ++ch) {
                const double top = (1.0 - fx) * img.at(x0, y0, ch) + fx * img.at(x1, y0, ch);
                const double bottom = (1.0 - fx) * img.at(x0, y1, ch) + fx * img.at(x1, y1, ch);
                out.at(x, y, ch) = round_clamp((1.0 - fy) * top + fy * bottom);
            }
        }
    }
    return out;
}

// Variant planning ------------------------------------------------------------

bool VariantPlan::is_identity() const noexcept {
    return !brightness && !contrast && !motion_blur && !hflip && !shift_x && !shift_y && !scale &&
           !rotate_deg;
}

std::string variant_id(const std::string& source_id, int copy_index) {
    return source_id + "~aug" + std::to_string(copy_index);
}

VariantPlan draw_variant_plan(const std::string& source_id, int copy_index,
                              const AugmentConfig& cfg) {
    Rng rng(mix_seed({cfg.seed, fnv1a64(source_id), static_cast<std::uint64_t>(copy_index)}));
    const double p = cfg.per_transform_probability;
    auto pick = [&] { return rng.uniform() < p; };

    VariantPlan plan;
    plan.variant_id = variant_id(source_id, copy_index);
    plan.source_id = source_id;
    plan.copy_index = copy_index;
    if (pick()) plan.brightness = rng.uniform(-cfg.brightness_limit, cfg.brightness_limit);
    if (pick()) plan.contrast = rng.uniform(-cfg.contrast_limit, cfg.contrast_limit);
    if (pick()) {
        const auto choices = static_cast<std::uint64_t>((cfg.blur_kernel_max - 3) / 2 + 1);
        MotionBlurParams mb;
        mb.kernel_size = 3 + 2 * static_cast<int>(rng.below(choices));
        mb.angle_deg = rng.uniform(0.0, 180.0);
        plan.motion_blur = mb;
    }
    plan.hflip = pick();
    if (pick()) {
        plan.shift_x = rng.uniform(-cfg.shift_limit, cfg.shift_limit);
        plan.shift_y = rng.uniform(-cfg.shift_limit, cfg.shift_limit);
    }
    if (pick()) plan.scale = 1.0 + rng.uniform(-cfg.scale_limit, cfg.scale_limit);
    if (pick()) plan.rotate_deg = rng.uniform(-cfg.rotate_limit, cfg.rotate_limit);
    return plan;
}

Image apply_variant(const Image& img, const VariantPlan& plan) {
    require_valid(img, "apply_variant");
    Image out = img;
    if (plan.brightness) out = apply_brightness(out, *plan.brightness);
    if (plan.contrast) out = apply_contrast(out, *plan.contrast);
    if (plan.motion_blur) {
        int k = std::min(plan.motion_blur->kernel_size, std::min(out.width, out.height));
        if (k % 2 == 0) --k;
        if (k >= 3) out = apply_motion_blur(out, k, plan.motion_blur->angle_deg);
    }
    if (plan.hflip) out = apply_hflip(out);
    if (plan.shift_x || plan.shift_y || plan.scale || plan.rotate_deg) {
        out = apply_shift_scale_rotate(out, plan.shift_x.value_or(0.0), plan.shift_y.value_or(0.0),
                                       plan.scale.value_or(1.0), plan.rotate_deg.value_or(0.0));
    }
    return out;
}

std::vector<VariantPlan> plan_class_expansion(std::span<const std::string> source_ids,
                                              const AugmentConfig& cfg) {
    cfg.validate();
    if (source_ids.empty()) {
        throw Error("augment: empty class");
    }
    const std::size_t n = source_ids.size();
    const auto target = static_cast<std::size_t>(cfg.target_per_class);
    if (target < n) {
        throw Error("augment: target_per_class (" + std::to_string(target) +
                    ") is below the number of originals (" + std::to_string(n) + ")");
    }
    std::vector<VariantPlan> plans;
    plans.reserve(target - n);
    for (std::size_t v = 0; v < target - n; ++v) {
        plans.push_back(draw_variant_plan(source_ids[v % n], static_cast<int>(v / n), cfg));
    }
    return plans;
}

AugmentedClass augment_class_to_count(std::span<const SourceImage> originals,
                                      const AugmentConfig& cfg) {
    std::vector<std::string> ids;
    ids.reserve(originals.size());
    for (const SourceImage& s : originals) {
        require_valid(s.image, "augment_class_to_count");
        ids.push_back(s.id);
    }
    AugmentedClass out;
    out.provenance = plan_class_expansion(ids, cfg);
    out.images.assign(originals.begin(), originals.end());
    out.images.reserve(originals.size() + out.provenance.size());
    const std::size_t n = originals.size();
    for (std::size_t v = 0; v < out.provenance.size(); ++v) {
        const VariantPlan& plan = out.provenance[v];
        out.images.push_back({plan.variant_id, apply_variant(originals[v % n].image, plan)});
    }
    return out;
}

nlohmann::ordered_json to_json(const VariantPlan& plan) {
    nlohmann::ordered_json j;
    j["variant_id"] = plan.variant_id;
    j["source_id"] = plan.source_id;
    j["copy_index"] = plan.copy_index;
    nlohmann::ordered_json transforms = nlohmann::ordered_json::array();
    if (plan.brightness) transforms.push_back({{"name", "brightness"}, {"delta", *plan.brightness}});
    if (plan.contrast) transforms.push_back({{"name", "contrast"}, {"delta", *plan.contrast}});
    if (plan.motion_blur) {
        transforms.push_back({{"name", "motion_blur"},
                              {"kernel_size", plan.motion_blur->kernel_size},
                              {"angle_deg", plan.motion_blur->angle_deg}});
    }
    if (plan.hflip) transforms.push_back({{"name", "hflip"}});
    if (plan.shift_x || plan.shift_y) {
        transforms.push_back({{"name", "shift"},
                              {"x", plan.shift_x.value_or(0.0)},
                              {"y", plan.shift_y.value_or(0.0)}});
    }
    if (plan.scale) transforms.push_back({{"name", "scale"}, {"factor", *plan.scale}});
    if (plan.rotate_deg) transforms.push_back({{"name", "rotate"}, {"angle_deg", *plan.rotate_deg}});
    j["transforms"] = std::move(transforms);
    return j;
}

nlohmann::ordered_json provenance_to_json(std::span<const VariantPlan> plans) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const VariantPlan& p : plans) {
        arr.push_back(to_json(p));
    }
    return arr;
}

} // namespace delc

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "delc/image.hpp"

namespace delc {

struct AugmentConfig {
    double brightness_limit = 0.2;
    double contrast_limit = 0.2;
    int blur_kernel_max = 7;
    double shift_limit = 0.0625;
    double scale_limit = 0.1;
    double rotate_limit = 15.0;
    double per_transform_probability = 0.5;
    int target_per_class = 2100;
    std::uint64_t seed = 0;

    /// Throws delc::Error on a negative limit, even blur kernel or bad probability.
    void validate() const;

    friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

// Pixel transforms. Each returns a new image of the same size; results are
// rounded half-up and clamped to [0, 255] once per transform.

Image apply_brightness(const Image& img, double delta);
Image apply_contrast(const Image& img, double delta);
Image apply_motion_blur(const Image& img, int kernel_size, double angle_deg);
Image apply_hflip(const Image& img);

/// One affine warp about the image center: rotate by angle_deg (counter-
/// clockwise), scale, then translate by (shift_x*width, shift_y*height).
/// Bilinear sampling with border replication.
Image apply_shift_scale_rotate(const Image& img, double shift_x, double shift_y, double scale,
                               double angle_deg);

/// Normalized line kernel, row-major kernel_size x kernel_size.
std::vector<double> motion_blur_kernel(int kernel_size, double angle_deg);

struct MotionBlurParams {
    int kernel_size = 3;
    double angle_deg = 0.0;
    friend bool operator==(const MotionBlurParams&, const MotionBlurParams&) = default;
};

/// The drawn transform subset for one augmented variant. Unset members are
/// transforms that were not selected.
struct VariantPlan {
    std::string variant_id;
    std::string source_id;
    int copy_index = 0;

    std::optional<double> brightness;
    std::optional<double> contrast;
    std::optional<MotionBlurParams> motion_blur;
    bool hflip = false;
    std::optional<double> shift_x;
    std::optional<double> shift_y;
    std::optional<double> scale;
    std::optional<double> rotate_deg;

    bool is_identity() const noexcept;
    friend bool operator==(const VariantPlan&, const VariantPlan&) = default;
};

std::string variant_id(const std::string& source_id, int copy_index);

/// Draws the plan for the copy_index-th variant of `source_id`. The stream is
/// seeded from (cfg.seed, source_id, copy_index) only, so a variant is the
/// same regardless of which other images share its class.
VariantPlan draw_variant_plan(const std::string& source_id, int copy_index,
                              const AugmentConfig& cfg);

/// Applies a plan in fixed order: brightness, contrast, blur, flip, warp.
Image apply_variant(const Image& img, const VariantPlan& plan);

/// target_per_class - n plans, sources cycled round-robin.
std::vector<VariantPlan> plan_class_expansion(std::span<const std::string> source_ids,
                                              const AugmentConfig& cfg);

struct SourceImage {
    std::string id;
    Image image;
};

struct AugmentedClass {
    /// Originals first, then variants in plan order.
    std::vector<SourceImage> images;
    std::vector<VariantPlan> provenance;
};

AugmentedClass augment_class_to_count(std::span<const SourceImage> originals,
                                      const AugmentConfig& cfg);

nlohmann::ordered_json to_json(const VariantPlan& plan);
nlohmann::ordered_json provenance_to_json(std::span<const VariantPlan> plans);

} // namespace delc

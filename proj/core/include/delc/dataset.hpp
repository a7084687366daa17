#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "delc/image.hpp"

namespace delc {

enum class Label { negative = 0, positive = 1 };
enum class Source { delc_ulpgc, awe, synthetic };

std::string_view to_string(Label label) noexcept;
std::string_view to_string(Source source) noexcept;
Label parse_label(std::string_view text);
Source parse_source(std::string_view text);

struct ImageRecord {
    std::string id;
    std::filesystem::path path;
    Label label = Label::negative;
    int width = 0;
    int height = 0;
    Source source = Source::synthetic;

    friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct LabelCounts {
    std::size_t positive = 0;
    std::size_t negative = 0;

    std::size_t of(Label label) const noexcept { return label == Label::positive ? positive : negative; }
    std::size_t total() const noexcept { return positive + negative; }
    friend bool operator==(const LabelCounts&, const LabelCounts&) = default;
};

/// A validated, two-class image inventory.
class DatasetManifest {
public:
    DatasetManifest() = default;

    /// Validates ids and dimensions; throws delc::Error on violation.
    explicit DatasetManifest(std::vector<ImageRecord> records);

    const std::vector<ImageRecord>& records() const noexcept { return records_; }
    const LabelCounts& counts() const noexcept { return counts_; }
    std::size_t size() const noexcept { return records_.size(); }

    /// Records whose file was absent when the manifest was loaded.
    const std::vector<std::string>& missing_files() const noexcept { return missing_; }
    void set_missing_files(std::vector<std::string> ids) { missing_ = std::move(ids); }

    const ImageRecord& at(std::string_view id) const;
    bool contains(std::string_view id) const;
    std::vector<ImageRecord> with_label(Label label) const;

private:
    std::vector<ImageRecord> records_;
    LabelCounts counts_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<std::string> missing_;
};

/// Parses a JSON-lines manifest without class-balance requirements.
/// Relative paths are resolved against the manifest's directory.
std::vector<ImageRecord> read_records(const std::filesystem::path& path);

/// Writes a JSON-lines manifest; paths are written relative to its directory.
void write_records(const std::filesystem::path& path, std::span<const ImageRecord> records);

/// read_records + uniqueness + both classes present + file existence audit.
DatasetManifest load_manifest(const std::filesystem::path& path);

struct ShapeStats {
    std::size_t count = 0;
    double mean_width = 0.0;
    double mean_height = 0.0;
    /// Population standard deviations; empty when fewer than two records.
    std::optional<double> std_width;
    std::optional<double> std_height;

    bool std_defined() const noexcept { return std_width.has_value() && std_height.has_value(); }
};

ShapeStats compute_shape_stats(std::span<const ImageRecord> records);

/// Keeps candidates whose width and height both lie within mean +- k*std.
/// k = +infinity disables filtering.
std::vector<ImageRecord> filter_negatives(std::span<const ImageRecord> candidates,
                                          const ShapeStats& stats, double k);

struct FoldPlan {
    int repetition = 0;
    int fold = 0;
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;

    friend bool operator==(const FoldPlan&, const FoldPlan&) = default;
};

/// Repeated stratified k-fold: per repetition each class is shuffled with a
/// seeded stream and dealt round-robin into the k folds.
std::vector<FoldPlan> make_fold_plans(const DatasetManifest& manifest, int k, int repetitions,
                                      std::uint64_t seed);

nlohmann::ordered_json to_json(const FoldPlan& plan);
nlohmann::ordered_json to_json(std::span<const FoldPlan> plans);

// Synthetic ear-like fixtures ------------------------------------------------

/// Geometry of one synthetic ear image. Crease endpoints are only used when
/// `crease` is set.
struct SynthEarParams {
    int width = 82;
    int height = 159;
    double center_x = 41.0;
    double center_y = 79.5;
    double radius_x = 33.0;
    double radius_y = 71.0;
    std::uint8_t skin_r = 205, skin_g = 160, skin_b = 135;
    bool crease = false;
    double crease_x0 = 0.0, crease_y0 = 0.0, crease_x1 = 0.0, crease_y1 = 0.0;
    double crease_half_width = 1.5;
    int crease_darkening = 90;
    std::uint64_t noise_seed = 0;
};

SynthEarParams draw_synth_params(std::uint64_t seed, Label label, int index);
Image render_synth_ear(const SynthEarParams& params);

/// Writes n_per_class images per label under out_dir/images plus
/// out_dir/manifest.jsonl. Deterministic in `seed`.
DatasetManifest synth_generate(int n_per_class, std::uint64_t seed,
                               const std::filesystem::path& out_dir);

} // namespace delc

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "delc/augment.hpp"
#include "delc/backbone.hpp"
#include "delc/classifier.hpp"
#include "delc/dataset.hpp"
#include "delc/feature_cache.hpp"

namespace delc {

/// Positive class is label 1.
struct ConfusionMatrix {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::size_t tn = 0;

    std::size_t total() const noexcept { return tp + fp + fn + tn; }
    double accuracy() const noexcept;
    double positive_recall() const noexcept;
    double negative_recall() const noexcept;

    ConfusionMatrix& operator+=(const ConfusionMatrix& other) noexcept;
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels);

/// "actual\predicted,positive,negative" layout, two data rows.
std::string confusion_csv(const ConfusionMatrix& cm);

struct FoldResult {
    int repetition = 0;
    int fold = 0;
    double val_accuracy = 0.0;
    double test_accuracy = 0.0;
    ConfusionMatrix test_confusion;
    int best_epoch = -1;
    std::size_t train_originals = 0;
    std::size_t train_variants = 0;
    std::size_t validation_size = 0;
    std::size_t test_size = 0;
    std::size_t leakage_violations = 0;
};

struct BackboneReport {
    std::string backbone_name;
    double param_count_millions = 0.0;
    double val_accuracy = 0.0;
    double test_accuracy = 0.0;
    std::vector<FoldResult> folds;
    ConfusionMatrix confusion;
    std::size_t leakage_violations = 0;
};

struct ComparisonEntry {
    std::string backbone_name;
    double test_accuracy = 0.0;
    double param_count_millions = 0.0;
    double relative_performance = 0.0;
    double relative_size = 0.0;
    /// Exactly one entry carries each flag; ties go to the earlier entry.
    bool best_performance = false;
    bool largest = false;
};

struct ComparisonReport {
    std::vector<ComparisonEntry> entries;
};

/// Ratios against the maximum test accuracy and maximum parameter count.
ComparisonReport relative_report(std::span<const BackboneReport> reports);

/// (validation - test) accuracy in percentage points.
double overfit_gap(const BackboneReport& report);

/// Supplies feature vectors for manifest images and their augmented variants.
class FeatureProvider {
public:
    virtual ~FeatureProvider() = default;
    virtual int dimension() = 0;
    virtual std::vector<float> original(const ImageRecord& record) = 0;
    virtual std::vector<float> variant(const ImageRecord& source, const VariantPlan& plan) = 0;
};

/// Loads images from disk, augments them on demand and runs an extractor,
/// memoizing results in a FeatureCache keyed by image or variant id.
class ImageFeatureProvider final : public FeatureProvider {
public:
    ImageFeatureProvider(FeatureExtractor& extractor, FeatureCache& cache);

    int dimension() override { return static_cast<int>(cache_.dimension()); }
    std::vector<float> original(const ImageRecord& record) override;
    std::vector<float> variant(const ImageRecord& source, const VariantPlan& plan) override;

    /// Entries inserted since construction, in insertion order.
    std::span<const FeatureVector> new_entries() const;

private:
    const Image& image_for(const ImageRecord& record);
    std::vector<float> compute(const std::string& id, const Image& img);

    FeatureExtractor& extractor_;
    FeatureCache& cache_;
    std::size_t initial_size_;
    std::unordered_map<std::string, Image> images_;
};

/// Everything a fold saw, for independent leakage audits.
struct FoldAudit {
    int repetition = 0;
    int fold = 0;
    std::vector<std::string> train_ids;
    std::vector<std::string> validation_ids;
    std::vector<std::string> test_ids;
    std::vector<VariantPlan> provenance;
};

struct CvOptions {
    int k = 9;
    int repetitions = 5;
    std::uint64_t seed = 0;
    double validation_fraction = 0.1;
    int jobs = 1;
    std::function<void(const FoldAudit&)> on_fold;
};

/// Per fold: split by FoldPlan, hold out a stratified validation subset from
/// the training part, augment the remaining training originals per class,
/// train a fresh head and score validation and test originals.
BackboneReport run_cv(const DatasetManifest& manifest, const BackboneSpec& spec,
                      const AugmentConfig& augment_cfg, const TrainConfig& train_cfg,
                      const CvOptions& options, FeatureProvider& features);

/// Stratified holdout: per class, round(fraction * n) ids (at least one when
/// n >= 2), drawn with a seeded shuffle. Returns {remaining, holdout}.
std::pair<std::vector<std::string>, std::vector<std::string>>
split_validation(const DatasetManifest& manifest, std::span<const std::string> ids,
                 double fraction, std::uint64_t seed);

struct ThroughputResult {
    double images_per_second = 0.0;
    std::vector<double> samples;
};

/// Median images/second over `iterations` timed passes after one warm-up.
ThroughputResult throughput(FeatureExtractor& extractor, std::span<const Image> batch,
                            int iterations);

nlohmann::ordered_json to_json(const ConfusionMatrix& cm);
nlohmann::ordered_json to_json(const BackboneReport& report);
nlohmann::ordered_json to_json(const ComparisonReport& report);
BackboneReport backbone_report_from_json(const nlohmann::ordered_json& j);

/// name,val_acc,test_acc,params_millions,rel_perf,rel_size
std::string report_csv(std::span<const BackboneReport> reports, const ComparisonReport& comparison);

} // namespace delc

#include "delc/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <thread>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "delc/error.hpp"
#include "delc/rng.hpp"

namespace delc {

// Confusion matrix ------------------------------------------------------------

double ConfusionMatrix::accuracy() const noexcept {
    const std::size_t n = total();
    return n == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(n);
}

double ConfusionMatrix::positive_recall() const noexcept {
    return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
}

double ConfusionMatrix::negative_recall() const noexcept {
    return tn + fp == 0 ? 0.0 : static_cast<double>(tn) / static_cast<double>(tn + fp);
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) noexcept {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
}

ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size()) {
        throw Error("confusion: length mismatch");
    }
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool pred = predictions[i] != 0;
        const bool actual = labels[i] != 0;
        if (pred && actual) ++cm.tp;
        else if (pred) ++cm.fp;
        else if (actual) ++cm.fn;
        else ++cm.tn;
    }
    return cm;
}

std::string confusion_csv(const ConfusionMatrix& cm) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "actual\\predicted,positive,negative\npositive,%zu,%zu\nnegative,%zu,%zu\n",
                  cm.tp, cm.fn, cm.fp, cm.tn);
    return buf;
}

// Reports ---------------------------------------------------------------------

ComparisonReport relative_report(std::span<const BackboneReport> reports) {
    if (reports.empty()) {
        throw Error("relative_report: no reports");
    }
    std::size_t best = 0, largest = 0;
    for (std::size_t i = 1; i < reports.size(); ++i) {
        if (reports[i].test_accuracy > reports[best].test_accuracy) best = i;
        if (reports[i].param_count_millions > reports[largest].param_count_millions) largest = i;
    }
    const double max_acc = reports[best].test_accuracy;
    const double max_params = reports[largest].param_count_millions;
    if (!(max_acc > 0.0)) {
        throw Error("relative_report: maximum test accuracy is zero");
    }
    ComparisonReport out;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const BackboneReport& r = reports[i];
        if (!(r.param_count_millions > 0.0)) {
            throw Error("relative_report: non-positive parameter count for " + r.backbone_name);
        }
        ComparisonEntry e;
        e.backbone_name = r.backbone_name;
        e.test_accuracy = r.test_accuracy;
        e.param_count_millions = r.param_count_millions;
        e.relative_performance = r.test_accuracy / max_acc;
        e.relative_size = r.param_count_millions / max_params;
        e.best_performance = i == best;
        e.largest = i == largest;
        out.entries.push_back(std::move(e));
    }
    return out;
}

double overfit_gap(const BackboneReport& report) {
    return (report.val_accuracy - report.test_accuracy) * 100.0;
}

// Feature provider ------------------------------------------------------------

ImageFeatureProvider::ImageFeatureProvider(FeatureExtractor& extractor, FeatureCache& cache)
    : extractor_(extractor), cache_(cache), initial_size_(cache.size()) {
    if (static_cast<std::uint32_t>(extractor.dimension()) != cache.dimension()) {
        throw Error("extractor dimension " + std::to_string(extractor.dimension()) +
                    " does not match cache dimension " + std::to_string(cache.dimension()));
    }
}

const Image& ImageFeatureProvider::image_for(const ImageRecord& record) {
    auto it = images_.find(record.id);
    if (it == images_.end()) {
        it = images_.emplace(record.id, load_image(record.path)).first;
    }
    return it->second;
}

std::vector<float> ImageFeatureProvider::compute(const std::string& id, const Image& img) {
    auto values = extractor_.extract(std::span(&img, 1));
    cache_.insert(id, values.front());
    return std::move(values.front());
}

std::vector<float> ImageFeatureProvider::original(const ImageRecord& record) {
    if (const auto* hit = cache_.find(record.id)) {
        return *hit;
    }
    return compute(record.id, image_for(record));
}

std::vector<float> ImageFeatureProvider::variant(const ImageRecord& source, const VariantPlan& plan) {
    if (const auto* hit = cache_.find(plan.variant_id)) {
        return *hit;
    }
    return compute(plan.variant_id, apply_variant(image_for(source), plan));
}

std::span<const FeatureVector> ImageFeatureProvider::new_entries() const {
    return std::span(cache_.entries()).subspan(initial_size_);
}

// Cross-validation ------------------------------------------------------------

std::pair<std::vector<std::string>, std::vector<std::string>>
split_validation(const DatasetManifest& manifest, std::span<const std::string> ids,
                 double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction < 1.0)) {
        throw Error("validation fraction must lie in [0, 1)");
    }
    Rng rng(seed);
    std::unordered_set<std::string> holdout;
    for (Label label : {Label::positive, Label::negative}) {
        std::vector<std::string> members;
        for (const std::string& id : ids) {
            if (manifest.at(id).label == label) members.push_back(id);
        }
        rng.shuffle(std::span<std::string>(members));
        std::size_t take = 0;
        if (fraction > 0.0 && members.size() >= 2) {
            take = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(members.size()))));
            take = std::min(take, members.size() - 1);
        }
        holdout.insert(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    }
    std::pair<std::vector<std::string>, std::vector<std::string>> out;
    for (const std::string& id : ids) {
        (holdout.contains(id) ? out.second : out.first).push_back(id);
    }
    return out;
}

namespace {

struct FoldWork {
    FoldAudit audit;
    std::vector<int> train_labels;
    std::vector<int> val_labels;
    std::vector<int> test_labels;
};

Matrix<float> gather(const std::vector<std::string>& ids,
                     const std::unordered_map<std::string, std::vector<float>>& features, int dim) {
    Matrix<float> m(static_cast<Eigen::Index>(ids.size()), dim);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const std::vector<float>& v = features.at(ids[i]);
        for (int d = 0; d < dim; ++d) {
            m(static_cast<Eigen::Index>(i), d) = v[static_cast<std::size_t>(d)];
        }
    }
    return m;
}

FoldResult run_fold(const FoldWork& work,
                    const std::unordered_map<std::string, std::vector<float>>& features, int dim,
                    const TrainConfig& base_cfg) {
    const FoldAudit& a = work.audit;
    std::vector<std::string> train_ids = a.train_ids;
    for (const VariantPlan& p : a.provenance) train_ids.push_back(p.variant_id);

    const Matrix<float> train_x = gather(train_ids, features, dim);
    const Matrix<float> val_x = gather(a.validation_ids, features, dim);
    const Matrix<float> test_x = gather(a.test_ids, features, dim);

    TrainConfig cfg = base_cfg;
    cfg.seed = mix_seed({base_cfg.seed, static_cast<std::uint64_t>(a.repetition),
                         static_cast<std::uint64_t>(a.fold)});
    const TrainResult<float> trained = train(train_x, work.train_labels, val_x, work.val_labels, cfg);

    FoldResult r;
    r.repetition = a.repetition;
    r.fold = a.fold;
    r.best_epoch = trained.best_epoch;
    r.val_accuracy = trained.best_val_accuracy;
    const std::vector<int> preds = predict(trained.params, test_x, 0.5, cfg.prob_clip);
    r.test_confusion = confusion(preds, work.test_labels);
    r.test_accuracy = r.test_confusion.accuracy();
    r.train_originals = a.train_ids.size();
    r.train_variants = a.provenance.size();
    r.validation_size = a.validation_ids.size();
    r.test_size = a.test_ids.size();
    return r;
}

std::size_t count_leaks(const FoldAudit& a) {
    const std::unordered_set<std::string> test(a.test_ids.begin(), a.test_ids.end());
    std::size_t leaks = 0;
    for (const auto& id : a.train_ids) leaks += test.contains(id);
    for (const auto& id : a.validation_ids) leaks += test.contains(id);
    for (const auto& p : a.provenance) leaks += test.contains(p.source_id);
    return leaks;
}

} // namespace

BackboneReport run_cv(const DatasetManifest& manifest, const BackboneSpec& spec,
                      const AugmentConfig& augment_cfg, const TrainConfig& train_cfg,
                      const CvOptions& options, FeatureProvider& provider) {
    augment_cfg.validate();
    train_cfg.validate();
    if (!manifest.missing_files().empty()) {
        throw Error("manifest references " + std::to_string(manifest.missing_files().size()) +
                    " missing image files (first: '" + manifest.missing_files().front() + "')");
    }
    const std::vector<FoldPlan> plans =
        make_fold_plans(manifest, options.k, options.repetitions, options.seed);
    const int dim = provider.dimension();

    std::vector<FoldWork> work;
    work.reserve(plans.size());
    std::unordered_map<std::string, std::vector<float>> features;
    auto need_original = [&](const std::string& id) {
        if (!features.contains(id)) features.emplace(id, provider.original(manifest.at(id)));
    };

    for (const FoldPlan& plan : plans) {
        FoldWork w;
        w.audit.repetition = plan.repetition;
        w.audit.fold = plan.fold;
        w.audit.test_ids = plan.test_ids;
        auto [rest, val] = split_validation(
            manifest, plan.train_ids, options.validation_fraction,
            mix_seed({options.seed, static_cast<std::uint64_t>(plan.repetition),
                      static_cast<std::uint64_t>(plan.fold), 0x7a1ULL}));
        w.audit.train_ids = std::move(rest);
        w.audit.validation_ids = std::move(val);

        for (Label label : {Label::positive, Label::negative}) {
            std::vector<std::string> ids;
            for (const auto& id : w.audit.train_ids) {
                if (manifest.at(id).label == label) ids.push_back(id);
            }
            if (ids.empty()) continue;
            AugmentConfig cfg = augment_cfg;
            cfg.target_per_class = std::max(cfg.target_per_class, static_cast<int>(ids.size()));
            for (VariantPlan& vp : plan_class_expansion(ids, cfg)) {
                w.audit.provenance.push_back(std::move(vp));
            }
        }

        const std::size_t leaks = count_leaks(w.audit);
        if (leaks != 0) {
            throw Error("data leakage in fold " + std::to_string(plan.repetition) + "/" +
                        std::to_string(plan.fold) + ": " + std::to_string(leaks) + " ids");
        }
        if (options.on_fold) options.on_fold(w.audit);

        auto label_of = [&](const std::string& id) {
            return static_cast<int>(manifest.at(id).label);
        };
        for (const auto& id : w.audit.train_ids) w.train_labels.push_back(label_of(id));
        for (const auto& p : w.audit.provenance) w.train_labels.push_back(label_of(p.source_id));
        for (const auto& id : w.audit.validation_ids) w.val_labels.push_back(label_of(id));
        for (const auto& id : w.audit.test_ids) w.test_labels.push_back(label_of(id));

        try {
            for (const auto& id : w.audit.train_ids) need_original(id);
            for (const auto& id : w.audit.validation_ids) need_original(id);
            for (const auto& id : w.audit.test_ids) need_original(id);
            for (const VariantPlan& p : w.audit.provenance) {
                if (!features.contains(p.variant_id)) {
                    features.emplace(p.variant_id, provider.variant(manifest.at(p.source_id), p));
                }
            }
        } catch (const std::exception& e) {
            throw Error("feature extraction failed in fold " + std::to_string(plan.repetition) +
                        "/" + std::to_string(plan.fold) + " for " + spec.name + ": " + e.what());
        }
        work.push_back(std::move(w));
    }
    for (const auto& [id, v] : features) {
        if (v.size() != static_cast<std::size_t>(dim)) {
            throw Error("feature '" + id + "' has dimension " + std::to_string(v.size()) +
                        ", expected " + std::to_string(dim));
        }
    }

    std::vector<FoldResult> results(work.size());
    std::vector<std::exception_ptr> errors(work.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < work.size(); i = next++) {
            try {
                results[i] = run_fold(work[i], features, dim, train_cfg);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int jobs = std::clamp(options.jobs, 1, static_cast<int>(std::max<std::size_t>(1, work.size())));
    {
        std::vector<std::jthread> pool;
        for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
        worker();
    }
    for (std::size_t i = 0; i < errors.size(); ++i) {
        if (errors[i]) {
            try {
                std::rethrow_exception(errors[i]);
            } catch (const std::exception& e) {
                throw Error("training failed in fold " + std::to_string(work[i].audit.repetition) +
                            "/" + std::to_string(work[i].audit.fold) + " for " + spec.name + ": " +
                            e.what());
            }
        }
    }

    BackboneReport report;
    report.backbone_name = spec.name;
    report.param_count_millions = spec.param_count_millions;
    double val_sum = 0.0, test_sum = 0.0;
    for (const FoldResult& r : results) {
        val_sum += r.val_accuracy;
        test_sum += r.test_accuracy;
        report.confusion += r.test_confusion;
        report.leakage_violations += r.leakage_violations;
    }
    report.val_accuracy = val_sum / static_cast<double>(results.size());
    report.test_accuracy = test_sum / static_cast<double>(results.size());
    report.folds = std::move(results);
    return report;
}

// Throughput ------------------------------------------------------------------

ThroughputResult throughput(FeatureExtractor& extractor, std::span<const Image> batch,
                            int iterations) {
    if (batch.empty() || iterations < 1) {
        throw Error("throughput: need a non-empty batch and at least one iteration");
    }
    extractor.extract(batch);
    ThroughputResult r;
    for (int i = 0; i < iterations; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        extractor.extract(batch);
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
        r.samples.push_back(static_cast<double>(batch.size()) / std::max(dt.count(), 1e-9));
    }
    std::vector<double> sorted = r.samples;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    r.images_per_second = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    return r;
}

// Serialization ---------------------------------------------------------------

nlohmann::ordered_json to_json(const ConfusionMatrix& cm) {
    nlohmann::ordered_json j;
    j["tp"] = cm.tp;
    j["fp"] = cm.fp;
    j["fn"] = cm.fn;
    j["tn"] = cm.tn;
    return j;
}

nlohmann::ordered_json to_json(const BackboneReport& r) {
    nlohmann::ordered_json j;
    j["backbone"] = r.backbone_name;
    j["param_count_millions"] = r.param_count_millions;
    j["val_accuracy"] = r.val_accuracy;
    j["test_accuracy"] = r.test_accuracy;
    j["overfit_gap_points"] = overfit_gap(r);
    j["leakage_violations"] = r.leakage_violations;
    j["confusion"] = to_json(r.confusion);
    nlohmann::ordered_json folds = nlohmann::ordered_json::array();
    for (const FoldResult& f : r.folds) {
        nlohmann::ordered_json fj;
        fj["repetition"] = f.repetition;
        fj["fold"] = f.fold;
        fj["val_accuracy"] = f.val_accuracy;
        fj["test_accuracy"] = f.test_accuracy;
        fj["best_epoch"] = f.best_epoch;
        fj["train_originals"] = f.train_originals;
        fj["train_variants"] = f.train_variants;
        fj["validation_size"] = f.validation_size;
        fj["test_size"] = f.test_size;
        fj["confusion"] = to_json(f.test_confusion);
        folds.push_back(std::move(fj));
    }
    j["folds"] = std::move(folds);
    return j;
}

nlohmann::ordered_json to_json(const ComparisonReport& report) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const ComparisonEntry& e : report.entries) {
        nlohmann::ordered_json j;
        j["backbone"] = e.backbone_name;
        j["test_accuracy"] = e.test_accuracy;
        j["param_count_millions"] = e.param_count_millions;
        j["relative_performance"] = e.relative_performance;
        j["relative_size"] = e.relative_size;
        j["best_performance"] = e.best_performance;
        j["largest"] = e.largest;
        arr.push_back(std::move(j));
    }
    nlohmann::ordered_json j;
    j["entries"] = std::move(arr);
    return j;
}

namespace {
ConfusionMatrix confusion_from_json(const nlohmann::ordered_json& j) {
    ConfusionMatrix cm;
    cm.tp = j.value("tp", std::size_t{0});
    cm.fp = j.value("fp", std::size_t{0});
    cm.fn = j.value("fn", std::size_t{0});
    cm.tn = j.value("tn", std::size_t{0});
    return cm;
}
} // namespace

BackboneReport backbone_report_from_json(const nlohmann::ordered_json& j) {
    try {
        BackboneReport r;
        r.backbone_name = j.at("backbone").get<std::string>();
        r.param_count_millions = j.at("param_count_millions").get<double>();
        r.val_accuracy = j.at("val_accuracy").get<double>();
        r.test_accuracy = j.at("test_accuracy").get<double>();
        r.leakage_violations = j.value("leakage_violations", std::size_t{0});
        if (j.contains("confusion")) r.confusion = confusion_from_json(j["confusion"]);
        if (j.contains("folds")) {
            for (const auto& fj : j["folds"]) {
                FoldResult f;
                f.repetition = fj.at("repetition").get<int>();
                f.fold = fj.at("fold").get<int>();
                f.val_accuracy = fj.at("val_accuracy").get<double>();
                f.test_accuracy = fj.at("test_accuracy").get<double>();
                f.best_epoch = fj.value("best_epoch", -1);
                f.train_originals = fj.value("train_originals", std::size_t{0});
                f.train_variants = fj.value("train_variants", std::size_t{0});
                f.validation_size = fj.value("validation_size", std::size_t{0});
                f.test_size = fj.value("test_size", std::size_t{0});
                if (fj.contains("confusion")) f.test_confusion = confusion_from_json(fj["confusion"]);
                r.folds.push_back(std::move(f));
            }
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed backbone report: ") + e.what());
    }
}

std::string report_csv(std::span<const BackboneReport> reports, const ComparisonReport& comparison) {
    if (reports.size() != comparison.entries.size()) {
        throw Error("report_csv: report and comparison sizes differ");
    }
    std::string out = "name,val_acc,test_acc,params_millions,rel_perf,rel_size\n";
    char line[256];
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const ComparisonEntry& e = comparison.entries[i];
        std::snprintf(line, sizeof line, "%s,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                      reports[i].backbone_name.c_str(), reports[i].val_accuracy,
                      reports[i].test_accuracy, reports[i].param_count_millions,
                      e.relative_performance, e.relative_size);
        out += line;
    }
    return out;
}

} // namespace delc

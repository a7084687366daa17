#include "delc/cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "delc/backbone.hpp"
#include "delc/cli/run_config.hpp"
#include "delc/dataset.hpp"
#include "delc/error.hpp"
#include "delc/eval.hpp"
#include "delc/feature_cache.hpp"
#include "delc/io.hpp"

namespace delc::cli {

namespace fs = std::filesystem;

namespace {

struct GlobalFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    std::optional<std::string> out;
    std::optional<int> stub_dim;
    std::optional<std::string> manifest;
    std::optional<std::string> model_dir;
    std::optional<std::string> cache_dir;
    std::vector<std::string> backbones;
};

RunConfig resolve_config(const GlobalFlags& flags) {
    RunConfig config = flags.config.empty() ? RunConfig{} : load_config(flags.config);
    if (flags.seed) config.seed = *flags.seed;
    if (flags.jobs) config.jobs = *flags.jobs;
    if (flags.out) config.out_dir = *flags.out;
    if (flags.stub_dim) config.stub_dim = *flags.stub_dim;
    if (flags.manifest) config.manifest = *flags.manifest;
    if (flags.model_dir) config.model_dir = *flags.model_dir;
    if (flags.cache_dir) config.cache_dir = *flags.cache_dir;
    if (!flags.backbones.empty()) config.backbones = flags.backbones;
    return config;
}

void require_manifest(const RunConfig& config) {
    if (config.manifest.empty()) {
        throw Error("no manifest given (use --manifest or set 'manifest' in the config)");
    }
}

std::string fixed(double v, int digits) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

// dataset -------------------------------------------------------------------

int cmd_stats(const RunConfig& config, const std::string& label, std::ostream& out) {
    require_manifest(config);
    std::vector<ImageRecord> records = read_records(config.manifest);
    if (label != "all") {
        const Label wanted = parse_label(label);
        std::erase_if(records, [&](const ImageRecord& r) { return r.label != wanted; });
    }
    const ShapeStats s = compute_shape_stats(records);
    out << "records: " << s.count << " (" << label << ")\n";
    out << "mean: " << fixed(s.mean_width, 2) << " x " << fixed(s.mean_height, 2) << "\n";
    if (s.std_defined()) {
        out << "std: " << fixed(*s.std_width, 2) << " x " << fixed(*s.std_height, 2) << "\n";
    } else {
        out << "std: undefined\n";
    }
    return 0;
}

int cmd_filter(const RunConfig& config, const std::string& candidates_path, double k,
               const std::string& output, std::ostream& out) {
    require_manifest(config);
    const std::vector<ImageRecord> reference = read_records(config.manifest);
    std::vector<ImageRecord> positives;
    std::copy_if(reference.begin(), reference.end(), std::back_inserter(positives),
                 [](const ImageRecord& r) { return r.label == Label::positive; });
    std::vector<ImageRecord> candidates;
    if (candidates_path.empty()) {
        std::copy_if(reference.begin(), reference.end(), std::back_inserter(candidates),
                     [](const ImageRecord& r) { return r.label == Label::negative; });
    } else {
        candidates = read_records(candidates_path);
    }
    const ShapeStats stats = compute_shape_stats(positives);
    const std::vector<ImageRecord> kept = filter_negatives(candidates, stats, k);
    const fs::path target = output.empty() ? config.out_dir / "filtered_negatives.jsonl" : fs::path(output);
    write_records(target, kept);
    out << "kept " << kept.size() << " of " << candidates.size() << " candidates -> "
        << target.string() << "\n";
    return 0;
}

int cmd_synth(const RunConfig& config, int n, std::ostream& out) {
    const DatasetManifest m = synth_generate(n, config.seed, config.out_dir);
    out << "wrote " << m.size() << " images to " << (config.out_dir / "manifest.jsonl").string()
        << "\n";
    return 0;
}

// extract -------------------------------------------------------------------

struct Selection {
    BackboneSpec spec;
    std::optional<int> stub_dim;
};

fs::path cache_path(const RunConfig& config, const Selection& sel) {
    std::string file = sel.spec.name;
    if (sel.stub_dim && sel.spec.name != "stub") file += ".stub" + std::to_string(*sel.stub_dim);
    return config.effective_cache_dir() / (file + ".feat");
}

std::vector<Selection> selections(const RunConfig& config) {
    std::vector<Selection> out;
    if (config.backbones.size() == 1 && config.backbones.front() == "stub") {
        const int dim = config.stub_dim.value_or(64);
        out.push_back({stub_backbone(dim), dim});
        return out;
    }
    for (const std::string& name : config.selected_backbones()) {
        out.push_back({find_backbone(name), config.stub_dim});
    }
    return out;
}

std::optional<FeatureCache> load_cache(const fs::path& path, const std::string& name) {
    if (!fs::exists(path)) return std::nullopt;
    return cache_read(path, name);
}

int cmd_extract(const RunConfig& config, std::ostream& out, std::ostream& err) {
    require_manifest(config);
    const DatasetManifest manifest = load_manifest(config.manifest);
    if (!manifest.missing_files().empty()) {
        throw Error(std::to_string(manifest.missing_files().size()) +
                    " manifest images are missing (first: '" + manifest.missing_files().front() + "')");
    }
    const fs::path model_dir = model_directory(config.model_dir);
    int status = 0;
    for (const Selection& sel : selections(config)) {
        try {
            const fs::path path = cache_path(config, sel);
            std::optional<FeatureCache> existing = load_cache(path, sel.spec.name);
            std::vector<const ImageRecord*> todo;
            for (const ImageRecord& r : manifest.records()) {
                if (!existing || !existing->contains(r.id)) todo.push_back(&r);
            }
            std::size_t inferences = 0;
            if (!todo.empty()) {
                auto extractor = make_extractor(sel.spec, sel.stub_dim, model_dir);
                const auto dim = static_cast<std::uint32_t>(extractor->dimension());
                if (existing && existing->dimension() != dim) {
                    throw Error("cache " + path.string() + " has dimension " +
                                std::to_string(existing->dimension()) + ", encoder produces " +
                                std::to_string(dim));
                }
                constexpr std::size_t chunk = 64;
                for (std::size_t begin = 0; begin < todo.size(); begin += chunk) {
                    const std::size_t end = std::min(todo.size(), begin + chunk);
                    std::vector<Image> images;
                    for (std::size_t i = begin; i < end; ++i) images.push_back(load_image(todo[i]->path));
                    const auto values = extractor->extract(images);
                    std::vector<FeatureVector> vectors;
                    for (std::size_t i = begin; i < end; ++i) {
                        vectors.push_back({sel.spec.name, todo[i]->id, values[i - begin]});
                    }
                    cache_append(path, dim, vectors);
                }
                inferences = extractor->inference_count();
            }
            out << sel.spec.name << ": " << todo.size() << " extracted, "
                << manifest.size() - todo.size() << " cached, " << inferences
                << " inferences -> " << path.string() << "\n";
        } catch (const std::exception& e) {
            err << "error: " << sel.spec.name << ": " << e.what() << "\n";
            status = 1;
        }
    }
    return status;
}

// benchmark / report ----------------------------------------------------------

std::string folds_csv(const BackboneReport& r) {
    std::string s = "repetition,fold,val_acc,test_acc,tp,fp,fn,tn,best_epoch\n";
    char buf[256];
    for (const FoldResult& f : r.folds) {
        std::snprintf(buf, sizeof buf, "%d,%d,%.6f,%.6f,%zu,%zu,%zu,%zu,%d\n", f.repetition, f.fold,
                      f.val_accuracy, f.test_accuracy, f.test_confusion.tp, f.test_confusion.fp,
                      f.test_confusion.fn, f.test_confusion.tn, f.best_epoch);
        s += buf;
    }
    return s;
}

void write_comparison(const fs::path& dir, std::span<const BackboneReport> reports) {
    const ComparisonReport comparison = relative_report(reports);
    write_file_atomic(dir / "comparison.json", to_json(comparison).dump(2) + "\n");
    write_file_atomic(dir / "comparison.csv", report_csv(reports, comparison));
}

int cmd_benchmark(const RunConfig& config, std::ostream& out, std::ostream& err) {
    require_manifest(config);
    config.validate();
    const DatasetManifest manifest = load_manifest(config.manifest);
    const fs::path model_dir = model_directory(config.model_dir);
    const AugmentConfig augment = config.effective_augment();
    const TrainConfig train = config.effective_train();
    CvOptions options;
    options.k = config.k;
    options.repetitions = config.repetitions;
    options.seed = config.seed;
    options.validation_fraction = config.validation_fraction;
    options.jobs = config.jobs;

    std::vector<BackboneReport> reports;
    nlohmann::ordered_json status = nlohmann::ordered_json::array();
    for (const Selection& sel : selections(config)) {
        nlohmann::ordered_json entry;
        entry["backbone"] = sel.spec.name;
        try {
            auto extractor = make_extractor(sel.spec, sel.stub_dim, model_dir);
            const fs::path path = cache_path(config, sel);
            FeatureCache cache = load_cache(path, sel.spec.name)
                                     .value_or(FeatureCache(sel.spec.name,
                                                            static_cast<std::uint32_t>(extractor->dimension())));
            ImageFeatureProvider provider(*extractor, cache);
            BackboneReport report = run_cv(manifest, sel.spec, augment, train, options, provider);
            if (!provider.new_entries().empty()) {
                cache_append(path, cache.dimension(), provider.new_entries());
            }
            write_file_atomic(config.out_dir / (sel.spec.name + "_report.json"),
                              to_json(report).dump(2) + "\n");
            write_file_atomic(config.out_dir / (sel.spec.name + "_folds.csv"), folds_csv(report));
            write_file_atomic(config.out_dir / (sel.spec.name + "_confusion.csv"),
                              confusion_csv(report.confusion));
            out << sel.spec.name << ": val " << fixed(report.val_accuracy, 4) << ", test "
                << fixed(report.test_accuracy, 4) << " over " << report.folds.size() << " folds\n";
            entry["status"] = "ok";
            reports.push_back(std::move(report));
        } catch (const std::exception& e) {
            err << "error: " << sel.spec.name << ": " << e.what() << "\n";
            entry["status"] = "failed";
            entry["error"] = e.what();
        }
        status.push_back(std::move(entry));
    }
    if (!reports.empty()) write_comparison(config.out_dir, reports);

    nlohmann::ordered_json run;
    run["command"] = "benchmark";
    run["config_hash"] = config_hash(config);
    run["seed"] = config.seed;
    run["config"] = to_text(config);
    const bool all_ok = reports.size() == status.size();
    run["backbones"] = std::move(status);
    write_file_atomic(config.out_dir / "run.json", run.dump(2) + "\n");
    return all_ok ? 0 : 1;
}

int cmd_report(const RunConfig& config, std::ostream& out) {
    const fs::path& dir = config.out_dir;
    std::vector<fs::path> files;
    for (const BackboneSpec& spec : registry()) {
        const fs::path p = dir / (spec.name + "_report.json");
        if (fs::exists(p)) files.push_back(p);
    }
    std::vector<fs::path> others;
    if (fs::is_directory(dir)) {
        for (const auto& e : fs::directory_iterator(dir)) {
            const std::string name = e.path().filename().string();
            if (name.size() > 12 && name.ends_with("_report.json") &&
                std::find(files.begin(), files.end(), e.path()) == files.end()) {
                others.push_back(e.path());
            }
        }
    }
    std::sort(others.begin(), others.end());
    files.insert(files.end(), others.begin(), others.end());
    if (files.empty()) throw Error("no *_report.json files in " + dir.string());

    std::vector<BackboneReport> reports;
    for (const fs::path& p : files) {
        try {
            reports.push_back(backbone_report_from_json(nlohmann::ordered_json::parse(read_file(p))));
        } catch (const nlohmann::json::exception& e) {
            throw Error(p.string() + ": " + e.what());
        }
    }
    write_comparison(dir, reports);
    const ComparisonReport comparison = relative_report(reports);
    for (const ComparisonEntry& e : comparison.entries) {
        out << std::left << std::setw(12) << e.backbone_name << " test " << fixed(e.test_accuracy, 4)
            << "  rel_perf " << fixed(e.relative_performance, 4) << "  rel_size "
            << fixed(e.relative_size, 4) << "\n";
    }
    return 0;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Frozen-encoder benchmark for two-class ear image classification", "delc"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalFlags flags;
    app.add_option("--config", flags.config, "Run configuration file")->check(CLI::ExistingFile);
    app.add_option("--seed", flags.seed, "Seed for fold plans, augmentation and training");
    app.add_option("--jobs", flags.jobs, "Parallel fold workers")->check(CLI::PositiveNumber);
    app.add_option("--out", flags.out, "Output directory");
    app.add_option("--stub-dim", flags.stub_dim, "Replace encoders with stubs of this dimension")
        ->check(CLI::PositiveNumber);
    app.add_option("--manifest", flags.manifest, "Dataset manifest (JSON lines)");
    app.add_option("--model-dir", flags.model_dir, "Directory holding the ONNX models (lowercased name + .onnx)");
    app.add_option("--cache-dir", flags.cache_dir, "Feature cache directory");
    app.add_option("--backbone", flags.backbones, "Backbone name, 'all' or 'stub' (repeatable)")
        ->delimiter(',');

    auto* dataset = app.add_subcommand("dataset", "Inspect, filter or synthesize manifests");
    dataset->require_subcommand(1);
    std::string label = "positive";
    auto* stats = dataset->add_subcommand("stats", "Mean and spread of image shapes");
    stats->add_option("--label", label, "positive, negative or all")
        ->check(CLI::IsMember({"positive", "negative", "all"}));

    std::string candidates, output;
    double k = 0.0;
    auto* filter = dataset->add_subcommand("filter", "Shape-filter negative candidates");
    filter->add_option("--candidates", candidates, "Candidate manifest (default: manifest negatives)");
    filter->add_option("--k", k, "Tolerance in standard deviations ('inf' keeps all)")->required();
    filter->add_option("--output", output, "Filtered manifest path");

    int synth_n = 0;
    auto* synth = dataset->add_subcommand("synth", "Write a synthetic two-class dataset");
    synth->add_option("--n", synth_n, "Images per class")->required()->check(CLI::PositiveNumber);

    int extract_dim = 0;
    auto* extract = app.add_subcommand("extract", "Fill per-backbone feature caches");
    extract->add_option("--dim", extract_dim, "Stub dimension when --backbone stub")
        ->check(CLI::PositiveNumber);

    auto* benchmark = app.add_subcommand("benchmark", "Repeated k-fold evaluation per backbone");
    auto* report = app.add_subcommand("report", "Rebuild the comparison from report files");

    std::vector<std::string> argv_storage{"delc"};
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_storage) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        RunConfig config = resolve_config(flags);
        if (stats->parsed()) return cmd_stats(config, label, out);
        if (filter->parsed()) return cmd_filter(config, candidates, k, output, out);
        if (synth->parsed()) return cmd_synth(config, synth_n, out);
        if (extract->parsed()) {
            if (extract_dim > 0) config.stub_dim = extract_dim;
            return cmd_extract(config, out, err);
        }
        if (benchmark->parsed()) return cmd_benchmark(config, out, err);
        if (report->parsed()) return cmd_report(config, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

} // namespace delc::cli

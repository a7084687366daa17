// Runs the acceptance criteria and prints one line per criterion.
// Exit status is non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "delc/augment.hpp"
#include "delc/backbone.hpp"
#include "delc/classifier.hpp"
#include "delc/cli/commands.hpp"
#include "delc/dataset.hpp"
#include "delc/eval.hpp"
#include "delc/feature_cache.hpp"
#include "delc/io.hpp"
#include "reference_mlp.hpp"
#include "test_support.hpp"

namespace {

using namespace delc;
namespace fs = std::filesystem;

enum class Outcome { pass, fail, skip };

struct Verdict {
    Outcome outcome = Outcome::pass;
    std::string detail;
};

/// Collects failed checks; the first few are kept for the report line.
class Checks {
public:
    void expect(bool ok, const std::string& what) {
        if (ok) return;
        ++failures_;
        if (failures_ <= 3) first_ += (first_.empty() ? "" : "; ") + what;
    }
    void note(const std::string& text) { notes_ += (notes_.empty() ? "" : ", ") + text; }

    Verdict verdict() const {
        if (failures_ == 0) return {Outcome::pass, notes_};
        return {Outcome::fail, std::to_string(failures_) + " failed: " + first_};
    }

private:
    int failures_ = 0;
    std::string first_;
    std::string notes_;
};

std::string num(double v, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// AC1 ------------------------------------------------------------------------

Verdict bce_oracle() {
    Checks c;
    const std::vector<double> p1 = {0.5}, y1 = {1.0};
    const double l1 = bce_loss<double>(p1, y1);
    c.expect(std::abs(l1 - std::log(2.0)) <= 1e-9, "bce([0.5],[1]) = " + num(l1, 12));

    const std::vector<double> p2 = {0.8, 0.4}, y2 = {1.0, 0.0};
    const double l2 = bce_loss<double>(p2, y2);
    const double direct = -(std::log(0.8) + std::log(1.0 - 0.4)) / 2.0;
    c.expect(std::abs(l2 - 0.366985) <= 1e-6, "bce([0.8,0.4],[1,0]) = " + num(l2, 9));
    c.expect(std::abs(l2 - direct) <= 1e-12, "disagrees with direct evaluation");
    c.note("ln2 err " + num(std::abs(l1 - std::log(2.0)), 15) + ", second " + num(l2, 9));
    return c.verdict();
}

// AC2 ------------------------------------------------------------------------

Verdict gradient_check() {
    Checks c;
    std::mt19937_64 gen(20240);
    double worst = 0;
    for (int instance = 0; instance < 20; ++instance) {
        const int d = 1 + static_cast<int>(gen() % 32);
        const int n = 1 + static_cast<int>(gen() % 8);
        const auto params = init_params<double>(d, gen(), 8);
        const auto batch = testing::random_batch<double>(gen, n, d);
        worst = std::max(worst, testing::max_gradient_error(params, batch, 1e-6, 1e-7));
    }
    c.expect(worst <= 1e-4, "max relative error " + num(worst, 8) + " at 8 hidden units");

    // Full-width head: sampled coordinates of every tensor.
    auto params = init_params<double>(32, 99, kHiddenUnits);
    const auto batch = testing::random_batch<double>(gen, 8, 32);
    const auto analytic = backward(params, batch, 0.0).grads;
    const auto grads = analytic.tensors();
    auto theta = params.tensors();
    double wide = 0;
    const double h = 1e-6;
    for (std::size_t t = 0; t < theta.size(); ++t) {
        const std::size_t samples = std::min<std::size_t>(theta[t].size(), 12);
        for (std::size_t s = 0; s < samples; ++s) {
            const std::size_t i = gen() % theta[t].size();
            const double saved = theta[t][i];
            theta[t][i] = saved + h;
            const double up = testing::reference_loss(params, batch.features, batch.labels);
            theta[t][i] = saved - h;
            const double down = testing::reference_loss(params, batch.features, batch.labels);
            theta[t][i] = saved;
            const double numeric = (up - down) / (2 * h);
            const double denom = std::max({std::abs(grads[t][i]), std::abs(numeric), 1e-7});
            wide = std::max(wide, std::abs(grads[t][i] - numeric) / denom);
        }
    }
    c.expect(wide <= 1e-4, "max relative error " + num(wide, 8) + " at 1024 hidden units");
    c.note("max rel err " + num(worst, 10) + " (20 instances), " + num(wide, 10) + " (1024 units)");
    return c.verdict();
}

// AC3 ------------------------------------------------------------------------

Verdict adam_closed_form() {
    Checks c;
    const TrainConfig cfg;
    for (double g : {0.5, -3.0, 2e-4}) {
        auto params = MlpParams<double>::zeros(1, 1);
        for (auto t : params.tensors()) t[0] = 1.0;
        auto grads = MlpParams<double>::zeros(1, 1);
        for (auto t : grads.tensors()) t[0] = g;
        auto state = AdamState<double>::zeros_like(params);
        adam_step(params, grads, state, cfg, 0);
        // Bias-corrected moments after one step are exactly g and g^2.
        const double m_hat = (1 - cfg.beta1) * g / (1 - cfg.beta1);
        const double v_hat = (1 - cfg.beta2) * g * g / (1 - cfg.beta2);
        const double expected = 1.0 - cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
        const double closed = 1.0 - cfg.learning_rate * g / (std::sqrt(g * g) + cfg.epsilon);
        for (auto t : params.tensors()) {
            c.expect(std::abs(t[0] - closed) <= 1e-9 && std::abs(t[0] - expected) <= 1e-9,
                     "first step for g=" + num(g, 4));
        }
    }

    auto params = init_params<double>(4, 5, 6);
    const auto before = params;
    auto state = AdamState<double>::zeros_like(params);
    adam_step(params, MlpParams<double>::zeros(4, 6), state, cfg, 3);
    const auto a = params.tensors();
    auto b_copy = before;
    const auto b = b_copy.tensors();
    bool fixed = true;
    for (std::size_t t = 0; t < a.size(); ++t) fixed = fixed && std::equal(a[t].begin(), a[t].end(), b[t].begin());
    c.expect(fixed, "zero gradient moved parameters");

    const double lr5 = effective_learning_rate(cfg, 5);
    c.expect(lr5 == 1e-3 / 3, "epoch-5 rate " + num(lr5, 12));
    c.note("epoch-5 lr " + num(lr5 * 1e3, 12) + "e-3");
    return c.verdict();
}

// AC4 ------------------------------------------------------------------------

Verdict cv_structure() {
    Checks c;
    const DatasetManifest m = testing::shape_manifest(342, 350);
    c.expect(m.size() == 692, "manifest size");
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto plans = make_fold_plans(m, 9, 5, seed);
        c.expect(plans.size() == 45, "seed " + std::to_string(seed) + ": plan count");
        std::map<int, std::map<std::string, int>> tested;
        for (const FoldPlan& p : plans) {
            std::unordered_set<std::string> train(p.train_ids.begin(), p.train_ids.end());
            c.expect(train.size() == p.train_ids.size(), "duplicate train id");
            std::size_t pos = 0;
            for (const auto& id : p.test_ids) {
                c.expect(!train.contains(id), "test id in train");
                pos += m.at(id).label == Label::positive;
                ++tested[p.repetition][id];
            }
            c.expect(train.size() + p.test_ids.size() == m.size(), "fold does not cover manifest");
            // 342 / 9 = 38 exactly; 350 / 9 lies between 38 and 39.
            c.expect(pos == 38, "positive test count " + std::to_string(pos));
            const std::size_t neg = p.test_ids.size() - pos;
            c.expect(neg == 38 || neg == 39, "negative test count " + std::to_string(neg));
        }
        for (const auto& [rep, counts] : tested) {
            c.expect(counts.size() == m.size(), "repetition does not test every record");
            for (const auto& [id, n] : counts) c.expect(n == 1, id + " tested twice");
        }
        c.expect(tested.size() == 5, "repetition count");
    }
    c.note("100 seeds x 45 plans");
    return c.verdict();
}

// AC5 ------------------------------------------------------------------------

Verdict augmentation_protocol() {
    Checks c;
    std::vector<SourceImage> originals;
    for (int i = 0; i < 350; ++i) {
        originals.push_back({"src" + std::to_string(i), testing::noise_image(96, 160, 1000 + i)});
    }
    AugmentConfig cfg;
    cfg.seed = 17;
    c.expect(cfg.target_per_class == 2100, "default target per class");
    const AugmentedClass a = augment_class_to_count(originals, cfg);
    c.expect(a.images.size() == 2100, "expanded to " + std::to_string(a.images.size()));
    c.expect(a.provenance.size() == 1750, "variant count " + std::to_string(a.provenance.size()));
    for (int i = 0; i < 350; ++i) c.expect(a.images[i].image == originals[i].image, "original altered");
    std::map<std::string, int> per_source;
    std::set<std::string> ids;
    for (std::size_t i = 0; i < originals.size(); ++i) ids.insert(a.images[i].id);
    for (const VariantPlan& p : a.provenance) {
        ++per_source[p.source_id];
        c.expect(ids.insert(p.variant_id).second, "duplicate id " + p.variant_id);
    }
    c.expect(per_source.size() == 350, "not every source used");
    for (const auto& [id, n] : per_source) c.expect(n == 5, id + " used " + std::to_string(n) + " times");

    const Image& img = originals[0].image;
    c.expect(apply_brightness(img, 0.0) == img, "brightness 0 not identity");
    c.expect(apply_contrast(img, 0.0) == img, "contrast 0 not identity");
    c.expect(apply_shift_scale_rotate(img, 0, 0, 1, 0) == img, "identity warp changed pixels");
    c.expect(apply_variant(img, VariantPlan{}) == img, "empty plan changed pixels");
    for (const auto& o : originals) c.expect(apply_hflip(apply_hflip(o.image)) == o.image, "hflip twice");

    const AugmentedClass again = augment_class_to_count(originals, cfg);
    bool same = again.provenance == a.provenance && again.images.size() == a.images.size();
    for (std::size_t i = 0; same && i < a.images.size(); ++i) {
        same = again.images[i].id == a.images[i].id && again.images[i].image.pixels == a.images[i].image.pixels;
    }
    c.expect(same, "same seed gave different output");
    c.note("350 -> 2100, 1750 variants");
    return c.verdict();
}

// AC6 ------------------------------------------------------------------------

Verdict no_leakage(const fs::path& work) {
    Checks c;
    const DatasetManifest m = synth_generate(40, 6, work / "leak");
    StubExtractor extractor("stub", 16);
    FeatureCache cache("stub", 16);
    ImageFeatureProvider provider(extractor, cache);
    AugmentConfig augment;
    augment.target_per_class = 80;
    augment.seed = 6;
    TrainConfig train;
    train.hidden_units = 32;
    train.epochs = 3;
    train.seed = 6;
    CvOptions opt;
    opt.k = 9;
    opt.repetitions = 5;
    opt.seed = 6;

    const auto plans = make_fold_plans(m, opt.k, opt.repetitions, opt.seed);
    std::size_t violations = 0, audited = 0, variants = 0;
    opt.on_fold = [&](const FoldAudit& a) {
        ++audited;
        const std::unordered_set<std::string> test(a.test_ids.begin(), a.test_ids.end());
        const std::unordered_set<std::string> train_set(a.train_ids.begin(), a.train_ids.end());
        for (const auto& id : a.train_ids) violations += test.contains(id);
        for (const auto& id : a.validation_ids) violations += test.contains(id);
        for (const VariantPlan& p : a.provenance) {
            violations += test.contains(p.source_id) || test.contains(p.variant_id);
            violations += !train_set.contains(p.source_id);
        }
        variants += a.provenance.size();
        const FoldPlan& plan = plans[static_cast<std::size_t>(a.repetition * opt.k + a.fold)];
        std::vector<std::string> expected = plan.test_ids, got = a.test_ids;
        std::sort(expected.begin(), expected.end());
        std::sort(got.begin(), got.end());
        c.expect(expected == got, "audited test set differs from fold plan");
    };
    const BackboneReport r = run_cv(m, stub_backbone(16), augment, train, opt, provider);
    c.expect(audited == 45, "audited " + std::to_string(audited) + " folds");
    c.expect(variants > 0, "no augmentation happened");
    c.expect(violations == 0, std::to_string(violations) + " violations");
    c.expect(r.leakage_violations == 0, "run reported leakage");
    c.note(std::to_string(audited) + " folds, " + std::to_string(variants) + " variants, " +
           std::to_string(violations) + " violations");
    return c.verdict();
}

// AC7 ------------------------------------------------------------------------

int cli(const std::vector<std::string>& args, std::string& err_text) {
    std::ostringstream out, err;
    const int code = cli::run_cli(args, out, err);
    err_text = err.str();
    return code;
}

Verdict desk_benchmark(const fs::path& work) {
    Checks c;
    const std::string data = (work / "e2e").string();
    std::string err;
    c.expect(cli({"--out", data, "--seed", "1", "dataset", "synth", "--n", "200"}, err) == 0, "synth: " + err);
    const fs::path config = work / "e2e.conf";
    write_file_atomic(config, "manifest = \"" + data + "/manifest.jsonl\"\nout_dir = \"" + data +
                                  "/results\"\nbackbones = \"stub\"\nstub_dim = 64\nk = 9\n"
                                  "repetitions = 3\nseed = 1\n[augment]\ntarget_per_class = 400\n"
                                  "[train]\nepochs = 10\n");
    c.expect(cli({"--config", config.string(), "benchmark"}, err) == 0, "benchmark: " + err);
    const fs::path report = fs::path(data) / "results" / "stub_report.json";
    if (!fs::exists(report)) {
        c.expect(false, "no report written");
        return c.verdict();
    }
    const auto j = nlohmann::json::parse(read_file(report));
    const double test = j.at("test_accuracy").get<double>();
    c.expect(j.at("folds").size() == 27, "fold count");
    c.expect(test >= 0.95, "mean test accuracy " + num(test, 4));
    c.note("mean test acc " + num(test, 4) + " over " + std::to_string(j.at("folds").size()) + " folds");
    return c.verdict();
}

// AC8 ------------------------------------------------------------------------

Verdict table_arithmetic() {
    Checks c;
    const auto table = nlohmann::json::parse(read_file(testing::fixture("reference_results.json")));
    std::map<std::string, nlohmann::json> rows;
    for (const auto& row : table) rows[row.at("name").get<std::string>()] = row;
    std::vector<BackboneReport> reports;
    for (const BackboneSpec& spec : registry()) {
        if (!rows.contains(spec.name)) {
            c.expect(false, spec.name + " missing from table");
            continue;
        }
        const auto& row = rows.at(spec.name);
        c.expect(std::abs(spec.param_count_millions - std::stod(row.at("params").get<std::string>())) < 1e-12,
                 spec.name + " parameter count");
        BackboneReport r;
        r.backbone_name = spec.name;
        r.val_accuracy = row.at("val_acc").get<double>();
        r.test_accuracy = row.at("test_acc").get<double>();
        r.param_count_millions = spec.param_count_millions;
        reports.push_back(r);
    }
    c.expect(reports.size() == 11, "registry size");
    const ComparisonReport cmp = relative_report(reports);
    std::map<std::string, ComparisonEntry> e;
    for (const auto& x : cmp.entries) e[x.backbone_name] = x;
    const double inc_perf = e["InceptionV3"].relative_performance;
    const double mob_perf = e["MobileNet"].relative_performance;
    const double vgg_size = e["VGG19"].relative_size;
    const double mob_size = e["MobileNet"].relative_size;
    const double ratio = e["InceptionV3"].relative_size / mob_size;
    c.expect(inc_perf == 1.0, "InceptionV3 rel_perf " + num(inc_perf));
    c.expect(std::abs(mob_perf - 0.9898) <= 1e-4, "MobileNet rel_perf " + num(mob_perf));
    c.expect(vgg_size == 1.0, "VGG19 rel_size " + num(vgg_size));
    c.expect(std::abs(mob_size - 0.0299) <= 1e-4, "MobileNet rel_size " + num(mob_size));
    c.expect(std::abs(ratio - 5.56) <= 0.01, "size ratio " + num(ratio, 4));
    c.note("MobileNet rel_perf " + num(mob_perf, 5) + ", rel_size " + num(mob_size, 5) +
           ", InceptionV3/MobileNet size " + num(ratio, 3));
    return c.verdict();
}

// AC9 ------------------------------------------------------------------------

Verdict full_reproduction(const fs::path& work) {
    const char* manifest = std::getenv("DELC_DATASET");
    const char* models = std::getenv("DELC_MODEL_DIR");
    if (manifest == nullptr || *manifest == '\0' || models == nullptr || *models == '\0') {
        return {Outcome::skip, "set DELC_DATASET and DELC_MODEL_DIR to run (hours)"};
    }
    Checks c;
    const fs::path out = work / "full";
    std::string err;
    const std::vector<std::string> args = {"--manifest", manifest, "--model-dir", models,
                                           "--out", out.string(), "--backbone", "all", "benchmark"};
    c.expect(cli(args, err) == 0, "benchmark: " + err);
    const auto table = nlohmann::json::parse(read_file(testing::fixture("reference_results.json")));
    std::vector<std::pair<double, std::string>> ranked;
    for (const auto& row : table) {
        const std::string name = row.at("name").get<std::string>();
        const fs::path p = out / (name + "_report.json");
        if (!fs::exists(p)) {
            c.expect(false, name + " has no report");
            continue;
        }
        const BackboneReport r = backbone_report_from_json(nlohmann::ordered_json::parse(read_file(p)));
        const double expected = row.at("test_acc").get<double>();
        c.expect(std::abs(r.test_accuracy - expected) <= 0.03,
                 name + " test " + num(r.test_accuracy, 3) + " vs " + num(expected, 3));
        const double gap = overfit_gap(r);
        c.expect(gap >= 0.5 && gap <= 3.5, name + " val-test gap " + num(gap, 2));
        ranked.emplace_back(r.test_accuracy, name);
    }
    std::sort(ranked.rbegin(), ranked.rend());
    for (std::size_t i = 0; i < std::min<std::size_t>(2, ranked.size()); ++i) {
        const auto r = backbone_report_from_json(
            nlohmann::ordered_json::parse(read_file(out / (ranked[i].second + "_report.json"))));
        const auto& cm = r.confusion;
        const double recall_pos = static_cast<double>(cm.tp) / static_cast<double>(std::max<std::size_t>(1, cm.tp + cm.fn));
        const double recall_neg = static_cast<double>(cm.tn) / static_cast<double>(std::max<std::size_t>(1, cm.tn + cm.fp));
        c.expect(std::abs(recall_pos - recall_neg) <= 0.10, ranked[i].second + " recall gap");
    }
    return c.verdict();
}

} // namespace

int main() {
    const testing::TempDir work;
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"AC1 bce oracle", bce_oracle},
        {"AC2 gradient check", gradient_check},
        {"AC3 adam closed form", adam_closed_form},
        {"AC4 cv structure", cv_structure},
        {"AC5 augmentation protocol", augmentation_protocol},
        {"AC6 no leakage", [&] { return no_leakage(work.path()); }},
        {"AC7 desk-scale benchmark", [&] { return desk_benchmark(work.path()); }},
        {"AC8 relative report arithmetic", table_arithmetic},
        {"AC9 full reproduction", [&] { return full_reproduction(work.path()); }},
    };
    const std::map<std::string, double> budget = {
        {"AC1 bce oracle", 1.0},           {"AC2 gradient check", 30.0},
        {"AC4 cv structure", 10.0},        {"AC5 augmentation protocol", 120.0},
        {"AC7 desk-scale benchmark", 300.0},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {Outcome::fail, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (v.outcome == Outcome::pass && budget.contains(name) && secs > budget.at(name)) {
            v = {Outcome::fail, "over time budget of " + num(budget.at(name), 0) + " s; " + v.detail};
        }
        const char* tag = v.outcome == Outcome::pass ? "PASS" : v.outcome == Outcome::fail ? "FAIL" : "SKIP";
        failed += v.outcome == Outcome::fail;
        std::printf("%s %s: %s (%.2f s)\n", tag, name.c_str(), v.detail.c_str(), secs);
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}

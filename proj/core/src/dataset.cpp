#include "delc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "delc/error.hpp"
#include "delc/io.hpp"
#include "delc/rng.hpp"

namespace delc {

namespace fs = std::filesystem;

std::string_view to_string(Label label) noexcept {
    return label == Label::positive ? "positive" : "negative";
}

std::string_view to_string(Source source) noexcept {
    switch (source) {
    case Source::delc_ulpgc: return "DELC_ULPGC";
    case Source::awe: return "AWE";
    case Source::synthetic: return "synthetic";
    }
    return "synthetic";
}

Label parse_label(std::string_view text) {
    if (text == "positive") return Label::positive;
    if (text == "negative") return Label::negative;
    throw Error("unknown label '" + std::string(text) + "'");
}

Source parse_source(std::string_view text) {
    if (text == "DELC_ULPGC") return Source::delc_ulpgc;
    if (text == "AWE") return Source::awe;
    if (text == "synthetic") return Source::synthetic;
    throw Error("unknown source '" + std::string(text) + "'");
}

// DatasetManifest -------------------------------------------------------------

DatasetManifest::DatasetManifest(std::vector<ImageRecord> records) : records_(std::move(records)) {
    index_.reserve(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const ImageRecord& r = records_[i];
        if (r.id.empty()) {
            throw Error("record " + std::to_string(i) + " has an empty id");
        }
        if (r.width < 1 || r.height < 1) {
            throw Error("record '" + r.id + "' has non-positive dimensions");
        }
        if (!index_.emplace(r.id, i).second) {
            throw Error("duplicate id '" + r.id + "'");
        }
        (r.label == Label::positive ? counts_.positive : counts_.negative) += 1;
    }
}

const ImageRecord& DatasetManifest::at(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) {
        throw Error("id '" + std::string(id) + "' not in manifest");
    }
    return records_[it->second];
}

bool DatasetManifest::contains(std::string_view id) const {
    return index_.contains(std::string(id));
}

std::vector<ImageRecord> DatasetManifest::with_label(Label label) const {
    std::vector<ImageRecord> out;
    std::copy_if(records_.begin(), records_.end(), std::back_inserter(out),
                 [label](const ImageRecord& r) { return r.label == label; });
    return out;
}

// Manifest I/O ----------------------------------------------------------------

std::vector<ImageRecord> read_records(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open manifest " + path.string());
    }
    const fs::path base = fs::absolute(path).parent_path();
    std::vector<ImageRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            ImageRecord r;
            r.id = j.at("id").get<std::string>();
            fs::path p = fs::path(j.at("path").get<std::string>());
            r.path = p.is_absolute() ? p : (base / p).lexically_normal();
            r.label = parse_label(j.at("label").get<std::string>());
            r.width = j.at("width").get<int>();
            r.height = j.at("height").get<int>();
            r.source = parse_source(j.at("source").get<std::string>());
            records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw Error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const Error& e) {
            throw Error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

void write_records(const fs::path& path, std::span<const ImageRecord> records) {
    const fs::path base = fs::absolute(path).parent_path();
    std::ostringstream out;
    for (const ImageRecord& r : records) {
        nlohmann::ordered_json j;
        j["id"] = r.id;
        j["path"] = fs::absolute(r.path).lexically_proximate(base).generic_string();
        j["label"] = to_string(r.label);
        j["width"] = r.width;
        j["height"] = r.height;
        j["source"] = to_string(r.source);
        out << j.dump() << '\n';
    }
    write_file_atomic(path, out.str());
}

DatasetManifest load_manifest(const fs::path& path) {
    DatasetManifest manifest(read_records(path));
    if (manifest.counts().positive == 0 || manifest.counts().negative == 0) {
        throw Error("manifest " + path.string() + " has zero records in " +
                    (manifest.counts().positive == 0 ? "positive" : "negative") + " class");
    }
    std::vector<std::string> missing;
    for (const ImageRecord& r : manifest.records()) {
        std::error_code ec;
        if (!fs::is_regular_file(r.path, ec)) {
            missing.push_back(r.id);
        }
    }
    manifest.set_missing_files(std::move(missing));
    return manifest;
}

// Shape statistics and filtering ----------------------------------------------

ShapeStats compute_shape_stats(std::span<const ImageRecord> records) {
    if (records.empty()) {
        throw Error("compute_shape_stats: no records");
    }
    ShapeStats s;
    s.count = records.size();
    const double n = static_cast<double>(records.size());
    for (const ImageRecord& r : records) {
        s.mean_width += r.width;
        s.mean_height += r.height;
    }
    s.mean_width /= n;
    s.mean_height /= n;
    if (records.size() >= 2) {
        double vw = 0.0, vh = 0.0;
        for (const ImageRecord& r : records) {
            vw += (r.width - s.mean_width) * (r.width - s.mean_width);
            vh += (r.height - s.mean_height) * (r.height - s.mean_height);
        }
        s.std_width = std::sqrt(vw / n);
        s.std_height = std::sqrt(vh / n);
    }
    return s;
}

std::vector<ImageRecord> filter_negatives(std::span<const ImageRecord> candidates,
                                          const ShapeStats& stats, double k) {
    if (std::isnan(k) || k <= 0.0) {
        throw Error("filter_negatives: k must be positive");
    }
    if (std::isinf(k)) {
        return {candidates.begin(), candidates.end()};
    }
    if (!stats.std_defined()) {
        throw Error("filter_negatives: standard deviation undefined (fewer than two records)");
    }
    const double w_lo = stats.mean_width - k * *stats.std_width;
    const double w_hi = stats.mean_width + k * *stats.std_width;
    const double h_lo = stats.mean_height - k * *stats.std_height;
    const double h_hi = stats.mean_height + k * *stats.std_height;
    std::vector<ImageRecord> kept;
    for (const ImageRecord& r : candidates) {
        if (r.width >= w_lo && r.width <= w_hi && r.height >= h_lo && r.height <= h_hi) {
            kept.push_back(r);
        }
    }
    return kept;
}

// Fold planning ---------------------------------------------------------------

std::vector<FoldPlan> make_fold_plans(const DatasetManifest& manifest, int k, int repetitions,
                                      std::uint64_t seed) {
    if (k < 2) {
        throw Error("make_fold_plans: k must be at least 2");
    }
    if (repetitions < 1) {
        throw Error("make_fold_plans: repetitions must be at least 1");
    }
    const auto& records = manifest.records();
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < records.size(); ++i) {
        by_class[static_cast<int>(records[i].label)].push_back(i);
    }
    for (int c = 0; c < 2; ++c) {
        if (by_class[c].size() < static_cast<std::size_t>(k)) {
            throw Error("make_fold_plans: class " + std::string(to_string(static_cast<Label>(c))) +
                        " has " + std::to_string(by_class[c].size()) + " members, fewer than k=" +
                        std::to_string(k));
        }
    }

    std::vector<FoldPlan> plans;
    plans.reserve(static_cast<std::size_t>(k) * repetitions);
    std::vector<int> fold_of(records.size());
    for (int rep = 0; rep < repetitions; ++rep) {
        Rng rng(mix_seed({seed, static_cast<std::uint64_t>(rep), 0xf01d5ULL}));
        for (int c = 1; c >= 0; --c) {
            std::vector<std::size_t> order = by_class[c];
            rng.shuffle(std::span<std::size_t>(order));
            for (std::size_t pos = 0; pos < order.size(); ++pos) {
                fold_of[order[pos]] = static_cast<int>(pos % static_cast<std::size_t>(k));
            }
        }
        for (int f = 0; f < k; ++f) {
            FoldPlan plan;
            plan.repetition = rep;
            plan.fold = f;
            for (std::size_t i = 0; i < records.size(); ++i) {
                (fold_of[i] == f ? plan.test_ids : plan.train_ids).push_back(records[i].id);
            }
            plans.push_back(std::move(plan));
        }
    }
    return plans;
}

nlohmann::ordered_json to_json(const FoldPlan& plan) {
    nlohmann::ordered_json j;
    j["repetition"] = plan.repetition;
    j["fold"] = plan.fold;
    j["train_ids"] = plan.train_ids;
    j["test_ids"] = plan.test_ids;
    return j;
}

nlohmann::ordered_json to_json(std::span<const FoldPlan> plans) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const FoldPlan& p : plans) {
        arr.push_back(to_json(p));
    }
    return arr;
}

// Synthetic fixtures ----------------------------------------------------------

SynthEarParams draw_synth_params(std::uint64_t seed, Label label, int index) {
    Rng rng(mix_seed({seed, static_cast<std::uint64_t>(label), static_cast<std::uint64_t>(index),
                      0x5e7a11ULL}));
    SynthEarParams p;
    p.width = std::clamp(static_cast<int>(std::lround(82.0 + 6.0 * rng.normal())), 60, 110);
    p.height = std::clamp(static_cast<int>(std::lround(159.0 + 10.0 * rng.normal())), 120, 200);
    p.center_x = p.width * rng.uniform(0.47, 0.53);
    p.center_y = p.height * rng.uniform(0.47, 0.53);
    p.radius_x = p.width * rng.uniform(0.38, 0.44);
    p.radius_y = p.height * rng.uniform(0.40, 0.46);
    p.skin_r = static_cast<std::uint8_t>(190 + rng.below(31));
    p.skin_g = static_cast<std::uint8_t>(145 + rng.below(31));
    p.skin_b = static_cast<std::uint8_t>(120 + rng.below(31));
    p.noise_seed = rng.next();
    if (label == Label::positive) {
        p.crease = true;
        const double angle = rng.uniform(35.0, 55.0) * std::numbers::pi / 180.0;
        const double length = 0.55 * std::numbers::sqrt2 * p.radius_x * rng.uniform(0.9, 1.1);
        p.crease_x0 = p.center_x - 0.25 * p.radius_x;
        p.crease_y0 = p.center_y + 0.45 * p.radius_y;
        p.crease_x1 = p.crease_x0 + length * std::cos(angle);
        p.crease_y1 = p.crease_y0 + length * std::sin(angle);
        p.crease_half_width = rng.uniform(1.5, 2.0);
        p.crease_darkening = 70 + static_cast<int>(rng.below(31));
    }
    return p;
}

namespace {

double segment_distance(double px, double py, double x0, double y0, double x1, double y1) {
    const double dx = x1 - x0, dy = y1 - y0;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((px - x0) * dx + (py - y0) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double ex = x0 + t * dx - px, ey = y0 + t * dy - py;
    return std::sqrt(ex * ex + ey * ey);
}

std::uint8_t clamp_u8(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

} // namespace

Image render_synth_ear(const SynthEarParams& p) {
    Image img(p.width, p.height);
    Rng noise(p.noise_seed);
    const double skin[3] = {double(p.skin_r), double(p.skin_g), double(p.skin_b)};
    for (int y = 0; y < p.height; ++y) {
        for (int x = 0; x < p.width; ++x) {
            const double nx = (x - p.center_x) / p.radius_x;
            const double ny = (y - p.center_y) / p.radius_y;
            const double r2 = nx * nx + ny * ny;
            double shade;
            if (r2 <= 1.0) {
                shade = 1.05 - 0.25 * r2;
                const double r = std::sqrt(r2);
                if (r > 0.78 && r < 0.86) {
                    shade -= 0.16; // helix ridge
                }
                const double cx = nx / 0.35, cy = (ny + 0.15) / 0.35;
                if (cx * cx + cy * cy <= 1.0) {
                    shade -= 0.14; // concha
                }
            } else {
                shade = 0.55;
            }
            double dark = 0.0;
            if (p.crease) {
                const double d = segment_distance(x, y, p.crease_x0, p.crease_y0, p.crease_x1,
                                                  p.crease_y1);
                if (d <= p.crease_half_width) {
                    dark = p.crease_darkening;
                } else if (d < p.crease_half_width + 1.0) {
                    dark = p.crease_darkening * (p.crease_half_width + 1.0 - d);
                }
            }
            const double jitter = noise.uniform(-6.0, 6.0);
            for (int c = 0; c < 3; ++c) {
                img.at(x, y, c) = clamp_u8(skin[c] * shade - dark + jitter);
            }
        }
    }
    return img;
}

DatasetManifest synth_generate(int n_per_class, std::uint64_t seed, const fs::path& out_dir) {
    if (n_per_class < 1) {
        throw Error("synth_generate: n_per_class must be at least 1");
    }
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    if (ec) {
        throw Error("synth_generate: cannot create " + (out_dir / "images").string() + ": " +
                    ec.message());
    }
    std::vector<ImageRecord> records;
    for (Label label : {Label::positive, Label::negative}) {
        const char* prefix = label == Label::positive ? "pos" : "neg";
        for (int i = 0; i < n_per_class; ++i) {
            const SynthEarParams params = draw_synth_params(seed, label, i);
            char name[32];
            std::snprintf(name, sizeof name, "%s_%05d", prefix, i);
            ImageRecord r;
            r.id = name;
            r.path = out_dir / "images" / (std::string(name) + ".png");
            r.label = label;
            r.width = params.width;
            r.height = params.height;
            r.source = Source::synthetic;
            save_png(render_synth_ear(params), r.path);
            records.push_back(std::move(r));
        }
    }
    write_records(out_dir / "manifest.jsonl", records);
    return DatasetManifest(std::move(records));
}

} // namespace delc

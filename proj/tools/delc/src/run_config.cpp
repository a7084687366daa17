#include "delc/cli/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>

#include "delc/backbone.hpp"
#include "delc/error.hpp"
#include "delc/io.hpp"
#include "delc/rng.hpp"

namespace delc::cli {

namespace fs = std::filesystem;

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
    T value{};
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end) {
        throw Error("config: invalid value '" + std::string(text) + "' for '" + std::string(key) + "'");
    }
    return value;
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string quote(std::string_view s) {
    if (s.find('"') != std::string_view::npos || s.find('\n') != std::string_view::npos) {
        throw Error("config: string values may not contain quotes or newlines");
    }
    return "\"" + std::string(s) + "\"";
}

std::vector<std::string> split_list(std::string_view text) {
    std::vector<std::string> out;
    while (!text.empty()) {
        const auto comma = text.find(',');
        const auto item = trim(text.substr(0, comma));
        if (!item.empty()) out.emplace_back(item);
        if (comma == std::string_view::npos) break;
        text.remove_prefix(comma + 1);
    }
    return out;
}

struct Key {
    std::string_view section;
    std::string_view name;
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Key int_key(std::string_view section, std::string_view name, T& (*field)(RunConfig&)) {
    return {section, name,
            [=](RunConfig& c, std::string_view v) { field(c) = parse_number<T>(name, v); },
            [=](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); }};
}

Key double_key(std::string_view section, std::string_view name, double& (*field)(RunConfig&)) {
    return {section, name,
            [=](RunConfig& c, std::string_view v) { field(c) = parse_number<double>(name, v); },
            [=](const RunConfig& c) { return format_double(field(const_cast<RunConfig&>(c))); }};
}

Key path_key(std::string_view name, fs::path& (*field)(RunConfig&)) {
    return {"", name, [=](RunConfig& c, std::string_view v) { field(c) = fs::path(std::string(v)); },
            [=](const RunConfig& c) { return quote(field(const_cast<RunConfig&>(c)).string()); }};
}

const std::vector<Key>& keys() {
    static const std::vector<Key> table = {
        path_key("manifest", [](RunConfig& c) -> fs::path& { return c.manifest; }),
        {"", "backbones",
         [](RunConfig& c, std::string_view v) {
             c.backbones = split_list(v);
             if (c.backbones.empty()) throw Error("config: 'backbones' is empty");
         },
         [](const RunConfig& c) {
             std::string joined;
             for (const auto& b : c.backbones) joined += (joined.empty() ? "" : ",") + b;
             return quote(joined);
         }},
        {"", "stub_dim",
         [](RunConfig& c, std::string_view v) {
             if (v.empty() || v == "none") {
                 c.stub_dim.reset();
             } else {
                 c.stub_dim = parse_number<int>("stub_dim", v);
             }
         },
         [](const RunConfig& c) { return c.stub_dim ? std::to_string(*c.stub_dim) : "none"; }},
        path_key("model_dir", [](RunConfig& c) -> fs::path& { return c.model_dir; }),
        path_key("out_dir", [](RunConfig& c) -> fs::path& { return c.out_dir; }),
        path_key("cache_dir", [](RunConfig& c) -> fs::path& { return c.cache_dir; }),
        int_key<int>("", "k", [](RunConfig& c) -> int& { return c.k; }),
        int_key<int>("", "repetitions", [](RunConfig& c) -> int& { return c.repetitions; }),
        int_key<std::uint64_t>("", "seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; }),
        int_key<int>("", "jobs", [](RunConfig& c) -> int& { return c.jobs; }),
        double_key("", "validation_fraction",
                   [](RunConfig& c) -> double& { return c.validation_fraction; }),

        double_key("augment", "brightness_limit",
                   [](RunConfig& c) -> double& { return c.augment.brightness_limit; }),
        double_key("augment", "contrast_limit",
                   [](RunConfig& c) -> double& { return c.augment.contrast_limit; }),
        int_key<int>("augment", "blur_kernel_max",
                     [](RunConfig& c) -> int& { return c.augment.blur_kernel_max; }),
        double_key("augment", "shift_limit",
                   [](RunConfig& c) -> double& { return c.augment.shift_limit; }),
        double_key("augment", "scale_limit",
                   [](RunConfig& c) -> double& { return c.augment.scale_limit; }),
        double_key("augment", "rotate_limit",
                   [](RunConfig& c) -> double& { return c.augment.rotate_limit; }),
        double_key("augment", "probability",
                   [](RunConfig& c) -> double& { return c.augment.per_transform_probability; }),
        int_key<int>("augment", "target_per_class",
                     [](RunConfig& c) -> int& { return c.augment.target_per_class; }),

        double_key("train", "learning_rate",
                   [](RunConfig& c) -> double& { return c.train.learning_rate; }),
        double_key("train", "decay", [](RunConfig& c) -> double& { return c.train.decay; }),
        double_key("train", "beta1", [](RunConfig& c) -> double& { return c.train.beta1; }),
        double_key("train", "beta2", [](RunConfig& c) -> double& { return c.train.beta2; }),
        double_key("train", "epsilon", [](RunConfig& c) -> double& { return c.train.epsilon; }),
        int_key<int>("train", "batch_size", [](RunConfig& c) -> int& { return c.train.batch_size; }),
        int_key<int>("train", "epochs", [](RunConfig& c) -> int& { return c.train.epochs; }),
        double_key("train", "prob_clip", [](RunConfig& c) -> double& { return c.train.prob_clip; }),
        int_key<int>("train", "hidden_units",
                     [](RunConfig& c) -> int& { return c.train.hidden_units; }),
    };
    return table;
}

std::string_view unquote(std::string_view v, int line) {
    if (!v.empty() && v.front() == '"') {
        if (v.size() < 2 || v.back() != '"') {
            throw Error("config line " + std::to_string(line) + ": unterminated string");
        }
        return v.substr(1, v.size() - 2);
    }
    return v;
}

std::string_view strip_comment(std::string_view line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_string = !in_string;
        if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

} // namespace

fs::path RunConfig::effective_cache_dir() const {
    return cache_dir.empty() ? out_dir / "features" : cache_dir;
}

AugmentConfig RunConfig::effective_augment() const {
    AugmentConfig a = augment;
    a.seed = seed;
    return a;
}

TrainConfig RunConfig::effective_train() const {
    TrainConfig t = train;
    t.seed = seed;
    return t;
}

std::vector<std::string> RunConfig::selected_backbones() const {
    if (backbones.size() == 1 && backbones.front() == "stub") return backbones;
    const bool all = std::find(backbones.begin(), backbones.end(), "all") != backbones.end();
    if (all && backbones.size() != 1) {
        throw Error("'all' cannot be combined with other backbone names");
    }
    std::vector<std::string> names;
    for (const BackboneSpec& spec : registry()) {
        if (all || std::find(backbones.begin(), backbones.end(), spec.name) != backbones.end()) {
            names.push_back(spec.name);
        }
    }
    if (!all) {
        for (const auto& b : backbones) find_backbone(b);
    }
    return names;
}

void RunConfig::validate() const {
    if (k < 2) throw Error("k must be at least 2");
    if (repetitions < 1) throw Error("repetitions must be at least 1");
    if (jobs < 1) throw Error("jobs must be at least 1");
    if (stub_dim && *stub_dim <= 0) throw Error("stub_dim must be positive");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
        throw Error("validation_fraction must lie in [0, 1)");
    }
    selected_backbones();
    effective_augment().validate();
    effective_train().validate();
}

RunConfig parse_config(std::string_view text) {
    RunConfig config;
    std::string section;
    std::vector<std::string> seen;
    int line_no = 0;
    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string_view line = trim(strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw Error("config line " + std::to_string(line_no) + ": malformed section header");
            }
            section = std::string(trim(line.substr(1, line.size() - 2)));
            if (section != "augment" && section != "train") {
                throw Error("config line " + std::to_string(line_no) + ": unknown section [" +
                            section + "]");
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw Error("config line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string_view name = trim(line.substr(0, eq));
        const std::string_view value = unquote(trim(line.substr(eq + 1)), line_no);
        const auto& table = keys();
        auto it = std::find_if(table.begin(), table.end(), [&](const Key& k) {
            return k.section == section && k.name == name;
        });
        if (it == table.end()) {
            const std::string where = section.empty() ? "" : " in [" + section + "]";
            throw Error("config line " + std::to_string(line_no) + ": unknown key '" +
                        std::string(name) + "'" + where);
        }
        const std::string qualified = section + "." + std::string(name);
        if (std::find(seen.begin(), seen.end(), qualified) != seen.end()) {
            throw Error("config line " + std::to_string(line_no) + ": duplicate key '" +
                        std::string(name) + "'");
        }
        seen.push_back(qualified);
        it->set(config, value);
    }
    return config;
}

RunConfig load_config(const fs::path& path) {
    try {
        return parse_config(read_file(path));
    } catch (const Error& e) {
        throw Error(path.string() + ": " + e.what());
    }
}

std::string to_text(const RunConfig& config) {
    std::string out;
    std::string_view section;
    for (const Key& k : keys()) {
        if (k.section != section) {
            section = k.section;
            out += "\n[" + std::string(section) + "]\n";
        }
        out += std::string(k.name) + " = " + k.get(config) + "\n";
    }
    return out;
}

std::string config_hash(const RunConfig& config) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(to_text(config))));
    return buf;
}

} // namespace delc::cli

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "delc/augment.hpp"
#include "delc/classifier.hpp"

namespace delc::cli {

/// Everything a benchmark run depends on. `seed` is shared by fold
/// planning, augmentation and head initialization.
struct RunConfig {
    std::filesystem::path manifest;
    /// Registry names, or the single entry "all" or "stub".
    std::vector<std::string> backbones{"all"};
    /// When set, every selected backbone is replaced by a stub encoder of
    /// this dimension that keeps the backbone's name and parameter count.
    std::optional<int> stub_dim;
    std::filesystem::path model_dir = "models";
    std::filesystem::path out_dir = "out";
    /// Empty means <out_dir>/features.
    std::filesystem::path cache_dir;

    int k = 9;
    int repetitions = 5;
    std::uint64_t seed = 0;
    int jobs = 1;
    double validation_fraction = 0.1;

    AugmentConfig augment;
    TrainConfig train;

    std::filesystem::path effective_cache_dir() const;
    AugmentConfig effective_augment() const;
    TrainConfig effective_train() const;

    /// Registry entries in registry order (or just "stub"); throws on
    /// unknown names.
    std::vector<std::string> selected_backbones() const;

    void validate() const;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Parses the key = value format. Keys before any section header are run
/// settings; `[augment]` and `[train]` hold the respective parameters.
/// `#` starts a comment. Strings may be bare or double-quoted.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Canonical text listing every key; parse_config(to_text(c)) == c.
std::string to_text(const RunConfig& config);

/// FNV-1a of the canonical text, as 16 hex digits.
std::string config_hash(const RunConfig& config);

} // namespace delc::cli

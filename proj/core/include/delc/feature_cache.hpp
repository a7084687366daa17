#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "delc/backbone.hpp"

namespace delc {

/// In-memory feature store for one backbone, ordered by insertion.
///
/// On-disk layout (little-endian):
///   "DELCFEAT" | u32 version | u32 dimension
///   then per entry: u16 id length | UTF-8 id | dimension x f32
class FeatureCache {
public:
    static constexpr std::uint32_t format_version = 1;

    FeatureCache(std::string backbone_name, std::uint32_t dimension);

    const std::string& backbone_name() const noexcept { return backbone_name_; }
    std::uint32_t dimension() const noexcept { return dimension_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    bool contains(std::string_view id) const;
    /// nullptr when absent.
    const std::vector<float>* find(std::string_view id) const;
    const std::vector<FeatureVector>& entries() const noexcept { return entries_; }

    /// Throws on dimension mismatch, duplicate id, overlong id or non-finite values.
    void insert(std::string id, std::vector<float> values);

private:
    std::string backbone_name_;
    std::uint32_t dimension_;
    std::vector<FeatureVector> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

void cache_write(const std::filesystem::path& path, const FeatureCache& cache);
FeatureCache cache_read(const std::filesystem::path& path, std::string backbone_name);

/// Appends entries to an existing file, creating it (with header) if absent.
/// Throws if the file's dimension differs from `dimension`.
void cache_append(const std::filesystem::path& path, std::uint32_t dimension,
                  std::span<const FeatureVector> vectors);

} // namespace delc

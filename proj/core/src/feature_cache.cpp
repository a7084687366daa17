#include "delc/feature_cache.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "delc/error.hpp"
#include "delc/io.hpp"

namespace delc {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'D', 'E', 'L', 'C', 'F', 'E', 'A', 'T'};
constexpr std::size_t kHeaderSize = 16;

static_assert(std::endian::native == std::endian::little,
              "feature cache I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get(std::string_view data, std::size_t& pos) {
    if (pos + sizeof(T) > data.size()) {
        throw Error("feature cache truncated");
    }
    T value;
    std::memcpy(&value, data.data() + pos, sizeof(T));
    pos += sizeof(T);
    return value;
}

std::string header(std::uint32_t dimension) {
    std::string out(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, FeatureCache::format_version);
    put<std::uint32_t>(out, dimension);
    return out;
}

void encode_entry(std::string& out, const std::string& id, std::span<const float> values) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(id.size()));
    out.append(id);
    for (float v : values) {
        put<float>(out, v);
    }
}

std::uint32_t parse_header(std::string_view data, const fs::path& path) {
    if (data.size() < kHeaderSize || std::memcmp(data.data(), kMagic, sizeof kMagic) != 0) {
        throw Error("corrupt feature cache header: " + path.string());
    }
    std::size_t pos = sizeof kMagic;
    const auto version = get<std::uint32_t>(data, pos);
    if (version != FeatureCache::format_version) {
        throw Error("unsupported feature cache version " + std::to_string(version) + ": " +
                    path.string());
    }
    const auto dim = get<std::uint32_t>(data, pos);
    if (dim == 0) {
        throw Error("corrupt feature cache header (zero dimension): " + path.string());
    }
    return dim;
}

} // namespace

FeatureCache::FeatureCache(std::string backbone_name, std::uint32_t dimension)
    : backbone_name_(std::move(backbone_name)), dimension_(dimension) {
    if (dimension == 0) {
        throw Error("FeatureCache: dimension must be positive");
    }
}

bool FeatureCache::contains(std::string_view id) const { return index_.contains(std::string(id)); }

const std::vector<float>* FeatureCache::find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : &entries_[it->second].values;
}

void FeatureCache::insert(std::string id, std::vector<float> values) {
    if (values.size() != dimension_) {
        throw Error("feature dimension mismatch for '" + id + "': got " +
                    std::to_string(values.size()) + ", cache holds " + std::to_string(dimension_));
    }
    if (id.size() > std::numeric_limits<std::uint16_t>::max()) {
        throw Error("feature id too long");
    }
    for (float v : values) {
        if (!std::isfinite(v)) {
            throw Error("non-finite feature value for '" + id + "'");
        }
    }
    if (index_.contains(id)) {
        throw Error("duplicate feature id '" + id + "'");
    }
    index_.emplace(id, entries_.size());
    entries_.push_back({backbone_name_, std::move(id), std::move(values)});
}

void cache_write(const fs::path& path, const FeatureCache& cache) {
    std::string out = header(cache.dimension());
    out.reserve(kHeaderSize + cache.size() * (cache.dimension() * 4 + 24));
    for (const FeatureVector& fv : cache.entries()) {
        encode_entry(out, fv.image_id, fv.values);
    }
    write_file_atomic(path, out);
}

FeatureCache cache_read(const fs::path& path, std::string backbone_name) {
    const std::string data = read_file(path);
    const std::uint32_t dim = parse_header(data, path);
    FeatureCache cache(std::move(backbone_name), dim);
    std::size_t pos = kHeaderSize;
    while (pos < data.size()) {
        const auto len = get<std::uint16_t>(data, pos);
        if (pos + len + static_cast<std::size_t>(dim) * 4 > data.size()) {
            throw Error("feature cache truncated: " + path.string());
        }
        std::string id(data.data() + pos, len);
        pos += len;
        std::vector<float> values(dim);
        std::memcpy(values.data(), data.data() + pos, static_cast<std::size_t>(dim) * 4);
        pos += static_cast<std::size_t>(dim) * 4;
        cache.insert(std::move(id), std::move(values));
    }
    return cache;
}

void cache_append(const fs::path& path, std::uint32_t dimension,
                  std::span<const FeatureVector> vectors) {
    for (const FeatureVector& fv : vectors) {
        if (fv.values.size() != dimension) {
            throw Error("feature dimension mismatch on append for '" + fv.image_id + "'");
        }
    }
    std::error_code ec;
    const bool exists = fs::exists(path, ec);
    if (exists) {
        std::ifstream in(path, std::ios::binary);
        std::string head(kHeaderSize, '\0');
        in.read(head.data(), static_cast<std::streamsize>(kHeaderSize));
        head.resize(static_cast<std::size_t>(in.gcount()));
        const std::uint32_t on_disk = parse_header(head, path);
        if (on_disk != dimension) {
            throw Error("feature dimension mismatch on append: file has " +
                        std::to_string(on_disk) + ", entries have " + std::to_string(dimension));
        }
    } else if (path.has_parent_path()) {
        fs::create_directories(path.parent_path(), ec);
    }
    std::string out = exists ? std::string() : header(dimension);
    for (const FeatureVector& fv : vectors) {
        encode_entry(out, fv.image_id, fv.values);
    }
    std::ofstream file(path, std::ios::binary | std::ios::app);
    if (!file) {
        throw Error("cannot open feature cache for append: " + path.string());
    }
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) {
        throw Error("append failed: " + path.string());
    }
}

} // namespace delc

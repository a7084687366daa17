#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "delc/dataset.hpp"
#include "delc/image.hpp"

namespace delc::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "delc") {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::filesystem::path fixture(const std::string& name) {
    return std::filesystem::path(DELC_FIXTURE_DIR) / name;
}

inline Image constant_image(int w, int h, std::uint8_t v) { return Image(w, h, v); }

/// Deterministic pseudo-random pixels from a small LCG.
inline Image noise_image(int w, int h, std::uint32_t seed) {
    Image img(w, h, 0);
    std::uint32_t s = seed * 2654435761u + 1u;
    for (auto& p : img.pixels) {
        s = s * 1664525u + 1013904223u;
        p = static_cast<std::uint8_t>(s >> 24);
    }
    return img;
}

/// Records with no backing files, for fold-planning tests.
inline DatasetManifest shape_manifest(std::size_t positives, std::size_t negatives) {
    std::vector<ImageRecord> records;
    for (std::size_t i = 0; i < positives + negatives; ++i) {
        ImageRecord r;
        r.id = (i < positives ? "p" : "n") + std::to_string(i);
        r.path = r.id + ".png";
        r.label = i < positives ? Label::positive : Label::negative;
        r.width = 82;
        r.height = 159;
        records.push_back(std::move(r));
    }
    return DatasetManifest(std::move(records));
}

} // namespace delc::testing

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace delc {

/// 8-bit RGB image, row-major, interleaved channels.
struct Image {
    static constexpr int channels = 3;

    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(int w, int h, std::uint8_t fill = 0);

    bool valid() const noexcept {
        return width > 0 && height > 0 &&
               pixels.size() == static_cast<std::size_t>(width) * height * channels;
    }

    std::size_t offset(int x, int y) const noexcept {
        return (static_cast<std::size_t>(y) * width + x) * channels;
    }
    std::uint8_t& at(int x, int y, int c) noexcept { return pixels[offset(x, y) + c]; }
    std::uint8_t at(int x, int y, int c) const noexcept { return pixels[offset(x, y) + c]; }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Luma (BT.601) of one pixel.
double gray_at(const Image& img, int x, int y) noexcept;

/// Mean luma over the whole image.
double gray_mean(const Image& img);

/// Reads any format OpenCV can decode; result is RGB.
Image load_image(const std::filesystem::path& path);

/// Writes PNG atomically.
void save_png(const Image& img, const std::filesystem::path& path);

} // namespace delc

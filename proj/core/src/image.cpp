#include "delc/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "delc/error.hpp"
#include "delc/io.hpp"

namespace delc {

Image::Image(int w, int h, std::uint8_t fill)
    : width(w), height(h),
      pixels(static_cast<std::size_t>(w > 0 ? w : 0) * (h > 0 ? h : 0) * channels, fill) {}

double gray_at(const Image& img, int x, int y) noexcept {
    const std::size_t o = img.offset(x, y);
    return 0.299 * img.pixels[o] + 0.587 * img.pixels[o + 1] + 0.114 * img.pixels[o + 2];
}

double gray_mean(const Image& img) {
    if (!img.valid()) {
        throw Error("gray_mean: invalid image");
    }
    double sum = 0.0;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            sum += gray_at(img, x, y);
        }
    }
    return sum / (static_cast<double>(img.width) * img.height);
}

Image load_image(const std::filesystem::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) {
        throw Error("cannot decode image " + path.string());
    }
    Image img(bgr.cols, bgr.rows);
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            img.at(x, y, 0) = row[x][2];
            img.at(x, y, 1) = row[x][1];
            img.at(x, y, 2) = row[x][0];
        }
    }
    return img;
}

void save_png(const Image& img, const std::filesystem::path& path) {
    if (!img.valid()) {
        throw Error("save_png: invalid image");
    }
    cv::Mat bgr(img.height, img.width, CV_8UC3);
    for (int y = 0; y < img.height; ++y) {
        auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < img.width; ++x) {
            row[x] = cv::Vec3b(img.at(x, y, 2), img.at(x, y, 1), img.at(x, y, 0));
        }
    }
    std::vector<uchar> encoded;
    if (!cv::imencode(".png", bgr, encoded)) {
        throw Error("PNG encoding failed for " + path.string());
    }
    write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(encoded.data()),
                                             encoded.size()));
}

} // namespace delc

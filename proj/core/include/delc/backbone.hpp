#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "delc/image.hpp"

namespace delc {

enum class PixelScaling {
    unit_interval, ///< v / 255
    signed_unit,   ///< v / 127.5 - 1
    mean_std,      ///< (v * mean_std_scale - mean[c]) / stddev[c], after channel reorder
};

enum class ChannelOrder { rgb, bgr };
enum class TensorLayout { nchw, nhwc };

struct BackboneSpec {
    std::string name;
    double param_count_millions = 0.0;
    int input_size = 224;
    PixelScaling scaling = PixelScaling::unit_interval;
    std::array<float, 3> mean{0.f, 0.f, 0.f};
    std::array<float, 3> stddev{1.f, 1.f, 1.f};
    float mean_std_scale = 1.f;
    ChannelOrder channel_order = ChannelOrder::rgb;
    TensorLayout layout = TensorLayout::nchw;
    std::optional<std::filesystem::path> model_path;
};

/// The eleven compared encoders, in the order reports list them.
const std::vector<BackboneSpec>& registry();

/// Throws delc::Error for unknown names.
const BackboneSpec& find_backbone(std::string_view name);

/// Model-free encoder used by tests and desk-scale runs.
BackboneSpec stub_backbone(int dim);

/// `DELC_MODEL_DIR` if set, else `fallback`.
std::filesystem::path model_directory(const std::filesystem::path& fallback);

/// Absolute model path: model_path if absolute, else model_dir / (model_path or name.onnx).
std::filesystem::path resolve_model_path(const BackboneSpec& spec,
                                         const std::filesystem::path& model_dir);

/// Preprocessed encoder input, height x width x channels interleaved.
struct Tensor {
    int height = 0;
    int width = 0;
    int channels = 3;
    std::vector<float> values;

    float at(int y, int x, int c) const noexcept {
        return values[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

/// Bilinear resize (half-pixel centers, border clamp) to input_size^2,
/// channel reorder, then per-spec pixel scaling.
Tensor preprocess(const Image& img, const BackboneSpec& spec);

struct FeatureVector {
    std::string backbone_name;
    std::string image_id;
    std::vector<float> values;

    friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

/// Mean over H x W for each channel of a C x H x W map.
std::vector<float> global_average_pool(std::span<const float> chw, int channels, int height,
                                       int width);

/// Pretrained encoder loaded from an ONNX file. Inference is serialized
/// internally, so one handle can be shared between threads.
class OnnxEncoder {
public:
    OnnxEncoder(const BackboneSpec& spec, const std::filesystem::path& model_file);
    ~OnnxEncoder();
    OnnxEncoder(OnnxEncoder&&) noexcept;
    OnnxEncoder& operator=(OnnxEncoder&&) noexcept;

    const BackboneSpec& spec() const noexcept { return spec_; }

    /// Terminal channel count, discovered by a probe inference at load time.
    int feature_dim() const noexcept { return feature_dim_; }

    /// One vector per tensor. Spatial outputs are globally average pooled.
    std::vector<std::vector<float>> run(std::span<const Tensor> batch);

private:
    struct Impl;
    BackboneSpec spec_;
    std::unique_ptr<Impl> impl_;
    int feature_dim_ = 0;
};

/// Runs the encoder over a preprocessed batch, tagging results with ids.
std::vector<FeatureVector> extract(OnnxEncoder& encoder, std::span<const std::string> ids,
                                   std::span<const Tensor> batch);

/// Seeded random projection of the 16x16 downsampled gray image.
FeatureVector stub_extract(const Image& img, std::string_view name, int dim,
                           std::string image_id = {});

/// Image-in, vector-out encoder used by the benchmark pipeline.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual const std::string& name() const = 0;
    virtual int dimension() const = 0;
    virtual std::vector<std::vector<float>> extract(std::span<const Image> images) = 0;

    /// Number of images passed through the encoder so far.
    std::size_t inference_count() const noexcept { return inferences_; }

protected:
    void count_inferences(std::size_t n) noexcept { inferences_ += n; }

private:
    std::size_t inferences_ = 0;
};

class StubExtractor final : public FeatureExtractor {
public:
    StubExtractor(std::string name, int dim);
    const std::string& name() const override { return name_; }
    int dimension() const override { return dim_; }
    std::vector<std::vector<float>> extract(std::span<const Image> images) override;

private:
    std::string name_;
    int dim_;
    std::vector<float> projection_;
};

class OnnxExtractor final : public FeatureExtractor {
public:
    OnnxExtractor(const BackboneSpec& spec, const std::filesystem::path& model_file,
                  int batch_size = 16);
    const std::string& name() const override { return encoder_.spec().name; }
    int dimension() const override { return encoder_.feature_dim(); }
    std::vector<std::vector<float>> extract(std::span<const Image> images) override;

private:
    OnnxEncoder encoder_;
    int batch_size_;
};

/// Stub when stub_dim is set, otherwise the backbone's ONNX model.
std::unique_ptr<FeatureExtractor> make_extractor(const BackboneSpec& spec,
                                                 std::optional<int> stub_dim,
                                                 const std::filesystem::path& model_dir);

} // namespace delc

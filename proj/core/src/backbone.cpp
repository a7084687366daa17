#include "delc/backbone.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>

#include <opencv2/core.hpp>
#include <opencv2/dnn.hpp>

#include "delc/error.hpp"
#include "delc/rng.hpp"

namespace delc {

namespace fs = std::filesystem;

namespace {

BackboneSpec keras_signed(std::string name, double params, int size) {
    BackboneSpec s;
    s.name = std::move(name);
    s.param_count_millions = params;
    s.input_size = size;
    s.scaling = PixelScaling::signed_unit;
    s.channel_order = ChannelOrder::rgb;
    return s;
}

// BGR mean subtraction used by the VGG and ResNet families.
BackboneSpec keras_caffe(std::string name, double params) {
    BackboneSpec s;
    s.name = std::move(name);
    s.param_count_millions = params;
    s.input_size = 224;
    s.scaling = PixelScaling::mean_std;
    s.mean = {103.939f, 116.779f, 123.68f};
    s.stddev = {1.f, 1.f, 1.f};
    s.mean_std_scale = 1.f;
    s.channel_order = ChannelOrder::bgr;
    return s;
}

// ImageNet mean/std on [0, 1] inputs used by the DenseNet family.
BackboneSpec keras_torch(std::string name, double params) {
    BackboneSpec s;
    s.name = std::move(name);
    s.param_count_millions = params;
    s.input_size = 224;
    s.scaling = PixelScaling::mean_std;
    s.mean = {0.485f, 0.456f, 0.406f};
    s.stddev = {0.229f, 0.224f, 0.225f};
    s.mean_std_scale = 1.f / 255.f;
    s.channel_order = ChannelOrder::rgb;
    return s;
}

std::vector<BackboneSpec> build_registry() {
    std::vector<BackboneSpec> r = {
        keras_signed("Xception", 22.9, 299),
        keras_caffe("VGG16", 138.4),
        keras_caffe("VGG19", 143.7),
        keras_caffe("ResNet50", 25.6),
        keras_caffe("ResNet101", 44.7),
        keras_caffe("ResNet152", 60.4),
        keras_signed("MobileNet", 4.3, 224),
        keras_signed("InceptionV3", 23.9, 299),
        keras_torch("DenseNet121", 8.1),
        keras_torch("DenseNet169", 14.3),
        keras_torch("DenseNet201", 20.2),
    };
    for (BackboneSpec& s : r) {
        // Keras encoders exported to ONNX keep channels-last tensors.
        s.layout = TensorLayout::nhwc;
        std::string file = s.name;
        std::transform(file.begin(), file.end(), file.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        s.model_path = file + ".onnx";
    }
    return r;
}

constexpr int kStubGrid = 16;

std::vector<float> stub_projection(std::string_view name, int dim) {
    Rng rng(fnv1a64(name));
    const int n = kStubGrid * kStubGrid;
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    std::vector<float> proj(static_cast<std::size_t>(dim) * n);
    for (float& v : proj) {
        v = static_cast<float>(rng.normal() * scale);
    }
    return proj;
}

// Area-averaged luma on a kStubGrid x kStubGrid grid, centered on zero.
std::vector<float> stub_grid(const Image& img) {
    std::vector<float> grid(kStubGrid * kStubGrid);
    for (int gy = 0; gy < kStubGrid; ++gy) {
        const int y0 = gy * img.height / kStubGrid;
        const int y1 = std::max(y0 + 1, (gy + 1) * img.height / kStubGrid);
        for (int gx = 0; gx < kStubGrid; ++gx) {
            const int x0 = gx * img.width / kStubGrid;
            const int x1 = std::max(x0 + 1, (gx + 1) * img.width / kStubGrid);
            double sum = 0.0;
            int count = 0;
            for (int y = y0; y < std::min(y1, img.height); ++y) {
                for (int x = x0; x < std::min(x1, img.width); ++x) {
                    sum += gray_at(img, x, y);
                    ++count;
                }
            }
            grid[gy * kStubGrid + gx] = static_cast<float>(sum / (255.0 * count) - 0.5);
        }
    }
    return grid;
}

std::vector<float> stub_project(const Image& img, std::span<const float> proj, int dim) {
    if (!img.valid()) {
        throw Error("stub_extract: invalid image");
    }
    const std::vector<float> grid = stub_grid(img);
    std::vector<float> out(dim, 0.f);
    const std::size_t n = grid.size();
    for (int d = 0; d < dim; ++d) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += static_cast<double>(proj[d * n + i]) * grid[i];
        }
        out[d] = static_cast<float>(acc);
    }
    return out;
}

} // namespace

const std::vector<BackboneSpec>& registry() {
    static const std::vector<BackboneSpec> specs = build_registry();
    return specs;
}

const BackboneSpec& find_backbone(std::string_view name) {
    for (const BackboneSpec& s : registry()) {
        if (s.name == name) {
            return s;
        }
    }
    throw Error("unknown backbone '" + std::string(name) + "'");
}

BackboneSpec stub_backbone(int dim) {
    if (dim < 1) {
        throw Error("stub backbone dimension must be positive");
    }
    BackboneSpec s;
    s.name = "stub";
    s.param_count_millions = static_cast<double>(dim) * kStubGrid * kStubGrid / 1e6;
    s.input_size = 32;
    s.scaling = PixelScaling::unit_interval;
    return s;
}

fs::path model_directory(const fs::path& fallback) {
    if (const char* env = std::getenv("DELC_MODEL_DIR"); env != nullptr && *env != '\0') {
        return fs::path(env);
    }
    return fallback;
}

fs::path resolve_model_path(const BackboneSpec& spec, const fs::path& model_dir) {
    const fs::path file = spec.model_path.value_or(fs::path(spec.name + ".onnx"));
    return file.is_absolute() ? file : model_dir / file;
}

Tensor preprocess(const Image& img, const BackboneSpec& spec) {
    if (img.width <= 0 || img.height <= 0 || !img.valid()) {
        throw Error("preprocess: zero-area or malformed image");
    }
    const int size = spec.input_size;
    Tensor t;
    t.height = size;
    t.width = size;
    t.channels = 3;
    t.values.resize(static_cast<std::size_t>(size) * size * 3);

    const double sx_scale = static_cast<double>(img.width) / size;
    const double sy_scale = static_cast<double>(img.height) / size;
    const int order[3] = {spec.channel_order == ChannelOrder::rgb ? 0 : 2, 1,
                          spec.channel_order == ChannelOrder::rgb ? 2 : 0};
    for (int y = 0; y < size; ++y) {
        const double sy = std::clamp((y + 0.5) * sy_scale - 0.5, 0.0, img.height - 1.0);
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double fy = sy - y0;
        for (int x = 0; x < size; ++x) {
            const double sx = std::clamp((x + 0.5) * sx_scale - 0.5, 0.0, img.width - 1.0);
            const int x0 = static_cast<int>(sx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double fx = sx - x0;
            for (int c = 0; c < 3; ++c) {
                const int src = order[c];
                const double top = (1 - fx) * img.at(x0, y0, src) + fx * img.at(x1, y0, src);
                const double bot = (1 - fx) * img.at(x0, y1, src) + fx * img.at(x1, y1, src);
                const double v = (1 - fy) * top + fy * bot;
                double scaled = 0.0;
                switch (spec.scaling) {
                case PixelScaling::unit_interval: scaled = v / 255.0; break;
                case PixelScaling::signed_unit: scaled = v / 127.5 - 1.0; break;
                case PixelScaling::mean_std:
                    scaled = (v * spec.mean_std_scale - spec.mean[c]) / spec.stddev[c];
                    break;
                }
                t.values[(static_cast<std::size_t>(y) * size + x) * 3 + c] =
                    static_cast<float>(scaled);
            }
        }
    }
    return t;
}

std::vector<float> global_average_pool(std::span<const float> chw, int channels, int height,
                                       int width) {
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    if (chw.size() != plane * channels || plane == 0) {
        throw Error("global_average_pool: size mismatch");
    }
    std::vector<float> out(channels);
    for (int c = 0; c < channels; ++c) {
        double sum = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            sum += chw[c * plane + i];
        }
        out[c] = static_cast<float>(sum / static_cast<double>(plane));
    }
    return out;
}

// OnnxEncoder -----------------------------------------------------------------

struct OnnxEncoder::Impl {
    cv::dnn::Net net;
    std::mutex mutex;
};

OnnxEncoder::OnnxEncoder(const BackboneSpec& spec, const fs::path& model_file)
    : spec_(spec), impl_(std::make_unique<Impl>()) {
    std::error_code ec;
    if (!fs::is_regular_file(model_file, ec)) {
        throw Error("model file for backbone '" + spec.name + "' not found: " +
                    model_file.string());
    }
    try {
        impl_->net = cv::dnn::readNetFromONNX(model_file.string());
    } catch (const cv::Exception& e) {
        throw Error("cannot load model " + model_file.string() + ": " + e.what());
    }
    if (impl_->net.empty()) {
        throw Error("cannot load model " + model_file.string());
    }
    impl_->net.setPreferableBackend(cv::dnn::DNN_BACKEND_OPENCV);
    impl_->net.setPreferableTarget(cv::dnn::DNN_TARGET_CPU);

    Tensor probe;
    probe.height = probe.width = spec.input_size;
    probe.values.assign(static_cast<std::size_t>(spec.input_size) * spec.input_size * 3, 0.f);
    feature_dim_ = static_cast<int>(run(std::span(&probe, 1)).front().size());
}

OnnxEncoder::~OnnxEncoder() = default;
OnnxEncoder::OnnxEncoder(OnnxEncoder&&) noexcept = default;
OnnxEncoder& OnnxEncoder::operator=(OnnxEncoder&&) noexcept = default;

std::vector<std::vector<float>> OnnxEncoder::run(std::span<const Tensor> batch) {
    if (batch.empty()) {
        return {};
    }
    const int n = static_cast<int>(batch.size());
    const int s = spec_.input_size;
    for (const Tensor& t : batch) {
        if (t.height != s || t.width != s || t.channels != 3 ||
            t.values.size() != static_cast<std::size_t>(s) * s * 3) {
            throw Error("input shape mismatch for backbone '" + spec_.name + "': expected " +
                        std::to_string(s) + "x" + std::to_string(s) + "x3");
        }
    }
    const bool nchw = spec_.layout == TensorLayout::nchw;
    const int shape[4] = {n, nchw ? 3 : s, nchw ? s : s, nchw ? s : 3};
    cv::Mat blob(4, shape, CV_32F);
    auto* dst = blob.ptr<float>();
    const std::size_t plane = static_cast<std::size_t>(s) * s;
    for (int i = 0; i < n; ++i) {
        const std::vector<float>& v = batch[i].values;
        float* sample = dst + static_cast<std::size_t>(i) * plane * 3;
        if (nchw) {
            for (std::size_t p = 0; p < plane; ++p) {
                for (int c = 0; c < 3; ++c) {
                    sample[c * plane + p] = v[p * 3 + c];
                }
            }
        } else {
            std::copy(v.begin(), v.end(), sample);
        }
    }

    cv::Mat out;
    {
        std::lock_guard lock(impl_->mutex);
        try {
            impl_->net.setInput(blob);
            out = impl_->net.forward().clone();
        } catch (const cv::Exception& e) {
            throw Error("inference failed for backbone '" + spec_.name + "': " + e.what());
        }
    }
    if (out.dims < 2 || out.size[0] != n || !out.isContinuous() || out.type() != CV_32F) {
        throw Error("unexpected output shape from backbone '" + spec_.name + "'");
    }
    const std::size_t per_sample = out.total() / static_cast<std::size_t>(n);
    const float* data = out.ptr<float>();
    std::vector<std::vector<float>> result;
    result.reserve(n);
    for (int i = 0; i < n; ++i) {
        std::span<const float> sample(data + static_cast<std::size_t>(i) * per_sample, per_sample);
        std::vector<float> vec;
        if (out.dims == 4 && nchw) {
            vec = global_average_pool(sample, out.size[1], out.size[2], out.size[3]);
        } else if (out.dims == 4) {
            const int h = out.size[1], w = out.size[2], c = out.size[3];
            vec.assign(c, 0.f);
            std::vector<double> acc(c, 0.0);
            for (int p = 0; p < h * w; ++p) {
                for (int ch = 0; ch < c; ++ch) {
                    acc[ch] += sample[static_cast<std::size_t>(p) * c + ch];
                }
            }
            for (int ch = 0; ch < c; ++ch) {
                vec[ch] = static_cast<float>(acc[ch] / (h * w));
            }
        } else {
            vec.assign(sample.begin(), sample.end());
        }
        for (float f : vec) {
            if (!std::isfinite(f)) {
                throw Error("non-finite feature from backbone '" + spec_.name + "'");
            }
        }
        result.push_back(std::move(vec));
    }
    return result;
}

std::vector<FeatureVector> extract(OnnxEncoder& encoder, std::span<const std::string> ids,
                                   std::span<const Tensor> batch) {
    if (ids.size() != batch.size()) {
        throw Error("extract: id count does not match batch size");
    }
    auto values = encoder.run(batch);
    std::vector<FeatureVector> out;
    out.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        out.push_back({encoder.spec().name, ids[i], std::move(values[i])});
    }
    return out;
}

FeatureVector stub_extract(const Image& img, std::string_view name, int dim, std::string image_id) {
    if (dim < 1) {
        throw Error("stub_extract: dim must be positive");
    }
    const std::vector<float> proj = stub_projection(name, dim);
    return {std::string(name), std::move(image_id), stub_project(img, proj, dim)};
}

// Extractors ------------------------------------------------------------------

StubExtractor::StubExtractor(std::string name, int dim) : name_(std::move(name)), dim_(dim) {
    if (dim < 1) {
        throw Error("StubExtractor: dim must be positive");
    }
    projection_ = stub_projection(name_, dim_);
}

std::vector<std::vector<float>> StubExtractor::extract(std::span<const Image> images) {
    std::vector<std::vector<float>> out;
    out.reserve(images.size());
    for (const Image& img : images) {
        out.push_back(stub_project(img, projection_, dim_));
    }
    count_inferences(images.size());
    return out;
}

OnnxExtractor::OnnxExtractor(const BackboneSpec& spec, const fs::path& model_file, int batch_size)
    : encoder_(spec, model_file), batch_size_(std::max(1, batch_size)) {}

std::vector<std::vector<float>> OnnxExtractor::extract(std::span<const Image> images) {
    std::vector<std::vector<float>> out;
    out.reserve(images.size());
    for (std::size_t start = 0; start < images.size(); start += batch_size_) {
        const std::size_t end = std::min(images.size(), start + batch_size_);
        std::vector<Tensor> batch;
        batch.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) {
            batch.push_back(preprocess(images[i], encoder_.spec()));
        }
        for (auto& v : encoder_.run(batch)) {
            out.push_back(std::move(v));
        }
    }
    count_inferences(images.size());
    return out;
}

std::unique_ptr<FeatureExtractor> make_extractor(const BackboneSpec& spec,
                                                 std::optional<int> stub_dim,
                                                 const fs::path& model_dir) {
    if (stub_dim) {
        return std::make_unique<StubExtractor>(spec.name, *stub_dim);
    }
    return std::make_unique<OnnxExtractor>(spec, resolve_model_path(spec, model_dir));
}

} // namespace delc

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace delc {

/// Width of each of the two dense layers in the trainable head.
inline constexpr int kHiddenUnits = 1024;

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// Head parameters: D -> H (ReLU) -> H (ReLU) -> 1 (sigmoid).
template <typename S>
struct MlpParams {
    Matrix<S> w1; ///< D x H
    Vector<S> b1; ///< H
    Matrix<S> w2; ///< H x H
    Vector<S> b2; ///< H
    Vector<S> w3; ///< H
    S b3 = S(0);

    static MlpParams zeros(int input_dim, int hidden_units);

    int input_dim() const noexcept { return static_cast<int>(w1.rows()); }
    int hidden_units() const noexcept { return static_cast<int>(w1.cols()); }

    /// Contiguous views of w1, b1, w2, b2, w3, b3 in that order.
    std::array<std::span<S>, 6> tensors();
    std::array<std::span<const S>, 6> tensors() const;

    bool all_finite() const;
    std::size_t parameter_count() const;

    template <typename T>
    MlpParams<T> cast() const {
        return {w1.template cast<T>(), b1.template cast<T>(), w2.template cast<T>(),
                b2.template cast<T>(), w3.template cast<T>(), static_cast<T>(b3)};
    }
};

struct TrainConfig {
    double learning_rate = 1e-3;
    /// Inverse-time decay per epoch: lr / (1 + decay * epoch).
    double decay = 0.4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int batch_size = 32;
    int epochs = 20;
    std::uint64_t seed = 0;
    double prob_clip = 1e-7;
    int hidden_units = kHiddenUnits;

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

template <typename S>
struct Batch {
    Matrix<S> features; ///< N x D
    Vector<S> labels;   ///< N, values in {0, 1}
};

template <typename S>
struct AdamState {
    MlpParams<S> m;
    MlpParams<S> v;
    std::int64_t t = 0;

    static AdamState zeros_like(const MlpParams<S>& params);
};

/// He-normal weights (std sqrt(2 / fan_in)), zero biases.
template <typename S>
MlpParams<S> init_params(int feature_dim, std::uint64_t seed, int hidden_units = kHiddenUnits);

/// Probabilities clipped to [prob_clip, 1 - prob_clip].
template <typename S>
Vector<S> forward(const MlpParams<S>& params, const Matrix<S>& features, double prob_clip = 1e-7);

/// Mean binary cross-entropy, natural log.
template <typename S>
double bce_loss(std::span<const S> probabilities, std::span<const S> labels);

template <typename S>
struct Gradients {
    MlpParams<S> grads;
    double loss = 0.0;
    Vector<S> probabilities;
};

/// Analytic gradient of bce_loss(forward(.)) averaged over the batch.
template <typename S>
Gradients<S> backward(const MlpParams<S>& params, const Batch<S>& batch, double prob_clip = 1e-7);

double effective_learning_rate(const TrainConfig& cfg, int epoch);

/// One bias-corrected Adam update in place; increments state.t.
template <typename S>
void adam_step(MlpParams<S>& params, const MlpParams<S>& grads, AdamState<S>& state,
               const TrainConfig& cfg, int epoch);

struct EpochRecord {
    int epoch = 0;
    double learning_rate = 0.0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

template <typename S>
struct TrainResult {
    MlpParams<S> params;
    std::vector<EpochRecord> history;
    /// -1 when no epoch ran.
    int best_epoch = -1;
    double best_val_accuracy = 0.0;
};

/// Mini-batch training with per-epoch seeded shuffles. Returns the parameters
/// of the epoch with the highest validation accuracy (earliest on ties); with
/// an empty validation set the last epoch wins.
template <typename S>
TrainResult<S> train(const Matrix<S>& train_features, std::span<const int> train_labels,
                     const Matrix<S>& val_features, std::span<const int> val_labels,
                     const TrainConfig& cfg);

/// 1 iff p >= threshold.
template <typename S>
std::vector<int> predict(const MlpParams<S>& params, const Matrix<S>& features,
                         double threshold = 0.5, double prob_clip = 1e-7);

double accuracy(std::span<const int> predictions, std::span<const int> labels);

/// "DELCHEAD" | u32 version | u32 D [| u32 H when version 2] | f32 row-major
/// w1, b1, w2, b2, w3, b3. Version 1 is written when H == kHiddenUnits.
void save_head(const std::filesystem::path& path, const MlpParams<float>& params);
MlpParams<float> load_head(const std::filesystem::path& path);

/// epoch,lr,train_loss,train_acc,val_acc
std::string history_csv(std::span<const EpochRecord> history);

#define DELC_CLASSIFIER_EXTERN(S)                                                             \
    extern template struct MlpParams<S>;                                                      \
    extern template struct AdamState<S>;                                                      \
    extern template MlpParams<S> init_params<S>(int, std::uint64_t, int);                     \
    extern template Vector<S> forward<S>(const MlpParams<S>&, const Matrix<S>&, double);      \
    extern template double bce_loss<S>(std::span<const S>, std::span<const S>);               \
    extern template Gradients<S> backward<S>(const MlpParams<S>&, const Batch<S>&, double);   \
    extern template void adam_step<S>(MlpParams<S>&, const MlpParams<S>&, AdamState<S>&,      \
                                      const TrainConfig&, int);                               \
    extern template TrainResult<S> train<S>(const Matrix<S>&, std::span<const int>,           \
                                            const Matrix<S>&, std::span<const int>,           \
                                            const TrainConfig&);                              \
    extern template std::vector<int> predict<S>(const MlpParams<S>&, const Matrix<S>&, double, \
                                                double);

DELC_CLASSIFIER_EXTERN(float)
DELC_CLASSIFIER_EXTERN(double)
#undef DELC_CLASSIFIER_EXTERN

} // namespace delc

#include "delc/classifier.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>

#include "delc/error.hpp"
#include "delc/io.hpp"
#include "delc/rng.hpp"

namespace delc {

// MlpParams -------------------------------------------------------------------

template <typename S>
MlpParams<S> MlpParams<S>::zeros(int input_dim, int hidden_units) {
    MlpParams p;
    p.w1 = Matrix<S>::Zero(input_dim, hidden_units);
    p.b1 = Vector<S>::Zero(hidden_units);
    p.w2 = Matrix<S>::Zero(hidden_units, hidden_units);
    p.b2 = Vector<S>::Zero(hidden_units);
    p.w3 = Vector<S>::Zero(hidden_units);
    p.b3 = S(0);
    return p;
}

template <typename S>
std::array<std::span<S>, 6> MlpParams<S>::tensors() {
    return {std::span<S>(w1.data(), static_cast<std::size_t>(w1.size())),
            std::span<S>(b1.data(), static_cast<std::size_t>(b1.size())),
            std::span<S>(w2.data(), static_cast<std::size_t>(w2.size())),
            std::span<S>(b2.data(), static_cast<std::size_t>(b2.size())),
            std::span<S>(w3.data(), static_cast<std::size_t>(w3.size())),
            std::span<S>(&b3, 1)};
}

template <typename S>
std::array<std::span<const S>, 6> MlpParams<S>::tensors() const {
    auto& self = const_cast<MlpParams&>(*this);
    auto t = self.tensors();
    return {t[0], t[1], t[2], t[3], t[4], t[5]};
}

template <typename S>
bool MlpParams<S>::all_finite() const {
    return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite() &&
           w3.allFinite() && std::isfinite(b3);
}

template <typename S>
std::size_t MlpParams<S>::parameter_count() const {
    std::size_t n = 0;
    for (auto t : tensors()) n += t.size();
    return n;
}

template <typename S>
AdamState<S> AdamState<S>::zeros_like(const MlpParams<S>& params) {
    AdamState s;
    s.m = MlpParams<S>::zeros(params.input_dim(), params.hidden_units());
    s.v = s.m;
    s.t = 0;
    return s;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw Error("TrainConfig: learning_rate must be positive");
    if (decay < 0.0) throw Error("TrainConfig: decay must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw Error("TrainConfig: beta1 and beta2 must lie in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw Error("TrainConfig: epsilon must be positive");
    if (batch_size < 1) throw Error("TrainConfig: batch_size must be at least 1");
    if (epochs < 0) throw Error("TrainConfig: epochs must be non-negative");
    if (!(prob_clip >= 0.0 && prob_clip < 0.5)) throw Error("TrainConfig: prob_clip out of range");
    if (hidden_units < 1) throw Error("TrainConfig: hidden_units must be positive");
}

// Forward / loss / backward ---------------------------------------------------

namespace {

template <typename S>
S sigmoid(S z) {
    if (z >= S(0)) {
        return S(1) / (S(1) + std::exp(-z));
    }
    const S e = std::exp(z);
    return e / (S(1) + e);
}

template <typename S>
void check_input(const MlpParams<S>& params, const Matrix<S>& x) {
    if (x.cols() != params.input_dim()) {
        throw Error("feature dimension " + std::to_string(x.cols()) +
                    " does not match head input " + std::to_string(params.input_dim()));
    }
    if (!x.allFinite()) {
        throw Error("non-finite input features");
    }
}

template <typename S>
struct Activations {
    Matrix<S> z1, a1, z2, a2;
    Vector<S> logits;
};

template <typename S>
Activations<S> run_layers(const MlpParams<S>& p, const Matrix<S>& x) {
    Activations<S> act;
    act.z1.noalias() = x * p.w1;
    act.z1.rowwise() += p.b1.transpose();
    act.a1 = act.z1.cwiseMax(S(0));
    act.z2.noalias() = act.a1 * p.w2;
    act.z2.rowwise() += p.b2.transpose();
    act.a2 = act.z2.cwiseMax(S(0));
    act.logits.noalias() = act.a2 * p.w3;
    act.logits.array() += p.b3;
    return act;
}

template <typename S>
Vector<S> clipped_sigmoid(const Vector<S>& logits, double prob_clip) {
    const S lo = static_cast<S>(prob_clip);
    const S hi = static_cast<S>(1.0 - prob_clip);
    Vector<S> p(logits.size());
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        p[i] = std::clamp(sigmoid(logits[i]), lo, hi);
    }
    return p;
}

} // namespace

template <typename S>
Vector<S> forward(const MlpParams<S>& params, const Matrix<S>& features, double prob_clip) {
    check_input(params, features);
    return clipped_sigmoid(run_layers(params, features).logits, prob_clip);
}

template <typename S>
double bce_loss(std::span<const S> probabilities, std::span<const S> labels) {
    if (probabilities.size() != labels.size()) {
        throw Error("bce_loss: length mismatch");
    }
    if (probabilities.empty()) {
        throw Error("bce_loss: empty input");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < probabilities.size(); ++i) {
        const double p = probabilities[i];
        const double y = labels[i];
        sum += y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    }
    return -sum / static_cast<double>(probabilities.size());
}

template <typename S>
Gradients<S> backward(const MlpParams<S>& params, const Batch<S>& batch, double prob_clip) {
    check_input(params, batch.features);
    const Eigen::Index n = batch.features.rows();
    if (n < 1 || batch.labels.size() != n) {
        throw Error("backward: batch labels do not match features");
    }
    Activations<S> act = run_layers(params, batch.features);

    Gradients<S> out;
    out.probabilities = clipped_sigmoid(act.logits, prob_clip);
    out.loss = bce_loss<S>(std::span<const S>(out.probabilities.data(), n),
                           std::span<const S>(batch.labels.data(), n));

    // d(loss)/d(logit) = (sigmoid(logit) - y) / N, taken before clipping.
    Vector<S> dz3(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        dz3[i] = (sigmoid(act.logits[i]) - batch.labels[i]) / static_cast<S>(n);
    }
    MlpParams<S>& g = out.grads;
    g.w3.noalias() = act.a2.transpose() * dz3;
    g.b3 = dz3.sum();

    Matrix<S> dz2 = dz3 * params.w3.transpose();
    dz2.array() *= (act.z2.array() > S(0)).template cast<S>();
    g.w2.noalias() = act.a1.transpose() * dz2;
    g.b2 = dz2.colwise().sum().transpose();

    Matrix<S> dz1;
    dz1.noalias() = dz2 * params.w2.transpose();
    dz1.array() *= (act.z1.array() > S(0)).template cast<S>();
    g.w1.noalias() = batch.features.transpose() * dz1;
    g.b1 = dz1.colwise().sum().transpose();

    if (!g.all_finite()) {
        throw Error("backward: non-finite gradient");
    }
    return out;
}

// Optimizer -------------------------------------------------------------------

double effective_learning_rate(const TrainConfig& cfg, int epoch) {
    return cfg.learning_rate / (1.0 + cfg.decay * epoch);
}

template <typename S>
void adam_step(MlpParams<S>& params, const MlpParams<S>& grads, AdamState<S>& state,
               const TrainConfig& cfg, int epoch) {
    if (grads.input_dim() != params.input_dim() || grads.hidden_units() != params.hidden_units() ||
        state.m.input_dim() != params.input_dim() ||
        state.m.hidden_units() != params.hidden_units()) {
        throw Error("adam_step: shape mismatch");
    }
    state.t += 1;
    const double lr = effective_learning_rate(cfg, epoch);
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
    const S step = static_cast<S>(lr / c1);
    const S inv_c2 = static_cast<S>(1.0 / c2);
    const S eps = static_cast<S>(cfg.epsilon);

    auto theta = params.tensors();
    auto grad = grads.tensors();
    auto m = state.m.tensors();
    auto v = state.v.tensors();
    for (std::size_t t = 0; t < theta.size(); ++t) {
        const std::size_t len = theta[t].size();
        S* th = theta[t].data();
        const S* gr = grad[t].data();
        S* mt = m[t].data();
        S* vt = v[t].data();
        for (std::size_t i = 0; i < len; ++i) {
            const S gi = gr[i];
            mt[i] = b1 * mt[i] + (S(1) - b1) * gi;
            vt[i] = b2 * vt[i] + (S(1) - b2) * gi * gi;
            th[i] -= step * mt[i] / (std::sqrt(vt[i] * inv_c2) + eps);
        }
    }
}

// Initialization / training / prediction --------------------------------------

template <typename S>
MlpParams<S> init_params(int feature_dim, std::uint64_t seed, int hidden_units) {
    if (feature_dim < 1 || hidden_units < 1) {
        throw Error("init_params: dimensions must be positive");
    }
    MlpParams<S> p = MlpParams<S>::zeros(feature_dim, hidden_units);
    Rng rng(seed);
    auto fill = [&rng](std::span<S> t, int fan_in) {
        const double sd = std::sqrt(2.0 / fan_in);
        for (S& v : t) v = static_cast<S>(rng.normal() * sd);
    };
    auto t = p.tensors();
    fill(t[0], feature_dim);
    fill(t[2], hidden_units);
    fill(t[4], hidden_units);
    return p;
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size()) {
        throw Error("accuracy: length mismatch");
    }
    if (predictions.empty()) {
        return 0.0;
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        hits += predictions[i] == labels[i];
    }
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

template <typename S>
std::vector<int> predict(const MlpParams<S>& params, const Matrix<S>& features, double threshold,
                         double prob_clip) {
    const Vector<S> p = forward(params, features, prob_clip);
    std::vector<int> labels(static_cast<std::size_t>(p.size()));
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        labels[static_cast<std::size_t>(i)] = static_cast<double>(p[i]) >= threshold ? 1 : 0;
    }
    return labels;
}

template <typename S>
TrainResult<S> train(const Matrix<S>& train_features, std::span<const int> train_labels,
                     const Matrix<S>& val_features, std::span<const int> val_labels,
                     const TrainConfig& cfg) {
    cfg.validate();
    const auto n = static_cast<std::size_t>(train_features.rows());
    if (n == 0) {
        throw Error("train: empty training set");
    }
    if (train_labels.size() != n) {
        throw Error("train: label count does not match features");
    }
    if (static_cast<std::size_t>(val_features.rows()) != val_labels.size()) {
        throw Error("train: validation label count does not match features");
    }
    const auto positives = std::count(train_labels.begin(), train_labels.end(), 1);
    const auto negatives = std::count(train_labels.begin(), train_labels.end(), 0);
    if (positives + negatives != static_cast<std::ptrdiff_t>(n)) {
        throw Error("train: labels must be 0 or 1");
    }
    if (positives == 0 || negatives == 0) {
        throw Error("train: training set contains a single class");
    }

    TrainResult<S> result;
    result.params = init_params<S>(static_cast<int>(train_features.cols()), cfg.seed,
                                   cfg.hidden_units);
    if (cfg.epochs == 0) {
        return result;
    }
    MlpParams<S> params = result.params;
    AdamState<S> state = AdamState<S>::zeros_like(params);
    const bool has_val = val_features.rows() > 0;
    double best = -1.0;

    std::vector<Eigen::Index> order(n);
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        Rng rng(mix_seed({cfg.seed, static_cast<std::uint64_t>(epoch), 0xe90cULL}));
        rng.shuffle(std::span<Eigen::Index>(order));

        double loss_sum = 0.0;
        std::size_t correct = 0;
        Batch<S> batch;
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t end = std::min(n, start + bs);
            const std::vector<Eigen::Index> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                 order.begin() + static_cast<std::ptrdiff_t>(end));
            batch.features = train_features(rows, Eigen::all);
            batch.labels.resize(static_cast<Eigen::Index>(rows.size()));
            for (std::size_t i = 0; i < rows.size(); ++i) {
                batch.labels[static_cast<Eigen::Index>(i)] =
                    static_cast<S>(train_labels[static_cast<std::size_t>(rows[i])]);
            }
            Gradients<S> g = backward(params, batch, cfg.prob_clip);
            loss_sum += g.loss * static_cast<double>(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i) {
                const int pred = g.probabilities[static_cast<Eigen::Index>(i)] >= S(0.5) ? 1 : 0;
                correct += pred == train_labels[static_cast<std::size_t>(rows[i])];
            }
            adam_step(params, g.grads, state, cfg, epoch);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.learning_rate = effective_learning_rate(cfg, epoch);
        rec.train_loss = loss_sum / static_cast<double>(n);
        rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
        rec.val_accuracy =
            has_val ? accuracy(predict(params, val_features, 0.5, cfg.prob_clip), val_labels) : 0.0;
        result.history.push_back(rec);

        if (!has_val || rec.val_accuracy > best) {
            best = rec.val_accuracy;
            result.best_epoch = epoch;
            result.best_val_accuracy = rec.val_accuracy;
            result.params = params;
        }
    }
    return result;
}

// Serialization ---------------------------------------------------------------

namespace {

constexpr char kHeadMagic[8] = {'D', 'E', 'L', 'C', 'H', 'E', 'A', 'D'};

static_assert(std::endian::native == std::endian::little,
              "head serialization assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& data, std::size_t& pos) {
    if (pos + sizeof(T) > data.size()) {
        throw Error("classifier head file truncated");
    }
    T v;
    std::memcpy(&v, data.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

} // namespace

void save_head(const std::filesystem::path& path, const MlpParams<float>& p) {
    const int d = p.input_dim();
    const int h = p.hidden_units();
    std::string out(kHeadMagic, sizeof kHeadMagic);
    const std::uint32_t version = h == kHiddenUnits ? 1 : 2;
    put<std::uint32_t>(out, version);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    if (version == 2) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(h));
    }
    for (int r = 0; r < d; ++r)
        for (int c = 0; c < h; ++c) put<float>(out, p.w1(r, c));
    for (int i = 0; i < h; ++i) put<float>(out, p.b1[i]);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < h; ++c) put<float>(out, p.w2(r, c));
    for (int i = 0; i < h; ++i) put<float>(out, p.b2[i]);
    for (int i = 0; i < h; ++i) put<float>(out, p.w3[i]);
    put<float>(out, p.b3);
    write_file_atomic(path, out);
}

MlpParams<float> load_head(const std::filesystem::path& path) {
    const std::string data = read_file(path);
    if (data.size() < 16 || std::memcmp(data.data(), kHeadMagic, sizeof kHeadMagic) != 0) {
        throw Error("not a classifier head file: " + path.string());
    }
    std::size_t pos = sizeof kHeadMagic;
    const auto version = take<std::uint32_t>(data, pos);
    const auto d = static_cast<int>(take<std::uint32_t>(data, pos));
    int h = kHiddenUnits;
    if (version == 2) {
        h = static_cast<int>(take<std::uint32_t>(data, pos));
    } else if (version != 1) {
        throw Error("unsupported classifier head version " + std::to_string(version));
    }
    if (d < 1 || h < 1) {
        throw Error("corrupt classifier head dimensions");
    }
    const std::size_t expected = static_cast<std::size_t>(d) * h + 2u * h +
                                 static_cast<std::size_t>(h) * h + h + 1;
    if (data.size() != pos + expected * 4) {
        throw Error("classifier head size mismatch: " + path.string());
    }
    MlpParams<float> p = MlpParams<float>::zeros(d, h);
    for (int r = 0; r < d; ++r)
        for (int c = 0; c < h; ++c) p.w1(r, c) = take<float>(data, pos);
    for (int i = 0; i < h; ++i) p.b1[i] = take<float>(data, pos);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < h; ++c) p.w2(r, c) = take<float>(data, pos);
    for (int i = 0; i < h; ++i) p.b2[i] = take<float>(data, pos);
    for (int i = 0; i < h; ++i) p.w3[i] = take<float>(data, pos);
    p.b3 = take<float>(data, pos);
    return p;
}

std::string history_csv(std::span<const EpochRecord> history) {
    std::string out = "epoch,lr,train_loss,train_acc,val_acc\n";
    char line[160];
    for (const EpochRecord& r : history) {
        std::snprintf(line, sizeof line, "%d,%.10g,%.10g,%.10g,%.10g\n", r.epoch, r.learning_rate,
                      r.train_loss, r.train_accuracy, r.val_accuracy);
        out += line;
    }
    return out;
}

#define DELC_CLASSIFIER_INSTANTIATE(S)                                                        \
    template struct MlpParams<S>;                                                             \
    template struct AdamState<S>;                                                             \
    template MlpParams<S> init_params<S>(int, std::uint64_t, int);                            \
    template Vector<S> forward<S>(const MlpParams<S>&, const Matrix<S>&, double);             \
    template double bce_loss<S>(std::span<const S>, std::span<const S>);                      \
    template Gradients<S> backward<S>(const MlpParams<S>&, const Batch<S>&, double);          \
    template void adam_step<S>(MlpParams<S>&, const MlpParams<S>&, AdamState<S>&,             \
                               const TrainConfig&, int);                                      \
    template TrainResult<S> train<S>(const Matrix<S>&, std::span<const int>, const Matrix<S>&, \
                                     std::span<const int>, const TrainConfig&);               \
    template std::vector<int> predict<S>(const MlpParams<S>&, const Matrix<S>&, double, double);

DELC_CLASSIFIER_INSTANTIATE(float)
DELC_CLASSIFIER_INSTANTIATE(double)

} // namespace delc

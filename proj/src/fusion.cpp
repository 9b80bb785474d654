#include "ppc/fusion.hpp"

#include "ppc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace ppc {

std::string fusion_mode_name(FusionMode mode)
{
    switch (mode) {
    case FusionMode::softmax_average: return "avg";
    case FusionMode::adaptive: return "adaptive";
    case FusionMode::early: return "early";
    case FusionMode::late: return "late";
    }
    return "avg";
}

FusionMode parse_fusion_mode(const std::string& name)
{
    if (name == "avg" || name == "softmax_average") return FusionMode::softmax_average;
    if (name == "adaptive") return FusionMode::adaptive;
    if (name == "early") return FusionMode::early;
    if (name == "late") return FusionMode::late;
    throw std::runtime_error("unknown fusion mode '" + name + "'");
}

namespace {

void check_distribution(std::span<const double> p, const char* which)
{
    double total = 0;
    for (double v : p) {
        require(v >= 0 && std::isfinite(v), std::string(which) + " has a negative or non-finite entry");
        total += v;
    }
    require(std::abs(total - 1.0) <= 1e-4,
            std::string(which) + " is not normalized (sums to " + std::to_string(total) + ")");
}

int lowest_argmax(std::span<const double> v)
{
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

FusedScores fuse_softmax_average(std::span<const double> p_d, std::span<const double> p_r)
{
    require(p_d.size() == p_r.size() && !p_d.empty(), "fuse_softmax_average: size mismatch");
    check_distribution(p_d, "p_d");
    check_distribution(p_r, "p_r");
    FusedScores out;
    out.scores.resize(p_d.size());
    for (std::size_t i = 0; i < p_d.size(); ++i) out.scores[i] = (p_d[i] + p_r[i]) / 2;
    out.label = lowest_argmax(out.scores);
    return out;
}

FusedScores fuse_weighted(const FusionWeights& w, std::span<const double> p_d, std::span<const double> p_r)
{
    require(p_d.size() == p_r.size() && !p_d.empty(), "fuse_weighted: size mismatch");
    require(w.w_d >= 0 && w.w_r >= 0 && std::abs(w.w_d + w.w_r - 1.0) <= 1e-9, "fusion weights must be a convex pair");
    FusedScores out;
    out.scores.resize(p_d.size());
    for (std::size_t i = 0; i < p_d.size(); ++i) out.scores[i] = w.w_d * p_d[i] + w.w_r * p_r[i];
    out.label = lowest_argmax(out.scores);
    return out;
}

template <typename T>
GatingNetwork<T>::GatingNetwork(std::size_t depth_channels, std::size_t refl_channels, int hidden, std::uint64_t seed)
{
    require(hidden >= 1 && depth_channels >= 1 && refl_channels >= 1, "gating network sizes must be positive");
    std::mt19937_64 rng(seed);
    auto init = [&rng](Shape shape, std::size_t fan_in) {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        std::vector<T> v(shape_numel(shape));
        for (auto& x : v) x = static_cast<T>(dist(rng));
        return Tensor<T>(std::move(shape), std::move(v), true);
    };
    const auto in = depth_channels + refl_channels;
    const auto h = static_cast<std::size_t>(hidden);
    fc1_weight_ = init({h, in}, in);
    fc1_bias_ = Tensor<T>::zeros({h}, true);
    fc2_weight_ = init({2, h}, h);
    fc2_bias_ = Tensor<T>::zeros({2}, true);
}

template <typename T>
Tensor<T> GatingNetwork<T>::weights_from_pooled(const Tensor<T>& pooled) const
{
    require(pooled.rank() == 2 && pooled.dim(1) == in_features(),
            "gating expects [N, " + std::to_string(in_features()) + "] pooled features, got " +
                shape_str(pooled.shape()));
    auto h = relu(fully_connected(pooled, fc1_weight_, fc1_bias_));
    return softmax(fully_connected(h, fc2_weight_, fc2_bias_));
}

template <typename T>
Tensor<T> GatingNetwork<T>::weights(const Tensor<T>& pool5_d, const Tensor<T>& pool5_r) const
{
    return weights_from_pooled(concat_features<T>({global_avg_pool(pool5_d), global_avg_pool(pool5_r)}));
}

template <typename T>
std::vector<Parameter<T>> GatingNetwork<T>::parameters() const
{
    return {{"gating.fc1.weight", fc1_weight_},
            {"gating.fc1.bias", fc1_bias_},
            {"gating.fc2.weight", fc2_weight_},
            {"gating.fc2.bias", fc2_bias_}};
}

template <typename T>
AdaptiveOutput<T> fuse_adaptive(Classifier<T>& model_d, Classifier<T>& model_r, const GatingNetwork<T>& gating,
                                const InputBatch<T>& x_d, const InputBatch<T>& x_r)
{
    require(model_d.frozen() && model_r.frozen(), "adaptive fusion needs frozen base models");
    NoGradGuard no_grad;
    auto out_d = model_d.forward(x_d, Mode::eval);
    auto out_r = model_r.forward(x_r, Mode::eval);
    require(out_d.pool5.size() == 1 && out_r.pool5.size() == 1, "adaptive fusion takes single-stream models");
    AdaptiveOutput<T> out;
    out.weights = gating.weights(out_d.pool5[0], out_r.pool5[0]);
    out.scores = gate_mix(out.weights, out_d.probabilities, out_r.probabilities);
    out.labels = argmax_rows(out.scores);
    return out;
}

namespace {

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows)
{
    const std::size_t width = x.numel() / x.dim(0);
    std::vector<T> data;
    data.reserve(rows.size() * width);
    const auto src = x.data();
    for (auto r : rows) data.insert(data.end(), src.begin() + r * width, src.begin() + (r + 1) * width);
    Shape shape = x.shape();
    shape[0] = rows.size();
    return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
Tensor<T> stack_rows(const std::vector<Tensor<T>>& parts)
{
    std::vector<T> data;
    Shape shape = parts.front().shape();
    shape[0] = 0;
    for (const auto& p : parts) {
        data.insert(data.end(), p.data().begin(), p.data().end());
        shape[0] += p.dim(0);
    }
    return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace

template <typename T>
GatingSamples<T> gating_samples(Classifier<T>& model_d, Classifier<T>& model_r, std::span<const LabeledScan> scans,
                                std::span<const std::size_t> indices, std::size_t batch_size)
{
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    if (idx.empty()) {
        idx.resize(scans.size());
        std::iota(idx.begin(), idx.end(), 0);
    }
    require(!idx.empty() && batch_size >= 1, "gating_samples: nothing to evaluate");
    NoGradGuard no_grad;
    std::vector<Tensor<T>> pooled, p_d, p_r;
    for (std::size_t start = 0; start < idx.size(); start += batch_size) {
        const auto end = std::min(idx.size(), start + batch_size);
        const std::span<const std::size_t> chunk(idx.data() + start, end - start);
        const auto batch = make_batch<T>(scans, chunk);
        auto out_d = model_d.forward(batch, Mode::eval);
        auto out_r = model_r.forward(batch, Mode::eval);
        pooled.push_back(concat_features<T>({global_avg_pool(out_d.pool5.at(0)), global_avg_pool(out_r.pool5.at(0))}));
        p_d.push_back(out_d.probabilities);
        p_r.push_back(out_r.probabilities);
    }
    return {stack_rows(pooled), stack_rows(p_d), stack_rows(p_r), labels_of(scans, idx)};
}

template <typename T>
GatingReport train_gating(GatingNetwork<T>& gating, const GatingSamples<T>& samples, const GatingConfig& cfg)
{
    const std::size_t n = samples.labels.size();
    require(n >= 1 && samples.pooled.dim(0) == n && samples.p_d.dim(0) == n && samples.p_r.dim(0) == n,
            "train_gating: sample arrays disagree in length");
    require(cfg.batch_size >= 1 && cfg.epochs >= 1, "train_gating: invalid config");
    std::vector<Tensor<T>> params;
    for (const auto& p : gating.parameters()) params.push_back(p.tensor);
    Sgd<T> opt(params, cfg.sgd);

    GatingReport report;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::mt19937_64 rng(cfg.seed + static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0;
        int batches = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const auto end = std::min(n, start + cfg.batch_size);
            const std::span<const std::size_t> rows(order.data() + start, end - start);
            std::vector<int> labels;
            for (auto r : rows) labels.push_back(samples.labels[r]);
            auto w = gating.weights_from_pooled(gather_rows(samples.pooled, rows));
            auto mixed = gate_mix(w, gather_rows(samples.p_d, rows), gather_rows(samples.p_r, rows));
            auto loss = nll_from_probs(mixed, labels);
            backward(loss);
            opt.step();
            total += static_cast<double>(loss.item());
            report.batch_loss.push_back(static_cast<double>(loss.item()));
            ++batches;
        }
        report.epoch_loss.push_back(total / batches);
    }
    return report;
}

template <typename T>
GatingReport train_gating(GatingNetwork<T>& gating, Classifier<T>& model_d, Classifier<T>& model_r,
                          std::span<const LabeledScan> scans, std::span<const std::size_t> indices,
                          const GatingConfig& cfg)
{
    require(model_d.frozen() && model_r.frozen(), "train_gating: base models must be frozen");
    const auto hash_d = parameter_hash(model_d);
    const auto hash_r = parameter_hash(model_r);
    const auto samples = gating_samples(model_d, model_r, scans, indices, cfg.batch_size);
    auto report = train_gating(gating, samples, cfg);
    if (parameter_hash(model_d) != hash_d || parameter_hash(model_r) != hash_r) {
        throw std::logic_error("train_gating modified a frozen base model");
    }
    return report;
}

#define PPC_INSTANTIATE_FUSION(T)                                                                              \
    template class GatingNetwork<T>;                                                                           \
    template AdaptiveOutput<T> fuse_adaptive(Classifier<T>&, Classifier<T>&, const GatingNetwork<T>&,          \
                                             const InputBatch<T>&, const InputBatch<T>&);                      \
    template GatingSamples<T> gating_samples(Classifier<T>&, Classifier<T>&, std::span<const LabeledScan>,     \
                                             std::span<const std::size_t>, std::size_t);                       \
    template GatingReport train_gating(GatingNetwork<T>&, const GatingSamples<T>&, const GatingConfig&);       \
    template GatingReport train_gating(GatingNetwork<T>&, Classifier<T>&, Classifier<T>&,                      \
                                       std::span<const LabeledScan>, std::span<const std::size_t>,             \
                                       const GatingConfig&);

PPC_INSTANTIATE_FUSION(float)
PPC_INSTANTIATE_FUSION(double)

}  // namespace ppc

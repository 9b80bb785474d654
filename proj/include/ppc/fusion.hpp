#pragma once

#include "ppc/models.hpp"
#include "ppc/optim.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace ppc {

enum class FusionMode { softmax_average, adaptive, early, late };

std::string fusion_mode_name(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& name);

struct FusionSpec {
    FusionMode mode = FusionMode::softmax_average;
    ModelSpec depth_spec;
    ModelSpec refl_spec;
    int gating_hidden = 128;
};

/// Modality weights from the gating network; w_d + w_r = 1.
struct FusionWeights {
    double w_d = 0.5;
    double w_r = 0.5;
};

struct FusedScores {
    std::vector<double> scores;
    int label = 0;
};

/// P = (p_d + p_r) / 2 and its lowest-index argmax. Both inputs must sum to 1
/// within 1e-4 with no negative entries.
FusedScores fuse_softmax_average(std::span<const double> p_d, std::span<const double> p_r);

/// P = w_d p_d + w_r p_r.
FusedScores fuse_weighted(const FusionWeights& w, std::span<const double> p_d, std::span<const double> p_r);

/// Gating head: GAP over each stream's pool5 -> concat -> fc(hidden) -> ReLU
/// -> fc(2) -> softmax.
template <typename T>
class GatingNetwork {
public:
    GatingNetwork(std::size_t depth_channels, std::size_t refl_channels, int hidden, std::uint64_t seed);

    /// [N, 2] modality weights from pooled features [N, C_d + C_r].
    Tensor<T> weights_from_pooled(const Tensor<T>& pooled) const;
    /// [N, 2] modality weights from the two pool5 tensors.
    Tensor<T> weights(const Tensor<T>& pool5_d, const Tensor<T>& pool5_r) const;

    std::vector<Parameter<T>> parameters() const;
    std::size_t in_features() const { return fc1_weight_.dim(1); }

private:
    Tensor<T> fc1_weight_, fc1_bias_, fc2_weight_, fc2_bias_;
};

template <typename T>
struct AdaptiveOutput {
    Tensor<T> scores;   // [N, C]
    Tensor<T> weights;  // [N, 2], columns (w_d, w_r)
    std::vector<int> labels;
};

/// Runs both frozen models in eval mode and mixes their probabilities with
/// the gating weights.
template <typename T>
AdaptiveOutput<T> fuse_adaptive(Classifier<T>& model_d, Classifier<T>& model_r, const GatingNetwork<T>& gating,
                                const InputBatch<T>& x_d, const InputBatch<T>& x_r);

/// Everything gating training needs from the frozen models, computed once.
template <typename T>
struct GatingSamples {
    Tensor<T> pooled;  // [N, C_d + C_r]
    Tensor<T> p_d;     // [N, C]
    Tensor<T> p_r;     // [N, C]
    std::vector<int> labels;
};

template <typename T>
GatingSamples<T> gating_samples(Classifier<T>& model_d, Classifier<T>& model_r, std::span<const LabeledScan> scans,
                                std::span<const std::size_t> indices, std::size_t batch_size = 64);

struct GatingConfig {
    SgdConfig sgd{1e-3, 0.9, 5e-4};
    std::size_t batch_size = 64;
    int epochs = 30;
    std::uint64_t seed = 0;
};

struct GatingReport {
    std::vector<double> epoch_loss;  // mean loss over each epoch's batches
    std::vector<double> batch_loss;  // every batch, in order
};

/// Minimizes -log P(x)[label] over the samples, touching only the gating
/// parameters.
template <typename T>
GatingReport train_gating(GatingNetwork<T>& gating, const GatingSamples<T>& samples, const GatingConfig& cfg);

/// Full procedure: both base models must be frozen; their parameter hashes
/// are checked to be unchanged afterwards.
template <typename T>
GatingReport train_gating(GatingNetwork<T>& gating, Classifier<T>& model_d, Classifier<T>& model_r,
                          std::span<const LabeledScan> scans, std::span<const std::size_t> indices,
                          const GatingConfig& cfg);

}  // namespace ppc

#pragma once

#include "ppc/checkpoint.hpp"
#include "ppc/dataset.hpp"
#include "ppc/layers.hpp"
#include "ppc/tensor.hpp"

#include <array>
#include <filesystem>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace ppc {

/// Which modality a single-stream network reads. `both` stacks depth and
/// reflectance as two input channels (early fusion).
enum class InputKind { depth, reflectance, both };

/// Baseline network descriptor:
///   conv1(64) pool1 | conv2(128) pool2 | conv3_1,conv3_2(256) pool3 |
///   conv4_1,conv4_2(512) pool4 | conv5_1,conv5_2(512) pool5 |
///   [RWMP] fc1(128) BN ReLU dropout | fc2(classes)
/// Every conv is 3x3 stride 1 followed by BN and ReLU. `width_divisor`
/// shrinks every conv width for desk-scale runs; 1 is the full network.
struct ModelSpec {
    int input_channels = 1;
    InputKind input = InputKind::depth;
    bool use_hcc = false;
    bool use_rwmp = false;
    int num_classes = kNumCategories;
    int fc_hidden = 128;
    double dropout_rate = 0.5;
    int width_divisor = 1;
    int input_height = 32;
    int input_width = 384;

    std::array<int, 8> conv_widths() const;
    Padding padding() const { return use_hcc ? Padding::circular_horizontal : Padding::zero; }
    /// Spatial size of pool5.
    int pool5_height() const { return input_height / 32; }
    int pool5_width() const { return input_width / 32; }
    /// Length of one stream's flattened feature entering fc1.
    std::size_t stream_features() const;
    void validate() const;

    bool operator==(const ModelSpec&) const = default;
};

namespace detail {
// Validated spec plus the weight-init generator, so member stacks can be
// constructed in declaration order from one seed.
struct ModelInit {
    ModelSpec spec;
    std::mt19937_64 rng;
    ModelInit(const ModelSpec& s, std::uint64_t seed) : spec(s), rng(seed) { spec.validate(); }
};
}  // namespace detail

/// Named view of a trainable tensor.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> tensor;
};

/// Named view of non-trainable state (batch-norm running statistics).
template <typename T>
struct Buffer {
    std::string name;
    std::vector<T>* values;
    bool* updated = nullptr;  // set once real statistics are loaded
};

/// Anything that maps an input batch to class logits through pool5 feature
/// maps. Splitting the pass at pool5 lets gating and Grad-CAM reuse it.
template <typename T>
class Classifier {
public:
    virtual ~Classifier() = default;

    /// pool5 activations, one tensor [N, C5, H5, W5] per conv stream.
    virtual std::vector<Tensor<T>> features(const InputBatch<T>& batch, Mode mode) = 0;
    /// Logits [N, classes] from the pool5 activations.
    virtual Tensor<T> head(const std::vector<Tensor<T>>& pool5, Mode mode, std::uint64_t dropout_seed) = 0;

    virtual std::vector<Parameter<T>> parameters() const = 0;
    virtual std::vector<Buffer<T>> buffers() { return {}; }
    virtual int num_classes() const = 0;

    struct Output {
        Tensor<T> logits;
        Tensor<T> probabilities;  // constant, rows sum to 1
        std::vector<Tensor<T>> pool5;
    };
    Output forward(const InputBatch<T>& batch, Mode mode, std::uint64_t dropout_seed = 0);

    /// Frozen models expose no trainable parameters to the graph.
    void set_frozen(bool frozen);
    bool frozen() const;
    std::size_t parameter_count() const;
};

/// conv1 .. pool5 of the baseline with optional circular padding.
template <typename T>
class ConvStack {
public:
    ConvStack(const ModelSpec& spec, int in_channels, std::mt19937_64& rng, std::string prefix);

    Tensor<T> forward(const Tensor<T>& x, Mode mode);
    void collect(std::vector<Parameter<T>>& params) const;
    void collect(std::vector<Buffer<T>>& buffers);

private:
    struct Conv {
        std::string name;
        Tensor<T> weight;
        Tensor<T> bias;
        Tensor<T> gamma;
        Tensor<T> beta;
        BatchNormState<T> bn;
        bool pool_after = false;
    };
    std::vector<Conv> convs_;
    Padding padding_;
    int input_height_;
    int input_width_;
};

/// [RWMP] -> flatten per stream -> concat -> fc1 -> BN -> ReLU -> dropout -> fc2.
template <typename T>
class ClassifierHead {
public:
    ClassifierHead(const ModelSpec& spec, std::size_t in_features, std::mt19937_64& rng);

    Tensor<T> forward(const std::vector<Tensor<T>>& pool5, Mode mode, std::uint64_t dropout_seed);
    void collect(std::vector<Parameter<T>>& params) const;
    void collect(std::vector<Buffer<T>>& buffers);
    std::size_t in_features() const { return in_features_; }

private:
    bool use_rwmp_;
    double dropout_rate_;
    std::size_t in_features_;
    Tensor<T> fc1_weight_, fc1_bias_, bn_gamma_, bn_beta_, fc2_weight_, fc2_bias_;
    BatchNormState<T> bn_;
};

/// Uni-modal baseline and its HCC/RWMP variants; with InputKind::both it is
/// the early-fusion model.
template <typename T>
class Network final : public Classifier<T> {
public:
    Network(const ModelSpec& spec, std::uint64_t seed);

    std::vector<Tensor<T>> features(const InputBatch<T>& batch, Mode mode) override;
    Tensor<T> head(const std::vector<Tensor<T>>& pool5, Mode mode, std::uint64_t dropout_seed) override;
    std::vector<Parameter<T>> parameters() const override;
    std::vector<Buffer<T>> buffers() override;
    int num_classes() const override { return spec_.num_classes; }
    const ModelSpec& spec() const { return spec_; }
    std::size_t fc1_in_features() const { return head_.in_features(); }

private:
    explicit Network(detail::ModelInit&& init);

    ModelSpec spec_;
    ConvStack<T> stack_;
    ClassifierHead<T> head_;
};

/// Two conv streams (depth, reflectance) feeding one shared classifier head
/// through concatenated features.
template <typename T>
class LateFusionNetwork final : public Classifier<T> {
public:
    LateFusionNetwork(const ModelSpec& stream_spec, std::uint64_t seed);

    std::vector<Tensor<T>> features(const InputBatch<T>& batch, Mode mode) override;
    Tensor<T> head(const std::vector<Tensor<T>>& pool5, Mode mode, std::uint64_t dropout_seed) override;
    std::vector<Parameter<T>> parameters() const override;
    std::vector<Buffer<T>> buffers() override;
    int num_classes() const override { return spec_.num_classes; }
    const ModelSpec& spec() const { return spec_; }
    std::size_t fc1_in_features() const { return head_.in_features(); }

private:
    explicit LateFusionNetwork(detail::ModelInit&& init);

    ModelSpec spec_;
    ConvStack<T> depth_stack_;
    ConvStack<T> refl_stack_;
    ClassifierHead<T> head_;
};

template <typename T>
std::unique_ptr<Network<T>> build_model(const ModelSpec& spec, std::uint64_t seed);
template <typename T>
std::unique_ptr<Network<T>> build_early_fusion(ModelSpec spec, std::uint64_t seed);
template <typename T>
std::unique_ptr<LateFusionNetwork<T>> build_late_fusion(ModelSpec spec, std::uint64_t seed);

/// Parameter and buffer values, in the order of parameters() then buffers().
template <typename T>
struct ModelState {
    std::vector<std::vector<T>> values;
    bool operator==(const ModelState&) const = default;
};

template <typename T>
ModelState<T> capture_state(Classifier<T>& model);
template <typename T>
void restore_state(Classifier<T>& model, const ModelState<T>& state);

/// FNV-1a over the bit patterns of every parameter and buffer value.
template <typename T>
std::uint64_t parameter_hash(Classifier<T>& model);

/// float32 named arrays for the checkpoint codec.
template <typename T>
std::vector<NamedArray> state_dict(Classifier<T>& model);
template <typename T>
void load_state_dict(Classifier<T>& model, const std::vector<NamedArray>& arrays);

/// key=value manifest lines describing a ModelSpec.
std::map<std::string, std::string> spec_to_manifest(const ModelSpec& spec);
ModelSpec spec_from_manifest(const std::map<std::string, std::string>& kv);
void write_manifest(const std::filesystem::path& path, const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> read_manifest(const std::filesystem::path& path);

std::string input_kind_name(InputKind kind);
InputKind parse_input_kind(const std::string& name);

}  // namespace ppc

#pragma once

#include "ppc/fusion.hpp"
#include "ppc/models.hpp"
#include "ppc/training.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ppc {

/// A complete classifier configuration: one network (uni-modal, early or
/// late fusion) or two uni-modal networks combined by softmax averaging or
/// adaptive gating.
template <typename T>
class PlaceModel {
public:
    /// `spec` describes one stream; `spec.input` picks the modality when
    /// `fusion` is empty. Network weights derive from `seed`.
    PlaceModel(ModelSpec spec, std::optional<FusionMode> fusion, std::uint64_t seed);

    const ModelSpec& spec() const { return spec_; }
    std::optional<FusionMode> fusion() const { return fusion_; }

    /// Named member networks: "model" for single-network systems, otherwise
    /// "depth" and "reflectance".
    std::vector<std::pair<std::string, Classifier<T>*>> networks();
    Classifier<T>& network(const std::string& name);
    GatingNetwork<T>* gating() { return gating_.get(); }

    using Progress = std::function<void(const std::string& network, const EpochRecord&)>;

    /// Trains every member network (then the gating network for adaptive
    /// fusion). Per-network seeds derive from `train.seed`.
    std::vector<TrainResult> fit(std::span<const LabeledScan> scans, std::span<const std::size_t> train_idx,
                                 std::span<const std::size_t> val_idx, const TrainConfig& train,
                                 const AugmentConfig& augment, const GatingConfig& gating,
                                 const Progress& progress = {});

    /// Final class scores (fused where applicable), eval mode, inputs rolled
    /// by `shift` columns.
    std::vector<std::vector<double>> scores(std::span<const LabeledScan> scans, std::span<const std::size_t> indices,
                                            long shift = 0);
    Evaluation evaluate(std::span<const LabeledScan> scans, std::span<const std::size_t> indices, long shift = 0);

    /// Accuracy for rotations 0, step, ..., 360 degrees.
    std::vector<RotationPoint> rotation_sweep(std::span<const LabeledScan> scans,
                                              std::span<const std::size_t> indices, double step_degrees);

    /// Writes manifest.txt plus one checkpoint per network into `dir`.
    /// `extra` entries are added to the manifest.
    void save(const std::filesystem::path& dir, const std::map<std::string, std::string>& extra = {});
    static PlaceModel load(const std::filesystem::path& dir);

private:
    ModelSpec spec_;
    std::optional<FusionMode> fusion_;
    std::unique_ptr<Classifier<T>> single_;
    std::unique_ptr<Network<T>> depth_;
    std::unique_ptr<Network<T>> refl_;
    std::unique_ptr<GatingNetwork<T>> gating_;
};

/// "depth" | "reflectance" | "both" plus an optional fusion name, as used on
/// the command line and in manifests.
std::string system_name(const ModelSpec& spec, std::optional<FusionMode> fusion);

}  // namespace ppc

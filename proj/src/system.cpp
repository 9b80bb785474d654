#include "ppc/system.hpp"

#include "ppc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ppc {

namespace {

constexpr std::size_t kBatch = 64;

template <typename T>
std::vector<NamedArray> gating_state(const GatingNetwork<T>& gating)
{
    std::vector<NamedArray> out;
    for (const auto& p : gating.parameters()) {
        NamedArray a{p.name, p.tensor.shape(), {}};
        for (T v : p.tensor.data()) a.data.push_back(static_cast<float>(v));
        out.push_back(std::move(a));
    }
    return out;
}

template <typename T>
void load_gating_state(GatingNetwork<T>& gating, const std::vector<NamedArray>& arrays)
{
    const auto params = gating.parameters();
    if (arrays.size() != params.size()) throw std::runtime_error("gating checkpoint has the wrong number of arrays");
    for (const auto& p : params) {
        auto it = std::find_if(arrays.begin(), arrays.end(), [&](const NamedArray& a) { return a.name == p.name; });
        if (it == arrays.end()) throw std::runtime_error("gating checkpoint is missing '" + p.name + "'");
        if (it->shape != p.tensor.shape()) throw std::runtime_error("gating checkpoint shape mismatch for " + p.name);
        auto tensor = p.tensor;
        auto data = tensor.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(it->data[i]);
    }
}

}  // namespace

std::string system_name(const ModelSpec& spec, std::optional<FusionMode> fusion)
{
    if (!fusion) return input_kind_name(spec.input);
    return "both+" + fusion_mode_name(*fusion);
}

template <typename T>
PlaceModel<T>::PlaceModel(ModelSpec spec, std::optional<FusionMode> fusion, std::uint64_t seed)
    : spec_(std::move(spec)), fusion_(fusion)
{
    auto child = [&](std::uint64_t stream) { return derive_seed(seed, stream); };
    if (!fusion_) {
        spec_ = uni_modal_spec(spec_, spec_.input);
        single_ = build_model<T>(spec_, child(0));
        return;
    }
    switch (*fusion_) {
    case FusionMode::early:
        spec_ = uni_modal_spec(spec_, InputKind::both);
        single_ = build_early_fusion<T>(spec_, child(0));
        return;
    case FusionMode::late:
        spec_ = uni_modal_spec(spec_, InputKind::depth);
        single_ = build_late_fusion<T>(spec_, child(0));
        return;
    case FusionMode::softmax_average:
    case FusionMode::adaptive: break;
    }
    spec_ = uni_modal_spec(spec_, InputKind::depth);
    depth_ = build_model<T>(spec_, child(1));
    refl_ = build_model<T>(uni_modal_spec(spec_, InputKind::reflectance), child(2));
    if (*fusion_ == FusionMode::adaptive) {
        const auto c5 = static_cast<std::size_t>(spec_.conv_widths()[7]);
        gating_ = std::make_unique<GatingNetwork<T>>(c5, c5, 128, child(3));
    }
}

template <typename T>
std::vector<std::pair<std::string, Classifier<T>*>> PlaceModel<T>::networks()
{
    if (single_) return {{"model", single_.get()}};
    return {{"depth", depth_.get()}, {"reflectance", refl_.get()}};
}

template <typename T>
Classifier<T>& PlaceModel<T>::network(const std::string& name)
{
    for (auto& [n, net] : networks()) {
        if (n == name) return *net;
    }
    throw std::invalid_argument("no network named '" + name + "' in a " + system_name(spec_, fusion_) + " model");
}

template <typename T>
std::vector<TrainResult> PlaceModel<T>::fit(std::span<const LabeledScan> scans, std::span<const std::size_t> train_idx,
                                            std::span<const std::size_t> val_idx, const TrainConfig& train,
                                            const AugmentConfig& augment, const GatingConfig& gating,
                                            const Progress& progress)
{
    std::vector<TrainResult> results;
    std::uint64_t stream = single_ ? 0 : 1;
    for (auto& [name, net] : networks()) {
        TrainConfig tc = train;
        tc.seed = derive_seed(train.seed, stream++);
        EpochCallback cb;
        if (progress) {
            cb = [&progress, n = name](const EpochRecord& rec) {
                progress(n, rec);
                return true;
            };
        }
        net->set_frozen(false);
        results.push_back(train_model(*net, scans, train_idx, val_idx, tc, augment, cb));
    }
    if (gating_) {
        depth_->set_frozen(true);
        refl_->set_frozen(true);
        GatingConfig gc = gating;
        gc.seed = derive_seed(train.seed, 3);
        train_gating(*gating_, *depth_, *refl_, scans, train_idx, gc);
    }
    return results;
}

template <typename T>
std::vector<std::vector<double>> PlaceModel<T>::scores(std::span<const LabeledScan> scans,
                                                       std::span<const std::size_t> indices, long shift)
{
    if (single_) return predict_probabilities(*single_, scans, indices, kBatch, shift);
    if (!gating_) {
        const auto p_d = predict_probabilities(*depth_, scans, indices, kBatch, shift);
        const auto p_r = predict_probabilities(*refl_, scans, indices, kBatch, shift);
        std::vector<std::vector<double>> out;
        for (std::size_t i = 0; i < p_d.size(); ++i) out.push_back(fuse_softmax_average(p_d[i], p_r[i]).scores);
        return out;
    }
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    if (idx.empty()) {
        for (std::size_t i = 0; i < scans.size(); ++i) idx.push_back(i);
    }
    NoGradGuard no_grad;
    std::vector<std::vector<double>> out;
    for (std::size_t start = 0; start < idx.size(); start += kBatch) {
        const auto chunk = std::span<const std::size_t>(idx).subspan(start, std::min(kBatch, idx.size() - start));
        auto batch = make_batch<T>(scans, chunk);
        if (shift != 0) batch = {roll_columns(batch.depth, shift), roll_columns(batch.reflectance, shift)};
        const auto fused = fuse_adaptive(*depth_, *refl_, *gating_, batch, batch);
        const std::size_t c = fused.scores.dim(1);
        const auto data = fused.scores.data();
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            out.emplace_back(data.begin() + static_cast<std::ptrdiff_t>(i * c),
                             data.begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
        }
    }
    return out;
}

template <typename T>
Evaluation PlaceModel<T>::evaluate(std::span<const LabeledScan> scans, std::span<const std::size_t> indices,
                                   long shift)
{
    const auto truth = labels_of(scans, indices);
    return ppc::evaluate(truth, argmax_each(scores(scans, indices, shift)));
}

template <typename T>
std::vector<RotationPoint> PlaceModel<T>::rotation_sweep(std::span<const LabeledScan> scans,
                                                         std::span<const std::size_t> indices, double step_degrees)
{
    require(!scans.empty(), "rotation_sweep: no scans");
    auto curve = rotation_grid(step_degrees, scans[indices.empty() ? 0 : indices[0]].depth.width());
    for (auto& pt : curve) pt.accuracy = evaluate(scans, indices, pt.shift).total;
    return curve;
}

template <typename T>
void PlaceModel<T>::save(const std::filesystem::path& dir, const std::map<std::string, std::string>& extra)
{
    std::filesystem::create_directories(dir);
    auto kv = spec_to_manifest(spec_);
    kv["fusion"] = fusion_ ? fusion_mode_name(*fusion_) : "none";
    for (const auto& [k, v] : extra) kv[k] = v;
    for (auto& [name, net] : networks()) write_checkpoint(dir / (name + ".ckpt"), state_dict(*net));
    if (gating_) write_checkpoint(dir / "gating.ckpt", gating_state(*gating_));
    write_manifest(dir / "manifest.txt", kv);
}

template <typename T>
PlaceModel<T> PlaceModel<T>::load(const std::filesystem::path& dir)
{
    const auto kv = read_manifest(dir / "manifest.txt");
    const auto spec = spec_from_manifest(kv);
    auto it = kv.find("fusion");
    std::optional<FusionMode> fusion;
    if (it != kv.end() && it->second != "none") fusion = parse_fusion_mode(it->second);
    PlaceModel model(spec, fusion, 0);
    for (auto& [name, net] : model.networks()) load_state_dict(*net, read_checkpoint(dir / (name + ".ckpt")));
    if (model.gating_) {
        load_gating_state(*model.gating_, read_checkpoint(dir / "gating.ckpt"));
        model.depth_->set_frozen(true);
        model.refl_->set_frozen(true);
    }
    return model;
}

template class PlaceModel<float>;
template class PlaceModel<double>;

}  // namespace ppc

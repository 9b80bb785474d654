#include "ppc/gradcam.hpp"

#include "ppc/ops.hpp"
#include "ppc/training.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace ppc {

CamMap cam_from_gradients(std::span<const double> activations, std::span<const double> gradients, int channels,
                          int height, int width, int target_class)
{
    const auto plane = static_cast<std::size_t>(height) * width;
    require(channels >= 1 && plane >= 1, "cam_from_gradients: empty feature map");
    require(activations.size() == plane * channels && gradients.size() == activations.size(),
            "cam_from_gradients: activation and gradient sizes must be C*H*W");
    CamMap map;
    map.height = height;
    map.width = width;
    map.target_class = target_class;
    map.values.assign(plane, 0.0);
    for (int k = 0; k < channels; ++k) {
        const double* g = gradients.data() + k * plane;
        double alpha = 0;
        for (std::size_t p = 0; p < plane; ++p) alpha += g[p];
        alpha /= static_cast<double>(plane);
        const double* a = activations.data() + k * plane;
        for (std::size_t p = 0; p < plane; ++p) map.values[p] += alpha * a[p];
    }
    for (auto& v : map.values) v = std::max(v, 0.0);
    return map;
}

namespace {

void upsample(CamMap& map, int out_w, int out_h)
{
    PanoramicImage small(map.width, map.height, Modality::cam, 1.0);
    small.pixels() = map.values;
    map.upsampled = resize_bilinear_wrap(small, out_w, out_h);
}

}  // namespace

template <typename T>
std::vector<CamMap> grad_cam(Classifier<T>& model, const InputBatch<T>& batch, int target_class, int stream)
{
    if (target_class < 0 || target_class >= model.num_classes()) {
        throw std::out_of_range("grad_cam: class " + std::to_string(target_class) + " out of range");
    }
    std::vector<Tensor<T>> pool5;
    {
        NoGradGuard no_grad;
        pool5 = model.features(batch, Mode::eval);
    }
    require(stream >= 0 && static_cast<std::size_t>(stream) < pool5.size(), "grad_cam: no such stream");
    // Fresh leaves so the gradient stops at pool5.
    std::vector<Tensor<T>> leaves;
    for (const auto& p : pool5) leaves.emplace_back(p.shape(), std::vector<T>(p.data().begin(), p.data().end()), true);
    auto logits = model.head(leaves, Mode::eval, 0);
    backward(select_column_sum(logits, static_cast<std::size_t>(target_class)));

    const auto& a = leaves[static_cast<std::size_t>(stream)];
    const auto grad = a.grad();
    const std::size_t n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
    const int in_h = static_cast<int>((batch.depth.defined() ? batch.depth : batch.reflectance).dim(2));
    const int in_w = static_cast<int>((batch.depth.defined() ? batch.depth : batch.reflectance).dim(3));
    std::vector<CamMap> maps;
    const std::size_t per = c * h * w;
    for (std::size_t s = 0; s < n; ++s) {
        std::vector<double> act(a.data().begin() + s * per, a.data().begin() + (s + 1) * per);
        std::vector<double> g(grad.begin() + s * per, grad.begin() + (s + 1) * per);
        auto map = cam_from_gradients(act, g, static_cast<int>(c), static_cast<int>(h), static_cast<int>(w),
                                      target_class);
        upsample(map, in_w, in_h);
        maps.push_back(std::move(map));
    }
    return maps;
}

CamMap normalize_cam(CamMap map)
{
    const double m = map.values.empty() ? 0.0 : *std::max_element(map.values.begin(), map.values.end());
    if (m > 0) {
        for (auto& v : map.values) v /= m;
        for (auto& v : map.upsampled.pixels()) v /= m;
    }
    return map;
}

CamMap average_maps(std::span<const CamMap> maps)
{
    if (maps.empty()) throw std::runtime_error("average_maps: no maps");
    CamMap out = normalize_cam(maps[0]);
    for (std::size_t i = 1; i < maps.size(); ++i) {
        require(maps[i].height == out.height && maps[i].width == out.width &&
                    maps[i].upsampled.pixels().size() == out.upsampled.pixels().size(),
                "average_maps: maps differ in size");
        const auto m = normalize_cam(maps[i]);
        for (std::size_t p = 0; p < out.values.size(); ++p) out.values[p] += m.values[p];
        for (std::size_t p = 0; p < out.upsampled.pixels().size(); ++p)
            out.upsampled.pixels()[p] += m.upsampled.pixels()[p];
    }
    const auto count = static_cast<double>(maps.size());
    for (auto& v : out.values) v /= count;
    for (auto& v : out.upsampled.pixels()) v /= count;
    return out;
}

template <typename T>
CamMap average_cam(Classifier<T>& model, std::span<const LabeledScan> scans, std::span<const std::size_t> indices,
                   int target_class, int stream)
{
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    if (idx.empty()) {
        idx.resize(scans.size());
        std::iota(idx.begin(), idx.end(), 0);
    }
    std::vector<std::size_t> of_class;
    for (auto i : idx) {
        if (static_cast<int>(scans[i].label) == target_class) of_class.push_back(i);
    }
    std::vector<std::size_t> correct;
    if (!of_class.empty()) {
        const auto predicted = argmax_each(predict_probabilities(model, scans, of_class));
        for (std::size_t j = 0; j < of_class.size(); ++j) {
            if (predicted[j] == target_class) correct.push_back(of_class[j]);
        }
    }
    if (correct.empty()) {
        throw std::runtime_error("average_cam: no correctly classified scans of class " +
                                 std::string(category_name(static_cast<Category>(target_class))));
    }
    std::vector<CamMap> maps;
    constexpr std::size_t kChunk = 16;
    for (std::size_t start = 0; start < correct.size(); start += kChunk) {
        const std::span<const std::size_t> chunk(correct.data() + start, std::min(kChunk, correct.size() - start));
        auto part = grad_cam(model, make_batch<T>(scans, chunk), target_class, stream);
        for (auto& m : part) maps.push_back(std::move(m));
    }
    return average_maps(maps);
}

void write_cam_pano(const std::filesystem::path& path, const CamMap& map)
{
    write_panorama(path, map.upsampled);
}

void write_pgm(const std::filesystem::path& path, const PanoramicImage& img)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    const auto& px = img.pixels();
    const double m = px.empty() ? 0.0 : *std::max_element(px.begin(), px.end());
    out << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
    for (double v : px) {
        const double scaled = m > 0 ? std::clamp(v / m, 0.0, 1.0) : 0.0;
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(scaled * 255.0))));
    }
}

template std::vector<CamMap> grad_cam(Classifier<float>&, const InputBatch<float>&, int, int);
template std::vector<CamMap> grad_cam(Classifier<double>&, const InputBatch<double>&, int, int);
template CamMap average_cam(Classifier<float>&, std::span<const LabeledScan>, std::span<const std::size_t>, int, int);
template CamMap average_cam(Classifier<double>&, std::span<const LabeledScan>, std::span<const std::size_t>, int, int);

}  // namespace ppc

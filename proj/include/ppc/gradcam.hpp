#pragma once

#include "ppc/dataset.hpp"
#include "ppc/models.hpp"
#include "ppc/projection.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace ppc {

/// Class-discriminative attention over pool5.
struct CamMap {
    int height = 0;  // pool5 rows
    int width = 0;   // pool5 columns
    std::vector<double> values;  // [height, width], row-major, >= 0
    PanoramicImage upsampled;    // input raster, modality cam
    int target_class = 0;
};

/// map[h, w] = ReLU(sum_k alpha_k * A[k, h, w]) with alpha_k the spatial mean
/// of grad[k]. `activations` and `gradients` are [C, H, W] row-major.
CamMap cam_from_gradients(std::span<const double> activations, std::span<const double> gradients, int channels,
                          int height, int width, int target_class);

/// Grad-CAM of every sample in `batch` for `target_class`, using the
/// pre-softmax logit as the class score. Eval mode. `stream` picks the conv
/// stream of a multi-stream model. Maps are upsampled to the input size.
template <typename T>
std::vector<CamMap> grad_cam(Classifier<T>& model, const InputBatch<T>& batch, int target_class, int stream = 0);

/// Scales a map so its maximum is 1; an all-zero map stays zero.
CamMap normalize_cam(CamMap map);

/// Mean of max-normalized maps.
CamMap average_maps(std::span<const CamMap> maps);

/// Averaged Grad-CAM for `target_class` over the scans of that class which
/// the model classifies correctly. Throws std::runtime_error if there are none.
template <typename T>
CamMap average_cam(Classifier<T>& model, std::span<const LabeledScan> scans, std::span<const std::size_t> indices,
                   int target_class, int stream = 0);

/// PANO file (modality cam) of the upsampled map.
void write_cam_pano(const std::filesystem::path& path, const CamMap& map);

/// 8-bit binary PGM, scaled so the image maximum maps to 255.
void write_pgm(const std::filesystem::path& path, const PanoramicImage& img);

}  // namespace ppc

#pragma once

#include "ppc/projection.hpp"

#include <cstdint>
#include <random>

namespace ppc {

struct AugmentConfig {
    bool enable_flip = true;
    bool enable_shift = true;
    std::uint64_t rng_seed = 0;
};

/// Reverses the column order.
PanoramicImage horizontal_flip(const PanoramicImage& img);

/// Output column j holds input column (j - shift) mod width; any integer shift.
PanoramicImage circular_shift(const PanoramicImage& img, long shift);

/// The random transform drawn for one training sample.
struct AugmentDraw {
    bool flip = false;
    int shift = 0;
};

/// Flip with probability 1/2 (when enabled), then a shift drawn uniformly
/// from [0, width) (when enabled).
AugmentDraw draw_augmentation(int width, const AugmentConfig& cfg, std::mt19937_64& rng);

PanoramicImage apply_augmentation(const PanoramicImage& img, const AugmentDraw& draw);

PanoramicImage sample_augmentation(const PanoramicImage& img, const AugmentConfig& cfg, std::mt19937_64& rng);

/// Applies one draw to both modalities so they stay aligned.
ProjectedScan sample_augmentation(const ProjectedScan& pair, const AugmentConfig& cfg, std::mt19937_64& rng);

}  // namespace ppc

#include "ppc/augment.hpp"

#include "ppc/tensor.hpp"

namespace ppc {

PanoramicImage horizontal_flip(const PanoramicImage& img)
{
    PanoramicImage out = img;
    const int w = img.width();
    for (int r = 0; r < img.height(); ++r) {
        for (int c = 0; c < w; ++c) out.at(r, c) = img.at(r, w - 1 - c);
    }
    return out;
}

PanoramicImage circular_shift(const PanoramicImage& img, long shift)
{
    PanoramicImage out = img;
    const long w = img.width();
    const long s = ((shift % w) + w) % w;
    for (int r = 0; r < img.height(); ++r) {
        for (long c = 0; c < w; ++c) out.at(r, static_cast<int>((c + s) % w)) = img.at(r, static_cast<int>(c));
    }
    return out;
}

AugmentDraw draw_augmentation(int width, const AugmentConfig& cfg, std::mt19937_64& rng)
{
    require(width >= 1, "augmentation needs a positive width");
    AugmentDraw d;
    // Both draws are always consumed so enabling one transform does not
    // change the other's random stream.
    const bool flip = (rng() >> 63) != 0;
    const auto shift = static_cast<int>(rng() % static_cast<std::uint64_t>(width));
    d.flip = cfg.enable_flip && flip;
    d.shift = cfg.enable_shift ? shift : 0;
    return d;
}

PanoramicImage apply_augmentation(const PanoramicImage& img, const AugmentDraw& draw)
{
    PanoramicImage out = draw.flip ? horizontal_flip(img) : img;
    return draw.shift != 0 ? circular_shift(out, draw.shift) : out;
}

PanoramicImage sample_augmentation(const PanoramicImage& img, const AugmentConfig& cfg, std::mt19937_64& rng)
{
    return apply_augmentation(img, draw_augmentation(img.width(), cfg, rng));
}

ProjectedScan sample_augmentation(const ProjectedScan& pair, const AugmentConfig& cfg, std::mt19937_64& rng)
{
    require(pair.depth.width() == pair.reflectance.width() && pair.depth.height() == pair.reflectance.height(),
            "depth and reflectance must share dimensions");
    const auto draw = draw_augmentation(pair.depth.width(), cfg, rng);
    return {apply_augmentation(pair.depth, draw), apply_augmentation(pair.reflectance, draw)};
}

}  // namespace ppc

#include "doctest.h"

#include "ppc/augment.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace ppc;

namespace {

PanoramicImage row_image(std::vector<double> values)
{
    PanoramicImage img(static_cast<int>(values.size()), 1, Modality::depth);
    img.pixels() = std::move(values);
    return img;
}

PanoramicImage random_image(int w, int h, std::uint64_t seed, double sparsity = 0.0)
{
    PanoramicImage img(w, h, Modality::depth);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    for (auto& v : img.pixels()) v = u(rng) < sparsity ? 0.0 : u(rng);
    return img;
}

// Wilson-Hilferty approximation of the chi-square quantile.
double chi_square_quantile(double df, double z)
{
    const double a = 2.0 / (9.0 * df);
    return df * std::pow(1.0 - a + z * std::sqrt(a), 3.0);
}

}  // namespace

TEST_CASE("horizontal_flip")
{
    CHECK(horizontal_flip(row_image({1, 2, 3})).pixels() == std::vector<double>{3, 2, 1});
    auto single = row_image({0.4});
    CHECK(horizontal_flip(single) == single);
    auto img = random_image(384, 32, 1);
    CHECK(horizontal_flip(horizontal_flip(img)) == img);
}

TEST_CASE("circular_shift")
{
    CHECK(circular_shift(row_image({1, 2, 3}), 1).pixels() == std::vector<double>{3, 1, 2});
    CHECK(circular_shift(row_image({1, 2, 3}), -1).pixels() == std::vector<double>{2, 3, 1});
    auto img = random_image(384, 32, 2);
    CHECK(circular_shift(img, 384) == img);
    CHECK(circular_shift(img, -384 * 3) == img);
    for (long s : {1L, 17L, 200L, 1000L, -5L}) CHECK(circular_shift(circular_shift(img, s), -s) == img);
}

TEST_CASE("transforms preserve the pixel multiset")
{
    auto img = random_image(64, 8, 3);
    auto sorted = [](const PanoramicImage& i) {
        auto v = i.pixels();
        std::sort(v.begin(), v.end());
        return v;
    };
    CHECK(sorted(horizontal_flip(img)) == sorted(img));
    CHECK(sorted(circular_shift(img, 29)) == sorted(img));
}

TEST_CASE("sample_augmentation is deterministic under a seed")
{
    auto img = random_image(384, 32, 4);
    AugmentConfig cfg;
    std::mt19937_64 a(99), b(99);
    for (int i = 0; i < 20; ++i) CHECK(sample_augmentation(img, cfg, a) == sample_augmentation(img, cfg, b));
}

TEST_CASE("sample_augmentation keeps a depth/reflectance pair aligned")
{
    ProjectedScan pair{random_image(384, 32, 5, 0.4), random_image(384, 32, 6)};
    pair.reflectance.pixels() = pair.depth.pixels();
    for (auto& v : pair.reflectance.pixels()) v = v == 0 ? 0.0 : std::min(1.0, v + 0.01);
    AugmentConfig cfg;
    std::mt19937_64 rng(7);
    for (int i = 0; i < 50; ++i) {
        auto out = sample_augmentation(pair, cfg, rng);
        for (std::size_t p = 0; p < out.depth.pixels().size(); ++p) {
            REQUIRE((out.depth.pixels()[p] == 0) == (out.reflectance.pixels()[p] == 0));
        }
    }
}

TEST_CASE("disabled transforms are identities")
{
    auto img = random_image(384, 32, 8);
    AugmentConfig cfg{false, false, 0};
    std::mt19937_64 rng(1);
    for (int i = 0; i < 10; ++i) CHECK(sample_augmentation(img, cfg, rng) == img);
}

TEST_CASE("shift draws are uniform over [0, width)")
{
    const int width = 384;
    const int draws = 100000;
    std::vector<int> counts(width, 0);
    int flips = 0;
    AugmentConfig cfg;
    std::mt19937_64 rng(2024);
    for (int i = 0; i < draws; ++i) {
        auto d = draw_augmentation(width, cfg, rng);
        REQUIRE(d.shift >= 0);
        REQUIRE(d.shift < width);
        ++counts[d.shift];
        flips += d.flip;
    }
    const double expected = static_cast<double>(draws) / width;
    double chi2 = 0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    const double df = width - 1;
    CHECK(chi2 > chi_square_quantile(df, -2.576));
    CHECK(chi2 < chi_square_quantile(df, 2.576));
    // Flip rate: 1/2 within 4 standard deviations.
    CHECK(std::abs(flips - draws / 2.0) < 4 * std::sqrt(draws * 0.25));
}

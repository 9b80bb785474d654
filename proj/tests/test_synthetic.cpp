#include "doctest.h"

#include "ppc/synthetic.hpp"
#include "ppc/training.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <set>

using namespace ppc;

namespace {

const std::array<Category, kNumCategories> kAll{Category::coast,       Category::forest,      Category::parking_in,
                                                Category::parking_out, Category::residential, Category::urban};

bool same_points(const PointCloud& a, const PointCloud& b)
{
    if (a.points.size() != b.points.size()) return false;
    for (std::size_t i = 0; i < a.points.size(); ++i) {
        const auto &p = a.points[i], &q = b.points[i];
        if (p.azimuth != q.azimuth || p.row != q.row || p.range != q.range || p.reflectance != q.reflectance)
            return false;
    }
    return true;
}

// Measured over 200 seeds per category with set styles applied, then widened.
struct Band {
    double no_return_lo, no_return_hi, range_lo, range_hi;
};
const std::map<Category, Band> kBands{
    {Category::coast, {0.30, 0.70, 6, 14}},       {Category::forest, {0.0, 0.15, 2, 10}},
    {Category::parking_in, {0.0, 0.01, 4, 13}},   {Category::parking_out, {0.15, 0.35, 5, 17}},
    {Category::residential, {0.01, 0.12, 7, 15}}, {Category::urban, {0.0, 0.03, 7, 18}},
};

}  // namespace

TEST_CASE("same category and seed give identical clouds")
{
    for (auto c : kAll) {
        auto a = generate_scene(c, 42);
        auto b = generate_scene(c, 42);
        CHECK(same_points(a.cloud, b.cloud));
        CHECK(a.label == c);
        CHECK_FALSE(same_points(a.cloud, generate_scene(c, 43).cloud));
    }
}

TEST_CASE("every category has its own recipe")
{
    for (std::size_t i = 0; i < kAll.size(); ++i) {
        CHECK(scene_recipe(kAll[i]).category == kAll[i]);
        for (std::size_t j = 0; j < i; ++j) {
            const auto &a = scene_recipe(kAll[i]), &b = scene_recipe(kAll[j]);
            const bool differ = a.clutter_density != b.clutter_density || a.ground_extent != b.ground_extent ||
                                a.no_return_sector != b.no_return_sector || a.ceiling_height != b.ceiling_height ||
                                a.building_height.hi != b.building_height.hi;
            CHECK(differ);
        }
    }
}

TEST_CASE("clouds are nonempty and within sensor limits")
{
    for (auto c : kAll) {
        const auto scene = generate_scene(c, 7);
        const auto& meta = scene.cloud.meta;
        REQUIRE_FALSE(scene.cloud.points.empty());
        CHECK(meta.n_channels == 32);
        CHECK(meta.points_per_rev == 2166);
        CHECK(scene.cloud.points.size() <= 32u * 2166u);
        for (const auto& p : scene.cloud.points) {
            REQUIRE(p.row >= 0);
            REQUIRE(p.row < 32);
            REQUIRE(p.range > 0);
            REQUIRE(p.range <= meta.max_range);
            REQUIRE(p.reflectance >= 0);
            REQUIRE(p.reflectance <= 1);
            REQUIRE(p.azimuth >= 0);
            REQUIRE(p.azimuth < 2 * std::numbers::pi);
        }
    }
}

TEST_CASE("channel elevations span the HDL-32E field of view")
{
    CHECK(channel_elevation_deg(0) == doctest::Approx(10.67));
    CHECK(channel_elevation_deg(31) == doctest::Approx(-30.67));
    for (int r = 1; r < 32; ++r) CHECK(channel_elevation_deg(r) < channel_elevation_deg(r - 1));
}

TEST_CASE("open coast and closed urban canyons")
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto coast = scene_stats(project_scan(generate_scene(Category::coast, seed).cloud, 2166));
        const auto urban = scene_stats(project_scan(generate_scene(Category::urban, seed).cloud, 2166));
        CHECK(coast.no_return_fraction > 0.25);
        CHECK(urban.no_return_fraction < 0.05);
    }
}

TEST_CASE("per-category statistics stay in their frozen bands")
{
    for (auto c : kAll) {
        const auto& band = kBands.at(c);
        for (int i = 0; i < 15; ++i) {
            const auto style = location_style(3, c, i % 5);
            const auto st = scene_stats(project_scan(generate_scene(c, 500 + i, style).cloud, 2166));
            INFO(category_name(c), " scan ", i);
            CHECK(st.no_return_fraction >= band.no_return_lo);
            CHECK(st.no_return_fraction <= band.no_return_hi);
            CHECK(st.mean_range >= band.range_lo);
            CHECK(st.mean_range <= band.range_hi);
        }
    }
}

TEST_CASE("native projection keeps depth and reflectance of each ray together")
{
    const auto scene = generate_scene(Category::residential, 11);
    const auto img = project_scan(scene.cloud, 2166);
    std::size_t returns = 0;
    for (double v : img.depth.pixels()) returns += v > 0;
    CHECK(returns == scene.cloud.points.size());
    for (const auto& p : scene.cloud.points) {
        const int col = static_cast<int>(std::floor(p.azimuth / (2 * std::numbers::pi) * 2166));
        REQUIRE(img.depth.range_at(p.row, col) == p.range);
        REQUIRE(img.reflectance.at(p.row, col) == static_cast<double>(p.reflectance));
    }
}

TEST_CASE("location sets differ systematically")
{
    std::set<double> scales;
    for (int s = 0; s < 5; ++s) {
        const auto a = location_style(1, Category::urban, s);
        const auto b = location_style(1, Category::urban, s);
        CHECK(a.scale == b.scale);
        CHECK(a.scale >= 0.85);
        CHECK(a.scale <= 1.15);
        scales.insert(a.scale);
    }
    CHECK(scales.size() == 5);
}

TEST_CASE("dataset: 6 categories x 10 sets x 20 scans")
{
    const auto scans = generate_dataset(200, 10, 5);
    REQUIRE(scans.size() == 1200);
    std::map<std::pair<int, int>, int> per;
    for (const auto& s : scans) {
        ++per[{static_cast<int>(s.label), s.location_set}];
        REQUIRE(s.depth.width() == 384);
        REQUIRE(s.depth.height() == 32);
        REQUIRE(s.reflectance.width() == 384);
        REQUIRE(s.depth.modality() == Modality::depth);
        REQUIRE(s.reflectance.modality() == Modality::reflectance);
    }
    CHECK(per.size() == 60);
    for (const auto& [key, n] : per) CHECK(n == 20);

    const auto plan = make_folds(scans, 5);
    std::vector<int> tested(scans.size(), 0);
    for (const auto& f : plan.folds) {
        std::set<std::pair<int, int>> train_groups;
        for (auto i : f.train) train_groups.insert({static_cast<int>(scans[i].label), scans[i].location_set});
        for (auto i : f.test) {
            ++tested[i];
            CHECK(train_groups.count({static_cast<int>(scans[i].label), scans[i].location_set}) == 0);
        }
        CHECK(f.train.size() + f.validation.size() + f.test.size() == scans.size());
    }
    for (int t : tested) CHECK(t == 1);
}

TEST_CASE("dataset generation does not depend on thread count")
{
    const auto a = generate_dataset(4, 2, 9, 384, 32, 1);
    const auto b = generate_dataset(4, 2, 9, 384, 32, 3);
    REQUIRE(a.size() == 24);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].depth == b[i].depth);
        CHECK(a[i].reflectance == b[i].reflectance);
        CHECK(a[i].location_set == b[i].location_set);
    }
    CHECK_THROWS_AS(generate_dataset(4, 1, 9), std::invalid_argument);
}

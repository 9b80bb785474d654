#pragma once

#include "ppc/dataset.hpp"
#include "ppc/projection.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

namespace ppc {

enum class Material { asphalt = 0, soil, sand, vegetation, bark, concrete, glass, metal };

inline constexpr int kNumMaterials = 8;

struct Interval {
    double lo = 0;
    double hi = 0;
};

/// Mean reflectance of a material and the spread of per-object means around it.
struct MaterialSpec {
    double mean = 0.5;
    double jitter = 0.0;
};

/// Parameters of one category's procedural scene. Lengths in meters.
struct SceneRecipe {
    Category category = Category::coast;
    Interval building_height;           // {0, 0}: no buildings
    Interval street_half_width;         // distance from the sensor to facades or walls
    double ground_extent = 100.0;       // horizontal radius with ground returns
    double clutter_density = 0.0;       // objects per steradian
    double no_return_sector = 0.0;      // azimuth width of the open sea, rad
    std::optional<double> ceiling_height;  // above the floor
    std::array<MaterialSpec, kNumMaterials> materials{};
    double range_sigma = 0.02;           // relative to range
    double reflectance_jitter = 0.05;    // per point, uniform
};

/// Bumped whenever a recipe or the scene builders change output.
inline constexpr int kRecipeVersion = 1;

const SceneRecipe& scene_recipe(Category category);

/// Systematic per-location-set variation applied on top of a recipe.
struct LocationStyle {
    double scale = 1.0;              // multiplies distances and heights
    double density = 1.0;            // multiplies clutter counts
    double reflectance_shift = 0.0;  // added to every material mean
};

LocationStyle location_style(std::uint64_t seed, Category category, int location_set);

/// Sensor height above the ground and elevation of channel `row` (degrees,
/// row 0 highest) of the simulated HDL-32E.
inline constexpr double kSensorHeight = 1.8;
double channel_elevation_deg(int row);

struct SyntheticScene {
    PointCloud cloud;
    Category label = Category::coast;
};

/// Ray-cast scan of a random scene of `category`: 32 channels x 2166 azimuth
/// steps, one point per ray that hits something within range. The scene is
/// rotated by a random whole number of azimuth steps.
SyntheticScene generate_scene(Category category, std::uint64_t seed, const LocationStyle& style = {});

/// Scan counts: n_per_category scans of each category, assigned to location
/// sets round-robin. Scans are projected at the native 2166 width and
/// resampled to width x height. Ordered by category, then by index.
std::vector<LabeledScan> generate_dataset(int n_per_category, int n_location_sets, std::uint64_t seed,
                                          int width = 384, int height = 32, int jobs = 1);

/// Seed of scan `index` of `category` in generate_dataset.
std::uint64_t scene_seed(std::uint64_t seed, Category category, int index);

/// Projects and resamples one scene.
LabeledScan scene_to_scan(const SyntheticScene& scene, int location_set, int width = 384, int height = 32);

struct SceneStats {
    double no_return_fraction = 0;
    double mean_range = 0;  // meters, over pixels with a return
    double mean_reflectance = 0;
};

SceneStats scene_stats(const ProjectedScan& scan);

}  // namespace ppc

#include "ppc/synthetic.hpp"

#include "ppc/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <thread>

namespace ppc {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * kPi;
constexpr double kTopElevation = 10.67;
constexpr double kBottomElevation = -30.67;

using Materials = std::array<MaterialSpec, kNumMaterials>;

// asphalt, soil, sand, vegetation, bark, concrete, glass, metal
constexpr Materials kBaseMaterials{{{0.12, 0.03}, {0.20, 0.04}, {0.45, 0.05}, {0.22, 0.05},
                                    {0.18, 0.03}, {0.45, 0.08}, {0.15, 0.05}, {0.75, 0.10}}};

Materials with(Materials m, Material which, MaterialSpec spec)
{
    m[static_cast<std::size_t>(which)] = spec;
    return m;
}

const std::array<SceneRecipe, kNumCategories> kRecipes = [] {
    std::array<SceneRecipe, kNumCategories> r{};

    auto& coast = r[0];
    coast.category = Category::coast;
    coast.ground_extent = 60;
    coast.clutter_density = 1.5;
    coast.no_return_sector = kPi;
    coast.materials = kBaseMaterials;

    auto& forest = r[1];
    forest.category = Category::forest;
    forest.ground_extent = 40;
    forest.clutter_density = 12;
    forest.materials = with(kBaseMaterials, Material::vegetation, {0.20, 0.06});

    auto& pin = r[2];
    pin.category = Category::parking_in;
    pin.street_half_width = {10, 28};
    pin.ground_extent = 60;
    pin.clutter_density = 1.6;
    pin.ceiling_height = 2.8;
    pin.materials = with(kBaseMaterials, Material::concrete, {0.38, 0.06});

    auto& pout = r[3];
    pout.category = Category::parking_out;
    pout.building_height = {4, 9};
    pout.ground_extent = 100;
    pout.clutter_density = 2.0;
    pout.materials = kBaseMaterials;

    auto& res = r[4];
    res.category = Category::residential;
    res.building_height = {5, 10};
    res.street_half_width = {4, 6};
    res.ground_extent = 100;
    res.clutter_density = 1.0;
    res.materials = with(kBaseMaterials, Material::concrete, {0.60, 0.12});  // painted

    auto& urban = r[5];
    urban.category = Category::urban;
    urban.building_height = {15, 40};
    urban.street_half_width = {7, 12};
    urban.ground_extent = 100;
    urban.clutter_density = 1.5;
    urban.materials = kBaseMaterials;
    return r;
}();

struct Box {
    double lo[3];
    double hi[3];
    float reflectance;
};

struct Hit {
    double t = std::numeric_limits<double>::infinity();
    double cos_incidence = 1;
    float reflectance = 0;
};

class SceneBuilder {
public:
    SceneBuilder(const SceneRecipe& recipe, const LocationStyle& style, std::uint64_t seed)
        : recipe_(recipe), style_(style), rng_(seed)
    {
    }

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
    double uniform(Interval i) { return uniform(i.lo, i.hi); }
    bool chance(double p) { return std::bernoulli_distribution(p)(rng_); }
    int clutter_count(double factor = 1.0)
    {
        const double mean = recipe_.clutter_density * 4.0 * kPi * style_.density * factor;
        return std::poisson_distribution<int>(mean)(rng_);
    }
    double scale() const { return style_.scale; }
    std::mt19937_64& rng() { return rng_; }

    float draw_reflectance(Material m)
    {
        const auto& spec = recipe_.materials[static_cast<std::size_t>(m)];
        const double v = spec.mean + style_.reflectance_shift + uniform(-spec.jitter, spec.jitter);
        return static_cast<float>(std::clamp(v, 0.02, 1.0));
    }

    void box(double x0, double x1, double y0, double y1, double z0, double z1, Material m)
    {
        boxes.push_back({{std::min(x0, x1), std::min(y0, y1), z0}, {std::max(x0, x1), std::max(y0, y1), z1},
                         draw_reflectance(m)});
    }

    // Footprint centered at (x, y).
    void centered(double x, double y, double sx, double sy, double z0, double z1, Material m)
    {
        box(x - sx / 2, x + sx / 2, y - sy / 2, y + sy / 2, z0, z1, m);
    }

    void tree(double x, double y, double trunk_top, double canopy, double canopy_depth)
    {
        const double trunk = uniform(0.25, 0.6);
        centered(x, y, trunk, trunk, ground_z, ground_z + trunk_top + 0.5, Material::bark);
        centered(x, y, canopy, canopy, ground_z + trunk_top, ground_z + trunk_top + canopy_depth, Material::vegetation);
    }

    void car(double x, double y, bool along_x)
    {
        const double len = uniform(3.8, 4.9), wid = uniform(1.6, 1.9), hgt = uniform(1.3, 1.7);
        centered(x, y, along_x ? len : wid, along_x ? wid : len, ground_z + 0.15, ground_z + hgt, Material::metal);
    }

    // Random point at horizontal distance [r0, r1] and azimuth [a0, a1].
    std::pair<double, double> polar(double r0, double r1, double a0 = 0, double a1 = kTwoPi)
    {
        const double r = uniform(r0, r1), a = uniform(a0, a1);
        return {r * std::cos(a), r * std::sin(a)};
    }

    const SceneRecipe& recipe_;
    const LocationStyle& style_;
    std::mt19937_64 rng_;
    std::vector<Box> boxes;
    double ground_z = -kSensorHeight;
    double ground_extent = 100;
    Material ground = Material::asphalt;
    float ground_reflectance = 0;
    std::optional<double> ceiling_z;
    float ceiling_reflectance = 0;
    // Open sea: ground beyond `shore` within the sector returns nothing.
    double sea_half_width = 0;
    double shore = 0;
};

void build_coast(SceneBuilder& b)
{
    const double s = b.scale();
    b.ground = Material::sand;
    b.sea_half_width = b.recipe_.no_return_sector / 2 * b.uniform(0.9, 1.1);
    b.shore = b.uniform(2, 6) * s;
    // Treeline on the land side, opposite the sea (centered at azimuth pi).
    const double land = kPi - b.sea_half_width;
    const int trees = b.clutter_count();
    for (int i = 0; i < trees; ++i) {
        auto [x, y] = b.polar(10 * s, 35 * s, kPi - 0.9 * land, kPi + 0.9 * land);
        b.tree(x, y, b.uniform(2, 4), b.uniform(3, 6), b.uniform(3, 7));
    }
    const int rocks = 1 + static_cast<int>(b.uniform(0, 4));
    for (int i = 0; i < rocks; ++i) {
        auto [x, y] = b.polar(3 * s, 12 * s, kPi - land, kPi + land);
        b.centered(x, y, b.uniform(0.8, 2.5), b.uniform(0.8, 2.5), b.ground_z, b.ground_z + b.uniform(0.4, 1.2),
                   Material::concrete);
    }
}

void build_forest(SceneBuilder& b)
{
    const double s = b.scale();
    b.ground = Material::soil;
    const int trees = b.clutter_count();
    for (int i = 0; i < trees; ++i) {
        auto [x, y] = b.polar(1.5 * s, 30 * s);
        b.tree(x, y, b.uniform(3, 6) * s, b.uniform(3, 7), b.uniform(3, 8) * s);
    }
    const int bushes = b.clutter_count(0.5);
    for (int i = 0; i < bushes; ++i) {
        auto [x, y] = b.polar(1.5 * s, 20 * s);
        b.centered(x, y, b.uniform(0.5, 2), b.uniform(0.5, 2), b.ground_z, b.ground_z + b.uniform(0.3, 1.5),
                   Material::vegetation);
    }
}

void build_parking_in(SceneBuilder& b)
{
    const double s = b.scale();
    b.ground = Material::concrete;
    const double height = *b.recipe_.ceiling_height + b.uniform(-0.3, 0.3);
    b.ceiling_z = b.ground_z + height;
    b.ceiling_reflectance = b.draw_reflectance(Material::concrete);
    const double top = *b.ceiling_z;
    const double xa = b.uniform(b.recipe_.street_half_width) * s, xb = b.uniform(b.recipe_.street_half_width) * s;
    const double ya = b.uniform(b.recipe_.street_half_width) * s, yb = b.uniform(b.recipe_.street_half_width) * s;
    constexpr double wall = 0.3;
    b.box(-xa - wall, xb + wall, -ya - wall, -ya, b.ground_z, top, Material::concrete);
    b.box(-xa - wall, xb + wall, yb, yb + wall, b.ground_z, top, Material::concrete);
    b.box(-xa - wall, -xa, -ya, yb, b.ground_z, top, Material::concrete);
    b.box(xb, xb + wall, -ya, yb, b.ground_z, top, Material::concrete);

    const double grid = b.uniform(6, 9) * s;
    const double ox = b.uniform(0, grid), oy = b.uniform(0, grid);
    for (double x = -xa + ox; x < xb; x += grid) {
        for (double y = -ya + oy; y < yb; y += grid) {
            if (std::hypot(x, y) < 1.5) continue;
            b.centered(x, y, 0.6, 0.6, b.ground_z, top, Material::concrete);
        }
    }
    const int cars = b.clutter_count();
    for (int i = 0; i < cars; ++i) {
        const double x = b.uniform(-xa + 3, xb - 3), y = b.uniform(-ya + 3, yb - 3);
        if (std::hypot(x, y) < 3) continue;
        b.car(x, y, b.chance(0.5));
    }
}

void build_parking_out(SceneBuilder& b)
{
    const double s = b.scale();
    b.ground = Material::asphalt;
    const int cars = b.clutter_count();
    for (int i = 0; i < cars; ++i) {
        auto [x, y] = b.polar(4 * s, 45 * s);
        b.car(x, y, b.chance(0.5));
    }
    const int poles = 2 + static_cast<int>(b.uniform(0, 5));
    for (int i = 0; i < poles; ++i) {
        auto [x, y] = b.polar(5 * s, 40 * s);
        b.centered(x, y, 0.25, 0.25, b.ground_z, b.ground_z + b.uniform(6, 9), Material::metal);
    }
    const int buildings = 2 + static_cast<int>(b.uniform(0, 4));
    for (int i = 0; i < buildings; ++i) {
        auto [x, y] = b.polar(50 * s, 85 * s);
        b.centered(x, y, b.uniform(15, 40), b.uniform(10, 20), b.ground_z,
                   b.ground_z + b.uniform(b.recipe_.building_height) * s, Material::concrete);
    }
    const int trees = static_cast<int>(b.uniform(0, 8));
    for (int i = 0; i < trees; ++i) {
        auto [x, y] = b.polar(40 * s, 70 * s);
        b.tree(x, y, b.uniform(2, 4), b.uniform(3, 6), b.uniform(3, 6));
    }
}

// Buildings along both sides of a street running in x.
void build_residential(SceneBuilder& b)
{
    const double s = b.scale();
    b.ground = Material::asphalt;
    const double half = b.uniform(b.recipe_.street_half_width) * s;
    for (double side : {-1.0, 1.0}) {
        double x = -100 + b.uniform(0, 10);
        while (x < 100) {
            const double gap = b.uniform(3, 9) * s;
            if (b.chance(0.6)) {
                b.tree(x + gap / 2, side * (half + b.uniform(2, 5)), b.uniform(1.5, 3), b.uniform(2, 4),
                       b.uniform(2, 5));
            }
            x += gap;
            const double len = b.uniform(8, 14) * s, depth = b.uniform(8, 12);
            const double setback = half + b.uniform(2, 6) * s;
            const double hgt = b.uniform(b.recipe_.building_height) * s;
            b.box(x, x + len, side * setback, side * (setback + depth), b.ground_z, b.ground_z + hgt,
                  Material::concrete);
            x += len;
        }
    }
    const int cars = b.clutter_count();
    for (int i = 0; i < cars; ++i) {
        const double x = b.uniform(-60, 60);
        if (std::abs(x) < 4) continue;
        b.car(x, (b.chance(0.5) ? -1 : 1) * (half - 1.2), true);
    }
}

// Tall continuous facades along a corridor in x, closed fore and aft.
void build_urban(SceneBuilder& b)
{
    const double s = b.scale();
    b.ground = Material::asphalt;
    const double half = b.uniform(b.recipe_.street_half_width) * s;
    const double fore = b.uniform(55, 90) * s, aft = b.uniform(55, 90) * s;
    for (double side : {-1.0, 1.0}) {
        double x = -aft - 20;
        while (x < fore + 20) {
            const double len = b.uniform(10, 30) * s;
            const double hgt = b.uniform(b.recipe_.building_height) * s;
            b.box(x, x + len, side * half, side * (half + 15), b.ground_z, b.ground_z + hgt,
                  b.chance(0.3) ? Material::glass : Material::concrete);
            x += len;
        }
    }
    b.box(fore, fore + 20, -80, 80, b.ground_z, b.ground_z + b.uniform(30, 50) * s, Material::concrete);
    b.box(-aft - 20, -aft, -80, 80, b.ground_z, b.ground_z + b.uniform(30, 50) * s, Material::concrete);
    const int cars = b.clutter_count();
    for (int i = 0; i < cars; ++i) {
        const double x = b.uniform(-aft + 5, fore - 5);
        if (std::abs(x) < 4) continue;
        b.car(x, (b.chance(0.5) ? -1 : 1) * (half - 1.5), true);
    }
    const int poles = 2 + static_cast<int>(b.uniform(0, 6));
    for (int i = 0; i < poles; ++i) {
        b.centered(b.uniform(-aft, fore), (b.chance(0.5) ? -1 : 1) * (half - 0.4), 0.2, 0.2, b.ground_z,
                   b.ground_z + b.uniform(5, 8), Material::metal);
    }
}

// Entry/exit distances of the ray along d; axis of the entry face.
bool intersect(const Box& box, const double d[3], double& t_hit, int& axis)
{
    double t0 = 0, t1 = std::numeric_limits<double>::infinity();
    int a0 = -1;
    for (int k = 0; k < 3; ++k) {
        if (d[k] == 0) {
            if (box.lo[k] > 0 || box.hi[k] < 0) return false;
            continue;
        }
        double ta = box.lo[k] / d[k], tb = box.hi[k] / d[k];
        if (ta > tb) std::swap(ta, tb);
        if (ta > t0) {
            t0 = ta;
            a0 = k;
        }
        t1 = std::min(t1, tb);
        if (t0 > t1) return false;
    }
    if (a0 < 0) return false;  // sensor inside the box
    t_hit = t0;
    axis = a0;
    return true;
}

int column_of(double azimuth, int width)
{
    double a = std::fmod(azimuth, kTwoPi);
    if (a < 0) a += kTwoPi;
    return static_cast<int>(std::floor(a / kTwoPi * width)) % width;
}

double wrap_pi(double a)
{
    a = std::fmod(a + kPi, kTwoPi);
    if (a < 0) a += kTwoPi;
    return a - kPi;
}

// Boxes that can intersect each column's vertical half-plane.
std::vector<std::vector<int>> bucket_boxes(const std::vector<Box>& boxes, int width)
{
    std::vector<std::vector<int>> buckets(static_cast<std::size_t>(width));
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const auto& b = boxes[i];
        const bool around = b.lo[0] <= 0 && b.hi[0] >= 0 && b.lo[1] <= 0 && b.hi[1] >= 0;
        int first = 0, count = width;
        if (!around) {
            const double cx = (b.lo[0] + b.hi[0]) / 2, cy = (b.lo[1] + b.hi[1]) / 2;
            const double center = std::atan2(cy, cx);
            double lo = 0, hi = 0;
            for (double x : {b.lo[0], b.hi[0]}) {
                for (double y : {b.lo[1], b.hi[1]}) {
                    const double d = wrap_pi(std::atan2(y, x) - center);
                    lo = std::min(lo, d);
                    hi = std::max(hi, d);
                }
            }
            first = column_of(center + lo, width) - 1;
            count = std::min(width, column_of(hi - lo, width) + 3);
        }
        for (int j = 0; j < count; ++j) buckets[static_cast<std::size_t>(((first + j) % width + width) % width)].push_back(
            static_cast<int>(i));
    }
    return buckets;
}

}  // namespace

const SceneRecipe& scene_recipe(Category category)
{
    const auto i = static_cast<std::size_t>(category);
    if (i >= kRecipes.size()) throw std::invalid_argument("scene_recipe: invalid category");
    return kRecipes[i];
}

LocationStyle location_style(std::uint64_t seed, Category category, int location_set)
{
    std::mt19937_64 rng(derive_seed(derive_seed(seed, 0x10ca7e), static_cast<std::uint64_t>(category),
                                    static_cast<std::uint64_t>(location_set)));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    LocationStyle s;
    s.scale = 0.85 + 0.3 * u(rng);
    s.density = 0.75 + 0.55 * u(rng);
    s.reflectance_shift = -0.04 + 0.08 * u(rng);
    return s;
}

double channel_elevation_deg(int row)
{
    return kTopElevation + (kBottomElevation - kTopElevation) * row / 31.0;
}

SyntheticScene generate_scene(Category category, std::uint64_t seed, const LocationStyle& style)
{
    const auto& recipe = scene_recipe(category);
    SceneBuilder b(recipe, style, seed);
    switch (category) {
    case Category::coast: build_coast(b); break;
    case Category::forest: build_forest(b); break;
    case Category::parking_in: build_parking_in(b); break;
    case Category::parking_out: build_parking_out(b); break;
    case Category::residential: build_residential(b); break;
    case Category::urban: build_urban(b); break;
    }
    b.ground_extent = std::min(recipe.ground_extent * style.scale, 100.0);
    b.ground_reflectance = b.draw_reflectance(b.ground);

    SyntheticScene scene;
    scene.label = category;
    auto& cloud = scene.cloud;
    const SensorMeta& meta = cloud.meta;
    const int width = meta.points_per_rev;
    const auto buckets = bucket_boxes(b.boxes, width);
    const int yaw = std::uniform_int_distribution<int>(0, width - 1)(b.rng());
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> jitter(-recipe.reflectance_jitter, recipe.reflectance_jitter);

    cloud.points.reserve(static_cast<std::size_t>(width) * meta.n_channels);
    for (int row = 0; row < meta.n_channels; ++row) {
        const double e = channel_elevation_deg(row) * kPi / 180.0;
        for (int col = 0; col < width; ++col) {
            const double az = (col + 0.5) * kTwoPi / width;
            const double d[3] = {std::cos(e) * std::cos(az), std::cos(e) * std::sin(az), std::sin(e)};
            Hit hit;
            if (d[2] < 0) {
                const double t = b.ground_z / d[2];
                const double horizontal = t * std::cos(e);
                const bool sea = b.sea_half_width > 0 && std::abs(wrap_pi(az)) < b.sea_half_width && horizontal > b.shore;
                if (horizontal <= b.ground_extent && !sea) hit = {t, -d[2], b.ground_reflectance};
            } else if (d[2] > 0 && b.ceiling_z) {
                hit = {*b.ceiling_z / d[2], d[2], b.ceiling_reflectance};
            }
            for (int i : buckets[static_cast<std::size_t>(col)]) {
                double t;
                int axis;
                if (intersect(b.boxes[static_cast<std::size_t>(i)], d, t, axis) && t < hit.t) {
                    hit = {t, std::abs(d[axis]), b.boxes[static_cast<std::size_t>(i)].reflectance};
                }
            }
            // Noise is drawn for every ray so scenes stay aligned draw-for-draw.
            const double n = noise(b.rng());
            const double j = jitter(b.rng());
            if (!std::isfinite(hit.t)) continue;
            const double range = hit.t * (1.0 + recipe.range_sigma * n);
            if (range <= 0.05 || range > meta.max_range) continue;
            const double refl = hit.reflectance * (0.65 + 0.35 * hit.cos_incidence) + j;
            cloud.points.push_back({((col + yaw) % width + 0.5) * kTwoPi / width, row, static_cast<float>(range),
                                    static_cast<float>(std::clamp(refl, 0.0, 1.0))});
        }
    }
    return scene;
}

std::uint64_t scene_seed(std::uint64_t seed, Category category, int index)
{
    return derive_seed(seed, static_cast<std::uint64_t>(category), static_cast<std::uint64_t>(index));
}

LabeledScan scene_to_scan(const SyntheticScene& scene, int location_set, int width, int height)
{
    auto projected = project_resampled(scene.cloud, width, height);
    LabeledScan s;
    s.depth = std::move(projected.depth);
    s.reflectance = std::move(projected.reflectance);
    s.label = scene.label;
    s.location_set = location_set;
    return s;
}

std::vector<LabeledScan> generate_dataset(int n_per_category, int n_location_sets, std::uint64_t seed, int width,
                                          int height, int jobs)
{
    if (n_per_category < 1) throw std::invalid_argument("generate_dataset: n_per_category must be >= 1");
    if (n_location_sets < 2) throw std::invalid_argument("generate_dataset: need at least 2 location sets");
    const auto total = static_cast<std::size_t>(n_per_category) * kNumCategories;
    std::vector<LabeledScan> scans(total);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t k = next++; k < total; k = next++) {
            const auto cat = static_cast<int>(k / static_cast<std::size_t>(n_per_category));
            const auto i = static_cast<int>(k % static_cast<std::size_t>(n_per_category));
            const int set = i % n_location_sets;
            const auto category = static_cast<Category>(cat);
            const auto scene = generate_scene(category, scene_seed(seed, category, i), location_style(seed, category, set));
            scans[k] = scene_to_scan(scene, set, width, height);
        }
    };
    const int threads = std::max(1, std::min<int>(jobs, static_cast<int>(total)));
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    return scans;
}

SceneStats scene_stats(const ProjectedScan& scan)
{
    SceneStats st;
    const auto& d = scan.depth.pixels();
    const auto& r = scan.reflectance.pixels();
    std::size_t hits = 0;
    double range = 0, refl = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d[i] <= 0) continue;
        ++hits;
        range += d[i] * scan.depth.max_range();
        refl += r[i];
    }
    st.no_return_fraction = d.empty() ? 0.0 : 1.0 - static_cast<double>(hits) / static_cast<double>(d.size());
    if (hits > 0) {
        st.mean_range = range / static_cast<double>(hits);
        st.mean_reflectance = refl / static_cast<double>(hits);
    }
    return st;
}

}  // namespace ppc

#pragma once

#include "ppc/projection.hpp"
#include "ppc/tensor.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ppc {

enum class Category { coast = 0, forest, parking_in, parking_out, residential, urban };

inline constexpr int kNumCategories = 6;

inline constexpr std::array<std::string_view, kNumCategories> kCategoryNames{
    "Coast", "Forest", "ParkingIn", "ParkingOut", "Residential", "Urban"};

std::string_view category_name(Category c);
std::optional<Category> parse_category(std::string_view name);

/// One scan with its place label and the location set it was recorded in.
struct LabeledScan {
    PanoramicImage depth;
    PanoramicImage reflectance;
    Category label = Category::coast;
    int location_set = 0;
};

/// Network input for a batch. A model reads only the modalities it needs.
template <typename T>
struct InputBatch {
    Tensor<T> depth;        // [N, 1, H, W]
    Tensor<T> reflectance;  // [N, 1, H, W]
};

/// Gathers scans into [N, 1, H, W] tensors. `indices` selects and orders the
/// scans; an empty span means all of them.
template <typename T>
InputBatch<T> make_batch(std::span<const LabeledScan> scans, std::span<const std::size_t> indices = {});

template <typename T>
Tensor<T> image_tensor(std::span<const PanoramicImage* const> images);

/// One row of a dataset index CSV (`path,category,location_set`). `path` is
/// relative to the index file: a point-cloud `.csv`, or a stem with
/// `<stem>.depth.pano` and `<stem>.reflectance.pano` next to it.
struct IndexEntry {
    std::string path;
    Category category = Category::coast;
    int location_set = 0;
};

std::vector<IndexEntry> read_index(const std::filesystem::path& csv);
void write_index(const std::filesystem::path& csv, const std::vector<IndexEntry>& entries);

/// Loads every indexed scan; clouds are projected and resampled to
/// width x height.
std::vector<LabeledScan> load_dataset(const std::filesystem::path& index_csv, int width = 384, int height = 32);

/// Writes `<stem>.depth.pano` and `<stem>.reflectance.pano`.
void write_scan(const std::filesystem::path& stem, const LabeledScan& scan);

std::vector<int> labels_of(std::span<const LabeledScan> scans, std::span<const std::size_t> indices = {});

}  // namespace ppc

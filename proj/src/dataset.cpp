#include "ppc/dataset.hpp"

#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ppc {

std::string_view category_name(Category c) { return kCategoryNames.at(static_cast<std::size_t>(c)); }

std::optional<Category> parse_category(std::string_view name)
{
    for (std::size_t i = 0; i < kCategoryNames.size(); ++i) {
        if (kCategoryNames[i] == name) return static_cast<Category>(i);
    }
    return std::nullopt;
}

template <typename T>
Tensor<T> image_tensor(std::span<const PanoramicImage* const> images)
{
    require(!images.empty(), "image_tensor: no images");
    const int h = images[0]->height();
    const int w = images[0]->width();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<T> data(images.size() * plane);
    for (std::size_t i = 0; i < images.size(); ++i) {
        require(images[i]->height() == h && images[i]->width() == w, "image_tensor: images differ in size");
        const auto& px = images[i]->pixels();
        for (std::size_t p = 0; p < plane; ++p) data[i * plane + p] = static_cast<T>(px[p]);
    }
    return Tensor<T>({images.size(), 1, static_cast<std::size_t>(h), static_cast<std::size_t>(w)}, std::move(data));
}

namespace {

std::vector<std::size_t> resolve(std::span<const LabeledScan> scans, std::span<const std::size_t> indices)
{
    if (!indices.empty()) return {indices.begin(), indices.end()};
    std::vector<std::size_t> all(scans.size());
    std::iota(all.begin(), all.end(), 0);
    return all;
}

}  // namespace

template <typename T>
InputBatch<T> make_batch(std::span<const LabeledScan> scans, std::span<const std::size_t> indices)
{
    const auto idx = resolve(scans, indices);
    require(!idx.empty(), "make_batch: empty batch");
    std::vector<const PanoramicImage*> depth;
    std::vector<const PanoramicImage*> refl;
    for (auto i : idx) {
        require(i < scans.size(), "make_batch: index out of range");
        depth.push_back(&scans[i].depth);
        refl.push_back(&scans[i].reflectance);
    }
    return {image_tensor<T>(depth), image_tensor<T>(refl)};
}

std::vector<int> labels_of(std::span<const LabeledScan> scans, std::span<const std::size_t> indices)
{
    std::vector<int> out;
    for (auto i : resolve(scans, indices)) out.push_back(static_cast<int>(scans[i].label));
    return out;
}

std::vector<IndexEntry> read_index(const std::filesystem::path& csv)
{
    std::ifstream in(csv);
    if (!in) throw std::runtime_error("cannot read " + csv.string());
    std::vector<IndexEntry> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1 && line == "path,category,location_set") continue;
        const auto where = csv.string() + ":" + std::to_string(line_no) + ": ";
        std::stringstream ss(line);
        std::string path, cat, set;
        if (!std::getline(ss, path, ',') || !std::getline(ss, cat, ',') || !std::getline(ss, set) || path.empty())
            throw std::runtime_error(where + "expected path,category,location_set");
        const auto category = parse_category(cat);
        if (!category) throw std::runtime_error(where + "unknown category '" + cat + "'");
        IndexEntry e{path, *category, 0};
        try {
            std::size_t used = 0;
            e.location_set = std::stoi(set, &used);
            if (used != set.size()) throw std::invalid_argument(set);
        } catch (const std::logic_error&) {
            throw std::runtime_error(where + "bad location_set '" + set + "'");
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

void write_index(const std::filesystem::path& csv, const std::vector<IndexEntry>& entries)
{
    std::ofstream out(csv);
    if (!out) throw std::runtime_error("cannot write " + csv.string());
    out << "path,category,location_set\n";
    for (const auto& e : entries) {
        if (e.path.find_first_of(",\n") != std::string::npos) throw std::invalid_argument("index path contains a comma: " + e.path);
        out << e.path << ',' << category_name(e.category) << ',' << e.location_set << '\n';
    }
    if (!out) throw std::runtime_error("failed writing " + csv.string());
}

std::vector<LabeledScan> load_dataset(const std::filesystem::path& index_csv, int width, int height)
{
    const auto base = index_csv.parent_path();
    std::vector<LabeledScan> scans;
    for (const auto& e : read_index(index_csv)) {
        LabeledScan s;
        s.label = e.category;
        s.location_set = e.location_set;
        const auto path = base / e.path;
        if (path.extension() == ".csv") {
            auto projected = project_resampled(read_point_cloud_csv(path), width, height);
            s.depth = std::move(projected.depth);
            s.reflectance = std::move(projected.reflectance);
        } else {
            s.depth = read_panorama(path.string() + ".depth.pano");
            s.reflectance = read_panorama(path.string() + ".reflectance.pano");
            if (s.depth.modality() != Modality::depth || s.reflectance.modality() != Modality::reflectance)
                throw std::runtime_error(path.string() + ": panorama modalities do not match their file names");
        }
        if (s.depth.width() != width || s.depth.height() != height || s.reflectance.width() != width ||
            s.reflectance.height() != height) {
            throw std::runtime_error(path.string() + ": expected " + std::to_string(width) + "x" +
                                     std::to_string(height) + " panoramas");
        }
        scans.push_back(std::move(s));
    }
    return scans;
}

void write_scan(const std::filesystem::path& stem, const LabeledScan& scan)
{
    write_panorama(stem.string() + ".depth.pano", scan.depth);
    write_panorama(stem.string() + ".reflectance.pano", scan.reflectance);
}

template InputBatch<float> make_batch(std::span<const LabeledScan>, std::span<const std::size_t>);
template InputBatch<double> make_batch(std::span<const LabeledScan>, std::span<const std::size_t>);
template Tensor<float> image_tensor(std::span<const PanoramicImage* const>);
template Tensor<double> image_tensor(std::span<const PanoramicImage* const>);

}  // namespace ppc

#include "ppc/projection.hpp"

#include "ppc/checkpoint.hpp"
#include "ppc/tensor.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace ppc {

PanoramicImage::PanoramicImage(int width, int height, Modality modality, double max_range)
    : width_(width), height_(height), modality_(modality), max_range_(max_range)
{
    require(width >= 1 && height >= 1, "panorama dimensions must be positive");
    require(max_range > 0, "max_range must be positive");
    pixels_.assign(static_cast<std::size_t>(width) * height, 0.0);
}

float PanoramicImage::range_at(int row, int col) const
{
    return static_cast<float>(at(row, col) * max_range_);
}

ProjectedScan project_scan(const PointCloud& cloud, int width)
{
    require(width >= 1, "projection width must be positive");
    if (cloud.points.empty()) {
        throw EmptyCloudError();
    }
    const auto& meta = cloud.meta;
    require(meta.max_range > 0 && meta.n_channels >= 1, "invalid sensor metadata");
    ProjectedScan scan{PanoramicImage(width, meta.n_channels, Modality::depth, meta.max_range),
                       PanoramicImage(width, meta.n_channels, Modality::reflectance, meta.max_range)};

    constexpr double two_pi = 2.0 * std::numbers::pi;
    // Nearest range seen per pixel; +inf marks untouched.
    std::vector<double> nearest(scan.depth.pixels().size(), std::numeric_limits<double>::infinity());
    for (const auto& p : cloud.points) {
        require(p.row >= 0 && p.row < meta.n_channels,
                "point row " + std::to_string(p.row) + " outside [0, " + std::to_string(meta.n_channels) + ")");
        double az = std::fmod(p.azimuth, two_pi);
        if (az < 0) az += two_pi;
        const int col = std::clamp(static_cast<int>(std::floor(az / two_pi * width)), 0, width - 1);
        const double range = std::clamp(static_cast<double>(p.range), 0.0, meta.max_range);
        const std::size_t idx = static_cast<std::size_t>(p.row) * width + col;
        if (range < nearest[idx]) {
            nearest[idx] = range;
            scan.depth.pixels()[idx] = range / meta.max_range;
            scan.reflectance.pixels()[idx] = std::clamp(static_cast<double>(p.reflectance), 0.0, 1.0);
        }
    }
    return scan;
}

ProjectedScan project_resampled(const PointCloud& cloud, int width, int height)
{
    auto native = project_scan(cloud, cloud.meta.points_per_rev);
    if (width == native.depth.width() && height == native.depth.height()) return native;
    return {downsample_bilinear(native.depth, width, height), downsample_bilinear(native.reflectance, width, height)};
}

PanoramicImage resize_bilinear_wrap(const PanoramicImage& img, int out_w, int out_h)
{
    require(out_w >= 1 && out_h >= 1, "resize target must be positive");
    const int in_w = img.width();
    const int in_h = img.height();
    PanoramicImage out(out_w, out_h, img.modality(), img.max_range());
    const double sx = static_cast<double>(in_w) / out_w;
    const double sy = static_cast<double>(in_h) / out_h;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(in_h - 1));
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, in_h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = (x + 0.5) * sx - 0.5;
            const double fl = std::floor(fx);
            const double wx = fx - fl;
            const int x0 = ((static_cast<int>(fl) % in_w) + in_w) % in_w;
            const int x1 = (x0 + 1) % in_w;
            const double top = std::lerp(img.at(y0, x0), img.at(y0, x1), wx);
            const double bottom = std::lerp(img.at(y1, x0), img.at(y1, x1), wx);
            out.at(y, x) = std::lerp(top, bottom, wy);
        }
    }
    return out;
}

PanoramicImage downsample_bilinear(const PanoramicImage& img, int out_w, int out_h)
{
    require(out_w <= img.width() && out_h <= img.height(),
            "downsample_bilinear cannot upsample (" + std::to_string(img.width()) + "x" +
                std::to_string(img.height()) + " -> " + std::to_string(out_w) + "x" + std::to_string(out_h) + ")");
    auto out = resize_bilinear_wrap(img, out_w, out_h);
    if (img.modality() != Modality::cam) {
        for (auto& v : out.pixels()) v = std::clamp(v, 0.0, 1.0);
    }
    return out;
}

namespace {

std::string trim(std::string s)
{
    const auto first = s.find_first_not_of(" \t\r");
    const auto last = s.find_last_not_of(" \t\r");
    return first == std::string::npos ? std::string() : s.substr(first, last - first + 1);
}

template <typename V>
V parse_number(const std::string& field, std::size_t line, const char* what)
{
    V value{};
    const auto* begin = field.data();
    const auto* end = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end) {
        throw std::runtime_error("line " + std::to_string(line) + ": invalid " + what + " '" + field + "'");
    }
    return value;
}

void parse_meta(const std::string& line, std::size_t line_no, SensorMeta& meta)
{
    std::istringstream is(line.substr(5));
    std::string kv;
    while (is >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("line " + std::to_string(line_no) + ": malformed meta entry '" + kv + "'");
        }
        const auto key = kv.substr(0, eq);
        const auto val = kv.substr(eq + 1);
        if (key == "max_range") {
            meta.max_range = parse_number<double>(val, line_no, "max_range");
        } else if (key == "n_channels") {
            meta.n_channels = parse_number<int>(val, line_no, "n_channels");
        } else if (key == "points_per_rev") {
            meta.points_per_rev = parse_number<int>(val, line_no, "points_per_rev");
        } else {
            throw std::runtime_error("line " + std::to_string(line_no) + ": unknown meta key '" + key + "'");
        }
    }
    if (meta.max_range <= 0 || meta.n_channels < 1 || meta.points_per_rev < 1) {
        throw std::runtime_error("line " + std::to_string(line_no) + ": meta values must be positive");
    }
}

template <typename V>
std::string shortest(V v)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace

PointCloud parse_point_cloud_csv(std::istream& in)
{
    PointCloud cloud;
    std::string raw;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto line = trim(raw);
        if (line.empty()) continue;
        if (line.rfind("#meta", 0) == 0) {
            parse_meta(line, line_no, cloud.meta);
            continue;
        }
        if (line[0] == '#') continue;
        if (!header_seen) {
            if (line != "azimuth_rad,row,range_m,reflectance") {
                throw std::runtime_error("line " + std::to_string(line_no) +
                                         ": expected header 'azimuth_rad,row,range_m,reflectance'");
            }
            header_seen = true;
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(trim(f));
        if (fields.size() != 4) {
            throw std::runtime_error("line " + std::to_string(line_no) + ": expected 4 fields, got " +
                                     std::to_string(fields.size()));
        }
        LidarPoint p;
        p.azimuth = parse_number<double>(fields[0], line_no, "azimuth");
        p.row = parse_number<int>(fields[1], line_no, "row");
        p.range = parse_number<float>(fields[2], line_no, "range");
        p.reflectance = parse_number<float>(fields[3], line_no, "reflectance");
        if (!std::isfinite(p.azimuth) || !std::isfinite(p.range) || p.range <= 0) {
            throw std::runtime_error("line " + std::to_string(line_no) + ": range must be positive and finite");
        }
        if (p.reflectance < 0 || p.reflectance > 1) {
            throw std::runtime_error("line " + std::to_string(line_no) + ": reflectance outside [0, 1]");
        }
        if (p.row < 0 || p.row >= cloud.meta.n_channels) {
            throw std::runtime_error("line " + std::to_string(line_no) + ": row outside [0, n_channels)");
        }
        cloud.points.push_back(p);
    }
    if (cloud.points.empty()) {
        throw EmptyCloudError();
    }
    return cloud;
}

PointCloud read_point_cloud_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return parse_point_cloud_csv(in);
}

void write_point_cloud_csv(std::ostream& out, const PointCloud& cloud)
{
    out << "#meta max_range=" << shortest(cloud.meta.max_range) << " n_channels=" << cloud.meta.n_channels
        << " points_per_rev=" << cloud.meta.points_per_rev << '\n';
    out << "azimuth_rad,row,range_m,reflectance\n";
    for (const auto& p : cloud.points) {
        out << shortest(p.azimuth) << ',' << p.row << ',' << shortest(p.range) << ',' << shortest(p.reflectance)
            << '\n';
    }
}

void write_point_cloud_csv(const std::filesystem::path& path, const PointCloud& cloud)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    write_point_cloud_csv(out, cloud);
}

std::vector<std::uint8_t> encode_panorama(const PanoramicImage& img)
{
    std::vector<std::uint8_t> out{'P', 'A', 'N', 'O'};
    bytes::put_u8(out, static_cast<std::uint8_t>(img.modality()));
    bytes::put_u32(out, static_cast<std::uint32_t>(img.height()));
    bytes::put_u32(out, static_cast<std::uint32_t>(img.width()));
    bytes::put_f32(out, static_cast<float>(img.max_range()));
    out.reserve(out.size() + img.pixels().size() * 4);
    for (double v : img.pixels()) bytes::put_f32(out, static_cast<float>(v));
    return out;
}

PanoramicImage decode_panorama(const std::vector<std::uint8_t>& data)
{
    bytes::Reader in(data);
    if (in.str(4) != "PANO") throw std::runtime_error("not a panorama (bad magic)");
    const auto modality = in.u8();
    if (modality > 2) throw std::runtime_error("unknown panorama modality " + std::to_string(modality));
    const auto height = in.u32();
    const auto width = in.u32();
    const float max_range = in.f32();
    if (height == 0 || width == 0 || !(max_range > 0)) throw std::runtime_error("invalid panorama header");
    PanoramicImage img(static_cast<int>(width), static_cast<int>(height), static_cast<Modality>(modality), max_range);
    for (auto& v : img.pixels()) v = in.f32();
    if (!in.done()) throw std::runtime_error("trailing bytes after panorama pixels");
    return img;
}

void write_panorama(const std::filesystem::path& path, const PanoramicImage& img)
{
    bytes::write_file(path, encode_panorama(img));
}

PanoramicImage read_panorama(const std::filesystem::path& path)
{
    return decode_panorama(bytes::read_file(path));
}

}  // namespace ppc

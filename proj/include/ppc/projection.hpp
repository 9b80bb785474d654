#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace ppc {

/// Velodyne HDL-32E defaults: 32 channels, 2166 returns per channel per
/// revolution, 100 m maximum range.
struct SensorMeta {
    double max_range = 100.0;
    int n_channels = 32;
    int points_per_rev = 2166;
};

/// One LiDAR return. Row 0 is the highest-elevation channel. Ranges are
/// float32, the precision the sensor reports.
struct LidarPoint {
    double azimuth = 0;  // radians, normalized into [0, 2*pi) on projection
    int row = 0;
    float range = 0;        // meters
    float reflectance = 0;  // [0, 1]
};

/// A cloud (or CSV file) without a single point.
struct EmptyCloudError : std::runtime_error {
    EmptyCloudError() : std::runtime_error("no points") {}
};

struct PointCloud {
    std::vector<LidarPoint> points;
    SensorMeta meta;
};

enum class Modality : std::uint8_t { depth = 0, reflectance = 1, cam = 2 };

/// Row-major raster with values in [0, 1]. For depth, 0 means "no return"
/// and v * max_range is the range in meters.
class PanoramicImage {
public:
    PanoramicImage() = default;
    PanoramicImage(int width, int height, Modality modality, double max_range = 100.0);

    int width() const { return width_; }
    int height() const { return height_; }
    Modality modality() const { return modality_; }
    double max_range() const { return max_range_; }

    double& at(int row, int col) { return pixels_[static_cast<std::size_t>(row) * width_ + col]; }
    double at(int row, int col) const { return pixels_[static_cast<std::size_t>(row) * width_ + col]; }
    std::vector<double>& pixels() { return pixels_; }
    const std::vector<double>& pixels() const { return pixels_; }

    /// Range in meters stored at a depth pixel, rounded to the sensor's float32.
    float range_at(int row, int col) const;

    bool operator==(const PanoramicImage&) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    Modality modality_ = Modality::depth;
    double max_range_ = 100.0;
    std::vector<double> pixels_;
};

/// Aligned depth/reflectance pair from one scan.
struct ProjectedScan {
    PanoramicImage depth;
    PanoramicImage reflectance;
};

/// Cylindrical projection around the vertical axis. Image height is the
/// channel count; on pixel collisions the nearest return wins for both
/// modalities.
ProjectedScan project_scan(const PointCloud& cloud, int width);

/// Projects at the cloud's native width (points_per_rev), then resamples to
/// width x height when that differs.
ProjectedScan project_resampled(const PointCloud& cloud, int width, int height);

/// Bilinear resampling to a smaller raster. Sample positions wrap around
/// horizontally; rows are clamped at the borders.
PanoramicImage downsample_bilinear(const PanoramicImage& img, int out_w, int out_h);

/// Bilinear resize in either direction with the same wrap-around rule. Used
/// for upsampling attention maps back onto the input raster.
PanoramicImage resize_bilinear_wrap(const PanoramicImage& img, int out_w, int out_h);

/// Point-cloud CSV: optional `#meta max_range=.. n_channels=.. points_per_rev=..`
/// line, header `azimuth_rad,row,range_m,reflectance`, one point per line.
/// Throws std::runtime_error with a line number on malformed input.
PointCloud parse_point_cloud_csv(std::istream& in);
PointCloud read_point_cloud_csv(const std::filesystem::path& path);
void write_point_cloud_csv(std::ostream& out, const PointCloud& cloud);
void write_point_cloud_csv(const std::filesystem::path& path, const PointCloud& cloud);

/// PANO binary: "PANO", u8 modality, u32 height, u32 width, f32 max_range,
/// float32 pixels row-major, little-endian.
std::vector<std::uint8_t> encode_panorama(const PanoramicImage& img);
PanoramicImage decode_panorama(const std::vector<std::uint8_t>& bytes);
void write_panorama(const std::filesystem::path& path, const PanoramicImage& img);
PanoramicImage read_panorama(const std::filesystem::path& path);

}  // namespace ppc

#pragma once

// Tile-based software Gaussian splatting with per-layer buffers, plus a
// brute-force per-pixel compositor used as a reference.
//
// Per pixel the renderer keeps two kinds of layer buffers:
//   - layer_alpha: the composite weights alpha_i * T_i grouped by layer. They
//     partition total_alpha and drive the label map.
//   - layer_coverage / layer_depth / layer_rgb: each layer composited on its
//     own, as if the other layers were absent. Depth and color of a layer that
//     is hidden behind another one stay observable, which penetration
//     confirmation and correction rely on.

#include <array>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "layerav/core.hpp"

namespace layerav {

struct PosedGaussian {
    Vec3 mean = Vec3::Zero();
    Mat3 covariance = Mat3::Identity();
    double opacity = 1.0;
    Vec3 color = Vec3::Zero();
    LayerId layer = LayerId::body;
};

struct PosedGaussianSet {
    std::vector<PosedGaussian> gaussians;

    std::size_t size() const { return gaussians.size(); }
    bool empty() const { return gaussians.empty(); }
    PosedGaussianSet filtered(LayerId layer) const;
};

struct ProjectedGaussian {
    Eigen::Vector2d mean2d = Eigen::Vector2d::Zero();  // pixels; pixel (x, y) has its center at (x+0.5, y+0.5)
    Eigen::Matrix2d cov2d = Eigen::Matrix2d::Identity();
    double depth = 0.0;
    bool culled = true;
};

inline constexpr double kLowPassDilation = 0.3;  // px^2 added to the 2D covariance diagonal
inline constexpr float kMinContribution = 1.0f / 255.0f;
inline constexpr double kTerminationTransmittance = 1e-4;

ProjectedGaussian project_gaussian(const Vec3& mean, const Mat3& covariance, const CameraModel& camera);

struct RenderOptions {
    int workers = 1;
    int tile_size = 16;
    double depth_alpha_threshold = 0.5;
    double label_alpha_threshold = 0.5;
};

struct RenderOutput {
    int width = 0;
    int height = 0;
    std::vector<float> rgb;          // H x W x 3
    std::vector<float> total_alpha;  // H x W
    std::vector<Label> labels;       // H x W
    // Empty vectors for layers absent from the scene.
    std::array<std::vector<float>, kLayerCount> layer_alpha;
    std::array<std::vector<float>, kLayerCount> layer_coverage;
    std::array<std::vector<float>, kLayerCount> layer_depth;  // +inf where coverage < threshold
    std::array<std::vector<float>, kLayerCount> layer_rgb;    // H x W x 3, normalized by coverage

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    std::size_t pixel(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
    bool has_layer(LayerId l) const { return !layer_alpha[layer_index(l)].empty(); }
    float alpha_of(LayerId l, std::size_t px) const;
    float coverage_of(LayerId l, std::size_t px) const;
    float depth_of(LayerId l, std::size_t px) const;
    Eigen::Vector3f layer_color(LayerId l, std::size_t px) const;
    Eigen::Vector3f color(std::size_t px) const { return {rgb[3 * px], rgb[3 * px + 1], rgb[3 * px + 2]}; }
};

/// Tiled rasterizer. Output is bit-identical for any worker count.
RenderOutput rasterize(const PosedGaussianSet& set, const CameraModel& camera, const RenderOptions& options = {});

/// Per-pixel loop over every primitive; no tiling, no early termination.
RenderOutput reference_composite(const PosedGaussianSet& set, const CameraModel& camera,
                                 const RenderOptions& options = {});

using LayerPalette = std::map<LayerId, Vec3>;
LayerPalette default_palette();

/// Rasterize with each Gaussian's color replaced by its layer's palette color.
/// Throws std::invalid_argument if a layer in the set has no palette entry.
RenderOutput render_segmentation(const PosedGaussianSet& set, const CameraModel& camera, const LayerPalette& palette,
                                 const RenderOptions& options = {});

/// total_alpha of the set restricted to one layer.
std::vector<float> render_single_layer_mask(const PosedGaussianSet& set, LayerId layer, const CameraModel& camera,
                                            const RenderOptions& options = {});

}  // namespace layerav

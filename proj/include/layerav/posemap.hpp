#pragma once

// Template-to-map rasterization, posed positional maps and the pose-conditioned
// exemplar model that produces per-cell Gaussian attributes.

#include <array>
#include <span>
#include <vector>

#include "layerav/core.hpp"
#include "layerav/skinning.hpp"

namespace layerav {

struct TemplateMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<std::int32_t, 3>> faces;
    std::vector<LayerId> layer_label;  // per vertex

    std::optional<std::string> invalid_reason() const;
};

/// Orthographic window of a coordinate map in canonical x/y (meters).
struct MapWindow {
    double x_min = 0.0, x_max = 1.0;
    double y_min = 0.0, y_max = 1.0;
    bool operator==(const MapWindow&) const = default;
};

/// Front and back coordinate maps. Row 0 is the top of the window (max y),
/// column 0 the left (min x). The back map is not mirrored: a column index
/// refers to the same world x on both sides.
struct CoordinateMaps {
    int height = 0;
    int width = 0;
    MapWindow window;
    std::array<std::vector<Vec3>, 2> positions;        // per side, H x W
    std::array<std::vector<std::uint8_t>, 2> valid;    // per side, H x W

    std::size_t cell(int row, int col) const { return static_cast<std::size_t>(row) * width + col; }
    Vec3 pixel_center(int row, int col) const;  // z = 0
    /// Number of valid cells over both sides.
    std::size_t valid_count() const;
    /// Primitive index per (side, cell), -1 where invalid. Front cells first, row-major.
    std::array<std::vector<std::int32_t>, 2> primitive_index() const;
};

/// The 14 per-Gaussian channels carried by a Gaussian map cell.
struct GaussianAttributes {
    Vec3 offset = Vec3::Zero();
    Quat rotation = Quat::Identity();
    double opacity = 1.0;
    Vec3 scale = Vec3::Constant(0.01);
    Vec3 color = Vec3::Constant(0.5);
};

struct PoseExemplar {
    PoseParams pose;
    std::vector<GaussianAttributes> cells;  // one per valid cell, primitive order
};

/// Kernel regression over stored pose exemplars.
struct ExemplarDeformationModel {
    std::vector<PoseExemplar> exemplars;
    double kernel_bandwidth = 0.3;  // radians

    std::size_t cell_count() const { return exemplars.empty() ? 0 : exemplars.front().cells.size(); }
    int joint_count() const { return exemplars.empty() ? 0 : exemplars.front().pose.joint_count(); }
};

/// Rasterizes the template from orthographic front (looking along -z) and back
/// (looking along +z) views. A pixel is valid iff its center is covered
/// (top-left fill rule). The default window is the x/y bounding box of the mesh.
CoordinateMaps rasterize_coordinate_maps(const TemplateMesh& mesh, int height, int width,
                                         std::optional<MapWindow> window = std::nullopt);

/// LBS of every valid cell under `pose` (shape and offsets zero).
CoordinateMaps posed_positional_maps(const CoordinateMaps& maps, const SkinningField& field, const PoseParams& pose,
                                     const BodyDefinition& body);

/// Mean per-joint geodesic angle plus the global-orientation angle.
double pose_distance(const PoseParams& a, const PoseParams& b);

/// Normalized Gaussian-kernel weights over the exemplars.
std::vector<double> blend_weights(const ExemplarDeformationModel& model, const PoseParams& pose);

std::vector<GaussianAttributes> predict_gaussian_maps(const ExemplarDeformationModel& model, const PoseParams& pose);

/// One primitive per valid cell with grid-neighbor topology. Skinning data is
/// left empty; see attach_skinning.
GaussianLayer build_gaussian_layer(LayerId layer_id, const CoordinateMaps& maps,
                                   std::span<const GaussianAttributes> attributes);

}  // namespace layerav

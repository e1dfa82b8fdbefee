#pragma once

// Diffused voxel skinning fields, zero-shape canonicalization, forward
// kinematics and linear blend skinning of points and covariances.

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "layerav/core.hpp"

namespace layerav {

struct BoundingBox {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Zero();

    Vec3 extent() const { return max - min; }
    bool operator==(const BoundingBox&) const = default;
};

/// Parametric body: skeleton plus the per-vertex data that seeds a skinning field.
struct BodyDefinition {
    std::vector<Vec3> rest_joints;
    std::vector<int> parents;  // -1 for the root
    std::vector<Vec3> rest_vertices;
    std::vector<double> vertex_weights;  // vertices x J
    std::vector<double> vertex_offsets;  // vertices x B x 3
    int blendshape_count = 0;

    int joint_count() const { return static_cast<int>(rest_joints.size()); }
    std::size_t vertex_count() const { return rest_vertices.size(); }
    /// Empty when the skeleton and seed arrays are consistent.
    std::optional<std::string> invalid_reason() const;
};

struct SkinningField {
    std::array<int, 3> resolution{0, 0, 0};
    BoundingBox bbox;
    int joint_count = 0;
    int blendshape_count = 0;
    std::vector<float> weights;        // voxel-major, x fastest; J per voxel
    std::vector<float> offsets;        // B x 3 per voxel
    std::vector<std::uint8_t> valid;   // 1 per voxel

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(resolution[0]) * resolution[1] * resolution[2];
    }
    std::size_t voxel_index(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * resolution[1] + y) * resolution[0] + x;
    }
    Vec3 cell_size() const;
    Vec3 voxel_center(int x, int y, int z) const;
    bool fully_valid() const;
};

struct SkinningSample {
    std::vector<double> weights;  // J
    std::vector<double> offsets;  // B x 3
};

/// Seeds voxels near body vertices, then diffuses (Jacobi, 6-neighbor
/// Laplacian) into the rest of the grid. `padding` is added on every side of
/// the vertex bounding box; by default 10% of the extent per axis.
/// Throws std::invalid_argument for an empty body, resolution < 4, or a
/// zero-extent box.
SkinningField build_skinning_field(const BodyDefinition& body, std::array<int, 3> resolution = {64, 64, 64},
                                   std::optional<double> padding = std::nullopt, int workers = 1);

/// Trilinear query; points outside the box are clamped to it. Weights are
/// renormalized to sum to one.
SkinningSample query_skinning(const SkinningField& field, const Vec3& point);

/// v_c = v_t - sum_b beta_b o_b. `offsets` is B x 3, row-major.
Vec3 canonicalize_point(const Vec3& point, const ShapeParams& shape, std::span<const double> offsets);
/// Inverse of canonicalize_point.
Vec3 restore_point(const Vec3& point, const ShapeParams& shape, std::span<const double> offsets);
Vec3 shape_displacement(const ShapeParams& shape, std::span<const double> offsets);

/// Per-joint transforms from the canonical rest pose to `pose`. Throws
/// std::invalid_argument when the joint counts differ.
BoneTransformSet forward_kinematics(const PoseParams& pose, const BodyDefinition& body);

/// p = sum_j w_j (R_j (p_c + dp + sum_b beta_b o_b) + t_j)
Vec3 lbs_point(const Vec3& canonical, const Vec3& offset, const ShapeParams& shape,
               std::span<const double> blend_offsets, std::span<const double> weights,
               const BoneTransformSet& transforms);

/// Sigma' = sum_j w_j R_j Sigma R_j^T
Mat3 lbs_covariance(const Mat3& sigma, std::span<const double> weights, const BoneTransformSet& transforms);

/// Fills per-primitive skinning weights and blendshape offsets of `layer`
/// from the field, queried at the canonical positions.
void attach_skinning(GaussianLayer& layer, const SkinningField& field);

struct PosedPrimitive {
    Vec3 position;
    Mat3 covariance;
};

/// Applies the shape restoration and LBS to every primitive of the layer.
std::vector<PosedPrimitive> deform_layer(const GaussianLayer& layer, const ShapeParams& shape,
                                         const BoneTransformSet& transforms);

}  // namespace layerav

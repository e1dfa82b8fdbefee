#pragma once

// Value types shared by every stage of the layered avatar pipeline.
//
// Conventions:
//   - lengths are meters, angles radians
//   - quaternions are stored (w, x, y, z) wherever they are serialized
//   - camera space is x right, y down, z forward (depth)

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace layerav {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

// Layers or assets that cannot be combined (joint/blendshape counts, slots).
struct IncompatibleError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A referenced asset, preset or file does not exist.
struct NotFoundError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class LayerId : std::uint8_t { body = 0, upper = 1, lower = 2, outer = 3 };
inline constexpr int kLayerCount = 4;
inline constexpr std::array<LayerId, kLayerCount> kAllLayers = {LayerId::body, LayerId::upper, LayerId::lower,
                                                                LayerId::outer};

constexpr int layer_index(LayerId id) { return static_cast<int>(id); }
std::string_view layer_name(LayerId id);
std::optional<LayerId> parse_layer(std::string_view name);

// Label maps use 0 for background and 1 + layer_index for layers.
using Label = std::uint8_t;
inline constexpr Label kBackgroundLabel = 0;
constexpr Label label_of(LayerId id) { return static_cast<Label>(1 + layer_index(id)); }
inline std::optional<LayerId> layer_of_label(Label l) {
    if (l == kBackgroundLabel || l > kLayerCount) return std::nullopt;
    return static_cast<LayerId>(l - 1);
}

enum class MapSide : std::uint8_t { front = 0, back = 1 };

struct GaussianPrimitive {
    Vec3 canonical_position = Vec3::Zero();
    Vec3 offset = Vec3::Zero();
    Quat rotation = Quat::Identity();
    double opacity = 1.0;
    Vec3 scale = Vec3::Constant(0.01);
    Vec3 color = Vec3::Constant(0.5);
};

/// Up to four grid neighbors, counter-clockwise as seen from outside the surface.
struct NeighborRing {
    std::array<std::int32_t, 4> index{-1, -1, -1, -1};
    std::uint8_t count = 0;

    std::span<const std::int32_t> view() const { return {index.data(), count}; }
    void push(std::int32_t i) { index[count++] = i; }
};

struct GaussianLayer {
    LayerId layer_id = LayerId::body;
    int joint_count = 0;
    int blendshape_count = 0;
    std::vector<GaussianPrimitive> primitives;
    std::vector<double> skinning_weights;    // size() x joint_count
    std::vector<double> blendshape_offsets;  // size() x blendshape_count x 3
    std::vector<NeighborRing> neighbors;
    std::vector<MapSide> source_side;

    std::size_t size() const { return primitives.size(); }
    std::span<const double> weights(std::size_t i) const {
        return {skinning_weights.data() + i * joint_count, static_cast<std::size_t>(joint_count)};
    }
    std::span<const double> offsets(std::size_t i) const {
        const std::size_t stride = static_cast<std::size_t>(blendshape_count) * 3;
        return {blendshape_offsets.data() + i * stride, stride};
    }
};

struct PoseParams {
    std::vector<Vec3> joint_rotations;  // axis-angle per joint
    Vec3 global_orientation = Vec3::Zero();
    Vec3 global_translation = Vec3::Zero();

    static PoseParams canonical(int joint_count);
    int joint_count() const { return static_cast<int>(joint_rotations.size()); }
    bool operator==(const PoseParams&) const = default;
};

struct ShapeParams {
    std::vector<double> coefficients;

    static ShapeParams zero(int count) { return {std::vector<double>(count, 0.0)}; }
    int count() const { return static_cast<int>(coefficients.size()); }
    bool operator==(const ShapeParams&) const = default;
};

struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    RigidTransform operator*(const RigidTransform& rhs) const {
        return {rotation * rhs.rotation, rotation * rhs.translation + translation};
    }
    RigidTransform inverse() const {
        const Mat3 rt = rotation.transpose();
        return {rt, -(rt * translation)};
    }
};

struct BoneTransformSet {
    std::vector<RigidTransform> bones;
    int joint_count() const { return static_cast<int>(bones.size()); }
};

enum class CameraKind : std::uint8_t { perspective, orthographic };

struct CameraModel {
    CameraKind kind = CameraKind::perspective;
    RigidTransform world_to_camera;
    // Perspective: focal lengths in pixels. Orthographic: pixels per meter.
    double focal_x = 1.0;
    double focal_y = 1.0;
    double center_x = 0.0;
    double center_y = 0.0;
    int width = 1;
    int height = 1;
    double near_plane = 0.01;

    static CameraModel perspective(int width, int height, double focal, const RigidTransform& world_to_camera);
    static CameraModel orthographic(int width, int height, double pixels_per_meter,
                                    const RigidTransform& world_to_camera);
    // Camera at `eye` looking at `target`; world `up` maps to image up.
    static RigidTransform look_at(const Vec3& eye, const Vec3& target, const Vec3& up);

    /// Empty when valid, otherwise a description of the first violated invariant.
    std::optional<std::string> invalid_reason() const;
};

struct LossWeights {
    double ssim = 0.05;        // lambda_1
    double perceptual = 0.1;   // lambda_2, reserved; no perceptual term is evaluated
    double seg_multiclass = 0.5;
    double seg_body = 0.05;
    double penetration = 0.5;
    double offset = 0.005;
    double smooth = 0.005;
    double body_opacity = 0.01;
    double epsilon_pen = 0.005;  // meters

    std::optional<std::string> invalid_reason() const;
};

Mat3 rotation_from_axis_angle(const Vec3& axis_angle);
Quat quat_from_axis_angle(const Vec3& axis_angle);

/// Sigma = R S S^T R^T. Throws std::invalid_argument on non-finite input.
Mat3 covariance_from_rotation_scale(const Quat& rotation, const Vec3& scale);

struct Violation {
    std::size_t index = 0;  // primitive (or element) index the report refers to
    std::string invariant;
    std::string detail;
};

std::vector<Violation> validate_layer(const GaussianLayer& layer);

}  // namespace layerav

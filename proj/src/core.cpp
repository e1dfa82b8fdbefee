#include "layerav/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace layerav {

std::string_view layer_name(LayerId id) {
    switch (id) {
        case LayerId::body: return "body";
        case LayerId::upper: return "upper";
        case LayerId::lower: return "lower";
        case LayerId::outer: return "outer";
    }
    return "unknown";
}

std::optional<LayerId> parse_layer(std::string_view name) {
    for (LayerId id : kAllLayers) {
        if (layer_name(id) == name) return id;
    }
    return std::nullopt;
}

PoseParams PoseParams::canonical(int joint_count) {
    PoseParams p;
    p.joint_rotations.assign(static_cast<std::size_t>(joint_count), Vec3::Zero());
    return p;
}

CameraModel CameraModel::perspective(int width, int height, double focal, const RigidTransform& world_to_camera) {
    CameraModel c;
    c.kind = CameraKind::perspective;
    c.world_to_camera = world_to_camera;
    c.focal_x = c.focal_y = focal;
    c.center_x = width * 0.5;
    c.center_y = height * 0.5;
    c.width = width;
    c.height = height;
    return c;
}

CameraModel CameraModel::orthographic(int width, int height, double pixels_per_meter,
                                      const RigidTransform& world_to_camera) {
    CameraModel c = perspective(width, height, pixels_per_meter, world_to_camera);
    c.kind = CameraKind::orthographic;
    return c;
}

RigidTransform CameraModel::look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
    const Vec3 forward = (target - eye).normalized();
    Vec3 right = forward.cross(up);
    if (right.norm() < 1e-12) right = forward.cross(Vec3::UnitX());
    right.normalize();
    const Vec3 down = forward.cross(right);
    Mat3 r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = forward.transpose();
    return {r, -(r * eye)};
}

std::optional<std::string> CameraModel::invalid_reason() const {
    if (width < 1 || height < 1) return "image size must be at least 1x1";
    if (!(focal_x > 0.0) || !(focal_y > 0.0)) return "focal lengths / scales must be positive";
    if (!std::isfinite(center_x) || !std::isfinite(center_y)) return "principal point must be finite";
    if (!world_to_camera.rotation.allFinite() || !world_to_camera.translation.allFinite())
        return "extrinsics must be finite";
    if (std::abs(world_to_camera.rotation.determinant() - 1.0) > 1e-5) return "extrinsic rotation must be proper";
    return std::nullopt;
}

std::optional<std::string> LossWeights::invalid_reason() const {
    for (double v : {ssim, perceptual, seg_multiclass, seg_body, penetration, offset, smooth, body_opacity}) {
        if (!(v >= 0.0) || !std::isfinite(v)) return "loss weights must be finite and nonnegative";
    }
    if (!(epsilon_pen > 0.0)) return "epsilon_pen must be positive";
    return std::nullopt;
}

Quat quat_from_axis_angle(const Vec3& axis_angle) {
    const double angle = axis_angle.norm();
    if (angle < 1e-15) return Quat::Identity();
    return Quat(Eigen::AngleAxisd(angle, axis_angle / angle));
}

Mat3 rotation_from_axis_angle(const Vec3& axis_angle) {
    const double angle = axis_angle.norm();
    if (angle < 1e-15) return Mat3::Identity();
    return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

Mat3 covariance_from_rotation_scale(const Quat& rotation, const Vec3& scale) {
    if (!rotation.coeffs().allFinite() || !scale.allFinite())
        throw std::invalid_argument("covariance_from_rotation_scale: non-finite input");
    const Mat3 r = rotation.normalized().toRotationMatrix();
    const Mat3 m = r * scale.asDiagonal();
    Mat3 sigma = m * m.transpose();
    // Exact symmetry; the product above can differ in the last ulp across the diagonal.
    sigma = 0.5 * (sigma + sigma.transpose()).eval();
    return sigma;
}

std::vector<Violation> validate_layer(const GaussianLayer& layer) {
    std::vector<Violation> out;
    const std::size_t n = layer.size();
    auto report = [&](std::size_t i, const char* inv, const std::string& detail) {
        out.push_back({i, inv, detail});
    };

    if (layer.joint_count < 1) report(0, "joint_count", "joint count must be positive");
    if (layer.skinning_weights.size() != n * static_cast<std::size_t>(std::max(layer.joint_count, 0)))
        report(0, "skinning_shape", "skinning weight array does not match primitives x joints");
    if (layer.blendshape_offsets.size() != n * static_cast<std::size_t>(std::max(layer.blendshape_count, 0)) * 3)
        report(0, "blendshape_shape", "blendshape offset array does not match primitives x B x 3");
    if (layer.neighbors.size() != n) report(0, "neighbor_shape", "neighbor list count differs from primitives");
    if (layer.source_side.size() != n) report(0, "side_shape", "source side count differs from primitives");
    if (!out.empty()) return out;

    for (std::size_t i = 0; i < n; ++i) {
        const GaussianPrimitive& g = layer.primitives[i];
        const double qn = g.rotation.norm();
        if (!std::isfinite(qn) || std::abs(qn - 1.0) > 1e-6) {
            std::ostringstream s;
            s << "quaternion norm " << qn;
            report(i, "rotation_unit_norm", s.str());
        }
        if (!(g.opacity >= 0.0 && g.opacity <= 1.0)) {
            std::ostringstream s;
            s << "opacity " << g.opacity << " outside [0,1]";
            report(i, "opacity_range", s.str());
        }
        if (!(g.scale.minCoeff() > 0.0) || !g.scale.allFinite()) report(i, "scale_positive", "scale component <= 0");
        if (!g.canonical_position.allFinite() || !g.offset.allFinite() || !g.color.allFinite())
            report(i, "finite", "non-finite position, offset or color");

        double sum = 0.0;
        bool negative = false;
        for (double w : layer.weights(i)) {
            sum += w;
            negative |= w < 0.0;
        }
        if (negative || std::abs(sum - 1.0) > 1e-5) {
            std::ostringstream s;
            s << "skinning weights sum " << sum << (negative ? " with negative entries" : "");
            report(i, "weight_normalization", s.str());
        }
        for (std::int32_t nb : layer.neighbors[i].view()) {
            if (nb < 0 || static_cast<std::size_t>(nb) >= n || static_cast<std::size_t>(nb) == i) {
                report(i, "neighbor_range", "neighbor index " + std::to_string(nb) + " out of range");
            }
        }
    }
    return out;
}

}  // namespace layerav

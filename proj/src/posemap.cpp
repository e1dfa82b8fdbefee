#include "layerav/posemap.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace layerav {

std::optional<std::string> TemplateMesh::invalid_reason() const {
    if (vertices.empty() || faces.empty()) return "mesh is empty";
    if (!layer_label.empty() && layer_label.size() != vertices.size())
        return "layer label count differs from vertex count";
    const auto n = static_cast<std::int32_t>(vertices.size());
    for (std::size_t f = 0; f < faces.size(); ++f) {
        for (std::int32_t i : faces[f]) {
            if (i < 0 || i >= n) return "face " + std::to_string(f) + " has an out-of-range index";
        }
        const Vec3& a = vertices[faces[f][0]];
        const Vec3& b = vertices[faces[f][1]];
        const Vec3& c = vertices[faces[f][2]];
        if (0.5 * (b - a).cross(c - a).norm() <= 1e-12) return "face " + std::to_string(f) + " is degenerate";
    }
    return std::nullopt;
}

Vec3 CoordinateMaps::pixel_center(int row, int col) const {
    const double dx = (window.x_max - window.x_min) / width;
    const double dy = (window.y_max - window.y_min) / height;
    return {window.x_min + (col + 0.5) * dx, window.y_max - (row + 0.5) * dy, 0.0};
}

std::size_t CoordinateMaps::valid_count() const {
    std::size_t n = 0;
    for (const auto& side : valid) n += static_cast<std::size_t>(std::count(side.begin(), side.end(), 1));
    return n;
}

std::array<std::vector<std::int32_t>, 2> CoordinateMaps::primitive_index() const {
    std::array<std::vector<std::int32_t>, 2> out;
    std::int32_t next = 0;
    for (int s = 0; s < 2; ++s) {
        out[s].assign(valid[s].size(), -1);
        for (std::size_t c = 0; c < valid[s].size(); ++c) {
            if (valid[s][c]) out[s][c] = next++;
        }
    }
    return out;
}

namespace {

double edge(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& p) {
    return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

// y-up, counter-clockwise winding: left edges run downward, top edges run leftward.
bool top_left(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return (a.y() == b.y() && b.x() < a.x()) || b.y() < a.y();
}

}  // namespace

CoordinateMaps rasterize_coordinate_maps(const TemplateMesh& mesh, int height, int width,
                                         std::optional<MapWindow> window) {
    if (mesh.vertices.empty() || mesh.faces.empty())
        throw std::invalid_argument("rasterize_coordinate_maps: empty mesh");
    if (height < 1 || width < 1) throw std::invalid_argument("rasterize_coordinate_maps: bad resolution");

    CoordinateMaps maps;
    maps.height = height;
    maps.width = width;
    if (window) {
        maps.window = *window;
    } else {
        MapWindow w{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
                    std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
        for (const Vec3& v : mesh.vertices) {
            w.x_min = std::min(w.x_min, v.x());
            w.x_max = std::max(w.x_max, v.x());
            w.y_min = std::min(w.y_min, v.y());
            w.y_max = std::max(w.y_max, v.y());
        }
        maps.window = w;
    }
    if (!(maps.window.x_max > maps.window.x_min) || !(maps.window.y_max > maps.window.y_min))
        throw std::invalid_argument("rasterize_coordinate_maps: window has zero extent");

    const std::size_t cells = static_cast<std::size_t>(height) * width;
    for (int s = 0; s < 2; ++s) {
        maps.positions[s].assign(cells, Vec3::Zero());
        maps.valid[s].assign(cells, 0);
    }
    std::vector<double> front_z(cells, -std::numeric_limits<double>::infinity());
    std::vector<double> back_z(cells, std::numeric_limits<double>::infinity());

    const double dx = (maps.window.x_max - maps.window.x_min) / width;
    const double dy = (maps.window.y_max - maps.window.y_min) / height;

    for (const auto& face : mesh.faces) {
        Vec3 p0 = mesh.vertices.at(face[0]);
        Vec3 p1 = mesh.vertices.at(face[1]);
        Vec3 p2 = mesh.vertices.at(face[2]);
        Eigen::Vector2d a = p0.head<2>(), b = p1.head<2>(), c = p2.head<2>();
        double area = edge(a, b, c);
        if (std::abs(area) < 1e-18) continue;  // edge-on in this projection
        if (area < 0.0) {
            std::swap(b, c);
            std::swap(p1, p2);
            area = -area;
        }
        const double min_x = std::min({a.x(), b.x(), c.x()}), max_x = std::max({a.x(), b.x(), c.x()});
        const double min_y = std::min({a.y(), b.y(), c.y()}), max_y = std::max({a.y(), b.y(), c.y()});
        const int col_lo = std::max(0, static_cast<int>(std::ceil((min_x - maps.window.x_min) / dx - 0.5)));
        const int col_hi = std::min(width - 1, static_cast<int>(std::floor((max_x - maps.window.x_min) / dx - 0.5)));
        const int row_lo = std::max(0, static_cast<int>(std::ceil((maps.window.y_max - max_y) / dy - 0.5)));
        const int row_hi = std::min(height - 1, static_cast<int>(std::floor((maps.window.y_max - min_y) / dy - 0.5)));
        const bool tl0 = top_left(b, c), tl1 = top_left(c, a), tl2 = top_left(a, b);

        for (int row = row_lo; row <= row_hi; ++row) {
            for (int col = col_lo; col <= col_hi; ++col) {
                const Vec3 center = maps.pixel_center(row, col);
                const Eigen::Vector2d p = center.head<2>();
                const double e0 = edge(b, c, p), e1 = edge(c, a, p), e2 = edge(a, b, p);
                const bool inside = (e0 > 0 || (e0 == 0 && tl0)) && (e1 > 0 || (e1 == 0 && tl1)) &&
                                    (e2 > 0 || (e2 == 0 && tl2));
                if (!inside) continue;
                const Vec3 hit = (e0 * p0 + e1 * p1 + e2 * p2) / area;
                const std::size_t idx = maps.cell(row, col);
                if (hit.z() > front_z[idx]) {
                    front_z[idx] = hit.z();
                    maps.positions[0][idx] = hit;
                    maps.valid[0][idx] = 1;
                }
                if (hit.z() < back_z[idx]) {
                    back_z[idx] = hit.z();
                    maps.positions[1][idx] = hit;
                    maps.valid[1][idx] = 1;
                }
            }
        }
    }
    return maps;
}

CoordinateMaps posed_positional_maps(const CoordinateMaps& maps, const SkinningField& field, const PoseParams& pose,
                                     const BodyDefinition& body) {
    const BoneTransformSet transforms = forward_kinematics(pose, body);
    const ShapeParams no_shape;
    CoordinateMaps out = maps;
    for (int s = 0; s < 2; ++s) {
        for (std::size_t c = 0; c < maps.valid[s].size(); ++c) {
            if (!maps.valid[s][c]) continue;
            const Vec3& p = maps.positions[s][c];
            const SkinningSample sample = query_skinning(field, p);
            out.positions[s][c] = lbs_point(p, Vec3::Zero(), no_shape, {}, sample.weights, transforms);
        }
    }
    return out;
}

namespace {

double rotation_angle_between(const Vec3& a, const Vec3& b) {
    const Quat qa = quat_from_axis_angle(a), qb = quat_from_axis_angle(b);
    const double d = std::min(1.0, std::abs(qa.dot(qb)));
    return 2.0 * std::acos(d);
}

}  // namespace

double pose_distance(const PoseParams& a, const PoseParams& b) {
    if (a.joint_count() != b.joint_count()) throw std::invalid_argument("pose_distance: joint count mismatch");
    double mean = 0.0;
    for (int j = 0; j < a.joint_count(); ++j) mean += rotation_angle_between(a.joint_rotations[j], b.joint_rotations[j]);
    if (a.joint_count() > 0) mean /= a.joint_count();
    return mean + rotation_angle_between(a.global_orientation, b.global_orientation);
}

std::vector<double> blend_weights(const ExemplarDeformationModel& model, const PoseParams& pose) {
    if (model.exemplars.empty()) throw std::invalid_argument("blend_weights: model has no exemplars");
    const std::size_t k = model.exemplars.size();
    std::vector<double> d2(k);
    for (std::size_t i = 0; i < k; ++i) {
        const double d = pose_distance(pose, model.exemplars[i].pose);
        d2[i] = d * d;
    }
    std::vector<double> w(k, 0.0);
    // An exact pose match reproduces that exemplar.
    for (std::size_t i = 0; i < k; ++i) {
        if (d2[i] == 0.0) {
            w[i] = 1.0;
            return w;
        }
    }
    // Shift by the smallest distance so the nearest exemplar never underflows.
    const double d2_min = *std::min_element(d2.begin(), d2.end());
    const double h2 = 2.0 * model.kernel_bandwidth * model.kernel_bandwidth;
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        w[i] = std::exp(-(d2[i] - d2_min) / h2);
        sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
}

std::vector<GaussianAttributes> predict_gaussian_maps(const ExemplarDeformationModel& model, const PoseParams& pose) {
    const std::vector<double> w = blend_weights(model, pose);
    const std::size_t cells = model.cell_count();
    for (const PoseExemplar& e : model.exemplars) {
        if (e.cells.size() != cells) throw std::invalid_argument("predict_gaussian_maps: exemplar cell counts differ");
    }
    for (std::size_t k = 0; k < w.size(); ++k) {
        if (w[k] == 1.0) return model.exemplars[k].cells;
    }
    const std::size_t anchor = static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());

    std::vector<GaussianAttributes> out(cells);
    for (std::size_t c = 0; c < cells; ++c) {
        GaussianAttributes acc;
        acc.offset.setZero();
        acc.scale.setZero();
        acc.color.setZero();
        acc.opacity = 0.0;
        Eigen::Vector4d q = Eigen::Vector4d::Zero();
        const Quat& ref = model.exemplars[anchor].cells[c].rotation;
        for (std::size_t k = 0; k < w.size(); ++k) {
            if (w[k] == 0.0) continue;
            const GaussianAttributes& e = model.exemplars[k].cells[c];
            acc.offset += w[k] * e.offset;
            acc.scale += w[k] * e.scale;
            acc.color += w[k] * e.color;
            acc.opacity += w[k] * e.opacity;
            // q and -q are the same rotation; blend in the anchor's hemisphere.
            const double sign = e.rotation.dot(ref) < 0.0 ? -1.0 : 1.0;
            q += sign * w[k] * Eigen::Vector4d(e.rotation.w(), e.rotation.x(), e.rotation.y(), e.rotation.z());
        }
        const double qn = q.norm();
        acc.rotation = qn > 0.0 ? Quat(q[0] / qn, q[1] / qn, q[2] / qn, q[3] / qn) : ref;
        out[c] = acc;
    }
    return out;
}

GaussianLayer build_gaussian_layer(LayerId layer_id, const CoordinateMaps& maps,
                                   std::span<const GaussianAttributes> attributes) {
    const auto index = maps.primitive_index();
    const std::size_t n = maps.valid_count();
    if (attributes.size() != n)
        throw std::invalid_argument("build_gaussian_layer: attribute count differs from valid cell count");

    GaussianLayer layer;
    layer.layer_id = layer_id;
    layer.primitives.resize(n);
    layer.neighbors.resize(n);
    layer.source_side.resize(n);

    // Counter-clockwise as seen by each side's viewer: (d_row, d_col).
    static constexpr std::array<std::array<int, 2>, 4> kFrontRing{{{0, 1}, {-1, 0}, {0, -1}, {1, 0}}};
    static constexpr std::array<std::array<int, 2>, 4> kBackRing{{{0, 1}, {1, 0}, {0, -1}, {-1, 0}}};

    for (int s = 0; s < 2; ++s) {
        const auto& ring = s == 0 ? kFrontRing : kBackRing;
        for (int row = 0; row < maps.height; ++row) {
            for (int col = 0; col < maps.width; ++col) {
                const std::int32_t i = index[s][maps.cell(row, col)];
                if (i < 0) continue;
                const GaussianAttributes& a = attributes[i];
                GaussianPrimitive& g = layer.primitives[i];
                g.canonical_position = maps.positions[s][maps.cell(row, col)];
                g.offset = a.offset;
                g.rotation = a.rotation;
                g.opacity = a.opacity;
                g.scale = a.scale;
                g.color = a.color;
                layer.source_side[i] = s == 0 ? MapSide::front : MapSide::back;
                for (const auto& d : ring) {
                    const int r = row + d[0], c = col + d[1];
                    if (r < 0 || r >= maps.height || c < 0 || c >= maps.width) continue;
                    const std::int32_t nb = index[s][maps.cell(r, c)];
                    if (nb >= 0) layer.neighbors[i].push(nb);
                }
            }
        }
    }
    return layer;
}

}  // namespace layerav

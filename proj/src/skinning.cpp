#include "layerav/skinning.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCore>

#include "layerav/parallel.hpp"

namespace layerav {

std::optional<std::string> BodyDefinition::invalid_reason() const {
    const int j = joint_count();
    if (j < 1) return "body has no joints";
    if (static_cast<int>(parents.size()) != j) return "parent list length differs from joint count";
    int roots = 0;
    for (int i = 0; i < j; ++i) {
        const int p = parents[i];
        if (p == -1) {
            ++roots;
        } else if (p < 0 || p >= i) {
            // Parents precede children, which also rules out cycles.
            return "parent index of joint " + std::to_string(i) + " must reference an earlier joint";
        }
    }
    if (roots != 1) return "kinematic tree must have exactly one root";
    if (vertex_weights.size() != rest_vertices.size() * static_cast<std::size_t>(j))
        return "vertex weight array does not match vertices x joints";
    if (vertex_offsets.size() != rest_vertices.size() * static_cast<std::size_t>(blendshape_count) * 3)
        return "vertex offset array does not match vertices x B x 3";
    return std::nullopt;
}

Vec3 SkinningField::cell_size() const {
    const Vec3 e = bbox.extent();
    return {e.x() / resolution[0], e.y() / resolution[1], e.z() / resolution[2]};
}

Vec3 SkinningField::voxel_center(int x, int y, int z) const {
    const Vec3 c = cell_size();
    return bbox.min + Vec3((x + 0.5) * c.x(), (y + 0.5) * c.y(), (z + 0.5) * c.z());
}

bool SkinningField::fully_valid() const {
    return !valid.empty() && std::all_of(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; });
}

SkinningField build_skinning_field(const BodyDefinition& body, std::array<int, 3> resolution,
                                   std::optional<double> padding, int workers) {
    if (body.rest_vertices.empty()) throw std::invalid_argument("build_skinning_field: body has no vertices");
    if (auto why = body.invalid_reason()) throw std::invalid_argument("build_skinning_field: " + *why);
    for (int r : resolution) {
        if (r < 4) throw std::invalid_argument("build_skinning_field: resolution must be >= 4 per axis");
    }

    BoundingBox box{body.rest_vertices.front(), body.rest_vertices.front()};
    for (const Vec3& v : body.rest_vertices) {
        box.min = box.min.cwiseMin(v);
        box.max = box.max.cwiseMax(v);
    }
    if (padding) {
        box.min.array() -= *padding;
        box.max.array() += *padding;
    } else {
        const Vec3 pad = 0.1 * box.extent();
        box.min -= pad;
        box.max += pad;
    }
    if (!(box.extent().minCoeff() > 0.0)) throw std::invalid_argument("build_skinning_field: degenerate bounding box");

    SkinningField field;
    field.resolution = resolution;
    field.bbox = box;
    field.joint_count = body.joint_count();
    field.blendshape_count = body.blendshape_count;

    const int nx = resolution[0], ny = resolution[1], nz = resolution[2];
    const std::size_t voxels = field.voxel_count();
    const int jc = field.joint_count;
    const int oc = field.blendshape_count * 3;
    const std::size_t channels = static_cast<std::size_t>(jc + oc);
    const Vec3 cell = field.cell_size();
    const double diagonal = cell.norm();

    // Seed: every voxel whose center lies within one voxel diagonal of a vertex
    // takes the values of the nearest such vertex.
    std::vector<std::int64_t> seed_vertex(voxels, -1);
    std::vector<double> seed_dist(voxels, std::numeric_limits<double>::infinity());
    for (std::size_t vi = 0; vi < body.rest_vertices.size(); ++vi) {
        const Vec3 u = (body.rest_vertices[vi] - box.min).cwiseQuotient(cell) - Vec3::Constant(0.5);
        std::array<int, 3> lo{}, hi{};
        for (int a = 0; a < 3; ++a) {
            const double reach = diagonal / cell[a];
            lo[a] = std::max(0, static_cast<int>(std::floor(u[a] - reach)));
            hi[a] = std::min(resolution[a] - 1, static_cast<int>(std::ceil(u[a] + reach)));
        }
        for (int z = lo[2]; z <= hi[2]; ++z)
            for (int y = lo[1]; y <= hi[1]; ++y)
                for (int x = lo[0]; x <= hi[0]; ++x) {
                    const double d = (field.voxel_center(x, y, z) - body.rest_vertices[vi]).norm();
                    const std::size_t idx = field.voxel_index(x, y, z);
                    if (d <= diagonal && d < seed_dist[idx]) {
                        seed_dist[idx] = d;
                        seed_vertex[idx] = static_cast<std::int64_t>(vi);
                    }
                }
    }

    std::vector<float> cur(voxels * channels, 0.0f);
    std::vector<std::uint8_t> fixed(voxels, 0);
    std::deque<std::size_t> frontier;
    for (std::size_t idx = 0; idx < voxels; ++idx) {
        const std::int64_t vi = seed_vertex[idx];
        if (vi < 0) continue;
        float* dst = cur.data() + idx * channels;
        for (int j = 0; j < jc; ++j) dst[j] = static_cast<float>(body.vertex_weights[vi * jc + j]);
        for (int o = 0; o < oc; ++o) dst[jc + o] = static_cast<float>(body.vertex_offsets[vi * oc + o]);
        fixed[idx] = 1;
        frontier.push_back(idx);
    }

    // Initial guess for free voxels: breadth-first nearest seed. This only
    // shortens the iterative solve; the fixed point is unchanged.
    std::vector<std::uint8_t> reached = fixed;
    auto for_each_neighbor = [&](std::size_t idx, auto&& fn) {
        const int x = static_cast<int>(idx % nx);
        const int y = static_cast<int>((idx / nx) % ny);
        const int z = static_cast<int>(idx / (static_cast<std::size_t>(nx) * ny));
        if (x > 0) fn(idx - 1);
        if (x + 1 < nx) fn(idx + 1);
        if (y > 0) fn(idx - nx);
        if (y + 1 < ny) fn(idx + nx);
        if (z > 0) fn(idx - static_cast<std::size_t>(nx) * ny);
        if (z + 1 < nz) fn(idx + static_cast<std::size_t>(nx) * ny);
    };
    while (!frontier.empty()) {
        const std::size_t idx = frontier.front();
        frontier.pop_front();
        for_each_neighbor(idx, [&](std::size_t nb) {
            if (reached[nb]) return;
            reached[nb] = 1;
            std::copy_n(cur.data() + idx * channels, channels, cur.data() + nb * channels);
            frontier.push_back(nb);
        });
    }

    // Free voxels satisfy the discrete Laplace equation with the seeds as
    // Dirichlet data and zero-flux borders. The system is symmetric positive
    // definite, so each channel is solved by conjugate gradients.
    std::vector<std::int64_t> unknown(voxels, -1);
    std::int64_t m = 0;
    for (std::size_t idx = 0; idx < voxels; ++idx)
        if (!fixed[idx]) unknown[idx] = m++;
    if (m > 0) {
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(static_cast<std::size_t>(m) * 7);
        for (std::size_t idx = 0; idx < voxels; ++idx) {
            if (fixed[idx]) continue;
            const std::int64_t row = unknown[idx];
            int degree = 0;
            for_each_neighbor(idx, [&](std::size_t nb) {
                ++degree;
                if (!fixed[nb]) trip.emplace_back(row, unknown[nb], -1.0);
            });
            trip.emplace_back(row, row, static_cast<double>(degree));
        }
        Eigen::SparseMatrix<double> laplacian(m, m);
        laplacian.setFromTriplets(trip.begin(), trip.end());

        parallel_for(channels, workers, [&](std::size_t c) {
            Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m), guess(m);
            for (std::size_t idx = 0; idx < voxels; ++idx) {
                if (fixed[idx]) continue;
                const std::int64_t row = unknown[idx];
                guess[row] = cur[idx * channels + c];
                for_each_neighbor(idx, [&](std::size_t nb) {
                    if (fixed[nb]) rhs[row] += cur[nb * channels + c];
                });
            }
            Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> cg(laplacian);
            cg.setTolerance(1e-9);
            cg.setMaxIterations(static_cast<Eigen::Index>(20 * (nx + ny + nz)));
            const Eigen::VectorXd u = cg.solveWithGuess(rhs, guess);
            for (std::size_t idx = 0; idx < voxels; ++idx)
                if (!fixed[idx]) cur[idx * channels + c] = static_cast<float>(u[unknown[idx]]);
        });
    }

    field.weights.resize(voxels * jc);
    field.offsets.resize(voxels * oc);
    field.valid.assign(voxels, 1);
    for (std::size_t idx = 0; idx < voxels; ++idx) {
        const float* src = cur.data() + idx * channels;
        double sum = 0.0;
        for (int j = 0; j < jc; ++j) sum += std::max(0.0f, src[j]);
        for (int j = 0; j < jc; ++j) {
            const double w = std::max(0.0f, src[j]);
            field.weights[idx * jc + j] = static_cast<float>(sum > 0.0 ? w / sum : (j == 0 ? 1.0 : 0.0));
        }
        std::copy_n(src + jc, oc, field.offsets.data() + idx * oc);
    }
    return field;
}

SkinningSample query_skinning(const SkinningField& field, const Vec3& point) {
    const int jc = field.joint_count;
    const int oc = field.blendshape_count * 3;
    const Vec3 cell = field.cell_size();
    std::array<int, 3> i0{};
    std::array<double, 3> f{};
    for (int a = 0; a < 3; ++a) {
        const int n = field.resolution[a];
        double u = (point[a] - field.bbox.min[a]) / cell[a] - 0.5;
        u = std::clamp(u, 0.0, static_cast<double>(n - 1));
        int i = static_cast<int>(std::floor(u));
        i = std::min(i, n - 2);
        i0[a] = i;
        f[a] = u - i;
    }

    SkinningSample s;
    s.weights.assign(jc, 0.0);
    s.offsets.assign(oc, 0.0);
    for (int corner = 0; corner < 8; ++corner) {
        const int dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
        const double w = (dx ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]) * (dz ? f[2] : 1.0 - f[2]);
        if (w == 0.0) continue;
        const std::size_t idx = field.voxel_index(i0[0] + dx, i0[1] + dy, i0[2] + dz);
        for (int j = 0; j < jc; ++j) s.weights[j] += w * field.weights[idx * jc + j];
        for (int o = 0; o < oc; ++o) s.offsets[o] += w * field.offsets[idx * oc + o];
    }
    double sum = 0.0;
    for (double w : s.weights) sum += w;
    if (sum > 0.0 && std::abs(sum - 1.0) > 1e-7) {
        for (double& w : s.weights) w /= sum;
    }
    return s;
}

Vec3 shape_displacement(const ShapeParams& shape, std::span<const double> offsets) {
    Vec3 d = Vec3::Zero();
    const std::size_t b_count = std::min<std::size_t>(shape.coefficients.size(), offsets.size() / 3);
    for (std::size_t b = 0; b < b_count; ++b) {
        const double beta = shape.coefficients[b];
        d += beta * Vec3(offsets[3 * b], offsets[3 * b + 1], offsets[3 * b + 2]);
    }
    return d;
}

Vec3 canonicalize_point(const Vec3& point, const ShapeParams& shape, std::span<const double> offsets) {
    return point - shape_displacement(shape, offsets);
}

Vec3 restore_point(const Vec3& point, const ShapeParams& shape, std::span<const double> offsets) {
    return point + shape_displacement(shape, offsets);
}

BoneTransformSet forward_kinematics(const PoseParams& pose, const BodyDefinition& body) {
    const int j_count = body.joint_count();
    if (pose.joint_count() != j_count) {
        throw std::invalid_argument("forward_kinematics: pose has " + std::to_string(pose.joint_count()) +
                                    " joints, body has " + std::to_string(j_count));
    }
    if (static_cast<int>(body.parents.size()) != j_count)
        throw std::invalid_argument("forward_kinematics: parent list length differs from joint count");

    // chain[j]: posed world frame of joint j (rotation, joint position).
    std::vector<RigidTransform> chain(j_count);
    BoneTransformSet out;
    out.bones.resize(j_count);
    for (int j = 0; j < j_count; ++j) {
        const Mat3 local = rotation_from_axis_angle(pose.joint_rotations[j]);
        const int p = body.parents[j];
        if (p < 0) {
            chain[j].rotation = rotation_from_axis_angle(pose.global_orientation) * local;
            chain[j].translation = body.rest_joints[j] + pose.global_translation;
        } else {
            if (p >= j) throw std::invalid_argument("forward_kinematics: parents must precede children");
            const RigidTransform rel{local, body.rest_joints[j] - body.rest_joints[p]};
            chain[j] = chain[p] * rel;
        }
        // Remove the rest-pose bind: canonical point -> joint-local -> posed.
        const RigidTransform inverse_bind{Mat3::Identity(), -body.rest_joints[j]};
        out.bones[j] = chain[j] * inverse_bind;
    }
    return out;
}

Vec3 lbs_point(const Vec3& canonical, const Vec3& offset, const ShapeParams& shape,
               std::span<const double> blend_offsets, std::span<const double> weights,
               const BoneTransformSet& transforms) {
    const Vec3 shaped = canonical + offset + shape_displacement(shape, blend_offsets);
    Vec3 out = Vec3::Zero();
    const std::size_t n = std::min<std::size_t>(weights.size(), transforms.bones.size());
    for (std::size_t j = 0; j < n; ++j) {
        const double w = weights[j];
        if (w == 0.0) continue;
        out += w * transforms.bones[j].apply(shaped);
    }
    return out;
}

Mat3 lbs_covariance(const Mat3& sigma, std::span<const double> weights, const BoneTransformSet& transforms) {
    Mat3 out = Mat3::Zero();
    const std::size_t n = std::min<std::size_t>(weights.size(), transforms.bones.size());
    for (std::size_t j = 0; j < n; ++j) {
        const double w = weights[j];
        if (w == 0.0) continue;
        const Mat3& r = transforms.bones[j].rotation;
        out += w * (r * sigma * r.transpose());
    }
    return 0.5 * (out + out.transpose());
}

void attach_skinning(GaussianLayer& layer, const SkinningField& field) {
    layer.joint_count = field.joint_count;
    layer.blendshape_count = field.blendshape_count;
    const std::size_t n = layer.size();
    layer.skinning_weights.assign(n * field.joint_count, 0.0);
    layer.blendshape_offsets.assign(n * field.blendshape_count * 3, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const SkinningSample s = query_skinning(field, layer.primitives[i].canonical_position);
        std::copy(s.weights.begin(), s.weights.end(), layer.skinning_weights.begin() + i * field.joint_count);
        std::copy(s.offsets.begin(), s.offsets.end(),
                  layer.blendshape_offsets.begin() + i * field.blendshape_count * 3);
    }
}

std::vector<PosedPrimitive> deform_layer(const GaussianLayer& layer, const ShapeParams& shape,
                                         const BoneTransformSet& transforms) {
    std::vector<PosedPrimitive> out(layer.size());
    for (std::size_t i = 0; i < layer.size(); ++i) {
        const GaussianPrimitive& g = layer.primitives[i];
        const Mat3 sigma = covariance_from_rotation_scale(g.rotation, g.scale);
        out[i].position = lbs_point(g.canonical_position, g.offset, shape, layer.offsets(i), layer.weights(i),
                                    transforms);
        out[i].covariance = lbs_covariance(sigma, layer.weights(i), transforms);
    }
    return out;
}

}  // namespace layerav

#pragma once

// Independent oracles shared by the unit tests and the acceptance runner.

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "helpers.hpp"
#include "layerav/losses.hpp"
#include "layerav/skinning.hpp"

namespace layerav::test {

// Two vertices at opposite corners of the unit cube with one-hot weights.
inline BodyDefinition two_seed_body() {
    BodyDefinition b;
    b.rest_joints = {Vec3::Zero(), Vec3(0, 1, 0)};
    b.parents = {-1, 0};
    b.rest_vertices = {Vec3(0, 0, 0), Vec3(1, 1, 1)};
    b.vertex_weights = {1, 0, 0, 1};
    b.blendshape_count = 0;
    return b;
}

// Direct solve of the grid Laplace equation: voxels whose centers lie within
// one voxel diagonal of a vertex are held at that vertex's joint-0 weight;
// every other voxel equals the mean of its 6-neighbors (fewer at the border).
inline std::vector<double> laplace_oracle(const BodyDefinition& body, int n) {
    const Vec3 lo = Vec3::Zero(), hi = Vec3::Ones();
    const Vec3 cell = (hi - lo) / n;
    const double diag = cell.norm();
    const int total = n * n * n;
    std::vector<double> value(total, 0.0);
    std::vector<int> fixed(total, 0);
    auto id = [n](int x, int y, int z) { return (z * n + y) * n + x; };
    for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const Vec3 c = lo + Vec3((x + 0.5) * cell.x(), (y + 0.5) * cell.y(), (z + 0.5) * cell.z());
                double best = diag + 1e-12;
                for (std::size_t v = 0; v < body.rest_vertices.size(); ++v) {
                    const double d = (c - body.rest_vertices[v]).norm();
                    if (d <= diag && d < best) {
                        best = d;
                        fixed[id(x, y, z)] = 1;
                        value[id(x, y, z)] = body.vertex_weights[v * 2];
                    }
                }
            }
    std::vector<int> unknown(total, -1);
    int m = 0;
    for (int i = 0; i < total; ++i)
        if (!fixed[i]) unknown[i] = m++;
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
    for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const int i = id(x, y, z);
                if (fixed[i]) continue;
                const int row = unknown[i];
                int deg = 0;
                auto visit = [&](int nx, int ny, int nz) {
                    if (nx < 0 || ny < 0 || nz < 0 || nx >= n || ny >= n || nz >= n) return;
                    ++deg;
                    const int j = id(nx, ny, nz);
                    if (fixed[j]) {
                        rhs[row] += value[j];
                    } else {
                        trip.emplace_back(row, unknown[j], -1.0);
                    }
                };
                visit(x - 1, y, z);
                visit(x + 1, y, z);
                visit(x, y - 1, z);
                visit(x, y + 1, z);
                visit(x, y, z - 1);
                visit(x, y, z + 1);
                trip.emplace_back(row, row, static_cast<double>(deg));
            }
    Eigen::SparseMatrix<double> a(m, m);
    a.setFromTriplets(trip.begin(), trip.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(a);
    const Eigen::VectorXd sol = solver.solve(rhs);
    for (int i = 0; i < total; ++i)
        if (!fixed[i]) value[i] = sol[unknown[i]];
    return value;
}

// |a - b| / max(|a|, |b|) over whole vectors.
inline double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double scale = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
    return std::sqrt(diff) / scale;
}

inline std::vector<double> flatten(const std::vector<Vec3>& v) {
    std::vector<double> out;
    for (const Vec3& p : v) out.insert(out.end(), {p.x(), p.y(), p.z()});
    return out;
}

struct GradientErrors {
    double outer = 0.0;  // or offsets
    double inner = 0.0;  // or smoothness
    double opacity = 0.0;
};

// One random configuration of six inner/outer pairs kept away from the hinge
// kink and from nearest-neighbor ties; central differences with step h.
inline GradientErrors penetration_gradient_check(std::mt19937_64& rng, double h = 1e-5) {
    const double eps = 0.005;
    std::vector<Vec3> inner, normals, outer;
    for (int i = 0; i < 6; ++i) {
        inner.push_back(Vec3(0.2 * i, uniform(rng, -0.01, 0.01), 0.0));
        normals.push_back((random_vec(rng, -0.3, 0.3) + Vec3(0, 0, 1)).normalized());
    }
    for (int i = 0; i < 6; ++i) {
        double d = uniform(rng, -0.02, 0.02);
        if (std::abs(d - eps) < 2e-3) d -= 5e-3;
        outer.push_back(inner[i] + d * normals[i] + random_vec(rng, -0.01, 0.01).cwiseProduct(Vec3(1, 1, 0)));
    }
    const PenetrationResult base = penetration_loss(outer, inner, normals, eps);
    auto loss = [&](const std::vector<Vec3>& o, const std::vector<Vec3>& in) {
        return penetration_loss(o, in, normals, eps).loss;
    };
    std::vector<double> fd_outer, fd_inner;
    for (std::size_t i = 0; i < outer.size(); ++i)
        for (int a = 0; a < 3; ++a) {
            auto plus = outer, minus = outer;
            plus[i][a] += h;
            minus[i][a] -= h;
            fd_outer.push_back((loss(plus, inner) - loss(minus, inner)) / (2 * h));
        }
    for (std::size_t i = 0; i < inner.size(); ++i)
        for (int a = 0; a < 3; ++a) {
            auto plus = inner, minus = inner;
            plus[i][a] += h;
            minus[i][a] -= h;
            fd_inner.push_back((loss(outer, plus) - loss(outer, minus)) / (2 * h));
        }
    return {rel_error(flatten(base.grad_outer), fd_outer), rel_error(flatten(base.grad_inner), fd_inner), 0.0};
}

// Random offsets and opacities on a six-primitive line topology.
inline GradientErrors regularizer_gradient_check(std::mt19937_64& rng, double h = 1e-5) {
    const GaussianLayer layer = simple_layer(6);
    std::vector<Vec3> off;
    for (int i = 0; i < 6; ++i) off.push_back(random_vec(rng, -0.05, 0.05));
    std::vector<double> alpha;
    for (int i = 0; i < 6; ++i) alpha.push_back(uniform(rng, 0.05, 0.95));
    const RegularizerResult r = geometric_regularizers(off, layer.neighbors, alpha);
    std::vector<double> fd_o, fd_s, fd_b;
    for (std::size_t i = 0; i < off.size(); ++i)
        for (int a = 0; a < 3; ++a) {
            auto plus = off, minus = off;
            plus[i][a] += h;
            minus[i][a] -= h;
            const RegularizerResult rp = geometric_regularizers(plus, layer.neighbors, alpha);
            const RegularizerResult rm = geometric_regularizers(minus, layer.neighbors, alpha);
            fd_o.push_back((rp.offset - rm.offset) / (2 * h));
            fd_s.push_back((rp.smooth - rm.smooth) / (2 * h));
        }
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        auto plus = alpha, minus = alpha;
        plus[i] += h;
        minus[i] -= h;
        fd_b.push_back((geometric_regularizers(off, layer.neighbors, plus).body_opacity -
                        geometric_regularizers(off, layer.neighbors, minus).body_opacity) /
                       (2 * h));
    }
    return {rel_error(flatten(r.grad_offset), fd_o), rel_error(flatten(r.grad_smooth), fd_s),
            rel_error(r.grad_body_opacity, fd_b)};
}

}  // namespace layerav::test

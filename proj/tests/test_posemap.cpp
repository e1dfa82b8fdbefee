#include <doctest.h>

#include <numbers>

#include "helpers.hpp"
#include "layerav/posemap.hpp"

using namespace layerav;

namespace {

TemplateMesh unit_quad() {
    TemplateMesh m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
    m.faces = {{0, 1, 2}, {0, 2, 3}};
    m.layer_label.assign(4, LayerId::body);
    return m;
}

TemplateMesh uv_sphere(double r, int stacks, int slices) {
    TemplateMesh m;
    for (int i = 0; i <= stacks; ++i) {
        const double phi = std::numbers::pi * i / stacks;
        for (int j = 0; j < slices; ++j) {
            const double th = 2.0 * std::numbers::pi * j / slices;
            m.vertices.push_back(r * Vec3(std::sin(phi) * std::cos(th), std::cos(phi), std::sin(phi) * std::sin(th)));
        }
    }
    for (int i = 0; i < stacks; ++i)
        for (int j = 0; j < slices; ++j) {
            const int a = i * slices + j, b = i * slices + (j + 1) % slices;
            const int c = a + slices, d = b + slices;
            m.faces.push_back({a, c, b});
            m.faces.push_back({b, c, d});
        }
    m.layer_label.assign(m.vertices.size(), LayerId::body);
    return m;
}

BodyDefinition rigid_body() {
    BodyDefinition b;
    b.rest_joints = {Vec3::Zero(), Vec3(0, 1, 0)};
    b.parents = {-1, 0};
    b.rest_vertices = {Vec3(0.5, 0.5, 0)};
    b.vertex_weights = {1, 0};
    return b;
}

ExemplarDeformationModel two_exemplars(double a, double b) {
    ExemplarDeformationModel m;
    PoseParams p1 = PoseParams::canonical(2), p2 = PoseParams::canonical(2);
    p1.joint_rotations[0] = Vec3(0, 0, 0.4);
    p2.joint_rotations[0] = Vec3(0, 0, -0.4);
    GaussianAttributes ga, gb;
    ga.offset = Vec3(a, 0, 0);
    gb.offset = Vec3(b, 0, 0);
    m.exemplars = {{p1, {ga, ga}}, {p2, {gb, gb}}};
    return m;
}

}  // namespace

TEST_CASE("unit quad fills the whole 4x4 front and back maps") {
    const CoordinateMaps maps = rasterize_coordinate_maps(unit_quad(), 4, 4);
    CHECK(maps.valid_count() == 32);
    for (int row = 0; row < 4; ++row)
        for (int col = 0; col < 4; ++col) {
            const std::size_t c = maps.cell(row, col);
            const Vec3 expected((col + 0.5) / 4.0, 1.0 - (row + 0.5) / 4.0, 0.0);
            CHECK((maps.positions[0][c] - expected).norm() < 1e-12);
            CHECK((maps.positions[1][c] - maps.positions[0][c]).norm() == 0.0);
            CHECK((maps.pixel_center(row, col) - expected).norm() < 1e-12);
        }
}

TEST_CASE("sphere front map center hits the pole facing the viewer") {
    const double r = 0.5;
    const int n = 33;
    const CoordinateMaps maps = rasterize_coordinate_maps(uv_sphere(r, 48, 96), n, n, MapWindow{-r, r, -r, r});
    const std::size_t c = maps.cell(n / 2, n / 2);
    REQUIRE(maps.valid[0][c]);
    REQUIRE(maps.valid[1][c]);
    const double footprint = 2.0 * r / n;
    // Oracle: the ray along -z through the pixel center meets the sphere at z = +sqrt(r^2 - x^2 - y^2).
    CHECK((maps.positions[0][c] - Vec3(0, 0, r)).norm() < footprint);
    CHECK((maps.positions[1][c] - Vec3(0, 0, -r)).norm() < footprint);
    // Corners of the window lie outside the disk.
    CHECK_FALSE(maps.valid[0][maps.cell(0, 0)]);
}

TEST_CASE("primitive indices number front cells first") {
    const CoordinateMaps maps = rasterize_coordinate_maps(unit_quad(), 2, 3);
    const auto idx = maps.primitive_index();
    CHECK(idx[0][0] == 0);
    CHECK(idx[0][5] == 5);
    CHECK(idx[1][0] == 6);
}

TEST_CASE("posed positional maps") {
    const CoordinateMaps maps = rasterize_coordinate_maps(unit_quad(), 4, 4);
    const BodyDefinition body = rigid_body();
    const SkinningField field = build_skinning_field(body, {8, 8, 8}, 1.0);

    SUBCASE("canonical pose reproduces the maps") {
        const CoordinateMaps posed = posed_positional_maps(maps, field, PoseParams::canonical(2), body);
        for (int s = 0; s < 2; ++s)
            for (std::size_t c = 0; c < maps.positions[s].size(); ++c)
                CHECK((posed.positions[s][c] - maps.positions[s][c]).norm() < 1e-12);
    }
    SUBCASE("global translation shifts every cell") {
        PoseParams p = PoseParams::canonical(2);
        p.global_translation = Vec3(0.1, -0.2, 0.3);
        const CoordinateMaps posed = posed_positional_maps(maps, field, p, body);
        for (std::size_t c = 0; c < maps.positions[0].size(); ++c)
            CHECK((posed.positions[0][c] - maps.positions[0][c] - p.global_translation).norm() < 1e-12);
    }
    SUBCASE("one-hot root rotation rotates every cell") {
        PoseParams p = PoseParams::canonical(2);
        p.joint_rotations[0] = Vec3(0, 0, std::numbers::pi / 2);
        const CoordinateMaps posed = posed_positional_maps(maps, field, p, body);
        const BoneTransformSet t = forward_kinematics(p, body);
        const std::vector<double> w = {1.0, 0.0};
        for (std::size_t c = 0; c < maps.positions[0].size(); ++c) {
            const Vec3& q = maps.positions[0][c];
            CHECK((posed.positions[0][c] - lbs_point(q, Vec3::Zero(), {}, {}, w, t)).norm() < 1e-12);
            CHECK((posed.positions[0][c] - Vec3(-q.y(), q.x(), q.z())).norm() < 1e-12);
        }
    }
}

TEST_CASE("exemplar regression") {
    SUBCASE("exact pose match returns that exemplar") {
        const ExemplarDeformationModel m = two_exemplars(1.0, 3.0);
        const auto out = predict_gaussian_maps(m, m.exemplars[1].pose);
        CHECK(out[0].offset.x() == 3.0);
    }
    SUBCASE("single exemplar is constant") {
        ExemplarDeformationModel m = two_exemplars(1.0, 3.0);
        m.exemplars.pop_back();
        std::mt19937_64 rng(2);
        for (int i = 0; i < 10; ++i) {
            PoseParams p = PoseParams::canonical(2);
            p.joint_rotations[1] = test::random_vec(rng, -1, 1);
            CHECK(predict_gaussian_maps(m, p)[1].offset.x() == 1.0);
        }
    }
    SUBCASE("equidistant pose averages two exemplars") {
        const ExemplarDeformationModel m = two_exemplars(1.0, 3.0);
        const auto out = predict_gaussian_maps(m, PoseParams::canonical(2));
        CHECK(out[0].offset.x() == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(out[0].rotation.norm() == doctest::Approx(1.0));
    }
    SUBCASE("far poses still produce normalized weights") {
        ExemplarDeformationModel m = two_exemplars(1.0, 3.0);
        m.kernel_bandwidth = 1e-3;
        PoseParams p = PoseParams::canonical(2);
        p.joint_rotations[0] = Vec3(0, 0, 0.3);
        const auto w = blend_weights(m, p);
        CHECK(w[0] + w[1] == doctest::Approx(1.0));
        CHECK(w[0] > w[1]);
    }
}

TEST_CASE("pose distance") {
    PoseParams a = PoseParams::canonical(2), b = PoseParams::canonical(2);
    CHECK(pose_distance(a, b) == 0.0);
    b.joint_rotations[0] = Vec3(0.5, 0, 0);
    CHECK(pose_distance(a, b) == doctest::Approx(0.25));
    CHECK_THROWS_AS(pose_distance(a, PoseParams::canonical(3)), std::invalid_argument);
}

TEST_CASE("gaussian layer topology") {
    const CoordinateMaps maps = rasterize_coordinate_maps(unit_quad(), 3, 3);
    std::vector<GaussianAttributes> attrs(maps.valid_count());
    const GaussianLayer layer = build_gaussian_layer(LayerId::upper, maps, attrs);
    REQUIRE(layer.size() == 18);
    CHECK(layer.layer_id == LayerId::upper);
    // The center front cell has four neighbors whose fan normal points at the front viewer (+z).
    const NeighborRing& ring = layer.neighbors[4];
    REQUIRE(ring.count == 4);
    Vec3 n = Vec3::Zero();
    const Vec3 p = layer.primitives[4].canonical_position;
    for (int k = 0; k < 4; ++k) {
        const Vec3 a = layer.primitives[ring.index[k]].canonical_position - p;
        const Vec3 b = layer.primitives[ring.index[(k + 1) % 4]].canonical_position - p;
        n += a.cross(b);
    }
    CHECK(n.normalized().z() == doctest::Approx(1.0));
    CHECK(layer.source_side[13] == MapSide::back);
    CHECK_THROWS_AS(build_gaussian_layer(LayerId::body, maps, std::vector<GaussianAttributes>(3)),
                    std::invalid_argument);
}

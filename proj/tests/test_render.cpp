#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "layerav/render.hpp"

using namespace layerav;

namespace {

PosedGaussian splat_at(const Vec3& mean, double sigma, double opacity, const Vec3& color, LayerId layer) {
    PosedGaussian g;
    g.mean = mean;
    g.covariance = sigma * sigma * Mat3::Identity();
    g.opacity = opacity;
    g.color = color;
    g.layer = layer;
    return g;
}

// Pixel center (x, y) of a front orthographic camera expressed in world x/y.
Vec3 world_at_pixel(const CameraModel& cam, int x, int y, double z = 0.0) {
    return {(x + 0.5 - cam.center_x) / cam.focal_x, -(y + 0.5 - cam.center_y) / cam.focal_y, z};
}

// Brute-force alpha accumulation of one layer in double precision.
std::vector<double> alpha_oracle(const PosedGaussianSet& set, LayerId layer, const CameraModel& cam) {
    struct P {
        ProjectedGaussian pg;
        double opacity;
        std::size_t index;
    };
    std::vector<P> ps;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const PosedGaussian& g = set.gaussians[i];
        if (g.layer != layer) continue;
        const ProjectedGaussian pg = project_gaussian(g.mean, g.covariance, cam);
        if (!pg.culled) ps.push_back({pg, g.opacity, i});
    }
    std::sort(ps.begin(), ps.end(), [](const P& a, const P& b) {
        return a.pg.depth != b.pg.depth ? a.pg.depth < b.pg.depth : a.index < b.index;
    });
    std::vector<double> out(static_cast<std::size_t>(cam.width) * cam.height, 0.0);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            double t = 1.0, acc = 0.0;
            for (const P& p : ps) {
                const Eigen::Vector2d d = p.pg.mean2d - Eigen::Vector2d(x + 0.5, y + 0.5);
                const double a = std::min(1.0, p.opacity * std::exp(-0.5 * d.dot(p.pg.cov2d.inverse() * d)));
                if (a < 1.0 / 255.0) continue;
                acc += a * t;
                t *= 1.0 - a;
            }
            out[static_cast<std::size_t>(y) * cam.width + x] = acc;
        }
    return out;
}

}  // namespace

TEST_CASE("orthographic projection of an axis-aligned Gaussian") {
    const double k = 40.0, sigma = 0.05;
    const CameraModel cam = test::front_ortho(32, 32, k);
    Mat3 cov = Mat3::Zero();
    cov.diagonal() << sigma * sigma, sigma * sigma, 0.7;
    const ProjectedGaussian pg = project_gaussian(Vec3::Zero(), cov, cam);
    REQUIRE_FALSE(pg.culled);
    CHECK(pg.cov2d(0, 0) == doctest::Approx(sigma * sigma * k * k + kLowPassDilation).epsilon(1e-12));
    CHECK(pg.cov2d(1, 1) == doctest::Approx(sigma * sigma * k * k + kLowPassDilation).epsilon(1e-12));
    CHECK(std::abs(pg.cov2d(0, 1)) < 1e-12);
    CHECK(pg.mean2d.x() == doctest::Approx(16.0));
    CHECK(pg.depth == doctest::Approx(5.0));
}

TEST_CASE("points behind a perspective camera are culled") {
    const CameraModel cam = test::scene_camera();
    CHECK(project_gaussian(Vec3(0, 0, 4), 0.01 * Mat3::Identity(), cam).culled);
    CHECK_FALSE(project_gaussian(Vec3(0, 0, 0), 0.01 * Mat3::Identity(), cam).culled);
}

TEST_CASE("perspective projection matches a finite-difference Jacobian") {
    const CameraModel cam = test::scene_camera(64, 64);
    const double sigma = 0.04;
    const Vec3 mean(0.0, 0.0, 0.0);  // on the optical axis at depth 3
    const ProjectedGaussian pg = project_gaussian(mean, sigma * sigma * Mat3::Identity(), cam);
    auto project = [&](const Vec3& w) {
        const Vec3 c = cam.world_to_camera.apply(w);
        return Eigen::Vector2d(cam.focal_x * c.x() / c.z() + cam.center_x, cam.focal_y * c.y() / c.z() + cam.center_y);
    };
    Eigen::Matrix<double, 2, 3> jac;
    const double h = 1e-6;
    for (int a = 0; a < 3; ++a) {
        Vec3 e = Vec3::Zero();
        e[a] = h;
        jac.col(a) = (project(mean + e) - project(mean - e)) / (2 * h);
    }
    const Eigen::Matrix2d expected =
        jac * (sigma * sigma * Mat3::Identity()) * jac.transpose() + kLowPassDilation * Eigen::Matrix2d::Identity();
    CHECK((pg.cov2d - expected).norm() < 1e-5);
    const double f_over_z = cam.focal_x * sigma / 3.0;
    CHECK(pg.cov2d(0, 0) == doctest::Approx(f_over_z * f_over_z + kLowPassDilation).epsilon(1e-6));
}

TEST_CASE("empty scene renders background") {
    const RenderOutput out = rasterize({}, test::scene_camera(16, 16));
    CHECK(std::all_of(out.rgb.begin(), out.rgb.end(), [](float v) { return v == 0.0f; }));
    CHECK(std::all_of(out.labels.begin(), out.labels.end(), [](Label l) { return l == kBackgroundLabel; }));
    for (LayerId l : kAllLayers) CHECK_FALSE(out.has_layer(l));
}

TEST_CASE("an opaque Gaussian shows its exact color at its center pixel") {
    const CameraModel cam = test::front_ortho(16, 16, 20.0);
    PosedGaussianSet set;
    set.gaussians.push_back(splat_at(world_at_pixel(cam, 5, 9), 0.05, 1.0, Vec3(0.2, 0.6, 0.9), LayerId::upper));
    const RenderOutput out = rasterize(set, cam);
    const std::size_t px = out.pixel(5, 9);
    CHECK(out.rgb[3 * px] == 0.2f);
    CHECK(out.rgb[3 * px + 1] == 0.6f);
    CHECK(out.rgb[3 * px + 2] == 0.9f);
    CHECK(out.labels[px] == label_of(LayerId::upper));
}

TEST_CASE("two-term compositing") {
    const CameraModel cam = test::front_ortho(16, 16, 20.0);
    const Vec3 c1(1, 0, 0), c2(0, 0, 1);
    PosedGaussianSet set;
    set.gaussians.push_back(splat_at(world_at_pixel(cam, 7, 7, 0.0), 0.05, 1.0, c2, LayerId::body));
    set.gaussians.push_back(splat_at(world_at_pixel(cam, 7, 7, 0.5), 0.05, 0.5, c1, LayerId::lower));
    const RenderOutput out = rasterize(set, cam);
    const std::size_t px = out.pixel(7, 7);
    CHECK(out.rgb[3 * px] == doctest::Approx(0.5));
    CHECK(out.rgb[3 * px + 2] == doctest::Approx(0.5));
    // Isolated buffers keep the hidden body observable.
    CHECK(out.coverage_of(LayerId::body, px) == doctest::Approx(1.0));
    CHECK(out.depth_of(LayerId::body, px) == doctest::Approx(5.0));
    CHECK(out.depth_of(LayerId::lower, px) == doctest::Approx(4.5));
    CHECK(out.layer_color(LayerId::body, px).z() == doctest::Approx(1.0));
}

TEST_CASE("single Gaussian reference image follows the closed-form falloff") {
    const CameraModel cam = test::front_ortho(24, 24, 30.0);
    PosedGaussianSet set;
    set.gaussians.push_back(splat_at(Vec3(0.03, -0.02, 0.0), 0.06, 0.8, Vec3(1, 1, 1), LayerId::body));
    const RenderOutput out = reference_composite(set, cam);
    const ProjectedGaussian pg = project_gaussian(set.gaussians[0].mean, set.gaussians[0].covariance, cam);
    const Eigen::Matrix2d inv = pg.cov2d.inverse();
    for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 24; ++x) {
            const Eigen::Vector2d d = pg.mean2d - Eigen::Vector2d(x + 0.5, y + 0.5);
            double a = 0.8 * std::exp(-0.5 * d.dot(inv * d));
            if (a < 1.0 / 255.0) a = 0.0;
            CHECK(std::abs(out.rgb[3 * out.pixel(x, y)] - a) < 1e-5);
        }
}

TEST_CASE("tiled rasterizer matches the reference compositor") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const PosedGaussianSet set = test::random_scene(seed, 300);
        const CameraModel cam = test::scene_camera();
        const RenderOutput a = rasterize(set, cam);
        const RenderOutput b = reference_composite(set, cam);
        float worst = 0.0f;
        for (std::size_t i = 0; i < a.rgb.size(); ++i) worst = std::max(worst, std::abs(a.rgb[i] - b.rgb[i]));
        CHECK(worst <= 1e-4f);
    }
}

TEST_CASE("output is bit-identical across worker counts and tile sizes") {
    const PosedGaussianSet set = test::random_scene(42, 400);
    const CameraModel cam = test::scene_camera(80, 48);
    RenderOptions one, four, small_tiles;
    four.workers = 4;
    small_tiles.tile_size = 8;
    small_tiles.workers = 3;
    const RenderOutput a = rasterize(set, cam, one);
    const RenderOutput b = rasterize(set, cam, four);
    const RenderOutput c = rasterize(set, cam, small_tiles);
    CHECK(a.rgb == b.rgb);
    CHECK(a.labels == b.labels);
    CHECK(a.layer_depth == b.layer_depth);
    CHECK(a.rgb == c.rgb);
}

TEST_CASE("segmentation rendering") {
    const CameraModel cam = test::front_ortho(16, 16, 20.0);
    const LayerPalette palette = default_palette();
    SUBCASE("body-only scene is red wherever covered") {
        PosedGaussianSet set;
        set.gaussians.push_back(splat_at(Vec3::Zero(), 0.1, 0.9, Vec3(0.3, 0.3, 0.3), LayerId::body));
        const RenderOutput seg = render_segmentation(set, cam, palette);
        for (std::size_t p = 0; p < seg.pixel_count(); ++p) {
            CHECK(seg.rgb[3 * p + 1] == 0.0f);
            CHECK(seg.rgb[3 * p + 2] == 0.0f);
            if (seg.total_alpha[p] > 0.0f) CHECK(seg.rgb[3 * p] > 0.0f);
        }
    }
    SUBCASE("opaque upper garment hides the body") {
        PosedGaussianSet set;
        set.gaussians.push_back(splat_at(world_at_pixel(cam, 8, 8, 0.0), 0.1, 1.0, Vec3::Zero(), LayerId::body));
        set.gaussians.push_back(splat_at(world_at_pixel(cam, 8, 8, 0.2), 0.1, 1.0, Vec3::Zero(), LayerId::upper));
        const RenderOutput seg = render_segmentation(set, cam, palette);
        const std::size_t px = seg.pixel(8, 8);
        CHECK(seg.rgb[3 * px] == 0.0f);
        CHECK(seg.rgb[3 * px + 1] == 1.0f);
    }
    SUBCASE("mixed alpha matches the brute-force compositor with palette colors") {
        PosedGaussianSet set = test::random_scene(8, 200);
        const RenderOutput seg = render_segmentation(set, test::scene_camera(), palette);
        for (PosedGaussian& g : set.gaussians) g.color = palette.at(g.layer);
        const RenderOutput ref = reference_composite(set, test::scene_camera());
        float worst = 0.0f;
        for (std::size_t i = 0; i < seg.rgb.size(); ++i) worst = std::max(worst, std::abs(seg.rgb[i] - ref.rgb[i]));
        CHECK(worst <= 1e-4f);
    }
    SUBCASE("missing palette entry throws") {
        PosedGaussianSet set;
        set.gaussians.push_back(splat_at(Vec3::Zero(), 0.1, 0.9, Vec3::Zero(), LayerId::outer));
        CHECK_THROWS_AS(render_segmentation(set, cam, {{LayerId::body, Vec3(1, 0, 0)}}), std::invalid_argument);
    }
}

TEST_CASE("single-layer masks") {
    const CameraModel cam = test::scene_camera(32, 32);
    SUBCASE("no body Gaussians gives an all-zero mask") {
        PosedGaussianSet set;
        set.gaussians.push_back(splat_at(Vec3::Zero(), 0.1, 0.9, Vec3::Zero(), LayerId::lower));
        const auto mask = render_single_layer_mask(set, LayerId::body, cam);
        CHECK(std::all_of(mask.begin(), mask.end(), [](float v) { return v == 0.0f; }));
    }
    SUBCASE("one opaque body Gaussian gives its clipped footprint") {
        PosedGaussianSet set;
        set.gaussians.push_back(splat_at(Vec3::Zero(), 0.05, 1.0, Vec3::Zero(), LayerId::body));
        const auto mask = render_single_layer_mask(set, LayerId::body, cam);
        const auto oracle = alpha_oracle(set, LayerId::body, cam);
        for (std::size_t p = 0; p < mask.size(); ++p) CHECK(std::abs(mask[p] - oracle[p]) < 1e-5);
        CHECK(*std::max_element(mask.begin(), mask.end()) <= 1.0f);
    }
    SUBCASE("random scenes match brute-force accumulation") {
        const PosedGaussianSet set = test::random_scene(21, 250);
        const auto mask = render_single_layer_mask(set, LayerId::body, cam);
        const auto oracle = alpha_oracle(set, LayerId::body, cam);
        double worst = 0.0;
        for (std::size_t p = 0; p < mask.size(); ++p) worst = std::max(worst, std::abs(mask[p] - oracle[p]));
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("labels follow the dominant composite layer above the alpha threshold") {
    const CameraModel cam = test::front_ortho(16, 16, 20.0);
    PosedGaussianSet set;
    set.gaussians.push_back(splat_at(world_at_pixel(cam, 4, 4), 0.05, 0.3, Vec3::Ones(), LayerId::body));
    set.gaussians.push_back(splat_at(world_at_pixel(cam, 10, 10), 0.05, 0.9, Vec3::Ones(), LayerId::outer));
    const RenderOutput out = rasterize(set, cam);
    CHECK(out.labels[out.pixel(4, 4)] == kBackgroundLabel);
    CHECK(out.labels[out.pixel(10, 10)] == label_of(LayerId::outer));
    CHECK(std::isinf(out.depth_of(LayerId::body, out.pixel(4, 4))));
}

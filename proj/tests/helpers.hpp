#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "layerav/core.hpp"
#include "layerav/render.hpp"
#include "layerav/synthgen.hpp"

namespace layerav::test {

// Scratch directory removed on scope exit.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("layerav_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Vec3 random_vec(std::mt19937_64& rng, double lo, double hi) {
    return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
}

inline Quat random_quat(std::mt19937_64& rng) {
    std::normal_distribution<double> n;
    Quat q(n(rng), n(rng), n(rng), n(rng));
    q.normalize();
    return q;
}

inline std::vector<double> random_weights(std::mt19937_64& rng, int count) {
    std::vector<double> w(count);
    double sum = 0.0;
    for (double& v : w) sum += (v = uniform(rng, 0.0, 1.0));
    for (double& v : w) v /= sum;
    return w;
}

inline BoneTransformSet random_bones(std::mt19937_64& rng, int count) {
    BoneTransformSet set;
    for (int j = 0; j < count; ++j) set.bones.push_back({random_quat(rng).toRotationMatrix(), random_vec(rng, -1, 1)});
    return set;
}

// Layer of `n` primitives in a line with valid skinning and topology.
inline GaussianLayer simple_layer(std::size_t n, int joints = 2, int blendshapes = 1) {
    GaussianLayer layer;
    layer.joint_count = joints;
    layer.blendshape_count = blendshapes;
    for (std::size_t i = 0; i < n; ++i) {
        GaussianPrimitive g;
        g.canonical_position = Vec3(0.01 * static_cast<double>(i), 0.0, 0.0);
        layer.primitives.push_back(g);
        for (int j = 0; j < joints; ++j) layer.skinning_weights.push_back(j == 0 ? 1.0 : 0.0);
        for (int b = 0; b < blendshapes * 3; ++b) layer.blendshape_offsets.push_back(0.0);
        NeighborRing ring;
        if (i > 0) ring.push(static_cast<std::int32_t>(i - 1));
        if (i + 1 < n) ring.push(static_cast<std::int32_t>(i + 1));
        layer.neighbors.push_back(ring);
        layer.source_side.push_back(MapSide::front);
    }
    return layer;
}

// Orthographic camera looking down +z from z = -5 with the origin at the
// image center.
inline CameraModel front_ortho(int w, int h, double ppm) {
    return CameraModel::orthographic(w, h, ppm, CameraModel::look_at({0, 0, 5}, {0, 0, 0}, {0, 1, 0}));
}

// Random mixed-layer scene in front of a 64x64 perspective camera.
inline PosedGaussianSet random_scene(std::uint64_t seed, std::size_t count) {
    std::mt19937_64 rng(seed);
    PosedGaussianSet set;
    for (std::size_t i = 0; i < count; ++i) {
        PosedGaussian g;
        g.mean = Vec3(uniform(rng, -0.6, 0.6), uniform(rng, -0.6, 0.6), uniform(rng, -0.5, 0.5));
        const Vec3 s(uniform(rng, 0.01, 0.08), uniform(rng, 0.01, 0.08), uniform(rng, 0.01, 0.08));
        g.covariance = covariance_from_rotation_scale(random_quat(rng), s);
        g.opacity = uniform(rng, 0.05, 1.0);
        g.color = random_vec(rng, 0.0, 1.0);
        g.layer = kAllLayers[static_cast<std::size_t>(uniform(rng, 0.0, 3.999))];
        set.gaussians.push_back(g);
    }
    return set;
}

inline CameraModel scene_camera(int w = 64, int h = 64) {
    return CameraModel::perspective(w, h, 1.2 * w, CameraModel::look_at({0, 0, 3}, {0, 0, 0}, {0, 1, 0}));
}

// Small skirt scene shared by several test files; built once.
inline const SynthScene& skirt_scene() {
    static const SynthScene scene = [] {
        SynthSpec spec = SynthSpec::with_garments(3, {GarmentKind::tube_skirt});
        spec.cameras.count = 2;
        spec.field_resolution = 24;
        return generate_scene(spec, false);
    }();
    return scene;
}

// Catalog directory shared by the CLI and service tests: the skirt, shirt and
// jacket scene, a second skirt and a body with injected pokes ("poked-body").
inline const std::filesystem::path& wardrobe_dir() {
    static const TempDir dir("wardrobe");
    static const bool ready = [] {
        SynthSpec spec = SynthSpec::with_garments(
            3, {GarmentKind::tube_skirt, GarmentKind::shirt_shell, GarmentKind::open_jacket_shell});
        spec.cameras.count = 1;
        spec.field_resolution = 24;
        const SynthScene scene = generate_scene(spec, false);
        Catalog cat = Catalog::open(dir.path());
        for (const auto& [layer, asset] : scene.assets) cat.add(*asset);

        SynthSpec alt = SynthSpec::with_garments(3, {GarmentKind::tube_skirt});
        alt.garments[0].radius = 0.2;
        alt.garments[0].bottom = 0.45;
        alt.garments[0].asset_id = "long-skirt";
        alt.cameras.count = 1;
        alt.field_resolution = 24;
        cat.add(*generate_scene(alt, false).assets.at(LayerId::lower));

        WardrobeAsset poked = *inject_penetration(skirt_scene(), 0.05, 0.035).scene.assets.at(LayerId::body);
        poked.asset_id = "poked-body";
        cat.add(poked);
        return true;
    }();
    (void)ready;
    return dir.path();
}

}  // namespace layerav::test

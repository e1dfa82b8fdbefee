#pragma once

// Deterministic procedural avatars: a cylinder-built body with a small
// skeleton, tube-shaped garments, seeded pose sequences and a camera ring.
// Everything derives from SynthSpec; the same spec yields byte-identical assets.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "layerav/render.hpp"
#include "layerav/skinning.hpp"
#include "layerav/tryon.hpp"
#include "layerav/wardrobe.hpp"

namespace layerav {

enum class GarmentKind { tube_skirt, shirt_shell, open_jacket_shell };

std::string_view garment_kind_name(GarmentKind kind);
std::optional<GarmentKind> parse_garment_kind(std::string_view name);
LayerId garment_layer(GarmentKind kind);

struct SynthGarment {
    GarmentKind kind = GarmentKind::tube_skirt;
    double radius = 0.17;
    double bottom = 0.55;
    double top = 1.0;
    double opening = 0.5;  // half-angle of the jacket's front opening, radians
    std::string asset_id;  // defaults to the kind name
};

struct SynthPoseSpec {
    int frames = 8;
    double amplitude = 0.3;  // radians
    double cycles = 1.0;     // sine periods over the sequence
};

struct SynthCameraRing {
    int count = 4;
    double radius = 3.0;
    double elevation = 0.0;  // radians
    double focal_scale = 1.6;  // focal length in image widths
    int width = 64;
    int height = 64;
    double target_y = 0.95;
};

struct SynthSpec {
    std::uint64_t seed = 7;
    // Body: cylinder torso, optional legs and a head.
    double torso_radius = 0.15;
    double torso_bottom = 0.9;
    double torso_top = 1.5;
    int limb_count = 2;  // 0 or 2 legs
    double leg_radius = 0.06;
    double head_radius = 0.09;
    int joint_count = 4;
    int blendshape_count = 2;
    std::vector<SynthGarment> garments;
    double offset_noise = 0.002;  // meters, non-canonical exemplars
    double color_noise = 0.03;
    int exemplar_count = 3;
    int map_width = 32;  // body map columns; garments reuse the body's cell spacing
    int field_resolution = 32;
    double field_padding = 0.15;  // meters
    std::vector<double> shape;    // identity's beta, zeros when empty
    SynthPoseSpec poses;
    SynthCameraRing cameras;
    std::string body_id = "synth-body";

    std::optional<std::string> invalid_reason() const;
    /// Spec with one garment of each requested kind at default dimensions.
    static SynthSpec with_garments(std::uint64_t seed, const std::vector<GarmentKind>& kinds);
};

struct SynthScene {
    SynthSpec spec;
    BodyDefinition body;
    std::shared_ptr<const SkinningField> field;
    std::map<LayerId, std::shared_ptr<const WardrobeAsset>> assets;
    std::vector<CameraModel> cameras;
    std::vector<RenderOutput> ground_truth;  // reference_composite per camera, canonical pose

    ComposedAvatar avatar() const;
};

/// Throws std::invalid_argument when the SynthSpec is invalid.
SynthScene generate_scene(const SynthSpec& spec, bool render_ground_truth = true);

std::vector<CameraModel> camera_ring(const SynthCameraRing& ring);

/// Uncorrected render of the scene's avatar at `pose` (tiled rasterizer, one worker).
RenderOutput reference_render(const SynthScene& scene, const PoseParams& pose, const CameraModel& camera);

struct InjectionResult {
    SynthScene scene;
    std::vector<std::uint32_t> displaced;                // primitive indices of the inner layer
    std::vector<std::vector<std::uint32_t>> poke_pixels;  // per camera: label differs from the clean render
};

/// Pushes a seeded `fraction` of the inner layer's Gaussians outward along
/// their estimated normals by `magnitude` in every exemplar.
InjectionResult inject_penetration(const SynthScene& scene, double fraction, double magnitude,
                                   LayerId inner = LayerId::body);

/// Sinusoidal per-joint curves with seeded phases; frame 0 is canonical.
std::vector<PoseParams> generate_pose_sequence(const SynthSpec& spec);

/// Writes the scene's assets into a catalog directory and its ground-truth
/// renders (PNG/PFM) into `render_dir`.
void export_scene(const SynthScene& scene, const std::filesystem::path& catalog_dir,
                  const std::filesystem::path& render_dir);

/// Deterministic uniform/normal draws from a 64-bit Mersenne Twister, with no
/// dependence on the standard library's distribution implementations.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : engine_(seed) {}
    double uniform();  // [0, 1)
    double normal();
    std::uint64_t next() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

}  // namespace layerav

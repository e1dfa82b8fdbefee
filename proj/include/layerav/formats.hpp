#pragma once

// JSON files shared by the CLI and the HTTP service: poses, cameras,
// outfit compositions, configuration and pose presets.
//
// Pose:    {"joint_rotations": [[x,y,z], ...], "global_orientation": [x,y,z],
//           "global_translation": [x,y,z]}            (axis-angle, radians)
// Poses:   {"frames": [pose, ...]}, a bare array of poses, or a single pose
// Camera:  {"kind": "perspective"|"orthographic", "width": W, "height": H,
//           "focal": f | "focal_x"/"focal_y", ["center_x", "center_y"], ["near"],
//           "eye"/"target"/["up"] | "rotation" (3x3 rows) + "translation"}
//           For orthographic cameras the focal values are pixels per meter.
// Compose: {"body": id, ["upper"|"lower"|"outer": id], ["shape": [...]],
//           ["epsilon": eps], ["adjacency": [["body","lower"], ...]],
//           ["donor_body": id, "body_swap_epsilon": eps]}
// Config:  {"wardrobe": dir, "width": W, "height": H, "workers": n, "output": dir,
//           "max_image_size": n, "loss_weights": {...}, "presets": [...]}

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "layerav/core.hpp"
#include "layerav/wardrobe.hpp"

namespace layerav {

using Json = nlohmann::json;

/// Malformed or out-of-range input data.
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

Json read_json_file(const std::filesystem::path& path);  // NotFoundError / InputError

Json pose_to_json(const PoseParams& pose);
PoseParams pose_from_json(const Json& j);
std::vector<PoseParams> pose_sequence_from_json(const Json& j);

Json camera_to_json(const CameraModel& camera);
CameraModel camera_from_json(const Json& j);

/// Front-facing perspective camera framing the body asset's template.
CameraModel default_camera(const WardrobeAsset& body, int width, int height);
/// Camera orbiting the body's center; azimuth 0 looks at the front.
CameraModel orbit_camera(const WardrobeAsset& body, int width, int height, double azimuth, double elevation,
                         double distance);

struct ComposeSpec {
    std::string body;
    std::map<LayerId, std::string> garments;
    std::vector<double> shape;  // zeros of the body's B when empty
    std::optional<double> epsilon;
    std::optional<std::vector<AdjacencyPair>> adjacency;
    std::optional<std::string> donor_body;
    double body_swap_epsilon = 0.005;
};

ComposeSpec compose_spec_from_json(const Json& j);
/// NotFoundError for unknown ids, IncompatibleError for bad combinations.
ComposedAvatar resolve_composition(const ComposeSpec& spec, const Catalog& catalog);

struct PresetSpec {
    std::string name;
    int frames = 1;
    double amplitude = 0.0;
    double cycles = 1.0;
    std::uint64_t seed = 1;
};

std::vector<PresetSpec> default_presets();
/// Frame `frame` of the preset for a skeleton with `joint_count` joints.
/// Throws std::out_of_range for a frame outside [0, frames).
PoseParams preset_pose(const PresetSpec& preset, int frame, int joint_count);

struct AppConfig {
    std::filesystem::path wardrobe = "wardrobe";
    int width = 256;
    int height = 256;
    int workers = 1;
    std::filesystem::path output = "out";
    int max_image_size = 1024;
    LossWeights loss_weights;
    std::vector<PresetSpec> presets = default_presets();

    std::optional<std::string> invalid_reason() const;
};

AppConfig config_from_json(const Json& j);
/// LAYERAV_WARDROBE and LAYERAV_WORKERS override the wardrobe directory and
/// worker count.
void apply_env_overrides(AppConfig& config);

}  // namespace layerav

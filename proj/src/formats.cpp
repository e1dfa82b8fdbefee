#include "layerav/formats.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>

#include "layerav/synthgen.hpp"

namespace layerav {

namespace {

double number(const Json& j, const char* what) {
    if (!j.is_number()) throw InputError(std::string(what) + " must be a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) throw InputError(std::string(what) + " must be finite");
    return v;
}

Vec3 vec3(const Json& j, const char* what) {
    if (!j.is_array() || j.size() != 3) throw InputError(std::string(what) + " must be an array of 3 numbers");
    return {number(j[0], what), number(j[1], what), number(j[2], what)};
}

int integer(const Json& j, const char* what) {
    if (!j.is_number_integer()) throw InputError(std::string(what) + " must be an integer");
    return j.get<int>();
}

Json vec_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

LayerId layer_field(const Json& j, const char* what) {
    if (!j.is_string()) throw InputError(std::string(what) + " must be a layer name");
    const auto l = parse_layer(j.get<std::string>());
    if (!l) throw InputError(std::string(what) + ": unknown layer '" + j.get<std::string>() + "'");
    return *l;
}

Vec3 body_center(const WardrobeAsset& body, double* span) {
    const MapWindow& w = body.coordinate_maps.window;
    if (span) *span = std::max(w.x_max - w.x_min, w.y_max - w.y_min);
    return {0.5 * (w.x_min + w.x_max), 0.5 * (w.y_min + w.y_max), 0.0};
}

}  // namespace

Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

Json pose_to_json(const PoseParams& pose) {
    Json rots = Json::array();
    for (const Vec3& r : pose.joint_rotations) rots.push_back(vec_json(r));
    return {{"joint_rotations", rots},
            {"global_orientation", vec_json(pose.global_orientation)},
            {"global_translation", vec_json(pose.global_translation)}};
}

PoseParams pose_from_json(const Json& j) {
    if (!j.is_object() || !j.contains("joint_rotations")) throw InputError("pose must be an object with joint_rotations");
    PoseParams p;
    const Json& rots = j.at("joint_rotations");
    if (!rots.is_array()) throw InputError("joint_rotations must be an array");
    for (const Json& r : rots) p.joint_rotations.push_back(vec3(r, "joint rotation"));
    if (j.contains("global_orientation")) p.global_orientation = vec3(j["global_orientation"], "global_orientation");
    if (j.contains("global_translation")) p.global_translation = vec3(j["global_translation"], "global_translation");
    return p;
}

std::vector<PoseParams> pose_sequence_from_json(const Json& j) {
    const Json* frames = &j;
    if (j.is_object() && j.contains("frames")) frames = &j.at("frames");
    std::vector<PoseParams> out;
    if (frames->is_array()) {
        for (const Json& f : *frames) out.push_back(pose_from_json(f));
    } else {
        out.push_back(pose_from_json(*frames));
    }
    if (out.empty()) throw InputError("pose sequence is empty");
    return out;
}

Json camera_to_json(const CameraModel& c) {
    Json rot = Json::array();
    for (int r = 0; r < 3; ++r)
        rot.push_back({c.world_to_camera.rotation(r, 0), c.world_to_camera.rotation(r, 1), c.world_to_camera.rotation(r, 2)});
    return {{"kind", c.kind == CameraKind::perspective ? "perspective" : "orthographic"},
            {"width", c.width},
            {"height", c.height},
            {"focal_x", c.focal_x},
            {"focal_y", c.focal_y},
            {"center_x", c.center_x},
            {"center_y", c.center_y},
            {"near", c.near_plane},
            {"rotation", rot},
            {"translation", vec_json(c.world_to_camera.translation)}};
}

CameraModel camera_from_json(const Json& j) {
    if (!j.is_object()) throw InputError("camera must be an object");
    const std::string kind = j.value("kind", std::string("perspective"));
    if (kind != "perspective" && kind != "orthographic") throw InputError("camera kind must be perspective or orthographic");
    if (!j.contains("width") || !j.contains("height")) throw InputError("camera needs width and height");
    const int w = integer(j["width"], "width"), h = integer(j["height"], "height");

    RigidTransform view;
    if (j.contains("eye")) {
        const Vec3 eye = vec3(j["eye"], "eye");
        const Vec3 target = j.contains("target") ? vec3(j["target"], "target") : Vec3::Zero();
        const Vec3 up = j.contains("up") ? vec3(j["up"], "up") : Vec3::UnitY();
        if ((target - eye).norm() < 1e-12 || (target - eye).cross(up).norm() < 1e-12)
            throw InputError("camera eye/target/up are degenerate");
        view = CameraModel::look_at(eye, target, up);
    } else if (j.contains("rotation")) {
        const Json& r = j["rotation"];
        if (!r.is_array() || r.size() != 3) throw InputError("rotation must be a 3x3 array");
        for (int row = 0; row < 3; ++row) {
            const Vec3 v = vec3(r[row], "rotation row");
            view.rotation.row(row) = v.transpose();
        }
        if ((view.rotation * view.rotation.transpose() - Mat3::Identity()).norm() > 1e-6 ||
            view.rotation.determinant() < 0.0)
            throw InputError("rotation must be a proper orthonormal matrix");
        view.translation = j.contains("translation") ? vec3(j["translation"], "translation") : Vec3::Zero();
    } else {
        throw InputError("camera needs eye/target or rotation/translation");
    }

    double fx = 0.0, fy = 0.0;
    const char* focal_key = kind == "perspective" ? "focal" : "pixels_per_meter";
    if (j.contains(focal_key)) {
        fx = fy = number(j[focal_key], focal_key);
    } else if (j.contains("focal")) {
        fx = fy = number(j["focal"], "focal");
    } else if (j.contains("focal_x") && j.contains("focal_y")) {
        fx = number(j["focal_x"], "focal_x");
        fy = number(j["focal_y"], "focal_y");
    } else {
        throw InputError("camera needs a focal length");
    }
    CameraModel cam = kind == "perspective" ? CameraModel::perspective(w, h, fx, view)
                                            : CameraModel::orthographic(w, h, fx, view);
    cam.focal_y = fy;
    if (j.contains("center_x")) cam.center_x = number(j["center_x"], "center_x");
    if (j.contains("center_y")) cam.center_y = number(j["center_y"], "center_y");
    if (j.contains("near")) cam.near_plane = number(j["near"], "near");
    if (auto why = cam.invalid_reason()) throw InputError("camera: " + *why);
    return cam;
}

CameraModel default_camera(const WardrobeAsset& body, int width, int height) {
    return orbit_camera(body, width, height, 0.0, 0.0, 3.0);
}

CameraModel orbit_camera(const WardrobeAsset& body, int width, int height, double azimuth, double elevation,
                         double distance) {
    if (!(distance > 0.0)) throw InputError("orbit distance must be positive");
    double span = 1.0;
    const Vec3 center = body_center(body, &span);
    const Vec3 dir(std::sin(azimuth) * std::cos(elevation), std::sin(elevation), std::cos(azimuth) * std::cos(elevation));
    const RigidTransform view = CameraModel::look_at(center + distance * dir, center, Vec3::UnitY());
    const double focal = 0.9 * std::min(width, height) * distance / std::max(span, 1e-6);
    return CameraModel::perspective(width, height, focal, view);
}

ComposeSpec compose_spec_from_json(const Json& j) {
    if (!j.is_object()) throw InputError("composition must be an object");
    ComposeSpec s;
    if (!j.contains("body") || !j["body"].is_string()) throw IncompatibleError("composition has no body");
    s.body = j["body"].get<std::string>();
    for (LayerId l : {LayerId::upper, LayerId::lower, LayerId::outer}) {
        const std::string key(layer_name(l));
        if (j.contains(key) && !j[key].is_null()) {
            if (!j[key].is_string()) throw InputError(key + " must be an asset id");
            s.garments[l] = j[key].get<std::string>();
        }
    }
    if (j.contains("shape")) {
        if (!j["shape"].is_array()) throw InputError("shape must be an array");
        for (const Json& v : j["shape"]) s.shape.push_back(number(v, "shape coefficient"));
    }
    if (j.contains("epsilon")) s.epsilon = number(j["epsilon"], "epsilon");
    if (j.contains("adjacency")) {
        std::vector<AdjacencyPair> pairs;
        for (const Json& p : j["adjacency"]) {
            if (!p.is_array() || p.size() != 2) throw InputError("adjacency entries must be [inner, outer]");
            pairs.emplace_back(layer_field(p[0], "adjacency"), layer_field(p[1], "adjacency"));
        }
        s.adjacency = pairs;
    }
    if (j.contains("donor_body")) s.donor_body = j["donor_body"].get<std::string>();
    if (j.contains("body_swap_epsilon")) s.body_swap_epsilon = number(j["body_swap_epsilon"], "body_swap_epsilon");
    return s;
}

ComposedAvatar resolve_composition(const ComposeSpec& spec, const Catalog& catalog) {
    const AssetPtr body = catalog.load(spec.body);
    ShapeParams shape{spec.shape};
    if (shape.coefficients.empty()) shape = ShapeParams::zero(body->blendshape_count);
    const AvatarIdentity identity = make_identity(shape, body);
    std::vector<AssetPtr> garments;
    for (const auto& [slot, id] : spec.garments) {
        AssetPtr g = catalog.load(id);
        if (g->layer_id != slot)
            throw IncompatibleError("asset '" + id + "' is a " + std::string(layer_name(g->layer_id)) +
                                    " layer but was given for the " + std::string(layer_name(slot)) + " slot");
        garments.push_back(std::move(g));
    }
    ComposedAvatar avatar = compose_avatar(identity, garments);
    if (spec.adjacency) {
        for (const AdjacencyPair& p : *spec.adjacency) {
            if (!avatar.slots.count(p.first) || !avatar.slots.count(p.second))
                throw IncompatibleError("adjacency pair names an empty slot");
        }
        avatar.adjacency = *spec.adjacency;
    }
    if (spec.donor_body) {
        AssetPtr donor = catalog.load(*spec.donor_body);
        if (donor->layer_id != LayerId::body) throw IncompatibleError("donor_body must be a body asset");
        if (donor->joint_count != body->joint_count || donor->blendshape_count != body->blendshape_count)
            throw IncompatibleError("donor body has different J/B");
        avatar.donor_body = donor;
        avatar.body_swap_epsilon = spec.body_swap_epsilon;
    }
    return avatar;
}

std::vector<PresetSpec> default_presets() {
    return {{"canonical", 1, 0.0, 1.0, 1}, {"sway", 24, 0.25, 1.0, 11}, {"stride", 16, 0.4, 2.0, 23}};
}

PoseParams preset_pose(const PresetSpec& preset, int frame, int joint_count) {
    if (frame < 0 || frame >= preset.frames)
        throw std::out_of_range("frame " + std::to_string(frame) + " outside preset '" + preset.name + "' (" +
                                std::to_string(preset.frames) + " frames)");
    if (frame == 0) return PoseParams::canonical(joint_count);
    SynthSpec s;
    s.seed = preset.seed;
    s.joint_count = joint_count;
    s.poses = {preset.frames, preset.amplitude, preset.cycles};
    return generate_pose_sequence(s).at(frame);
}

std::optional<std::string> AppConfig::invalid_reason() const {
    if (workers < 1) return "worker count must be at least 1";
    if (width < 1 || height < 1) return "image size must be positive";
    if (max_image_size < 1) return "max_image_size must be positive";
    if (auto why = loss_weights.invalid_reason()) return why;
    if (presets.empty()) return "at least one preset is required";
    return std::nullopt;
}

AppConfig config_from_json(const Json& j) {
    AppConfig c;
    if (!j.is_object()) throw InputError("config must be an object");
    if (j.contains("wardrobe")) c.wardrobe = j["wardrobe"].get<std::string>();
    if (j.contains("output")) c.output = j["output"].get<std::string>();
    if (j.contains("width")) c.width = integer(j["width"], "width");
    if (j.contains("height")) c.height = integer(j["height"], "height");
    if (j.contains("workers")) c.workers = integer(j["workers"], "workers");
    if (j.contains("max_image_size")) c.max_image_size = integer(j["max_image_size"], "max_image_size");
    if (j.contains("loss_weights")) {
        const Json& w = j["loss_weights"];
        LossWeights& lw = c.loss_weights;
        const std::pair<const char*, double*> fields[] = {
            {"ssim", &lw.ssim},          {"perceptual", &lw.perceptual}, {"seg_multiclass", &lw.seg_multiclass},
            {"seg_body", &lw.seg_body},  {"penetration", &lw.penetration}, {"offset", &lw.offset},
            {"smooth", &lw.smooth},      {"body_opacity", &lw.body_opacity}, {"epsilon_pen", &lw.epsilon_pen}};
        for (const auto& [key, dst] : fields)
            if (w.contains(key)) *dst = number(w[key], key);
    }
    if (j.contains("presets")) {
        c.presets.clear();
        for (const Json& p : j["presets"]) {
            PresetSpec s;
            s.name = p.at("name").get<std::string>();
            s.frames = integer(p.at("frames"), "frames");
            s.amplitude = p.contains("amplitude") ? number(p["amplitude"], "amplitude") : 0.0;
            s.cycles = p.contains("cycles") ? number(p["cycles"], "cycles") : 1.0;
            s.seed = p.contains("seed") ? p["seed"].get<std::uint64_t>() : 1;
            if (s.frames < 1) throw InputError("preset '" + s.name + "' needs at least one frame");
            c.presets.push_back(s);
        }
    }
    if (auto why = c.invalid_reason()) throw InputError("config: " + *why);
    return c;
}

void apply_env_overrides(AppConfig& config) {
    if (const char* w = std::getenv("LAYERAV_WARDROBE"); w && *w) config.wardrobe = w;
    if (const char* n = std::getenv("LAYERAV_WORKERS"); n && *n) {
        char* end = nullptr;
        const long v = std::strtol(n, &end, 10);
        if (*end != '\0' || v < 1 || v > 1024) throw InputError("LAYERAV_WORKERS must be an integer in [1, 1024]");
        config.workers = static_cast<int>(v);
    }
}

}  // namespace layerav

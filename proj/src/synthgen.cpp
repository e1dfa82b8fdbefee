#include "layerav/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "layerav/image_io.hpp"
#include "layerav/losses.hpp"

namespace layerav {

double SeededRng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double SeededRng::normal() {
    // Box-Muller; 1 - u keeps the logarithm finite.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string_view garment_kind_name(GarmentKind kind) {
    switch (kind) {
        case GarmentKind::tube_skirt: return "tube-skirt";
        case GarmentKind::shirt_shell: return "shirt-shell";
        case GarmentKind::open_jacket_shell: return "open-jacket-shell";
    }
    return "unknown";
}

std::optional<GarmentKind> parse_garment_kind(std::string_view name) {
    for (GarmentKind k : {GarmentKind::tube_skirt, GarmentKind::shirt_shell, GarmentKind::open_jacket_shell})
        if (garment_kind_name(k) == name) return k;
    return std::nullopt;
}

LayerId garment_layer(GarmentKind kind) {
    switch (kind) {
        case GarmentKind::tube_skirt: return LayerId::lower;
        case GarmentKind::shirt_shell: return LayerId::upper;
        case GarmentKind::open_jacket_shell: return LayerId::outer;
    }
    return LayerId::lower;
}

SynthSpec SynthSpec::with_garments(std::uint64_t seed, const std::vector<GarmentKind>& kinds) {
    SynthSpec s;
    s.seed = seed;
    for (GarmentKind k : kinds) {
        SynthGarment g;
        g.kind = k;
        switch (k) {
            case GarmentKind::tube_skirt:
                g.radius = 0.17, g.bottom = 0.55, g.top = 1.0;
                break;
            case GarmentKind::shirt_shell:
                g.radius = 0.17, g.bottom = 0.95, g.top = 1.45;
                break;
            case GarmentKind::open_jacket_shell:
                g.radius = 0.2, g.bottom = 0.9, g.top = 1.45, g.opening = 0.5;
                break;
        }
        s.garments.push_back(g);
    }
    return s;
}

std::optional<std::string> SynthSpec::invalid_reason() const {
    if (joint_count < 4) return "joint_count must be at least 4";
    if (blendshape_count < 0) return "blendshape_count must be non-negative";
    if (!(torso_radius > 0.0)) return "torso_radius must be positive";
    if (!(torso_top > torso_bottom)) return "torso_top must exceed torso_bottom";
    if (limb_count != 0 && limb_count != 2) return "limb_count must be 0 or 2";
    if (limb_count == 2 && !(leg_radius > 0.0 && leg_radius <= 0.45 * torso_radius))
        return "leg_radius must lie in (0, 0.45 * torso_radius]";
    if (limb_count == 2 && torso_bottom <= 0.3) return "torso_bottom leaves no room for legs";
    if (!(head_radius > 0.0)) return "head_radius must be positive";
    if (map_width < 4) return "map_width must be at least 4";
    if (field_resolution < 4) return "field_resolution must be at least 4";
    if (!(field_padding > 0.0)) return "field_padding must be positive";
    if (exemplar_count < 1) return "exemplar_count must be at least 1";
    if (!(offset_noise >= 0.0) || !(color_noise >= 0.0)) return "noise levels must be non-negative";
    if (!shape.empty() && static_cast<int>(shape.size()) != blendshape_count)
        return "shape length must equal blendshape_count";
    if (poses.frames < 1) return "pose sequence needs at least one frame";
    if (!(poses.amplitude >= 0.0)) return "pose amplitude must be non-negative";
    if (cameras.count < 1 || cameras.width < 1 || cameras.height < 1 || !(cameras.radius > 0.0) ||
        !(cameras.focal_scale > 0.0))
        return "camera ring is invalid";

    std::map<LayerId, double> radius_of;
    for (const SynthGarment& g : garments) {
        const std::string name = g.asset_id.empty() ? std::string(garment_kind_name(g.kind)) : g.asset_id;
        if (!(g.radius > torso_radius))
            return "garment " + name + ": radius " + std::to_string(g.radius) + " does not exceed torso radius " +
                   std::to_string(torso_radius) + " (guaranteed interpenetration)";
        if (!(g.top > g.bottom) || g.bottom < 0.0) return "garment " + name + ": invalid vertical extent";
        if (g.kind == GarmentKind::open_jacket_shell && !(g.opening > 0.0 && g.opening < std::numbers::pi))
            return "garment " + name + ": opening must lie in (0, pi)";
        const LayerId l = garment_layer(g.kind);
        if (radius_of.count(l)) return "two garments for the " + std::string(layer_name(l)) + " layer";
        radius_of[l] = g.radius;
    }
    if (radius_of.count(LayerId::outer)) {
        for (LayerId inner : {LayerId::upper, LayerId::lower})
            if (radius_of.count(inner) && !(radius_of[LayerId::outer] > radius_of[inner]))
                return "outer garment radius must exceed the " + std::string(layer_name(inner)) + " garment's";
    }
    return std::nullopt;
}

namespace {

constexpr double kVertexSpacing = 0.03;

struct Cylinder {
    double cx = 0.0, cz = 0.0, radius = 0.1;
    double y0 = 0.0, y1 = 1.0;
    double a0 = 0.0, a1 = 2.0 * std::numbers::pi;  // angle from +z toward +x
    bool closed() const { return a1 - a0 >= 2.0 * std::numbers::pi - 1e-12; }
};

// Appends a cylinder and returns, per new vertex, its angle on the cylinder.
std::vector<double> add_cylinder(TemplateMesh& m, const Cylinder& c, LayerId layer) {
    const double arc = (c.a1 - c.a0) * c.radius;
    const int segments = std::max(12, static_cast<int>(std::ceil(arc / (0.5 * kVertexSpacing))));
    const int rows = std::max(1, static_cast<int>(std::ceil((c.y1 - c.y0) / kVertexSpacing)));
    const int columns = c.closed() ? segments : segments + 1;
    const auto base = static_cast<std::int32_t>(m.vertices.size());
    std::vector<double> angles;
    for (int r = 0; r <= rows; ++r) {
        const double y = c.y0 + (c.y1 - c.y0) * r / rows;
        for (int s = 0; s < columns; ++s) {
            const double a = c.a0 + (c.a1 - c.a0) * s / segments;
            m.vertices.emplace_back(c.cx + c.radius * std::sin(a), y, c.cz + c.radius * std::cos(a));
            m.layer_label.push_back(layer);
            angles.push_back(a);
        }
    }
    for (int r = 0; r < rows; ++r) {
        for (int s = 0; s < segments; ++s) {
            const std::int32_t s1 = c.closed() ? (s + 1) % segments : s + 1;
            const std::int32_t v00 = base + r * columns + s, v01 = base + r * columns + s1;
            const std::int32_t v10 = base + (r + 1) * columns + s, v11 = base + (r + 1) * columns + s1;
            m.faces.push_back({v00, v01, v11});
            m.faces.push_back({v00, v11, v10});
        }
    }
    return angles;
}

double leg_offset(const SynthSpec& s) { return 0.55 * s.torso_radius; }

struct BodyBuild {
    TemplateMesh mesh;
    BodyDefinition body;
};

BodyBuild build_body(const SynthSpec& s) {
    BodyBuild b;
    const int j_count = s.joint_count, b_count = s.blendshape_count;
    BodyDefinition& body = b.body;
    body.blendshape_count = b_count;
    const double lx = leg_offset(s);
    body.rest_joints = {{0.0, s.torso_bottom + 0.05, 0.0},
                        {0.0, s.torso_bottom + 0.6 * (s.torso_top - s.torso_bottom), 0.0},
                        {lx, s.torso_bottom, 0.0},
                        {-lx, s.torso_bottom, 0.0}};
    body.parents = {-1, 0, 0, 0};
    for (int j = 4; j < j_count; ++j) {
        body.rest_joints.emplace_back(0.0, s.torso_top + 0.05 * (j - 3), 0.0);
        body.parents.push_back(j == 4 ? 1 : j - 1);
    }

    enum class Part { torso, left_leg, right_leg, head };
    auto add_part = [&](Part part, const Cylinder& c) {
        const std::size_t first = b.mesh.vertices.size();
        const std::vector<double> angles = add_cylinder(b.mesh, c, LayerId::body);
        for (std::size_t k = 0; k < angles.size(); ++k) {
            const Vec3& v = b.mesh.vertices[first + k];
            std::vector<double> w(j_count, 0.0);
            switch (part) {
                case Part::torso: {
                    const double t = std::clamp((v.y() - s.torso_bottom) / (s.torso_top - s.torso_bottom), 0.0, 1.0);
                    w[0] = 1.0 - t;
                    w[1] = t;
                    break;
                }
                case Part::left_leg:
                case Part::right_leg: {
                    const double t = std::clamp((s.torso_bottom + 0.05 - v.y()) / 0.3, 0.0, 1.0);
                    w[part == Part::left_leg ? 2 : 3] = t;
                    w[0] = 1.0 - t;
                    break;
                }
                case Part::head: w[j_count > 4 ? 4 : 1] = 1.0; break;
            }
            body.vertex_weights.insert(body.vertex_weights.end(), w.begin(), w.end());
            const Vec3 radial(std::sin(angles[k]), 0.0, std::cos(angles[k]));
            for (int bs = 0; bs < b_count; ++bs) {
                Vec3 o;
                if (bs == 0) {
                    o = 0.05 * radial;
                } else if (bs == 1) {
                    o = Vec3(0.0, 0.08 * (v.y() - s.torso_bottom), 0.0);
                } else {
                    o = 0.01 * std::sin((bs + 1) * v.y()) * radial;
                }
                body.vertex_offsets.insert(body.vertex_offsets.end(), {o.x(), o.y(), o.z()});
            }
        }
    };
    add_part(Part::torso, {0.0, 0.0, s.torso_radius, s.torso_bottom, s.torso_top});
    if (s.limb_count == 2) {
        add_part(Part::left_leg, {lx, 0.0, s.leg_radius, 0.1, s.torso_bottom + 0.05});
        add_part(Part::right_leg, {-lx, 0.0, s.leg_radius, 0.1, s.torso_bottom + 0.05});
    }
    add_part(Part::head, {0.0, 0.0, s.head_radius, s.torso_top - 0.02, s.torso_top + 0.23});
    body.rest_vertices = b.mesh.vertices;
    return b;
}

TemplateMesh build_garment(const SynthGarment& g) {
    TemplateMesh m;
    Cylinder c{0.0, 0.0, g.radius, g.bottom, g.top};
    if (g.kind == GarmentKind::open_jacket_shell) {
        c.a0 = g.opening;
        c.a1 = 2.0 * std::numbers::pi - g.opening;
    }
    add_cylinder(m, c, garment_layer(g.kind));
    return m;
}

Vec3 base_color(LayerId l) {
    switch (l) {
        case LayerId::body: return {0.85, 0.65, 0.55};
        case LayerId::upper: return {0.2, 0.65, 0.3};
        case LayerId::lower: return {0.2, 0.3, 0.8};
        case LayerId::outer: return {0.8, 0.7, 0.2};
    }
    return Vec3::Constant(0.5);
}

PoseParams random_pose(SeededRng& rng, int joint_count, double amplitude) {
    PoseParams p = PoseParams::canonical(joint_count);
    for (Vec3& r : p.joint_rotations)
        for (int a = 0; a < 3; ++a) r[a] = amplitude * (2.0 * rng.uniform() - 1.0);
    return p;
}

std::shared_ptr<WardrobeAsset> make_asset(const SynthSpec& s, SeededRng& rng, std::string id, LayerId layer,
                                          std::string category, const TemplateMesh& mesh, double spacing) {
    auto a = std::make_shared<WardrobeAsset>();
    a->asset_id = std::move(id);
    a->layer_id = layer;
    a->category = std::move(category);
    a->template_mesh = mesh;
    a->joint_count = s.joint_count;
    a->blendshape_count = s.blendshape_count;

    double x_lo = 1e300, x_hi = -1e300, y_lo = 1e300, y_hi = -1e300;
    for (const Vec3& v : mesh.vertices) {
        x_lo = std::min(x_lo, v.x()), x_hi = std::max(x_hi, v.x());
        y_lo = std::min(y_lo, v.y()), y_hi = std::max(y_hi, v.y());
    }
    const int width = std::max(2, static_cast<int>(std::lround((x_hi - x_lo) / spacing)));
    const int height = std::max(2, static_cast<int>(std::lround((y_hi - y_lo) / spacing)));
    a->coordinate_maps = rasterize_coordinate_maps(mesh, height, width);
    const CoordinateMaps& maps = a->coordinate_maps;
    const double dx = (maps.window.x_max - maps.window.x_min) / width;
    const double dy = (maps.window.y_max - maps.window.y_min) / height;

    const std::size_t n = maps.valid_count();
    const GaussianLayer grid = build_gaussian_layer(layer, maps, std::vector<GaussianAttributes>(n));
    std::vector<Vec3> positions(n);
    for (std::size_t i = 0; i < n; ++i) positions[i] = grid.primitives[i].canonical_position;
    const auto normals = estimate_layer_normals(positions, grid.neighbors);

    std::vector<GaussianAttributes> cells(n);
    const Vec3 base = base_color(layer);
    for (std::size_t i = 0; i < n; ++i) {
        Vec3 nrm = normals[i].normal;
        if (normals[i].degenerate) nrm = grid.source_side[i] == MapSide::front ? Vec3(Vec3::UnitZ()) : Vec3(-Vec3::UnitZ());
        Vec3 t = Vec3::UnitY().cross(nrm);
        t = t.norm() > 1e-6 ? t.normalized() : Vec3::UnitX();
        const Vec3 bvec = nrm.cross(t);
        Mat3 r;
        r.col(0) = t;
        r.col(1) = bvec;
        r.col(2) = nrm;
        GaussianAttributes& c = cells[i];
        c.rotation = Quat(r).normalized();
        const double tilt = std::max(std::abs(nrm.z()), 0.25);
        c.scale = {0.6 * dx / tilt, 0.6 * dy, 0.15 * std::min(dx, dy)};
        c.opacity = 0.95;
        for (int k = 0; k < 3; ++k) c.color[k] = std::clamp(base[k] + s.color_noise * rng.normal(), 0.0, 1.0);
    }

    ExemplarDeformationModel& model = a->deformation_model;
    model.exemplars.push_back({PoseParams::canonical(s.joint_count), cells});
    for (int e = 1; e < s.exemplar_count; ++e) {
        PoseExemplar ex{random_pose(rng, s.joint_count, std::max(s.poses.amplitude, 0.1)), cells};
        for (GaussianAttributes& c : ex.cells)
            c.offset = s.offset_noise * Vec3(rng.normal(), rng.normal(), rng.normal());
        model.exemplars.push_back(std::move(ex));
    }
    return a;
}

}  // namespace

std::vector<CameraModel> camera_ring(const SynthCameraRing& ring) {
    std::vector<CameraModel> out;
    const Vec3 target(0.0, ring.target_y, 0.0);
    for (int k = 0; k < ring.count; ++k) {
        const double az = 2.0 * std::numbers::pi * k / ring.count;
        const Vec3 dir(std::sin(az) * std::cos(ring.elevation), std::sin(ring.elevation),
                       std::cos(az) * std::cos(ring.elevation));
        const RigidTransform view = CameraModel::look_at(target + ring.radius * dir, target, Vec3::UnitY());
        out.push_back(CameraModel::perspective(ring.width, ring.height, ring.focal_scale * ring.width, view));
    }
    return out;
}

ComposedAvatar SynthScene::avatar() const {
    ShapeParams shape{spec.shape};
    if (shape.coefficients.empty()) shape = ShapeParams::zero(spec.blendshape_count);
    const AvatarIdentity identity = make_identity(shape, assets.at(LayerId::body));
    std::vector<AssetPtr> garments;
    for (const auto& [layer, asset] : assets)
        if (layer != LayerId::body) garments.push_back(asset);
    return compose_avatar(identity, garments);
}

RenderOutput reference_render(const SynthScene& scene, const PoseParams& pose, const CameraModel& camera) {
    const ComposeResult posed = pose_avatar(scene.avatar(), pose);
    return rasterize(posed.gaussians, camera);
}

SynthScene generate_scene(const SynthSpec& spec, bool render_ground_truth) {
    if (auto why = spec.invalid_reason()) throw std::invalid_argument("synth spec: " + *why);
    SynthScene scene;
    scene.spec = spec;
    SeededRng rng(spec.seed);

    BodyBuild bb = build_body(spec);
    scene.body = bb.body;
    const int r = spec.field_resolution;
    scene.field = std::make_shared<const SkinningField>(
        build_skinning_field(scene.body, {r, r, r}, spec.field_padding));

    double x_lo = 1e300, x_hi = -1e300;
    for (const Vec3& v : bb.mesh.vertices) x_lo = std::min(x_lo, v.x()), x_hi = std::max(x_hi, v.x());
    const double spacing = (x_hi - x_lo) / spec.map_width;

    auto body = make_asset(spec, rng, spec.body_id, LayerId::body, "synthetic-body", bb.mesh, spacing);
    body->skinning_field = scene.field;
    body->skeleton = {scene.body.rest_joints, scene.body.parents};
    scene.assets[LayerId::body] = body;

    for (const SynthGarment& g : spec.garments) {
        const std::string id = g.asset_id.empty() ? std::string(garment_kind_name(g.kind)) : g.asset_id;
        auto asset = make_asset(spec, rng, id, garment_layer(g.kind), std::string(garment_kind_name(g.kind)),
                                build_garment(g), spacing);
        asset->skinning_field_ref = spec.body_id;
        scene.assets[garment_layer(g.kind)] = asset;
    }

    scene.cameras = camera_ring(spec.cameras);
    if (render_ground_truth) {
        const PoseParams canonical = PoseParams::canonical(spec.joint_count);
        for (const CameraModel& cam : scene.cameras) scene.ground_truth.push_back(reference_render(scene, canonical, cam));
    }
    return scene;
}

InjectionResult inject_penetration(const SynthScene& scene, double fraction, double magnitude, LayerId inner) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw std::invalid_argument("inject_penetration: fraction outside [0,1]");
    InjectionResult r;
    r.scene = scene;
    const auto it = scene.assets.find(inner);
    if (it == scene.assets.end()) throw std::invalid_argument("inject_penetration: scene has no such layer");
    auto asset = std::make_shared<WardrobeAsset>(*it->second);

    const auto attrs = predict_gaussian_maps(asset->deformation_model, PoseParams::canonical(asset->joint_count));
    const GaussianLayer layer = build_gaussian_layer(inner, asset->coordinate_maps, attrs);
    std::vector<Vec3> positions(layer.size());
    for (std::size_t i = 0; i < layer.size(); ++i)
        positions[i] = layer.primitives[i].canonical_position + layer.primitives[i].offset;
    const auto normals = estimate_layer_normals(positions, layer.neighbors);

    const std::size_t n = layer.size();
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    std::vector<std::uint32_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::uint32_t>(i);
    SeededRng rng(scene.spec.seed ^ 0x9e3779b97f4a7c15ull);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.uniform() * static_cast<double>(n - i));
        std::swap(order[i], order[std::min(j, n - 1)]);
    }
    r.displaced.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(r.displaced.begin(), r.displaced.end());

    for (std::uint32_t i : r.displaced) {
        Vec3 nrm = normals[i].normal;
        if (normals[i].degenerate) nrm = layer.source_side[i] == MapSide::front ? Vec3(Vec3::UnitZ()) : Vec3(-Vec3::UnitZ());
        for (PoseExemplar& ex : asset->deformation_model.exemplars) ex.cells[i].offset += magnitude * nrm;
    }
    r.scene.assets[inner] = asset;
    if (k == 0) {
        r.poke_pixels.assign(scene.cameras.size(), {});
        return r;
    }

    const PoseParams canonical = PoseParams::canonical(scene.spec.joint_count);
    r.scene.ground_truth.clear();
    for (std::size_t c = 0; c < scene.cameras.size(); ++c) {
        const RenderOutput clean = c < scene.ground_truth.size() ? scene.ground_truth[c]
                                                                 : reference_render(scene, canonical, scene.cameras[c]);
        RenderOutput perturbed = reference_render(r.scene, canonical, scene.cameras[c]);
        std::vector<std::uint32_t> diff;
        for (std::size_t p = 0; p < clean.labels.size(); ++p)
            if (clean.labels[p] != perturbed.labels[p]) diff.push_back(static_cast<std::uint32_t>(p));
        r.poke_pixels.push_back(std::move(diff));
        r.scene.ground_truth.push_back(std::move(perturbed));
    }
    return r;
}

std::vector<PoseParams> generate_pose_sequence(const SynthSpec& spec) {
    SeededRng rng(spec.seed ^ 0x5eedf00dull);
    const int j = spec.joint_count;
    std::vector<Vec3> phase(j);
    for (Vec3& p : phase)
        for (int a = 0; a < 3; ++a) p[a] = 2.0 * std::numbers::pi * rng.uniform();
    std::vector<PoseParams> out;
    const int frames = spec.poses.frames;
    for (int f = 0; f < frames; ++f) {
        PoseParams p = PoseParams::canonical(j);
        if (f > 0) {
            const double t = 2.0 * std::numbers::pi * spec.poses.cycles * f / frames;
            for (int k = 0; k < j; ++k)
                for (int a = 0; a < 3; ++a)
                    p.joint_rotations[k][a] =
                        spec.poses.amplitude * (std::sin(t + phase[k][a]) - std::sin(phase[k][a]));
        }
        out.push_back(std::move(p));
    }
    return out;
}

void export_scene(const SynthScene& scene, const std::filesystem::path& catalog_dir,
                  const std::filesystem::path& render_dir) {
    Catalog catalog = Catalog::open(catalog_dir);
    for (const auto& [layer, asset] : scene.assets) catalog.add(*asset);
    const std::vector<Rgb8> palette = label_palette();
    for (std::size_t c = 0; c < scene.ground_truth.size(); ++c) {
        const RenderOutput& gt = scene.ground_truth[c];
        const std::string stem = "gt_cam" + std::to_string(c);
        write_file_atomic(render_dir / (stem + "_rgb.png"), encode_png_rgb(gt.width, gt.height, gt.rgb));
        write_file_atomic(render_dir / (stem + "_labels.png"),
                          encode_png_indexed(gt.width, gt.height, gt.labels, palette));
        for (LayerId l : kAllLayers) {
            if (!gt.has_layer(l)) continue;
            write_file_atomic(render_dir / (stem + "_depth_" + std::string(layer_name(l)) + ".pfm"),
                              encode_pfm(gt.width, gt.height, gt.layer_depth[layer_index(l)]));
        }
    }
}

}  // namespace layerav

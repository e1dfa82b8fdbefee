#include "layerav/wardrobe.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <sstream>

#include <json.hpp>

#include "layerav/image_io.hpp"
#include "layerav/losses.hpp"
#include "layerav/spatial_hash.hpp"

namespace layerav {

BodyDefinition Skeleton::as_body() const {
    BodyDefinition b;
    b.rest_joints = rest_joints;
    b.parents = parents;
    return b;
}

// ---- validation --------------------------------------------------------------

namespace {

bool finite(const Vec3& v) { return v.allFinite(); }

bool valid_id(const std::string& id) {
    if (id.empty() || id.size() > 128) return false;
    return std::all_of(id.begin(), id.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-' ||
               c == '.';
    });
}

void check_cell(std::vector<Violation>& out, std::size_t exemplar, std::size_t cell, const GaussianAttributes& a) {
    const std::string where = "exemplar " + std::to_string(exemplar) + " cell " + std::to_string(cell);
    if (!finite(a.offset) || !a.rotation.coeffs().allFinite() || !std::isfinite(a.opacity) || !finite(a.scale) ||
        !finite(a.color)) {
        out.push_back({cell, "finite", where + " has a non-finite attribute"});
        return;
    }
    if (std::abs(a.rotation.norm() - 1.0) > 1e-5) out.push_back({cell, "rotation_unit_norm", where});
    if (a.opacity < 0.0 || a.opacity > 1.0) out.push_back({cell, "opacity_range", where});
    if ((a.scale.array() <= 0.0).any()) out.push_back({cell, "scale_positive", where});
}

}  // namespace

std::vector<Violation> validate_asset(const WardrobeAsset& a) {
    std::vector<Violation> out;
    if (!valid_id(a.asset_id))
        out.push_back({0, "asset_id", "id must be 1..128 characters from [A-Za-z0-9._-]"});
    if (a.format_version != kAssetFormatVersion)
        out.push_back({0, "format_version", "expected " + std::to_string(kAssetFormatVersion)});
    if (a.joint_count < 1) out.push_back({0, "joint_count", "at least one joint is required"});
    if (a.blendshape_count < 0) out.push_back({0, "blendshape_count", "must be non-negative"});
    if (auto why = a.template_mesh.invalid_reason()) out.push_back({0, "template", *why});

    const CoordinateMaps& m = a.coordinate_maps;
    const std::size_t cells = static_cast<std::size_t>(std::max(m.height, 0)) * std::max(m.width, 0);
    bool maps_ok = m.height >= 1 && m.width >= 1;
    for (int s = 0; s < 2 && maps_ok; ++s)
        maps_ok = m.positions[s].size() == cells && m.valid[s].size() == cells;
    if (!maps_ok) {
        out.push_back({0, "coordinate_maps", "position/validity planes do not match height x width"});
    } else {
        for (int s = 0; s < 2; ++s)
            for (std::size_t c = 0; c < cells; ++c)
                if (m.valid[s][c] && !finite(m.positions[s][c]))
                    out.push_back({c, "finite", "non-finite coordinate-map position"});
        if (m.valid_count() == 0) out.push_back({0, "coordinate_maps", "no valid cells"});
    }

    const ExemplarDeformationModel& model = a.deformation_model;
    if (model.exemplars.empty()) {
        out.push_back({0, "deformation_model", "no exemplars"});
    } else {
        if (!(model.kernel_bandwidth > 0.0) || !std::isfinite(model.kernel_bandwidth))
            out.push_back({0, "kernel_bandwidth", "must be positive and finite"});
        bool j_reported = false, n_reported = false;
        for (std::size_t e = 0; e < model.exemplars.size(); ++e) {
            const PoseExemplar& ex = model.exemplars[e];
            if (ex.pose.joint_count() != a.joint_count && !j_reported) {
                out.push_back({e, "model_joint_count",
                               "exemplar pose has " + std::to_string(ex.pose.joint_count()) + " joints, asset has " +
                                   std::to_string(a.joint_count)});
                j_reported = true;
            }
            if (maps_ok && ex.cells.size() != m.valid_count() && !n_reported) {
                out.push_back({e, "model_cell_count",
                               "exemplar has " + std::to_string(ex.cells.size()) + " cells, maps have " +
                                   std::to_string(m.valid_count()) + " valid cells"});
                n_reported = true;
            }
            for (std::size_t c = 0; c < ex.cells.size(); ++c) check_cell(out, e, c, ex.cells[c]);
        }
    }

    if (a.skinning_field) {
        const SkinningField& f = *a.skinning_field;
        bool field_ok = true;
        if (f.joint_count != a.joint_count) {
            out.push_back({0, "field_joint_count",
                           "skinning field has " + std::to_string(f.joint_count) + " joints, asset has " +
                               std::to_string(a.joint_count)});
            field_ok = false;
        }
        if (f.blendshape_count != a.blendshape_count) {
            out.push_back({0, "field_blendshape_count",
                           "skinning field has " + std::to_string(f.blendshape_count) + " blendshapes, asset has " +
                               std::to_string(a.blendshape_count)});
            field_ok = false;
        }
        if (f.resolution[0] < 1 || f.resolution[1] < 1 || f.resolution[2] < 1) {
            out.push_back({0, "field_shape", "non-positive field resolution"});
        } else if (field_ok) {
            const std::size_t v = f.voxel_count();
            if (f.weights.size() != v * f.joint_count || f.offsets.size() != v * f.blendshape_count * 3 ||
                f.valid.size() != v)
                out.push_back({0, "field_shape", "field arrays do not match resolution"});
        }
        if (!((f.bbox.max - f.bbox.min).array() > 0.0).all())
            out.push_back({0, "field_bbox", "field bounding box must have positive extent"});
    } else if (a.skinning_field_ref.empty()) {
        out.push_back({0, "skinning_field_ref", "asset neither embeds nor references a skinning field"});
    }

    if (a.layer_id == LayerId::body) {
        if (!a.skinning_field) out.push_back({0, "skinning_field", "body assets must embed their skinning field"});
        if (a.skeleton.joint_count() != a.joint_count) {
            out.push_back({0, "skeleton_joint_count",
                           "skeleton has " + std::to_string(a.skeleton.joint_count()) + " joints, asset has " +
                               std::to_string(a.joint_count)});
        } else {
            BodyDefinition b = a.skeleton.as_body();
            if (auto why = b.invalid_reason()) out.push_back({0, "skeleton", *why});
        }
    } else if (a.skeleton.joint_count() != 0 && a.skeleton.joint_count() != a.joint_count) {
        out.push_back({0, "skeleton_joint_count", "garment skeleton does not match joint count"});
    }
    return out;
}

// ---- catalog -----------------------------------------------------------------

namespace {

CatalogEntry entry_from_manifest(const nlohmann::json& mf, const std::filesystem::path& file) {
    CatalogEntry e;
    e.asset_id = mf.at("asset_id").get<std::string>();
    const auto layer = parse_layer(mf.at("layer").get<std::string>());
    if (!layer) throw AssetError(AssetErrorKind::format, "", "unknown layer in " + file.string());
    e.layer_id = *layer;
    e.category = mf.at("category").get<std::string>();
    e.joint_count = mf.at("joint_count").get<int>();
    e.blendshape_count = mf.at("blendshape_count").get<int>();
    e.primitive_count = mf.at("primitive_count").get<std::uint64_t>();
    e.file = file;
    e.thumbnail = file.parent_path() / (e.asset_id + ".png");
    return e;
}

}  // namespace

Catalog::Catalog(const Catalog& other) {
    std::shared_lock lock(other.mutex_);
    dir_ = other.dir_;
    entries_ = other.entries_;
    cache_ = other.cache_;
}

Catalog Catalog::open(const std::filesystem::path& directory) {
    std::filesystem::create_directories(directory);
    Catalog c;
    c.dir_ = directory;
    std::vector<std::filesystem::path> files;
    for (const auto& de : std::filesystem::directory_iterator(directory)) {
        if (de.is_regular_file() && de.path().extension() == ".gwa") files.push_back(de.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        const auto mf = nlohmann::json::parse(read_manifest(read_file(f)));
        CatalogEntry e = entry_from_manifest(mf, f);
        if (c.entries_.count(e.asset_id))
            throw std::invalid_argument("catalog: duplicate asset id '" + e.asset_id + "' in " + f.string());
        c.entries_.emplace(e.asset_id, std::move(e));
    }
    return c;
}

std::vector<CatalogEntry> Catalog::entries() const {
    std::shared_lock lock(mutex_);
    std::vector<CatalogEntry> out;
    out.reserve(entries_.size());
    for (const auto& [id, e] : entries_) out.push_back(e);
    return out;
}

std::optional<CatalogEntry> Catalog::find(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(id);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

AssetPtr Catalog::load(const std::string& id) const {
    std::filesystem::path file;
    {
        std::shared_lock lock(mutex_);
        if (auto it = cache_.find(id); it != cache_.end()) return it->second;
        auto it = entries_.find(id);
        if (it == entries_.end()) throw NotFoundError("unknown asset id '" + id + "'");
        file = it->second.file;
    }
    auto asset = std::make_shared<const WardrobeAsset>(load_asset(file));
    std::unique_lock lock(mutex_);
    auto [it, inserted] = cache_.emplace(id, asset);
    return it->second;
}

std::vector<std::uint8_t> Catalog::thumbnail_png(const std::string& id) const {
    const auto entry = find(id);
    if (!entry) throw NotFoundError("unknown asset id '" + id + "'");
    if (std::filesystem::exists(entry->thumbnail)) return read_file(entry->thumbnail);
    return render_thumbnail(*load(id));
}

CatalogEntry Catalog::add(const WardrobeAsset& asset) {
    std::unique_lock lock(mutex_);
    const std::filesystem::path file = dir_ / (asset.asset_id + ".gwa");
    save_asset(asset, file);
    CatalogEntry e;
    e.asset_id = asset.asset_id;
    e.layer_id = asset.layer_id;
    e.category = asset.category;
    e.joint_count = asset.joint_count;
    e.blendshape_count = asset.blendshape_count;
    e.primitive_count = asset.primitive_count();
    e.file = file;
    e.thumbnail = dir_ / (asset.asset_id + ".png");
    write_file_atomic(e.thumbnail, render_thumbnail(asset));
    entries_[e.asset_id] = e;
    cache_.erase(e.asset_id);
    write_index();
    return e;
}

void Catalog::write_index() const {
    nlohmann::json assets = nlohmann::json::array();
    for (const auto& [id, e] : entries_) {
        assets.push_back({{"id", id},
                          {"layer", std::string(layer_name(e.layer_id))},
                          {"category", e.category},
                          {"file", e.file.filename().string()},
                          {"thumbnail", e.thumbnail.filename().string()},
                          {"joint_count", e.joint_count},
                          {"blendshape_count", e.blendshape_count},
                          {"primitive_count", e.primitive_count}});
    }
    const nlohmann::json index = {{"format_version", kAssetFormatVersion}, {"assets", assets}};
    write_file_atomic(dir_ / "catalog.json", index.dump(2) + "\n");
}

// ---- composition ---------------------------------------------------------------

AvatarIdentity make_identity(ShapeParams shape, AssetPtr body_asset) {
    if (!body_asset) throw IncompatibleError("identity requires a body asset");
    if (body_asset->layer_id != LayerId::body)
        throw IncompatibleError("asset '" + body_asset->asset_id + "' is a " +
                                std::string(layer_name(body_asset->layer_id)) + " layer, not a body");
    if (shape.count() != body_asset->blendshape_count)
        throw IncompatibleError("shape has " + std::to_string(shape.count()) + " coefficients, body asset has B = " +
                                std::to_string(body_asset->blendshape_count));
    if (!body_asset->skinning_field || body_asset->skeleton.joint_count() != body_asset->joint_count)
        throw IncompatibleError("body asset '" + body_asset->asset_id + "' lacks an embedded field or skeleton");
    return {std::move(shape), std::move(body_asset)};
}

std::vector<AdjacencyPair> default_adjacency(const std::vector<LayerId>& occupied) {
    auto has = [&](LayerId l) { return std::find(occupied.begin(), occupied.end(), l) != occupied.end(); };
    std::vector<AdjacencyPair> out;
    for (const AdjacencyPair& p : {AdjacencyPair{LayerId::body, LayerId::lower}, {LayerId::body, LayerId::upper},
                                   {LayerId::upper, LayerId::outer}, {LayerId::lower, LayerId::outer}}) {
        if (has(p.first) && has(p.second)) out.push_back(p);
    }
    return out;
}

AssetPtr ComposedAvatar::asset(LayerId slot) const {
    auto it = slots.find(slot);
    return it == slots.end() ? nullptr : it->second;
}

bool ComposedAvatar::operator==(const ComposedAvatar& o) const {
    return identity.shape == o.identity.shape && identity.body_asset == o.identity.body_asset && slots == o.slots &&
           layer_order == o.layer_order && adjacency == o.adjacency && donor_body == o.donor_body &&
           body_swap_epsilon == o.body_swap_epsilon;
}

namespace {

void check_compatible(const AvatarIdentity& identity, const WardrobeAsset& g) {
    const WardrobeAsset& body = *identity.body_asset;
    if (g.joint_count != body.joint_count || g.blendshape_count != body.blendshape_count) {
        throw IncompatibleError("asset '" + g.asset_id + "' has J=" + std::to_string(g.joint_count) +
                                ", B=" + std::to_string(g.blendshape_count) + "; body '" + body.asset_id +
                                "' has J=" + std::to_string(body.joint_count) +
                                ", B=" + std::to_string(body.blendshape_count));
    }
}

std::vector<LayerId> order_of(const std::map<LayerId, AssetPtr>& slots) {
    std::vector<LayerId> order;
    for (LayerId l : {LayerId::body, LayerId::lower, LayerId::upper, LayerId::outer})
        if (slots.count(l)) order.push_back(l);
    return order;
}

}  // namespace

ComposedAvatar compose_avatar(const AvatarIdentity& identity, const std::vector<AssetPtr>& garments) {
    if (!identity.body_asset) throw IncompatibleError("composition requires a body");
    ComposedAvatar a;
    a.identity = identity;
    a.slots[LayerId::body] = identity.body_asset;
    for (const AssetPtr& g : garments) {
        if (!g) throw std::invalid_argument("compose_avatar: null garment");
        if (g->layer_id == LayerId::body)
            throw IncompatibleError("asset '" + g->asset_id + "' is a body layer; the body slot holds the identity");
        if (a.slots.count(g->layer_id))
            throw IncompatibleError("two assets for the " + std::string(layer_name(g->layer_id)) + " slot");
        check_compatible(identity, *g);
        a.slots[g->layer_id] = g;
    }
    a.layer_order = order_of(a.slots);
    a.adjacency = default_adjacency(a.layer_order);
    return a;
}

ComposedAvatar swap_garment(const ComposedAvatar& avatar, LayerId slot, AssetPtr new_asset) {
    if (!new_asset) throw std::invalid_argument("swap_garment: null asset");
    if (slot == LayerId::body) throw IncompatibleError("the body slot belongs to the identity and cannot be swapped");
    if (new_asset->layer_id != slot)
        throw IncompatibleError("asset '" + new_asset->asset_id + "' is a " +
                                std::string(layer_name(new_asset->layer_id)) + " layer and cannot fill the " +
                                std::string(layer_name(slot)) + " slot");
    check_compatible(avatar.identity, *new_asset);
    ComposedAvatar out = avatar;
    const bool default_pairs = avatar.adjacency == default_adjacency(avatar.layer_order);
    out.slots[slot] = std::move(new_asset);
    out.layer_order = order_of(out.slots);
    if (default_pairs) out.adjacency = default_adjacency(out.layer_order);
    return out;
}

// ---- body swap ---------------------------------------------------------------

std::vector<std::uint8_t> classify_inside(const GaussianLayer& body, const GaussianLayer& garment, double epsilon) {
    std::vector<std::uint8_t> inside(body.size(), 0);
    if (garment.size() == 0) return inside;
    std::vector<Vec3> gp(garment.size());
    for (std::size_t i = 0; i < gp.size(); ++i)
        gp[i] = garment.primitives[i].canonical_position + garment.primitives[i].offset;
    const auto normals = estimate_layer_normals(gp, garment.neighbors);
    std::vector<double> reach(gp.size(), 0.0);
    for (std::size_t i = 0; i < gp.size(); ++i)
        for (std::int32_t j : garment.neighbors[i].view()) reach[i] = std::max(reach[i], (gp[j] - gp[i]).norm());

    const PointGrid grid(gp);
    for (std::size_t i = 0; i < body.size(); ++i) {
        const Vec3 p = body.primitives[i].canonical_position + body.primitives[i].offset;
        const std::int64_t g = grid.nearest(p);
        if (normals[g].degenerate) continue;
        const Vec3 diff = p - gp[g];
        const double d = diff.dot(normals[g].normal);
        const double tangential = (diff - d * normals[g].normal).norm();
        inside[i] = d < epsilon && tangential <= reach[g];
    }
    return inside;
}

GaussianLayer swap_body_gaussian_params(const GaussianLayer& user_body, const GaussianLayer& donor_body,
                                        const GaussianLayer& garment, double epsilon) {
    if (user_body.size() != donor_body.size())
        throw IncompatibleError("body swap: user has " + std::to_string(user_body.size()) + " primitives, donor has " +
                                std::to_string(donor_body.size()));
    for (std::size_t i = 0; i < user_body.size(); ++i) {
        const NeighborRing& a = user_body.neighbors[i];
        const NeighborRing& b = donor_body.neighbors[i];
        if (a.count != b.count || a.index != b.index || user_body.source_side[i] != donor_body.source_side[i])
            throw IncompatibleError("body swap: user and donor grids differ at primitive " + std::to_string(i));
    }
    const auto inside = classify_inside(user_body, garment, epsilon);
    GaussianLayer out = user_body;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!inside[i]) continue;
        out.primitives[i].offset = donor_body.primitives[i].offset;
        out.primitives[i].rotation = donor_body.primitives[i].rotation;
    }
    return out;
}

// ---- instantiation and previews --------------------------------------------------

GaussianLayer instantiate_layer(const WardrobeAsset& asset, const PoseParams& pose, const SkinningField& field) {
    if (field.joint_count != asset.joint_count || field.blendshape_count != asset.blendshape_count)
        throw IncompatibleError("asset '" + asset.asset_id + "' does not match the skinning field's J/B");
    const std::vector<GaussianAttributes> attrs = predict_gaussian_maps(asset.deformation_model, pose);
    GaussianLayer layer = build_gaussian_layer(asset.layer_id, asset.coordinate_maps, attrs);
    attach_skinning(layer, field);
    return layer;
}

PosedGaussianSet canonical_gaussians(const WardrobeAsset& asset) {
    const auto attrs =
        predict_gaussian_maps(asset.deformation_model, PoseParams::canonical(asset.joint_count));
    const GaussianLayer layer = build_gaussian_layer(asset.layer_id, asset.coordinate_maps, attrs);
    PosedGaussianSet set;
    set.gaussians.reserve(layer.size());
    for (const GaussianPrimitive& g : layer.primitives) {
        set.gaussians.push_back({g.canonical_position + g.offset, covariance_from_rotation_scale(g.rotation, g.scale),
                                 g.opacity, g.color, asset.layer_id});
    }
    return set;
}

std::vector<std::uint8_t> render_thumbnail(const WardrobeAsset& asset, int size) {
    const PosedGaussianSet set = canonical_gaussians(asset);
    const MapWindow& w = asset.coordinate_maps.window;
    const Vec3 center{0.5 * (w.x_min + w.x_max), 0.5 * (w.y_min + w.y_max), 0.0};
    double z_front = 0.0;
    for (const PosedGaussian& g : set.gaussians) z_front = std::max(z_front, g.mean.z());
    const RigidTransform view =
        CameraModel::look_at(center + Vec3(0.0, 0.0, z_front + 1.0), center, Vec3::UnitY());
    const double span = std::max({w.x_max - w.x_min, w.y_max - w.y_min, 1e-6});
    const CameraModel cam = CameraModel::orthographic(size, size, 0.9 * size / span, view);
    const RenderOutput out = rasterize(set, cam);
    return encode_png_rgb(size, size, out.rgb);
}

}  // namespace layerav

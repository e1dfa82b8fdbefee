#pragma once

// Subject-agnostic layer assets, their `.gwa` container, the on-disk catalog
// and the garment/body swapping operations.
//
// A `.gwa` file is
//   8 bytes   magic "LAYERGWA"
//   8 bytes   little-endian manifest length
//   manifest  JSON text: metadata and one entry per tensor section
//             (name, dtype, shape, offset, size, crc32)
//   padding   to the next 64-byte boundary
//   sections  raw little-endian tensors, each starting 64-byte aligned;
//             offsets are relative to the start of the first section.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include "layerav/core.hpp"
#include "layerav/posemap.hpp"
#include "layerav/render.hpp"
#include "layerav/skinning.hpp"

namespace layerav {

inline constexpr int kAssetFormatVersion = 1;

struct Skeleton {
    std::vector<Vec3> rest_joints;
    std::vector<int> parents;

    int joint_count() const { return static_cast<int>(rest_joints.size()); }
    /// Skeleton-only body (no seed vertices), enough for forward kinematics.
    BodyDefinition as_body() const;
    bool operator==(const Skeleton&) const = default;
};

struct WardrobeAsset {
    std::string asset_id;
    LayerId layer_id = LayerId::body;
    std::string category;
    TemplateMesh template_mesh;
    CoordinateMaps coordinate_maps;
    ExemplarDeformationModel deformation_model;
    // Embedded field, or null when the asset is skinned by its wearer's body
    // field; `skinning_field_ref` then names the field's origin.
    std::shared_ptr<const SkinningField> skinning_field;
    std::string skinning_field_ref;
    Skeleton skeleton;  // required on body assets, empty on garments
    int joint_count = 0;
    int blendshape_count = 0;
    int format_version = kAssetFormatVersion;

    std::size_t primitive_count() const { return coordinate_maps.valid_count(); }
};

using AssetPtr = std::shared_ptr<const WardrobeAsset>;

/// Empty iff the asset's own invariants and all cross-component shape checks hold.
std::vector<Violation> validate_asset(const WardrobeAsset& asset);

// ---- container -------------------------------------------------------------

enum class AssetErrorKind { format, version, truncated, checksum };

struct AssetError : std::runtime_error {
    AssetError(AssetErrorKind kind, std::string section, const std::string& message)
        : std::runtime_error(message), kind(kind), section(std::move(section)) {}
    AssetErrorKind kind;
    std::string section;  // offending section, empty when not section-specific
};

struct StorageReceipt {
    std::filesystem::path path;
    std::uint64_t bytes = 0;
    std::uint32_t crc32 = 0;  // of the whole file
};

std::vector<std::uint8_t> serialize_asset(const WardrobeAsset& asset);
/// Throws AssetError; the version is checked before any section is decoded.
WardrobeAsset deserialize_asset(std::span<const std::uint8_t> bytes);
/// The manifest as JSON text, without decoding sections.
std::string read_manifest(std::span<const std::uint8_t> bytes);

/// Validates, serializes and writes atomically. Throws std::invalid_argument
/// listing the violations when the asset is invalid.
StorageReceipt save_asset(const WardrobeAsset& asset, const std::filesystem::path& destination);
WardrobeAsset load_asset(const std::filesystem::path& source);

// ---- catalog ---------------------------------------------------------------

struct CatalogEntry {
    std::string asset_id;
    LayerId layer_id = LayerId::body;
    std::string category;
    int joint_count = 0;
    int blendshape_count = 0;
    std::uint64_t primitive_count = 0;
    std::filesystem::path file;
    std::filesystem::path thumbnail;
};

/// One `.gwa` per asset, `<id>.png` thumbnails and a `catalog.json` index in
/// a single directory. Reads may run concurrently; add() takes the writer lock.
class Catalog {
public:
    /// Scans `directory` for `.gwa` files (creating the directory if needed).
    /// Throws AssetError on unreadable manifests and std::invalid_argument on
    /// duplicate ids.
    static Catalog open(const std::filesystem::path& directory);

    std::vector<CatalogEntry> entries() const;  // sorted by id
    std::optional<CatalogEntry> find(const std::string& id) const;
    /// Loads (and caches) the asset. Throws NotFoundError for unknown ids.
    AssetPtr load(const std::string& id) const;
    /// Thumbnail PNG bytes, rendered on demand when the file is missing.
    std::vector<std::uint8_t> thumbnail_png(const std::string& id) const;

    /// Saves the asset, its thumbnail and the refreshed index.
    CatalogEntry add(const WardrobeAsset& asset);
    const std::filesystem::path& directory() const { return dir_; }

    Catalog(const Catalog& other);
    Catalog& operator=(const Catalog&) = delete;

private:
    Catalog() = default;
    void write_index() const;

    std::filesystem::path dir_;
    std::map<std::string, CatalogEntry> entries_;
    mutable std::map<std::string, AssetPtr> cache_;
    mutable std::shared_mutex mutex_;
};

// ---- composition -----------------------------------------------------------

struct AvatarIdentity {
    ShapeParams shape;
    AssetPtr body_asset;
};

/// Throws IncompatibleError unless the body asset is a body layer whose B
/// equals the shape length and which embeds a skinning field and skeleton.
AvatarIdentity make_identity(ShapeParams shape, AssetPtr body_asset);

using AdjacencyPair = std::pair<LayerId, LayerId>;  // (inner, outer)

/// (body, lower), (body, upper), (upper, outer), (lower, outer), restricted to
/// occupied layers.
std::vector<AdjacencyPair> default_adjacency(const std::vector<LayerId>& occupied);

struct ComposedAvatar {
    AvatarIdentity identity;
    std::map<LayerId, AssetPtr> slots;  // always holds the body
    std::vector<LayerId> layer_order;   // inner to outer, body first
    std::vector<AdjacencyPair> adjacency;
    // Optional body swap: covered body Gaussians take offset/rotation from the donor.
    AssetPtr donor_body;
    double body_swap_epsilon = 0.005;

    AssetPtr asset(LayerId slot) const;
    bool operator==(const ComposedAvatar& o) const;
};

/// Checks slot/layer agreement and J/B compatibility (IncompatibleError).
ComposedAvatar compose_avatar(const AvatarIdentity& identity, const std::vector<AssetPtr>& garments);

/// New avatar with `slot` holding `new_asset`; inputs are not modified.
ComposedAvatar swap_garment(const ComposedAvatar& avatar, LayerId slot, AssetPtr new_asset);

/// Body Gaussians inside the garment take offset and rotation from the donor;
/// color, opacity and scale always stay the user's. Inside means the signed
/// distance along the nearest garment Gaussian's normal is below epsilon while
/// the tangential distance stays within that Gaussian's grid-neighbor reach.
/// Throws IncompatibleError when user and donor topologies differ.
GaussianLayer swap_body_gaussian_params(const GaussianLayer& user_body, const GaussianLayer& donor_body,
                                        const GaussianLayer& garment, double epsilon);

/// Per-primitive inside flags used by swap_body_gaussian_params.
std::vector<std::uint8_t> classify_inside(const GaussianLayer& body, const GaussianLayer& garment, double epsilon);

/// Layer of the asset at `pose` before any skinning: predicted attributes on
/// the canonical grid, skinning data attached from `field`.
GaussianLayer instantiate_layer(const WardrobeAsset& asset, const PoseParams& pose, const SkinningField& field);

/// Canonical-pose Gaussians of the asset without skinning, for previews.
PosedGaussianSet canonical_gaussians(const WardrobeAsset& asset);
std::vector<std::uint8_t> render_thumbnail(const WardrobeAsset& asset, int size = 96);

}  // namespace layerav

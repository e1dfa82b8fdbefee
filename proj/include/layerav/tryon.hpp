#pragma once

// Try-on composition and penetration-aware rendering.
//
// Correction runs per adjacency pair, inner to outer:
//   1. find inner-labeled 4-connected components whose whole 8-neighbor ring
//      is outer-labeled and which do not touch the image border
//   2. keep the pixels where both layers have a valid depth and
//      D_out - eps < D_in
//   3. repaint those pixels with the outer layer's own color (or the nearest
//      outer-labeled pixel's color when the outer layer is too faint there)
//      and relabel them as the outer layer

#include <span>
#include <string>
#include <vector>

#include "layerav/image_io.hpp"
#include "layerav/losses.hpp"
#include "layerav/render.hpp"
#include "layerav/wardrobe.hpp"

namespace layerav {

struct ComposeResult {
    std::map<LayerId, GaussianLayer> layers;  // predicted at the pose, before shape and LBS
    BoneTransformSet transforms;
    PosedGaussianSet gaussians;
    RenderOutput render;
};

/// Predicts every slot at `pose`, applies the optional body swap, deforms
/// with the identity's shape, and rasterizes. Throws IncompatibleError for a
/// pose whose joint count differs from the body's.
ComposeResult compose(const ComposedAvatar& avatar, const PoseParams& pose, const CameraModel& camera,
                      const RenderOptions& options = {});

/// Same as compose without rasterizing (render stays empty).
ComposeResult pose_avatar(const ComposedAvatar& avatar, const PoseParams& pose);

LabelMap label_map(const RenderOutput& render);

/// Indexed-PNG palette for label maps: black background, then the layer
/// colors of default_palette in label order.
std::vector<Rgb8> label_palette();

struct PenetrationRegion {
    std::vector<std::uint32_t> pixels;  // ascending pixel indices
    LayerId inner_layer = LayerId::body;
    LayerId outer_layer = LayerId::lower;
    bool confirmed = false;
};

std::vector<PenetrationRegion> find_enclosed_regions(const LabelMap& labels, std::span<const AdjacencyPair> adjacency);

inline bool depth_rule(double d_out, double d_in, double epsilon) { return d_out - epsilon < d_in; }

/// Pixels of the region where both depths are finite and depth_rule holds.
std::vector<std::uint32_t> confirm_penetration(const PenetrationRegion& region, std::span<const float> d_in,
                                               std::span<const float> d_out, double epsilon);

struct CorrectedImage {
    std::vector<float> rgb;
    LabelMap labels;
    std::size_t corrected = 0;
};

/// Repaints every pixel listed in `confirmed` (regions holding confirmed
/// pixels only). Colors come from `layers`' isolated outer-layer buffers when
/// that layer's coverage is at least 0.5, otherwise from the nearest pixel of
/// the input that carries the outer label (Euclidean, lowest index on ties).
CorrectedImage correct_pixels(std::span<const float> rgb, const LabelMap& labels,
                              std::span<const PenetrationRegion> confirmed, const RenderOutput& layers);

struct PairDiagnostics {
    LayerId inner = LayerId::body;
    LayerId outer = LayerId::lower;
    std::size_t regions = 0;
    std::size_t confirmed_regions = 0;
    std::size_t confirmed_pixels = 0;
    std::size_t corrected_pixels = 0;
};

struct Diagnostics {
    std::vector<PairDiagnostics> pairs;

    std::size_t regions() const;
    std::size_t confirmed_pixels() const;
    std::size_t corrected_pixels() const;
    std::string to_text() const;
    /// "pairs=<n>;confirmed=<n>;corrected=<n>"
    std::string header_value() const;
};

struct CorrectionResult {
    CorrectedImage image;
    Diagnostics diagnostics;
    std::vector<PenetrationRegion> confirmed;  // confirmed pixel subsets, all pairs
};

/// Detection, confirmation and (when `apply` is set) correction over the
/// adjacency pairs in order. Each pair sees the labels left by earlier pairs.
CorrectionResult correct_penetrations(const RenderOutput& render, std::span<const float> rgb, const LabelMap& labels,
                                      std::span<const AdjacencyPair> adjacency, double epsilon, bool apply = true);

struct TryonResult {
    ComposeResult composed;
    CorrectedImage image;  // equals the plain render when correction is off
    Diagnostics diagnostics;
    std::vector<PenetrationRegion> confirmed;
};

TryonResult penetration_aware_render(const ComposedAvatar& avatar, const PoseParams& pose, const CameraModel& camera,
                                     double epsilon, const RenderOptions& options = {}, bool correction = true);

}  // namespace layerav

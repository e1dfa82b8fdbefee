#include "layerav/tryon.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace layerav {

ComposeResult pose_avatar(const ComposedAvatar& avatar, const PoseParams& pose) {
    const AssetPtr& body_asset = avatar.identity.body_asset;
    if (!body_asset || !body_asset->skinning_field) throw IncompatibleError("composition requires a posable body");
    if (pose.joint_count() != body_asset->joint_count) {
        throw IncompatibleError("pose has " + std::to_string(pose.joint_count()) + " joints, body '" +
                                body_asset->asset_id + "' has " + std::to_string(body_asset->joint_count));
    }
    const SkinningField& body_field = *body_asset->skinning_field;

    ComposeResult r;
    r.transforms = forward_kinematics(pose, body_asset->skeleton.as_body());
    for (LayerId l : avatar.layer_order) {
        const AssetPtr asset = avatar.asset(l);
        if (!asset) throw IncompatibleError("layer order names an empty slot");
        const SkinningField& field = asset->skinning_field ? *asset->skinning_field : body_field;
        r.layers.emplace(l, instantiate_layer(*asset, pose, field));
    }

    if (avatar.donor_body) {
        const WardrobeAsset& donor = *avatar.donor_body;
        const SkinningField& field = donor.skinning_field ? *donor.skinning_field : body_field;
        const GaussianLayer donor_layer = instantiate_layer(donor, pose, field);
        GaussianLayer& body = r.layers.at(LayerId::body);
        for (LayerId l : avatar.layer_order) {
            if (l == LayerId::body) continue;
            body = swap_body_gaussian_params(body, donor_layer, r.layers.at(l), avatar.body_swap_epsilon);
        }
    }

    for (LayerId l : avatar.layer_order) {
        const GaussianLayer& layer = r.layers.at(l);
        const std::vector<PosedPrimitive> posed = deform_layer(layer, avatar.identity.shape, r.transforms);
        for (std::size_t i = 0; i < posed.size(); ++i) {
            const GaussianPrimitive& g = layer.primitives[i];
            r.gaussians.gaussians.push_back({posed[i].position, posed[i].covariance, g.opacity, g.color, l});
        }
    }
    return r;
}

ComposeResult compose(const ComposedAvatar& avatar, const PoseParams& pose, const CameraModel& camera,
                      const RenderOptions& options) {
    ComposeResult r = pose_avatar(avatar, pose);
    r.render = rasterize(r.gaussians, camera, options);
    return r;
}

LabelMap label_map(const RenderOutput& render) { return {render.width, render.height, render.labels}; }

std::vector<Rgb8> label_palette() {
    std::vector<Rgb8> out{{0, 0, 0}};
    const LayerPalette colors = default_palette();
    for (LayerId l : kAllLayers) {
        const Vec3& c = colors.at(l);
        out.push_back({quantize_unit(static_cast<float>(c.x())), quantize_unit(static_cast<float>(c.y())),
                       quantize_unit(static_cast<float>(c.z()))});
    }
    return out;
}

// ---- detection ---------------------------------------------------------------

std::vector<PenetrationRegion> find_enclosed_regions(const LabelMap& labels, std::span<const AdjacencyPair> adjacency) {
    std::vector<PenetrationRegion> out;
    const int w = labels.width, h = labels.height;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    std::vector<std::int32_t> component(n);
    std::vector<std::uint32_t> queue;

    for (const AdjacencyPair& pair : adjacency) {
        const Label inner = label_of(pair.first);
        const Label outer = label_of(pair.second);
        std::fill(component.begin(), component.end(), -1);
        std::int32_t next_id = 0;
        for (std::size_t seed = 0; seed < n; ++seed) {
            if (labels.labels[seed] != inner || component[seed] >= 0) continue;
            const std::int32_t id = next_id++;
            queue.assign(1, static_cast<std::uint32_t>(seed));
            component[seed] = id;
            bool touches_border = false;
            for (std::size_t q = 0; q < queue.size(); ++q) {
                const int x = static_cast<int>(queue[q] % w), y = static_cast<int>(queue[q] / w);
                if (x == 0 || y == 0 || x == w - 1 || y == h - 1) touches_border = true;
                static constexpr int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
                for (int k = 0; k < 4; ++k) {
                    const int nx = x + dx[k], ny = y + dy[k];
                    if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                    const std::size_t ni = static_cast<std::size_t>(ny) * w + nx;
                    if (labels.labels[ni] == inner && component[ni] < 0) {
                        component[ni] = id;
                        queue.push_back(static_cast<std::uint32_t>(ni));
                    }
                }
            }
            if (touches_border) continue;
            // The component never touches the border, so every 8-neighbor lies inside the image.
            bool enclosed = true;
            for (std::size_t q = 0; q < queue.size() && enclosed; ++q) {
                const int x = static_cast<int>(queue[q] % w), y = static_cast<int>(queue[q] / w);
                for (int oy = -1; oy <= 1 && enclosed; ++oy) {
                    for (int ox = -1; ox <= 1; ++ox) {
                        const std::size_t ni = static_cast<std::size_t>(y + oy) * w + (x + ox);
                        if (component[ni] == id) continue;
                        if (labels.labels[ni] != outer) {
                            enclosed = false;
                            break;
                        }
                    }
                }
            }
            if (!enclosed) continue;
            PenetrationRegion region;
            region.pixels = queue;
            std::sort(region.pixels.begin(), region.pixels.end());
            region.inner_layer = pair.first;
            region.outer_layer = pair.second;
            out.push_back(std::move(region));
        }
    }
    return out;
}

std::vector<std::uint32_t> confirm_penetration(const PenetrationRegion& region, std::span<const float> d_in,
                                               std::span<const float> d_out, double epsilon) {
    std::vector<std::uint32_t> out;
    if (d_in.empty() || d_out.empty()) return out;
    for (std::uint32_t p : region.pixels) {
        const double a = d_in[p], b = d_out[p];
        if (std::isfinite(a) && std::isfinite(b) && depth_rule(b, a, epsilon)) out.push_back(p);
    }
    return out;
}

// ---- correction ----------------------------------------------------------------

namespace {

// Nearest pixel carrying `label` by Euclidean distance, lowest index on ties.
// Searches square rings of growing radius; -1 when no such pixel exists.
std::int64_t nearest_labeled(const LabelMap& labels, int x0, int y0, Label label) {
    const int w = labels.width, h = labels.height;
    std::int64_t best = -1;
    std::int64_t best_d2 = std::numeric_limits<std::int64_t>::max();
    const int max_r = std::max(w, h);
    for (int r = 1; r <= max_r; ++r) {
        if (best >= 0 && static_cast<std::int64_t>(r) * r > best_d2) break;
        for (int y = y0 - r; y <= y0 + r; ++y) {
            if (y < 0 || y >= h) continue;
            const bool edge_row = y == y0 - r || y == y0 + r;
            const int step = edge_row ? 1 : 2 * r;
            for (int x = x0 - r; x <= x0 + r; x += step) {
                if (x < 0 || x >= w) continue;
                const std::size_t i = static_cast<std::size_t>(y) * w + x;
                if (labels.labels[i] != label) continue;
                const std::int64_t d2 = static_cast<std::int64_t>(x - x0) * (x - x0) +
                                        static_cast<std::int64_t>(y - y0) * (y - y0);
                if (d2 < best_d2 || (d2 == best_d2 && static_cast<std::int64_t>(i) < best)) {
                    best_d2 = d2;
                    best = static_cast<std::int64_t>(i);
                }
            }
        }
    }
    return best;
}

}  // namespace

CorrectedImage correct_pixels(std::span<const float> rgb, const LabelMap& labels,
                              std::span<const PenetrationRegion> confirmed, const RenderOutput& layers) {
    CorrectedImage out;
    out.rgb.assign(rgb.begin(), rgb.end());
    out.labels = labels;
    for (const PenetrationRegion& region : confirmed) {
        const LayerId outer = region.outer_layer;
        const Label outer_label = label_of(outer);
        for (std::uint32_t p : region.pixels) {
            Eigen::Vector3f color;
            if (layers.coverage_of(outer, p) >= 0.5f) {
                color = layers.layer_color(outer, p);
            } else {
                const std::int64_t src = nearest_labeled(labels, static_cast<int>(p % labels.width),
                                                         static_cast<int>(p / labels.width), outer_label);
                if (src < 0) continue;
                color = {rgb[3 * src], rgb[3 * src + 1], rgb[3 * src + 2]};
            }
            for (int c = 0; c < 3; ++c) out.rgb[3 * p + c] = color[c];
            out.labels.labels[p] = outer_label;
            ++out.corrected;
        }
    }
    return out;
}

std::size_t Diagnostics::regions() const {
    std::size_t n = 0;
    for (const auto& p : pairs) n += p.regions;
    return n;
}

std::size_t Diagnostics::confirmed_pixels() const {
    std::size_t n = 0;
    for (const auto& p : pairs) n += p.confirmed_pixels;
    return n;
}

std::size_t Diagnostics::corrected_pixels() const {
    std::size_t n = 0;
    for (const auto& p : pairs) n += p.corrected_pixels;
    return n;
}

std::string Diagnostics::to_text() const {
    std::ostringstream s;
    for (const PairDiagnostics& p : pairs) {
        s << "pair=" << layer_name(p.inner) << "/" << layer_name(p.outer) << " regions=" << p.regions
          << " confirmed_regions=" << p.confirmed_regions << " confirmed_pixels=" << p.confirmed_pixels
          << " corrected_pixels=" << p.corrected_pixels << "\n";
    }
    s << "total pairs=" << pairs.size() << " regions=" << regions() << " confirmed=" << confirmed_pixels()
      << " corrected=" << corrected_pixels() << "\n";
    return s.str();
}

std::string Diagnostics::header_value() const {
    return "pairs=" + std::to_string(pairs.size()) + ";confirmed=" + std::to_string(confirmed_pixels()) +
           ";corrected=" + std::to_string(corrected_pixels());
}

CorrectionResult correct_penetrations(const RenderOutput& render, std::span<const float> rgb, const LabelMap& labels,
                                      std::span<const AdjacencyPair> adjacency, double epsilon, bool apply) {
    CorrectionResult r;
    r.image.rgb.assign(rgb.begin(), rgb.end());
    r.image.labels = labels;
    for (const AdjacencyPair& pair : adjacency) {
        PairDiagnostics d;
        d.inner = pair.first;
        d.outer = pair.second;
        const AdjacencyPair single[1] = {pair};
        std::vector<PenetrationRegion> regions = find_enclosed_regions(r.image.labels, single);
        d.regions = regions.size();
        std::vector<PenetrationRegion> confirmed;
        const auto& d_in = render.layer_depth[layer_index(pair.first)];
        const auto& d_out = render.layer_depth[layer_index(pair.second)];
        for (PenetrationRegion& region : regions) {
            PenetrationRegion c = region;
            c.pixels = confirm_penetration(region, d_in, d_out, epsilon);
            if (c.pixels.empty()) continue;
            c.confirmed = true;
            ++d.confirmed_regions;
            d.confirmed_pixels += c.pixels.size();
            confirmed.push_back(std::move(c));
        }
        if (apply && !confirmed.empty()) {
            CorrectedImage next = correct_pixels(r.image.rgb, r.image.labels, confirmed, render);
            d.corrected_pixels = next.corrected;
            r.image.rgb = std::move(next.rgb);
            r.image.labels = std::move(next.labels);
            r.image.corrected += next.corrected;
        }
        r.confirmed.insert(r.confirmed.end(), confirmed.begin(), confirmed.end());
        r.diagnostics.pairs.push_back(d);
    }
    return r;
}

TryonResult penetration_aware_render(const ComposedAvatar& avatar, const PoseParams& pose, const CameraModel& camera,
                                     double epsilon, const RenderOptions& options, bool correction) {
    TryonResult t;
    t.composed = compose(avatar, pose, camera, options);
    const RenderOutput& render = t.composed.render;
    CorrectionResult c =
        correct_penetrations(render, render.rgb, label_map(render), avatar.adjacency, epsilon, correction);
    t.image = std::move(c.image);
    t.diagnostics = std::move(c.diagnostics);
    t.confirmed = std::move(c.confirmed);
    return t;
}

}  // namespace layerav

#include "layerav/render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "layerav/parallel.hpp"

namespace layerav {

PosedGaussianSet PosedGaussianSet::filtered(LayerId layer) const {
    PosedGaussianSet out;
    for (const PosedGaussian& g : gaussians) {
        if (g.layer == layer) out.gaussians.push_back(g);
    }
    return out;
}

ProjectedGaussian project_gaussian(const Vec3& mean, const Mat3& covariance, const CameraModel& camera) {
    ProjectedGaussian out;
    const Mat3& w = camera.world_to_camera.rotation;
    const Vec3 p = camera.world_to_camera.apply(mean);
    out.depth = p.z();
    if (!(p.z() > camera.near_plane) || !p.allFinite() || !covariance.allFinite()) return out;

    Eigen::Matrix<double, 2, 3> jac = Eigen::Matrix<double, 2, 3>::Zero();
    if (camera.kind == CameraKind::perspective) {
        const double z = p.z();
        out.mean2d = {camera.focal_x * p.x() / z + camera.center_x, camera.focal_y * p.y() / z + camera.center_y};
        jac(0, 0) = camera.focal_x / z;
        jac(0, 2) = -camera.focal_x * p.x() / (z * z);
        jac(1, 1) = camera.focal_y / z;
        jac(1, 2) = -camera.focal_y * p.y() / (z * z);
    } else {
        out.mean2d = {camera.focal_x * p.x() + camera.center_x, camera.focal_y * p.y() + camera.center_y};
        jac(0, 0) = camera.focal_x;
        jac(1, 1) = camera.focal_y;
    }
    const Mat3 cam_cov = w * covariance * w.transpose();
    Eigen::Matrix2d cov2d = jac * cam_cov * jac.transpose();
    cov2d(0, 1) = cov2d(1, 0) = 0.5 * (cov2d(0, 1) + cov2d(1, 0));
    cov2d(0, 0) += kLowPassDilation;
    cov2d(1, 1) += kLowPassDilation;
    out.cov2d = cov2d;

    const double det = cov2d.determinant();
    if (!(det > 0.0)) return out;
    const double mid = 0.5 * (cov2d(0, 0) + cov2d(1, 1));
    const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
    const double r = 3.0 * std::sqrt(lambda_max);
    if (out.mean2d.x() + r < 0.0 || out.mean2d.x() - r > camera.width || out.mean2d.y() + r < 0.0 ||
        out.mean2d.y() - r > camera.height)
        return out;
    out.culled = false;
    return out;
}

namespace {

// Screen-space splat in the precision used for compositing.
struct Splat {
    float mean_x, mean_y;
    float conic_a, conic_b, conic_c;  // inverse 2D covariance
    float opacity;
    float min_power;  // below this exponent the contribution is certainly < 1/255
    float color[3];
    float depth;
    int layer;
    float radius;  // pixels; outside it the contribution is < 1/255
};

struct Prepared {
    std::vector<Splat> splats;  // front-to-back
    unsigned layer_mask = 0;
};

Prepared prepare(const PosedGaussianSet& set, const CameraModel& camera, const std::vector<Vec3>* color_override) {
    if (auto why = camera.invalid_reason()) throw std::invalid_argument("rasterize: invalid camera: " + *why);
    const std::size_t n = set.size();
    std::vector<Splat> all(n);
    std::vector<std::uint8_t> keep(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const PosedGaussian& g = set.gaussians[i];
        if (!(g.opacity > 0.0)) continue;
        const ProjectedGaussian pg = project_gaussian(g.mean, g.covariance, camera);
        if (pg.culled) continue;
        const double det = pg.cov2d.determinant();
        const double opacity = std::min(1.0, g.opacity);
        // Mahalanobis radius beyond which opacity * exp(-d^2/2) < 1/255.
        const double cutoff2 = 2.0 * std::log(255.0 * opacity);
        if (!(cutoff2 > 0.0)) continue;
        const double mid = 0.5 * (pg.cov2d(0, 0) + pg.cov2d(1, 1));
        const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));

        Splat& s = all[i];
        s.mean_x = static_cast<float>(pg.mean2d.x());
        s.mean_y = static_cast<float>(pg.mean2d.y());
        s.conic_a = static_cast<float>(pg.cov2d(1, 1) / det);
        s.conic_b = static_cast<float>(-pg.cov2d(0, 1) / det);
        s.conic_c = static_cast<float>(pg.cov2d(0, 0) / det);
        s.opacity = static_cast<float>(opacity);
        s.min_power = static_cast<float>(-0.5 * cutoff2 - 0.05);
        const Vec3& c = color_override ? (*color_override)[i] : g.color;
        for (int k = 0; k < 3; ++k) s.color[k] = static_cast<float>(c[k]);
        s.depth = static_cast<float>(pg.depth);
        s.layer = layer_index(g.layer);
        s.radius = static_cast<float>(std::sqrt(lambda_max * cutoff2) + 1.0);
        keep[i] = 1;
    }

    std::vector<std::uint32_t> order;
    order.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (keep[i]) order.push_back(static_cast<std::uint32_t>(i));
    }
    // Total order: depth, then input index.
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (all[a].depth != all[b].depth) return all[a].depth < all[b].depth;
        return a < b;
    });

    Prepared out;
    out.splats.reserve(order.size());
    for (std::uint32_t i : order) out.splats.push_back(all[i]);
    for (const PosedGaussian& g : set.gaussians) out.layer_mask |= 1u << layer_index(g.layer);
    return out;
}

struct PixelState {
    double transmittance = 1.0;
    double rgb[3] = {0.0, 0.0, 0.0};
    double total_alpha = 0.0;
    double layer_alpha[kLayerCount] = {};
    double layer_t[kLayerCount] = {1.0, 1.0, 1.0, 1.0};
    double layer_cov[kLayerCount] = {};
    double layer_depth[kLayerCount] = {};
    double layer_rgb[kLayerCount][3] = {};
};

// One front-to-back compositing step. Shared by the tiled and the reference
// paths so both evaluate identical arithmetic.
inline void composite(PixelState& st, const Splat& s, float px, float py) {
    const float dx = s.mean_x - px;
    const float dy = s.mean_y - py;
    const float power = -0.5f * (s.conic_a * dx * dx + s.conic_c * dy * dy) - s.conic_b * dx * dy;
    if (power > 0.0f || power < s.min_power) return;
    const float a = std::min(1.0f, s.opacity * std::exp(power));
    if (a < kMinContribution) return;

    const double alpha = a;
    const double w = alpha * st.transmittance;
    st.rgb[0] += w * s.color[0];
    st.rgb[1] += w * s.color[1];
    st.rgb[2] += w * s.color[2];
    st.total_alpha += w;
    st.layer_alpha[s.layer] += w;
    st.transmittance *= 1.0 - alpha;

    const double wl = alpha * st.layer_t[s.layer];
    st.layer_cov[s.layer] += wl;
    st.layer_depth[s.layer] += wl * s.depth;
    st.layer_rgb[s.layer][0] += wl * s.color[0];
    st.layer_rgb[s.layer][1] += wl * s.color[1];
    st.layer_rgb[s.layer][2] += wl * s.color[2];
    st.layer_t[s.layer] *= 1.0 - alpha;
}

RenderOutput allocate(const CameraModel& camera, unsigned layer_mask) {
    RenderOutput out;
    out.width = camera.width;
    out.height = camera.height;
    const std::size_t n = out.pixel_count();
    out.rgb.assign(3 * n, 0.0f);
    out.total_alpha.assign(n, 0.0f);
    out.labels.assign(n, kBackgroundLabel);
    for (int l = 0; l < kLayerCount; ++l) {
        if (!(layer_mask & (1u << l))) continue;
        out.layer_alpha[l].assign(n, 0.0f);
        out.layer_coverage[l].assign(n, 0.0f);
        out.layer_depth[l].assign(n, std::numeric_limits<float>::infinity());
        out.layer_rgb[l].assign(3 * n, 0.0f);
    }
    return out;
}

void store(RenderOutput& out, std::size_t px, const PixelState& st, const RenderOptions& options) {
    for (int k = 0; k < 3; ++k) out.rgb[3 * px + k] = static_cast<float>(st.rgb[k]);
    out.total_alpha[px] = static_cast<float>(st.total_alpha);
    int best = -1;
    double best_alpha = 0.0;
    for (int l = 0; l < kLayerCount; ++l) {
        if (out.layer_alpha[l].empty()) continue;
        out.layer_alpha[l][px] = static_cast<float>(st.layer_alpha[l]);
        out.layer_coverage[l][px] = static_cast<float>(st.layer_cov[l]);
        if (st.layer_cov[l] > 0.0) {
            for (int k = 0; k < 3; ++k)
                out.layer_rgb[l][3 * px + k] = static_cast<float>(st.layer_rgb[l][k] / st.layer_cov[l]);
        }
        if (st.layer_cov[l] >= options.depth_alpha_threshold)
            out.layer_depth[l][px] = static_cast<float>(st.layer_depth[l] / st.layer_cov[l]);
        if (st.layer_alpha[l] > best_alpha) {
            best_alpha = st.layer_alpha[l];
            best = l;
        }
    }
    out.labels[px] = (st.total_alpha < options.label_alpha_threshold || best < 0)
                         ? kBackgroundLabel
                         : label_of(static_cast<LayerId>(best));
}

RenderOutput rasterize_impl(const PosedGaussianSet& set, const CameraModel& camera, const RenderOptions& options,
                            const std::vector<Vec3>* color_override) {
    const Prepared prep = prepare(set, camera, color_override);
    RenderOutput out = allocate(camera, prep.layer_mask);

    const int ts = std::max(1, options.tile_size);
    const int tiles_x = (camera.width + ts - 1) / ts;
    const int tiles_y = (camera.height + ts - 1) / ts;
    const std::size_t tile_count = static_cast<std::size_t>(tiles_x) * tiles_y;

    // Bin splats into every tile their cutoff ellipse bounding box touches.
    // Filling in depth order keeps each tile list sorted front-to-back.
    struct TileRange {
        int x0, x1, y0, y1;
    };
    std::vector<TileRange> ranges(prep.splats.size());
    std::vector<std::uint32_t> counts(tile_count + 1, 0);
    for (std::size_t i = 0; i < prep.splats.size(); ++i) {
        const Splat& s = prep.splats[i];
        const int px0 = std::max(0, static_cast<int>(std::ceil(s.mean_x - s.radius - 0.5f)));
        const int px1 = std::min(camera.width - 1, static_cast<int>(std::floor(s.mean_x + s.radius - 0.5f)));
        const int py0 = std::max(0, static_cast<int>(std::ceil(s.mean_y - s.radius - 0.5f)));
        const int py1 = std::min(camera.height - 1, static_cast<int>(std::floor(s.mean_y + s.radius - 0.5f)));
        if (px0 > px1 || py0 > py1) {
            ranges[i] = {0, -1, 0, -1};
            continue;
        }
        ranges[i] = {px0 / ts, px1 / ts, py0 / ts, py1 / ts};
        for (int ty = ranges[i].y0; ty <= ranges[i].y1; ++ty)
            for (int tx = ranges[i].x0; tx <= ranges[i].x1; ++tx) ++counts[static_cast<std::size_t>(ty) * tiles_x + tx];
    }
    std::vector<std::uint32_t> offsets(tile_count + 1, 0);
    for (std::size_t t = 0; t < tile_count; ++t) offsets[t + 1] = offsets[t] + counts[t];
    std::vector<std::uint32_t> lists(offsets[tile_count]);
    std::vector<std::uint32_t> cursor(offsets.begin(), offsets.end() - 1);
    for (std::size_t i = 0; i < prep.splats.size(); ++i) {
        const TileRange& r = ranges[i];
        for (int ty = r.y0; ty <= r.y1; ++ty)
            for (int tx = r.x0; tx <= r.x1; ++tx)
                lists[cursor[static_cast<std::size_t>(ty) * tiles_x + tx]++] = static_cast<std::uint32_t>(i);
    }

    parallel_for(tile_count, options.workers, [&](std::size_t t) {
        const int tx = static_cast<int>(t % tiles_x), ty = static_cast<int>(t / tiles_x);
        const std::uint32_t begin = offsets[t], end = offsets[t + 1];
        const std::uint32_t n = end - begin;
        // Contiguous copy: every pixel of the tile walks this list.
        std::vector<Splat> local(n);
        for (std::uint32_t k = 0; k < n; ++k) local[k] = prep.splats[lists[begin + k]];
        // suffix[k]: layers occurring in entries k..n.
        std::vector<unsigned> suffix(n + 1, 0);
        for (std::uint32_t k = n; k > 0; --k) suffix[k - 1] = suffix[k] | (1u << local[k - 1].layer);

        for (int y = ty * ts; y < std::min(camera.height, (ty + 1) * ts); ++y) {
            for (int x = tx * ts; x < std::min(camera.width, (tx + 1) * ts); ++x) {
                PixelState st;
                const float px = x + 0.5f, py = y + 0.5f;
                for (std::uint32_t k = 0; k < n; ++k) {
                    composite(st, local[k], px, py);
                    if (st.transmittance < kTerminationTransmittance) {
                        // Stop once every layer still ahead in the list is saturated on its own.
                        const unsigned pending = suffix[k + 1];
                        bool done = true;
                        for (int l = 0; l < kLayerCount && done; ++l)
                            done = !(pending & (1u << l)) || st.layer_t[l] < kTerminationTransmittance;
                        if (done) break;
                    }
                }
                store(out, out.pixel(x, y), st, options);
            }
        }
    });
    return out;
}

RenderOutput reference_impl(const PosedGaussianSet& set, const CameraModel& camera, const RenderOptions& options,
                            const std::vector<Vec3>* color_override) {
    const Prepared prep = prepare(set, camera, color_override);
    RenderOutput out = allocate(camera, prep.layer_mask);
    for (int y = 0; y < camera.height; ++y) {
        for (int x = 0; x < camera.width; ++x) {
            PixelState st;
            for (const Splat& s : prep.splats) composite(st, s, x + 0.5f, y + 0.5f);
            store(out, out.pixel(x, y), st, options);
        }
    }
    return out;
}

std::vector<Vec3> palette_colors(const PosedGaussianSet& set, const LayerPalette& palette) {
    std::vector<Vec3> colors(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        auto it = palette.find(set.gaussians[i].layer);
        if (it == palette.end())
            throw std::invalid_argument("render_segmentation: no palette color for layer " +
                                        std::string(layer_name(set.gaussians[i].layer)));
        colors[i] = it->second;
    }
    return colors;
}

}  // namespace

float RenderOutput::alpha_of(LayerId l, std::size_t px) const {
    const auto& v = layer_alpha[layer_index(l)];
    return v.empty() ? 0.0f : v[px];
}

float RenderOutput::coverage_of(LayerId l, std::size_t px) const {
    const auto& v = layer_coverage[layer_index(l)];
    return v.empty() ? 0.0f : v[px];
}

float RenderOutput::depth_of(LayerId l, std::size_t px) const {
    const auto& v = layer_depth[layer_index(l)];
    return v.empty() ? std::numeric_limits<float>::infinity() : v[px];
}

Eigen::Vector3f RenderOutput::layer_color(LayerId l, std::size_t px) const {
    const auto& v = layer_rgb[layer_index(l)];
    if (v.empty()) return Eigen::Vector3f::Zero();
    return {v[3 * px], v[3 * px + 1], v[3 * px + 2]};
}

RenderOutput rasterize(const PosedGaussianSet& set, const CameraModel& camera, const RenderOptions& options) {
    return rasterize_impl(set, camera, options, nullptr);
}

RenderOutput reference_composite(const PosedGaussianSet& set, const CameraModel& camera,
                                 const RenderOptions& options) {
    return reference_impl(set, camera, options, nullptr);
}

LayerPalette default_palette() {
    return {{LayerId::body, Vec3(1.0, 0.0, 0.0)},
            {LayerId::upper, Vec3(0.0, 1.0, 0.0)},
            {LayerId::lower, Vec3(0.0, 0.0, 1.0)},
            {LayerId::outer, Vec3(1.0, 1.0, 0.0)}};
}

RenderOutput render_segmentation(const PosedGaussianSet& set, const CameraModel& camera, const LayerPalette& palette,
                                 const RenderOptions& options) {
    const std::vector<Vec3> colors = palette_colors(set, palette);
    return rasterize_impl(set, camera, options, &colors);
}

std::vector<float> render_single_layer_mask(const PosedGaussianSet& set, LayerId layer, const CameraModel& camera,
                                            const RenderOptions& options) {
    return rasterize(set.filtered(layer), camera, options).total_alpha;
}

}  // namespace layerav

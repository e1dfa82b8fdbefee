#include <doctest.h>

#include <numbers>
#include <set>

#include "helpers.hpp"
#include "layerav/tryon.hpp"

using namespace layerav;

namespace {

constexpr Label kBody = 1, kUpper = 2, kLower = 3, kOuter = 4;

LabelMap filled(int w, int h, Label l) { return {w, h, std::vector<Label>(static_cast<std::size_t>(w) * h, l)}; }

using RegionKey = std::tuple<LayerId, LayerId, std::vector<std::uint32_t>>;

std::set<RegionKey> keys(const std::vector<PenetrationRegion>& regions) {
    std::set<RegionKey> out;
    for (const auto& r : regions) out.insert({r.inner_layer, r.outer_layer, r.pixels});
    return out;
}

// Oracle: depth-first flood fill of each inner component, then a check of
// every pixel surrounding it.
std::set<RegionKey> flood_fill_oracle(const LabelMap& m, const std::vector<AdjacencyPair>& pairs) {
    std::set<RegionKey> out;
    const int w = m.width, h = m.height;
    for (const auto& [inner, outer] : pairs) {
        std::vector<int> comp(m.labels.size(), -1);
        int next = 0;
        for (int y0 = 0; y0 < h; ++y0)
            for (int x0 = 0; x0 < w; ++x0) {
                const std::size_t s = static_cast<std::size_t>(y0) * w + x0;
                if (m.labels[s] != label_of(inner) || comp[s] >= 0) continue;
                std::vector<std::pair<int, int>> stack{{x0, y0}}, members;
                comp[s] = next;
                while (!stack.empty()) {
                    auto [x, y] = stack.back();
                    stack.pop_back();
                    members.push_back({x, y});
                    const std::pair<int, int> nb[4] = {{x + 1, y}, {x - 1, y}, {x, y + 1}, {x, y - 1}};
                    for (auto [nx, ny] : nb) {
                        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                        const std::size_t i = static_cast<std::size_t>(ny) * w + nx;
                        if (m.labels[i] == label_of(inner) && comp[i] < 0) {
                            comp[i] = next;
                            stack.push_back({nx, ny});
                        }
                    }
                }
                bool ok = true;
                for (auto [x, y] : members)
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int nx = x + dx, ny = y + dy;
                            if (nx < 0 || ny < 0 || nx >= w || ny >= h) {
                                ok = false;
                                continue;
                            }
                            const std::size_t i = static_cast<std::size_t>(ny) * w + nx;
                            if (comp[i] != next && m.labels[i] != label_of(outer)) ok = false;
                        }
                if (ok) {
                    std::vector<std::uint32_t> px;
                    for (auto [x, y] : members) px.push_back(static_cast<std::uint32_t>(y * w + x));
                    std::sort(px.begin(), px.end());
                    out.insert({inner, outer, px});
                }
                ++next;
            }
    }
    return out;
}

// Layer buffers for correct_pixels with an outer lower layer of the given coverage.
RenderOutput lower_buffers(int w, int h, float coverage, const Eigen::Vector3f& color) {
    RenderOutput r;
    r.width = w;
    r.height = h;
    const std::size_t n = r.pixel_count();
    const std::size_t li = layer_index(LayerId::lower);
    r.layer_alpha[li].assign(n, coverage);
    r.layer_coverage[li].assign(n, coverage);
    r.layer_depth[li].assign(n, 1.0f);
    r.layer_rgb[li].resize(3 * n);
    for (std::size_t p = 0; p < n; ++p)
        for (int c = 0; c < 3; ++c) r.layer_rgb[li][3 * p + c] = color[c];
    return r;
}

PoseParams hip_pose(int joints, double degrees) {
    PoseParams p = PoseParams::canonical(joints);
    p.joint_rotations[2] = Vec3(degrees * std::numbers::pi / 180.0, 0.0, 0.0);
    return p;
}

}  // namespace

TEST_CASE("2x2 inner block inside an outer field is one region") {
    LabelMap m = filled(8, 8, kLower);
    for (int y = 3; y <= 4; ++y)
        for (int x = 3; x <= 4; ++x) m.labels[static_cast<std::size_t>(y) * 8 + x] = kBody;
    const std::vector<AdjacencyPair> pair{{LayerId::body, LayerId::lower}};
    const auto regions = find_enclosed_regions(m, pair);
    REQUIRE(regions.size() == 1);
    CHECK(regions[0].pixels == std::vector<std::uint32_t>{27, 28, 35, 36});
    CHECK(regions[0].inner_layer == LayerId::body);
    CHECK_FALSE(regions[0].confirmed);

    SUBCASE("a gap in the ring breaks enclosure") {
        m.labels[2 * 8 + 2] = kBackgroundLabel;  // diagonal neighbor
        CHECK(find_enclosed_regions(m, pair).empty());
    }
    SUBCASE("pairs not listed are ignored") {
        CHECK(find_enclosed_regions(m, std::vector<AdjacencyPair>{{LayerId::upper, LayerId::outer}}).empty());
    }
}

TEST_CASE("inner component touching the border is not reported") {
    LabelMap m = filled(8, 8, kLower);
    m.labels[8 * 3 + 0] = kBody;
    m.labels[8 * 3 + 1] = kBody;
    CHECK(find_enclosed_regions(m, std::vector<AdjacencyPair>{{LayerId::body, LayerId::lower}}).empty());
}

TEST_CASE("enclosure detection matches a flood-fill oracle on random maps") {
    std::mt19937_64 rng(9);
    const std::vector<AdjacencyPair> pairs{{LayerId::body, LayerId::lower}, {LayerId::upper, LayerId::outer}};
    std::size_t total = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int w = 6 + static_cast<int>(rng() % 10), h = 6 + static_cast<int>(rng() % 10);
        const Label field = trial % 2 ? kLower : kOuter;
        LabelMap m = filled(w, h, field);
        for (Label& l : m.labels) {
            const double u = test::uniform(rng, 0, 1);
            if (u < 0.2) l = trial % 2 ? kBody : kUpper;
            else if (u < 0.25) l = static_cast<Label>(rng() % 5);
        }
        const auto got = keys(find_enclosed_regions(m, pairs));
        CHECK(got == flood_fill_oracle(m, pairs));
        total += got.size();
        // Relabeling layers outside the pair leaves the result unchanged.
        LabelMap relabeled = m;
        for (Label& l : relabeled.labels)
            if (l == kBackgroundLabel) l = kOuter == field ? kLower : kOuter;
        if (field == kLower) CHECK(keys(find_enclosed_regions(relabeled, std::vector<AdjacencyPair>{pairs[0]})) ==
                                   keys(find_enclosed_regions(m, std::vector<AdjacencyPair>{pairs[0]})));
    }
    CHECK(total > 50);
}

TEST_CASE("depth confirmation rule") {
    CHECK(depth_rule(0.80, 0.802, 0.01));
    CHECK_FALSE(depth_rule(1.00, 0.50, 0.01));
    PenetrationRegion r;
    r.pixels = {0, 1, 2};
    const std::vector<float> d_in = {0.802f, 0.5f, std::numeric_limits<float>::infinity()};
    const std::vector<float> d_out = {0.8f, 1.0f, 0.8f};
    CHECK(confirm_penetration(r, d_in, d_out, 0.01) == std::vector<std::uint32_t>{0});
}

TEST_CASE("pixel correction") {
    const int w = 5, h = 5;
    std::vector<float> rgb(3 * w * h, 0.0f);
    LabelMap labels = filled(w, h, kLower);
    labels.labels[12] = kBody;
    for (int c = 0; c < 3; ++c) rgb[3 * 12 + c] = 0.9f;
    rgb[3 * 7] = 0.25f;  // the pixel directly above the poke

    PenetrationRegion region;
    region.pixels = {12};
    region.inner_layer = LayerId::body;
    region.outer_layer = LayerId::lower;
    region.confirmed = true;

    SUBCASE("nothing confirmed changes nothing") {
        const CorrectedImage out = correct_pixels(rgb, labels, {}, lower_buffers(w, h, 1.0f, {0, 0, 1}));
        CHECK(out.rgb == rgb);
        CHECK(out.labels.labels == labels.labels);
        CHECK(out.corrected == 0);
    }
    SUBCASE("opaque outer layer supplies its own color") {
        const std::vector<PenetrationRegion> regions{region};
        const CorrectedImage out = correct_pixels(rgb, labels, regions, lower_buffers(w, h, 1.0f, {0.1f, 0.2f, 0.3f}));
        CHECK(out.rgb[36] == 0.1f);
        CHECK(out.rgb[37] == 0.2f);
        CHECK(out.rgb[38] == 0.3f);
        CHECK(out.labels.labels[12] == kLower);
        CHECK(out.corrected == 1);
        for (std::size_t i = 0; i < rgb.size(); ++i)
            if (i / 3 != 12) CHECK(out.rgb[i] == rgb[i]);
    }
    SUBCASE("faint outer layer falls back to the nearest outer pixel, lowest index first") {
        const std::vector<PenetrationRegion> regions{region};
        const CorrectedImage out = correct_pixels(rgb, labels, regions, lower_buffers(w, h, 0.1f, {0.1f, 0.2f, 0.3f}));
        // Four pixels sit at distance 1; index 7 is the smallest.
        CHECK(out.rgb[36] == 0.25f);
        CHECK(out.rgb[37] == 0.0f);
    }
}

TEST_CASE("composition") {
    const SynthScene& scene = test::skirt_scene();
    const int joints = scene.spec.joint_count;

    SUBCASE("identity pose with zero shape keeps canonical splat positions") {
        const ComposeResult r = pose_avatar(scene.avatar(), PoseParams::canonical(joints));
        std::size_t k = 0;
        for (LayerId l : scene.avatar().layer_order)
            for (const GaussianPrimitive& g : r.layers.at(l).primitives) {
                CHECK((r.gaussians.gaussians[k].mean - (g.canonical_position + g.offset)).norm() < 1e-6);
                CHECK((r.gaussians.gaussians[k].covariance - covariance_from_rotation_scale(g.rotation, g.scale))
                          .norm() < 1e-6);
                ++k;
            }
        CHECK(k == r.gaussians.size());
    }
    SUBCASE("30 degree hip rotation matches blended bone transforms") {
        const ComposeResult r = pose_avatar(scene.avatar(), hip_pose(joints, 30.0));
        // Oracle transforms: the hip rotates about its rest joint, every other bone stays put.
        const Vec3 pivot = scene.body.rest_joints[2];
        const Mat3 rot = Eigen::AngleAxisd(std::numbers::pi / 6, Vec3::UnitX()).toRotationMatrix();
        const GaussianLayer& skirt = r.layers.at(LayerId::lower);
        const std::size_t base = r.layers.at(LayerId::body).size();
        double worst = 0.0, moved = 0.0;
        for (std::size_t i = 0; i < skirt.size(); ++i) {
            const Vec3 p = skirt.primitives[i].canonical_position + skirt.primitives[i].offset;
            const auto w = skirt.weights(i);
            Vec3 expected = Vec3::Zero();
            for (int j = 0; j < joints; ++j)
                expected += w[j] * (j == 2 ? Vec3(rot * (p - pivot) + pivot) : p);
            worst = std::max(worst, (r.gaussians.gaussians[base + i].mean - expected).norm());
            moved = std::max(moved, (expected - p).norm());
        }
        CHECK(worst < 1e-12);
        CHECK(moved > 0.01);
    }
    SUBCASE("shape is applied only at deformation time") {
        ComposedAvatar a = scene.avatar(), b = scene.avatar();
        b.identity.shape = ShapeParams{{0.8, -0.5}};
        const ComposeResult ra = pose_avatar(a, hip_pose(joints, 10.0));
        const ComposeResult rb = pose_avatar(b, hip_pose(joints, 10.0));
        const auto& la = ra.layers.at(LayerId::lower).primitives;
        const auto& lb = rb.layers.at(LayerId::lower).primitives;
        REQUIRE(la.size() == lb.size());
        bool identical = true;
        for (std::size_t i = 0; i < la.size(); ++i)
            identical = identical && la[i].canonical_position == lb[i].canonical_position &&
                        la[i].offset == lb[i].offset && la[i].rotation.coeffs() == lb[i].rotation.coeffs();
        CHECK(identical);
        double diff = 0.0;
        for (std::size_t i = 0; i < ra.gaussians.size(); ++i)
            diff = std::max(diff, (ra.gaussians.gaussians[i].mean - rb.gaussians.gaussians[i].mean).norm());
        CHECK(diff > 1e-4);
    }
    SUBCASE("pose with the wrong joint count is incompatible") {
        CHECK_THROWS_AS(pose_avatar(scene.avatar(), PoseParams::canonical(joints + 1)), IncompatibleError);
    }
}

TEST_CASE("clean scene renders without correction") {
    const SynthScene& scene = test::skirt_scene();
    for (const CameraModel& cam : scene.cameras) {
        const TryonResult r = penetration_aware_render(scene.avatar(), PoseParams::canonical(4), cam, 0.005);
        CHECK(r.diagnostics.confirmed_pixels() == 0);
        CHECK(r.image.rgb == r.composed.render.rgb);
        CHECK(r.diagnostics.header_value() == "pairs=1;confirmed=0;corrected=0");
    }
}

TEST_CASE("injected pokes are confirmed, corrected and never made worse") {
    const SynthScene& scene = test::skirt_scene();
    const InjectionResult inj = inject_penetration(scene, 0.05, 0.035);
    std::size_t confirmed = 0;
    for (const CameraModel& cam : scene.cameras) {
        const PoseParams rest = PoseParams::canonical(4);
        const TryonResult clean = penetration_aware_render(scene.avatar(), rest, cam, 0.03, {}, false);
        const TryonResult r = penetration_aware_render(inj.scene.avatar(), rest, cam, 0.03);
        const auto& raw = r.composed.render.rgb;
        std::set<std::uint32_t> confirmed_px;
        for (const auto& region : r.confirmed) confirmed_px.insert(region.pixels.begin(), region.pixels.end());
        confirmed += confirmed_px.size();
        CHECK(r.image.corrected == confirmed_px.size());
        for (std::size_t p = 0; p < r.image.labels.labels.size(); ++p) {
            const bool changed = r.image.rgb[3 * p] != raw[3 * p] || r.image.rgb[3 * p + 1] != raw[3 * p + 1] ||
                                 r.image.rgb[3 * p + 2] != raw[3 * p + 2];
            if (changed) CHECK(confirmed_px.count(static_cast<std::uint32_t>(p)) == 1);
        }
        for (std::uint32_t p : confirmed_px) {
            double before = 0.0, after = 0.0;
            for (int c = 0; c < 3; ++c) {
                before += std::abs(raw[3 * p + c] - clean.image.rgb[3 * p + c]);
                after += std::abs(r.image.rgb[3 * p + c] - clean.image.rgb[3 * p + c]);
            }
            CHECK(after <= before + 1e-6);
        }
        // Re-running detection and correction on the corrected output is a no-op.
        const CorrectionResult again = correct_penetrations(r.composed.render, r.image.rgb, r.image.labels,
                                                            inj.scene.avatar().adjacency, 0.03);
        CHECK(again.diagnostics.confirmed_pixels() == 0);
        CHECK(again.image.rgb == r.image.rgb);
    }
    CHECK(confirmed > 0);
}

TEST_CASE("jacket over shirt pokes stay on that pair") {
    SynthSpec spec = SynthSpec::with_garments(5, {GarmentKind::shirt_shell, GarmentKind::open_jacket_shell});
    spec.cameras.count = 3;
    spec.cameras.width = spec.cameras.height = 96;
    spec.field_resolution = 24;
    const SynthScene scene = generate_scene(spec, false);
    const InjectionResult inj = inject_penetration(scene, 0.08, 0.035, LayerId::upper);
    std::size_t on_pair = 0;
    for (std::size_t c = 0; c < scene.cameras.size(); ++c) {
        const TryonResult r =
            penetration_aware_render(inj.scene.avatar(), PoseParams::canonical(4), scene.cameras[c], 0.03);
        const std::set<std::uint32_t> pokes(inj.poke_pixels[c].begin(), inj.poke_pixels[c].end());
        for (const PairDiagnostics& d : r.diagnostics.pairs)
            if (!(d.inner == LayerId::upper && d.outer == LayerId::outer)) CHECK(d.confirmed_pixels == 0);
        for (const PenetrationRegion& region : r.confirmed) {
            CHECK(region.inner_layer == LayerId::upper);
            for (std::uint32_t p : region.pixels) CHECK(pokes.count(p) == 1);
            on_pair += region.pixels.size();
        }
    }
    CHECK(on_pair > 0);
}

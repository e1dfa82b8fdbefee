#include "layerav/cli.hpp"

#include <CLI11.hpp>

#include <exception>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "layerav/formats.hpp"
#include "layerav/image_io.hpp"
#include "layerav/parallel.hpp"
#include "layerav/synthgen.hpp"
#include "layerav/tryon.hpp"

namespace layerav {

namespace {

namespace fs = std::filesystem;

const char* const kHelpFooter =
    "Configuration:\n"
    "  --config FILE       JSON file with wardrobe, width, height, workers, output,\n"
    "                      max_image_size, loss_weights and presets\n"
    "Environment (overrides the config file, overridden by flags):\n"
    "  LAYERAV_WARDROBE    wardrobe directory\n"
    "  LAYERAV_WORKERS     worker count\n"
    "Exit codes: 0 ok, 1 internal error, 2 not found, 3 incompatible, 4 bad input";

struct Options {
    std::string config_file;
    std::string wardrobe;
    int workers = 0;

    std::string wardrobe_id;

    std::string asset, compose_file, pose_file, pose_seq, camera_file, out_dir, preset;
    std::string body, upper, lower, outer;
    std::string donor;
    std::vector<double> shape;
    int frame = 0;
    int width = 0, height = 0;
    double epsilon = -1.0;
    bool no_correction = false;
    double azimuth = 0.0, elevation = 0.0, distance = 3.0;

    std::string pred, gt, labels_pred, labels_gt;

    std::string synth_catalog, synth_renders;
    std::uint64_t seed = 7;
    std::vector<std::string> garments;
    int cameras = 4;
    double inject_fraction = 0.0, inject_magnitude = 0.02;
};

void require_file(const std::string& path, const char* what) {
    if (!fs::exists(path)) throw NotFoundError(std::string(what) + " not found: " + path);
}

AppConfig load_config(const Options& o, const CLI::App& app) {
    AppConfig c;
    if (!o.config_file.empty()) {
        require_file(o.config_file, "config file");
        c = config_from_json(read_json_file(o.config_file));
    }
    apply_env_overrides(c);
    if (app.count("--wardrobe")) c.wardrobe = o.wardrobe;
    if (app.count("--workers")) {
        if (o.workers < 1) throw InputError("--workers must be at least 1");
        c.workers = o.workers;
    }
    return c;
}

std::vector<std::uint8_t> label_png(const LabelMap& labels) {
    const std::vector<Rgb8> palette = label_palette();
    return encode_png_indexed(labels.width, labels.height, labels.labels, palette);
}

void write_render(const fs::path& dir, const std::string& prefix, const RenderOutput& render,
                  const CorrectedImage& image, const Diagnostics& diagnostics, bool depth) {
    fs::create_directories(dir);
    write_file_atomic(dir / (prefix + "rgb.png"), encode_png_rgb(render.width, render.height, image.rgb));
    write_file_atomic(dir / (prefix + "labels.png"), label_png(image.labels));
    if (depth) {
        for (LayerId l : kAllLayers) {
            if (!render.has_layer(l)) continue;
            write_file_atomic(dir / (prefix + "depth_" + std::string(layer_name(l)) + ".pfm"),
                              encode_pfm(render.width, render.height, render.layer_depth[layer_index(l)]));
        }
    }
    write_file_atomic(dir / (prefix + "diagnostics.txt"), diagnostics.to_text());
}

CameraModel pick_camera(const Options& o, const CLI::App& cmd, const AppConfig& config, const WardrobeAsset& body) {
    if (!o.camera_file.empty()) {
        require_file(o.camera_file, "camera file");
        return camera_from_json(read_json_file(o.camera_file));
    }
    const int w = cmd.count("--width") ? o.width : config.width;
    const int h = cmd.count("--height") ? o.height : config.height;
    if (w < 1 || h < 1) throw InputError("image size must be positive");
    if (w > config.max_image_size || h > config.max_image_size)
        throw InputError("image size exceeds " + std::to_string(config.max_image_size));
    if (cmd.count("--azimuth") || cmd.count("--elevation") || cmd.count("--distance"))
        return orbit_camera(body, w, h, o.azimuth, o.elevation, o.distance);
    return default_camera(body, w, h);
}

const PresetSpec& find_preset(const AppConfig& config, const std::string& name) {
    for (const PresetSpec& p : config.presets)
        if (p.name == name) return p;
    throw NotFoundError("unknown preset '" + name + "'");
}

// ---- wardrobe -----------------------------------------------------------------

int cmd_wardrobe_ls(const AppConfig& config, std::ostream& out) {
    const Catalog catalog = Catalog::open(config.wardrobe);
    out << std::left << std::setw(24) << "id" << std::setw(8) << "layer" << std::setw(16) << "category"
        << "primitives\n";
    for (const CatalogEntry& e : catalog.entries())
        out << std::setw(24) << e.asset_id << std::setw(8) << layer_name(e.layer_id) << std::setw(16) << e.category
            << e.primitive_count << "\n";
    return kExitOk;
}

int cmd_wardrobe_inspect(const AppConfig& config, const std::string& id, std::ostream& out) {
    const Catalog catalog = Catalog::open(config.wardrobe);
    const auto entry = catalog.find(id);
    if (!entry) throw NotFoundError("unknown asset '" + id + "'");
    const std::vector<std::uint8_t> bytes = read_file(entry->file);
    out << read_manifest(bytes) << "\n";
    return kExitOk;
}

int cmd_wardrobe_validate(const AppConfig& config, const std::string& id, std::ostream& out) {
    const Catalog catalog = Catalog::open(config.wardrobe);
    const AssetPtr asset = catalog.load(id);
    const std::vector<Violation> issues = validate_asset(*asset);
    if (issues.empty()) {
        out << "OK\n";
        return kExitOk;
    }
    for (const Violation& v : issues) out << v.invariant << "[" << v.index << "]: " << v.detail << "\n";
    return kExitInput;
}

// ---- render / tryon -------------------------------------------------------------

int cmd_render(const Options& o, const CLI::App& cmd, const AppConfig& config, std::ostream& out) {
    if (o.asset.empty() == o.compose_file.empty()) throw InputError("give exactly one of --asset and --compose-file");
    const Catalog catalog = Catalog::open(config.wardrobe);

    ComposeSpec spec;
    std::optional<LayerId> only_layer;
    if (!o.compose_file.empty()) {
        require_file(o.compose_file, "composition file");
        spec = compose_spec_from_json(read_json_file(o.compose_file));
    } else {
        const AssetPtr asset = catalog.load(o.asset);
        if (asset->layer_id == LayerId::body) {
            spec.body = asset->asset_id;
        } else {
            // A lone garment is posed with the body it references.
            if (asset->skinning_field_ref.empty()) throw IncompatibleError("garment names no body to pose it with");
            spec.body = asset->skinning_field_ref;
            spec.garments[asset->layer_id] = asset->asset_id;
            only_layer = asset->layer_id;
        }
    }
    const ComposedAvatar avatar = resolve_composition(spec, catalog);
    const WardrobeAsset& body = *avatar.identity.body_asset;

    PoseParams pose = PoseParams::canonical(body.joint_count);
    if (!o.pose_file.empty()) {
        require_file(o.pose_file, "pose file");
        const auto frames = pose_sequence_from_json(read_json_file(o.pose_file));
        if (frames.size() != 1) throw InputError("--pose expects a single pose; use tryon for sequences");
        pose = frames.front();
    } else if (!o.preset.empty()) {
        pose = preset_pose(find_preset(config, o.preset), o.frame, body.joint_count);
    }
    const CameraModel camera = pick_camera(o, cmd, config, body);
    const double epsilon = o.epsilon >= 0.0 ? o.epsilon : spec.epsilon.value_or(LossWeights{}.epsilon_pen);
    RenderOptions options;
    options.workers = config.workers;

    fs::path dir = o.out_dir.empty() ? config.output : fs::path(o.out_dir);
    if (only_layer) {
        const ComposeResult posed = pose_avatar(avatar, pose);
        const RenderOutput render = rasterize(posed.gaussians.filtered(*only_layer), camera, options);
        const CorrectedImage image{render.rgb, label_map(render), 0};
        write_render(dir, "", render, image, Diagnostics{}, true);
        out << Diagnostics{}.header_value() << "\n";
        return kExitOk;
    }
    const TryonResult t = penetration_aware_render(avatar, pose, camera, epsilon, options, !o.no_correction);
    write_render(dir, "", t.composed.render, t.image, t.diagnostics, true);
    out << t.diagnostics.header_value() << "\n";
    return kExitOk;
}

int cmd_tryon(const Options& o, const CLI::App& cmd, const AppConfig& config, std::ostream& out) {
    if (o.body.empty()) throw IncompatibleError("try-on needs a body asset (--body)");
    ComposeSpec spec;
    spec.body = o.body;
    spec.shape = o.shape;
    if (!o.upper.empty()) spec.garments[LayerId::upper] = o.upper;
    if (!o.lower.empty()) spec.garments[LayerId::lower] = o.lower;
    if (!o.outer.empty()) spec.garments[LayerId::outer] = o.outer;
    if (!o.donor.empty()) spec.donor_body = o.donor;

    const Catalog catalog = Catalog::open(config.wardrobe);
    const ComposedAvatar avatar = resolve_composition(spec, catalog);
    const WardrobeAsset& body = *avatar.identity.body_asset;

    std::vector<PoseParams> poses;
    if (!o.pose_seq.empty()) {
        require_file(o.pose_seq, "pose sequence");
        poses = pose_sequence_from_json(read_json_file(o.pose_seq));
    } else {
        const PresetSpec& preset = find_preset(config, o.preset.empty() ? "canonical" : o.preset);
        for (int f = 0; f < preset.frames; ++f) poses.push_back(preset_pose(preset, f, body.joint_count));
    }
    for (const PoseParams& p : poses) {
        if (p.joint_count() != body.joint_count)
            throw IncompatibleError("pose has " + std::to_string(p.joint_count()) + " joints, body has " +
                                    std::to_string(body.joint_count));
    }
    const CameraModel camera = pick_camera(o, cmd, config, body);
    const double epsilon = o.epsilon >= 0.0 ? o.epsilon : LossWeights{}.epsilon_pen;
    const fs::path dir = o.out_dir.empty() ? config.output : fs::path(o.out_dir);
    fs::create_directories(dir);

    // Frames render in parallel with one tile worker each.
    std::vector<Diagnostics> per_frame(poses.size());
    std::vector<std::exception_ptr> failures(poses.size());
    parallel_for(poses.size(), config.workers, [&](std::size_t f) {
        try {
            const TryonResult t = penetration_aware_render(avatar, poses[f], camera, epsilon, {}, !o.no_correction);
            std::ostringstream prefix;
            prefix << "frame_" << std::setw(4) << std::setfill('0') << f << "_";
            write_render(dir, prefix.str(), t.composed.render, t.image, t.diagnostics, false);
            per_frame[f] = t.diagnostics;
        } catch (...) {
            failures[f] = std::current_exception();
        }
    });
    for (const auto& e : failures)
        if (e) std::rethrow_exception(e);

    std::ostringstream summary;
    std::size_t regions = 0, confirmed = 0, corrected = 0;
    summary << "frames=" << poses.size() << "\n";
    for (std::size_t f = 0; f < per_frame.size(); ++f) {
        summary << "frame " << f << ": " << per_frame[f].header_value() << "\n";
        regions += per_frame[f].regions();
        confirmed += per_frame[f].confirmed_pixels();
        corrected += per_frame[f].corrected_pixels();
    }
    summary << "total: regions=" << regions << ";confirmed=" << confirmed << ";corrected=" << corrected << "\n";
    write_file_atomic(dir / "summary.txt", summary.str());
    out << summary.str();
    return kExitOk;
}

// ---- metrics --------------------------------------------------------------------

DecodedImage load_image(const std::string& path) {
    require_file(path, "image");
    const std::vector<std::uint8_t> bytes = read_file(path);
    try {
        return fs::path(path).extension() == ".pfm" ? decode_pfm(bytes) : decode_png(bytes);
    } catch (const IoError& e) {
        throw InputError(path + ": " + e.what());
    }
}

ImageBuffer to_buffer(const DecodedImage& img) {
    ImageBuffer b;
    b.width = img.width;
    b.height = img.height;
    if (!img.indices.empty()) {
        b.channels = 3;
        for (std::uint8_t i : img.indices) {
            const Rgb8 c = i < img.palette.size() ? img.palette[i] : Rgb8{};
            for (std::uint8_t v : {c.r, c.g, c.b}) b.data.push_back(v / 255.0);
        }
    } else {
        b.channels = img.channels;
        b.data.assign(img.values.begin(), img.values.end());
    }
    return b;
}

LabelMap to_labels(const DecodedImage& img, const std::string& path) {
    if (img.indices.empty()) throw InputError(path + " is not a palette label map");
    return {img.width, img.height, img.indices};
}

int cmd_metrics(const Options& o, std::ostream& out) {
    const ImageBuffer pred = to_buffer(load_image(o.pred));
    const ImageBuffer gt = to_buffer(load_image(o.gt));
    if (!pred.same_shape(gt))
        throw InputError("shape mismatch: " + std::to_string(pred.width) + "x" + std::to_string(pred.height) + "x" +
                         std::to_string(pred.channels) + " vs " + std::to_string(gt.width) + "x" +
                         std::to_string(gt.height) + "x" + std::to_string(gt.channels));
    out << "l1=" << format_number(l1_loss(pred, gt)) << "\n";
    out << "psnr=" << format_number(psnr(pred, gt)) << "\n";
    out << "ssim=" << format_number(ssim(pred, gt)) << "\n";
    if (o.labels_pred.empty() != o.labels_gt.empty())
        throw InputError("--labels-pred and --labels-gt go together");
    if (!o.labels_pred.empty()) {
        const LabelMap lp = to_labels(load_image(o.labels_pred), o.labels_pred);
        const LabelMap lg = to_labels(load_image(o.labels_gt), o.labels_gt);
        const SegmentationMetrics m = segmentation_metrics(lp, lg);
        out << "miou=" << format_number(m.miou) << "\n";
        out << "recall=" << format_number(m.recall) << "\n";
        out << "f1=" << format_number(m.f1) << "\n";
        out << "classes=" << m.classes << "\n";
    }
    return kExitOk;
}

// ---- synth ----------------------------------------------------------------------

int cmd_synth(const Options& o, const CLI::App& cmd, std::ostream& out) {
    std::vector<GarmentKind> kinds;
    for (const std::string& g : o.garments) {
        const auto k = parse_garment_kind(g);
        if (!k) throw InputError("unknown garment kind '" + g + "'");
        kinds.push_back(*k);
    }
    SynthSpec spec = SynthSpec::with_garments(o.seed, kinds);
    if (cmd.count("--width")) spec.cameras.width = o.width;
    if (cmd.count("--height")) spec.cameras.height = o.height;
    spec.cameras.count = o.cameras;
    if (auto why = spec.invalid_reason()) throw InputError(*why);

    SynthScene scene = generate_scene(spec);
    if (o.inject_fraction > 0.0) {
        InjectionResult injected = inject_penetration(scene, o.inject_fraction, o.inject_magnitude);
        out << "displaced=" << injected.displaced.size() << "\n";
        scene = std::move(injected.scene);
    }
    const fs::path renders = o.synth_renders.empty() ? fs::path(o.synth_catalog) / "renders" : fs::path(o.synth_renders);
    export_scene(scene, o.synth_catalog, renders);
    for (const auto& [layer, asset] : scene.assets)
        out << asset->asset_id << " " << layer_name(layer) << " " << asset->primitive_count() << "\n";
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Layered Gaussian avatars: wardrobe, rendering, try-on and metrics", "layerav"};
    app.footer(kHelpFooter);
    app.require_subcommand(1);
    Options o;
    app.add_option("--config", o.config_file, "JSON configuration file");
    app.add_option("--wardrobe", o.wardrobe, "Wardrobe directory (env LAYERAV_WARDROBE)");
    app.add_option("--workers", o.workers, "Worker threads (env LAYERAV_WORKERS)");

    CLI::App* wardrobe = app.add_subcommand("wardrobe", "Inspect the wardrobe catalog");
    wardrobe->require_subcommand(1);
    CLI::App* ls = wardrobe->add_subcommand("ls", "List assets");
    CLI::App* inspect = wardrobe->add_subcommand("inspect", "Print an asset manifest");
    inspect->add_option("id", o.wardrobe_id)->required();
    CLI::App* validate = wardrobe->add_subcommand("validate", "Check an asset's invariants");
    validate->add_option("id", o.wardrobe_id)->required();

    auto add_view = [&](CLI::App* c) {
        c->add_option("--camera", o.camera_file, "Camera JSON file");
        c->add_option("--width", o.width, "Image width (default camera)");
        c->add_option("--height", o.height, "Image height (default camera)");
        c->add_option("--azimuth", o.azimuth, "Orbit azimuth, radians");
        c->add_option("--elevation", o.elevation, "Orbit elevation, radians");
        c->add_option("--distance", o.distance, "Orbit distance, meters");
        c->add_option("--epsilon", o.epsilon, "Depth tolerance of the penetration check");
        c->add_flag("--no-correction", o.no_correction, "Skip penetration-aware correction");
        c->add_option("--preset", o.preset, "Named pose preset");
    };

    CLI::App* render = app.add_subcommand("render", "Render one asset or a composition");
    render->add_option("--asset", o.asset, "Asset id");
    render->add_option("--compose-file", o.compose_file, "Composition JSON file");
    render->add_option("--pose", o.pose_file, "Pose JSON file (canonical when omitted)");
    render->add_option("--frame", o.frame, "Frame of --preset");
    render->add_option("--out", o.out_dir, "Output directory");
    add_view(render);

    CLI::App* tryon = app.add_subcommand("tryon", "Render a dressed avatar over a pose sequence");
    tryon->add_option("--body", o.body, "Body asset id");
    tryon->add_option("--upper", o.upper, "Upper garment id");
    tryon->add_option("--lower", o.lower, "Lower garment id");
    tryon->add_option("--outer", o.outer, "Outer garment id");
    tryon->add_option("--donor-body", o.donor, "Body whose inside Gaussians replace the wearer's");
    tryon->add_option("--shape", o.shape, "Shape coefficients")->delimiter(',');
    tryon->add_option("--pose-seq", o.pose_seq, "Pose sequence JSON file");
    tryon->add_option("--out-dir", o.out_dir, "Output directory");
    add_view(tryon);

    CLI::App* metrics = app.add_subcommand("metrics", "Compare a prediction against ground truth");
    metrics->add_option("--pred", o.pred, "Predicted image (PNG or PFM)")->required();
    metrics->add_option("--gt", o.gt, "Ground-truth image (PNG or PFM)")->required();
    metrics->add_option("--labels-pred", o.labels_pred, "Predicted label PNG");
    metrics->add_option("--labels-gt", o.labels_gt, "Ground-truth label PNG");

    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic wardrobe and ground-truth renders");
    synth->add_option("--catalog", o.synth_catalog, "Catalog directory to write")->required();
    synth->add_option("--renders", o.synth_renders, "Ground-truth directory (default <catalog>/renders)");
    synth->add_option("--seed", o.seed, "Random seed");
    synth->add_option("--garment", o.garments, "Garment kind: tube-skirt, shirt-shell, open-jacket-shell");
    synth->add_option("--width", o.width, "Camera image width");
    synth->add_option("--height", o.height, "Camera image height");
    synth->add_option("--cameras", o.cameras, "Number of ring cameras");
    synth->add_option("--inject-fraction", o.inject_fraction, "Fraction of body Gaussians pushed outward");
    synth->add_option("--inject-magnitude", o.inject_magnitude, "Outward push, meters");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitInput;
    }

    try {
        const AppConfig config = load_config(o, app);
        if (*ls) return cmd_wardrobe_ls(config, out);
        if (*inspect) return cmd_wardrobe_inspect(config, o.wardrobe_id, out);
        if (*validate) return cmd_wardrobe_validate(config, o.wardrobe_id, out);
        if (*render) return cmd_render(o, *render, config, out);
        if (*tryon) return cmd_tryon(o, *tryon, config, out);
        if (*metrics) return cmd_metrics(o, out);
        if (*synth) return cmd_synth(o, *synth, out);
        return kExitInternal;
    } catch (const NotFoundError& e) {
        err << "not found: " << e.what() << "\n";
        return kExitNotFound;
    } catch (const IncompatibleError& e) {
        err << "incompatible: " << e.what() << "\n";
        return kExitIncompatible;
    } catch (const AssetError& e) {
        err << "bad asset: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::out_of_range& e) {
        err << "bad input: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::invalid_argument& e) {
        err << "bad input: " << e.what() << "\n";
        return kExitInput;
    } catch (const Json::exception& e) {
        err << "bad input: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitInternal;
    }
}

}  // namespace layerav

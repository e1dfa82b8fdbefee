#include "layerav/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <cmath>

#include "layerav/image_io.hpp"
#include "layerav/tryon.hpp"

namespace layerav {

namespace {

HttpResponse error(int status, const std::string& message) {
    HttpResponse r;
    r.status = status;
    r.body = Json{{"error", message}}.dump();
    return r;
}

// Releases a claimed share of the worker budget when the render ends.
struct InFlight {
    std::atomic<int>& counter;
    explicit InFlight(std::atomic<int>& c) : counter(c) { ++counter; }
    ~InFlight() { --counter; }
};

int request_int(const Json& j, const char* key, int fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number_integer()) throw InputError(std::string(key) + " must be an integer");
    return j[key].get<int>();
}

Json diagnostics_json(const Diagnostics& d) {
    Json pairs = Json::array();
    for (const PairDiagnostics& p : d.pairs)
        pairs.push_back({{"inner", layer_name(p.inner)},
                         {"outer", layer_name(p.outer)},
                         {"regions", p.regions},
                         {"confirmed_regions", p.confirmed_regions},
                         {"confirmed_pixels", p.confirmed_pixels},
                         {"corrected_pixels", p.corrected_pixels}});
    return {{"pairs", pairs},
            {"regions", d.regions()},
            {"confirmed", d.confirmed_pixels()},
            {"corrected", d.corrected_pixels()}};
}

}  // namespace

TryonService::TryonService(Catalog catalog, ServiceConfig config) : catalog_(std::move(catalog)), config_(std::move(config)) {
    if (config_.workers < 1) throw std::invalid_argument("service needs at least one worker");
    if (config_.max_image_size < 1) throw std::invalid_argument("max_image_size must be positive");
}

int TryonService::claim_workers() const {
    const int active = std::max(in_flight_.load(), 1);
    return std::max(1, config_.workers / active);
}

HttpResponse TryonService::get_catalog() const {
    Json list = Json::array();
    for (const CatalogEntry& e : catalog_.entries())
        list.push_back({{"id", e.asset_id},
                        {"layer", layer_name(e.layer_id)},
                        {"category", e.category},
                        {"thumbnail", "/thumbnails/" + e.asset_id + ".png"}});
    HttpResponse r;
    r.body = list.dump();
    return r;
}

HttpResponse TryonService::get_thumbnail(const std::string& id) const {
    try {
        const std::vector<std::uint8_t> png = catalog_.thumbnail_png(id);
        HttpResponse r;
        r.content_type = "image/png";
        r.body.assign(png.begin(), png.end());
        return r;
    } catch (const NotFoundError& e) {
        return error(404, e.what());
    }
}

HttpResponse TryonService::get_presets() const {
    Json list = Json::array();
    for (const PresetSpec& p : config_.presets) list.push_back({{"name", p.name}, {"frames", p.frames}});
    HttpResponse r;
    r.body = list.dump();
    return r;
}

HttpResponse TryonService::post_render(const std::string& body, bool detail_json) const {
    Json req;
    try {
        req = Json::parse(body);
    } catch (const Json::exception& e) {
        return error(400, std::string("malformed JSON: ") + e.what());
    }
    if (!req.is_object()) return error(400, "request body must be a JSON object");

    try {
        const ComposeSpec spec = compose_spec_from_json(req);
        const ComposedAvatar avatar = resolve_composition(spec, catalog_);
        const WardrobeAsset& body_asset = *avatar.identity.body_asset;

        CameraModel camera;
        if (req.contains("camera")) {
            camera = camera_from_json(req["camera"]);
        } else {
            const int w = request_int(req, "width", config_.default_width);
            const int h = request_int(req, "height", config_.default_height);
            if (w > config_.max_image_size || h > config_.max_image_size)
                return error(413, "image size exceeds " + std::to_string(config_.max_image_size));
            if (w < 1 || h < 1) throw InputError("image size must be positive");
            if (req.contains("orbit")) {
                const Json& o = req["orbit"];
                camera = orbit_camera(body_asset, w, h, o.value("azimuth", 0.0), o.value("elevation", 0.0),
                                      o.value("distance", 3.0));
            } else {
                camera = default_camera(body_asset, w, h);
            }
        }
        if (camera.width > config_.max_image_size || camera.height > config_.max_image_size)
            return error(413, "image size exceeds " + std::to_string(config_.max_image_size));

        PoseParams pose;
        if (req.contains("pose") && req.contains("preset")) throw InputError("give either pose or preset, not both");
        if (req.contains("pose")) {
            pose = pose_from_json(req["pose"]);
        } else if (req.contains("preset")) {
            const Json& p = req["preset"];
            if (!p.is_object() || !p.contains("name") || !p["name"].is_string())
                throw InputError("preset needs a name");
            const std::string name = p["name"].get<std::string>();
            const auto it = std::find_if(config_.presets.begin(), config_.presets.end(),
                                         [&](const PresetSpec& s) { return s.name == name; });
            if (it == config_.presets.end()) throw InputError("unknown preset '" + name + "'");
            pose = preset_pose(*it, request_int(p, "frame", 0), body_asset.joint_count);
        } else {
            pose = PoseParams::canonical(body_asset.joint_count);
        }

        const double epsilon = spec.epsilon.value_or(config_.default_epsilon);
        if (!(epsilon >= 0.0)) throw InputError("epsilon must be non-negative");
        if (req.contains("correction") && !req["correction"].is_boolean())
            throw InputError("correction must be a boolean");
        const bool correction = req.value("correction", true);

        InFlight guard(in_flight_);
        RenderOptions options;
        options.workers = claim_workers();
        const TryonResult result = penetration_aware_render(avatar, pose, camera, epsilon, options, correction);
        const std::vector<std::uint8_t> png = encode_png_rgb(camera.width, camera.height, result.image.rgb);

        HttpResponse r;
        r.headers["X-Penetration-Diagnostics"] = result.diagnostics.header_value();
        if (detail_json) {
            const std::string raw(png.begin(), png.end());
            r.body = Json{{"width", camera.width},
                          {"height", camera.height},
                          {"correction", correction},
                          {"epsilon", epsilon},
                          {"diagnostics", diagnostics_json(result.diagnostics)},
                          {"image_png_base64", httplib::detail::base64_encode(raw)}}
                         .dump();
        } else {
            r.content_type = "image/png";
            r.body.assign(png.begin(), png.end());
        }
        return r;
    } catch (const NotFoundError& e) {
        return error(404, e.what());
    } catch (const IncompatibleError& e) {
        return error(422, e.what());
    } catch (const InputError& e) {
        return error(422, e.what());
    } catch (const std::out_of_range& e) {
        return error(422, e.what());
    } catch (const Json::exception& e) {
        return error(422, e.what());
    } catch (const std::invalid_argument& e) {
        return error(422, e.what());
    } catch (const std::exception& e) {
        return error(500, e.what());
    }
}

void TryonService::install(httplib::Server& server) const {
    auto send = [](httplib::Response& res, const HttpResponse& r) {
        res.status = r.status;
        for (const auto& [k, v] : r.headers) res.set_header(k, v);
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_header("Access-Control-Expose-Headers", "X-Penetration-Diagnostics");
        res.set_content(r.body, r.content_type);
    };
    server.Get("/catalog", [this, send](const httplib::Request&, httplib::Response& res) { send(res, get_catalog()); });
    server.Get(R"(/thumbnails/([^/]+)\.png)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, get_thumbnail(req.matches[1]));
    });
    server.Get("/presets", [this, send](const httplib::Request&, httplib::Response& res) { send(res, get_presets()); });
    server.Post("/render", [this, send](const httplib::Request& req, httplib::Response& res) {
        const bool detail = req.has_param("detail") && req.get_param_value("detail") == "json";
        send(res, post_render(req.body, detail));
    });
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.status = 204;
    });
}

}  // namespace layerav

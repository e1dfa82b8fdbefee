#pragma once

// HTTP front end for the wardrobe and the try-on renderer.
//
//   GET  /catalog                 [{"id","layer","category","thumbnail"}], sorted by id
//   GET  /thumbnails/<id>.png     thumbnail PNG
//   GET  /presets                 [{"name","frames"}]
//   POST /render[?detail=json]    RenderRequest -> PNG (or JSON with base64 PNG)
//
// RenderRequest:
//   {"body": id, "upper"|"lower"|"outer": id, "shape": [...],
//    "pose": pose | "preset": {"name": n, "frame": k},
//    "camera": camera | "orbit": {"azimuth", "elevation", "distance"},
//    "width": W, "height": H, "correction": true, "epsilon": eps}
//
// Every render response carries X-Penetration-Diagnostics.

#include <atomic>
#include <map>
#include <string>
#include <vector>

#include "layerav/formats.hpp"
#include "layerav/wardrobe.hpp"

namespace httplib {
class Server;
}

namespace layerav {

struct HttpResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
    std::map<std::string, std::string> headers;
};

struct ServiceConfig {
    int max_image_size = 1024;
    int default_width = 256;
    int default_height = 256;
    int workers = 1;  // tile workers shared by all in-flight renders
    double default_epsilon = 0.005;
    std::vector<PresetSpec> presets = default_presets();
};

class TryonService {
public:
    TryonService(Catalog catalog, ServiceConfig config);

    HttpResponse get_catalog() const;
    HttpResponse get_thumbnail(const std::string& id) const;
    HttpResponse get_presets() const;
    HttpResponse post_render(const std::string& body, bool detail_json) const;

    /// Routes the endpoints above onto `server`.
    void install(httplib::Server& server) const;

    const ServiceConfig& config() const { return config_; }

private:
    int claim_workers() const;

    Catalog catalog_;
    ServiceConfig config_;
    mutable std::atomic<int> in_flight_{0};
};

}  // namespace layerav

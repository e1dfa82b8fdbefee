// Eigen (through the layerav headers) must precede httplib, whose resolver
// header defines a `_res` macro that collides with Eigen parameter names.
#include "layerav/formats.hpp"
#include "layerav/service.hpp"

#include <CLI11.hpp>
#include <httplib.h>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"HTTP try-on service over a wardrobe directory", "layerav_serve"};
    app.footer(
        "Environment (overrides the config file, overridden by flags):\n"
        "  LAYERAV_WARDROBE    wardrobe directory\n"
        "  LAYERAV_WORKERS     worker budget shared by concurrent renders");
    std::string config_file, wardrobe, host = "127.0.0.1";
    int port = 8080, workers = 0;
    app.add_option("--config", config_file, "JSON configuration file");
    app.add_option("--wardrobe", wardrobe, "Wardrobe directory");
    app.add_option("--workers", workers, "Worker budget");
    app.add_option("--host", host, "Bind address");
    app.add_option("--port", port, "Port (0 picks a free one)");
    CLI11_PARSE(app, argc, argv);

    try {
        layerav::AppConfig config;
        if (!config_file.empty()) config = layerav::config_from_json(layerav::read_json_file(config_file));
        layerav::apply_env_overrides(config);
        if (!wardrobe.empty()) config.wardrobe = wardrobe;
        if (workers > 0) config.workers = workers;

        layerav::ServiceConfig sc;
        sc.max_image_size = config.max_image_size;
        sc.default_width = config.width;
        sc.default_height = config.height;
        sc.workers = config.workers;
        sc.default_epsilon = config.loss_weights.epsilon_pen;
        sc.presets = config.presets;
        const layerav::TryonService service(layerav::Catalog::open(config.wardrobe), sc);

        httplib::Server server;
        service.install(server);
        const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
        if (bound < 0) {
            std::cerr << "cannot bind " << host << ":" << port << "\n";
            return 1;
        }
        std::cout << "listening on http://" << host << ":" << bound << std::endl;
        return server.listen_after_bind() ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

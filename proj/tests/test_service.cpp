#include <doctest.h>

#include <thread>

#include "helpers.hpp"
#include "layerav/image_io.hpp"
#include "layerav/service.hpp"

// After Eigen: httplib pulls in resolv.h, whose _res macro breaks Eigen.
#include <httplib.h>

using namespace layerav;

namespace {

TryonService make_service(int max_size = 1024) {
    ServiceConfig cfg;
    cfg.max_image_size = max_size;
    cfg.default_width = cfg.default_height = 48;
    return TryonService(Catalog::open(test::wardrobe_dir()), cfg);
}

const char* kOutfit = R"({"body":"synth-body","lower":"tube-skirt","width":40,"height":40})";

}  // namespace

TEST_CASE("catalog listing") {
    const HttpResponse r = make_service().get_catalog();
    CHECK(r.status == 200);
    const Json list = Json::parse(r.body);
    REQUIRE(list.is_array());
    CHECK(list.size() == 6);
    for (std::size_t i = 1; i < list.size(); ++i) CHECK(list[i - 1]["id"] < list[i]["id"]);
    CHECK(list[0]["thumbnail"] == "/thumbnails/" + list[0]["id"].get<std::string>() + ".png");

    test::TempDir empty("empty");
    const TryonService none(Catalog::open(empty.path()), ServiceConfig{});
    CHECK(Json::parse(none.get_catalog().body) == Json::array());
}

TEST_CASE("thumbnails") {
    const TryonService s = make_service();
    const HttpResponse ok = s.get_thumbnail("tube-skirt");
    CHECK(ok.status == 200);
    CHECK(ok.content_type == "image/png");
    CHECK(decode_png(std::vector<std::uint8_t>(ok.body.begin(), ok.body.end())).width > 0);
    CHECK(s.get_thumbnail("nope").status == 404);
}

TEST_CASE("presets") {
    const Json list = Json::parse(make_service().get_presets().body);
    REQUIRE(list.size() >= 1);
    CHECK(list[0]["name"] == "canonical");
    CHECK(list[0]["frames"] == 1);
}

TEST_CASE("render requests") {
    const TryonService s = make_service(64);
    SUBCASE("valid request gives a PNG and a diagnostics header") {
        const HttpResponse r = s.post_render(kOutfit, false);
        REQUIRE(r.status == 200);
        CHECK(r.content_type == "image/png");
        CHECK(r.headers.at("X-Penetration-Diagnostics").rfind("pairs=1;confirmed=", 0) == 0);
        const DecodedImage img = decode_png(std::vector<std::uint8_t>(r.body.begin(), r.body.end()));
        CHECK(img.width == 40);
        CHECK(s.post_render(kOutfit, false).body == r.body);
    }
    SUBCASE("detail=json carries the same image") {
        const HttpResponse png = s.post_render(kOutfit, false);
        const HttpResponse r = s.post_render(kOutfit, true);
        REQUIRE(r.status == 200);
        const Json j = Json::parse(r.body);
        CHECK(j["width"] == 40);
        CHECK(j["diagnostics"]["pairs"].size() == 1);
        CHECK(j["image_png_base64"] == httplib::detail::base64_encode(png.body));
    }
    SUBCASE("errors map to status codes") {
        CHECK(s.post_render(R"({"body":"synth-body","lower":"nope"})", false).status == 404);
        CHECK(s.post_render(R"({"body":"synth-body","upper":"tube-skirt"})", false).status == 422);
        CHECK(s.post_render(R"({"body":"synth-body","width":65})", false).status == 413);
        CHECK(s.post_render(R"({"body":"synth-body","preset":{"name":"sway","frame":99}})", false).status == 422);
        CHECK(s.post_render(R"({"body":"synth-body","preset":{"name":"moonwalk"}})", false).status == 422);
        CHECK(s.post_render(R"({"body":"synth-body","pose":{"joint_rotations":[[0,0,0]]}})", false).status == 422);
        CHECK(s.post_render("{oops", false).status == 400);
        CHECK(s.post_render(R"({"lower":"tube-skirt"})", false).status == 422);
    }
    SUBCASE("preset frame 0 equals the canonical pose") {
        const HttpResponse a = s.post_render(R"({"body":"synth-body","width":32,"height":32})", false);
        const HttpResponse b =
            s.post_render(R"({"body":"synth-body","width":32,"height":32,"preset":{"name":"stride","frame":0}})",
                          false);
        CHECK(a.body == b.body);
    }
    SUBCASE("correction flag on a poked body") {
        const char* on = R"({"body":"poked-body","lower":"tube-skirt","width":64,"height":64,"epsilon":0.03})";
        const char* off =
            R"({"body":"poked-body","lower":"tube-skirt","width":64,"height":64,"epsilon":0.03,"correction":false})";
        const Json a = Json::parse(s.post_render(on, true).body);
        const Json b = Json::parse(s.post_render(off, true).body);
        CHECK(a["diagnostics"]["confirmed"] == b["diagnostics"]["confirmed"]);
        CHECK(b["diagnostics"]["corrected"] == 0);
        if (a["diagnostics"]["corrected"].get<int>() > 0) CHECK(a["image_png_base64"] != b["image_png_base64"]);
    }
}

TEST_CASE("HTTP round trip on localhost") {
    const TryonService s = make_service(64);
    httplib::Server server;
    s.install(server);
    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    httplib::Client client("127.0.0.1", port);
    const auto cat = client.Get("/catalog");
    REQUIRE(cat);
    CHECK(cat->status == 200);
    CHECK(Json::parse(cat->body).size() == 6);
    const auto thumb = client.Get("/thumbnails/tube-skirt.png");
    REQUIRE(thumb);
    CHECK(thumb->status == 200);
    CHECK(thumb->get_header_value("Content-Type") == "image/png");
    CHECK(client.Get("/presets")->status == 200);

    const auto a = client.Post("/render", kOutfit, "application/json");
    const auto b = client.Post("/render", kOutfit, "application/json");
    REQUIRE(a);
    REQUIRE(b);
    CHECK(a->status == 200);
    CHECK(a->body == b->body);
    CHECK(a->get_header_value("X-Penetration-Diagnostics") == b->get_header_value("X-Penetration-Diagnostics"));
    CHECK(a->body == s.post_render(kOutfit, false).body);
    const auto detail = client.Post("/render?detail=json", kOutfit, "application/json");
    REQUIRE(detail);
    CHECK(Json::parse(detail->body).contains("diagnostics"));
    CHECK(client.Post("/render", R"({"body":"ghost"})", "application/json")->status == 404);
    CHECK(client.Post("/render", R"({"body":"synth-body","width":2000})", "application/json")->status == 413);

    server.stop();
    t.join();
}

TEST_CASE("concurrent identical requests return identical images") {
    ServiceConfig cfg;
    cfg.workers = 4;
    const TryonService s(Catalog::open(test::wardrobe_dir()), cfg);
    std::vector<std::string> bodies(4);
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < bodies.size(); ++i)
        threads.emplace_back([&, i] { bodies[i] = s.post_render(kOutfit, false).body; });
    for (auto& t : threads) t.join();
    for (const auto& b : bodies) CHECK(b == bodies[0]);
}

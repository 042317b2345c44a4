#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "support.hpp"

#include <httplib.h>

#include <thread>

#include "dfvae/server.hpp"

using namespace dfvae;
using nlohmann::json;

namespace {

struct Vault {
  test::TempDir dir;
  DatasetManifest manifest;

  Vault() {
    test::Gen g(1);
    for (int i = 0; i < 3; ++i) {
      auto c = g.clip(2, 8, 8, "h" + std::to_string(i), "x" + std::to_string(i));
      c.label = i == 0 ? Label::fake : Label::real;
      write_clip(c, clip_directory(dir.path(), c.clip_id));
      manifest.entries.push_back({c.clip_id, c.frames[0].identity, c.label, Split::hidden, {}});
    }
  }
};

json scores(std::initializer_list<std::pair<const char*, double>> s) {
  json arr = json::array();
  for (const auto& [id, v] : s) arr.push_back({{"clip_id", id}, {"score", v}});
  return {{"session", "s1"}, {"scores", arr}};
}

json rating(const std::string& clip, const std::string& who, int score) {
  return {{"clip_id", clip}, {"participant_id", who}, {"score", score}, {"timestamp", "2020-01-01T00:00:00Z"}};
}

}  // namespace

TEST_CASE("dispatch routes") {
  Vault v;
  HiddenService service(v.manifest, v.dir.path());
  auto r = dispatch(service, "GET", "/hidden/clips", "");
  CHECK(r.status == 200);
  CHECK(r.body.at("clip_ids") == json{"h0", "h1", "h2"});
  CHECK(r.body.dump().find("fake") == std::string::npos);

  r = dispatch(service, "POST", "/hidden/submit", scores({{"h0", 0.9}, {"h1", 0.1}, {"h2", 0.2}}).dump());
  CHECK(r.status == 200);
  CHECK(r.body.at("accuracy") == 1.0);
  CHECK(r.body.at("n") == 3);
  CHECK(r.body.at("session") == "s1");

  r = dispatch(service, "POST", "/hidden/submit", scores({{"h0", 0.9}}).dump());
  CHECK(r.status == 422);
  CHECK(r.body.at("error").get<std::string>().find("h1") != std::string::npos);

  r = dispatch(service, "GET", "/hidden/clips/h1", "");
  CHECK(r.status == 200);
  CHECK(r.body.at("frames") == 2);
  CHECK(r.body.at("width") == 8);
  CHECK_FALSE(r.body.contains("label"));
  CHECK(dispatch(service, "GET", "/hidden/clips/nope", "").status == 404);

  CHECK(dispatch(service, "POST", "/hidden/submit", "{not json").status == 400);
  CHECK(dispatch(service, "GET", "/nowhere", "").status == 404);
  CHECK(dispatch(service, "DELETE", "/hidden/clips", "").status == 404);
}

TEST_CASE("rating submission and summaries") {
  Vault v;
  HiddenService service(v.manifest, v.dir.path());
  auto r = dispatch(service, "POST", "/ratings", rating("h0", "p1", 5).dump());
  CHECK(r.status == 200);
  CHECK(r.body.at("accepted") == 1);

  json batch = json::array({rating("h0", "p2", 4), rating("h0", "p1", 2), rating("h0", "p3", 9)});
  r = dispatch(service, "POST", "/ratings", batch.dump());
  CHECK(r.status == 200);
  CHECK(r.body.at("accepted") == 1);
  CHECK(r.body.at("rejected").size() == 2);

  // Everything rejected is a conflict.
  r = dispatch(service, "POST", "/ratings", rating("h0", "p1", 3).dump());
  CHECK(r.status == 409);

  r = dispatch(service, "GET", "/ratings/summary/h0", "");
  CHECK(r.status == 200);
  CHECK(r.body.at("n") == 2);
  CHECK(r.body.at("fooled") == 2);
  CHECK(r.body.at("real_fraction") == 1.0);
  r = dispatch(service, "POST", "/ratings", rating("cand-1", "p1", 1).dump());
  CHECK(r.status == 200);
  r = dispatch(service, "GET", "/ratings/summary", "");
  CHECK(r.status == 200);
  std::vector<std::string> listed;
  for (const auto& s : r.body.at("summaries")) listed.push_back(s.at("clip_id"));
  CHECK(listed == std::vector<std::string>{"cand-1", "h0", "h1", "h2"});
  CHECK(r.body.at("summaries")[1].at("n") == 2);
  CHECK(r.body.at("summaries")[2].at("n") == 0);

  // Candidates are rated before curation, so an unrated id has an empty summary.
  r = dispatch(service, "GET", "/ratings/summary/candidate-7", "");
  CHECK(r.status == 200);
  CHECK(r.body.at("n") == 0);
}

TEST_CASE("HTTP self-test with an oracle client") {
  Vault v;
  HiddenService service(v.manifest, v.dir.path());
  BenchmarkServer server(service);
  const int port = server.bind("127.0.0.1");
  REQUIRE(port > 0);
  std::thread loop([&] { server.listen(); });

  httplib::Client client("127.0.0.1", port);
  auto res = client.Get("/hidden/clips");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
  const auto ids = json::parse(res->body).at("clip_ids");

  std::map<std::string, Label> truth;
  for (const auto& e : v.manifest.entries) truth[e.clip_id] = e.label;
  json body{{"session", "oracle"}, {"scores", json::array()}};
  for (const auto& id : ids) body["scores"].push_back({{"clip_id", id}, {"score", truth[id.get<std::string>()] == Label::fake ? 1.0 : 0.0}});
  res = client.Post("/hidden/submit", body.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body).at("accuracy") == 1.0);

  res = client.Get("/hidden/clips/h2/frames/1");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Content-Type") == "image/png");
  REQUIRE(res->body.size() > 8);
  CHECK(res->body.substr(1, 3) == "PNG");
  res = client.Get("/hidden/clips/h2/frames/2");
  REQUIRE(res);
  CHECK(res->status == 404);
  res = client.Get("/hidden/clips/zz/frames/0");
  REQUIRE(res);
  CHECK(res->status == 404);

  res = client.Post("/ratings", rating("h1", "p9", 4).dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(service.ratings().size() == 1);

  server.stop();
  loop.join();
}

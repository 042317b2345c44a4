#include "dfvae/server.hpp"

#include <httplib.h>

#include <algorithm>
#include <set>

namespace dfvae {

namespace {

ApiResponse error(int status, const std::string& message) { return {status, {{"error", message}}}; }

ApiResponse hidden_submit(const HiddenService& service, const nlohmann::json& body) {
  std::vector<std::pair<std::string, double>> scores;
  for (const auto& s : body.at("scores")) scores.emplace_back(s.at("clip_id").get<std::string>(), s.at("score").get<double>());
  const double threshold = body.value("threshold", 0.5);
  try {
    const auto r = service.submit(scores, threshold);
    return {200, {{"session", body.value("session", std::string{})}, {"accuracy", r.accuracy}, {"n", r.n}}};
  } catch (const SubmissionError& err) {
    return error(422, err.what());
  }
}

ApiResponse post_ratings(HiddenService& service, const nlohmann::json& body) {
  const nlohmann::json records = body.is_array() ? body : nlohmann::json::array({body});
  int accepted = 0;
  nlohmann::json rejected = nlohmann::json::array();
  for (const auto& j : records) {
    const auto reject = [&](const std::string& reason) {
      rejected.push_back({{"clip_id", j.value("clip_id", std::string{})},
                          {"participant_id", j.value("participant_id", std::string{})},
                          {"reason", reason}});
    };
    try {
      service.add_rating(rating_from_json(j));
      ++accepted;
    } catch (const SubmissionError& err) {
      reject(std::string("duplicate: ") + err.what());
    } catch (const ValidationError& err) {
      reject(err.what());
    }
  }
  const int status = accepted == 0 && !rejected.empty() ? 409 : 200;
  return {status, {{"accepted", accepted}, {"rejected", rejected}}};
}

nlohmann::json summary_json(const HiddenService& service, const std::string& clip_id) {
  auto j = to_json(service.summary(clip_id));
  j["clip_id"] = clip_id;
  return j;
}

ApiResponse all_summaries(const HiddenService& service) {
  std::set<std::string> ids;
  for (const auto& id : service.clip_ids()) ids.insert(id);
  for (const auto& r : service.ratings()) ids.insert(r.clip_id);
  nlohmann::json out = nlohmann::json::array();
  for (const auto& id : ids) out.push_back(summary_json(service, id));
  return {200, {{"summaries", out}}};
}

bool is_hidden(const HiddenService& service, const std::string& clip_id) {
  const auto ids = service.clip_ids();
  return std::find(ids.begin(), ids.end(), clip_id) != ids.end();
}

}  // namespace

ApiResponse dispatch(HiddenService& service, std::string_view method, std::string_view path, std::string_view body) {
  constexpr std::string_view summary_prefix = "/ratings/summary/";
  constexpr std::string_view clip_prefix = "/hidden/clips/";
  try {
    if (method == "GET" && path == "/hidden/clips") return {200, {{"clip_ids", service.clip_ids()}}};
    if (method == "GET" && (path == "/ratings/summary" || path == summary_prefix)) return all_summaries(service);
    if (method == "GET" && path.starts_with(summary_prefix))
      return {200, summary_json(service, std::string(path.substr(summary_prefix.size())))};
    if (method == "GET" && path.starts_with(clip_prefix) && path.find('/', clip_prefix.size()) == std::string_view::npos) {
      const std::string clip_id(path.substr(clip_prefix.size()));
      if (!is_hidden(service, clip_id)) return error(404, "unknown hidden clip '" + clip_id + "'");
      const auto clip = service.fetch_clip(clip_id);
      return {200, {{"clip_id", clip_id}, {"frames", clip.size()}, {"height", clip.height()},
                    {"width", clip.width()}, {"fps", clip.fps}}};
    }
    if (method == "POST" && path == "/hidden/submit") return hidden_submit(service, nlohmann::json::parse(body));
    if (method == "POST" && path == "/ratings") return post_ratings(service, nlohmann::json::parse(body));
  } catch (const nlohmann::json::exception& err) {
    return error(400, std::string("malformed request: ") + err.what());
  } catch (const Error& err) {
    return error(400, err.what());
  }
  return error(404, "no route for " + std::string(method) + " " + std::string(path));
}

struct BenchmarkServer::Impl {
  HiddenService& service;
  httplib::Server http;

  explicit Impl(HiddenService& s) : service(s) {
    http.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
      const auto r = dispatch(service, req.method, req.path, req.body);
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    http.Get(R"(/hidden/clips/([^/]+)/frames/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string clip_id = req.matches[1];
      auto fail = [&](int status, const std::string& message) {
        res.status = status;
        res.set_content(nlohmann::json{{"error", message}}.dump(), "application/json");
      };
      try {
        if (!is_hidden(service, clip_id)) return fail(404, "unknown hidden clip '" + clip_id + "'");
        const auto clip = service.fetch_clip(clip_id);
        const auto index = std::stoul(req.matches[2]);
        if (index >= clip.size()) return fail(404, "clip '" + clip_id + "' has " + std::to_string(clip.size()) + " frames");
        const auto png = encode_png(clip.frames[index].pixels);
        res.set_content(reinterpret_cast<const char*>(png.data()), png.size(), "image/png");
      } catch (const std::exception& err) {
        fail(500, err.what());
      }
    });
    http.Get(R"(/.*)", handler);
    http.Post(R"(/.*)", handler);
    http.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  }
};

BenchmarkServer::BenchmarkServer(HiddenService& service) : impl_(std::make_unique<Impl>(service)) {}
BenchmarkServer::~BenchmarkServer() { stop(); }

int BenchmarkServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->http.bind_to_any_port(host) : (impl_->http.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void BenchmarkServer::listen() { impl_->http.listen_after_bind(); }

void BenchmarkServer::stop() {
  if (impl_) impl_->http.stop();
}

}  // namespace dfvae

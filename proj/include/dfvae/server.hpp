#pragma once

#include <memory>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "dfvae/benchmark.hpp"

namespace dfvae {

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

/// Routes one request to the hidden service:
///   GET  /hidden/clips               -> {"clip_ids": [...]}
///   POST /hidden/submit              {"session", "scores": [{"clip_id", "score"}], "threshold"?}
///                                    -> {"session", "accuracy", "n"}
///   POST /ratings                    one RatingRecord or an array of them
///                                    -> {"accepted": n, "rejected": [{"clip_id", "participant_id", "reason"}]}
///   GET  /ratings/summary/{clip_id}  -> aggregate for the clip, without labels
///   GET  /ratings/summary            -> {"summaries": [...]} for every hidden or rated clip
///   GET  /hidden/clips/{clip_id}     -> {"clip_id", "frames", "height", "width", "fps"}
/// The HTTP server additionally serves GET /hidden/clips/{clip_id}/frames/{i}
/// as image/png.
/// Errors come back as {"error": message} with a 4xx status.
ApiResponse dispatch(HiddenService& service, std::string_view method, std::string_view path, std::string_view body);

/// HTTP front end over `dispatch`.
class BenchmarkServer {
 public:
  explicit BenchmarkServer(HiddenService& service);
  ~BenchmarkServer();
  BenchmarkServer(const BenchmarkServer&) = delete;
  BenchmarkServer& operator=(const BenchmarkServer&) = delete;

  /// Binds `port` (0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port = 0);
  /// Blocks until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace dfvae

// Project headers (and Eigen) first: httplib pulls in <resolv.h>, whose _res macro breaks Eigen.
#include "handvla/caption.hpp"
#include "handvla/errors.hpp"

#include <regex>

#include "httplib.h"

namespace handvla::caption {

namespace {

class HttpCaptionClient : public CaptionClient {
 public:
  explicit HttpCaptionClient(const HttpClientConfig& config) : config_(config) {
    static const std::regex url(R"(^(http://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(config.endpoint, m, url)) {
      throw ConfigError("captioner endpoint must look like http://host[:port]/path, got '" + config.endpoint + "'");
    }
    base_ = m[1].str();
    path_ = m[2].matched ? m[2].str() : "/";
  }

  std::string complete(const CaptionRequest& request) override {
    httplib::Client cli(base_);
    const auto secs = static_cast<time_t>(config_.timeout_s);
    cli.set_connection_timeout(secs, 0);
    cli.set_read_timeout(secs, 0);
    cli.set_write_timeout(secs, 0);
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
    auto res = cli.Post(path_, headers, request.to_json(), "application/json");
    if (!res) throw TransientError("transport error: " + httplib::to_string(res.error()));
    if (res->status != 200) throw TransientError("HTTP status " + std::to_string(res->status));
    return res->body;
  }

 private:
  HttpClientConfig config_;
  std::string base_;
  std::string path_;
};

}  // namespace

std::unique_ptr<CaptionClient> make_http_client(const HttpClientConfig& config) {
  return std::make_unique<HttpCaptionClient>(config);
}

}  // namespace handvla::caption

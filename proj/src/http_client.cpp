// HTTP implementation of ChatClient, isolated in its own translation unit
// because cpp-httplib is a heavy header. CPPHTTPLIB_OPENSSL_SUPPORT comes
// from the build so that every includer sees the same httplib layout.

#include <httplib.h>
#include <json.hpp>

#include "relbow/errors.hpp"
#include "relbow/relevance.hpp"

namespace relbow {

using nlohmann::json;

namespace {

class HttpChatClient : public ChatClient {
 public:
  explicit HttpChatClient(HttpChatConfig config) : config_(std::move(config)) {
    if (config_.base_url.empty()) throw ConfigError("chat endpoint base_url is empty");
  }

  std::string complete(const ChatRequest& request) override {
    httplib::Client client(config_.base_url);
    client.set_connection_timeout(config_.timeout_seconds);
    client.set_read_timeout(config_.timeout_seconds);
    httplib::Headers headers;
    if (!config_.api_key.empty())
      headers.emplace("Authorization", "Bearer " + config_.api_key);

    json body;
    body["model"] = request.model;
    body["messages"] = json::array({{{"role", "user"}, {"content", request.prompt}}});
    body["temperature"] = request.temperature;

    auto res = client.Post(config_.endpoint_path, headers, body.dump(), "application/json");
    if (!res)
      throw EndpointError("chat endpoint unreachable: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
      throw EndpointError("chat endpoint returned HTTP " + std::to_string(res->status) +
                          ": " + res->body.substr(0, 200));
    json reply;
    try {
      reply = json::parse(res->body);
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      throw EndpointError(std::string("malformed chat completion response: ") + e.what());
    }
  }

 private:
  HttpChatConfig config_;
};

}  // namespace

std::unique_ptr<ChatClient> make_http_chat_client(const HttpChatConfig& config) {
  return std::make_unique<HttpChatClient>(config);
}

}  // namespace relbow

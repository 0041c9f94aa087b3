#pragma once

// OpenAI-compatible chat-completions backend over HTTP(S).

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <cstdlib>
#include <string>

#include "navrag/llm_gateway.hpp"

namespace navrag {

struct HttpBackendConfig {
  /// Base URL ("https://api.openai.com/v1") or full chat-completions URL.
  std::string endpoint;
  std::string api_key;
  /// Directory image_ref paths resolve against.
  fs::path image_root;
  int timeout_seconds = 120;
};

/// Reads NAVRAG_LLM_ENDPOINT / NAVRAG_LLM_KEY; fields already set win.
inline HttpBackendConfig http_config_from_env(HttpBackendConfig cfg = {}) {
  if (cfg.endpoint.empty())
    if (const char* e = std::getenv("NAVRAG_LLM_ENDPOINT")) cfg.endpoint = e;
  if (cfg.api_key.empty())
    if (const char* k = std::getenv("NAVRAG_LLM_KEY")) cfg.api_key = k;
  return cfg;
}

namespace detail {

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path;
};

inline ParsedUrl split_endpoint(const std::string& endpoint) {
  const auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos)
    throw Error(ErrorKind::ConfigError, endpoint, "endpoint must start with http:// or https://");
  const auto path_start = endpoint.find('/', scheme_end + 3);
  ParsedUrl u;
  u.scheme_host_port = endpoint.substr(0, path_start);
  u.path = path_start == std::string::npos ? "" : endpoint.substr(path_start);
  while (!u.path.empty() && u.path.back() == '/') u.path.pop_back();
  const std::string suffix = "/chat/completions";
  if (u.path.size() < suffix.size() || u.path.compare(u.path.size() - suffix.size(), suffix.size(), suffix) != 0)
    u.path += suffix;
  return u;
}

inline std::string mime_for(const fs::path& p) {
  auto ext = p.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".png") return "image/png";
  if (ext == ".webp") return "image/webp";
  return "image/jpeg";
}

}  // namespace detail

/// Builds the chat-completions request body. Images are inlined as base64
/// data URLs; schema requests ask for a JSON object reply.
inline json chat_request_body(const LlmRequest& req, const fs::path& image_root) {
  json messages = json::array();
  for (const auto& m : req.messages) {
    if (!m.image_ref) {
      messages.push_back({{"role", m.role}, {"content", m.text}});
      continue;
    }
    const fs::path img = (m.image_root.empty() ? image_root : m.image_root) / *m.image_ref;
    const std::string bytes = read_text(img);
    json content = json::array();
    content.push_back({{"type", "text"}, {"text", m.text}});
    content.push_back({{"type", "image_url"},
                       {"image_url", {{"url", "data:" + detail::mime_for(img) + ";base64," +
                                                  httplib::detail::base64_encode(bytes)}}}});
    messages.push_back({{"role", m.role}, {"content", content}});
  }
  json body = {{"model", req.model},
               {"messages", messages},
               {"temperature", req.temperature},
               {"max_tokens", req.max_tokens}};
  if (req.response_schema) body["response_format"] = {{"type", "json_object"}};
  if (req.seed) body["seed"] = *req.seed;
  return body;
}

/// Maps a chat-completions reply (status + body) to a BackendReply or error.
inline BackendReply parse_chat_response(int status, const std::string& body) {
  if (status == 401 || status == 403) throw Error(ErrorKind::AuthError, std::to_string(status), body.substr(0, 200));
  if (status == 408 || status == 409 || status == 429 || status >= 500)
    throw Error(ErrorKind::NetworkError, std::to_string(status), body.substr(0, 200));
  if (status != 200) throw Error(ErrorKind::BackendRefusal, std::to_string(status), body.substr(0, 200));
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::NetworkError, "response", std::string("unparseable body: ") + e.what());
  }
  if (!j.contains("choices") || j["choices"].empty())
    throw Error(ErrorKind::BackendRefusal, "response", "no choices in reply");
  const json& choice = j["choices"][0];
  if (choice.value("finish_reason", "") == "content_filter")
    throw Error(ErrorKind::BackendRefusal, "response", "content filtered");
  const json& msg = choice.at("message");
  if (msg.contains("refusal") && msg["refusal"].is_string())
    throw Error(ErrorKind::BackendRefusal, "response", msg["refusal"].get<std::string>());
  BackendReply r;
  r.text = msg.value("content", "");
  if (j.contains("usage")) {
    r.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0);
    r.usage.completion_tokens = j["usage"].value("completion_tokens", 0);
  }
  return r;
}

class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig config) : config_(std::move(config)), url_(detail::split_endpoint(config_.endpoint)) {}

  BackendReply call(const LlmRequest& request) override {
    httplib::Client client(url_.scheme_host_port);
    client.set_connection_timeout(config_.timeout_seconds);
    client.set_read_timeout(config_.timeout_seconds);
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
    const std::string body = chat_request_body(request, config_.image_root).dump();
    auto res = client.Post(url_.path, headers, body, "application/json");
    if (!res) throw Error(ErrorKind::NetworkError, url_.scheme_host_port, httplib::to_string(res.error()));
    return parse_chat_response(res->status, res->body);
  }

 private:
  HttpBackendConfig config_;
  detail::ParsedUrl url_;
};

}  // namespace navrag

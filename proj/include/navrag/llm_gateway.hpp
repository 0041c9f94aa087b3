#pragma once

// Uniform LLM access: chat completion, schema-constrained JSON with re-prompts,
// on-disk response cache, bounded concurrency, per-stage usage accounting and
// a deterministic offline mock backend.

#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "navrag/error.hpp"
#include "navrag/hashing.hpp"
#include "navrag/json_io.hpp"
#include "navrag/scene_model.hpp"
#include "navrag/schema.hpp"

namespace navrag {

struct Message {
  std::string role;  // "system" or "user"
  std::string text;
  std::optional<std::string> image_ref;
  /// Directory image_ref resolves against; not part of the cache key so
  /// relocating a bundle keeps its cache valid.
  fs::path image_root;
};

struct LlmRequest {
  std::string model;
  std::vector<Message> messages;
  std::optional<json> response_schema;
  double temperature = 0.0;
  int max_tokens = 512;
  /// Sampling seed forwarded to the backend; part of the cache key when set.
  std::optional<std::uint64_t> seed;
  /// Accounting label; not part of the cache key.
  std::string stage = "default";

  void validate() const {
    if (messages.empty()) throw Error(ErrorKind::InvariantViolation, "request", "messages must be non-empty");
    if (!(temperature >= 0.0 && temperature <= 2.0))
      throw Error(ErrorKind::InvariantViolation, "request", "temperature must be in [0, 2]");
    for (const auto& m : messages)
      if (m.role != "system" && m.role != "user")
        throw Error(ErrorKind::InvariantViolation, "request", "message role must be system or user");
  }

  /// Everything that identifies the request for caching and mock hashing.
  json key_json() const {
    json msgs = json::array();
    for (const auto& m : messages) {
      json jm = {{"role", m.role}, {"text", m.text}};
      if (m.image_ref) jm["image_ref"] = *m.image_ref;
      msgs.push_back(std::move(jm));
    }
    json j = {{"model", model},
              {"messages", msgs},
              {"schema", response_schema ? *response_schema : json(nullptr)},
              {"temperature", quantize(temperature)},
              {"max_tokens", max_tokens}};
    if (seed) j["seed"] = *seed;
    return j;
  }

  std::string cache_key() const { return sha256_hex(canonical_line(key_json())); }

  const std::string& last_user_text() const {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it)
      if (it->role == "user") return it->text;
    return messages.back().text;
  }
};

struct Usage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

struct LlmResponse {
  std::string text;
  std::optional<json> parsed;
  Usage usage;
  bool cached = false;
  int attempt_count = 1;
};

struct BackendReply {
  std::string text;
  Usage usage;
};

class Backend {
 public:
  virtual ~Backend() = default;
  /// Throws Error with NetworkError (retryable), AuthError or BackendRefusal.
  virtual BackendReply call(const LlmRequest& request) = 0;
};

/// Raised when complete_json exhausts its attempts; carries every raw reply.
class SchemaExhaustedError : public Error {
 public:
  SchemaExhaustedError(std::string entity, const std::string& message, std::vector<std::string> attempts)
      : Error(ErrorKind::SchemaExhausted, std::move(entity), message), attempts_(std::move(attempts)) {}
  const std::vector<std::string>& attempts() const { return attempts_; }

 private:
  std::vector<std::string> attempts_;
};

// ---------------------------------------------------------------------------
// Mock backend
// ---------------------------------------------------------------------------

struct MockOptions {
  std::uint64_t seed = 0;
  /// Mean word count of synthesized strings.
  std::size_t verbosity = 12;
};

/// Deterministic offline backend. Resolution order: responder hook, scripted
/// sequence, exact prompt script, then a reply generated from
/// hash(seed, request): schema requests get a synthesized valid instance,
/// free-text requests a templated line embedding the hash.
class MockBackend : public Backend {
 public:
  using Responder = std::function<std::optional<std::string>(const LlmRequest&)>;

  explicit MockBackend(MockOptions options = {}) : options_(options) {}

  /// Canned reply for requests whose last user message equals `prompt`.
  void script(std::string prompt, std::string reply) {
    std::lock_guard lock(mu_);
    scripts_[std::move(prompt)] = std::move(reply);
  }

  /// Replies consumed in order, one per call, before any other rule.
  void push_sequence(std::vector<std::string> replies) {
    std::lock_guard lock(mu_);
    for (auto& r : replies) sequence_.push_back(std::move(r));
  }

  void set_responder(Responder responder) {
    std::lock_guard lock(mu_);
    responder_ = std::move(responder);
  }

  std::size_t calls() const {
    std::lock_guard lock(mu_);
    return calls_;
  }

  BackendReply call(const LlmRequest& request) override {
    std::string text;
    {
      std::lock_guard lock(mu_);
      ++calls_;
      if (!sequence_.empty()) {
        text = std::move(sequence_.front());
        sequence_.erase(sequence_.begin());
        return reply(request, std::move(text));
      }
    }
    Responder responder;
    {
      std::lock_guard lock(mu_);
      responder = responder_;
      if (!responder) {
        auto it = scripts_.find(request.last_user_text());
        if (it != scripts_.end()) return reply(request, it->second);
      }
    }
    if (responder) {
      if (auto r = responder(request)) return reply(request, std::move(*r));
      std::lock_guard lock(mu_);
      auto it = scripts_.find(request.last_user_text());
      if (it != scripts_.end()) return reply(request, it->second);
    }
    return reply(request, generate(request));
  }

  /// The reply the generator produces for `request` (no scripts involved).
  std::string generate(const LlmRequest& request) const {
    const std::string hash = sha256_hex(std::to_string(options_.seed) + "\n" + canonical_line(request.key_json()));
    Rng rng(std::stoull(hash.substr(0, 16), nullptr, 16));
    if (request.response_schema) return synthesize_instance(*request.response_schema, rng, options_.verbosity).dump();
    return "mock-" + hash.substr(0, 16) + " " + detail::mock_words(rng, options_.verbosity);
  }

  const MockOptions& options() const { return options_; }

 private:
  static BackendReply reply(const LlmRequest& request, std::string text) {
    Usage u;
    for (const auto& m : request.messages) u.prompt_tokens += static_cast<std::int64_t>(whitespace_token_count(m.text));
    u.completion_tokens = static_cast<std::int64_t>(whitespace_token_count(text));
    return {std::move(text), u};
  }

  MockOptions options_;
  mutable std::mutex mu_;
  std::map<std::string, std::string> scripts_;
  std::vector<std::string> sequence_;
  Responder responder_;
  std::size_t calls_ = 0;
};

// ---------------------------------------------------------------------------
// Response cache
// ---------------------------------------------------------------------------

/// Content-addressed store: one file per key under <dir>/<kk>/<key>.json plus
/// an append-only index.jsonl. Entries are written by rename, so concurrent
/// readers only ever see complete files.
class ResponseCache {
 public:
  explicit ResponseCache(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  std::optional<BackendReply> get(const std::string& key) {
    {
      std::lock_guard lock(mu_);
      if (auto it = memory_.find(key); it != memory_.end()) return it->second;
    }
    const fs::path file = path_for(key);
    std::error_code ec;
    if (!fs::exists(file, ec)) return std::nullopt;
    try {
      const json j = json::parse(read_text(file));
      BackendReply r{j.at("text").get<std::string>(),
                     {j.at("usage").at("prompt_tokens").get<std::int64_t>(),
                      j.at("usage").at("completion_tokens").get<std::int64_t>()}};
      std::lock_guard lock(mu_);
      memory_.emplace(key, r);
      return r;
    } catch (const std::exception&) {
      return std::nullopt;  // unreadable entry: treat as miss, it gets rewritten
    }
  }

  void put(const std::string& key, const LlmRequest& request, const BackendReply& reply) {
    const json entry = {{"key", key},
                        {"request", request.key_json()},
                        {"text", reply.text},
                        {"usage", {{"prompt_tokens", reply.usage.prompt_tokens},
                                   {"completion_tokens", reply.usage.completion_tokens}}}};
    write_text_atomic(path_for(key), canonical_dump(entry));
    {
      std::lock_guard lock(mu_);
      memory_.emplace(key, reply);
    }
    // Shared by every cache instance in the process.
    static std::mutex index_mu;
    std::lock_guard lock(index_mu);
    std::ofstream index(dir_ / "index.jsonl", std::ios::app);
    index << canonical_line({{"key", key}, {"model", request.model}, {"stage", request.stage}}) << '\n';
  }

  const fs::path& dir() const { return dir_; }

 private:
  fs::path path_for(const std::string& key) const { return dir_ / key.substr(0, 2) / (key + ".json"); }

  fs::path dir_;
  std::mutex mu_;
  std::map<std::string, BackendReply> memory_;
};

// ---------------------------------------------------------------------------
// Accounting
// ---------------------------------------------------------------------------

struct StageUsage {
  std::int64_t requests = 0;       // complete() invocations
  std::int64_t backend_calls = 0;  // calls that reached the backend
  std::int64_t cache_hits = 0;
  std::int64_t network_retries = 0;
  std::int64_t json_reprompts = 0;
  std::int64_t schema_failures = 0;  // complete_json calls that exhausted
  std::int64_t prompt_tokens = 0;  // usage of the responses used, cached or not
  std::int64_t completion_tokens = 0;
};

class Accounting {
 public:
  void record(const std::string& stage, const std::function<void(StageUsage&)>& fn) {
    std::lock_guard lock(mu_);
    fn(stages_[stage]);
  }

  std::map<std::string, StageUsage> snapshot() const {
    std::lock_guard lock(mu_);
    return stages_;
  }

  StageUsage total() const {
    StageUsage t;
    for (const auto& [_, s] : snapshot()) {
      t.requests += s.requests;
      t.backend_calls += s.backend_calls;
      t.cache_hits += s.cache_hits;
      t.network_retries += s.network_retries;
      t.json_reprompts += s.json_reprompts;
      t.schema_failures += s.schema_failures;
      t.prompt_tokens += s.prompt_tokens;
      t.completion_tokens += s.completion_tokens;
    }
    return t;
  }

  void reset() {
    std::lock_guard lock(mu_);
    stages_.clear();
  }

  /// Per-stage report. Request and token counts depend only on the work
  /// done; backend_calls and cache_hits also depend on the cache state.
  json to_json() const {
    json j = json::object();
    for (const auto& [stage, s] : snapshot())
      j[stage] = {{"requests", s.requests},
                  {"backend_calls", s.backend_calls},
                  {"cache_hits", s.cache_hits},
                  {"network_retries", s.network_retries},
                  {"json_reprompts", s.json_reprompts},
                  {"schema_failures", s.schema_failures},
                  {"prompt_tokens", s.prompt_tokens},
                  {"completion_tokens", s.completion_tokens}};
    return j;
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, StageUsage> stages_;
};

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

/// Bound on in-flight backend calls; several gateways may share one.
class ConcurrencyLimiter {
 public:
  explicit ConcurrencyLimiter(int max_in_flight) : max_(max_in_flight) {
    if (max_ < 1) throw Error(ErrorKind::ConfigError, "gateway", "max_concurrency must be >= 1");
  }

  void acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return in_flight_ < max_; });
    ++in_flight_;
  }

  void release() {
    {
      std::lock_guard lock(mu_);
      --in_flight_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int in_flight_ = 0;
  int max_;
};

struct GatewayConfig {
  std::string model = "gpt-4o-mini";
  int max_concurrency = 10;
  /// Extra attempts after a NetworkError.
  int max_network_retries = 4;
  std::chrono::milliseconds backoff_base{500};
  /// Total attempts for complete_json (first try included).
  int json_attempts = 3;
  std::optional<fs::path> cache_dir;
};

/// Extracts the JSON value from a reply, tolerating ``` fences and prose
/// around a single top-level object.
inline std::optional<json> extract_json(const std::string& text) {
  auto try_parse = [](const std::string& s) -> std::optional<json> {
    try {
      return json::parse(s);
    } catch (const json::parse_error&) {
      return std::nullopt;
    }
  };
  if (auto j = try_parse(text)) return j;
  const auto open = text.find('{');
  const auto close = text.rfind('}');
  if (open != std::string::npos && close != std::string::npos && close > open)
    return try_parse(text.substr(open, close - open + 1));
  return std::nullopt;
}

/// Thread-safe. At most `max_concurrency` backend calls are in flight.
class LlmGateway {
 public:
  /// Extra semantic check on a schema-valid value; returns an error message.
  using JsonCheck = std::function<std::optional<std::string>(const json&)>;

  /// Without `limiter` the gateway gets its own bound of max_concurrency.
  LlmGateway(std::shared_ptr<Backend> backend, GatewayConfig config,
             std::shared_ptr<ConcurrencyLimiter> limiter = nullptr)
      : backend_(std::move(backend)), config_(std::move(config)), limiter_(std::move(limiter)) {
    if (!limiter_) limiter_ = std::make_shared<ConcurrencyLimiter>(config_.max_concurrency);
    if (config_.json_attempts < 1) throw Error(ErrorKind::ConfigError, "gateway", "json_attempts must be >= 1");
    if (config_.cache_dir) cache_ = std::make_unique<ResponseCache>(*config_.cache_dir);
  }

  const std::shared_ptr<Backend>& backend() const { return backend_; }
  const std::shared_ptr<ConcurrencyLimiter>& limiter() const { return limiter_; }

  const std::string& model() const { return config_.model; }
  const GatewayConfig& config() const { return config_; }
  Accounting& accounting() { return accounting_; }
  const Accounting& accounting() const { return accounting_; }

  /// Fills in the gateway model when the request leaves it empty.
  LlmResponse complete(LlmRequest request) {
    if (request.model.empty()) request.model = config_.model;
    request.validate();
    const std::string key = request.cache_key();
    if (cache_) {
      if (auto hit = cache_->get(key)) {
        accounting_.record(request.stage, [&](StageUsage& s) {
          ++s.requests;
          ++s.cache_hits;
          s.prompt_tokens += hit->usage.prompt_tokens;
          s.completion_tokens += hit->usage.completion_tokens;
        });
        return {hit->text, std::nullopt, hit->usage, true, 1};
      }
    }
    BackendReply reply = call_with_retries(request);
    if (cache_) cache_->put(key, request, reply);
    accounting_.record(request.stage, [&](StageUsage& s) {
      ++s.requests;
      s.prompt_tokens += reply.usage.prompt_tokens;
      s.completion_tokens += reply.usage.completion_tokens;
    });
    return {reply.text, std::nullopt, reply.usage, false, 1};
  }

  /// Parses and validates against request.response_schema (and `check`).
  /// Each failure re-prompts with the validator error appended, up to
  /// json_attempts total; then throws SchemaExhaustedError.
  LlmResponse complete_json(LlmRequest request, const JsonCheck& check = {}) {
    if (!request.response_schema)
      throw Error(ErrorKind::InvariantViolation, "request", "complete_json requires response_schema");
    const std::vector<Message> base = request.messages;
    std::vector<std::string> raw;
    for (int attempt = 1; attempt <= config_.json_attempts; ++attempt) {
      LlmResponse resp = complete(request);
      raw.push_back(resp.text);
      std::string problem;
      if (auto value = extract_json(resp.text)) {
        if (auto err = validate_schema(*request.response_schema, *value)) {
          problem = "schema violation at " + *err;
        } else if (auto err2 = check ? check(*value) : std::nullopt) {
          problem = *err2;
        } else {
          resp.parsed = std::move(*value);
          resp.attempt_count = attempt;
          return resp;
        }
      } else {
        problem = "reply is not valid JSON";
      }
      if (attempt == config_.json_attempts) break;
      accounting_.record(request.stage, [](StageUsage& s) { ++s.json_reprompts; });
      request.messages = base;
      request.messages.push_back(
          {"user",
           "Your previous reply was rejected (" + problem + "). Previous reply:\n" + resp.text +
               "\nRespond again with only a JSON value that satisfies this schema:\n" + request.response_schema->dump(),
           std::nullopt, {}});
    }
    accounting_.record(request.stage, [](StageUsage& s) { ++s.schema_failures; });
    throw SchemaExhaustedError(request.stage,
                               "no schema-valid reply after " + std::to_string(config_.json_attempts) + " attempts",
                               std::move(raw));
  }

 private:
  BackendReply call_with_retries(const LlmRequest& request) {
    for (int attempt = 0;; ++attempt) {
      try {
        Slot slot(*this);
        BackendReply r = backend_->call(request);
        accounting_.record(request.stage, [](StageUsage& s) { ++s.backend_calls; });
        return r;
      } catch (const Error& e) {
        accounting_.record(request.stage, [](StageUsage& s) { ++s.backend_calls; });
        if (e.kind() != ErrorKind::NetworkError || attempt >= config_.max_network_retries) throw;
        accounting_.record(request.stage, [](StageUsage& s) { ++s.network_retries; });
        std::this_thread::sleep_for(config_.backoff_base * (1LL << std::min(attempt, 10)));
      }
    }
  }

  /// RAII in-flight slot.
  struct Slot {
    explicit Slot(LlmGateway& g) : limiter_(*g.limiter_) { limiter_.acquire(); }
    ~Slot() { limiter_.release(); }
    ConcurrencyLimiter& limiter_;
  };

  std::shared_ptr<Backend> backend_;
  GatewayConfig config_;
  std::shared_ptr<ConcurrencyLimiter> limiter_;
  std::unique_ptr<ResponseCache> cache_;
  Accounting accounting_;
};

/// Model id used in mock mode; the seed is part of it so cached replies from
/// different seeds never collide.
inline std::string mock_model_id(std::uint64_t seed) { return "mock-seed-" + std::to_string(seed); }

}  // namespace navrag

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "iclcot/llm/transport.hpp"
#include "iclcot/numerics/rng.hpp"

namespace iclcot::llm {

inline constexpr const char* kApiKeyEnv = "ICLCOT_API_KEY";

struct EndpointConfig {
  std::string base_url = "http://127.0.0.1:8080";
  std::string api_key;  // filled from ICLCOT_API_KEY, never serialized
  std::string model = "gpt2";
  double timeout_seconds = 30.0;
  std::size_t max_retries = 3;
  std::size_t max_in_flight = 4;

  void validate() const;
  // Reads the key from the environment (empty when unset).
  void load_api_key();
};

void to_json(nlohmann::json& j, const EndpointConfig& cfg);
void from_json(const nlohmann::json& j, EndpointConfig& cfg);

// HTTP 4xx: the request itself is wrong; never retried.
class RequestError : public Error {
 public:
  RequestError(int status, std::string body_excerpt);
  int status() const { return status_; }
  const std::string& body_excerpt() const { return excerpt_; }

 private:
  int status_;
  std::string excerpt_;
};

// 5xx responses or transport failures on every allowed attempt.
class ServiceError : public Error {
 public:
  ServiceError(std::size_t attempts, int last_status, const std::string& detail);
  std::size_t attempts() const { return attempts_; }
  int last_status() const { return last_status_; }  // 0 for a transport failure

 private:
  std::size_t attempts_;
  int last_status_;
};

// The endpoint answered but cannot provide per-token log-probabilities.
class UnsupportedFeature : public Error {
 public:
  using Error::Error;
};

// The endpoint answered 2xx with a body we cannot interpret.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

struct CompletionParams {
  std::size_t max_tokens = 48;
  double temperature = 0.0;
  std::vector<std::string> stop;
};

struct ScoredContinuation {
  std::string text;
  std::vector<double> token_logprobs;
  double nll = 0.0;  // nats, = -sum(token_logprobs)
};

struct RetryPolicy {
  double base_seconds = 0.5;
  double factor = 2.0;
  double jitter_fraction = 0.1;  // delay * (1 + U[0, jitter_fraction))
};

using Sleeper = std::function<void(double seconds)>;

// OpenAI-compatible /v1/completions client. Safe to share across threads; at
// most max_in_flight requests are outstanding at once.
class Client {
 public:
  Client(EndpointConfig cfg, std::shared_ptr<Transport> transport, Sleeper sleeper = {},
         RetryPolicy retry = {}, std::uint64_t jitter_seed = 0);

  const EndpointConfig& config() const { return cfg_; }
  std::size_t attempts_made() const;

  std::string complete(const std::string& prompt, const CompletionParams& params = {}) const;
  // NLL of `continuation` given `context`, via echo + logprobs with zero new tokens.
  ScoredContinuation score_nll(const std::string& context, const std::string& continuation) const;

  // Delay before retry number `retry` (1-based), jitter included.
  double backoff_seconds(std::size_t retry) const;

 private:
  nlohmann::json post(const std::string& path, const nlohmann::json& body) const;

  EndpointConfig cfg_;
  std::shared_ptr<Transport> transport_;
  Sleeper sleeper_;
  RetryPolicy retry_;
  mutable std::counting_semaphore<1024> in_flight_;
  mutable std::mutex mu_;
  mutable Rng jitter_rng_;
  mutable std::size_t attempts_ = 0;
};

}  // namespace iclcot::llm

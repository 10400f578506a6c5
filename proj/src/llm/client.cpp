#include "iclcot/llm/client.hpp"

#include <cmath>
#include <cstdlib>
#include <thread>

#include <nlohmann/json.hpp>

namespace iclcot::llm {

namespace {

std::string excerpt(const std::string& body) {
  constexpr std::size_t kMax = 200;
  return body.size() <= kMax ? body : body.substr(0, kMax) + "...";
}

}  // namespace

void EndpointConfig::validate() const {
  if (base_url.empty()) throw ContractError("endpoint: base_url is empty");
  if (!(timeout_seconds > 0.0)) throw ContractError("endpoint: timeout must be > 0");
  if (max_retries > 5) throw ContractError("endpoint: max_retries must be <= 5");
  if (max_in_flight == 0 || max_in_flight > 1024) {
    throw ContractError("endpoint: max_in_flight must lie in 1..1024");
  }
}

void EndpointConfig::load_api_key() {
  const char* key = std::getenv(kApiKeyEnv);
  api_key = key ? key : "";
}

void to_json(nlohmann::json& j, const EndpointConfig& cfg) {
  j = {{"base_url", cfg.base_url},
       {"model", cfg.model},
       {"timeout_seconds", cfg.timeout_seconds},
       {"max_retries", cfg.max_retries},
       {"max_in_flight", cfg.max_in_flight}};
}

void from_json(const nlohmann::json& j, EndpointConfig& cfg) {
  cfg.base_url = j.at("base_url").get<std::string>();
  cfg.model = j.at("model").get<std::string>();
  cfg.timeout_seconds = j.at("timeout_seconds").get<double>();
  cfg.max_retries = j.at("max_retries").get<std::size_t>();
  cfg.max_in_flight = j.at("max_in_flight").get<std::size_t>();
}

RequestError::RequestError(int status, std::string body_excerpt)
    : Error("HTTP " + std::to_string(status) + ": " + body_excerpt),
      status_(status),
      excerpt_(std::move(body_excerpt)) {}

ServiceError::ServiceError(std::size_t attempts, int last_status, const std::string& detail)
    : Error("service unavailable after " + std::to_string(attempts) + " attempts (" + detail + ")"),
      attempts_(attempts),
      last_status_(last_status) {}

Client::Client(EndpointConfig cfg, std::shared_ptr<Transport> transport, Sleeper sleeper,
               RetryPolicy retry, std::uint64_t jitter_seed)
    : cfg_(std::move(cfg)),
      transport_(std::move(transport)),
      sleeper_(std::move(sleeper)),
      retry_(retry),
      in_flight_(static_cast<std::ptrdiff_t>(cfg_.max_in_flight)),
      jitter_rng_(jitter_seed, Stream::kClient) {
  cfg_.validate();
  if (!transport_) throw ContractError("client: no transport");
  if (!sleeper_) {
    sleeper_ = [](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); };
  }
}

std::size_t Client::attempts_made() const {
  std::lock_guard lock(mu_);
  return attempts_;
}

double Client::backoff_seconds(std::size_t retry) const {
  const double base = retry_.base_seconds * std::pow(retry_.factor, static_cast<double>(retry - 1));
  double u = 0.0;
  {
    std::lock_guard lock(mu_);
    u = jitter_rng_.uniform();
  }
  return base * (1.0 + retry_.jitter_fraction * u);
}

nlohmann::json Client::post(const std::string& path, const nlohmann::json& body) const {
  HttpRequest req;
  req.path = path;
  req.body = body.dump();
  if (!cfg_.api_key.empty()) req.headers.emplace_back("Authorization", "Bearer " + cfg_.api_key);

  const std::size_t max_attempts = cfg_.max_retries + 1;
  std::string last_detail;
  int last_status = 0;
  for (std::size_t attempt = 1; attempt <= max_attempts; ++attempt) {
    if (attempt > 1) sleeper_(backoff_seconds(attempt - 1));
    HttpResponse res;
    {
      in_flight_.acquire();
      struct Release {
        std::counting_semaphore<1024>& s;
        ~Release() { s.release(); }
      } release{in_flight_};
      {
        std::lock_guard lock(mu_);
        ++attempts_;
      }
      try {
        res = transport_->send(req);
      } catch (const TransportError& e) {
        last_status = 0;
        last_detail = e.what();
        continue;
      }
    }
    if (res.status >= 200 && res.status < 300) {
      // Any 2xx is final: a bad body is a protocol error, never a retry.
      try {
        return nlohmann::json::parse(res.body);
      } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("response is not JSON: ") + e.what());
      }
    }
    if (res.status >= 400 && res.status < 500) throw RequestError(res.status, excerpt(res.body));
    last_status = res.status;
    last_detail = "HTTP " + std::to_string(res.status) + ": " + excerpt(res.body);
  }
  throw ServiceError(max_attempts, last_status, last_detail);
}

std::string Client::complete(const std::string& prompt, const CompletionParams& params) const {
  nlohmann::json body = {{"model", cfg_.model},
                         {"prompt", prompt},
                         {"max_tokens", params.max_tokens},
                         {"temperature", params.temperature}};
  if (!params.stop.empty()) body["stop"] = params.stop;
  const auto res = post("/v1/completions", body);
  try {
    return res.at("choices").at(0).at("text").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("completion response without choices[0].text: ") + e.what());
  }
}

ScoredContinuation Client::score_nll(const std::string& context,
                                     const std::string& continuation) const {
  ScoredContinuation out;
  out.text = continuation;
  if (continuation.empty()) return out;
  const nlohmann::json body = {{"model", cfg_.model},
                               {"prompt", context + continuation},
                               {"max_tokens", 0},
                               {"echo", true},
                               {"logprobs", 0},
                               {"temperature", 0.0}};
  const auto res = post("/v1/completions", body);
  const nlohmann::json* lp = nullptr;
  try {
    lp = &res.at("choices").at(0).at("logprobs");
  } catch (const nlohmann::json::exception&) {
    throw UnsupportedFeature("endpoint returned no logprobs for an echo request");
  }
  if (lp->is_null() || !lp->contains("token_logprobs") || !lp->contains("text_offset")) {
    throw UnsupportedFeature("endpoint does not report per-token log-probabilities");
  }
  const auto& values = lp->at("token_logprobs");
  const auto& offsets = lp->at("text_offset");
  if (!values.is_array() || !offsets.is_array() || values.size() != offsets.size()) {
    throw ProtocolError("logprobs arrays are malformed");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (offsets[i].get<std::size_t>() < context.size()) continue;
    if (values[i].is_null()) throw UnsupportedFeature("null log-probability inside the continuation");
    const double v = values[i].get<double>();
    out.token_logprobs.push_back(v);
    out.nll -= v;
  }
  return out;
}

}  // namespace iclcot::llm

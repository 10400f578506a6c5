#include "iclcot/llm/mock.hpp"

#include <set>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <nlohmann/json.hpp>

namespace iclcot::llm {

std::vector<MockToken> mock_tokenize(const std::string& text) {
  std::vector<MockToken> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    out.push_back({text.substr(start, i - start), start});
  }
  return out;
}

namespace {

std::string strip(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  return b == std::string::npos ? "" : s.substr(b);
}

HttpResponse json_response(int status, const nlohmann::json& body) { return {status, body.dump()}; }

}  // namespace

HttpResponse mock_completions(const MockBehavior& behavior, const std::string& body) {
  nlohmann::json req;
  try {
    req = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception&) {
    return json_response(400, {{"error", {{"message", "body is not JSON"}}}});
  }
  if (!req.contains("prompt") || !req["prompt"].is_string()) {
    return json_response(400, {{"error", {{"message", "missing string field 'prompt'"}}}});
  }
  const std::string prompt = req["prompt"].get<std::string>();
  const bool echo = req.value("echo", false);
  const bool want_logprobs = req.contains("logprobs") && !req["logprobs"].is_null();
  const std::size_t max_tokens = req.value("max_tokens", std::size_t{16});

  std::string text;
  if (echo) text = prompt;
  if (max_tokens > 0) text += behavior.completion;

  nlohmann::json choice = {{"index", 0}, {"text", text}, {"finish_reason", "length"}};
  if (want_logprobs && behavior.supports_logprobs) {
    const auto tokens = mock_tokenize(text);
    nlohmann::json toks = nlohmann::json::array(), lps = nlohmann::json::array(),
                   offs = nlohmann::json::array();
    std::set<std::string> seen;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const std::string word = strip(tokens[i].text);
      toks.push_back(tokens[i].text);
      offs.push_back(tokens[i].offset);
      if (i == 0) {
        lps.push_back(nullptr);  // no conditional for the first token
      } else if (auto it = behavior.fixture.find(word); it != behavior.fixture.end()) {
        lps.push_back(it->second);
      } else if (behavior.copy_logprob && seen.count(word)) {
        lps.push_back(*behavior.copy_logprob);
      } else {
        lps.push_back(behavior.base_logprob);
      }
      seen.insert(word);
    }
    choice["logprobs"] = {{"tokens", toks}, {"token_logprobs", lps}, {"text_offset", offs}};
  } else {
    choice["logprobs"] = nullptr;
  }
  return json_response(200, {{"id", "cmpl-mock"},
                             {"object", "text_completion"},
                             {"model", req.value("model", std::string("mock"))},
                             {"choices", nlohmann::json::array({choice})}});
}

HttpResponse MockTransport::send(const HttpRequest& request) {
  std::lock_guard lock(mu_);
  ++calls_;
  if (!behavior_.scripted_statuses.empty()) {
    const int status = behavior_.scripted_statuses.front();
    behavior_.scripted_statuses.pop_front();
    return {status, "{\"error\":{\"message\":\"scripted failure\"}}"};
  }
  if (request.path != "/v1/completions") return {404, "{\"error\":{\"message\":\"not found\"}}"};
  return mock_completions(behavior_, request.body);
}

std::size_t MockTransport::network_calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

struct MockServer::Impl {
  httplib::Server server;
  std::thread thread;
  mutable std::mutex mu;
  MockBehavior behavior;
  std::size_t served = 0;
  std::string authorization;
};

MockServer::MockServer(MockBehavior behavior) : impl_(std::make_unique<Impl>()) {
  impl_->behavior = std::move(behavior);
  Impl* impl = impl_.get();
  impl->server.Post("/v1/completions", [impl](const httplib::Request& req, httplib::Response& res) {
    HttpResponse out;
    {
      std::lock_guard lock(impl->mu);
      ++impl->served;
      impl->authorization = req.get_header_value("Authorization");
      if (!impl->behavior.scripted_statuses.empty()) {
        out = {impl->behavior.scripted_statuses.front(), "{\"error\":{\"message\":\"scripted failure\"}}"};
        impl->behavior.scripted_statuses.pop_front();
      } else {
        out = mock_completions(impl->behavior, req.body);
      }
    }
    res.status = out.status;
    res.set_content(out.body, "application/json");
  });
  port_ = impl->server.bind_to_any_port("127.0.0.1");
  if (port_ <= 0) throw Error("mock server: cannot bind a local port");
  impl->thread = std::thread([impl] { impl->server.listen_after_bind(); });
  impl->server.wait_until_ready();
}

MockServer::~MockServer() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string MockServer::base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

std::size_t MockServer::requests_served() const {
  std::lock_guard lock(impl_->mu);
  return impl_->served;
}

std::string MockServer::last_authorization() const {
  std::lock_guard lock(impl_->mu);
  return impl_->authorization;
}

void MockServer::set_behavior(MockBehavior behavior) {
  std::lock_guard lock(impl_->mu);
  impl_->behavior = std::move(behavior);
}

}  // namespace iclcot::llm
